"""Mean/covariance propagation by statistical linearization.

    dm/dt = f(m, u)
    dP/dt = A P + P A' + g g',   A = D_x f(m, u)

integrated with classic fixed-step RK4 on the stacked system.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, GaussianBelief, psd_violation, symmetrize


class PropagationError(FloatingPointError):
    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} at t={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class BeliefTrajectory:
    times: np.ndarray      # (M+1,)
    means: np.ndarray      # (M+1, n)
    covs: np.ndarray       # (M+1, n, n)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("belief times must be strictly increasing")
        if self.means.shape[0] != self.times.size or self.covs.shape[0] != self.times.size:
            raise DimensionError("belief arrays do not match the time grid")

    @property
    def n(self):
        return self.means.shape[1]

    @property
    def beliefs(self):
        return [GaussianBelief(m, P) for m, P in zip(self.means, self.covs)]

    def final(self):
        return GaussianBelief(self.means[-1], self.covs[-1])

    def subsample(self, every):
        sl = slice(None, None, every)
        return BeliefTrajectory(self.times[sl], self.means[sl], self.covs[sl])


def lyapunov_rhs(A, P, G):
    AP = A @ P
    return AP + np.swapaxes(AP, -1, -2) + G @ np.swapaxes(G, -1, -2)


def rhs(model, m, P, u):
    f, A = model.fA(m, u)
    AP = A @ P
    return f, AP + np.swapaxes(AP, -1, -2) + model.GG(m, u)


def rk4_step(model, m, P, u_stages, dt):
    """One RK4 step; batched over leading axes.

    ``u_stages`` is either a single control (held over the step) or a triple
    ``(u(t), u(t+dt/2), u(t+dt))``.  ``dt`` may be a scalar or an array
    broadcastable against the batch shape.
    """
    if isinstance(u_stages, tuple):
        u0, uh, u1 = u_stages
    else:
        u0 = uh = u1 = u_stages
    dt = np.asarray(dt, dtype=float)
    dm_ = dt[..., None]
    dP_ = dt[..., None, None]
    k1m, k1P = rhs(model, m, P, u0)
    k2m, k2P = rhs(model, m + 0.5 * dm_ * k1m, P + 0.5 * dP_ * k1P, uh)
    k3m, k3P = rhs(model, m + 0.5 * dm_ * k2m, P + 0.5 * dP_ * k2P, uh)
    k4m, k4P = rhs(model, m + dm_ * k3m, P + dP_ * k3P, u1)
    m_new = m + dm_ / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
    P_new = P + dP_ / 6.0 * (k1P + 2 * k2P + 2 * k3P + k4P)
    return m_new, symmetrize(P_new)


def belief_grid(ctrl, steps_per_interval):
    nodes = ctrl.nodes
    frac = np.arange(steps_per_interval) / steps_per_interval
    inner = (nodes[:-1, None] + np.diff(nodes)[:, None] * frac).ravel()
    return np.append(inner, nodes[-1])


def propagate(model, init, ctrl, steps_per_interval=1, check_psd=True):
    """Integrate the statistical linearization along ``ctrl``.

    The returned grid refines the control grid by ``steps_per_interval``.
    """
    if steps_per_interval < 1:
        raise ValueError("steps_per_interval must be >= 1")
    if init.n != model.n:
        raise DimensionError(f"initial belief has n={init.n}, model has n={model.n}")
    if ctrl.k != model.k:
        raise DimensionError(f"control has k={ctrl.k}, model has k={model.k}")
    s = steps_per_interval
    times = belief_grid(ctrl, s)
    M = times.size - 1
    means = np.empty((M + 1, model.n))
    covs = np.empty((M + 1, model.n, model.n))
    m, P = np.array(init.mean), np.array(init.cov)
    means[0], covs[0] = m, P
    i = 0
    for j in range(ctrl.n_intervals):
        for _ in range(s):
            t0, t1 = times[i], times[i + 1]
            h = t1 - t0
            if ctrl.mode == "constant":
                u = ctrl.values[j]
            else:
                u = (ctrl.on_interval(j, t0), ctrl.on_interval(j, t0 + 0.5 * h),
                     ctrl.on_interval(j, t1))
            m, P = rk4_step(model, m, P, u, h)
            if not (np.all(np.isfinite(m)) and np.all(np.isfinite(P))):
                raise PropagationError("non-finite belief (integration blow-up)", t1)
            i += 1
            means[i], covs[i] = m, P
    if check_psd:
        bad = np.nonzero(psd_violation(covs) < 0)[0]
        if bad.size:
            raise PropagationError("covariance lost positive semi-definiteness",
                                   times[bad[0]])
    return BeliefTrajectory(times, means, covs)


def _interval_controls(ctrl, times):
    """Control at the two ends of each belief sub-interval, taken from the
    control interval that contains the sub-interval."""
    mids = 0.5 * (times[:-1] + times[1:])
    idx = ctrl.interval_index(mids)
    if ctrl.mode == "constant":
        u = ctrl.values[idx]
        return u, u
    left = np.array([ctrl.on_interval(j, t) for j, t in zip(idx, times[:-1])])
    right = np.array([ctrl.on_interval(j, t) for j, t in zip(idx, times[1:])])
    return left, right


def expected_quadratic_cost(cost, traj, ctrl):
    """Lifted cost ``psi(m_f) + tr(Qf P_f) + int L(m,u) + tr(Q(u) P) dt``.

    The running integral uses the trapezoidal rule on the belief grid; each
    sub-interval uses the control of the interval that contains it.
    """
    if cost.n != traj.n:
        raise DimensionError("cost and trajectory dimensions differ")
    if not np.isclose(traj.times[-1], ctrl.horizon, rtol=1e-12, atol=1e-12):
        raise DimensionError("trajectory and control horizons differ")
    terminal = cost.psi(traj.means[-1]) + float(np.trace(cost.Qf() @ traj.covs[-1]))
    u_left, u_right = _interval_controls(ctrl, traj.times)
    h = np.diff(traj.times)
    running = 0.0
    for i in range(h.size):
        a = cost.L(traj.means[i], u_left[i]) + np.trace(cost.Q(u_left[i]) @ traj.covs[i])
        b = (cost.L(traj.means[i + 1], u_right[i])
             + np.trace(cost.Q(u_right[i]) @ traj.covs[i + 1]))
        running += 0.5 * h[i] * (a + b)
    return float(terminal + running)


def covariance_penalty_profile(traj, Q):
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (traj.n, traj.n):
        raise DimensionError(f"Q must be {traj.n}x{traj.n}")
    return np.einsum("ij,tji->t", Q, traj.covs)


def trapezoid(values, times):
    values = np.asarray(values, dtype=float)
    return float(np.sum(0.5 * np.diff(times) * (values[1:] + values[:-1])))
