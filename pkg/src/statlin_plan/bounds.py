"""Approximation-error functionals for statistical linearization.

All matrix norms are Frobenius.  The admissibility functional of a control is

    lhs(u) = alpha(int phi(|u|) ds) * int phi(|u|) |P(s)|_F ds

and a control belongs to the admissible class for ``epsilon`` when
``lhs <= epsilon``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ControlTrajectory, DimensionError, DynamicsModel, GaussianBelief
from .propagate import _interval_controls, propagate, trapezoid


def exp_alpha(C):
    """``alpha(s) = C exp(C s)``."""
    if C <= 0:
        raise ValueError("C must be positive")
    return lambda s: C * np.exp(C * np.asarray(s, dtype=float))


def constant_phi(c):
    return lambda r: np.full(np.shape(r), float(c))


def linear_phi(L):
    return lambda r: L * np.asarray(r, dtype=float)


@dataclass(frozen=True)
class ErrorBudget:
    epsilon: float
    phi: Callable
    alpha: Callable

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative (math.inf disables the check)")
        grid = np.linspace(0.0, 10.0, 101)
        for name in ("phi", "alpha"):
            vals = np.asarray(getattr(self, name)(grid), dtype=float)
            if np.any(vals < 0) or np.any(np.diff(vals) < -1e-12 * (1 + np.abs(vals[1:]))):
                raise ValueError(f"{name} must be non-negative and nondecreasing")

    @classmethod
    def exponential(cls, epsilon, phi, C):
        return cls(epsilon, phi, exp_alpha(C))


@dataclass(frozen=True)
class Membership:
    inside: bool
    value: float

    @property
    def verdict(self):
        return "in" if self.inside else "out"


def _norm_profile(ctrl, traj, norm_fn=None):
    """Control norm at both ends of every belief sub-interval."""
    left, right = _interval_controls(ctrl, traj.times)
    if norm_fn is None:
        return np.linalg.norm(left, axis=-1), np.linalg.norm(right, axis=-1)
    return (norm_fn(left, traj.means[:-1]), norm_fn(right, traj.means[1:]))


def _check_grid(ctrl, traj):
    if not np.isclose(traj.times[-1], ctrl.horizon, rtol=1e-9, atol=1e-12):
        raise DimensionError("control and belief horizons differ")


def constraint_integrals(budget, ctrl, traj, norm_fn=None):
    """``(int phi(|u|) ds, int phi(|u|) |P|_F ds)`` by the trapezoidal rule.

    ``norm_fn(u, m)`` overrides the control norm (feedback parametrizations).
    """
    _check_grid(ctrl, traj)
    rl, rr = _norm_profile(ctrl, traj, norm_fn)
    pl, pr = budget.phi(rl), budget.phi(rr)
    nP = np.linalg.norm(traj.covs, axis=(1, 2))
    h = np.diff(traj.times)
    first = float(np.sum(0.5 * h * (pl + pr)))
    second = float(np.sum(0.5 * h * (pl * nP[:-1] + pr * nP[1:])))
    return first, second


def constraint_lhs(budget, ctrl, traj, norm_fn=None):
    first, second = constraint_integrals(budget, ctrl, traj, norm_fn)
    if second == 0.0:
        return 0.0
    return float(budget.alpha(first)) * second


def check_membership(budget, ctrl, traj, norm_fn=None):
    value = constraint_lhs(budget, ctrl, traj, norm_fn)
    return Membership(bool(value <= budget.epsilon), value)


def _match(traj, stats):
    if stats.times.size != traj.times.size or not np.allclose(stats.times, traj.times,
                                                               rtol=1e-9, atol=1e-12):
        raise DimensionError("belief and ensemble grids differ")


def empirical_error(traj, stats):
    """``(sup |m - m_hat|^2, sup |P - P_hat|_F)`` with Monte Carlo moments as truth."""
    _match(traj, stats)
    em = np.sum((stats.mean - traj.means) ** 2, axis=1)
    eP = np.linalg.norm(stats.cov - traj.covs, axis=(1, 2))
    return float(em.max()), float(eP.max())


def mc_standard_error(stats):
    """Sampling noise level of :func:`empirical_error` when the belief is exact.

    ``sup |sem_mean|^2 + sup |sem_cov|_F``.
    """
    if stats.sem_mean is None or stats.sem_cov is None:
        raise ValueError("ensemble carries no standard errors")
    se_m = float(np.max(np.sum(stats.sem_mean ** 2, axis=1)))
    se_P = float(np.max(np.linalg.norm(stats.sem_cov, axis=(1, 2))))
    return se_m + se_P


def bounded_control_bound(traj, ctrl=None, C=None, budget=None, norm_fn=None):
    """``C * int |P(s)|_F ds``.

    When ``C`` is omitted it is estimated as ``alpha(sup phi * t_f) * sup phi``
    from ``budget`` and the control profile.
    """
    nP = np.linalg.norm(traj.covs, axis=(1, 2))
    if C is None:
        if budget is None or ctrl is None:
            raise ValueError("need C, or both budget and ctrl to estimate it")
        rl, rr = _norm_profile(ctrl, traj, norm_fn)
        sup_phi = float(max(np.max(budget.phi(rl)), np.max(budget.phi(rr))))
        C = float(budget.alpha(sup_phi * traj.times[-1])) * sup_phi
    if C <= 0 and np.any(nP):
        raise ValueError("C must be positive")
    return float(C) * trapezoid(nP, traj.times)


def empirical_phi(model, traj, ctrl, samples=None):
    """Constant envelope ``sup |D_x f|_F`` over the belief means (and optional
    extra state samples with matching controls)."""
    left, _ = _interval_controls(ctrl, traj.times)
    A = model.A(traj.means[:-1], left)
    sup = float(np.max(np.linalg.norm(A, axis=(-2, -1))))
    if samples is not None:
        xs, us = samples
        sup = max(sup, float(np.max(np.linalg.norm(model.A(xs, us), axis=(-2, -1)))))
    return sup


def empirical_budget(model, traj, ctrl, epsilon=math.inf, samples=None):
    """Budget with constant empirical ``phi`` and ``alpha(s) = C e^{Cs}`` using the same ``C``."""
    c = empirical_phi(model, traj, ctrl, samples)
    c = max(c, 1e-12)
    return ErrorBudget(epsilon, constant_phi(c), exp_alpha(c))


# ----------------------------------------------------------- probe (time rescaling)
def brockett_model(noise=0.1):
    """Nonholonomic integrator ``x' = u1 (1,0,-x2) + u2 (0,1,x1)`` with constant noise."""
    def drift(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        u1, u2 = u[..., 0], u[..., 1]
        return np.stack(np.broadcast_arrays(u1, u2, -x[..., 1] * u1 + x[..., 0] * u2), axis=-1)

    def jac(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        A = np.zeros(shape + (3, 3))
        A[..., 2, 0] = u[..., 1]
        A[..., 2, 1] = -u[..., 0]
        return A

    def disp(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        return np.broadcast_to(noise * np.eye(3), shape + (3, 3)).copy()

    # |D_x f|_F = |u| exactly
    return DynamicsModel(n=3, k=2, drift=drift, jacobian=jac, dispersion=disp,
                         jacobian_bound=linear_phi(1.0), name="brockett", noise_dim=3,
                         control_linear=True)


def rescaled_control(base, eta, t_f, tail_intervals=None):
    """``u_eta(t) = u(t / eta) / eta`` on ``[0, eta]`` and zero on ``(eta, t_f]``."""
    if not 0 < eta <= t_f:
        raise ValueError("eta must lie in (0, t_f]")
    if not np.isclose(base.horizon, 1.0):
        raise ValueError("base control must live on [0, 1]")
    if base.mode != "constant":
        raise ValueError("rescaling needs a piecewise-constant base control")
    nodes = base.nodes * eta
    values = base.values / eta
    if eta < t_f:
        m = tail_intervals or base.n_intervals
        nodes = np.concatenate([nodes, np.linspace(eta, t_f, m + 1)[1:]])
        values = np.concatenate([values, np.zeros((m, base.k))])
    return ControlTrajectory(nodes, values)


@dataclass(frozen=True)
class ProbeRow:
    eta: float
    constraint_value: float
    terminal_error: float


def controllability_probe(model, m0, mf, base_ctrl, eta_list, P0, t_f=1.0, budget=None,
                          steps_per_interval=4):
    """Constraint value and terminal mean error of the rescaled controls ``u_eta``."""
    if not model.control_linear:
        raise ValueError("probe requires a control-linear model")
    m0 = np.asarray(m0, dtype=float)
    mf = np.asarray(mf, dtype=float)
    if budget is None:
        phi = model.jacobian_bound or linear_phi(1.0)
        budget = ErrorBudget(math.inf, phi, exp_alpha(1.0))
    init = GaussianBelief(m0, P0)
    rows = []
    for eta in eta_list:
        if not 0 < eta <= t_f:
            raise ValueError(f"eta={eta} outside (0, t_f]")
        ctrl = rescaled_control(base_ctrl, eta, t_f)
        traj = propagate(model, init, ctrl, steps_per_interval)
        rows.append(ProbeRow(float(eta), constraint_lhs(budget, ctrl, traj),
                             float(np.linalg.norm(traj.means[-1] - mf))))
    return rows


def loglog_slope(rows):
    x = np.log([r.eta for r in rows])
    y = np.log([r.constraint_value for r in rows])
    return float(np.polyfit(x, y, 1)[0])
