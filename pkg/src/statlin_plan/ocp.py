"""Direct transcription of covariance-penalized planning problems.

Controls are piecewise constant on ``N`` intervals, beliefs come from single
shooting through the RK4 statistical linearization, and a free final time is
handled by rescaling the grid (``dt = t_f / N``).  The resulting NLP is solved
by an augmented Lagrangian outer loop around a bound-constrained L-BFGS inner
solve.

Gradients are assembled by reverse accumulation over the shooting map: each
interval's step map is differentiated by finite differences (all intervals in
one vectorized batch), and the per-interval Jacobians are chained backwards.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .core import (ControlTrajectory, DimensionError, GaussianBelief, NonFiniteError,
                   QuadraticCost, project_psd)
from .normal import inverse_normal_cdf
from .propagate import BeliefTrajectory, PropagationError, rk4_step

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Horizon:
    fixed: Optional[float] = None
    bounds: Optional[tuple] = None

    def __post_init__(self):
        if self.fixed is None:
            if self.bounds is None:
                raise ValueError("free horizon needs bounds (t_min, t_max)")
            lo, hi = self.bounds
            if not 0 < lo < hi:
                raise ValueError("free horizon bounds must satisfy 0 < t_min < t_max")
        elif self.fixed <= 0:
            raise ValueError("fixed horizon must be positive")

    @property
    def free(self):
        return self.fixed is None


@dataclass(frozen=True)
class TerminalTarget:
    """Affine terminal condition ``E m(t_f) = e`` with per-row scaling."""
    E: np.ndarray
    e: np.ndarray
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        E = np.atleast_2d(np.array(self.E, dtype=float))
        e = np.array(self.e, dtype=float).reshape(-1)
        if E.shape[0] != e.size:
            raise DimensionError("target E and e have inconsistent sizes")
        if np.linalg.matrix_rank(E) < E.shape[0]:
            raise ValueError("target map must have full row rank")
        scale = np.ones(e.size) if self.scale is None else np.array(self.scale, float)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "scale", scale)

    def residual(self, m):
        return (m @ self.E.T - self.e) / self.scale


@dataclass(frozen=True)
class ChanceConstraintSpec:
    """Gaussian surrogate of ``Pr[s <= bound] >= p`` (upper) or ``Pr[s >= bound] >= p``.

    ``s = w[offset_index] + a . m[state_indices]`` with ``a = w[gain_indices]``;
    the deterministic row is ``s +/- Psi^{-1}(p) sqrt(a' P a)`` against ``bound``.
    """
    bound: float
    side: str
    p: float
    offset_index: int = 0
    gain_indices: tuple = (2, 3, 4, 5)
    state_indices: tuple = (0, 1, 2, 3)

    def __post_init__(self):
        if self.side not in ("upper", "lower"):
            raise ValueError("side must be 'upper' or 'lower'")
        if not 0.5 < self.p < 1.0:
            raise ValueError("chance threshold p must lie in (0.5, 1)")

    @property
    def margin(self):
        return inverse_normal_cdf(self.p)


@dataclass(frozen=True)
class RobustOCP:
    model: object
    cost: QuadraticCost
    init: GaussianBelief
    target: TerminalTarget
    horizon: Horizon
    control_lower: np.ndarray
    control_upper: np.ndarray
    chance: tuple = ()
    norm_bounds: Optional[tuple] = None
    control_scale: Optional[np.ndarray] = None
    time_scale: float = 1.0
    initial_guess: Optional[Callable] = None
    control_labels: tuple = ()
    name: str = "ocp"

    def __post_init__(self):
        k = self.model.k
        lo = np.broadcast_to(np.array(self.control_lower, float), (k,)).copy()
        hi = np.broadcast_to(np.array(self.control_upper, float), (k,)).copy()
        if np.any(lo > hi):
            raise ValueError("control box has lower > upper")
        object.__setattr__(self, "control_lower", lo)
        object.__setattr__(self, "control_upper", hi)
        cs = np.ones(k) if self.control_scale is None else np.array(self.control_scale, float)
        if cs.shape != (k,):
            raise DimensionError("control_scale must have one entry per control")
        object.__setattr__(self, "control_scale", cs)
        if self.init.n != self.model.n or self.cost.n != self.model.n:
            raise DimensionError("model, cost and initial belief dimensions differ")
        if self.target.E.shape[1] != self.model.n:
            raise DimensionError("target map does not match the state dimension")
        if self.cost.QL is not None and callable(self.cost.QL):
            raise ValueError("transcription supports control-independent QL only")
        if self.cost.R is not None and self.cost.R.shape != (k,):
            raise DimensionError("control weights R must have one entry per control")
        object.__setattr__(self, "chance", tuple(self.chance))


def _triu(n):
    return np.triu_indices(n)


def _clip_indefinite(P):
    """Project covariances that a coarse step left indefinite back onto the PSD cone.

    Definite inputs pass through untouched so finite differences stay clean.
    """
    bad = np.linalg.eigvalsh(P)[..., 0] < 0.0
    if np.any(bad):
        P = P.copy()
        P[bad] = project_psd(P[bad])
    return P


@dataclass
class Forward:
    W: np.ndarray          # (N, k) physical controls
    t_f: float
    dt: float
    m: np.ndarray          # (N+1, n)
    P: np.ndarray          # (N+1, n, n)
    q: np.ndarray          # (N,) running integral per interval


class TranscribedNLP:
    """Shooting transcription of a :class:`RobustOCP`.

    The decision vector is scaled: ``w_phys = w * control_scale`` for each
    interval, followed by ``t_f / time_scale`` when the horizon is free.
    """

    def __init__(self, ocp, n_nodes, substeps=1, fd="forward", rel_step=1e-6):
        if n_nodes < 10:
            raise ValueError("n_nodes must be at least 10")
        if fd not in ("forward", "central"):
            raise ValueError("fd must be 'forward' or 'central'")
        self.ocp = ocp
        self.N = int(n_nodes)
        self.substeps = int(substeps)
        self.fd = fd
        self.rel_step = rel_step
        self.n = ocp.model.n
        self.k = ocp.model.k
        self.free_tf = ocp.horizon.free
        self.iu = _triu(self.n)
        self.nv = self.iu[0].size
        self.n_dec = self.N * self.k + (1 if self.free_tf else 0)
        self.n_eq = ocp.target.e.size
        self.n_ineq = self.N * len(ocp.chance)
        c = ocp.cost
        self._Q = c.Q_bar + c.QL
        self._Qf = c.Qf()
        self._R = np.zeros(self.k) if c.R is None else c.R
        self.obj_scale = 1.0
        x0 = self.initial_decision()
        self.obj_scale = 1.0 / max(1.0, abs(self.objective(x0)[0]))

    # ----------------------------------------------------------------- layout
    def pack(self, W, t_f=None):
        W = np.asarray(W, dtype=float).reshape(self.N, self.k)
        dec = (W / self.ocp.control_scale).ravel()
        if self.free_tf:
            dec = np.append(dec, t_f / self.ocp.time_scale)
        return dec

    def unpack(self, dec):
        dec = np.asarray(dec, dtype=float)
        if dec.shape != (self.n_dec,):
            raise DimensionError(f"decision must have length {self.n_dec}")
        W = dec[: self.N * self.k].reshape(self.N, self.k) * self.ocp.control_scale
        t_f = dec[-1] * self.ocp.time_scale if self.free_tf else self.ocp.horizon.fixed
        return W, float(t_f)

    def bounds(self):
        cs = self.ocp.control_scale
        lo = np.tile(self.ocp.control_lower / cs, self.N)
        hi = np.tile(self.ocp.control_upper / cs, self.N)
        if self.free_tf:
            t0, t1 = self.ocp.horizon.bounds
            lo = np.append(lo, t0 / self.ocp.time_scale)
            hi = np.append(hi, t1 / self.ocp.time_scale)
        return lo, hi

    def initial_decision(self):
        if self.ocp.initial_guess is not None:
            W, t_f = self.ocp.initial_guess(self.N)
        else:
            lo, hi = self.ocp.control_lower, self.ocp.control_upper
            mid = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                           np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0)))
            W = np.tile(mid, (self.N, 1))
            t_f = (self.ocp.horizon.fixed if not self.free_tf
                   else 0.5 * sum(self.ocp.horizon.bounds))
        lo, hi = self.bounds()
        return np.clip(self.pack(W, t_f), lo, hi)

    def control_trajectory(self, dec):
        W, t_f = self.unpack(dec)
        return ControlTrajectory(np.linspace(0.0, t_f, self.N + 1), W)

    # ------------------------------------------------------------- step map
    def _running(self, m, P):
        c = self.ocp.cost
        val = np.einsum("ij,...ji->...", self._Q, P)
        val = val + np.einsum("...i,ij,...j->...", m, c.QL, m) + m @ c.bL + c.cL
        return val

    def _step(self, m, P, w, dt):
        """Map (m, P) over one control interval; batched.  Also returns the
        trapezoidal running integral over the interval's sub-grid."""
        h = dt / self.substeps
        q = 0.5 * h * self._running(m, P)
        for i in range(self.substeps):
            m, P = rk4_step(self.ocp.model, m, P, w, h)
            wgt = 0.5 if i == self.substeps - 1 else 1.0
            q = q + wgt * h * self._running(m, P)
        return m, _clip_indefinite(P), q

    def forward(self, dec):
        W, t_f = self.unpack(dec)
        dt = t_f / self.N
        N, n = self.N, self.n
        m = np.empty((N + 1, n))
        P = np.empty((N + 1, n, n))
        q = np.empty(N)
        m[0], P[0] = self.ocp.init.mean, self.ocp.init.cov
        for j in range(N):
            m[j + 1], P[j + 1], q[j] = self._step(m[j], P[j], W[j], dt)
            if not (np.all(np.isfinite(m[j + 1])) and np.all(np.isfinite(P[j + 1]))):
                raise PropagationError(
                    f"non-finite belief; offending control slice W[{j}]={W[j]}", (j + 1) * dt)
        return Forward(W, t_f, dt, m, P, q)

    def belief_trajectory(self, dec):
        fw = self.forward(dec)
        return BeliefTrajectory(np.linspace(0.0, fw.t_f, self.N + 1), fw.m, fw.P)

    # ------------------------------------------------------ objective pieces
    def breakdown(self, fw):
        c = self.ocp.cost
        fuel = c.psi(fw.m[-1])
        terminal_cov = float(np.trace(self._Qf @ fw.P[-1]))
        running = float(fw.q.sum())
        reg = float(fw.dt * np.sum(self._R * fw.W ** 2))
        return {"terminal": fuel, "terminal_cov": terminal_cov,
                "running": running, "regularization": reg}

    def objective(self, dec):
        fw = self.forward(dec)
        parts = self.breakdown(fw)
        return float(sum(parts.values())), parts

    def _chance_values(self, m, P, W):
        """Rows ``c <= 0`` for every interval and chance spec, shape (N, n_spec)."""
        rows = []
        for spec in self.ocp.chance:
            si = list(spec.state_indices)
            a = W[:, list(spec.gain_indices)]
            s = W[:, spec.offset_index] + np.einsum("ji,ji->j", a, m[:-1, si])
            Psub = P[:-1][:, si][:, :, si]
            var = np.einsum("ji,jik,jk->j", a, Psub, a)
            sigma = np.sqrt(var + 1e-12)
            if spec.side == "upper":
                rows.append(s + spec.margin * sigma - spec.bound)
            else:
                rows.append(spec.bound - s + spec.margin * sigma)
        if not rows:
            return np.zeros((self.N, 0))
        return np.stack(rows, axis=1)

    def constraints(self, dec, fw=None):
        fw = self.forward(dec) if fw is None else fw
        h = self.ocp.target.residual(fw.m[-1])
        c = self._chance_values(fw.m, fw.P, fw.W).ravel()
        return h, c

    # ------------------------------------------------- step-map derivatives
    def _vech(self, P):
        return P[..., self.iu[0], self.iu[1]]

    def _unvech(self, v):
        n = self.n
        P = np.zeros(v.shape[:-1] + (n, n))
        P[..., self.iu[0], self.iu[1]] = v
        P[..., self.iu[1], self.iu[0]] = v
        return P

    def _vech_grad(self, G):
        """Gradient w.r.t. vech coordinates from a gradient w.r.t. full entries."""
        S = G + np.swapaxes(G, -1, -2)
        d = np.arange(self.n)
        S[..., d, d] *= 0.5
        return S[..., self.iu[0], self.iu[1]]

    def step_jacobians(self, fw):
        """Finite-difference Jacobians of every interval's step map, batched.

        Inputs are ``(m, vech P, w, dt)``; outputs ``(m', vech P', q)``.
        Returns an array of shape ``(N, n_out, n_in)``.
        """
        n, nv, k = self.n, self.nv, self.k
        base = np.concatenate([fw.m[:-1], self._vech(fw.P[:-1]), fw.W,
                               np.full((self.N, 1), fw.dt)], axis=1)   # (N, n_in)
        n_in = base.shape[1]
        h = self.rel_step * (1.0 + np.abs(base))
        eye = np.eye(n_in)
        if self.fd == "forward":
            pts = np.concatenate([base[:, None, :], base[:, None, :] + h[:, None, :] * eye],
                                 axis=1)
        else:
            pts = np.concatenate([base[:, None, :] + h[:, None, :] * eye,
                                  base[:, None, :] - h[:, None, :] * eye], axis=1)
        flat = pts.reshape(-1, n_in)
        m_out, P_out, q_out = self._step(flat[:, :n], self._unvech(flat[:, n:n + nv]),
                                         flat[:, n + nv:n + nv + k], flat[:, -1])
        out = np.concatenate([m_out, self._vech(P_out), q_out[:, None]], axis=1)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError("non-finite value while differentiating the step map")
        out = out.reshape(self.N, pts.shape[1], -1)
        if self.fd == "forward":
            J = (out[:, 1:, :] - out[:, :1, :]) / h[:, :, None]
        else:
            J = (out[:, :n_in, :] - out[:, n_in:, :]) / (2.0 * h[:, :, None])
        return np.swapaxes(J, 1, 2)

    # ------------------------------------------------------- merit function
    def merit(self, dec, lam, mu, rho, with_grad=True):
        """Augmented Lagrangian (PHR form for inequalities) and its gradient."""
        fw = self.forward(dec)
        n, nv, k, N = self.n, self.nv, self.k, self.N
        cost = self.ocp.cost
        s = self.obj_scale
        parts = self.breakdown(fw)
        f = s * sum(parts.values())
        h, c = self.constraints(dec, fw)
        val = f + lam @ h + 0.5 * rho * h @ h
        if c.size:
            shifted = np.maximum(0.0, mu + rho * c)
            val += (shifted @ shifted - mu @ mu) / (2.0 * rho)
        if not with_grad:
            return float(val), None
        dval_dh = lam + rho * h
        dval_dc = shifted.reshape(N, -1) if c.size else np.zeros((N, 0))

        # local gradients w.r.t. node states (full P entries) and controls
        gm = np.zeros((N + 1, n))
        gP = np.zeros((N + 1, n, n))
        gw = np.zeros((N, k))
        gdt = s * np.sum(self._R * fw.W ** 2)
        gw += s * 2.0 * fw.dt * self._R * fw.W
        m_f = fw.m[-1]
        gm[-1] += s * (2.0 * cost.Qpsi @ m_f + cost.bpsi)
        gP[-1] += s * self._Qf.T
        gm[-1] += (dval_dh / self.ocp.target.scale) @ self.ocp.target.E
        for r, spec in enumerate(self.ocp.chance):
            wgt = dval_dc[:, r]
            if not np.any(wgt):
                continue
            si = list(spec.state_indices)
            gi = list(spec.gain_indices)
            a = fw.W[:, gi]
            msub = fw.m[:-1, si]
            Psub = fw.P[:-1][:, si][:, :, si]
            var = np.einsum("ji,jik,jk->j", a, Psub, a)
            sigma = np.sqrt(var + 1e-12)
            sign = 1.0 if spec.side == "upper" else -1.0
            kap = spec.margin
            gw[:, spec.offset_index] += wgt * sign
            Pa = np.einsum("jik,jk->ji", Psub, a)
            gw[:, gi] += wgt[:, None] * (sign * msub + kap * Pa / sigma[:, None])
            gm[:-1][:, si] += wgt[:, None] * sign * a
            G = kap * np.einsum("ji,jk->jik", a, a) / (2.0 * sigma)[:, None, None]
            idx = np.ix_(np.arange(N), si, si)
            gP[:-1][idx] += wgt[:, None, None] * G

        J = self.step_jacobians(fw)
        gz = np.concatenate([gm, self._vech_grad(gP)], axis=1)    # (N+1, n+nv)
        adj = gz[-1]
        grad_w = np.zeros((N, k))
        for j in range(N - 1, -1, -1):
            out_grad = np.append(adj, s)        # d(merit)/d q_j = obj_scale
            g_in = out_grad @ J[j]
            grad_w[j] = g_in[n + nv:n + nv + k] + gw[j]
            gdt += g_in[-1]
            adj = g_in[:n + nv] + gz[j]
        grad = (grad_w * self.ocp.control_scale).ravel()
        if self.free_tf:
            grad = np.append(grad, gdt / N * self.ocp.time_scale)
        return float(val), grad


def transcribe(ocp, n_nodes, substeps=1, fd="forward"):
    return TranscribedNLP(ocp, n_nodes, substeps=substeps, fd=fd)


def evaluate_objective(nlp, decision):
    return nlp.objective(decision)


@dataclass
class SolverOptions:
    max_outer: int = 40
    max_inner: int = 400
    kkt_tol: float = 1e-5
    feas_tol: float = 1e-6
    rho0: float = 10.0
    rho_max: float = 1e12
    lbfgs_memory: int = 20
    time_limit: Optional[float] = None


@dataclass
class SolveReport:
    decision: np.ndarray
    W: np.ndarray
    t_f: float
    breakdown: dict
    objective: float
    eq_violation: float
    ineq_violation: float
    kkt: float
    outer_iterations: int
    inner_iterations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)
    multipliers_eq: Optional[np.ndarray] = None
    multipliers_ineq: Optional[np.ndarray] = None
    wall_time: float = 0.0

    @property
    def max_violation(self):
        return max(self.eq_violation, self.ineq_violation)


def _projected_gradient(x, g, lo, hi):
    return np.max(np.abs(x - np.clip(x - g, lo, hi))) if x.size else 0.0


def solve(nlp, opts=None, x0=None):
    """Augmented Lagrangian with a bound-constrained L-BFGS inner solver.

    Follows the usual LANCELOT-style schedule: multipliers are updated when
    the constraint violation has dropped below the current target, otherwise
    the penalty grows tenfold.
    """
    opts = SolverOptions() if opts is None else opts
    t_start = time.perf_counter()
    lo, hi = nlp.bounds()
    x = nlp.initial_decision() if x0 is None else np.clip(np.asarray(x0, float), lo, hi)
    lam = np.zeros(nlp.n_eq)
    mu = np.zeros(nlp.n_ineq)
    rho = opts.rho0
    omega = 1.0 / rho
    eta = 1.0 / rho ** 0.1
    history = []
    inner_total = 0
    converged = False
    message = "maximum outer iterations reached"
    kkt = np.inf
    feas = np.inf

    for outer in range(1, opts.max_outer + 1):
        def fun(z, lam=lam, mu=mu, rho=rho):
            try:
                return nlp.merit(z, lam, mu, rho)
            except (PropagationError, NonFiniteError, FloatingPointError, ValueError):
                return np.inf, np.zeros_like(z)

        start_val = fun(x)[0]
        res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                       options={"maxiter": opts.max_inner, "gtol": max(omega, 0.1 * opts.kkt_tol),
                                "ftol": 1e-15, "maxcor": opts.lbfgs_memory})
        inner_total += res.nit
        if not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun):
            raise SolverError(f"non-finite objective at outer iteration {outer}")
        x = res.x
        val, g = nlp.merit(x, lam, mu, rho)
        kkt = _projected_gradient(x, g, lo, hi)
        h, c = nlp.constraints(x)
        mu_next = np.maximum(0.0, mu + rho * c)
        compl = np.max(np.abs(np.minimum(-c, mu_next))) if c.size else 0.0
        feas = max(np.max(np.abs(h)) if h.size else 0.0,
                   np.max(np.maximum(c, 0.0)) if c.size else 0.0)
        history.append({"outer": outer, "rho": rho, "merit_start": start_val,
                        "merit_end": float(val), "feas": float(feas), "kkt": float(kkt),
                        "inner_iterations": int(res.nit), "inner_message": str(res.message)})
        log.info("outer %d rho=%.1e merit=%.6e feas=%.2e kkt=%.2e nit=%d (%s)", outer, rho,
                 val, feas, kkt, res.nit, res.message)
        if feas <= opts.feas_tol and kkt <= opts.kkt_tol and compl <= max(opts.feas_tol, 1e-6):
            converged = True
            message = "converged"
            break
        if feas <= eta:
            lam = lam + rho * h
            mu = mu_next
            eta = max(eta / rho ** 0.9, 0.1 * opts.feas_tol)
            omega = max(omega / rho, 0.1 * opts.kkt_tol)
        else:
            rho = min(rho * 10.0, opts.rho_max)
            eta = max(1.0 / rho ** 0.1, 0.1 * opts.feas_tol)
            omega = max(1.0 / rho, 0.1 * opts.kkt_tol)
        if opts.time_limit is not None and time.perf_counter() - t_start > opts.time_limit:
            message = "time limit reached"
            break

    value, parts = nlp.objective(x)
    h, c = nlp.constraints(x)
    W, t_f = nlp.unpack(x)
    return SolveReport(
        decision=x, W=W, t_f=t_f, breakdown=parts, objective=value,
        eq_violation=float(np.max(np.abs(h))) if h.size else 0.0,
        ineq_violation=float(np.max(np.maximum(c, 0.0))) if c.size else 0.0,
        kkt=float(kkt), outer_iterations=len(history), inner_iterations=inner_total,
        converged=converged, message=message, history=history,
        multipliers_eq=lam, multipliers_ineq=mu, wall_time=time.perf_counter() - t_start)
