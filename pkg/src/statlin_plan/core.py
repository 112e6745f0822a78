"""State, control and belief types shared by every other module.

All model callables are batched: ``drift(x, u)`` accepts arrays of shape
``(..., n)`` and ``(..., k)`` and returns ``(..., n)``; ``jacobian`` returns
``(..., n, n)``; ``dispersion`` returns ``(..., n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

SYM_TOL = 1e-10
ASYM_REJECT = 1e-8
PSD_TOL = 1e-8


class DimensionError(ValueError):
    """Array dimensions do not match the model."""


class NonFiniteError(FloatingPointError):
    """A model evaluation or integration produced NaN or inf."""


def symmetrize(P):
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def psd_violation(P):
    """Return ``min_eig + tol * (1 + trace)``; negative means not PSD."""
    P = symmetrize(P)
    eig = np.linalg.eigvalsh(P)
    tr = np.trace(P, axis1=-2, axis2=-1)
    return eig[..., 0] + PSD_TOL * (1.0 + np.abs(tr))


def check_covariance(P, name="covariance"):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise NonFiniteError(f"{name} has non-finite entries")
    scale = max(np.linalg.norm(P), 1.0)
    if np.linalg.norm(P - P.T) > ASYM_REJECT * scale:
        # rounding-level asymmetry is cleaned below; anything larger is a caller bug
        raise ValueError(f"{name} is not symmetric")
    P = symmetrize(P)
    if psd_violation(P) < 0:
        raise ValueError(f"{name} is not positive semi-definite "
                         f"(min eigenvalue {np.linalg.eigvalsh(P)[0]:.3e})")
    return P


def project_psd(P):
    """Clip negative eigenvalues to zero."""
    w, V = np.linalg.eigh(symmetrize(P))
    w = np.clip(w, 0.0, None)
    return symmetrize((V * w[..., None, :]) @ np.swapaxes(V, -1, -2))


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = check_covariance(np.array(self.cov, dtype=float))
        if cov.shape[0] != mean.shape[0]:
            raise DimensionError(
                f"mean has dimension {mean.shape[0]} but covariance is {cov.shape}")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class DynamicsModel:
    """Controlled Itô system ``dx = f(x,u) dt + g(x,u) dW``.

    ``jacobian`` may be omitted, in which case central finite differences of
    ``drift`` are used.  ``jacobian_bound`` is the optional envelope
    ``phi(|u|) >= |D_x f(x,u)|_F``.  ``linearization`` optionally returns
    ``(f, D_x f)`` from one call and ``noise_covariance`` returns ``g g'``;
    both are shortcuts used by the propagator when present.
    """
    n: int
    k: int
    drift: Callable
    jacobian: Optional[Callable] = None
    dispersion: Optional[Callable] = None
    jacobian_bound: Optional[Callable] = None
    name: str = "model"
    noise_dim: int = 0
    control_linear: bool = False
    linearization: Optional[Callable] = None
    noise_covariance: Optional[Callable] = None

    def f(self, x, u):
        return self.drift(x, u)

    def A(self, x, u):
        if self.jacobian is not None:
            return self.jacobian(x, u)
        return fd_jacobian(lambda z: self.drift(z, u), x)

    def g(self, x, u):
        x = np.asarray(x, dtype=float)
        if self.dispersion is None:
            return np.zeros(x.shape + (max(self.noise_dim, 1),))
        return self.dispersion(x, u)

    def fA(self, x, u):
        if self.linearization is not None:
            return self.linearization(x, u)
        return self.f(x, u), self.A(x, u)

    def GG(self, x, u):
        if self.noise_covariance is not None:
            return self.noise_covariance(x, u)
        G = self.g(x, u)
        return G @ np.swapaxes(G, -1, -2)


def _check_dims(model, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1:] != (model.n,):
        raise DimensionError(f"state has shape {x.shape}, model expects n={model.n}")
    if u.shape[-1:] != (model.k,):
        raise DimensionError(f"control has shape {u.shape}, model expects k={model.k}")
    return x, u


def eval_drift(model, x, u):
    x, u = _check_dims(model, x, u)
    return np.asarray(model.f(x, u), dtype=float)


def fd_step(x, rel=1e-6):
    return rel * (1.0 + np.abs(x))


def fd_jacobian(fun, x, rel=1e-6):
    """Central-difference Jacobian of a batched map ``(..., n) -> (..., m)``.

    Column ``i`` uses the step ``rel * (1 + |x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = fd_step(x, rel)                                   # (..., n)
    eye = np.eye(n)
    # stencil axis inserted before the state axis: (..., 2n, n)
    dx = h[..., None, :] * eye
    xs = np.concatenate([x[..., None, :] + dx, x[..., None, :] - dx], axis=-2)
    fs = np.asarray(fun(xs), dtype=float)
    if not np.all(np.isfinite(fs)):
        raise NonFiniteError("non-finite drift value in finite-difference stencil")
    fp, fm = fs[..., :n, :], fs[..., n:, :]
    J = (fp - fm) / (2.0 * h[..., :, None])               # (..., n_in, m)
    return np.swapaxes(J, -1, -2)


def eval_jacobian_fd(model, x, u, rel=1e-6):
    x, u = _check_dims(model, x, u)
    return fd_jacobian(lambda z: model.f(z, u), x, rel)


def check_jacobian(model, points, controls, rtol=1e-5):
    """Largest violation of ``|A - A_fd| <= rtol (1 + |A|)`` over the samples."""
    worst = 0.0
    for x, u in zip(points, controls):
        A = np.asarray(model.A(x, u))
        A_fd = eval_jacobian_fd(model, x, u)
        ratio = np.abs(A - A_fd) / (rtol * (1.0 + np.abs(A)))
        worst = max(worst, float(ratio.max()))
    return worst


@dataclass(frozen=True)
class ControlTrajectory:
    """Control samples on a time grid.

    Piecewise-constant mode holds ``values[j]`` on ``[t_j, t_{j+1})`` (the last
    interval is closed); piecewise-linear mode interpolates ``N+1`` node values.
    """
    nodes: np.ndarray
    values: np.ndarray
    mode: str = "constant"

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if nodes.size < 2 or nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must start at 0 and be strictly increasing")
        if self.mode not in ("constant", "linear"):
            raise ValueError(f"unknown interpolation mode {self.mode!r}")
        expected = nodes.size - 1 if self.mode == "constant" else nodes.size
        if values.shape[0] != expected:
            raise DimensionError(
                f"{self.mode} mode needs {expected} control values, got {values.shape[0]}")
        nodes.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self):
        return float(self.nodes[-1])

    @property
    def k(self):
        return self.values.shape[1]

    @property
    def n_intervals(self):
        return self.nodes.size - 1

    def interval_index(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise ValueError(f"time outside [0, {self.horizon}]")
        idx = np.searchsorted(self.nodes, t, side="right") - 1
        return np.clip(idx, 0, self.n_intervals - 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        j = self.interval_index(t)
        if self.mode == "constant":
            return self.values[j]
        t0, t1 = self.nodes[j], self.nodes[j + 1]
        w = ((t - t0) / (t1 - t0))[..., None]
        return (1 - w) * self.values[j] + w * self.values[j + 1]

    def on_interval(self, j, t):
        """Value at ``t`` using interval ``j`` (handles the left limit at ``t_{j+1}``)."""
        if self.mode == "constant":
            return self.values[j]
        t0, t1 = self.nodes[j], self.nodes[j + 1]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.values[j] + w * self.values[j + 1]


@dataclass(frozen=True)
class QuadraticCost:
    """``psi(m) = m'Qpsi m + bpsi'm + cpsi`` and ``L(m,u) = m'QL m + bL'm + cL + sum R_i u_i^2``.

    ``QL`` may be a matrix or a callable ``u -> matrix``.  ``Qf_bar`` and
    ``Q_bar`` are the covariance penalties; the effective weights are
    ``Qf = Qf_bar + Qpsi`` and ``Q(u) = Q_bar + QL(u)``.
    """
    n: int
    Qpsi: Optional[np.ndarray] = None
    bpsi: Optional[np.ndarray] = None
    cpsi: float = 0.0
    QL: object = None
    bL: Optional[np.ndarray] = None
    cL: float = 0.0
    R: Optional[np.ndarray] = None
    Qf_bar: Optional[np.ndarray] = None
    Q_bar: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.n
        zero = np.zeros((n, n))
        for name in ("Qpsi", "Qf_bar", "Q_bar"):
            M = getattr(self, name)
            M = zero.copy() if M is None else np.array(M, dtype=float)
            if M.shape != (n, n):
                raise DimensionError(f"{name} must be {n}x{n}")
            if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, symmetrize(M))
        for name in ("Qf_bar", "Q_bar"):
            if psd_violation(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be positive semi-definite")
        for name in ("bpsi", "bL"):
            b = getattr(self, name)
            b = np.zeros(n) if b is None else np.array(b, dtype=float).reshape(-1)
            if b.shape != (n,):
                raise DimensionError(f"{name} must have length {n}")
            object.__setattr__(self, name, b)
        if self.QL is None:
            object.__setattr__(self, "QL", zero.copy())
        elif not callable(self.QL):
            QL = np.array(self.QL, dtype=float)
            if QL.shape != (n, n) or not np.allclose(QL, QL.T):
                raise ValueError("QL must be a symmetric n x n matrix")
            object.__setattr__(self, "QL", symmetrize(QL))
        if self.R is not None:
            object.__setattr__(self, "R", np.array(self.R, dtype=float).reshape(-1))

    def QL_of(self, u):
        return symmetrize(self.QL(u)) if callable(self.QL) else self.QL

    def Qf(self):
        return self.Qf_bar + self.Qpsi

    def Q(self, u):
        return self.Q_bar + self.QL_of(u)

    def psi(self, m):
        m = np.asarray(m, dtype=float)
        return float(m @ self.Qpsi @ m + self.bpsi @ m + self.cpsi)

    def L(self, m, u):
        m = np.asarray(m, dtype=float)
        u = np.asarray(u, dtype=float)
        val = m @ self.QL_of(u) @ m + self.bL @ m + self.cL
        if self.R is not None:
            val = val + np.sum(self.R * u * u)
        return float(val)
