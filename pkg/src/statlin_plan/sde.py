"""Euler-Maruyama Monte Carlo for ``dx = f(x,u) dt + g(x,u) dW``.

Every path owns a counter-based Philox stream keyed by ``(seed, path_id)``:
the first ``n`` normals draw the initial state, the following ``d`` per step
the Brownian increments.  Results therefore do not depend on how paths are
batched or scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DimensionError, GaussianBelief, NonFiniteError, PSD_TOL, project_psd

SEED_MAX = 2 ** 64 - 1
CHUNK = 256


class ModelValidityError(FloatingPointError):
    """A path left the region where the model is meaningful (e.g. dry mass)."""


@dataclass(frozen=True)
class EnsembleStats:
    times: np.ndarray
    mean: np.ndarray          # (M+1, n)
    cov: np.ndarray           # (M+1, n, n), divisor sample_count - 1
    sample_count: int
    seed: int
    sem_mean: Optional[np.ndarray] = None   # (M+1, n) standard error of the mean
    sem_cov: Optional[np.ndarray] = None    # (M+1, n, n) standard error of cov entries

    def __post_init__(self):
        if self.sample_count < 2:
            raise ValueError("sample_count must be at least 2")
        if self.mean.shape[0] != self.times.size or self.cov.shape[0] != self.times.size:
            raise DimensionError("ensemble arrays do not match the time grid")

    def restrict(self, times, atol=1e-9):
        """Sub-grid of the ensemble matching ``times`` (each must be a grid node)."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.times, times - atol)
        idx = np.clip(idx, 0, self.times.size - 1)
        if not np.allclose(self.times[idx], times, atol=atol * max(1.0, self.times[-1])):
            raise DimensionError("requested times are not on the ensemble grid")
        pick = lambda a: None if a is None else a[idx]
        return EnsembleStats(self.times[idx], self.mean[idx], self.cov[idx],
                             self.sample_count, self.seed, pick(self.sem_mean),
                             pick(self.sem_cov))


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return seed


def path_stream(seed, path_id):
    key = np.array([_check_seed(seed), int(path_id)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def simulation_grid(ctrl, dt):
    """Refined time grid and the owning control interval of every step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    widths = np.diff(ctrl.nodes)
    sub = np.rint(widths / dt).astype(int)
    if np.any(sub < 1) or not np.allclose(sub * dt, widths, rtol=1e-9, atol=1e-12):
        raise ValueError("dt must divide every control interval")
    times = [np.array([0.0])]
    owner = []
    for j, s in enumerate(sub):
        times.append(ctrl.nodes[j] + widths[j] * np.arange(1, s + 1) / s)
        owner.append(np.full(s, j))
    return np.concatenate(times), np.concatenate(owner)


def default_dt(ctrl):
    """One tenth of the shortest control interval."""
    return float(np.min(np.diff(ctrl.nodes))) / 10.0


def _controls_on_grid(ctrl, times, owner):
    if ctrl.mode == "constant":
        return ctrl.values[owner]
    return np.array([ctrl.on_interval(j, t) for j, t in zip(owner, times[:-1])])


def _draws(seed, path_ids, n, d, steps):
    z0 = np.empty((len(path_ids), n))
    dw = np.empty((len(path_ids), steps, d))
    for i, pid in enumerate(path_ids):
        gen = path_stream(seed, pid)
        z0[i] = gen.standard_normal(n)
        dw[i] = gen.standard_normal((steps, d))
    return z0, dw


def _init_factor(init):
    cov = np.asarray(init.cov, dtype=float)
    w = np.linalg.eigvalsh(cov)
    if w[0] < -PSD_TOL * (1.0 + abs(np.trace(cov))):
        raise ValueError("initial covariance is not positive semi-definite")
    cov = project_psd(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # semi-definite: symmetric square root instead of Cholesky
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _run(model, x0, us, dts, dw, floor):
    """Integrate a batch of paths; ``x0`` (B, n), ``dw`` (B, M, d) standard normals."""
    B, M = x0.shape[0], us.shape[0]
    X = np.empty((B, M + 1, model.n))
    X[:, 0] = x = x0
    for i in range(M):
        G = np.asarray(model.g(x, us[i]))
        G = np.broadcast_to(G, (B,) + G.shape[-2:])
        if G.shape[-1] != dw.shape[-1]:
            raise DimensionError("dispersion width differs from the noise dimension")
        x = x + model.f(x, us[i]) * dts[i] + np.sqrt(dts[i]) * np.einsum("bnd,bd->bn", G, dw[:, i])
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite state at step {i + 1}")
        if floor is not None and np.any(x[:, floor[0]] <= floor[1]):
            raise ModelValidityError(
                f"state component {floor[0]} fell below {floor[1]} at step {i + 1}")
        X[:, i + 1] = x
    return X


def _noise_dim(model, x, u):
    return np.asarray(model.g(x, u)).shape[-1]


def simulate_path(model, x0, ctrl, dt, seed, path_id=0, floor=None):
    """Single Euler-Maruyama path from a deterministic start, shape (M+1, n)."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise DimensionError(f"x0 must have length {model.n}")
    times, owner = simulation_grid(ctrl, dt)
    us = _controls_on_grid(ctrl, times, owner)
    d = _noise_dim(model, x0, us[0])
    gen = path_stream(seed, path_id)
    gen.standard_normal(model.n)    # keep the stream layout shared with simulate_paths
    dw = gen.standard_normal((1, us.shape[0], d))
    return _run(model, x0[None], us, np.diff(times), dw, floor)[0]


def simulate_paths(model, init, ctrl, dt, n_paths, seed, floor=None, first_path=0):
    """Paths started from ``N(init.mean, init.cov)``; returns ``(times, X)`` with
    ``X`` of shape (n_paths, M+1, n)."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    times, owner = simulation_grid(ctrl, dt)
    us = _controls_on_grid(ctrl, times, owner)
    L = _init_factor(init)
    d = _noise_dim(model, np.asarray(init.mean), us[0])
    dts = np.diff(times)
    out = np.empty((n_paths, times.size, model.n))
    for c0 in range(0, n_paths, CHUNK):
        ids = np.arange(first_path + c0, first_path + min(n_paths, c0 + CHUNK))
        z0, dw = _draws(seed, ids, model.n, d, us.shape[0])
        x0 = init.mean + z0 @ L.T
        out[c0:c0 + ids.size] = _run(model, x0, us, dts, dw, floor)
    return times, out


def ensemble_from_paths(times, X, seed=0):
    N = X.shape[0]
    if N < 2:
        raise ValueError("need at least two paths")
    mean = X.mean(axis=0)
    cov = np.empty((times.size, X.shape[2], X.shape[2]))
    sem_cov = np.empty_like(cov)
    for t0 in range(0, times.size, CHUNK):
        D = X[:, t0:t0 + CHUNK] - mean[t0:t0 + CHUNK]
        prod = np.einsum("pti,ptj->ptij", D, D)
        cov[t0:t0 + CHUNK] = prod.sum(axis=0) / (N - 1)
        sem_cov[t0:t0 + CHUNK] = prod.std(axis=0, ddof=1) / np.sqrt(N)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    sem_mean = X.std(axis=0, ddof=1) / np.sqrt(N)
    return EnsembleStats(times, mean, cov, N, int(seed), sem_mean, sem_cov)


def monte_carlo(model, init, ctrl, dt=None, n_paths=1000, seed=0, floor=None):
    """Sample mean and unbiased covariance of ``n_paths`` simulated paths."""
    if n_paths < 2:
        raise ValueError("n_paths must be at least 2")
    if not isinstance(init, GaussianBelief):
        init = GaussianBelief(*init)
    dt = default_dt(ctrl) if dt is None else dt
    times, X = simulate_paths(model, init, ctrl, dt, n_paths, seed, floor)
    return ensemble_from_paths(times, X, seed)


def _match(stats, traj):
    if stats.times.size != traj.times.size or not np.allclose(stats.times, traj.times,
                                                               rtol=1e-9, atol=1e-12):
        raise DimensionError("ensemble and belief grids differ")


def relative_errors(stats, traj):
    """Per-time relative mean and covariance errors of ``traj`` against ``stats``."""
    _match(stats, traj)
    em = np.linalg.norm(traj.means - stats.mean, axis=1) / (1 + np.linalg.norm(stats.mean, axis=1))
    nP = np.linalg.norm(stats.cov, axis=(1, 2))
    eP = np.linalg.norm(traj.covs - stats.cov, axis=(1, 2)) / (1 + nP)
    return em, eP
