"""Numeric Lie brackets and rank tests for (lifted) accessibility.

Vector fields are batched callables ``(..., n) -> (..., n)``.  Jacobians of
bracket fields are obtained by central differences of the bracket itself
(nested differencing), step ``1e-4 (1 + |x_i|)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .core import NonFiniteError, fd_jacobian

BRACKET_STEP = 1e-4
DEFAULT_TOL = 1e-6
LEVEL_CAP = 400


@dataclass(frozen=True)
class VectorFieldHandle:
    eval: Callable
    jac: Optional[Callable] = None
    label: str = "f"

    def __call__(self, x):
        return np.asarray(self.eval(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            J = np.asarray(self.jac(x), dtype=float)
        else:
            J = fd_jacobian(self.eval, x, rel=BRACKET_STEP)
        if not np.all(np.isfinite(J)):
            raise NonFiniteError(f"non-finite Jacobian of {self.label}")
        return J


def field_of(model, u, label=None):
    u = np.asarray(u, dtype=float)
    return VectorFieldHandle(lambda x: model.f(x, u), lambda x: model.A(x, u),
                             label or f"f[{np.array2string(u, precision=3)}]")


def difference(f1, f2):
    return VectorFieldHandle(lambda x: f1(x) - f2(x),
                             lambda x: f1.jacobian(x) - f2.jacobian(x),
                             f"{f1.label}-{f2.label}")


def lie_bracket(f1, f2, x):
    """``[f1, f2](x) = Df2(x) f1(x) - Df1(x) f2(x)``."""
    x = np.asarray(x, dtype=float)
    out = (np.einsum("...ij,...j->...i", f2.jacobian(x), f1(x))
           - np.einsum("...ij,...j->...i", f1.jacobian(x), f2(x)))
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite bracket [{f1.label},{f2.label}]")
    return out


def bracket_field(f1, f2):
    return VectorFieldHandle(lambda x: lie_bracket(f1, f2, x), None,
                             f"[{f1.label},{f2.label}]")


def _bracket_tuples(s, depth, cap):
    """Index tuples ``(i1, ..., id)`` for ``[f_i1, [f_i2, ... f_id]]``.

    Ordered by largest index then lexicographically, so the capped list for
    ``s`` samples is a prefix of the list for ``s + 1``.
    """
    tuples = [t for t in itertools.product(range(s), repeat=depth) if t[-2] < t[-1]]
    # trivial zeros: [f_i, [f_i, ...]] is not zero in general, keep it
    tuples.sort(key=lambda t: (max(t), t))
    return tuples[:cap]


def generate_ideal(model, control_samples, depth, cap=LEVEL_CAP):
    """Differences ``f_{u_j} - f_{u_0}`` and nested brackets up to ``depth``."""
    if depth < 2:
        raise ValueError("depth must be at least 2")
    samples = [np.asarray(u, dtype=float) for u in control_samples]
    base = [field_of(model, u, f"f_u{i + 1}") for i, u in enumerate(samples)]
    gens = [difference(f, base[0]) for f in base[1:]]
    for d in range(2, depth + 1):
        for t in _bracket_tuples(len(base), d, cap):
            h = bracket_field(base[t[-2]], base[t[-1]])
            for i in reversed(t[:-2]):
                h = bracket_field(base[i], h)
            gens.append(h)
    return gens


def lifted_vector(h, x):
    """``(h(x); vech(Dh + Dh'))`` with off-diagonal entries weighted by sqrt(2)."""
    x = np.asarray(x, dtype=float)
    J = h.jacobian(x)
    S = J + np.swapaxes(J, -1, -2)
    n = x.shape[-1]
    iu = np.triu_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return np.concatenate([h(x), S[..., iu[0], iu[1]] * w], axis=-1)


def numeric_rank(M, tol):
    if M.size == 0:
        return 0, np.zeros(0)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0, sv
    return int(np.sum(sv > tol * sv[0])), sv


@dataclass(frozen=True)
class SpanReport:
    point: np.ndarray
    lifted_dim: int
    target_dim: int
    generators_used: tuple
    singular_values: np.ndarray

    @property
    def full(self):
        return self.lifted_dim == self.target_dim

    @property
    def verdict(self):
        # the rank test is one-sided: a deficit is never a proof of inaccessibility
        return "accessible" if self.full else "inconclusive"


def _scaled(h, scale):
    if scale is None:
        return h
    s = np.asarray(scale, dtype=float)
    return VectorFieldHandle(lambda z: h(z * s) / s,
                             lambda z: h.jacobian(z * s) * s / s[:, None], h.label)


def lifted_rank(model, point, control_samples, depth, tol_sv=DEFAULT_TOL, state_scale=None,
                generators=None):
    """Rank of the lifted generators at ``point``.

    ``state_scale`` evaluates the test in the coordinates ``z = x / scale``.
    """
    if not tol_sv > 0:
        raise ValueError("tol_sv must be positive")
    point = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(point)):
        raise ValueError("point must be finite")
    gens = generators if generators is not None else generate_ideal(model, control_samples, depth)
    if not gens:
        raise ValueError("empty generator set")
    z = point if state_scale is None else point / np.asarray(state_scale, float)
    M = np.array([lifted_vector(_scaled(h, state_scale), z) for h in gens])
    n = model.n
    rank, sv = numeric_rank(M, tol_sv)
    return SpanReport(point, rank, n + n * (n + 1) // 2, tuple(h.label for h in gens), sv)


def plain_rank(model, point, control_samples, depth, tol_sv=DEFAULT_TOL, state_scale=None,
               generators=None):
    point = np.asarray(point, dtype=float)
    gens = generators if generators is not None else generate_ideal(model, control_samples, depth)
    if not gens:
        raise ValueError("empty generator set")
    z = point if state_scale is None else point / np.asarray(state_scale, float)
    M = np.array([_scaled(h, state_scale)(z) for h in gens])
    return numeric_rank(M, tol_sv)[0]


def latin_hypercube(k, count, seed=0, lower=0.0, upper=1.0):
    """``count`` Latin-hypercube samples in the box ``[lower, upper]^k``."""
    pts = qmc.LatinHypercube(d=k, seed=np.random.default_rng(seed)).random(count)
    return qmc.scale(pts, np.broadcast_to(lower, (k,)), np.broadcast_to(upper, (k,)))
