"""Least-squares Monte Carlo backward induction for BSDE slices.

A *slice* is one backward equation indexed by a fixed parameter ``s``.  The
solver handles a batch of ``S`` slices at once: values are stored as
``[S, n_paths, d]`` per time step, and every conditional expectation is a
single orthogonal projection shared by the whole batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable, Optional

import numpy as np

from .core import PathEnsemble, ProblemSpec, sigma_b
from .errors import DataError, DivergenceError, NumericError

__all__ = [
    "RegressionBasis",
    "Projector",
    "StepContext",
    "regress",
    "backward_step",
    "solve_slice",
    "solve_family",
]

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class RegressionBasis:
    """Total-degree polynomial basis with per-step affine scaling to ``[-1, 1]``."""

    degree: int = 2
    kind: str = "polynomial"

    def __post_init__(self):
        if self.kind != "polynomial":
            raise ValueError(f"unsupported basis kind {self.kind!r}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a non-negative integer, got {self.degree}")

    def size(self, n: int) -> int:
        return comb(n + self.degree, self.degree)

    def exponents(self, n: int) -> list[tuple[int, ...]]:
        out = [()]
        for _ in range(n):
            out = [e + (k,) for e in out for k in range(self.degree + 1)]
        out = [e for e in out if sum(e) <= self.degree]
        return sorted(out, key=lambda e: (sum(e), tuple(-k for k in e)))

    @staticmethod
    def normalize(features: np.ndarray) -> np.ndarray:
        lo = features.min(axis=0)
        hi = features.max(axis=0)
        width = hi - lo
        flat = width <= 1e-14 * np.maximum(1.0, np.abs(lo))
        scale = np.where(flat, 0.0, 2.0 / np.where(flat, 1.0, width))
        return (features - lo) * scale - np.where(flat, 0.0, 1.0)

    def design(self, features: np.ndarray) -> np.ndarray:
        z = self.normalize(features)
        cols = []
        for e in self.exponents(features.shape[1]):
            c = np.ones(features.shape[0])
            for j, k in enumerate(e):
                if k:
                    c = c * z[:, j] ** k
            cols.append(c)
        return np.stack(cols, axis=1)


class Projector:
    """Orthogonal projection onto the span of the basis evaluated at the features.

    The minimum-norm least-squares fit has the same fitted values as the
    projection onto the column space, so only an orthonormal basis of that
    space is kept.
    """

    def __init__(self, features: np.ndarray, basis: RegressionBasis):
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features[:, None]
        _require_finite(features, "feature")
        A = basis.design(features)
        u, sv, _ = np.linalg.svd(A, full_matrices=False)
        tol = sv[0] * max(A.shape) * np.finfo(float).eps if sv.size and sv[0] > 0 else 0.0
        rank = int(np.sum(sv > tol))
        self.Q = np.ascontiguousarray(u[:, :rank])
        self.QT = np.ascontiguousarray(self.Q.T)
        self.rank = rank

    def __call__(self, targets: np.ndarray) -> np.ndarray:
        """Project along the path axis; accepts ``[P, ...]`` or ``[S, P, ...]`` via ``batched``."""
        t = np.asarray(targets, dtype=float)
        shape = t.shape
        flat = t.reshape(shape[0], -1)
        return (self.Q @ (self.QT @ flat)).reshape(shape)

    def batched(self, targets: np.ndarray) -> np.ndarray:
        """Project ``[S, P, ...]`` arrays slice by slice."""
        t = np.asarray(targets, dtype=float)
        S, P = t.shape[:2]
        flat = t.reshape(S, P, -1)
        return (self.Q @ (self.QT @ flat)).reshape(t.shape)


def _require_finite(arr: np.ndarray, what: str) -> None:
    flat = arr.reshape(arr.shape[0], -1)
    bad = ~np.isfinite(flat).all(axis=0)
    if bad.any():
        raise DataError(f"non-finite {what} values in column {int(np.flatnonzero(bad)[0])}")


def regress(features: np.ndarray, targets: np.ndarray, basis: RegressionBasis = RegressionBasis()) -> np.ndarray:
    """Fitted values of the least-squares regression of ``targets`` on ``features``."""
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    if squeeze:
        targets = targets[:, None]
    _require_finite(targets, "target")
    out = Projector(features, basis)(targets)
    return out[:, 0] if squeeze else out


class StepContext:
    """Per-step quantities shared by every slice solved on one ensemble.

    Holds the projector at each ``t_i``, ``pinv(sigma sigma^T)`` at the
    sampled states, ``sigma`` itself and the drift product ``sigma b``.
    """

    def __init__(self, ens: PathEnsemble, spec: ProblemSpec, basis: RegressionBasis = RegressionBasis()):
        self.ens = ens
        self.spec = spec
        self.basis = basis
        self.grid = ens.grid
        self.dt = ens.grid.dt
        M, P = ens.grid.steps, ens.n_paths
        n, m = spec.n, spec.m
        self.proj = [Projector(ens.X[i], basis) for i in range(M + 1)]
        self.sig = np.empty((M + 1, P, n, m))
        self.pinv_a = np.empty((M + 1, P, n, n))
        self.sb = None if spec.drift_b is None else np.empty((M + 1, P, n))
        for i in range(M + 1):
            t = float(ens.grid.nodes[i])
            sig = np.broadcast_to(np.asarray(spec.sigma(t, ens.X[i]), dtype=float), (P, n, m))
            a = np.einsum("pij,pkj->pik", sig, sig)
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite sigma sigma^T at step {i}")
            self.sig[i] = sig
            if n == 1:
                a0 = a[:, 0, 0]
                safe = np.where(a0 > 1e-300, a0, 1.0)
                self.pinv_a[i, :, 0, 0] = np.where(a0 > 1e-300, 1.0 / safe, 0.0)
            else:
                self.pinv_a[i] = np.linalg.pinv(a)
            if self.sb is not None:
                self.sb[i] = sigma_b(spec, t, ens.X[i])


def _z_estimate(ctx: StepContext, i: int, next_values: np.ndarray, fitted_next: np.ndarray) -> np.ndarray:
    """``pinv(sigma sigma^T) E_i[dX (next - E_i next)^T] / dt`` for ``[S, P, d]`` inputs."""
    dX = ctx.ens.dX[i]  # [P, n]
    resid = next_values - fitted_next
    prod = dX[None, :, :, None] * resid[:, :, None, :]  # [S, P, n, d]
    cov = ctx.proj[i].batched(prod) / ctx.dt
    if ctx.spec.n == 1:
        return cov * ctx.pinv_a[i][None, :, :, :]
    return np.einsum("pab,spbd->spad", ctx.pinv_a[i], cov)


def _one_step(ctx: StepContext, i: int, next_values: np.ndarray, gen: Callable, stats: Optional[dict]):
    proj = ctx.proj[i]
    fitted_next = proj.batched(next_values)
    v = _z_estimate(ctx, i, next_values, fitted_next)
    g = np.asarray(gen(i, fitted_next, v), dtype=float)
    g = np.broadcast_to(g, next_values.shape)
    target = next_values + ctx.dt * g
    if not np.all(np.isfinite(target)):
        raise DivergenceError(f"non-finite generator value at step {i}")
    u = proj.batched(target)
    change = float(np.max(np.abs(u - fitted_next))) if u.size else 0.0
    if change > DIVERGENCE_LIMIT:
        raise DivergenceError(f"inner sweep change {change:.3e} exceeds {DIVERGENCE_LIMIT:.0e} at step {i}")
    if stats is not None:
        mart = np.einsum("pa,spad->spd", ctx.ens.dX[i], v)
        raw = target - u - mart
        stats["raw_sq"] += float(np.sum(raw * raw))
        cond = proj.batched(raw)
        stats["cond_sq"] += float(np.sum(cond * cond))
        stats["count"] += raw.size
    return u, v


def solve_family(ctx: StepContext, terminal: np.ndarray, gen: Callable, U_out=None, V_out=None, stats=None):
    """Backward induction for a batch of slices.

    ``terminal`` is ``[S, P, d]``; ``gen(i, u, v)`` returns ``[S, P, d]`` given
    the predicted value ``u`` and integrand ``v`` at step ``i``.  Results are
    written to ``U_out [S, M+1, P, d]`` and ``V_out [S, M+1, P, n, d]``; the
    integrand at ``t_M`` is set to zero.
    """
    terminal = np.asarray(terminal, dtype=float)
    S, P, d = terminal.shape
    M, n = ctx.grid.steps, ctx.spec.n
    if U_out is None:
        U_out = np.empty((S, M + 1, P, d))
    if V_out is None:
        V_out = np.empty((S, M + 1, P, n, d))
    U_out[:, M] = terminal
    V_out[:, M] = 0.0
    nxt = terminal
    for i in range(M - 1, -1, -1):
        u, v = _one_step(ctx, i, nxt, gen, stats)
        U_out[:, i] = u
        V_out[:, i] = v
        nxt = u
    return U_out, V_out


def new_stats() -> dict:
    return {"raw_sq": 0.0, "cond_sq": 0.0, "count": 0}


def summarize_stats(stats: dict) -> dict:
    c = max(stats["count"], 1)
    return {"raw_rms": float(np.sqrt(stats["raw_sq"] / c)), "cond_rms": float(np.sqrt(stats["cond_sq"] / c))}


def backward_step(ens: PathEnsemble, i: int, next_values, generator_at_step: Callable, spec: ProblemSpec,
                  basis: RegressionBasis = RegressionBasis(), ctx: Optional[StepContext] = None):
    """One regression step ``t_{i+1} -> t_i`` for a single slice.

    ``generator_at_step(u, v)`` receives the predicted ``u [P, d]`` and
    ``v [P, n, d]`` and returns ``[P, d]``.
    """
    if not 0 <= i < ens.grid.steps:
        raise IndexError(f"step index {i} outside [0, {ens.grid.steps})")
    ctx = ctx or StepContext(ens, spec, basis)
    nxt = np.asarray(next_values, dtype=float)[None]
    u, v = _one_step(ctx, i, nxt, lambda _i, uu, vv: generator_at_step(uu[0], vv[0])[None], None)
    return u[0], v[0]


def solve_slice(ens: PathEnsemble, spec: ProblemSpec, terminal, generator: Callable, extern_fields=None,
                basis: RegressionBasis = RegressionBasis(), ctx: Optional[StepContext] = None):
    """Solve one slice backward from ``terminal [P, d]``.

    ``generator(i, u, v, extern)`` gets ``u [P, d]``, ``v [P, n, d]`` and the
    frozen ``extern_fields`` object. Returns ``(U [M+1, P, d], V [M+1, P, n, d])``.
    """
    ctx = ctx or StepContext(ens, spec, basis)
    term = np.asarray(terminal, dtype=float)[None]

    def gen(i, u, v):
        return np.asarray(generator(i, u[0], v[0], extern_fields), dtype=float)[None]

    U, V = solve_family(ctx, term, gen)
    return U[0], V[0]
