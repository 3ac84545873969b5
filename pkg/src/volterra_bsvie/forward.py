"""Euler-Maruyama simulation of the driftless forward martingale ``dX = sigma dB``."""
from __future__ import annotations

import numpy as np

from . import _kernels
from .core import PathEnsemble, ProblemSpec, TimeGrid
from .errors import ConfigurationError, ShapeError, SimulationError

__all__ = ["gaussian_increments", "simulate_paths", "quadratic_variation_check"]


def gaussian_increments(seed: int, n_paths: int, steps: int, m: int, path_start: int = 0) -> np.ndarray:
    """Standard normals ``[n_paths, steps, m]`` keyed by ``(seed, path, step, component)``.

    Each path has its own counter stream, so any partition of the paths into
    blocks yields the same numbers.
    """
    u = _kernels.counter_uniforms(int(seed), int(path_start), int(n_paths), int(steps) * int(m) * 2)
    u = u.reshape(n_paths, steps, m, 2)
    return np.sqrt(-2.0 * np.log(u[..., 0])) * np.cos(2.0 * np.pi * u[..., 1])


def simulate_paths(spec: ProblemSpec, grid: TimeGrid, n_paths: int, seed: int) -> PathEnsemble:
    if int(n_paths) != n_paths or n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    if int(seed) != seed or seed < 0 or seed >= 2**64:
        raise ConfigurationError(f"seed must be an integer in [0, 2^64), got {seed}")
    n_paths, M, n, m = int(n_paths), grid.steps, spec.n, spec.m
    dB = gaussian_increments(seed, n_paths, M, m) * np.sqrt(grid.dt)
    X = np.empty((M + 1, n_paths, n))
    dX = np.empty((M, n_paths, n))
    X[0] = spec.x0
    for i in range(M):
        sig = np.asarray(spec.sigma(float(grid.nodes[i]), X[i]), dtype=float)
        sig = np.broadcast_to(sig, (n_paths, n, m))
        bad = ~np.isfinite(sig).all(axis=(1, 2))
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            raise SimulationError(f"non-finite sigma at path {p}, step {i}")
        dX[i] = np.einsum("pij,pj->pi", sig, dB[:, i, :])
        X[i + 1] = X[i] + dX[i]
    return PathEnsemble(
        grid=grid,
        n_paths=n_paths,
        states=np.ascontiguousarray(X.transpose(1, 0, 2)),
        increments=np.ascontiguousarray(dX.transpose(1, 0, 2)),
        seed=int(seed),
    )


def quadratic_variation_check(ens: PathEnsemble, spec: ProblemSpec) -> float:
    """Path-average Frobenius gap between realized and left-point integrated ``sigma sigma^T``."""
    if ens.n != spec.n:
        raise ShapeError(f"ensemble state dimension {ens.n} differs from spec n={spec.n}")
    dt = ens.grid.dt
    realized = np.einsum("ipa,ipb->pab", ens.dX, ens.dX)
    integrated = np.zeros_like(realized)
    for i in range(ens.grid.steps):
        sig = np.broadcast_to(
            np.asarray(spec.sigma(float(ens.grid.nodes[i]), ens.X[i]), dtype=float),
            (ens.n_paths, spec.n, spec.m),
        )
        integrated += np.einsum("pij,pkj->pik", sig, sig) * dt
    return float(np.mean(np.linalg.norm(realized - integrated, axis=(1, 2))))
