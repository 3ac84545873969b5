"""Numpy reference versions of the compiled kernels."""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed, path_start, n_paths, n_draws):
    with np.errstate(over="ignore"):
        paths = np.arange(path_start + 1, path_start + n_paths + 1, dtype=np.uint64)
        key = _mix64(np.uint64(seed) + _GOLDEN * paths)
        ctr = np.arange(n_draws, dtype=np.uint64) * _C1 + _C2
        h = _mix64(key[:, None] ^ ctr[None, :])
    return ((h >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * (1.0 / 9007199254740992.0)


def fd_derivatives(v, invdx, inv2dx, invdx2):
    vx = np.zeros_like(v)
    vxx = np.zeros_like(v)
    vx[:, 1:-1] = (v[:, 2:] - v[:, :-2]) * inv2dx
    vxx[:, 1:-1] = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) * invdx2
    vx[:, 0] = (v[:, 1] - v[:, 0]) * invdx
    vx[:, -1] = (v[:, -1] - v[:, -2]) * invdx
    return vx, vxx


def explicit_step(v, vxx, gen, half_a, dtau):
    out = np.empty_like(v)
    out[:, 1:-1] = v[:, 1:-1] + dtau * (half_a[1:-1] * vxx[:, 1:-1] + gen[:, 1:-1])
    out[:, 0] = 2.0 * out[:, 1] - out[:, 2]
    out[:, -1] = 2.0 * out[:, -2] - out[:, -3]
    absmax = np.abs(out)
    big = float(absmax.max()) if np.all(np.isfinite(absmax)) else float("inf")
    return out, big
