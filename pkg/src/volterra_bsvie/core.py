"""Domain types: grids, problem specifications and solution containers.

Array conventions (time-major inside solvers, path-major for ensembles):

* ensemble states ``[n_paths, M+1, n]`` and increments ``[n_paths, M, n]``;
* two-parameter fields ``U[j, i, p, :]`` with shape ``[J+1, M+1, n_paths, d]``
  and ``V[j, i, p, :, :]`` with shape ``[J+1, M+1, n_paths, n, d]``;
* diagonal processes ``[M+1, n_paths, d]`` and ``[M+1, n_paths, n, d]``.

User coefficient functions are vectorized over leading batch axes:
``sigma(t, x) -> [..., n, m]``, ``f(s, t, x, y, z, u, v) -> [..., d]`` where
``(y, z)`` are the slice's own values and ``(u, v)`` the diagonal values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError

__all__ = [
    "TimeGrid",
    "ParamGrid",
    "Lipschitz",
    "ProblemSpec",
    "PathEnsemble",
    "FieldSolution",
    "BsvieSolution",
    "PdeSolution",
    "NormReport",
    "assemble_nabla_f",
    "effective_generator",
    "effective_nabla",
    "sigma_b",
]


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_M = T``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ConfigurationError(f"horizon T must be > 0, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError(f"steps M must be an integer >= 1, got {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @cached_property
    def nodes(self) -> np.ndarray:
        return _frozen(np.linspace(0.0, self.horizon, self.steps + 1))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def __len__(self):
        return self.steps + 1


@dataclass(frozen=True, eq=False)
class ParamGrid:
    """Grid of the Volterra parameter ``s`` on ``[0, T]``."""

    nodes: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.nodes, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ConfigurationError("parameter grid needs at least two nodes")
        if s[0] != 0.0:
            raise ConfigurationError("parameter grid must start at s = 0")
        if np.any(np.diff(s) <= 0):
            raise ConfigurationError("parameter grid must be strictly increasing")
        object.__setattr__(self, "nodes", _frozen(s))

    @classmethod
    def from_time_grid(cls, tgrid: TimeGrid) -> "ParamGrid":
        return cls(tgrid.nodes.copy())

    @classmethod
    def uniform(cls, horizon: float, count: int) -> "ParamGrid":
        if int(count) != count or count < 1:
            raise ConfigurationError(f"J must be an integer >= 1, got {count}")
        return cls(np.linspace(0.0, float(horizon), int(count) + 1))

    @property
    def J(self) -> int:
        return self.nodes.size - 1

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    def __eq__(self, other):
        return isinstance(other, ParamGrid) and np.array_equal(self.nodes, other.nodes)

    __hash__ = None

    def is_subset_of(self, tgrid: TimeGrid) -> bool:
        t = tgrid.nodes
        if self.horizon != t[-1]:
            return False
        return bool(np.all(np.isin(self.nodes, t)))

    def is_aligned(self, tgrid: TimeGrid) -> bool:
        """True when ``s``-nodes coincide with ``t``-nodes (needed for diagonals)."""
        return self.nodes.size == tgrid.nodes.size and bool(np.array_equal(self.nodes, tgrid.nodes))

    def require_aligned(self, tgrid: TimeGrid) -> None:
        if not self.is_aligned(tgrid):
            raise ConfigurationError(
                "diagonal extraction needs the parameter grid to equal the time grid "
                f"(J={self.J}, M={tgrid.steps})"
            )


@dataclass(frozen=True)
class Lipschitz:
    L_f: Optional[float] = None
    L_ds_f: Optional[float] = None


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficients and dimensions of a diagonal-coupled type-I BSVIE."""

    n: int
    m: int
    d: int
    x0: np.ndarray
    sigma: Callable
    f: Callable
    xi: Callable
    ds_xi: Callable
    ds_f: Optional[Callable] = None
    dy_f: Optional[Callable] = None
    dz_f: Optional[Sequence[Callable]] = None
    drift_b: Optional[Callable] = None
    sigma_max: Optional[float] = None
    lipschitz: Lipschitz = field(default_factory=Lipschitz)
    z_diagonal_in_generator: bool = True
    name: str = ""

    def __post_init__(self):
        for k in ("n", "m", "d"):
            val = getattr(self, k)
            if int(val) != val or val < 1:
                raise ConfigurationError(f"dimension {k} must be >= 1, got {val}")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.n,):
            raise ShapeError(f"x0 must have shape ({self.n},), got {x0.shape}")
        object.__setattr__(self, "x0", _frozen(x0))
        if self.dz_f is not None:
            dz = tuple(self.dz_f)
            if len(dz) != self.n:
                raise ShapeError(f"dz_f must list n={self.n} functions, got {len(dz)}")
            object.__setattr__(self, "dz_f", dz)

    @property
    def has_partials(self) -> bool:
        return self.ds_f is not None and self.dy_f is not None and self.dz_f is not None

    def sigma_bound(self, grid: TimeGrid, x_samples: np.ndarray) -> float:
        """Sampled ``max ||sigma(t, x)||_2`` over grid nodes and ``x_samples [k, n]``."""
        xs = np.asarray(x_samples, dtype=float).reshape(-1, self.n)
        best = 0.0
        for t in grid.nodes:
            sig = np.asarray(self.sigma(float(t), xs), dtype=float)
            best = max(best, float(np.max(np.linalg.norm(sig, ord=2, axis=(-2, -1)))))
        return best


def sigma_b(spec: ProblemSpec, t: float, x: np.ndarray) -> Optional[np.ndarray]:
    """``sigma(t,x) b(t,x)`` with shape ``[..., n]`` or ``None`` when b is absent."""
    if spec.drift_b is None:
        return None
    sig = np.asarray(spec.sigma(t, x), dtype=float)
    b = np.asarray(spec.drift_b(t, x), dtype=float)
    return np.einsum("...ij,...j->...i", sig, b)


def effective_generator(spec, s, t, x, y, z, u, v, sb=None):
    """``f`` plus the Girsanov term ``z^T sigma b`` (own ``z``)."""
    out = np.asarray(spec.f(s, t, x, y, z, u, v), dtype=float)
    if sb is not None:
        out = out + np.einsum("...i,...ik->...k", sb, z)
    return out


def assemble_nabla_f(spec: ProblemSpec, s, t, x, du, dv, y, z, u, v) -> np.ndarray:
    """Evaluate ``d_s f + d_y f . du + sum_i d_{z_i} f . dv_i``.

    Shapes follow the generator convention with ``du [..., d]`` and
    ``dv [..., n, d]``.
    """
    if not spec.has_partials:
        raise ConfigurationError("ds_f, dy_f and dz_f are required to assemble the derivative generator")
    d, n = spec.d, spec.n
    du = np.asarray(du, dtype=float)
    dv = np.asarray(dv, dtype=float)
    if du.shape[-1:] != (d,):
        raise ShapeError(f"u' has trailing shape {du.shape[-1:]}, expected ({d},)")
    if dv.shape[-2:] != (n, d):
        raise ShapeError(f"v' has trailing shape {dv.shape[-2:]}, expected ({n}, {d})")
    ds = np.asarray(spec.ds_f(s, t, x, y, z, u, v), dtype=float)
    if ds.shape[-1:] != (d,):
        raise ShapeError(f"ds_f returned trailing shape {ds.shape[-1:]}, expected ({d},)")
    dy = np.asarray(spec.dy_f(s, t, x, y, z, u, v), dtype=float)
    if dy.shape[-2:] != (d, d):
        raise ShapeError(f"dy_f returned trailing shape {dy.shape[-2:]}, expected ({d}, {d})")
    out = ds + np.einsum("...kl,...l->...k", dy, du)
    for i, fn in enumerate(spec.dz_f):
        dzi = np.asarray(fn(s, t, x, y, z, u, v), dtype=float)
        if dzi.shape[-2:] != (d, d):
            raise ShapeError(f"dz_f[{i}] returned trailing shape {dzi.shape[-2:]}, expected ({d}, {d})")
        out = out + np.einsum("...kl,...l->...k", dzi, dv[..., i, :])
    return out


def effective_nabla(spec, s, t, x, du, dv, y, z, u, v, sb=None):
    """Derivative generator including the drift term ``dv^T sigma b``."""
    out = assemble_nabla_f(spec, s, t, x, du, dv, y, z, u, v)
    if sb is not None:
        out = out + np.einsum("...i,...ik->...k", sb, dv)
    return out


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    grid: TimeGrid
    n_paths: int
    states: np.ndarray
    increments: np.ndarray
    seed: int

    def __post_init__(self):
        st = _frozen(self.states)
        inc = _frozen(self.increments)
        M = self.grid.steps
        if st.ndim != 3 or st.shape[:2] != (self.n_paths, M + 1):
            raise ShapeError(f"states shape {st.shape} inconsistent with n_paths={self.n_paths}, M={M}")
        if inc.shape != (self.n_paths, M, st.shape[2]):
            raise ShapeError(f"increments shape {inc.shape} inconsistent with states {st.shape}")
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "increments", inc)

    @property
    def n(self) -> int:
        return self.states.shape[2]

    @cached_property
    def X(self) -> np.ndarray:
        """Time-major states ``[M+1, n_paths, n]``."""
        return _frozen(np.ascontiguousarray(self.states.transpose(1, 0, 2)))

    @cached_property
    def dX(self) -> np.ndarray:
        """Time-major increments ``[M, n_paths, n]``."""
        return _frozen(np.ascontiguousarray(self.increments.transpose(1, 0, 2)))


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """Output of one Picard solve: families, derivative families and diagonals."""

    tgrid: TimeGrid
    pgrid: ParamGrid
    U: np.ndarray
    V: np.ndarray
    Ydiag: np.ndarray
    Zdiag: np.ndarray
    Udiag: np.ndarray
    dU: Optional[np.ndarray] = None
    dV: Optional[np.ndarray] = None
    dUdiag: Optional[np.ndarray] = None
    Vdiag_reconstructed: Optional[np.ndarray] = None
    ortho_residuals: dict = field(default_factory=dict)
    picard_trace: tuple = ()
    converged: bool = False
    tolerance: float = float("nan")
    solver: str = "full"
    sig: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sig is not None:
            object.__setattr__(self, "sig", _frozen(self.sig))
        for name in ("U", "V", "Ydiag", "Zdiag", "Udiag", "dU", "dV", "dUdiag", "Vdiag_reconstructed"):
            val = getattr(self, name)
            if val is not None:
                arr = _frozen(val)
                if not np.all(np.isfinite(arr)):
                    raise ShapeError(f"field {name} contains non-finite values")
                object.__setattr__(self, name, arr)
        J1, M1 = self.pgrid.J + 1, self.tgrid.steps + 1
        if self.U.shape[:2] != (J1, M1) or self.V.shape[:2] != (J1, M1):
            raise ShapeError(f"family shapes {self.U.shape}, {self.V.shape} do not match grids ({J1}, {M1})")
        if self.Ydiag.shape[0] != M1 or self.Zdiag.shape[0] != M1:
            raise ShapeError("diagonal arrays must have M+1 rows")
        object.__setattr__(self, "picard_trace", tuple(float(x) for x in self.picard_trace))

    @property
    def iterations(self) -> int:
        return len(self.picard_trace)

    @property
    def distance(self) -> float:
        return self.picard_trace[-1] if self.picard_trace else float("nan")

    def direct_diagonal(self, name: str = "V") -> np.ndarray:
        """Read ``F[i, i]`` from a family on aligned grids."""
        self.pgrid.require_aligned(self.tgrid)
        arr = getattr(self, name)
        idx = np.arange(self.tgrid.steps + 1)
        return arr[idx, idx]


@dataclass(frozen=True, eq=False)
class BsvieSolution:
    tgrid: TimeGrid
    pgrid: ParamGrid
    Y: np.ndarray
    Z: np.ndarray
    Ydiag: np.ndarray
    Zdiag: np.ndarray
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PdeSolution:
    """Grid function ``v[j, i, k]`` over ``(s_j, t_i, x_k)``."""

    sgrid: np.ndarray
    tgrid: TimeGrid
    xgrid: np.ndarray
    v: np.ndarray
    vx: np.ndarray
    kind: str = "representation"
    Vfun: Optional[np.ndarray] = None
    Vx: Optional[np.ndarray] = None
    Jfun: Optional[np.ndarray] = None
    substeps: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("sgrid", "xgrid", "v", "vx", "Vfun", "Vx", "Jfun"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val))
        shape = (self.sgrid.size, self.tgrid.steps + 1, self.xgrid.size)
        if self.v.shape != shape or self.vx.shape != shape:
            raise ShapeError(f"v has shape {self.v.shape}, expected {shape}")

    @property
    def diagonal(self) -> np.ndarray:
        """``v(t_i, t_i, x)`` as ``[M+1, K+1]``."""
        idx = np.arange(self.tgrid.steps + 1)
        return self.v[idx, idx]


@dataclass(frozen=True)
class NormReport:
    """Squared discrete norm estimates; ``hbar22 = h22_sup + diag_h2``."""

    s2_sup: float = 0.0
    h2: float = 0.0
    s22_sup: float = 0.0
    h22_sup: float = 0.0
    diag_h2: float = 0.0
    l2: float = 0.0
    exp_weight: float = 0.0

    @property
    def hbar22(self) -> float:
        return self.h22_sup + self.diag_h2

    def as_dict(self) -> dict:
        return {
            "s2_sup": self.s2_sup,
            "h2": self.h2,
            "s22_sup": self.s22_sup,
            "h22_sup": self.h22_sup,
            "diag_h2": self.diag_h2,
            "hbar22": self.hbar22,
            "l2": self.l2,
            "exp_weight": self.exp_weight,
        }
