"""Explicit finite-difference solvers on a 1-D state grid.

Three marching problems share one scheme (explicit Euler in time, central
differences in space, linear extrapolation at both ends of the truncated
domain):

* the representation PDE whose solution ``v(s, t, x)`` reproduces the
  probabilistic family, with diagonal arguments lagged by one coarse step;
* the extended-domain equilibrium HJB equation for ``V(s, t, x)``;
* the coupled value / auxiliary system ``(V(t, x), J(s, t, x))`` with its
  ``-d_s J(t, t, x)`` correction.

Each coarse step ``t_{i+1} -> t_i`` is split into ``L`` equal substeps so the
stability bound ``dtau <= 0.4 dx^2 / sigma_max^2`` holds.  HJB coefficient
functions act on plain arrays without trailing dimension axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .core import BsvieSolution, PathEnsemble, PdeSolution, ProblemSpec, TimeGrid
from .errors import ConfigurationError, DivergenceError, DomainError, NumericError

__all__ = [
    "ControlSet",
    "HjbSpec",
    "uniform_xgrid",
    "default_xgrid",
    "plan_substeps",
    "hamiltonian_argmax",
    "solve_representation_pde",
    "solve_hjb_wy",
    "solve_hjb_bkm",
    "check_equivalence",
    "feynman_kac_check",
]

BLOWUP = 1e12
CFL = 0.4


@dataclass(frozen=True, eq=False)
class ControlSet:
    points: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.points, dtype=float))
        if p.ndim != 1 or p.size == 0:
            raise ConfigurationError("control set must be a non-empty 1-D list of points")
        if np.any(np.diff(p) <= 0):
            raise ConfigurationError("control points must be sorted strictly ascending")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)


@dataclass(frozen=True, eq=False)
class HjbSpec:
    bar_f: Callable
    b: Callable
    sigma: Callable
    xi: Callable
    control: ControlSet
    ds_bar_f: Optional[Callable] = None
    ds_xi: Optional[Callable] = None
    x0: float = 0.0


def uniform_xgrid(x_lo: float, x_hi: float, dx: float) -> np.ndarray:
    if not (x_hi > x_lo and dx > 0):
        raise ConfigurationError(f"invalid spatial grid [{x_lo}, {x_hi}] with dx={dx}")
    K = int(round((x_hi - x_lo) / dx))
    if K < 2 or not math.isclose(K * dx, x_hi - x_lo, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigurationError(f"dx={dx} does not divide [{x_lo}, {x_hi}] into at least two cells")
    return np.linspace(x_lo, x_hi, K + 1)


def default_xgrid(x0: float, sigma_max: float, T: float, dx: float) -> np.ndarray:
    """``x0 +- 6 sigma_max sqrt(T)`` snapped outward to multiples of ``dx``."""
    half = 6.0 * sigma_max * math.sqrt(T) if sigma_max > 0 else 1.0
    k = math.ceil(half / dx - 1e-9)
    return uniform_xgrid(x0 - k * dx, x0 + k * dx, dx)


def _sigma_scalar(sigma: Callable, t: float, x: np.ndarray, vector_state: bool) -> np.ndarray:
    if vector_state:
        val = np.asarray(sigma(t, x[:, None]), dtype=float)
        val = np.broadcast_to(val, (x.size, 1, 1))[:, 0, 0]
    else:
        val = np.broadcast_to(np.asarray(sigma(t, x), dtype=float), x.shape)
    return val


def plan_substeps(sigma: Callable, tgrid: TimeGrid, xgrid: np.ndarray, substeps: Optional[int] = None,
                  vector_state: bool = True) -> int:
    """Number of substeps per coarse step satisfying the stability bound."""
    dx = float(xgrid[1] - xgrid[0])
    smax = max(float(np.max(np.abs(_sigma_scalar(sigma, float(t), xgrid, vector_state)))) for t in tgrid.nodes)
    if smax == 0.0:
        limit = math.inf
    else:
        limit = CFL * dx * dx / (smax * smax)
    if substeps is None:
        return 1 if math.isinf(limit) else max(1, math.ceil(tgrid.dt / limit - 1e-12))
    if int(substeps) != substeps or substeps < 1:
        raise ConfigurationError(f"substeps must be a positive integer, got {substeps}")
    if tgrid.dt / substeps > limit * (1 + 1e-12):
        raise ConfigurationError(
            f"stability bound violated: time step {tgrid.dt / substeps:.6g} exceeds the maximal admissible "
            f"{limit:.6g} (dx={dx:g}, sigma_max={smax:g})")
    return int(substeps)


def _gbar(hjb: HjbSpec, s, t, x, a, v):
    f = np.asarray(hjb.bar_f(s, t, x, a), dtype=float)
    drift = np.asarray(hjb.b(t, x, a), dtype=float) * np.asarray(hjb.sigma(t, x), dtype=float)
    return f + v * drift


def hamiltonian_argmax(hjb: HjbSpec, s, t, x, v):
    """Maximize ``f(s,t,x,a) + v sigma(t,x) b(t,x,a)`` over the control points.

    Ties go to the smallest control index. Returns ``(a_star, H)`` with the
    broadcast shape of the inputs.
    """
    s, t, x, v = np.broadcast_arrays(*(np.asarray(q, dtype=float) for q in (s, t, x, v)))
    pts = hjb.control.points
    vals = np.empty(s.shape + (pts.size,))
    for k, a in enumerate(pts):
        g = np.broadcast_to(_gbar(hjb, s, t, x, np.full(s.shape, a), v), s.shape)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite Hamiltonian integrand at control point a={a:g} (index {k})")
        vals[..., k] = g
    idx = np.argmax(vals, axis=-1)
    a_star = pts[idx]
    H = np.take_along_axis(vals, idx[..., None], axis=-1)[..., 0]
    if a_star.ndim == 0:
        return float(a_star), float(H)
    return a_star, H


def _writable(a):
    # typed memoryviews in the compiled kernels reject read-only buffers
    return np.require(a, dtype=float, requirements=["C", "W"])


class _Marcher:
    """Shared explicit time marching over stacked rows ``W [R, K+1]``."""

    def __init__(self, tgrid: TimeGrid, xgrid: np.ndarray, sgrid: np.ndarray, sigma: Callable,
                 substeps: int, vector_state: bool):
        self.tgrid = tgrid
        self.x = np.asarray(xgrid, dtype=float)
        self.s = np.asarray(sgrid, dtype=float)
        self.dx = float(self.x[1] - self.x[0])
        self.invdx = 1.0 / self.dx
        self.inv2dx = 0.5 / self.dx
        self.invdx2 = 1.0 / (self.dx * self.dx)
        self.sigma = sigma
        self.L = substeps
        self.vector_state = vector_state

    def derivs(self, W):
        return _kernels.fd_derivatives(_writable(W), self.invdx, self.inv2dx, self.invdx2)

    def coarse_step(self, W, i, rhs):
        """Advance ``W`` from ``t_{i+1}`` to ``t_i``; ``rhs(tau, W, vx) -> [R, K+1]``."""
        t_hi = float(self.tgrid.nodes[i + 1])
        dtau = self.tgrid.dt / self.L
        for n in range(self.L):
            tau = t_hi - n * dtau
            vx, vxx = self.derivs(W)
            sig = _sigma_scalar(self.sigma, tau, self.x, self.vector_state)
            half_a = _writable(0.5 * sig * sig)
            gen = _writable(rhs(tau, W, vx))
            W, big = _kernels.explicit_step(_writable(W), vxx, gen, half_a, dtau)
            if not big <= BLOWUP:
                self._blowup(W, tau - dtau)
        return W

    def _blowup(self, W, tau):
        bad = ~(np.abs(W) <= BLOWUP)
        r, k = np.argwhere(bad)[0]
        s = self.s[r] if r < self.s.size else float("nan")
        raise DivergenceError(f"solution blew up (|v| > {BLOWUP:.0e}) at s={s:g}, t={tau:g}, x={self.x[k]:g}")


def _require_pde_grids(tgrid: TimeGrid, sgrid):
    s = np.asarray(sgrid, dtype=float)
    if s.shape != tgrid.nodes.shape or not np.array_equal(s, tgrid.nodes):
        raise ConfigurationError("the PDE backend requires the parameter grid to equal the time grid")
    return s


def _split(grids):
    if isinstance(grids, TimeGrid):
        return grids, grids.nodes
    tgrid, pgrid = grids
    return tgrid, getattr(pgrid, "nodes", pgrid)


def solve_representation_pde(spec: ProblemSpec, grids, xgrid, substeps: Optional[int] = None) -> PdeSolution:
    """Backward explicit solve of the representation PDE for a scalar problem."""
    if spec.n != 1 or spec.m != 1 or spec.d != 1:
        raise ConfigurationError("the PDE backend handles scalar problems (n = m = d = 1) only")
    tgrid, sgrid = _split(grids)
    s = _require_pde_grids(tgrid, sgrid)
    x = np.asarray(xgrid, dtype=float)
    L = plan_substeps(spec.sigma, tgrid, x, substeps, vector_state=True)
    march = _Marcher(tgrid, x, s, spec.sigma, L, vector_state=True)
    S, M, K1 = s.size, tgrid.steps, x.size
    xs = x[:, None]  # [K+1, 1] state vectors
    s_col = s[:, None]
    v_out = np.empty((S, M + 1, K1))
    vx_out = np.empty((S, M + 1, K1))
    W = np.broadcast_to(np.asarray(spec.xi(s_col, xs[None]), dtype=float), (S, K1, 1))[..., 0].copy()
    v_out[:, M] = W
    vx_out[:, M] = march.derivs(W)[0]

    for i in range(M - 1, -1, -1):
        def rhs(tau, Wc, vx, i=i):
            y = Wc[:, :, None]
            z = vx[:, :, None, None]
            u = Wc[i + 1][None, :, None]
            v = vx[i + 1][None, :, None, None]
            f = np.asarray(spec.f(s_col, tau, xs[None], y, z, u, v), dtype=float)
            f = np.broadcast_to(f, (S, K1, 1))[..., 0]
            if spec.drift_b is not None:
                sig = _sigma_scalar(spec.sigma, tau, x, True)
                b = np.broadcast_to(np.asarray(spec.drift_b(tau, xs), dtype=float), (K1, 1))[:, 0]
                f = f + vx * (sig * b)
            return f

        W = march.coarse_step(W, i, rhs)
        v_out[:, i] = W
        vx_out[:, i] = march.derivs(W)[0]
    return PdeSolution(sgrid=s, tgrid=tgrid, xgrid=x, v=v_out, vx=vx_out, kind="representation", substeps=L)


def _hjb_terminal(hjb: HjbSpec, s, x):
    return np.broadcast_to(np.asarray(hjb.xi(s[:, None], x[None, :]), dtype=float), (s.size, x.size)).copy()


def _wy_rhs(hjb: HjbSpec, s, x, i):
    s_col = s[:, None]

    def rhs(tau, Wc, vx):
        a_star, _ = hamiltonian_argmax(hjb, tau, tau, x, vx[i + 1])
        return _slice_gen(hjb, s_col, tau, x, a_star, vx)
    return rhs


def _slice_gen(hjb, s_col, tau, x, a_star, vx):
    f = np.asarray(hjb.bar_f(s_col, tau, x[None, :], a_star[None, :]), dtype=float)
    drift = np.asarray(hjb.b(tau, x, a_star), dtype=float) * np.asarray(hjb.sigma(tau, x), dtype=float)
    return np.broadcast_to(f + vx * drift[None, :], vx.shape)


def solve_hjb_wy(hjb: HjbSpec, grids, xgrid, substeps: Optional[int] = None) -> PdeSolution:
    """Extended-domain equilibrium HJB equation.

    The control at ``(t, x)`` maximizes the Hamiltonian evaluated with the
    lagged diagonal gradient; each slice then uses its own gradient in the
    drift term.
    """
    tgrid, sgrid = _split(grids)
    s = _require_pde_grids(tgrid, sgrid)
    x = np.asarray(xgrid, dtype=float)
    L = plan_substeps(hjb.sigma, tgrid, x, substeps, vector_state=False)
    march = _Marcher(tgrid, x, s, hjb.sigma, L, vector_state=False)
    M = tgrid.steps
    v_out = np.empty((s.size, M + 1, x.size))
    vx_out = np.empty_like(v_out)
    W = _hjb_terminal(hjb, s, x)
    v_out[:, M] = W
    vx_out[:, M] = march.derivs(W)[0]
    for i in range(M - 1, -1, -1):
        W = march.coarse_step(W, i, _wy_rhs(hjb, s, x, i))
        v_out[:, i] = W
        vx_out[:, i] = march.derivs(W)[0]
    return PdeSolution(sgrid=s, tgrid=tgrid, xgrid=x, v=v_out, vx=vx_out, kind="hjb_wy", substeps=L)


def _ds_diag(Jrows: np.ndarray, s: np.ndarray, jd: int) -> np.ndarray:
    """Second-order s-derivative of ``J`` at slice ``jd`` (backward, or central at ``jd = 1``)."""
    if jd >= 2:
        h = s[jd] - s[jd - 1]
        return (3.0 * Jrows[jd] - 4.0 * Jrows[jd - 1] + Jrows[jd - 2]) / (2.0 * h)
    if jd == 1:
        return (Jrows[2] - Jrows[0]) / (s[2] - s[0])
    h = s[1] - s[0]
    return (-3.0 * Jrows[0] + 4.0 * Jrows[1] - Jrows[2]) / (2.0 * h)


def _bkm_rhs(hjb: HjbSpec, s, x, i):
    S = s.size
    s_col = s[:, None]

    def rhs(tau, Wc, vx):
        Vx = vx[S]
        a_star, H = hamiltonian_argmax(hjb, tau, tau, x, Vx)
        out = np.empty_like(Wc)
        out[:S] = _slice_gen(hjb, s_col, tau, x, a_star, vx[:S])
        out[S] = H - _ds_diag(Wc[:S], s, i + 1)
        return out
    return rhs


def solve_hjb_bkm(hjb: HjbSpec, grids, xgrid, substeps: Optional[int] = None) -> PdeSolution:
    """Coupled value function ``V(t, x)`` and auxiliary family ``J(s, t, x)``."""
    tgrid, sgrid = _split(grids)
    s = _require_pde_grids(tgrid, sgrid)
    if s.size < 3:
        raise ConfigurationError("the coupled HJB system needs J >= 2 for the s-difference")
    x = np.asarray(xgrid, dtype=float)
    L = plan_substeps(hjb.sigma, tgrid, x, substeps, vector_state=False)
    march = _Marcher(tgrid, x, s, hjb.sigma, L, vector_state=False)
    S, M = s.size, tgrid.steps
    J_out = np.empty((S, M + 1, x.size))
    Jx_out = np.empty_like(J_out)
    V_out = np.empty((M + 1, x.size))
    Vx_out = np.empty_like(V_out)
    term = _hjb_terminal(hjb, s, x)
    W = np.vstack([term, term[-1:]])  # last row is V with V(T, x) = xi(T, x)
    vx = march.derivs(W)[0]
    J_out[:, M], Jx_out[:, M], V_out[M], Vx_out[M] = W[:S], vx[:S], W[S], vx[S]
    for i in range(M - 1, -1, -1):
        W = march.coarse_step(W, i, _bkm_rhs(hjb, s, x, i))
        vx = march.derivs(W)[0]
        J_out[:, i], Jx_out[:, i], V_out[i], Vx_out[i] = W[:S], vx[:S], W[S], vx[S]
    return PdeSolution(sgrid=s, tgrid=tgrid, xgrid=x, v=J_out, vx=Jx_out, kind="hjb_bkm", Vfun=V_out,
                       Vx=Vx_out, Jfun=J_out, substeps=L)


def check_equivalence(wy: PdeSolution, bkm: PdeSolution, hjb: HjbSpec) -> dict:
    """Compare the two equilibrium formulations.

    ``v_gap_sup`` is ``sup |V - V_wy(t, t, .)|``.  ``bkm_residual_sup`` applies
    one coarse step of the coupled scheme to the pair built from the
    extended-domain solution at ``t_{i+1}`` and measures, per unit time, how far
    it lands from that pair at ``t_i``.
    """
    if bkm.Vfun is None:
        raise ConfigurationError("second argument must come from solve_hjb_bkm")
    same = (wy.tgrid == bkm.tgrid and np.array_equal(wy.sgrid, bkm.sgrid)
            and np.array_equal(wy.xgrid, bkm.xgrid) and wy.substeps == bkm.substeps)
    if not same:
        raise ConfigurationError("equivalence check needs identical grids and substeps")
    M = wy.tgrid.steps
    S = wy.sgrid.size
    diag = wy.diagonal
    v_gap = float(np.max(np.abs(bkm.Vfun - diag)))
    march = _Marcher(wy.tgrid, wy.xgrid, wy.sgrid, hjb.sigma, wy.substeps, vector_state=False)
    resid = 0.0
    for i in range(M - 1, -1, -1):
        W = np.vstack([wy.v[:, i + 1], diag[i + 1][None]])
        W = march.coarse_step(W, i, _bkm_rhs(hjb, wy.sgrid, wy.xgrid, i))
        resid = max(resid, float(np.max(np.abs(W[S] - diag[i]))) / wy.tgrid.dt)
    status = "ok" if np.isfinite(v_gap) and np.isfinite(resid) else "inconclusive"
    return {"op": "check_equivalence", "v_gap_sup": v_gap, "bkm_residual_sup": resid, "status": status}


def feynman_kac_check(pde: PdeSolution, bsvie: BsvieSolution, ens: PathEnsemble, max_exit: float = 0.05) -> dict:
    """RMS gap between the regression family and the PDE solution along the paths."""
    x = pde.xgrid
    X = ens.X[..., 0]  # [M+1, P]
    outside = np.any((X < x[0]) | (X > x[-1]), axis=0)
    exit_fraction = float(np.mean(outside))
    if exit_fraction > max_exit:
        raise DomainError(f"{exit_fraction:.1%} of paths leave [{x[0]:g}, {x[-1]:g}]; widen the spatial grid")
    if bsvie.Y.shape[:2] != pde.v.shape[:2]:
        raise ConfigurationError("PDE and regression solutions live on different (s, t) grids")
    dx = x[1] - x[0]
    M = pde.tgrid.steps
    ysq = zsq = 0.0
    ny = nz = 0
    for i in range(M + 1):
        xi = np.clip(X[i], x[0], x[-1])
        k = np.clip(((xi - x[0]) / dx).astype(int), 0, x.size - 2)
        w = (xi - x[k]) / dx
        vi = pde.v[:, i, k] * (1 - w) + pde.v[:, i, k + 1] * w
        dy = bsvie.Y[:, i, :, 0] - vi
        ysq += float(np.sum(dy * dy))
        ny += dy.size
        if i < M:
            vxi = pde.vx[:, i, k] * (1 - w) + pde.vx[:, i, k + 1] * w
            dz = bsvie.Z[:, i, :, 0, 0] - vxi
            zsq += float(np.sum(dz * dz))
            nz += dz.size
    return {"op": "feynman_kac_check", "y_rms": float(np.sqrt(ysq / ny)), "z_rms": float(np.sqrt(zsq / max(nz, 1))),
            "exit_fraction": exit_fraction}
