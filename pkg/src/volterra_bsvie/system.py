"""Picard solver for the coupled family / derivative-family / diagonal system.

One Picard map takes a guess of the diagonal pair ``(Ydiag, Zdiag)`` and

1. solves the family ``U^s`` for every ``s`` with the diagonal frozen,
2. solves the derivative family ``dU^s`` whose generator is the assembled
   s-derivative of the family generator,
3. reads ``Udiag``, ``dUdiag`` on the aligned grid and rebuilds ``Vdiag``
   from the antiderivative identity,
4. solves the diagonal equation with generator
   ``f(t, t, X, y, z, Udiag, Vdiag) - dUdiag``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bsde import RegressionBasis, StepContext, new_stats, solve_family, summarize_stats
from .core import (
    BsvieSolution,
    FieldSolution,
    ParamGrid,
    PathEnsemble,
    ProblemSpec,
    TimeGrid,
    effective_generator,
    effective_nabla,
)
from .errors import ConfigurationError, NonConvergenceError, StateError
from .metrics import h2, s2

__all__ = [
    "PicardOptions",
    "Guess",
    "picard_step",
    "solve_system",
    "solve_system_simplified",
    "solve_any",
    "reconstruct_diagonal_V",
    "trapezoid_tail_weights",
    "extract_bsvie",
    "check_diagonal_dynamics",
    "check_M_property",
    "check_constraint_D",
]


@dataclass(frozen=True)
class PicardOptions:
    """``tol`` is relative: the loop stops once ``d_k <= tol * (1 + magnitude)``.

    ``fixed_iterations`` disables early stopping and runs exactly that many
    maps, which is what the stability experiment needs.
    """

    tol: float = 1e-6
    max_iter: int = 50
    fixed_iterations: Optional[int] = None
    raise_on_failure: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError(f"picard tol must be > 0, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigurationError(f"picard max_iter must be >= 1, got {self.max_iter}")


@dataclass
class Guess:
    Ydiag: np.ndarray
    Zdiag: np.ndarray
    Udiag: Optional[np.ndarray] = None
    Vdiag: Optional[np.ndarray] = None
    dUdiag: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, M: int, P: int, n: int, d: int) -> "Guess":
        return cls(np.zeros((M + 1, P, d)), np.zeros((M + 1, P, n, d)))


def _split_grids(grids, ens: Optional[PathEnsemble] = None):
    if isinstance(grids, TimeGrid):
        return grids, ParamGrid.from_time_grid(grids)
    tgrid, pgrid = grids
    if ens is not None and (ens.grid.steps != tgrid.steps or ens.grid.horizon != tgrid.horizon):
        raise ConfigurationError("ensemble grid differs from the solver time grid")
    return tgrid, pgrid


def trapezoid_tail_weights(nodes: np.ndarray, start: int) -> np.ndarray:
    """Weights ``w_j`` with ``sum_j w_j g(s_j) ~ int_{s_start}^{s_J} g``."""
    h = np.diff(nodes[start:])
    w = np.zeros(nodes.size - start)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def reconstruct_diagonal_V(field, grids) -> np.ndarray:
    """``Vdiag_i = V^{s_J}_i - trapezoid int_{t_i}^T dV^r_i dr`` on aligned grids.

    ``field`` may be a :class:`FieldSolution` or any object with ``V`` and
    ``dV`` attributes, or a ``(V, dV)`` pair.
    """
    tgrid, pgrid = _split_grids(grids)
    pgrid.require_aligned(tgrid)
    V, dV = (field.V, field.dV) if hasattr(field, "V") else field
    if dV is None:
        raise ConfigurationError("derivative family dV is required to rebuild the V diagonal")
    J = pgrid.J
    s = pgrid.nodes
    out = np.empty(V.shape[1:])
    for i in range(tgrid.steps + 1):
        w = trapezoid_tail_weights(s, i)
        out[i] = V[J, i] - np.tensordot(w, dV[i:, i], axes=(0, 0))
    return out


def _diag_idx(M):
    idx = np.arange(M + 1)
    return idx, idx


def _bc(a, shape):
    return np.broadcast_to(np.asarray(a, dtype=float), shape)


def picard_step(spec: ProblemSpec, ens: PathEnsemble, grids, guess, basis: RegressionBasis = RegressionBasis(),
                ctx: Optional[StepContext] = None, stats: Optional[dict] = None) -> FieldSolution:
    """Apply the Picard map once to ``guess`` (a :class:`Guess` or tuple)."""
    tgrid, pgrid = _split_grids(grids, ens)
    pgrid.require_aligned(tgrid)
    if not spec.has_partials:
        raise ConfigurationError("the full solver needs ds_f, dy_f and dz_f")
    if not isinstance(guess, Guess):
        guess = Guess(*guess)
    ctx = ctx or StepContext(ens, spec, basis)
    M, P, n, d = tgrid.steps, ens.n_paths, spec.n, spec.d
    S = pgrid.J + 1
    nodes = tgrid.nodes
    X = ens.X
    s_col = pgrid.nodes[:, None]
    Yg, Zg = guess.Ydiag, guess.Zdiag
    if Yg.shape != (M + 1, P, d) or Zg.shape != (M + 1, P, n, d):
        raise ConfigurationError(f"guess shapes {Yg.shape}, {Zg.shape} do not match (M+1, P, ...)")
    stats = stats if stats is not None else {}
    for key in ("U", "dU", "Y"):
        stats.setdefault(key, new_stats())

    def sb(i):
        return None if ctx.sb is None else ctx.sb[i][None]

    # family
    term = _bc(spec.xi(s_col, X[M]), (S, P, d))

    def gen_u(i, u, v):
        t = float(nodes[i])
        return effective_generator(spec, s_col, t, X[i], u, v, Yg[i][None], Zg[i][None], sb(i))

    U, V = solve_family(ctx, term, gen_u, stats=stats["U"])

    # derivative family
    dterm = _bc(spec.ds_xi(s_col, X[M]), (S, P, d))

    def gen_du(i, du, dv):
        t = float(nodes[i])
        return effective_nabla(spec, s_col, t, X[i], du, dv, U[:, i], V[:, i], Yg[i][None], Zg[i][None], sb(i))

    dU, dV = solve_family(ctx, dterm, gen_du, stats=stats["dU"])

    ii, jj = _diag_idx(M)
    Udiag = U[ii, jj]
    dUdiag = dU[ii, jj]
    Vdiag = reconstruct_diagonal_V((V, dV), (tgrid, pgrid))

    # diagonal equation
    yterm = _bc(spec.xi(np.array(tgrid.horizon), X[M]), (P, d))[None]

    def gen_y(i, y, z):
        t = float(nodes[i])
        f = effective_generator(spec, np.array(t), t, X[i], y, z, Udiag[i][None], Vdiag[i][None], sb(i))
        return f - dUdiag[i][None]

    Yd, Zd = solve_family(ctx, yterm, gen_y, stats=stats["Y"])
    return FieldSolution(
        tgrid=tgrid, pgrid=pgrid, U=U, V=V, Ydiag=Yd[0], Zdiag=Zd[0], Udiag=Udiag,
        dU=dU, dV=dV, dUdiag=dUdiag, Vdiag_reconstructed=Vdiag, sig=ctx.sig, solver="full",
    )


def _picard_step_simplified(spec, ens, tgrid, pgrid, guess: Guess, ctx: StepContext, stats) -> FieldSolution:
    M, P, n, d = tgrid.steps, ens.n_paths, spec.n, spec.d
    S = pgrid.J + 1
    nodes, X = tgrid.nodes, ens.X
    s_col = pgrid.nodes[:, None]
    Yg = guess.Ydiag
    zero_v = np.zeros((1, P, n, d))
    stats.setdefault("U", new_stats())

    def gen_u(i, u, v):
        t = float(nodes[i])
        sb = None if ctx.sb is None else ctx.sb[i][None]
        return effective_generator(spec, s_col, t, X[i], u, v, Yg[i][None], zero_v, sb)

    U, V = solve_family(ctx, _bc(spec.xi(s_col, X[M]), (S, P, d)), gen_u, stats=stats["U"])
    ii, jj = _diag_idx(M)
    Udiag = U[ii, jj]
    return FieldSolution(tgrid=tgrid, pgrid=pgrid, U=U, V=V, Ydiag=Udiag, Zdiag=V[ii, jj], Udiag=Udiag,
                         sig=ctx.sig, solver="simplified")


def _distance(new: FieldSolution, old_y, old_z, sig) -> float:
    nodes = new.tgrid.nodes
    return float(np.sqrt(s2(new.Ydiag - old_y, nodes) + h2(new.Zdiag - old_z, nodes, sig)))


def _magnitude(field: FieldSolution, sig) -> float:
    nodes = field.tgrid.nodes
    return float(np.sqrt(s2(field.Ydiag, nodes) + h2(field.Zdiag, nodes, sig)))


def _identification(field: FieldSolution, sig) -> dict:
    nodes = field.tgrid.nodes
    out = {"y_diag_gap": float(np.sqrt(s2(field.Ydiag - field.Udiag, nodes)))}
    if field.Vdiag_reconstructed is not None:
        out["z_diag_gap"] = float(np.sqrt(h2(field.Zdiag - field.Vdiag_reconstructed, nodes, sig)))
    else:
        out["z_diag_gap"] = 0.0
    return out


def _iterate(step, spec, ens, tgrid, pgrid, opts: PicardOptions, ctx: StepContext, solver: str) -> FieldSolution:
    M, P, n, d = tgrid.steps, ens.n_paths, spec.n, spec.d
    guess = Guess.zeros(M, P, n, d)
    trace = []
    budget = opts.fixed_iterations or opts.max_iter
    field, threshold, converged = None, np.nan, False
    for k in range(1, budget + 1):
        stats: dict = {}
        field = None  # release the previous families before allocating new ones
        field = step(guess, stats)
        dist = _distance(field, guess.Ydiag, guess.Zdiag, ctx.sig)
        trace.append(dist)
        threshold = opts.tol * (1.0 + _magnitude(field, ctx.sig))
        converged = dist <= threshold
        guess = Guess(field.Ydiag, field.Zdiag, field.Udiag, field.Vdiag_reconstructed, field.dUdiag)
        if converged and opts.fixed_iterations is None:
            break
    ortho = {name: summarize_stats(st) for name, st in sorted(stats.items())}
    diag = _identification(field, ctx.sig)
    diag.update({"threshold": threshold, "iterations": len(trace)})
    field = dataclasses.replace(field, ortho_residuals=ortho, picard_trace=tuple(trace), converged=bool(converged),
                                tolerance=float(threshold), diagnostics=diag, solver=solver)
    if not converged and opts.raise_on_failure:
        raise NonConvergenceError(
            f"Picard loop did not converge in {len(trace)} iterations (last distance {trace[-1]:.3e}, "
            f"threshold {threshold:.3e})", trace=trace, field=field)
    return field


def solve_system(spec: ProblemSpec, ens: PathEnsemble, grids, basis: RegressionBasis = RegressionBasis(),
                 opts: PicardOptions = PicardOptions(), ctx: Optional[StepContext] = None) -> FieldSolution:
    tgrid, pgrid = _split_grids(grids, ens)
    pgrid.require_aligned(tgrid)
    ctx = ctx or StepContext(ens, spec, basis)

    def step(guess, stats):
        return picard_step(spec, ens, (tgrid, pgrid), guess, basis, ctx=ctx, stats=stats)

    return _iterate(step, spec, ens, tgrid, pgrid, opts, ctx, "full")


def solve_system_simplified(spec: ProblemSpec, ens: PathEnsemble, grids,
                            basis: RegressionBasis = RegressionBasis(), opts: PicardOptions = PicardOptions(),
                            ctx: Optional[StepContext] = None) -> FieldSolution:
    """Diagonal read directly from the family; no derivative family is solved.

    Valid only when the generator ignores its Z-diagonal argument.
    """
    if spec.z_diagonal_in_generator:
        raise ConfigurationError("simplified solver requires a generator without Z-diagonal dependence")
    tgrid, pgrid = _split_grids(grids, ens)
    pgrid.require_aligned(tgrid)
    ctx = ctx or StepContext(ens, spec, basis)

    def step(guess, stats):
        return _picard_step_simplified(spec, ens, tgrid, pgrid, guess, ctx, stats)

    return _iterate(step, spec, ens, tgrid, pgrid, opts, ctx, "simplified")


def solve_any(spec, ens, grids, basis=RegressionBasis(), opts=PicardOptions(), ctx=None) -> FieldSolution:
    """Full solver when partials are available, simplified one otherwise."""
    if spec.has_partials:
        return solve_system(spec, ens, grids, basis, opts, ctx)
    return solve_system_simplified(spec, ens, grids, basis, opts, ctx)


def extract_bsvie(field: FieldSolution) -> BsvieSolution:
    if not field.converged:
        raise StateError("cannot extract a BSVIE solution from a non-converged field")
    prov = {
        "solver": field.solver,
        "iterations": field.iterations,
        "distance": field.distance,
        "tolerance": field.tolerance,
        "y_identification_error": field.diagnostics.get("y_diag_gap", 0.0),
        "z_identification_error": field.diagnostics.get("z_diag_gap", 0.0),
    }
    return BsvieSolution(tgrid=field.tgrid, pgrid=field.pgrid, Y=field.U, Z=field.V, Ydiag=field.Ydiag,
                         Zdiag=field.Zdiag, provenance=prov)


def check_diagonal_dynamics(field: FieldSolution, spec: ProblemSpec, ens: PathEnsemble,
                            ctx: Optional[StepContext] = None) -> dict:
    """Discrete residual of the diagonal dynamics of the family.

    ``raw_rms`` includes the martingale increment; ``cond_rms`` replaces the
    next value by its regression on ``X_{t_i}`` (so ``E_i[V dX] = 0`` is used
    analytically) and is divided by ``dt`` to be a generator-scale quantity.
    """
    if field.dUdiag is None or field.Vdiag_reconstructed is None:
        raise ConfigurationError("diagonal dynamics check needs the derivative family")
    ctx = ctx or StepContext(ens, spec)
    tgrid = field.tgrid
    M, dt, nodes, X = tgrid.steps, tgrid.dt, tgrid.nodes, ens.X
    Ud, dUd, Vd, Yd, Zd = field.Udiag, field.dUdiag, field.Vdiag_reconstructed, field.Ydiag, field.Zdiag
    raw_sq = cond_sq = 0.0
    count = 0
    per_step = np.zeros(M)
    for i in range(M):
        t = float(nodes[i])
        sb = None if ctx.sb is None else ctx.sb[i]
        g = effective_generator(spec, np.array(t), t, X[i], Ud[i], Vd[i], Yd[i], Zd[i], sb)
        drift = dt * (g - dUd[i])
        mart = np.einsum("pa,pad->pd", ens.dX[i], Vd[i])
        raw = Ud[i + 1] - Ud[i] + drift - mart
        cond = (ctx.proj[i](Ud[i + 1]) - Ud[i] + drift) / dt
        raw_sq += float(np.sum(raw**2))
        cond_sq += float(np.sum(cond**2))
        per_step[i] = float(np.sqrt(np.mean(cond**2)))
        count += raw.size
    return {
        "op": "check_diagonal_dynamics",
        "raw_rms": float(np.sqrt(raw_sq / count)),
        "cond_rms": float(np.sqrt(cond_sq / count)),
        "cond_max_step": float(per_step.max()),
    }


def check_M_property(bsvie: BsvieSolution, ens: PathEnsemble) -> dict:
    """Residual of ``Y_t^t = E[Y_t^t] + int_0^t Z_r^t dX_r`` per time node."""
    bsvie.pgrid.require_aligned(bsvie.tgrid)
    M = bsvie.tgrid.steps
    Yd, Z, dX = bsvie.Ydiag, bsvie.Z, ens.dX
    per = np.zeros(M + 1)
    sq = 0.0
    for i in range(M + 1):
        mart = np.einsum("kpa,kpad->pd", dX[:i], Z[i, :i]) if i else 0.0
        r = Yd[i] - Yd[i].mean(axis=0) - mart
        per[i] = float(np.sqrt(np.mean(np.sum(r**2, axis=-1))))
        sq += float(np.mean(np.sum(r**2, axis=-1)))
    return {"op": "check_M_property", "rms": float(np.sqrt(sq / (M + 1))), "max_step": float(per.max()),
            "per_step": per.tolist()}


def check_constraint_D(field: FieldSolution, grids=None) -> dict:
    """``U^{s_J} - U^{s_j} - trapezoid int_{s_j}^T dU^r dr`` in the S^2 norm (V in H^2)."""
    tgrid, pgrid = (field.tgrid, field.pgrid) if grids is None else _split_grids(grids)
    if field.dU is None or field.dV is None:
        raise ConfigurationError("constraint check needs the derivative family")
    J, nodes, s = pgrid.J, tgrid.nodes, pgrid.nodes
    U, V, dU, dV = field.U, field.V, field.dU, field.dV
    res_u = np.zeros(J + 1)
    res_v = np.zeros(J + 1)
    tail_u = np.zeros(U.shape[1:])
    tail_v = np.zeros(V.shape[1:])
    for j in range(J - 1, -1, -1):
        h = s[j + 1] - s[j]
        tail_u += 0.5 * h * (dU[j] + dU[j + 1])
        tail_v += 0.5 * h * (dV[j] + dV[j + 1])
        res_u[j] = np.sqrt(s2(U[J] - U[j] - tail_u, nodes))
        res_v[j] = np.sqrt(h2(V[J] - V[j] - tail_v, nodes, field.sig))
    return {"op": "check_constraint_D", "U": float(res_u.max()), "V": float(res_v.max()),
            "per_slice_U": res_u.tolist(), "per_slice_V": res_v.tolist()}
