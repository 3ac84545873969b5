"""Monte Carlo estimators of the solution norms, a priori ratio and stability table.

Every estimator returns a *squared* norm.  Conventions, for a diagonal-type
process ``Y [M+1, P, d]`` and integrand ``Z [M+1, P, n, d]``:

* ``s2``:  mean over paths of ``max_i exp(c t_i) |Y_i|^2``
* ``h2``:  mean over paths of ``sum_{i<M} exp(c t_i) |sigma_i^T Z_i|^2 dt``
* ``l2``:  mean over paths of ``sum_{i<M} exp(c t_i) |Y_i|^2 dt``
* ``l12``: mean over paths of ``(sum_{i<M} |Y_i| dt)^2``

Two-parameter versions take the maximum over the parameter axis.
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Sequence

import numpy as np

from .core import FieldSolution, NormReport, ProblemSpec, TimeGrid

__all__ = [
    "s2",
    "h2",
    "l2",
    "l12",
    "compute_norms",
    "field_norms",
    "apriori_report",
    "stability_experiment",
]


def _weights(nodes, c):
    return np.exp(c * np.asarray(nodes, dtype=float))


def s2(Y: np.ndarray, nodes, c: float = 0.0) -> float:
    sq = np.sum(np.asarray(Y, dtype=float) ** 2, axis=tuple(range(2, np.ndim(Y))))
    w = _weights(nodes, c)[:, None]
    return float(np.mean(np.max(w * sq, axis=0)))


def _sig_t_z(Z, sig):
    if sig is None:
        return Z
    return np.einsum("ipnm,ipnd->ipmd", sig[: Z.shape[0]], Z)


def h2(Z: np.ndarray, nodes, sig: Optional[np.ndarray] = None, c: float = 0.0) -> float:
    """``sig`` is ``[M+1, P, n, m]``; ``None`` means the identity."""
    Z = np.asarray(Z, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    dt = np.diff(nodes)
    q = _sig_t_z(Z[:-1], None if sig is None else sig[:-1])
    sq = np.sum(q**2, axis=tuple(range(2, q.ndim)))
    w = (_weights(nodes[:-1], c) * dt)[:, None]
    return float(np.mean(np.sum(w * sq, axis=0)))


def l2(Y: np.ndarray, nodes, c: float = 0.0) -> float:
    Y = np.asarray(Y, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    sq = np.sum(Y[:-1] ** 2, axis=tuple(range(2, Y.ndim)))
    w = (_weights(nodes[:-1], c) * np.diff(nodes))[:, None]
    return float(np.mean(np.sum(w * sq, axis=0)))


def l12(Y: np.ndarray, nodes) -> float:
    Y = np.asarray(Y, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    mag = np.sqrt(np.sum(Y[:-1] ** 2, axis=tuple(range(2, Y.ndim))))
    integral = np.sum(mag * np.diff(nodes)[:, None], axis=0)
    return float(np.mean(integral**2))


def compute_norms(
    tgrid: TimeGrid,
    *,
    ydiag=None,
    zdiag=None,
    U=None,
    V=None,
    v_diagonal=None,
    sig=None,
    c: float = 0.0,
) -> NormReport:
    """Build a :class:`NormReport` from whichever arrays are supplied.

    ``v_diagonal`` is the Z-diagonal entering the H-bar term; when omitted and
    ``V`` lives on aligned grids it is read from ``V[i, i]``.
    """
    nodes = tgrid.nodes
    M1 = nodes.size
    for name, arr, axis in (("ydiag", ydiag, 0), ("zdiag", zdiag, 0), ("U", U, 1), ("V", V, 1)):
        if arr is not None and np.shape(arr)[axis] != M1:
            raise ValueError(f"{name} has {np.shape(arr)[axis]} time nodes, grid has {M1}")
    out = {}
    if ydiag is not None:
        out["s2_sup"] = s2(ydiag, nodes, c)
        out["l2"] = l2(ydiag, nodes, c)
    if zdiag is not None:
        out["h2"] = h2(zdiag, nodes, sig, c)
    if U is not None:
        out["s22_sup"] = max(s2(U[j], nodes, c) for j in range(U.shape[0]))
    if V is not None:
        out["h22_sup"] = max(h2(V[j], nodes, sig, c) for j in range(V.shape[0]))
        if v_diagonal is None and V.shape[0] == M1:
            idx = np.arange(M1)
            v_diagonal = V[idx, idx]
    if v_diagonal is not None:
        out["diag_h2"] = h2(v_diagonal, nodes, sig, c)
    return NormReport(exp_weight=float(c), **out)


def field_norms(field: FieldSolution, c: float = 0.0) -> NormReport:
    return compute_norms(field.tgrid, ydiag=field.Ydiag, zdiag=field.Zdiag, U=field.U, V=field.V,
                         sig=field.sig, c=c)


def _solution_components(field: FieldSolution) -> dict:
    nodes, sig = field.tgrid.nodes, field.sig
    rep = field_norms(field)
    comps = {
        "Y_s2": rep.s2_sup,
        "Z_h2": rep.h2,
        "U_s22": rep.s22_sup,
        "V_hbar22": rep.hbar22,
    }
    if field.dU is not None:
        comps["dU_s22"] = max(s2(field.dU[j], nodes) for j in range(field.dU.shape[0]))
        comps["dV_h22"] = max(h2(field.dV[j], nodes, sig) for j in range(field.dV.shape[0]))
    return comps


def apriori_report(field: FieldSolution, spec: ProblemSpec, grids, ens) -> dict:
    """Data norm ``I0^2``, solution norm and their ratio (no threshold applied)."""
    tgrid, pgrid = grids
    nodes = tgrid.nodes
    M, P, d, n = tgrid.steps, ens.n_paths, spec.d, spec.n
    X = ens.X
    T = tgrid.horizon
    s_col = pgrid.nodes[:, None]

    def bc(a, shape):
        return np.broadcast_to(np.asarray(a, dtype=float), shape)

    xi_T = bc(spec.xi(np.array(T), X[M]), (P, d))
    eta = bc(spec.xi(s_col, X[M]), (s_col.shape[0], P, d))
    ds_eta = bc(spec.ds_xi(s_col, X[M]), (s_col.shape[0], P, d))
    zy = np.zeros((P, d))
    zz = np.zeros((P, n, d))
    h_vals = np.empty((M + 1, P, d))
    g_vals = np.empty((s_col.shape[0], M + 1, P, d))
    dg_vals = np.zeros_like(g_vals)
    for i, t in enumerate(nodes):
        t = float(t)
        h_vals[i] = bc(spec.f(np.array(t), t, X[i], zy, zz, zy, zz), (P, d))
        g_vals[:, i] = bc(spec.f(s_col, t, X[i], zy[None], zz[None], zy[None], zz[None]), g_vals[:, i].shape)
        if spec.ds_f is not None:
            dg_vals[:, i] = bc(spec.ds_f(s_col, t, X[i], zy[None], zz[None], zy[None], zz[None]),
                               dg_vals[:, i].shape)
    data = {
        "xi": float(np.mean(np.sum(xi_T**2, axis=-1))),
        "eta": float(np.max(np.mean(np.sum(eta**2, axis=-1), axis=1))),
        "ds_eta": float(np.max(np.mean(np.sum(ds_eta**2, axis=-1), axis=1))),
        "h0": l12(h_vals, nodes),
        "g0": max(l12(g_vals[j], nodes) for j in range(g_vals.shape[0])),
        "nabla_g0": max(l12(dg_vals[j], nodes) for j in range(dg_vals.shape[0])),
    }
    comps = _solution_components(field)
    i0 = float(sum(data.values()))
    sol = float(sum(comps.values()))
    if i0 > 0:
        ratio, status = sol / i0, "ok"
    else:
        ratio, status = None, "0/0" if sol == 0 else "anomaly"
    return {
        "op": "apriori_report",
        "i0_sq": i0,
        "sol_sq": sol,
        "ratio": ratio,
        "status": status,
        "anomaly": status == "anomaly",
        "data_components": data,
        "solution_components": comps,
    }


def _difference_norm(a: FieldSolution, b: FieldSolution) -> float:
    nodes, sig = a.tgrid.nodes, a.sig
    tot = s2(a.Ydiag - b.Ydiag, nodes) + h2(a.Zdiag - b.Zdiag, nodes, sig)
    dU = a.U - b.U
    dV = a.V - b.V
    tot += max(s2(dU[j], nodes) for j in range(dU.shape[0]))
    tot += max(h2(dV[j], nodes, sig) for j in range(dV.shape[0]))
    return float(np.sqrt(tot))


def stability_experiment(
    spec: ProblemSpec,
    perturbation: Sequence[Callable],
    eps_list: Sequence[float],
    ens,
    grids,
    basis=None,
    opts=None,
) -> dict:
    """Solve for ``xi`` and ``xi + eps * eta`` and tabulate solution differences.

    ``perturbation`` is the pair ``(eta, ds_eta)``. All runs share the
    ensemble (common random numbers) and the Picard iteration count of the
    base run, which keeps the whole pipeline exactly linear for linear data.
    """
    from .bsde import RegressionBasis, StepContext
    from .system import PicardOptions, solve_any

    basis = basis or RegressionBasis()
    opts = opts or PicardOptions()
    eta, ds_eta = perturbation
    ctx = StepContext(ens, spec, basis)
    base = solve_any(spec, ens, grids, basis, opts, ctx=ctx)
    k = base.iterations
    fixed = dataclasses.replace(opts, max_iter=k, fixed_iterations=k, raise_on_failure=False)
    rows, status = [], []
    for eps in eps_list:
        eps = float(eps)
        pert = dataclasses.replace(
            spec,
            xi=lambda s, x, e=eps: np.asarray(spec.xi(s, x)) + e * np.asarray(eta(s, x)),
            ds_xi=lambda s, x, e=eps: np.asarray(spec.ds_xi(s, x)) + e * np.asarray(ds_eta(s, x)),
        )
        try:
            sol = solve_any(pert, ens, grids, basis, fixed, ctx=ctx)
        except Exception as exc:  # recorded, table continues
            rows.append([eps, None])
            status.append(f"failed: {type(exc).__name__}")
            continue
        rows.append([eps, _difference_norm(sol, base)])
        status.append("ok" if sol.converged else "non_convergent")
    ratios = []
    for (e0, d0), (e1, d1) in zip(rows, rows[1:]):
        ratios.append(d0 / d1 if d0 is not None and d1 not in (None, 0.0) else None)
    return {"op": "stability_experiment", "table": rows, "status": status, "ratios": ratios,
            "iterations": k}
