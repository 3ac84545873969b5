"""Pipeline orchestration and report files for configured runs."""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .bsde import RegressionBasis, StepContext
from .config import RunConfig
from .core import ParamGrid, TimeGrid
from .errors import BsvieError, ConfigurationError, DomainError, NonConvergenceError
from .forward import simulate_paths
from .metrics import apriori_report, field_norms
from .pde import (check_equivalence, default_xgrid, feynman_kac_check, solve_hjb_bkm, solve_hjb_wy,
                  solve_representation_pde, uniform_xgrid)
from .problems import PRESETS
from .system import (PicardOptions, check_constraint_D, check_diagonal_dynamics, check_M_property, extract_bsvie,
                     solve_system, solve_system_simplified)

__all__ = ["RunResult", "run", "convergence_study", "parse_ladder", "EXIT_OK", "EXIT_CONFIG", "EXIT_NONCONVERGED"]

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2


@dataclass
class RunResult:
    status: int
    report: dict
    directory: Optional[str] = None
    error: Optional[str] = None


def _clean(obj):
    """JSON-ready copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _grid_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


def _grids(cfg: RunConfig):
    tgrid = TimeGrid(cfg.T, cfg.M)
    return tgrid, ParamGrid.from_time_grid(tgrid)


def _xgrid(cfg: RunConfig, sigma_max):
    if cfg.x_lo is not None:
        return uniform_xgrid(cfg.x_lo, cfg.x_hi, cfg.dx)
    if sigma_max is None:
        raise ConfigurationError("grids.x_lo and grids.x_hi are required when sigma is not constant")
    return default_xgrid(cfg.problem.x0, max(sigma_max, 1e-12), cfg.T, cfg.dx)


def _interp_x0(xgrid, values, x0):
    return np.array([np.interp(x0, xgrid, row) for row in values])


def _run_bsvie(cfg: RunConfig, report: dict, tables: dict) -> int:
    prob = cfg.problem
    spec = prob.to_spec()
    tgrid, pgrid = _grids(cfg)
    n_paths = 1 if prob.deterministic else cfg.n_paths
    ens = simulate_paths(spec, tgrid, n_paths, cfg.seed)
    basis = RegressionBasis(cfg.degree)
    ctx = StepContext(ens, spec, basis)
    opts = PicardOptions(tol=cfg.tol, max_iter=cfg.max_iter)
    simplified = prob.solver == "simplified"
    solver = solve_system_simplified if simplified else solve_system
    report["provenance"].update({"n_paths_effective": n_paths, "grid_hash": _grid_hash(tgrid.nodes, pgrid.nodes)})
    solve = {"op": solver.__name__}
    report["solve"] = solve
    try:
        field = solver(spec, ens, (tgrid, pgrid), basis, opts, ctx=ctx)
    except NonConvergenceError as exc:
        solve.update({"converged": False, "picard_trace": list(exc.trace), "iterations": len(exc.trace),
                      "message": str(exc)})
        tables["picard_trace.csv"] = (["iteration", "distance"], [[k + 1, d] for k, d in enumerate(exc.trace)])
        return EXIT_NONCONVERGED
    bsvie = extract_bsvie(field)
    ymean = field.Ydiag[..., 0].mean(axis=1)
    zmean = field.Zdiag[..., 0, 0].mean(axis=1)
    ref = PRESETS.get(prob.preset, {}).get("y0")
    y0 = float(ymean[0])
    solve.update({
        "converged": True,
        "iterations": field.iterations,
        "picard_trace": list(field.picard_trace),
        "distance": field.distance,
        "threshold": field.tolerance,
        "y0": y0,
        "y0_reference": None if ref is None else float(ref(cfg.T)),
        "y0_error": None if ref is None else abs(y0 - float(ref(cfg.T))),
        "y_identification_error": bsvie.provenance["y_identification_error"],
        "z_identification_error": bsvie.provenance["z_identification_error"],
        "ortho_residuals": field.ortho_residuals,
    })
    report["norms"] = {"op": "field_norms", **field_norms(field).as_dict()}
    report["apriori"] = apriori_report(field, spec, (tgrid, pgrid), ens)
    report["m_property"] = {k: v for k, v in check_M_property(bsvie, ens).items() if k != "per_step"}
    if simplified:
        skipped = {"status": "skipped", "reason": "simplified solver has no derivative family"}
        report["diagonal_dynamics"] = {"op": "check_diagonal_dynamics", **skipped}
        report["constraint_D"] = {"op": "check_constraint_D", **skipped}
    else:
        report["diagonal_dynamics"] = check_diagonal_dynamics(field, spec, ens, ctx)
        cd = check_constraint_D(field)
        report["constraint_D"] = {"op": cd["op"], "U": cd["U"], "V": cd["V"]}
    nodes = tgrid.nodes
    tables["diagonal.csv"] = (["t", "Ydiag_mean", "Zdiag_mean", "Ydiag_std"],
                              [[nodes[i], ymean[i], zmean[i], float(field.Ydiag[i, :, 0].std())]
                               for i in range(nodes.size)])
    y0s = field.U[:, 0, :, 0].mean(axis=1)
    tables["family_t0.csv"] = (["s", "Y0_mean"], [[pgrid.nodes[j], y0s[j]] for j in range(pgrid.nodes.size)])
    tables["picard_trace.csv"] = (["iteration", "distance"],
                                  [[k + 1, d] for k, d in enumerate(field.picard_trace)])
    if cfg.pde_enable:
        x = _xgrid(cfg, prob.sigma_max)
        pde = solve_representation_pde(spec, (tgrid, pgrid), x, cfg.substeps)
        try:
            fk = feynman_kac_check(pde, bsvie, ens, cfg.max_exit)
        except DomainError as exc:
            fk = {"op": "feynman_kac_check", "status": "domain_error", "message": str(exc)}
        fk["substeps"] = pde.substeps
        report["feynman_kac"] = fk
    return EXIT_OK


def _run_hjb(cfg: RunConfig, report: dict, tables: dict) -> int:
    prob = cfg.problem
    hjb = prob.to_hjb()
    tgrid, pgrid = _grids(cfg)
    x = _xgrid(cfg, prob.sigma_max)
    report["provenance"]["grid_hash"] = _grid_hash(tgrid.nodes, pgrid.nodes, x)
    wy = solve_hjb_wy(hjb, (tgrid, pgrid), x, cfg.substeps)
    bkm = solve_hjb_bkm(hjb, (tgrid, pgrid), x, cfg.substeps)
    eq = check_equivalence(wy, bkm, hjb)
    v_wy = _interp_x0(x, wy.diagonal, prob.x0)
    v_bkm = _interp_x0(x, bkm.Vfun, prob.x0)
    report["hjb"] = {"op": "solve_hjb_wy+solve_hjb_bkm", "substeps": wy.substeps, "x_points": int(x.size),
                     "value_t0_wy": float(v_wy[0]), "value_t0_bkm": float(v_bkm[0])}
    report["equivalence"] = eq
    nodes = tgrid.nodes
    tables["value.csv"] = (["t", "V_wy_diag_x0", "V_bkm_x0"], [[nodes[i], v_wy[i], v_bkm[i]] for i in range(nodes.size)])
    return EXIT_OK


def run(cfg: RunConfig, directory: Optional[str] = None, write: bool = True) -> RunResult:
    """Execute the configured pipeline and write the report files.

    Returns exit status 0 on success, 2 when the Picard loop does not converge
    and 1 on a configuration error raised during execution.
    """
    report = {
        "config": cfg.as_dict(),
        "provenance": {"seed": cfg.seed, "problem": cfg.name, "kind": cfg.problem.kind},
    }
    tables: dict = {}
    error = None
    try:
        if cfg.problem.kind == "hjb":
            status = _run_hjb(cfg, report, tables)
        else:
            status = _run_bsvie(cfg, report, tables)
    except ConfigurationError as exc:
        status, error = EXIT_CONFIG, str(exc)
        report["error"] = {"type": type(exc).__name__, "message": error}
    report["status"] = {0: "ok", 1: "config_error", 2: "non_convergent"}[status]
    report = _clean(report)
    out = None
    if write:
        out = directory or cfg.output_path()
        os.makedirs(out, exist_ok=True)
        if "json" in cfg.formats:
            with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
                fh.write("\n")
        if "csv" in cfg.formats:
            for name, (header, rows) in sorted(tables.items()):
                _write_csv(os.path.join(out, name), header, rows)
        meta = {
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "backend": _kernels.BACKEND,
            "numpy": np.__version__,
        }
        with open(os.path.join(out, "meta.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(summary_text(report))
    return RunResult(status=status, report=report, directory=out, error=error)


def summary_text(report: dict) -> str:
    lines = [f"problem       {report['provenance']['problem']} ({report['provenance']['kind']})",
             f"status        {report['status']}"]
    solve = report.get("solve", {})
    for key in ("iterations", "y0", "y0_reference", "y0_error"):
        if solve.get(key) is not None:
            lines.append(f"{key:<14}{_fmt(solve[key])}")
    for sec, key in (("diagonal_dynamics", "cond_rms"), ("m_property", "rms"), ("constraint_D", "U"),
                     ("feynman_kac", "y_rms"), ("equivalence", "v_gap_sup"), ("apriori", "ratio")):
        val = report.get(sec, {}).get(key)
        if val is not None:
            lines.append(f"{sec}.{key} {_fmt(val)}")
    if "error" in report:
        lines.append(f"error         {report['error']['message']}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ studies

_LADDER_KEYS = {"M": int, "n_paths": int, "dx": float}


def parse_ladder(text: str) -> list:
    """``"M=50,100,200"`` (several keys separated by ``;`` zip together) -> list of overrides."""
    columns = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        key, _, vals = part.partition("=")
        key = key.strip()
        if key not in _LADDER_KEYS:
            raise ConfigurationError(f"ladder key must be one of {', '.join(_LADDER_KEYS)}, got {key!r}")
        try:
            columns[key] = [_LADDER_KEYS[key](v) for v in vals.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError(f"cannot parse ladder values {vals!r}") from None
    if not columns:
        raise ConfigurationError("empty refinement ladder")
    lengths = {len(v) for v in columns.values()}
    if len(lengths) != 1:
        raise ConfigurationError("all ladder keys need the same number of values")
    n = lengths.pop()
    return [{k: v[r] for k, v in columns.items()} for r in range(n)]


def derived_seed(seed: int, rung: int) -> int:
    h = hashlib.sha256(f"{seed}:{rung}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def _fit_order(dts, errs):
    pts = [(math.log(d), math.log(e)) for d, e in zip(dts, errs) if e is not None and e > 0 and d > 0]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def convergence_study(cfg: RunConfig, ladder: list, directory: Optional[str] = None, write: bool = True) -> dict:
    """Rerun the pipeline on each rung; failures are recorded and the study continues."""
    rows = []
    for r, over in enumerate(ladder):
        kw = dict(over)
        if "M" in kw:
            kw["J"] = kw["M"]
        kw["seed"] = derived_seed(cfg.seed, r)
        row = {"rung": r, "M": kw.get("M", cfg.M), "n_paths": kw.get("n_paths", cfg.n_paths),
               "seed": kw["seed"], "status": "ok", "error": None, "residual": None, "iterations": None}
        try:
            rc = dataclasses.replace(cfg, **kw)
            res = run(rc, write=False)
        except BsvieError as exc:
            row["status"] = "config_error" if isinstance(exc, ConfigurationError) else type(exc).__name__
            rows.append(row)
            continue
        rep = res.report
        row["status"] = rep["status"]
        if res.status == EXIT_OK:
            if rc.problem.kind == "hjb":
                row["error"] = rep["equivalence"]["v_gap_sup"]
                row["residual"] = rep["equivalence"]["bkm_residual_sup"]
            else:
                row["error"] = rep["solve"].get("y0_error")
                row["residual"] = rep.get("diagonal_dynamics", {}).get("cond_rms")
                row["iterations"] = rep["solve"]["iterations"]
        rows.append(row)
    dts = [cfg.T / row["M"] for row in rows]
    ok = [row["status"] == "ok" for row in rows]
    order = _fit_order([d for d, k in zip(dts, ok) if k], [row["error"] for row, k in zip(rows, ok) if k])
    res_order = _fit_order([d for d, k in zip(dts, ok) if k], [row["residual"] for row, k in zip(rows, ok) if k])
    study = _clean({"op": "convergence_study", "rows": rows, "order_error": order, "order_residual": res_order})
    if write:
        out = directory or os.path.join(cfg.output_path(), "study")
        os.makedirs(out, exist_ok=True)
        cols = ["rung", "M", "n_paths", "seed", "status", "error", "residual", "iterations"]
        _write_csv(os.path.join(out, "study.csv"), cols + ["fitted_order"],
                   [[row[c] for c in cols] + [order] for row in study["rows"]])
        with open(os.path.join(out, "study.json"), "w", encoding="utf-8") as fh:
            json.dump(study, fh, indent=2, sort_keys=True)
            fh.write("\n")
        study["directory"] = out
    return study
