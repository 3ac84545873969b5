import json
from pathlib import Path

import numpy as np

from volterra_bsvie.core import ParamGrid, TimeGrid
from volterra_bsvie.expr import Expression
from volterra_bsvie.forward import simulate_paths
from volterra_bsvie.problems import ScalarProblem

FROZEN = json.loads((Path(__file__).parent / "frozen_values.json").read_text())


def scalar(f="0", xi="0", sigma="1", **kw):
    exprs = {k: Expression(v) for k, v in kw.items() if k in ("b", "ds_f", "dy_f", "dz_f", "ds_xi")}
    rest = {k: v for k, v in kw.items() if k not in exprs}
    return ScalarProblem(sigma=Expression(sigma), f=Expression(f), xi=Expression(xi), **exprs, **rest).to_spec()


def hjb(bar_f, xi, sigma="0.5", b="0", control="0"):
    from volterra_bsvie.problems import parse_control
    return ScalarProblem(sigma=Expression(sigma), xi=Expression(xi), bar_f=Expression(bar_f), b=Expression(b),
                         control=parse_control(control)).to_hjb()


def setup(spec, M=10, T=1.0, n_paths=200, seed=0):
    tg = TimeGrid(T, M)
    pg = ParamGrid.from_time_grid(tg)
    ens = simulate_paths(spec, tg, n_paths, seed)
    return ens, (tg, pg)


def rms(a):
    return float(np.sqrt(np.mean(np.square(a))))


def shrinks(coarse, fine, ratio, floor=1e-12):
    """Refinement check that also accepts residuals already at round-off level."""
    return fine <= max(coarse / ratio, floor)
