import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_bsvie.core import TimeGrid
from volterra_bsvie.metrics import apriori_report, compute_norms, field_norms, h2, l12, l2, s2, stability_experiment
from volterra_bsvie.system import PicardOptions, solve_system

from helpers import FROZEN, scalar, setup

NODES = TimeGrid(1.0, 10).nodes


def test_zero_field_norms():
    rep = compute_norms(TimeGrid(1.0, 10), ydiag=np.zeros((11, 4, 1)), zdiag=np.zeros((11, 4, 1, 1)),
                        U=np.zeros((11, 11, 4, 1)), V=np.zeros((11, 11, 4, 1, 1)))
    assert all(v == 0.0 for v in rep.as_dict().values())


@pytest.mark.parametrize("c", [0.5, -2.0, 3.0])
def test_constant_field(c):
    Y = np.full((11, 5, 1), c)
    assert s2(Y, NODES) == pytest.approx(c * c, rel=1e-14)
    assert l2(Y, NODES) == pytest.approx(c * c * 1.0, rel=1e-12)
    assert l12(Y, NODES) == pytest.approx(c * c, rel=1e-12)


def test_unit_integrand_h2_is_one():
    assert h2(np.ones((11, 3, 1, 1)), NODES, np.ones((11, 3, 1, 1))) == pytest.approx(1.0, rel=1e-14)
    assert h2(np.ones((11, 3, 1, 1)), NODES) == pytest.approx(1.0, rel=1e-14)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError, match="time nodes"):
        compute_norms(TimeGrid(1.0, 10), ydiag=np.zeros((10, 2, 1)))


def test_hbar_adds_diagonal_term():
    V = np.random.default_rng(0).normal(size=(11, 11, 6, 1, 1))
    rep = compute_norms(TimeGrid(1.0, 10), V=V)
    idx = np.arange(11)
    assert rep.diag_h2 == pytest.approx(h2(V[idx, idx], NODES))
    assert rep.hbar22 == rep.h22_sup + rep.diag_h2


arrays = st.integers(0, 2**32).map(lambda s: np.random.default_rng(s).normal(size=(11, 7, 1)))


@settings(max_examples=40, deadline=None)
@given(arrays, st.floats(0.1, 10))
def test_scaling_is_quadratic(Y, lam):
    Z = Y[..., None]
    for fn, arr in ((s2, Y), (l2, Y), (l12, Y), (h2, Z)):
        assert fn(lam * arr, NODES) == pytest.approx(lam**2 * fn(arr, NODES), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(arrays, st.integers(0, 2**32))
def test_monotone_in_pointwise_magnitude(Y, seed):
    shrink = np.random.default_rng(seed).uniform(0, 1, size=Y.shape)
    A, B = Y * shrink, Y
    ra = compute_norms(TimeGrid(1.0, 10), ydiag=A, zdiag=A[..., None]).as_dict()
    rb = compute_norms(TimeGrid(1.0, 10), ydiag=B, zdiag=B[..., None]).as_dict()
    assert all(ra[k] <= rb[k] + 1e-15 for k in ra)


@settings(max_examples=40, deadline=None)
@given(arrays, st.floats(0.01, 3))
def test_weighted_norms_are_equivalent(Y, c):
    Z = Y[..., None]
    for fn, arr in ((s2, Y), (l2, Y), (h2, Z)):
        plain = fn(arr, NODES)
        weighted = fn(arr, NODES, c=c)
        assert plain <= weighted * (1 + 1e-12)
        assert weighted <= math.exp(c) * plain * (1 + 1e-12)


def test_apriori_zero_data_sentinel():
    spec = scalar()
    ens, grids = setup(spec, M=5, n_paths=20)
    rep = apriori_report(solve_system(spec, ens, grids), spec, grids, ens)
    assert rep["i0_sq"] == 0.0 and rep["sol_sq"] == 0.0
    assert rep["ratio"] is None and rep["status"] == "0/0" and not rep["anomaly"]


def test_apriori_constant_terminal():
    spec = scalar(f="0", xi="1", sigma="0")
    ens, grids = setup(spec, M=5, n_paths=1)
    rep = apriori_report(solve_system(spec, ens, grids), spec, grids, ens)
    assert rep["data_components"]["xi"] == 1.0 and rep["data_components"]["eta"] == 1.0
    assert rep["i0_sq"] == pytest.approx(2.0)
    assert rep["solution_components"]["Y_s2"] == pytest.approx(1.0)
    assert math.isfinite(rep["ratio"])


def test_apriori_exponential_solution_norm():
    spec = scalar(f="u", xi="1", sigma="0")
    ens, grids = setup(spec, M=1000, n_paths=1)
    field = solve_system(spec, ens, grids, opts=PicardOptions(tol=1e-12))
    rep = apriori_report(field, spec, grids, ens)
    assert rep["solution_components"]["Y_s2"] == pytest.approx(FROZEN["e_squared"], abs=1e-2)
    assert field_norms(field).s2_sup == rep["solution_components"]["Y_s2"]


def _eta(s, x):
    return np.ones(np.broadcast_shapes(np.shape(s), np.shape(x)[:-1]) + (1,))


def _zero(s, x):
    return 0.0 * _eta(s, x)


def test_stability_zero_perturbation():
    spec = scalar(f="0.5 * sin(y)", xi="x")
    ens, grids = setup(spec, M=8, n_paths=300)
    out = stability_experiment(spec, (_eta, _zero), [0.0], ens, grids)
    assert out["table"] == [[0.0, 0.0]] and out["status"] == ["ok"]


def test_stability_linear_problem_scales_exactly():
    spec = scalar(f="0.5 * y + u", xi="s * x")
    ens, grids = setup(spec, M=10, n_paths=500)
    out = stability_experiment(spec, (_eta, _zero), [0.1, 0.01], ens, grids)
    assert out["ratios"][0] == pytest.approx(10.0, abs=1e-6)


def test_stability_nonlinear_is_first_order():
    spec = scalar(f="sin(y)", xi="x")
    ens, grids = setup(spec, M=10, n_paths=500)
    out = stability_experiment(spec, (_eta, _zero), [1e-1, 1e-2, 1e-3], ens, grids)
    assert all(5 <= r <= 20 for r in out["ratios"])
