import numpy as np
import pytest

from volterra_bsvie.core import ParamGrid, TimeGrid
from volterra_bsvie.errors import ConfigurationError, DomainError, NumericError
from volterra_bsvie.pde import (check_equivalence, default_xgrid, feynman_kac_check, hamiltonian_argmax,
                                plan_substeps, solve_hjb_bkm, solve_hjb_wy, solve_representation_pde,
                                uniform_xgrid)
from volterra_bsvie.system import extract_bsvie, solve_system

from helpers import FROZEN, hjb, rms, scalar, setup, shrinks

X = uniform_xgrid(-2.0, 2.0, 0.1)


def _grids(M=20, T=1.0):
    tg = TimeGrid(T, M)
    return tg, ParamGrid.from_time_grid(tg)


def test_xgrid_helpers():
    g = default_xgrid(0.0, 1.0, 1.0, 0.05)
    assert g[0] == pytest.approx(-6.0) and g[-1] == pytest.approx(6.0)
    with pytest.raises(ConfigurationError):
        uniform_xgrid(0.0, 1.0, 0.3)
    with pytest.raises(ConfigurationError):
        uniform_xgrid(1.0, 0.0, 0.1)


def test_substep_planning():
    sigma = scalar().sigma
    tg = TimeGrid(1.0, 20)
    assert plan_substeps(sigma, tg, X) == 13  # 0.05 / (0.4 * 0.01) = 12.5
    assert plan_substeps(sigma, tg, X, 20) == 20
    with pytest.raises(ConfigurationError, match="maximal admissible 0.004"):
        plan_substeps(sigma, tg, X, 5)
    assert plan_substeps(scalar(sigma="0").sigma, tg, X) == 1


def test_representation_linear_terminal_is_exact():
    sol = solve_representation_pde(scalar(f="0", xi="x", sigma="0.7"), _grids(), X)
    np.testing.assert_allclose(sol.v, np.broadcast_to(X, sol.v.shape), atol=1e-10)
    np.testing.assert_allclose(sol.vx, 1.0, atol=1e-10)


def test_representation_constant_generator():
    tg, pg = _grids()
    sol = solve_representation_pde(scalar(f="1", xi="0"), (tg, pg), X)
    np.testing.assert_allclose(sol.v, np.broadcast_to((1 - tg.nodes)[None, :, None], sol.v.shape), atol=1e-10)


def test_representation_linear_decay_within_step_size():
    # substeps are sized by the spatial bound, so the time error sits well below dt
    for M in (20, 40):
        tg, pg = _grids(M)
        sol = solve_representation_pde(scalar(f="-y", xi="1"), (tg, pg), X)
        exact = np.exp(-(1 - tg.nodes))[None, :, None]
        assert np.max(np.abs(sol.v - exact)) < 1.0 / M


def test_representation_rejects_unaligned_and_vector_problems():
    tg = TimeGrid(1.0, 4)
    with pytest.raises(ConfigurationError):
        solve_representation_pde(scalar(), (tg, ParamGrid.uniform(1.0, 2)), X)


@pytest.mark.parametrize("v, expected", [(2.0, (1.0, 2.0)), (0.0, (-1.0, 0.0))])
def test_argmax_sign_rule_and_tie_break(v, expected):
    h = hjb("0", "0", sigma="1", b="a", control="-1, 1")
    assert hamiltonian_argmax(h, 0.0, 0.0, 0.0, v) == expected


def test_argmax_quadratic_matches_brute_force():
    h = hjb("-(a - 0.4)^2", "0", control="0, 0.5, 1")
    a, H = hamiltonian_argmax(h, 0.0, 0.0, 0.0, 0.0)
    assert [a, H] == pytest.approx(FROZEN["argmax_quadratic"], abs=1e-15)


def test_argmax_reports_bad_control_point():
    h = hjb("1 / a", "0", control="-1, 0, 1")
    with pytest.raises(NumericError, match="a=0"):
        hamiltonian_argmax(h, 0.0, 0.0, 0.0, 0.0)


def test_wy_control_free_reduces_to_representation():
    grids = _grids()
    h = hjb("s * t + sin(x)", "s * x", sigma="0.5")
    rep = solve_representation_pde(scalar(f="s * t + sin(x)", xi="s * x", sigma="0.5"), grids, X)
    wy = solve_hjb_wy(h, grids, X)
    np.testing.assert_array_equal(wy.v, rep.v)


def test_wy_constant_maximizer():
    tg, pg = _grids()
    wy = solve_hjb_wy(hjb("a", "s + x", control="0, 1"), (tg, pg), X)
    exact = pg.nodes[:, None, None] + X[None, None, :] + (1 - tg.nodes)[None, :, None]
    np.testing.assert_allclose(wy.v, exact, atol=1e-10)


def test_wy_tracking_against_slice_oracle():
    tg, pg = _grids(100)
    x = uniform_xgrid(-0.5, 0.5, 0.02)
    wy = solve_hjb_wy(hjb("-(a - s)^2", "0", sigma="0.05", control="0:1:21"), (tg, pg), x)
    k = int(np.argmin(np.abs(x)))
    for s_key, ref in FROZEN["wy_tracking_t0"].items():
        j = int(round(float(s_key) * 100))
        assert abs(wy.v[j, 0, k] - ref) < 0.02


def test_bkm_s_independent_collapses():
    grids = _grids()
    h = hjb("-0.5 * a^2 - 0.1 * x^2", "cos(x)", b="a", control="-1:1:5")
    bkm = solve_hjb_bkm(h, grids, X)
    for j in range(bkm.Jfun.shape[0]):
        np.testing.assert_allclose(bkm.Jfun[j], bkm.Vfun, atol=1e-12)


def test_bkm_control_free_linear_example():
    tg, pg = _grids()
    bkm = solve_hjb_bkm(hjb("0", "s"), (tg, pg), X)
    np.testing.assert_allclose(bkm.Jfun, np.broadcast_to(pg.nodes[:, None, None], bkm.Jfun.shape), atol=1e-12)
    np.testing.assert_allclose(bkm.Vfun, np.broadcast_to(tg.nodes[:, None], bkm.Vfun.shape), atol=1e-12)


def test_bkm_zero_data_and_grid_requirements():
    bkm = solve_hjb_bkm(hjb("0", "0"), _grids(), X)
    assert not bkm.Vfun.any() and not bkm.Jfun.any()
    with pytest.raises(ConfigurationError, match="J >= 2"):
        solve_hjb_bkm(hjb("0", "0"), _grids(1), X)


def test_equivalence_s_independent_and_zero():
    grids = _grids()
    for h in (hjb("-0.5 * a^2 - 0.1 * x^2", "cos(x)", b="a", control="-1:1:5"), hjb("0", "0")):
        eq = check_equivalence(solve_hjb_wy(h, grids, X), solve_hjb_bkm(h, grids, X), h)
        assert eq["v_gap_sup"] < 1e-12 and eq["bkm_residual_sup"] < 1e-12


def test_equivalence_control_free_refinement():
    h = hjb("sin(3 * s) * cos(t) + s * x", "sin(2 * s) * x + cos(s)")
    out = []
    for M in (25, 50):
        g = _grids(M)
        out.append(check_equivalence(solve_hjb_wy(h, g, X), solve_hjb_bkm(h, g, X), h))
    assert shrinks(out[0]["v_gap_sup"], out[1]["v_gap_sup"], 1.7)
    assert shrinks(out[0]["bkm_residual_sup"], out[1]["bkm_residual_sup"], 1.7)


def test_equivalence_requires_matching_grids():
    h = hjb("0", "0")
    with pytest.raises(ConfigurationError):
        check_equivalence(solve_hjb_wy(h, _grids(10), X), solve_hjb_bkm(h, _grids(20), X), h)
    wy = solve_hjb_wy(h, _grids(), X)
    with pytest.raises(ConfigurationError):
        check_equivalence(wy, wy, h)


def _fk(f, xi, M=50, n_paths=10_000, x=None):
    spec = scalar(f=f, xi=xi)
    ens, grids = setup(spec, M=M, n_paths=n_paths)
    bsvie = extract_bsvie(solve_system(spec, ens, grids))
    x = default_xgrid(0.0, 1.0, 1.0, 0.05) if x is None else x
    return feynman_kac_check(solve_representation_pde(spec, grids, x), bsvie, ens)


def test_feynman_kac_linear_terminal():
    rep = _fk("0", "x")
    assert rep["y_rms"] < 0.05 and rep["exit_fraction"] == 0.0


def test_feynman_kac_zero_and_space_free():
    assert _fk("0", "0", M=10, n_paths=200)["y_rms"] == 0.0
    assert _fk("-y", "1", n_paths=500)["y_rms"] < 2e-2


def test_feynman_kac_narrow_domain():
    with pytest.raises(DomainError, match="widen"):
        _fk("0", "x", M=10, n_paths=500, x=uniform_xgrid(-0.5, 0.5, 0.05))
