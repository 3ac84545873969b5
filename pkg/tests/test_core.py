import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_bsvie.core import Lipschitz, ParamGrid, ProblemSpec, TimeGrid, assemble_nabla_f
from volterra_bsvie.errors import ConfigurationError, ShapeError

from helpers import FROZEN, scalar


def test_time_grid_nodes_and_step():
    g = TimeGrid(2.0, 4)
    np.testing.assert_array_equal(g.nodes, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert g.dt == 0.5
    assert len(g) == 5
    assert not g.nodes.flags.writeable


@pytest.mark.parametrize("T, M", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5), (float("nan"), 3)])
def test_time_grid_rejects_bad_input(T, M):
    with pytest.raises(ConfigurationError):
        TimeGrid(T, M)


def test_param_grid_alignment():
    tg = TimeGrid(1.0, 4)
    assert ParamGrid.from_time_grid(tg).is_aligned(tg)
    coarse = ParamGrid.uniform(1.0, 2)
    assert coarse.is_subset_of(tg) and not coarse.is_aligned(tg)
    with pytest.raises(ConfigurationError, match="J=2, M=4"):
        coarse.require_aligned(tg)
    assert ParamGrid.uniform(1.0, 4) == ParamGrid.from_time_grid(tg)


@pytest.mark.parametrize("nodes", [[0.0], [0.1, 1.0], [0.0, 0.5, 0.5, 1.0]])
def test_param_grid_validation(nodes):
    with pytest.raises(ConfigurationError):
        ParamGrid(np.array(nodes))


def _spec(**kw):
    base = dict(n=1, m=1, d=1, x0=[0.0], sigma=lambda t, x: np.ones(x.shape[:-1] + (1, 1)),
                f=lambda *a: 0.0, xi=lambda s, x: 0.0, ds_xi=lambda s, x: 0.0)
    base.update(kw)
    return ProblemSpec(**base)


def test_problem_spec_validates_dimensions():
    with pytest.raises(ConfigurationError):
        _spec(n=0)
    with pytest.raises(ShapeError):
        _spec(x0=[0.0, 1.0])
    with pytest.raises(ShapeError):
        _spec(dz_f=[lambda *a: 0.0, lambda *a: 0.0])
    assert not _spec().has_partials
    assert _spec(lipschitz=Lipschitz(1.0)).lipschitz.L_f == 1.0


def _nabla(spec, du, dv, s=0.0, y=0.0):
    x = np.zeros((1, 1))
    return assemble_nabla_f(spec, np.array(s), 0.0, x, np.array([[du]]), np.array([[[dv]]]),
                            np.array([[y]]), np.zeros((1, 1, 1)), np.zeros((1, 1)), np.zeros((1, 1, 1)))


def test_nabla_zero_partials():
    spec = scalar(f="0")
    assert _nabla(spec, 3.0, 4.0)[0, 0] == 0.0


def test_nabla_identity_in_y():
    assert _nabla(scalar(f="y"), 3.0, 0.0)[0, 0] == 3.0


def test_nabla_product_matches_oracle():
    got = _nabla(scalar(f="s * y"), 7.0, 0.0, s=2.0, y=5.0)[0, 0]
    assert got == pytest.approx(FROZEN["nabla_example"], abs=1e-8)


def test_nabla_requires_partials_and_names_bad_component():
    with pytest.raises(ConfigurationError):
        _nabla(_spec(), 1.0, 1.0)
    bad = _spec(ds_f=lambda *a: np.zeros((1, 2)), dy_f=lambda *a: np.zeros((1, 1, 1)),
                dz_f=[lambda *a: np.zeros((1, 1, 1))])
    with pytest.raises(ShapeError, match="ds_f"):
        _nabla(bad, 1.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_nabla_is_linear_in_derivative_arguments(du1, du2, dv1, dv2):
    spec = scalar(f="sin(y) + 2 * z + s * y")
    a = _nabla(spec, du1, dv1, s=0.3, y=0.7)
    b = _nabla(spec, du2, dv2, s=0.3, y=0.7)
    c = _nabla(spec, du1 + du2, dv1 + dv2, s=0.3, y=0.7)
    base = _nabla(spec, 0.0, 0.0, s=0.3, y=0.7)
    np.testing.assert_allclose(c - base, (a - base) + (b - base), atol=1e-12)
