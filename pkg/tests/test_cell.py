import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahom.cell import (TorusGrid, cell_residual, corrector, effective_tensor,
                          lambda_comparison_sweep, select_effective, solve_cell_infinity,
                          solve_cell_lambda, solve_cell_zero)
from parahom.coefficients import from_callable, make_family
from parahom.errors import GridError

XT = (0.5, 0.0)
SQRT3 = math.sqrt(3.0)
# integral_0^1 sqrt(4 - cos^2(2 pi s)) ds (adaptive quadrature)
A_INF_TRIG = 1.8684309153353884


def _space_only():
    return make_family({"family": "space_only", "a0": 2.0, "c": 1.0})


@pytest.mark.parametrize("kind,lam", [("infinity", None), ("zero", None), ("lambda", 0.25),
                                      ("lambda", 1.0), ("lambda", 4.0)])
def test_harmonic_mean_oracle(kind, lam):
    grid = TorusGrid(1, 64, 16, lam)
    t = effective_tensor(_space_only(), XT, corrector(_space_only(), XT, grid, kind))
    assert t.matrix[0, 0] == pytest.approx(SQRT3, abs=1e-10)


def test_corrector_slope_at_origin():
    # chi' = a_hat / a - 1, so chi'(0) = sqrt(3)/2 - 1
    corr = solve_cell_infinity(_space_only(), XT, TorusGrid(1, 128, 8))
    assert corr.grad[0, 0][0, 0] == pytest.approx(-0.1339745962155614, abs=1e-9)


def test_time_only_gives_arithmetic_mean_and_zero_corrector():
    f = make_family({"family": "time_only", "a0": 2.0, "c": 0.7})
    for kind, lam in (("infinity", None), ("zero", None), ("lambda", 2.0)):
        corr = corrector(f, XT, TorusGrid(1, 16, 32, lam), kind)
        assert np.max(np.abs(corr.chi)) < 1e-12
        assert effective_tensor(f, XT, corr).matrix[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_trig_infinity_oracle():
    f = make_family({"family": "trig_product", "a0": 2.0, "c": 1.0})
    t = effective_tensor(f, XT, solve_cell_infinity(f, XT, TorusGrid(1, 64, 64)))
    assert t.matrix[0, 0] == pytest.approx(A_INF_TRIG, abs=1e-10)


def test_trig_zero_is_time_averaged_constant():
    # the s-average of 2 + sin(2 pi y) cos(2 pi s) is 2
    f = make_family({"family": "trig_product", "a0": 2.0, "c": 1.0})
    t = effective_tensor(f, XT, solve_cell_zero(f, XT, TorusGrid(1, 64, 64)))
    assert t.matrix[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_laminate_2d():
    f = make_family({"family": "laminate2d", "d": 2, "a0": 2.0, "c": 1.0})
    xt = (np.array([0.5, 0.5]), 0.0)
    t = effective_tensor(f, xt, solve_cell_infinity(f, xt, TorusGrid(2, 32, 8)))
    np.testing.assert_allclose(t.matrix, np.diag([SQRT3, 2.0]), atol=1e-8)


def test_constant_identity_has_zero_corrector():
    f = make_family({"family": "constant", "value": 1.0, "d": 2})
    corr = solve_cell_lambda(f, (np.array([0.5, 0.5]), 0.0), TorusGrid(2, 16, 8, 1.0))
    assert np.max(np.abs(corr.chi)) <= 1e-12
    np.testing.assert_allclose(effective_tensor(f, (np.array([0.5, 0.5]), 0.0), corr).matrix, np.eye(2), atol=1e-12)


def test_lambda_cell_rejects_degenerate_periods():
    f = _space_only()
    for lam in (None, 0.0, math.inf):
        with pytest.raises(GridError):
            solve_cell_lambda(f, XT, TorusGrid(1, 16, 16, lam) if lam is not None else TorusGrid(1, 16, 16))


def test_lambda_cell_residual_small_and_periodic():
    f = make_family({"family": "trig_product", "a0": 2.0, "c": 1.0})
    corr = solve_cell_lambda(f, XT, TorusGrid(1, 64, 64, 1.0))
    assert corr.gap_history[-1] <= 1e-10
    assert cell_residual(corr) < 1e-3


def test_lambda_limits_approach_inf_and_zero():
    f = make_family({"family": "trig_product", "a0": 2.0, "c": 1.0})
    grid = TorusGrid(1, 32, 64)
    rep = lambda_comparison_sweep(f, XT, [0.03125, 0.0625, 32.0, 64.0], grid)
    assert rep.dev_zero[0] < rep.dev_zero[1]
    assert rep.dev_inf[3] < rep.dev_inf[2]


def test_sweep_needs_four_lambdas():
    with pytest.raises(GridError):
        lambda_comparison_sweep(_space_only(), XT, [1, 2, 3], TorusGrid(1, 16, 16))


def test_select_effective_dispatch():
    f = make_family({"family": "trig_product", "a0": 2.0, "c": 1.0})
    grid = TorusGrid(1, 32, 32)
    assert select_effective(f, XT, 0.0, grid).matrix[0, 0] == pytest.approx(2.0)
    assert select_effective(f, XT, math.inf, grid).matrix[0, 0] == pytest.approx(A_INF_TRIG, abs=1e-8)
    with pytest.raises(GridError):
        select_effective(f, XT, -1.0, grid)


def test_nonsymmetric_2d_cell_via_gmres():
    def A(xs, t, ys, s):
        y1, y2 = ys
        shp = np.broadcast_shapes(y1.shape, y2.shape, np.shape(s))
        out = np.zeros(shp + (2, 2))
        out[..., 0, 0] = 2 + np.sin(2 * np.pi * y1)
        out[..., 1, 1] = 2 + np.cos(2 * np.pi * y2)
        out[..., 0, 1] = 0.3
        out[..., 1, 0] = -0.3
        return out
    f = from_callable(2, A, mu=1.0, upper=3.0, depends_on_macro=False)
    xt = (np.array([0.5, 0.5]), 0.0)
    t = effective_tensor(f, xt, solve_cell_infinity(f, xt, TorusGrid(2, 16, 8)))
    assert t.min_eig_sym() >= f.mu - 1e-8
    # the skew part is a divergence-free constant and passes through unchanged
    assert t.matrix[0, 1] - t.matrix[1, 0] == pytest.approx(0.6, abs=1e-8)


@settings(max_examples=10)
@given(a0=st.floats(1.6, 4.0), c=st.floats(-1.0, 1.0), lam=st.sampled_from([0.5, 1.0, 3.0]),
       kind=st.sampled_from(["lambda", "infinity", "zero"]))
def test_effective_tensor_elliptic_and_mean_zero(a0, c, lam, kind):
    f = make_family({"family": "trig_product", "a0": a0, "b": 0.3, "c": c * 0.5})
    grid = TorusGrid(1, 32, 32, lam if kind == "lambda" else None)
    corr = corrector(f, XT, grid, kind)
    t = effective_tensor(f, XT, corr)
    assert corr.mean_violation() < 1e-12
    assert t.min_eig_sym() >= f.mu_bound - 1e-10
    # a_hat lies between the harmonic- and arithmetic-type bounds
    assert f.mu - 1e-10 <= t.matrix[0, 0] <= f.upper + 1e-10
