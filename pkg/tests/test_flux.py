import numpy as np
import pytest

from parahom.cell import TorusGrid, solve_cell_infinity, solve_cell_lambda
from parahom.coefficients import make_family
from parahom.errors import GridError
from parahom.fitting import observed_orders
from parahom.flux import (FluxField, SpaceTimeSpectral, build_flux_correctors, build_flux_field,
                          divergence, flux_check, flux_lambda_scaling, verify_flux_identities)

XT = (0.5, 0.0)
TRIG = {"family": "trig_product", "a0": 2.0, "c": 1.0}


def test_inverse_laplacian_on_single_mode():
    grid = TorusGrid(1, 16, 16, 2.0)
    ops = SpaceTimeSpectral(grid)
    s = grid.s_unit[:, None] * 2.0
    y = (np.arange(16) / 16)[None, :]
    u = np.sin(2 * np.pi * y) * np.cos(2 * np.pi * s / 2.0)
    lam = -(4 * np.pi ** 2) * (1 + 1 / 4.0)
    np.testing.assert_allclose(ops.inverse_laplacian(u), u / lam, atol=1e-13)


def test_correctors_exactly_antisymmetric_and_reproduce_flux():
    f = make_family(TRIG)
    rep = flux_check(f, XT, TorusGrid(1, 32, 32, 1.0))
    assert rep.antisymmetry == 0.0
    assert rep.residual < 1e-3


def test_residual_order_under_refinement():
    f = make_family(TRIG)
    ns = [16, 32, 64]
    res = [flux_check(f, XT, TorusGrid(1, n, n, 1.0)).residual for n in ns]
    assert np.all(-observed_orders(ns, res) >= 1.8)


def test_time_row_scaling_bounded():
    out = flux_lambda_scaling(make_family(TRIG), XT, [1.0, 4.0, 16.0], TorusGrid(1, 32, 32))
    assert out["spread"] < 3.0


def test_2d_flux_identities():
    f = make_family({"family": "trig_product", "d": 2, "a0": 2.0, "c": 0.5})
    xt = (np.array([0.5, 0.5]), 0.0)
    rep = flux_check(f, xt, TorusGrid(2, 16, 16, 1.0))
    assert rep.antisymmetry == 0.0
    assert rep.residual_rel < 0.05


def test_constant_coefficient_gives_zero_flux():
    f = make_family({"family": "constant", "value": 1.0})
    corr = solve_cell_lambda(f, XT, TorusGrid(1, 16, 16, 1.0))
    fc = build_flux_correctors(build_flux_field(f, XT, corr))
    assert np.max(np.abs(fc.Bc)) < 1e-13
    assert np.max(np.abs(divergence(fc))) < 1e-13


def test_requires_lambda_kind():
    f = make_family(TRIG)
    with pytest.raises(GridError):
        build_flux_field(f, XT, solve_cell_infinity(f, XT, TorusGrid(1, 16, 16)))


def test_nonzero_mean_rejected():
    grid = TorusGrid(1, 16, 16, 1.0)
    B = np.zeros((2, 1, 16, 16))
    B[0, 0] += 1.0
    with pytest.raises(GridError):
        build_flux_correctors(FluxField(B, grid, XT))


def test_grid_mismatch_rejected():
    f = make_family(TRIG)
    c1 = solve_cell_lambda(f, XT, TorusGrid(1, 16, 16, 1.0))
    c2 = solve_cell_lambda(f, XT, TorusGrid(1, 32, 16, 1.0))
    with pytest.raises(GridError):
        verify_flux_identities(build_flux_correctors(build_flux_field(f, XT, c1)),
                               build_flux_field(f, XT, c2))
