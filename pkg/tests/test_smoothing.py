import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahom.coefficients import make_family
from parahom.errors import GridError
from parahom.fitting import fit_loglog
from parahom.smoothing import (Mollifier, TestFunction, TwoScaleSymbol, bump, smooth,
                               smooth_two_scale, torus_interp, verify_smoothing_bounds)


def test_unit_mass_and_support():
    for d in (1, 2):
        m = Mollifier(0.05, d)
        # applied weights are renormalised, so their mass is 1 at any resolution
        assert m.time_weights(0.05 ** 2 / 4).sum() == pytest.approx(1.0, abs=1e-14)
        assert m.space_weights(0.05 / 4).sum() == pytest.approx(1.0, abs=1e-14)
        # the raw quadrature converges to the analytic normalisation
        mt, mx = m.discrete_mass(0.05 / 64, 0.05 ** 2 / 64)
        assert mt == pytest.approx(1.0, abs=1e-8)
        assert mx == pytest.approx(1.0, abs=1e-8)
    m = Mollifier(0.1)
    assert m.time_kernel(0.0101) == 0.0 and m.time_kernel(0.0099) > 0
    assert m.space_kernel(0.1) == 0.0
    assert bump(np.array([1.0, -1.0]))[0] == 0.0


def test_constant_and_linear_preserved():
    m = Mollifier(0.05)
    h, dt = 1 / 256, 1 / 4096
    x = np.arange(256) * h
    c = np.full((64, 256), 2.5)
    np.testing.assert_allclose(smooth(c, m, h, dt), c, rtol=1e-13)
    lin = np.broadcast_to(np.sin(2 * np.pi * x) * 0 + x, (64, 256)).copy()
    out = smooth(lin, m, h, None, space_mode="reflect")
    r = int(0.05 / h) + 1
    np.testing.assert_allclose(out[:, r:-r], lin[:, r:-r], atol=1e-13)


def test_second_order_on_sine():
    h = 1 / 1024
    x = np.arange(1024) * h
    f = np.sin(2 * np.pi * x)[None, :]
    deltas = [0.025, 0.05, 0.1]
    errs = [np.max(np.abs(smooth(f, Mollifier(d), h, None) - f)) for d in deltas]
    assert fit_loglog(deltas, errs).slope == pytest.approx(2.0, abs=0.05)


def test_under_resolution_rejected():
    with pytest.raises(GridError):
        smooth(np.zeros((4, 16)), Mollifier(0.01), 1 / 16, None)
    with pytest.raises(GridError):
        smooth(np.zeros((4, 1024)), Mollifier(0.05), 1 / 1024, 0.01)


@settings(max_examples=15)
@given(seed=st.integers(0, 10 ** 6), delta=st.sampled_from([0.04, 0.06, 0.1]))
def test_l2_contraction_periodic(seed, delta):
    rng = np.random.default_rng(seed)
    h, dt = 1 / 128, 1 / 4096
    u = rng.standard_normal((32, 128))
    v = smooth(u, Mollifier(delta), h, dt)
    assert np.linalg.norm(v) <= (1 + 1e-6) * np.linalg.norm(u)


def test_fast_only_symbol_commutes():
    rng = np.random.default_rng(1)
    vals = rng.random((16, 16))
    g = TwoScaleSymbol.from_torus(vals, 1.0)
    x = np.arange(128) / 128
    t = np.arange(2048) / 2048
    h = np.sin(2 * np.pi * x)[None, :] * np.cos(2 * np.pi * t)[:, None]
    m = Mollifier(0.1)
    got = smooth_two_scale(g, h, x, t, 0.25, m)
    expect = g.fast([x[None, :]], t[:, None], 0.25) * smooth(h, m, x[1] - x[0], t[1] - t[0])
    np.testing.assert_allclose(got, expect, atol=1e-14)


def test_slow_symbol_independent_of_xt_matches_fast_path():
    f = make_family({"family": "trig_product", "a0": 2.0, "c": 1.0})
    slow = TwoScaleSymbol.from_coefficient(f, n_nodes_y=16, n_nodes_s=16)
    assert not slow.slow
    forced = TwoScaleSymbol(slow.func, 1, True, 1.0, 16, 16)
    x = np.arange(64) / 64
    t = np.arange(256) / 256
    hf = np.cos(2 * np.pi * x)[None, :] * np.ones((256, 1))
    m = Mollifier(0.25)
    a = smooth_two_scale(slow, hf, x, t, 1.0, m)
    b = smooth_two_scale(forced, hf, x, t, 1.0, m)
    # linear hats reproduce g at the nodes; between nodes the error is O(1/n^2)
    assert np.max(np.abs(a - b)) < 0.05


def test_torus_interp_hits_nodes_and_is_periodic():
    vals = np.arange(12.0).reshape(3, 4)
    assert torus_interp(vals, 0.25, 1 / 3) == pytest.approx(vals[1, 1])
    assert torus_interp(vals, 1.25, 4 / 3) == pytest.approx(vals[1, 1])
    assert torus_interp(vals, 0.5, 2.0, period_s=2.0) == pytest.approx(vals[0, 2])


def test_verification_report_for_constant_symbol():
    g = TwoScaleSymbol(lambda xs, t, ys, s: np.ones(np.broadcast_shapes(np.shape(xs[0]), np.shape(t))),
                       1, False)
    rep = verify_smoothing_bounds(g, TestFunction.sine(), [0.05, 0.1, 0.2], eps=0.25)
    assert not rep.fit.degenerate
    assert all(r <= 2 * np.pi * (1 + 1e-6) for r in rep.bound_ratio)


def test_verification_needs_three_deltas():
    g = TwoScaleSymbol(lambda xs, t, ys, s: 1.0, 1, False)
    with pytest.raises(GridError):
        verify_smoothing_bounds(g, TestFunction.sine(), [0.1, 0.2], eps=0.25)


def test_gradient_bound_grows_as_eps_shrinks():
    f = make_family({"family": "space_only", "a0": 2.0, "c": 1.0})
    g = TwoScaleSymbol.from_coefficient(f)
    r1 = verify_smoothing_bounds(g, TestFunction.sine(), [0.05, 0.1, 0.2], eps=0.125, n_x=512, n_t=2048)
    r2 = verify_smoothing_bounds(g, TestFunction.sine(), [0.05, 0.1, 0.2], eps=0.0625, n_x=512, n_t=2048)
    ratio = r2.grad_norm[0] / r1.grad_norm[0]
    assert 1.5 <= ratio <= 2.1
