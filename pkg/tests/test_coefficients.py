import numpy as np
import pytest
from hypothesis import given, strategies as st

from parahom.coefficients import (CoefficientError, CoefficientFamily, check_assumptions,
                                  from_callable, make_family)


def test_constant_family_values():
    f = make_family({"family": "constant", "value": 3.0})
    A = f.evaluate(np.array([0.2]), 0.1, np.array([0.7]), 0.4)
    assert A.shape == (1, 1)
    assert A[0, 0] == 3.0
    assert not f.depends_on_s and not f.depends_on_y


def test_trig_product_formula():
    f = make_family({"family": "trig_product", "a0": 2.0, "b": 0.3, "c": 0.5, "e": 0.1})
    y, s = 0.13, 0.41
    expect = (2.0 + (0.3 + 0.5 * np.cos(2 * np.pi * s)) * np.sin(2 * np.pi * y)
              + 0.1 * np.sin(2 * np.pi * (y - s)))
    got = f.entries((np.array(0.5),), 0.0, (np.array(y),), np.array(s))[0, 0]
    assert got == pytest.approx(expect, abs=1e-15)


def test_macro_modulation_multiplies():
    base = make_family({"family": "space_only", "a0": 2.0, "c": 1.0})
    mod = make_family({"family": "space_only", "a0": 2.0, "c": 1.0, "macro": {"ax": 0.2, "at": 0.1}})
    x, t, y = 0.3, 0.7, 0.2
    m = 1 + 0.2 * np.sin(2 * np.pi * x) + 0.1 * np.sin(2 * np.pi * t)
    a = base.entries((np.array(x),), t, (np.array(y),), 0.0)[0, 0]
    b = mod.entries((np.array(x),), t, (np.array(y),), 0.0)[0, 0]
    assert b == pytest.approx(m * a)
    assert mod.depends_on_macro and not base.depends_on_macro


def test_laminate_is_diagonal_2d():
    f = make_family({"family": "laminate2d", "d": 2})
    A = f.evaluate(np.zeros((4, 2)), 0.0, np.random.default_rng(0).random((4, 2)), 0.0)
    assert A.shape == (4, 2, 2)
    assert np.all(A[:, 0, 1] == 0) and np.allclose(A[:, 0, 0], A[:, 1, 1])


@pytest.mark.parametrize("spec", [
    {"family": "constant", "value": -1.0},
    {"family": "trig_product", "a0": 1.0, "c": 1.0},
    {"family": "space_only", "a0": 1.0, "c": 1.5},
    {"family": "laminate2d", "d": 1},
    {"family": "nope"},
    {"family": "trig_product", "macro": {"ax": 0.6, "at": 0.5}},
])
def test_degenerate_specs_rejected(spec):
    with pytest.raises(CoefficientError):
        make_family(spec)


def test_family_json_roundtrip():
    fam = CoefficientFamily.from_dict({"family": "trig_product", "a0": 3.0, "macro": {"ax": 0.1}})
    assert CoefficientFamily.from_json(fam.to_json()) == fam


def test_mu_bound_uses_both_constants():
    f = make_family({"family": "trig_product", "a0": 2.0, "c": 1.0})
    assert f.mu == pytest.approx(1.0)
    assert f.upper == pytest.approx(3.0)
    assert f.mu_bound == pytest.approx(1.0 / 3.0)


@pytest.mark.parametrize("spec", [
    {"family": "constant", "value": 1.0},
    {"family": "time_only"},
    {"family": "space_only"},
    {"family": "trig_product", "b": 0.2, "c": 0.5, "e": 0.2},
    {"family": "trig_product", "macro": {"ax": 0.2, "at": 0.2}},
    {"family": "laminate2d", "d": 2},
    {"family": "trig_product", "d": 2},
])
def test_builtin_families_satisfy_assumptions(spec):
    rep = check_assumptions(make_family(spec), n_samples=400, rng_seed=3)
    assert rep.passed, rep.as_dict()


def test_assumption_check_catches_bad_declaration():
    f = from_callable(1, lambda xs, t, ys, s: (2 + np.sin(2 * np.pi * ys[0]))[..., None, None],
                      mu=1.5, upper=3.0)
    rep = check_assumptions(f, n_samples=500)
    assert not rep["ellipticity"].passed


def test_assumption_check_catches_nonperiodic():
    f = from_callable(1, lambda xs, t, ys, s: (2 + 0.1 * np.sin(ys[0]))[..., None, None],
                      mu=1.0, upper=3.0)
    assert not check_assumptions(f, n_samples=200)["periodicity"].passed


@given(a0=st.floats(1.5, 5.0), c=st.floats(-1.0, 1.0), y=st.floats(-3, 3), s=st.floats(-3, 3))
def test_trig_product_periodic_and_elliptic(a0, c, y, s):
    f = make_family({"family": "trig_product", "a0": a0, "c": c})
    v = f.entries((np.array(0.0),), 0.0, (np.array(y),), np.array(s))[0, 0]
    w = f.entries((np.array(0.0),), 0.0, (np.array(y + 1.0),), np.array(s - 2.0))[0, 0]
    assert v == pytest.approx(w, abs=1e-9)
    assert f.mu - 1e-12 <= v <= f.upper + 1e-12
