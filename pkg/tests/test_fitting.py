import numpy as np
import pytest
from hypothesis import given, strategies as st

from parahom.fitting import fit_loglog, observed_orders


@given(p=st.floats(-3, 3), c=st.floats(0.01, 100))
def test_exact_power_law_recovered(p, c):
    x = np.array([0.5, 0.25, 0.125, 0.0625])
    fit = fit_loglog(x, c * x ** p)
    assert fit.slope == pytest.approx(p, abs=1e-9)
    assert fit.residual < 1e-9
    assert not fit.degenerate


def test_degenerate_when_too_few_points():
    fit = fit_loglog([1, 2, 3], [1.0, 0.0, 0.0], floor=1e-13)
    assert fit.degenerate and np.isnan(fit.slope)


def test_observed_orders():
    h = np.array([0.1, 0.05, 0.025])
    np.testing.assert_allclose(observed_orders(h, h ** 2), [2.0, 2.0])
