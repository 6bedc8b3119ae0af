import logging

import numpy as np
import pytest

from smp_lab.coefficients import CoefficientSet, check_coefficients, fd_partial
from smp_lab.errors import CoefficientValidationError, ConfigurationError

zero = lambda t, x, y, u, v: 0.0 * x


def test_linear_partial_has_no_discrepancy():
    cs = CoefficientSet(lambda t, x, y, u, v: x, zero, zero, lambda x: 0 * x,
                        {"b_x": lambda t, x, y, u, v: 1.0 + 0 * x})
    rep = check_coefficients(cs, probes=64)
    assert rep.partial_discrepancy["b_x"] < 1e-9
    # squared ratio; only x moves b, so the probe maximum stays below one
    assert 0.5 < rep.lipschitz["b"] <= 1.0 + 1e-9


def test_quadratic_drift_is_flagged_superlinear(caplog):
    cs = CoefficientSet(lambda t, x, y, u, v: x ** 2, zero, zero, lambda x: 0 * x)
    with caplog.at_level(logging.WARNING):
        rep = check_coefficients(cs, probes=128)
    assert "b" in rep.superlinear
    assert "sigma" not in rep.superlinear
    assert "faster than linearly" in caplog.text


def test_wrong_partial_raises():
    cs = CoefficientSet(lambda t, x, y, u, v: x, zero, zero, lambda x: 0 * x,
                        {"b_x": lambda t, x, y, u, v: 2.0 + 0 * x})
    with pytest.raises(CoefficientValidationError, match="b_x"):
        check_coefficients(cs, probes=16)


def test_missing_partial_without_fallback():
    cs = CoefficientSet(zero, zero, zero, lambda x: 0 * x)
    with pytest.raises(ConfigurationError, match="sigma_u"):
        cs.partial("sigma_u")
    cs.fd_fallback = True
    d = cs.partial("sigma_u")
    assert d(0.0, 1.0, 1.0, 1.0, 1.0) == 0.0


def test_fd_partial_matches_analytic():
    f = lambda t, x, y, u, v: np.sin(x) * y + u ** 2 * v
    cs = CoefficientSet(zero, zero, f, lambda x: np.exp(x))
    x, y, u, v = 0.3, -1.2, 0.7, 2.0
    assert fd_partial(cs, "f_x", 1e-6)(0, x, y, u, v) == pytest.approx(np.cos(x) * y, rel=1e-8)
    assert fd_partial(cs, "f_u", 1e-6)(0, x, y, u, v) == pytest.approx(2 * u * v, rel=1e-8)
    assert fd_partial(cs, "g_x", 1e-6)(x) == pytest.approx(np.exp(x), rel=1e-8)


def test_unknown_partial_name():
    with pytest.raises(ConfigurationError):
        CoefficientSet(zero, zero, zero, lambda x: x, {"b_w": zero})
    with pytest.raises(ConfigurationError):
        check_coefficients(CoefficientSet(zero, zero, zero, lambda x: x), probes=0)
