import numpy as np
import pytest

from smp_lab.absde import build_adjoint_problem, solve_absde
from smp_lab.brownian import deterministic_bundle, sample_brownian
from smp_lab.coefficients import CoefficientSet
from smp_lab.delay import DelaySpec, make_time_grid, pseudo_inverse, realize_delay
from smp_lab.errors import ConfigurationError
from smp_lab.forward import ControlProcess, euler_maruyama
from smp_lab.lq import LQCoefficients, lq_cost, lq_forward
from smp_lab.regression import RegressionBasis
from smp_lab.smp import (StationarityResidual, cost_functional, duality_check, gateaux_adjoint,
                         gateaux_fd, hamiltonian, stationarity_residual, variational_inequality_check,
                         variational_solve)

BASIS = RegressionBasis(2)


def nonlinear_model():
    b = lambda t, x, y, u, v: np.sin(x) + 0.5 * y * u + 0.3 * v
    s = lambda t, x, y, u, v: 0.2 * np.cos(x) + 0.1 * y + 0.2 * u
    f = lambda t, x, y, u, v: 0.5 * x ** 2 + 0.25 * y ** 2 + u ** 2 + 0.1 * u * v
    g = lambda x: np.cos(x)
    partials = {
        "b_x": lambda t, x, y, u, v: np.cos(x), "b_y": lambda t, x, y, u, v: 0.5 * u,
        "b_u": lambda t, x, y, u, v: 0.5 * y, "b_v": lambda t, x, y, u, v: 0.3 + 0 * x,
        "sigma_x": lambda t, x, y, u, v: -0.2 * np.sin(x), "sigma_y": lambda t, x, y, u, v: 0.1 + 0 * x,
        "sigma_u": lambda t, x, y, u, v: 0.2 + 0 * x, "sigma_v": lambda t, x, y, u, v: 0 * x,
        "f_x": lambda t, x, y, u, v: x, "f_y": lambda t, x, y, u, v: 0.5 * y,
        "f_u": lambda t, x, y, u, v: 2 * u + 0.1 * v, "f_v": lambda t, x, y, u, v: 0.1 * u,
        "g_x": lambda x: -np.sin(x),
    }
    return CoefficientSet(b, s, f, g, partials)


def pipeline(coeffs, bundle, delay, u, v, x0=0.5):
    star = euler_maruyama(coeffs, u, delay, bundle, x0)
    inv = pseudo_inverse(delay)
    adj = solve_absde(build_adjoint_problem(coeffs, star, u, delay, inv), bundle, star, BASIS)
    return star, inv, adj


def test_hamiltonian_value():
    cs = nonlinear_model()
    h = hamiltonian(0.0, 1.0, 2.0, 0.5, 0.1, 3.0, -1.0, cs)
    b = np.sin(1.0) + 0.5 + 0.03
    s = 0.2 * np.cos(1.0) + 0.2 + 0.1
    f = 0.5 + 1.0 + 0.25 + 0.005
    assert h == pytest.approx(3 * b - s + f)


def test_adjoint_derivative_is_exact_without_noise():
    # with dW = 0 every conditional expectation is exact, so only rounding remains
    g = make_time_grid(1.0, 40)
    b = deterministic_bundle(g, 12)
    d = realize_delay(DelaySpec.proportional(0.4), g)
    cs = nonlinear_model()
    u = ControlProcess.from_function(g, lambda t: 0.3 + np.sin(2 * t))
    v = ControlProcess.from_function(g, lambda t: 1 - t ** 2)
    star, inv, adj = pipeline(cs, b, d, u, v)
    est = gateaux_adjoint(cs, u, v, adj, d, inv, star)
    J = lambda e: cost_functional(cs, euler_maruyama(cs, u.with_values(u.values + e * v.values), d, b, 0.5),
                                  u.with_values(u.values + e * v.values)).value
    h = 1e-5
    fd = (J(h) - J(-h)) / (2 * h)
    assert est.value == pytest.approx(fd, rel=1e-7)
    assert est.changed == pytest.approx(est.value, rel=1e-12)

    var = variational_solve(cs, star, u, v, d, b)
    dual = duality_check(cs, star, u, var, adj)
    assert dual.rel_err < 1e-10


def test_adjoint_derivative_with_noise_and_random_delay():
    g = make_time_grid(1.0, 40)
    b = sample_brownian(g, 20000, 5)
    d = realize_delay(DelaySpec.random_slope(0.3, 0.7), g, b.n_paths, seed=5)
    cs = nonlinear_model()
    u = ControlProcess.from_function(g, lambda t: 0.2 * t)
    v = ControlProcess.from_function(g, lambda t: np.cos(t))
    star, inv, adj = pipeline(cs, b, d, u, v)
    est = gateaux_adjoint(cs, u, v, adj, d, inv, star)
    fd = gateaux_fd(cs, u, v, d, b, (0.1, 0.05), 0.5)
    assert abs(est.value - fd.value) <= 2e-2 * abs(fd.value)
    assert est.changed == pytest.approx(est.value, rel=1e-10)


def test_stationarity_without_delay_needs_no_regression():
    g = make_time_grid(1.0, 20)
    b = sample_brownian(g, 400, 2)
    d = realize_delay(DelaySpec.fixed_lag(0.0), g)
    cs = nonlinear_model()
    u = ControlProcess.constant(g, 0.1)
    star, inv, adj = pipeline(cs, b, d, u, u)
    res = stationarity_residual(cs, u, star, adj, d, inv)
    hu = (0.5 * star.X[:-1]) * adj.y_pred + 0.2 * adj.z + 2 * 0.1 + 0.1 * 0.1
    hv = 0.3 * adj.y_pred + 0.1 * 0.1
    assert np.allclose(res.r, hu + hv, rtol=1e-13, atol=1e-13)


def test_variational_inequality_at_bounds():
    g = make_time_grid(1.0, 10)
    r = -np.ones((10, 50))
    at_upper = ControlProcess.constant(g, 1.0, u_min=0.0, u_max=1.0)
    at_lower = ControlProcess.constant(g, 0.0, u_min=0.0, u_max=1.0)
    assert variational_inequality_check(StationarityResidual(g, r), at_upper).passed
    rep = variational_inequality_check(StationarityResidual(g, r), at_lower)
    assert not rep.passed and len(rep.violating) == 20
    zero = variational_inequality_check(StationarityResidual(g, 0 * r), ControlProcess.constant(g, 0.0))
    assert zero.passed and np.all(zero.means == 0)


def test_fd_rejects_projected_steps():
    g = make_time_grid(1.0, 10)
    b = sample_brownian(g, 50, 0)
    d = realize_delay(DelaySpec.proportional(0.5), g)
    cs = nonlinear_model()
    u = ControlProcess.constant(g, 0.95, u_min=-1.0, u_max=1.0)
    v = ControlProcess.constant(g, 1.0)
    est = gateaux_fd(cs, u, v, d, b, (0.1, 0.01), 0.5)
    assert est.rejected == [0.1]
    with pytest.raises(ConfigurationError):
        gateaux_fd(cs, u, v, d, b, (0.1,), 0.5)
    with pytest.raises(ConfigurationError):
        gateaux_fd(cs, u, v, d, b, (), 0.5)


def test_generic_cost_matches_lq_cost():
    g = make_time_grid(1.0, 30)
    b = sample_brownian(g, 300, 1)
    lq = LQCoefficients(A=0.1, B=0.3, C=1.0, D=0.2, Q=1.0, S=0.5, R=(1.0, 0.5), G=2.0, a=0.5)
    u = ControlProcess.from_function(g, lambda t: -t)
    st = lq_forward(lq, u, b)
    assert cost_functional(lq.as_coefficients(), st, u).value == pytest.approx(lq_cost(lq, st, u).value,
                                                                               rel=1e-13)
