import numpy as np
import pytest

from smp_lab.brownian import deterministic_bundle, sample_brownian
from smp_lab.coefficients import CoefficientSet
from smp_lab.delay import DelaySpec, identity_delay, make_time_grid, realize_delay
from smp_lab.errors import BlowUpError, ConfigurationError, ConvergenceError
from smp_lab.forward import ControlProcess, euler_maruyama, picard_solve

from oracles import pantograph_fine, pantograph_series

zero = lambda t, x, y, u, v: 0.0 * x
no_cost = lambda x: 0.0 * x


def model(b, sigma=zero):
    return CoefficientSet(b, sigma, zero, no_cost)


def test_fine_oracle_agrees_with_series():
    assert pantograph_fine() == pytest.approx(pantograph_series(1.0), rel=1e-9)
    assert pantograph_series(1.0) == pytest.approx(2.2715, abs=5e-5)


def test_zero_dynamics_is_exact(bundle):
    g = bundle.grid
    ens = euler_maruyama(model(zero), ControlProcess.constant(g, 0.3), identity_delay(g), bundle, 1.7)
    assert np.all(ens.X == 1.7)


def test_pantograph_euler_matches_oracle():
    g = make_time_grid(1.0, 10 ** 4)
    b = deterministic_bundle(g)
    d = realize_delay(DelaySpec.proportional(0.5), g)
    ens = euler_maruyama(model(lambda t, x, y, u, v: y), ControlProcess.constant(g, 0), d, b, 1.0)
    oracle = pantograph_fine()
    assert abs(ens.X[-1, 0] - oracle) / oracle <= 1e-3
    # first-order scheme: halving dt roughly halves the error
    g2 = make_time_grid(1.0, 5000)
    ens2 = euler_maruyama(model(lambda t, x, y, u, v: y), ControlProcess.constant(g2, 0),
                          realize_delay(DelaySpec.proportional(0.5), g2), deterministic_bundle(g2), 1.0)
    ratio = (oracle - ens2.X[-1, 0]) / (oracle - ens.X[-1, 0])
    assert 1.7 < ratio < 2.3


def test_picard_reaches_euler_on_the_grid():
    g = make_time_grid(1.0, 40)
    b = sample_brownian(g, 500, 8)
    d = realize_delay(DelaySpec.proportional(0.5), g)
    coeffs = model(lambda t, x, y, u, v: np.sin(x) + 0.5 * y + u, lambda t, x, y, u, v: 0.3 * np.cos(y))
    u = ControlProcess.from_function(g, lambda t: t)
    em = euler_maruyama(coeffs, u, d, b, 0.4)
    pic, diag = picard_solve(coeffs, u, d, b, 0.4, k_max=60, tol=1e-28)
    assert diag.converged and diag.iterations <= g.n_steps + 2
    assert np.max(np.abs(pic.X - em.X)) < 1e-12


def test_geometric_picard_gaps_shrink():
    g = make_time_grid(1.0, 100)
    b = sample_brownian(g, 2000, 3)
    coeffs = model(lambda t, x, y, u, v: x, lambda t, x, y, u, v: 0.2 * x)
    _, diag = picard_solve(coeffs, ControlProcess.constant(g, 0), identity_delay(g), b, 1.0)
    ratios = diag.ratios
    assert np.all(ratios[2:9] < 0.5)
    assert diag.gaps[8] <= 1e-8 * diag.gaps[0]


def test_geometric_mean_matches_exponential():
    g = make_time_grid(1.0, 200)
    b = sample_brownian(g, 20000, 5)
    coeffs = model(lambda t, x, y, u, v: x, lambda t, x, y, u, v: 0.2 * x)
    X = euler_maruyama(coeffs, ControlProcess.constant(g, 0), identity_delay(g), b, 1.0).X[-1]
    exact = (1 + g.dt) ** g.n_steps
    assert abs(X.mean() - exact) < 4 * X.std() / np.sqrt(X.size)


def test_random_delay_reads_per_path():
    g = make_time_grid(1.0, 20)
    b = sample_brownian(g, 50, 1)
    d = realize_delay(DelaySpec.random_slope(0.2, 0.9), g, 50, seed=1)
    b_fn = lambda t, x, y, u, v: -x + 2 * y + v
    u = ControlProcess.from_function(g, lambda t: np.cos(3 * t))
    X = euler_maruyama(model(b_fn, lambda t, x, y, u, v: 0.1 + 0 * x), u, d, b, 1.0).X
    for p in (0, 17, 49):
        tau = d.path(p)
        x = [1.0]
        for i in range(g.n_steps):
            v = u.values[min(tau[i], g.n_steps - 1), 0]
            x.append(x[i] + b_fn(0, x[i], x[tau[i]], 0, v) * g.dt + 0.1 * b.dW[i, p])
        assert np.allclose(X[:, p], x, rtol=0, atol=1e-13)


def test_blow_up_reports_path_and_step():
    g = make_time_grid(1.0, 50)
    b = deterministic_bundle(g)
    with pytest.raises(BlowUpError) as exc, np.errstate(over="ignore"):
        euler_maruyama(model(lambda t, x, y, u, v: x ** 3), ControlProcess.constant(g, 0),
                       identity_delay(g), b, 50.0)
    assert exc.value.path == 0 and exc.value.step >= 1
    assert exc.value.exit_code == 3


def test_picard_nonconvergence():
    g = make_time_grid(1.0, 50)
    coeffs = model(lambda t, x, y, u, v: 3 * x)
    with pytest.raises(ConvergenceError):
        picard_solve(coeffs, ControlProcess.constant(g, 0), identity_delay(g), deterministic_bundle(g),
                     1.0, k_max=3)
    _, diag = picard_solve(coeffs, ControlProcess.constant(g, 0), identity_delay(g),
                           deterministic_bundle(g), 1.0, k_max=3, raise_on_fail=False)
    assert not diag.converged and len(diag.gaps) == 3


def test_control_validation():
    g = make_time_grid(1.0, 10)
    with pytest.raises(ConfigurationError, match="10 rows"):
        ControlProcess(g, np.zeros(11))
    with pytest.raises(ConfigurationError, match="admissible"):
        ControlProcess(g, np.full(10, 2.0), u_min=-1, u_max=1)
    with pytest.raises(ConfigurationError):
        ControlProcess(g, np.full(10, np.nan))
    u = ControlProcess(g, np.zeros((10, 3)))
    with pytest.raises(ConfigurationError, match="3 paths"):
        euler_maruyama(model(zero), u, identity_delay(g), sample_brownian(g, 4, 0), 0.0)


def test_mismatched_grids():
    g1, g2 = make_time_grid(1.0, 10), make_time_grid(1.0, 20)
    with pytest.raises(ConfigurationError, match="one grid"):
        euler_maruyama(model(zero), ControlProcess.constant(g1, 0), identity_delay(g1),
                       deterministic_bundle(g2), 0.0)
