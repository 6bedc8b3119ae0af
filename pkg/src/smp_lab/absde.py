"""Backward solver for generalized anticipated BSDEs.

Solves, on the grid,

    -dy_t = h(t, y_t, z_t) dt + E[ l(theta(t), y_theta, z_theta) dtheta(t) | F_t ] - z_t dW_t,
    y_T = xi,   y_t = z_t = 0 for t > T,

by an explicit backward scheme with regression estimates of the conditional
expectations.  At node ``i``::

    z_i    = E_i[(y_{i+1} - E_i[y_{i+1}]) dW_i] / dt
    y_i    = E_i[y_{i+1} + h(i, y_{i+1}, z_i) dt + S_i]
    S_i    = sum over j in [theta_i, theta_{i+1}) of l(j, y_{j+1}, z_j) dt

where ``theta`` is capped at ``n_steps`` so nodes past ``T`` contribute
nothing.  The anticipated sum runs over every node whose delayed read is
node ``i``; for the adjoint equation this makes the discrete duality with
the Euler scheme exact.  ``E_i[y_{i+1}]`` is kept as ``y_pred``.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .delay import InverseDelayMap, TimeGrid, pseudo_inverse
from .errors import BlowUpError, ConfigurationError, ContractionError, ConvergenceError
from .forward import DelayedReader
from .regression import Conditioning
from .rng import STREAM_PROBE, stream_generator


@dataclass(eq=False)
class AbsdeProblem:
    """Driver, anticipation term, anticipation map and terminal value.

    ``driver(i, y, z)`` is evaluated at node ``i`` with ``y = y_{i+1}`` and
    ``z = z_i``.  ``anticipation(j, y, z)`` is evaluated at the anticipated node
    ``j`` with ``y = y_{j+1}`` and ``z = z_j`` (the time of the equation enters
    only through the ``dtheta`` measure).  Both return arrays over paths
    (or scalars).
    """

    grid: TimeGrid
    driver: Callable
    terminal: np.ndarray
    anticipation: Optional[Callable] = None
    inverse: Optional[InverseDelayMap] = None

    def __post_init__(self):
        if self.anticipation is not None and self.inverse is None:
            raise ConfigurationError("an anticipation term needs an inverse delay map")
        if self.inverse is not None:
            th = self.inverse.theta_idx
            i = np.arange(th.shape[0])[:, None]
            if (th < i).any():
                raise ConfigurationError("anticipation map must satisfy theta_idx[i] >= i")
        self.terminal = np.asarray(self.terminal, dtype=np.float64)


@dataclass(eq=False)
class AdjointEnsemble:
    """Backward solution: ``y`` on all nodes, ``z`` and ``y_pred`` on intervals."""

    grid: TimeGrid
    y: np.ndarray
    z: np.ndarray
    y_pred: np.ndarray
    beta: float = 1.0

    @property
    def p(self):
        return self.y

    @property
    def q(self):
        return self.z

    @property
    def n_paths(self):
        return self.y.shape[1]

    def __sub__(self, other):
        return AdjointEnsemble(self.grid, self.y - other.y, self.z - other.z,
                               self.y_pred - other.y_pred, self.beta)


def _beta_norm_arrays(grid, y, z, beta):
    w = np.exp(beta * grid.nodes)
    sup_term = float(np.max(w * np.mean(y ** 2, axis=1)))
    int_term = float(np.sum(w[:z.shape[0]] * np.mean(z ** 2, axis=1)) * grid.dt)
    return float(np.sqrt(sup_term + int_term))


def beta_norm(pair, beta=None):
    """``sqrt(max_i mean e^{beta t_i} Y_i^2 + mean sum_i e^{beta t_i} Z_i^2 dt)``.

    The integral is a left Riemann sum over the ``n_steps`` intervals.
    """
    beta = pair.beta if beta is None else beta
    return _beta_norm_arrays(pair.grid, pair.y, pair.z, beta)


class _AnticipationSums:
    """Backward-accumulated ``C_j = sum_{k >= j} l_k dt`` with range lookups."""

    def __init__(self, inverse, n_paths):
        grid = inverse.grid
        self.dt = grid.dt
        self.shared = inverse.shared
        cap = inverse.capped
        self.theta = cap if self.shared else np.broadcast_to(cap, (cap.shape[0], n_paths))
        self.cols = np.arange(n_paths)
        self.C = np.zeros((grid.n_steps + 1, n_paths))

    def push(self, j, values):
        self.C[j] = self.C[j + 1] + values * self.dt

    def range_sum(self, i):
        if self.shared:
            return self.C[self.theta[i, 0]] - self.C[self.theta[i + 1, 0]]
        return self.C[self.theta[i], self.cols] - self.C[self.theta[i + 1], self.cols]


def _finite(row, step, what):
    if not np.isfinite(row).all():
        bad = int(np.flatnonzero(~np.isfinite(row))[0])
        raise BlowUpError(f"non-finite {what} at path {bad}, step {step}", path=bad, step=step)


def _as_paths(value, n):
    return np.broadcast_to(np.asarray(value, dtype=np.float64), (n,))


def _backward_sweep(problem, bundle, cond, basis, prev=None):
    """One backward pass.  With ``prev`` the coefficients read the previous iterate."""
    grid = problem.grid
    N, dt = grid.n_steps, grid.dt
    n = bundle.n_paths
    dW = bundle.dW
    variables = cond.resolve(basis)
    y = np.empty((N + 1, n))
    z = np.empty((N, n))
    y_pred = np.empty((N, n))
    y[N] = _as_paths(problem.terminal, n)
    _finite(y[N], N, "terminal value")

    sums = None
    if problem.anticipation is not None:
        sums = _AnticipationSums(problem.inverse, n)
        if prev is not None:
            for j in range(N - 1, -1, -1):
                sums.push(j, _as_paths(problem.anticipation(j, prev.y[j + 1], prev.z[j]), n))

    for i in range(N - 1, -1, -1):
        nxt = y[i + 1]
        fit = cond.fit(i, nxt, basis, variables)
        y_pred[i] = fit.fitted
        # centring by the fitted E_i[y_{i+1}] removes most of the noise in the target
        z[i] = fit.project((nxt - y_pred[i]) * dW[i] / dt)
        if prev is None:
            drive = problem.driver(i, nxt, z[i])
        else:
            drive = problem.driver(i, prev.y[i + 1], prev.z[i])
        target = nxt + _as_paths(drive, n) * dt
        if sums is not None:
            if prev is None:
                sums.push(i, _as_paths(problem.anticipation(i, nxt, z[i]), n))
            target = target + sums.range_sum(i)
        y[i] = fit.project(target)
        _finite(y[i], i, "backward value")
    return AdjointEnsemble(grid, y, z, y_pred)


def solve_absde(problem, bundle, conditioning, basis):
    """Direct explicit backward recursion (driver at ``(y_{i+1}, z_i)``)."""
    if bundle.grid != problem.grid:
        raise ConfigurationError("problem and Brownian bundle must share one grid")
    cond = Conditioning.of(conditioning, bundle,
                           problem.inverse.delay if problem.inverse is not None else None)
    return _backward_sweep(problem, bundle, cond, basis)


@dataclass
class FixedPointTrace:
    gaps: List[float] = field(default_factory=list)
    converged: bool = False
    beta: float = 1.0

    @property
    def iterations(self):
        return len(self.gaps)

    @property
    def ratios(self):
        g = np.asarray(self.gaps)
        with np.errstate(divide="ignore", invalid="ignore"):
            return g[1:] / g[:-1]


def fixed_point_solve(problem, bundle, conditioning, basis, beta=1.0, k_max=50, tol=1e-10,
                      raise_on_fail=True):
    """Picard iteration ``(y, z) -> (Y, Z)`` on the backward equation.

    The driver and anticipation term read the previous iterate while the new
    pair solves the resulting linear backward equation.  The first iterate is
    computed from ``(y, z) = 0``; ``gaps[k]`` is the beta-norm distance between
    iterates ``k + 1`` and ``k``.
    """
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    if bundle.grid != problem.grid:
        raise ConfigurationError("problem and Brownian bundle must share one grid")
    cond = Conditioning.of(conditioning, bundle,
                           problem.inverse.delay if problem.inverse is not None else None)
    grid = problem.grid
    n = bundle.n_paths
    zero = AdjointEnsemble(grid, np.zeros((grid.n_steps + 1, n)), np.zeros((grid.n_steps, n)),
                           np.zeros((grid.n_steps, n)))
    current = _backward_sweep(problem, bundle, cond, basis, prev=zero)
    trace = FixedPointTrace(beta=beta)
    rising = 0
    for _ in range(k_max):
        new = _backward_sweep(problem, bundle, cond, basis, prev=current)
        gap = _beta_norm_arrays(grid, new.y - current.y, new.z - current.z, beta)
        if trace.gaps and gap > trace.gaps[-1]:
            rising += 1
        else:
            rising = 0
        trace.gaps.append(gap)
        current = new
        if gap <= tol:
            trace.converged = True
            break
        if rising >= 3:
            raise ContractionError(
                "fixed-point gap increased for 3 consecutive iterations; ratios "
                + ", ".join(f"{r:.3g}" for r in trace.ratios), trace.gaps)
    if not trace.converged and raise_on_fail:
        raise ConvergenceError(
            f"fixed-point iteration did not reach tol={tol:g} in {k_max} iterations", trace.gaps)
    current.beta = beta
    return current, trace


class FrozenCoefficients:
    """Coefficients and partials evaluated along a reference (state, control) pair."""

    def __init__(self, coeffs, state, control):
        self.coeffs = coeffs
        self.state = state
        self.grid = state.grid
        self.n = state.n_paths
        self._reader = DelayedReader(state.delay, self.n)
        self._U = control.values
        self._t = self.grid.nodes

    def args(self, i):
        X = self.state.X
        return (self._t[i], X[i], self._reader.read(X, i), self._U[i],
                self._reader.read(self._U, i))

    def at(self, name, i):
        fn = self.coeffs.partial(name) if "_" in name else self.coeffs.func(name)
        return np.asarray(fn(*self.args(i)), dtype=np.float64)

    def require(self, names):
        for name in names:
            self.coeffs.partial(name)


def build_adjoint_problem(coeffs, star_state, star_control, delay=None, inv=None):
    """Adjoint equation of the delayed control problem along ``(X*, u*)``.

    ``h(i, p, q) = b_x p + sigma_x q + f_x`` at node ``i`` and
    ``l(j, p, q) = b_y p + sigma_y q + f_y`` at the anticipated node ``j``;
    the terminal value is ``g_x(X*_T)``.
    """
    delay = star_state.delay if delay is None else delay
    inv = pseudo_inverse(delay) if inv is None else inv
    frozen = FrozenCoefficients(coeffs, star_state, star_control)
    frozen.require(("b_x", "sigma_x", "f_x", "b_y", "sigma_y", "f_y", "g_x"))

    def driver(i, p, q):
        return frozen.at("b_x", i) * p + frozen.at("sigma_x", i) * q + frozen.at("f_x", i)

    def anticipation(j, p, q):
        return frozen.at("b_y", j) * p + frozen.at("sigma_y", j) * q + frozen.at("f_y", j)

    xi = np.asarray(coeffs.partial("g_x")(star_state.X[-1]), dtype=np.float64)
    xi = np.broadcast_to(xi, (star_state.n_paths,)).copy()
    return AbsdeProblem(star_state.grid, driver, xi, anticipation, inv)


@dataclass
class ContractionConstants:
    M1: float
    M2: float

    @property
    def condition(self):
        return 16.0 * self.M1 * self.M2 * max(1.0, self.M2)

    @property
    def satisfied(self):
        return self.condition < 1.0


def estimate_absde_constants(problem, n_paths, probes=64, seed=0, radius=10.0):
    """Probe growth/Lipschitz constants of ``h`` and ``l`` on random inputs.

    ``M1`` bounds both ``|phi| / (1 + |y| + |z|)`` and
    ``|phi(y1, z1) - phi(y2, z2)| / (|y1 - y2| + |z1 - z2|)``; ``M2`` bounds the
    capped anticipation map ``theta(T)``.
    """
    gen = stream_generator(seed, STREAM_PROBE, 1)
    grid = problem.grid
    fns = [problem.driver]
    if problem.anticipation is not None:
        fns.append(problem.anticipation)
    m1 = 0.0
    for _ in range(probes):
        i = int(gen.integers(0, grid.n_steps))
        y1, z1 = gen.uniform(-radius, radius, (2, n_paths))
        scale = gen.choice([1e-3, 1.0, radius])
        y2 = y1 + scale * gen.normal(size=n_paths)
        z2 = z1 + scale * gen.normal(size=n_paths)
        for fn in fns:
            a = _as_paths(fn(i, y1, z1), n_paths)
            b = _as_paths(fn(i, y2, z2), n_paths)
            m1 = max(m1, float(np.max(np.abs(a) / (1 + np.abs(y1) + np.abs(z1)))))
            m1 = max(m1, float(np.max(np.abs(a - b) / (np.abs(y1 - y2) + np.abs(z1 - z2)))))
    if problem.inverse is not None:
        m2 = float(np.max(problem.inverse.capped[-1])) * grid.dt
    else:
        m2 = grid.T
    return ContractionConstants(m1, m2)
