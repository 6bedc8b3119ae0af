"""Linear-quadratic control with a moving-average delay ``tau(t) = a t``.

State::

    dX = (A X + B X_{at} + C u + P u_{at}) dt + (D X + F X_{at} + H u + N u_{at}) dW

Cost::

    J(u) = 1/2 E[ int (Q X^2 + S X_{at}^2 + R u^2) dt + G X_T^2 ]

The optimal control is the fixed point of forward state -> adjoint ->
feedback, solved here by damped Picard iteration.  With no delay coupling
(``B = P = F = N = S = 0``) the problem is classical and
:func:`riccati_reference` gives an independent feedback oracle.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import List, Tuple, Union

import numpy as np

from . import kernels
from .absde import AbsdeProblem, solve_absde
from .coefficients import CoefficientSet
from .delay import DelaySpec, pseudo_inverse, realize_delay
from .errors import ConfigurationError, ConvergenceError
from .forward import ControlProcess, DelayedReader, StateEnsemble, _check_finite
from .regression import Conditioning, RegressionBasis
from .rng import STREAM_PERTURBATION, stream_generator
from .smp import CostEstimate, _range_sums

log = logging.getLogger(__name__)

Coef = Union[float, Tuple[float, ...]]

TIME_FUNCTIONS = ("A", "B", "C", "P", "D", "F", "H", "N", "Q", "S", "R")
DELAY_COUPLING = ("B", "P", "F", "N", "S")


def _poly(value):
    """Constant or polynomial coefficient list ``(c0, c1, ...)`` in ``t``."""
    if np.isscalar(value):
        return (float(value),)
    out = tuple(float(c) for c in value)
    if not out:
        raise ConfigurationError("polynomial coefficient lists must be non-empty")
    return out


@dataclass(frozen=True)
class LQCoefficients:
    A: Coef = 0.0
    B: Coef = 0.0
    C: Coef = 0.0
    P: Coef = 0.0
    D: Coef = 0.0
    F: Coef = 0.0
    H: Coef = 0.0
    N: Coef = 0.0
    Q: Coef = 0.0
    S: Coef = 0.0
    R: Coef = 1.0
    G: float = 1.0
    a: float = 0.5
    x0: float = 1.0
    delta: float = 1e-6

    def __post_init__(self):
        for name in TIME_FUNCTIONS:
            poly = _poly(getattr(self, name))
            if not all(np.isfinite(poly)):
                raise ConfigurationError(f"coefficient {name} must be finite")
            object.__setattr__(self, name, poly)
        for name in ("G", "a", "x0", "delta"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ConfigurationError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if not 0 < self.a <= 1:
            raise ConfigurationError("a must lie in (0,1]")
        if self.G < 0:
            raise ConfigurationError("G must be >= 0")
        if self.delta <= 0:
            raise ConfigurationError("delta must be positive")

    def value(self, name, t):
        return np.polynomial.polynomial.polyval(t, getattr(self, name))

    def on_grid(self, name, grid):
        return np.asarray(self.value(name, grid.nodes), dtype=np.float64) * np.ones(len(grid))

    def validate(self, grid):
        """Check the sign conditions at the grid nodes."""
        for name in ("Q", "S"):
            if (self.on_grid(name, grid) < 0).any():
                raise ConfigurationError(f"{name} must be >= 0 on the grid")
        if (self.on_grid("R", grid) < self.delta).any():
            raise ConfigurationError(f"R must be >= delta={self.delta:g} on the grid")
        return self

    @property
    def delay_coupled(self):
        return any(getattr(self, k) != (0.0,) * len(getattr(self, k)) for k in DELAY_COUPLING)

    def delay(self, grid):
        return realize_delay(DelaySpec.proportional(self.a), grid)

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return LQCoefficients(**values)

    def as_coefficients(self):
        """Equivalent general :class:`CoefficientSet` with analytic partials."""
        c = {k: (lambda t, _k=k: self.value(_k, t)) for k in TIME_FUNCTIONS}
        G = self.G

        def b(t, x, y, u, v):
            return c["A"](t) * x + c["B"](t) * y + c["C"](t) * u + c["P"](t) * v

        def sigma(t, x, y, u, v):
            return c["D"](t) * x + c["F"](t) * y + c["H"](t) * u + c["N"](t) * v

        def f(t, x, y, u, v):
            return 0.5 * (c["Q"](t) * x * x + c["S"](t) * y * y + c["R"](t) * u * u)

        def g(x):
            return 0.5 * G * x * x

        def const(name):
            return lambda t, x, y, u, v: c[name](t) + 0.0 * x

        partials = {
            "b_x": const("A"), "b_y": const("B"), "b_u": const("C"), "b_v": const("P"),
            "sigma_x": const("D"), "sigma_y": const("F"), "sigma_u": const("H"),
            "sigma_v": const("N"),
            "f_x": lambda t, x, y, u, v: c["Q"](t) * x,
            "f_y": lambda t, x, y, u, v: c["S"](t) * y,
            "f_u": lambda t, x, y, u, v: c["R"](t) * u,
            "f_v": lambda t, x, y, u, v: 0.0 * v,
            "g_x": lambda x: G * x,
        }
        return CoefficientSet(b, sigma, f, g, partials)


def lq_forward(lq, control, bundle, threads=None, backend=None):
    """Euler ensemble of the LQ state equation (compiled kernel when available)."""
    grid = bundle.grid
    delay = lq.delay(grid)
    control.broadcast(bundle.n_paths)
    n = grid.n_steps
    names = dict(ax="A", ay="B", au="C", av="P", sx="D", sy="F", su="H", sv="N")
    coefs = {k: lq.on_grid(v, grid)[:n] for k, v in names.items()}
    X = kernels.linear_delay_euler(lq.x0, coefs, delay.tau_idx, control.values, bundle.dW,
                                   grid.dt, threads=threads, backend=backend)
    for i in range(n + 1):
        _check_finite(X[i], i)
    return StateEnsemble(grid, X, delay, control, bundle, lq.x0)


def lq_cost(lq, state, control):
    """``1/2 E[sum_i (Q X_i^2 + S X_{tau_i}^2 + R u_i^2) dt + G X_T^2]``."""
    grid = state.grid
    n = state.n_paths
    Q, S, R = (lq.on_grid(k, grid) for k in ("Q", "S", "R"))
    reader = DelayedReader(state.delay, n)
    X, U = state.X, control.values
    running = np.zeros(n)
    for i in range(grid.n_steps):
        y = reader.read(X, i)
        running += 0.5 * (Q[i] * X[i] * X[i] + S[i] * y * y + R[i] * U[i] * U[i]) * grid.dt
    return CostEstimate.from_samples(running + 0.5 * lq.G * X[-1] * X[-1])


def lq_adjoint(lq, star, bundle=None, basis=None):
    """Adjoint pair for the LQ problem along ``star``.

    ``h(i, p, q) = A p + D q + Q X*_i`` and, at anticipated nodes ``j``,
    ``l(j, p, q) = B p + F q + S X*_{tau_j}``; ``p_T = G X*_T``.
    """
    bundle = star.bundle if bundle is None else bundle
    basis = RegressionBasis() if basis is None else basis
    grid = star.grid
    A, D, Q, B, F, S = (lq.on_grid(k, grid) for k in ("A", "D", "Q", "B", "F", "S"))
    X = star.X
    reader = DelayedReader(star.delay, star.n_paths)

    def driver(i, p, q):
        return A[i] * p + D[i] * q + Q[i] * X[i]

    def anticipation(j, p, q):
        return B[j] * p + F[j] * q + S[j] * reader.read(X, j)

    problem = AbsdeProblem(grid, driver, lq.G * X[-1], anticipation, pseudo_inverse(star.delay))
    return solve_absde(problem, bundle, star, basis)


def _anticipated_feedback(lq, adjoint, star, basis):
    """``E_i[sum_{j: tau_j = i} (P_j p_j + N_j q_j)]`` with ``p_j = E_j[p_{j+1}]``."""
    grid = star.grid
    n = star.n_paths
    N = grid.n_steps
    if all(c == 0.0 for c in lq.P + lq.N):
        return np.zeros((N, 1))
    Pc, Nc = lq.on_grid("P", grid), lq.on_grid("N", grid)
    vals = Pc[:N, None] * adjoint.y_pred + Nc[:N, None] * adjoint.z
    inv = pseudo_inverse(star.delay)
    sums = _range_sums(vals, inv, n)
    cap = inv.capped
    i = np.arange(N)[:, None]
    local = ((cap[:-1] >= i) & (cap[1:] <= i + 1)).all(axis=1)
    cond = Conditioning(star.bundle, star)
    variables = cond.resolve(basis)
    for k in range(N):
        if not local[k]:
            sums[k] = cond.fit(k, sums[k], basis, variables).fitted
    return sums


def lq_feedback(lq, adjoint, basis, star):
    """``u_i = -(C P_i + H q_i + E_i[sum_{j: tau_j = i} (P_j P_j^* + N_j q_j)]) / R_i``.

    ``P_i = E_i[p_{i+1}]`` is the ``y_pred`` row of the adjoint.
    """
    grid = star.grid
    N = grid.n_steps
    R = lq.on_grid("R", grid)[:N]
    if (R < lq.delta).any():
        raise ConfigurationError(f"R must be >= delta={lq.delta:g} on the grid")
    C, H = lq.on_grid("C", grid)[:N], lq.on_grid("H", grid)[:N]
    ant = _anticipated_feedback(lq, adjoint, star, basis)
    u = -(C[:, None] * adjoint.y_pred + H[:, None] * adjoint.z + ant) / R[:, None]
    return ControlProcess(grid, u)


def feedback_residual(lq, control, adjoint, basis, star):
    """Sup-node L2(paths) norm of ``R u + C P + H q + anticipated terms``."""
    grid = star.grid
    N = grid.n_steps
    R = lq.on_grid("R", grid)[:N]
    C, H = lq.on_grid("C", grid)[:N], lq.on_grid("H", grid)[:N]
    ant = _anticipated_feedback(lq, adjoint, star, basis)
    r = (R[:, None] * control.broadcast(star.n_paths) + C[:, None] * adjoint.y_pred
         + H[:, None] * adjoint.z + ant)
    return float(np.max(np.sqrt(np.mean(r ** 2, axis=1))))


def control_distance(u1, u2, n_paths):
    """``sqrt(E sum_i |u1_i - u2_i|^2 dt)``."""
    d = u1.broadcast(n_paths) - u2.broadcast(n_paths)
    return float(np.sqrt(np.sum(np.mean(d ** 2, axis=1)) * u1.grid.dt))


@dataclass(eq=False)
class LQSolution:
    control: ControlProcess
    state: StateEnsemble
    adjoint: object
    cost: CostEstimate
    changes: List[float] = field(default_factory=list)
    costs: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.changes)


def lq_solve(lq, bundle, basis=None, k_max=50, tol=1e-4, damping=0.5, u0=None,
             threads=None, raise_on_fail=True):
    """Damped Picard iteration on forward -> adjoint -> feedback.

    The change norm is the sup-node L2(paths) distance between the feedback
    control and the control that produced it; on convergence the returned
    control is the input of the last sweep, so state and adjoint are exactly
    the ones it generates.
    """
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    if not 0 < damping <= 1:
        raise ConfigurationError("damping must lie in (0,1]")
    basis = RegressionBasis() if basis is None else basis
    grid = bundle.grid
    lq.validate(grid)
    n = bundle.n_paths
    if u0 is None:
        u = ControlProcess.constant(grid, 0.0)
    elif isinstance(u0, ControlProcess):
        u = u0
    else:
        u = ControlProcess(grid, np.broadcast_to(np.asarray(u0, dtype=float), (grid.n_steps, 1)).copy())
    changes, costs = [], []
    for _ in range(k_max):
        state = lq_forward(lq, u, bundle, threads=threads)
        cost = lq_cost(lq, state, u)
        costs.append(cost.value)
        adjoint = lq_adjoint(lq, state, bundle, basis)
        new = lq_feedback(lq, adjoint, basis, state)
        diff = new.values - u.broadcast(n)
        change = float(np.max(np.sqrt(np.mean(diff ** 2, axis=1))))
        changes.append(change)
        if not np.isfinite(change) or (len(changes) > 3 and change > 1e6 * changes[0]):
            raise ConvergenceError(
                "LQ fixed-point iteration diverged; the damped step is stable only while "
                "damping * (largest cost curvature / R) < 2, so reduce damping", changes)
        if change <= tol:
            _log_cost_trace(costs)
            return LQSolution(u, state, adjoint, cost, changes, costs, True)
        u = ControlProcess(grid, u.broadcast(n) + damping * diff)
    if raise_on_fail:
        raise ConvergenceError(
            f"LQ iteration did not reach tol={tol:g} in {k_max} iterations", changes)
    return LQSolution(u, state, adjoint, cost, changes, costs, False)


def _log_cost_trace(costs, burn_in=2):
    tail = np.asarray(costs[burn_in:])
    if tail.size > 1 and (np.diff(tail) > 1e-12 * np.abs(tail[:-1]).max()).any():
        log.info("LQ cost estimates were not monotone after burn-in: %s", tail.tolist())


@dataclass(eq=False)
class RiccatiReference:
    """Feedback ``u = gain(t) x`` from the scalar Riccati equation."""

    grid: object
    K: np.ndarray
    gain: np.ndarray
    fine_K: np.ndarray = field(repr=False)

    def control_on(self, state):
        """Feedback control evaluated along an existing state ensemble."""
        return ControlProcess(self.grid, self.gain[:, None] * state.X[:-1])

    def closed_loop(self, lq, bundle):
        """Euler simulation of the state under the Riccati feedback."""
        grid = self.grid
        A, C, D, H = (lq.on_grid(k, grid) for k in ("A", "C", "D", "H"))
        X = np.empty((grid.n_steps + 1, bundle.n_paths))
        X[0] = lq.x0
        for i in range(grid.n_steps):
            u = self.gain[i] * X[i]
            X[i + 1] = X[i] + (A[i] * X[i] + C[i] * u) * grid.dt + (D[i] * X[i] + H[i] * u) * bundle.dW[i]
        control = ControlProcess(grid, self.gain[:, None] * X[:-1])
        return StateEnsemble(grid, X, lq.delay(grid), control, bundle, lq.x0)


def riccati_reference(lq, grid, fine_steps=2 ** 20, backend=None):
    """Scalar Riccati oracle for the LQ problem without delay coupling.

    Integrates ``-K' = 2 A K + D^2 K + Q - ((C + D H) K)^2 / (R + H^2 K)``,
    ``K(T) = G``, by explicit backward Euler on at least ``fine_steps``
    substeps; the feedback gain is ``-(C + D H) K / (R + H^2 K)``.
    """
    if lq.delay_coupled:
        raise ConfigurationError("riccati_reference needs B = P = F = N = S = 0")
    sub = max(1, math.ceil(fine_steps / grid.n_steps))
    M = grid.n_steps * sub
    h = grid.T / M
    t = np.arange(M + 1) * h
    t[-1] = grid.T
    coefs = {k: np.asarray(lq.value(k, t), dtype=float) * np.ones(M + 1) for k in "ACDHQR"}
    fine = kernels.riccati_backward(lq.G, coefs, h, backend=backend)
    K = fine[::sub].copy()
    Cg, Dg, Hg, Rg = (lq.on_grid(k, grid) for k in ("C", "D", "H", "R"))
    gain = -(Cg + Dg * Hg) * K / (Rg + Hg * Hg * K)
    return RiccatiReference(grid, K, gain[:-1], fine)


@dataclass
class CertificateRow:
    index: int
    eps: float
    diff: float
    stderr: float

    @property
    def passed(self):
        return self.diff >= -3.0 * self.stderr


@dataclass
class CertificateReport:
    rows: List[CertificateRow]
    midpoint_lhs: float
    midpoint_rhs: float
    convexity_bound: float

    @property
    def min_diff(self):
        return min(r.diff for r in self.rows)

    @property
    def midpoint_residual(self):
        return abs(self.midpoint_lhs - self.midpoint_rhs) / max(abs(self.midpoint_rhs), 1e-300)

    @property
    def passed(self):
        return all(r.passed for r in self.rows) and self.midpoint_residual <= 1e-10


def _direction(gen, grid):
    c = gen.standard_normal(3)
    s = grid.nodes[:-1] / grid.T
    return ControlProcess(grid, c[0] + c[1] * s + c[2] * np.sin(np.pi * s))


def optimality_certificate(lq, solution, bundle=None, n_perturbations=20,
                           eps_list=(0.1, 0.01), seed=0):
    """Convexity checks around a solved control under common noise.

    For random deterministic directions ``v`` and each ``eps``, compares
    ``J(u* + eps v)`` with ``J(u*)`` path by path.  The midpoint identity
    ``J(u1) + J(u2) - 2 J(mid) = E[sum (Q dX^2 + S dX_a^2 + R du^2) dt + G dX_T^2]``
    (half-differences ``d``) is evaluated for ``u1 = u*``, ``u2 = u* + v``.
    """
    bundle = solution.state.bundle if bundle is None else bundle
    if bundle is not solution.state.bundle and bundle.n_paths != solution.state.n_paths:
        raise ConfigurationError("certificate bundle must match the solution's paths")
    grid = bundle.grid
    n = bundle.n_paths
    u_star = solution.control
    star = lq_forward(lq, u_star, bundle)
    j_star = lq_cost(lq, star, u_star).samples
    gen = stream_generator(seed, STREAM_PERTURBATION)
    rows, first = [], None
    base = u_star.broadcast(n)
    for k in range(n_perturbations):
        v = _direction(gen, grid)
        first = v if first is None else first
        for eps in eps_list:
            u = ControlProcess(grid, base + eps * v.values)
            d = lq_cost(lq, lq_forward(lq, u, bundle), u).samples - j_star
            est = CostEstimate.from_samples(d)
            rows.append(CertificateRow(k, float(eps), est.value, est.stderr))

    if first is None:
        first = ControlProcess.constant(grid, 1.0)
    u1, u2 = u_star, ControlProcess(grid, base + first.values)
    mid = ControlProcess(grid, 0.5 * (u1.broadcast(n) + u2.values))
    x1, x2 = star, lq_forward(lq, u2, bundle)
    xm = lq_forward(lq, mid, bundle)
    J = lambda s, u: lq_cost(lq, s, u).samples
    lhs = float(np.mean(J(x1, u1) + J(x2, u2) - 2 * J(xm, mid)))
    Q, S, R = (lq.on_grid(k, grid) for k in ("Q", "S", "R"))
    reader = DelayedReader(star.delay, n)
    dX = 0.5 * (x1.X - x2.X)
    du = 0.5 * (u1.broadcast(n) - u2.values)
    acc = np.zeros(n)
    bound = 0.0
    for i in range(grid.n_steps):
        dy = reader.read(dX, i)
        acc += (Q[i] * dX[i] ** 2 + S[i] * dy ** 2 + R[i] * du[i] ** 2) * grid.dt
        bound += lq.delta * float(np.mean((2 * du[i]) ** 2)) * grid.dt / 4
    acc += lq.G * dX[-1] ** 2
    return CertificateReport(rows, lhs, float(np.mean(acc)), bound)
