"""Forward simulation of the controlled delayed SDE.

``dX = b(t, X_t, X_{tau(t)}, u_t, u_{tau(t)}) dt + sigma(...) dW`` is
discretized with Euler--Maruyama on the grid; delayed state and control reads
both use the floor-projected delay.  The Picard construction of the
existence proof is available as :func:`picard_solve`.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .brownian import BrownianBundle
from .delay import DelayMap, TimeGrid
from .errors import BlowUpError, ConfigurationError, ConvergenceError


@dataclass(frozen=True, eq=False)
class ControlProcess:
    """Control values ``u[i, p]`` at the left end of each grid interval.

    Shape is ``(n_steps, m)`` with ``m == 1`` for a path-independent
    (deterministic) control.  Only nodes ``0..n_steps-1`` enter the dynamics
    and the running cost, so no value is stored for ``t = T``.
    """

    grid: TimeGrid
    values: np.ndarray
    u_min: float = -np.inf
    u_max: float = np.inf

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 0:
            vals = np.full((self.grid.n_steps, 1), float(vals))
        elif vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_steps:
            raise ConfigurationError(
                f"control needs {self.grid.n_steps} rows (one per interval), got {vals.shape[0]}")
        if self.u_min > self.u_max:
            raise ConfigurationError("u_min must not exceed u_max")
        if not np.isfinite(vals).all():
            raise ConfigurationError("control values must be finite")
        if (vals < self.u_min).any() or (vals > self.u_max).any():
            raise ConfigurationError("control leaves the admissible interval [u_min, u_max]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid, c, u_min=-np.inf, u_max=np.inf):
        return cls(grid, np.full((grid.n_steps, 1), float(c)), u_min, u_max)

    @classmethod
    def from_function(cls, grid, fn, u_min=-np.inf, u_max=np.inf):
        """Deterministic open-loop control ``u_i = fn(t_i)``."""
        t = grid.nodes[:-1]
        vals = np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape)
        return cls(grid, vals.copy(), u_min, u_max)

    @property
    def shared(self):
        return self.values.shape[1] == 1

    def broadcast(self, n_paths):
        if not self.shared and self.values.shape[1] != n_paths:
            raise ConfigurationError(
                f"control has {self.values.shape[1]} paths, ensemble has {n_paths}")
        return np.broadcast_to(self.values, (self.grid.n_steps, n_paths))

    def with_values(self, values):
        return ControlProcess(self.grid, values, self.u_min, self.u_max)

    def padded(self, n_paths):
        """Values with a copy of the last row appended so index ``n_steps`` is valid."""
        full = self.broadcast(n_paths)
        return np.concatenate([full, full[-1:]], axis=0)


class DelayedReader:
    """Reads ``arr[tau_idx[i, p], p]`` for each path at node ``i``."""

    def __init__(self, delay, n_paths):
        self.n_paths = n_paths
        self.shared = delay.shared
        self.tau = delay.tau_idx if delay.shared else delay.broadcast(n_paths)
        self.cols = np.arange(n_paths)

    def index(self, i):
        return self.tau[i, 0] if self.shared else self.tau[i]

    def read(self, arr, i):
        """``arr`` is time-major; columns may be 1 (broadcast) or n_paths."""
        if self.shared:
            return arr[self.tau[i, 0]]
        if arr.shape[1] == 1:
            return arr[self.tau[i], 0]
        return arr[self.tau[i], self.cols]


@dataclass(frozen=True, eq=False)
class StateEnsemble:
    """Simulated state ``X[i, p]`` with references to its inputs."""

    grid: TimeGrid
    X: np.ndarray
    delay: DelayMap
    control: ControlProcess
    bundle: BrownianBundle
    x0: float

    @property
    def n_paths(self):
        return self.X.shape[1]

    def delayed(self):
        """``X_{tau(t_i)}`` for every node, shape ``(n_steps + 1, n_paths)``."""
        reader = DelayedReader(self.delay, self.n_paths)
        return np.stack([reader.read(self.X, i) for i in range(self.grid.n_steps + 1)])


@dataclass
class PicardDiagnostics:
    gaps: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    tolerance: float = 0.0

    @property
    def ratios(self):
        g = np.asarray(self.gaps)
        with np.errstate(divide="ignore", invalid="ignore"):
            return g[1:] / g[:-1]


def _check_inputs(control, delay, bundle):
    grid = bundle.grid
    if control.grid != grid or delay.grid != grid:
        raise ConfigurationError("control, delay and Brownian bundle must share one grid")
    control.broadcast(bundle.n_paths)
    delay.broadcast(bundle.n_paths)
    return grid


def _check_finite(row, step, what="state"):
    if not np.isfinite(row).all():
        bad = int(np.flatnonzero(~np.isfinite(row))[0]) if np.ndim(row) else 0
        raise BlowUpError(f"non-finite {what} at path {bad}, step {step}", path=bad, step=step)


def euler_maruyama(coeffs, control, delay, bundle, x0):
    """Euler--Maruyama path ensemble for the delayed controlled SDE."""
    grid = _check_inputs(control, delay, bundle)
    n = bundle.n_paths
    dt = grid.dt
    t = grid.nodes
    dW = bundle.dW
    U = control.values
    reader = DelayedReader(delay, n)
    X = np.empty((grid.n_steps + 1, n))
    X[0] = x0
    for i in range(grid.n_steps):
        x = X[i]
        y = reader.read(X, i)
        u = U[i]
        v = reader.read(U, i)
        drift = coeffs.b(t[i], x, y, u, v)
        diff = coeffs.sigma(t[i], x, y, u, v)
        X[i + 1] = x + drift * dt + diff * dW[i]
        _check_finite(X[i + 1], i + 1)
    return StateEnsemble(grid, X, delay, control, bundle, float(x0))


def picard_solve(coeffs, control, delay, bundle, x0, k_max=50, tol=1e-18, initial=None,
                 raise_on_fail=True):
    """Picard iteration with the previous iterate inside the coefficients.

    ``X^{k+1}_{i+1} = X^{k+1}_i + b(t_i, X^k_i, X^k_{tau_i}, ...) dt + sigma(...) dW_i``
    starting from ``X^0 = initial`` (default: ``x0`` everywhere).  The gap is
    ``max_i mean_p |X^{k+1}_i - X^k_i|^2``.  On the grid the iteration reaches
    the Euler solution exactly after at most ``n_steps + 1`` sweeps.
    """
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    grid = _check_inputs(control, delay, bundle)
    n = bundle.n_paths
    dt = grid.dt
    t = grid.nodes
    dW = bundle.dW
    U = control.values
    reader = DelayedReader(delay, n)

    prev = np.empty((grid.n_steps + 1, n))
    prev[...] = x0 if initial is None else initial
    diag = PicardDiagnostics(tolerance=tol)
    for _ in range(k_max):
        new = np.empty_like(prev)
        new[0] = x0
        gap = float(np.mean((new[0] - prev[0]) ** 2))
        for i in range(grid.n_steps):
            x = prev[i]
            y = reader.read(prev, i)
            u = U[i]
            v = reader.read(U, i)
            drift = coeffs.b(t[i], x, y, u, v)
            diff = coeffs.sigma(t[i], x, y, u, v)
            new[i + 1] = new[i] + drift * dt + diff * dW[i]
            _check_finite(new[i + 1], i + 1)
            gap = max(gap, float(np.mean((new[i + 1] - prev[i + 1]) ** 2)))
        diag.gaps.append(gap)
        diag.iterations += 1
        prev = new
        if gap <= tol:
            diag.converged = True
            break
    if not diag.converged and raise_on_fail:
        raise ConvergenceError(
            f"Picard iteration did not reach tol={tol:g} in {k_max} iterations", diag.gaps)
    return StateEnsemble(grid, prev, delay, control, bundle, float(x0)), diag
