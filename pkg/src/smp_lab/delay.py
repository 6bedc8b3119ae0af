"""Time grid, delay maps and their pseudo-inverses.

All processes live on a uniform grid ``t_i = i * dt``.  A delay ``tau(t)`` is
projected down onto the grid (largest node not after ``tau(t_i)``), which
keeps delayed reads adapted.  Its pseudo-inverse ``theta(t) = inf{s : tau(s) >= t}``
indexes the future node read by the anticipated term of the adjoint equation.

Index arrays are time-major with shape ``(n_steps + 1, m)`` where ``m`` is 1
for a deterministic (shared) delay and ``n_paths`` for a random one.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .parallel import path_blocks, run_blocks
from .rng import STREAM_DELAY, block_generator

# Relative slack used when flooring tau(t_i)/dt so exact nodes do not round down.
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise ConfigurationError(f"horizon T must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ConfigurationError(f"n_steps must be an integer >= 2, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self):
        return self.T / self.n_steps

    @property
    def nodes(self):
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t

    def __len__(self):
        return self.n_steps + 1


def make_time_grid(T, n_steps):
    return TimeGrid(float(T), n_steps)


DELAY_KINDS = ("proportional", "fixed-lag", "random-slope", "piecewise-jump")


@dataclass(frozen=True)
class DelaySpec:
    """Delay family and parameters.

    ``proportional``: tau(t) = a*t with 0 < a <= 1.
    ``fixed-lag``: tau(t) = max(t - lag, 0) with 0 <= lag <= T.
    ``random-slope``: tau(t) = A*t with A ~ U[a_lo, a_hi] drawn once per path.
    ``piecewise-jump``: tau(t) = min(t, step * N_t) with N_t a Poisson
    counting process of intensity ``rate``.
    """

    kind: str
    a: Optional[float] = None
    lag: Optional[float] = None
    a_lo: Optional[float] = None
    a_hi: Optional[float] = None
    rate: Optional[float] = None
    step: Optional[float] = None

    @classmethod
    def proportional(cls, a):
        return cls("proportional", a=a)

    @classmethod
    def fixed_lag(cls, lag):
        return cls("fixed-lag", lag=lag)

    @classmethod
    def random_slope(cls, a_lo, a_hi):
        return cls("random-slope", a_lo=a_lo, a_hi=a_hi)

    @classmethod
    def piecewise_jump(cls, rate, step):
        return cls("piecewise-jump", rate=rate, step=step)

    @classmethod
    def none(cls):
        return cls("proportional", a=1.0)

    @property
    def is_random(self):
        return self.kind in ("random-slope", "piecewise-jump")

    def validate(self, T=None):
        kind = self.kind
        if kind not in DELAY_KINDS:
            raise ConfigurationError(f"unknown delay kind {kind!r}; expected one of {DELAY_KINDS}")
        if kind == "proportional":
            _need(self.a, "a")
            if not 0 < self.a <= 1:
                raise ConfigurationError("a must lie in (0,1]")
        elif kind == "fixed-lag":
            _need(self.lag, "lag")
            if self.lag < 0 or (T is not None and self.lag > T):
                raise ConfigurationError("lag must lie in [0,T]")
        elif kind == "random-slope":
            _need(self.a_lo, "a_lo")
            _need(self.a_hi, "a_hi")
            if not 0 < self.a_lo <= self.a_hi <= 1:
                raise ConfigurationError("random-slope needs 0 < a_lo <= a_hi <= 1")
        else:
            _need(self.rate, "rate")
            _need(self.step, "step")
            if self.rate < 0 or self.step <= 0:
                raise ConfigurationError("piecewise-jump needs rate >= 0 and step > 0")
        return self


def _need(value, name):
    if value is None:
        raise ConfigurationError(f"delay parameter {name!r} is required")
    if not np.isfinite(value):
        raise ConfigurationError(f"delay parameter {name!r} must be finite")


@dataclass(frozen=True, eq=False)
class DelayMap:
    """Grid-projected delay.

    ``tau_idx[i, p]`` is the node read as ``X_{tau(t_i)}`` on path ``p``;
    a single column is broadcast over all paths when ``shared`` is true.
    """

    grid: TimeGrid
    tau_idx: np.ndarray
    shared: bool
    spec: Optional[DelaySpec] = None

    def __post_init__(self):
        idx = np.asarray(self.tau_idx, dtype=np.int64)
        if idx.ndim == 1:
            idx = idx[:, None]
        if idx.shape[0] != self.grid.n_steps + 1:
            raise ConfigurationError("tau_idx must have one row per grid node")
        i = np.arange(idx.shape[0])[:, None]
        if (idx < 0).any() or (idx > i).any():
            raise ConfigurationError("delay must satisfy 0 <= tau_idx[i] <= i")
        if (np.diff(idx, axis=0) < 0).any():
            raise ConfigurationError("delay must be nondecreasing")
        idx.setflags(write=False)
        object.__setattr__(self, "tau_idx", idx)

    @property
    def n_columns(self):
        return self.tau_idx.shape[1]

    def path(self, p=0):
        """1-D index array for path ``p``."""
        return self.tau_idx[:, 0 if self.shared else p]

    def broadcast(self, n_paths):
        if not self.shared and self.n_columns != n_paths:
            raise ConfigurationError(
                f"delay realized for {self.n_columns} paths, ensemble has {n_paths}")
        return np.broadcast_to(self.tau_idx, (self.tau_idx.shape[0], n_paths))

    def tau_times(self):
        return self.tau_idx * self.grid.dt

    @property
    def is_identity(self):
        return bool((self.tau_idx == np.arange(self.tau_idx.shape[0])[:, None]).all())


def identity_delay(grid):
    return DelayMap(grid, np.arange(grid.n_steps + 1), shared=True, spec=DelaySpec.none())


def project_floor(tau_values, grid):
    """Largest node index ``j`` with ``t_j <= tau``, row ``i`` capped at ``i``."""
    tau_values = np.asarray(tau_values, dtype=np.float64)
    raw = np.floor(tau_values / grid.dt + _FLOOR_SLACK).astype(np.int64)
    i = np.arange(grid.n_steps + 1).reshape((-1,) + (1,) * (raw.ndim - 1))
    return np.clip(raw, 0, i)


def realize_delay(spec, grid, n_paths=1, seed=0, threads=None):
    """Project ``spec`` onto ``grid``; random kinds get one column per path.

    Random delays use the delay stream of ``seed``, which shares no state with
    the Brownian stream.
    """
    spec.validate(grid.T)
    t = grid.nodes
    if spec.kind == "proportional":
        return DelayMap(grid, project_floor(spec.a * t, grid), True, spec)
    if spec.kind == "fixed-lag":
        return DelayMap(grid, project_floor(np.maximum(t - spec.lag, 0.0), grid), True, spec)
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")

    idx = np.empty((grid.n_steps + 1, n_paths), dtype=np.int64)

    def work(a, b):
        gen = block_generator(seed, STREAM_DELAY, a)
        rows = b - a
        if spec.kind == "random-slope":
            slope = gen.uniform(spec.a_lo, spec.a_hi, size=rows)
            if spec.a_lo == spec.a_hi:
                slope[:] = spec.a_lo
            tau = slope[None, :] * t[:, None]
        else:
            jumps = gen.poisson(spec.rate * grid.dt, size=(rows, grid.n_steps))
            counts = np.zeros((grid.n_steps + 1, rows))
            counts[1:] = np.cumsum(jumps, axis=1).T
            tau = np.minimum(t[:, None], spec.step * counts)
        idx[:, a:b] = project_floor(tau, grid)

    run_blocks(work, path_blocks(n_paths), threads)
    return DelayMap(grid, idx, False, spec)


@dataclass(frozen=True, eq=False)
class InverseDelayMap:
    """Pseudo-inverse of a grid delay.

    ``theta_idx[i, p] = min{j : tau_idx[j, p] >= i}``, equal to ``beyond``
    (``n_steps + 1``) when no node qualifies.  ``dtheta[i, p]`` for
    ``i < n_steps`` is the length of ``[theta(t_i), theta(t_{i+1}))`` with both
    ends capped at ``T``; it equals ``dt`` times the number of nodes ``j < n_steps``
    whose delayed read is node ``i``.
    """

    grid: TimeGrid
    theta_idx: np.ndarray
    shared: bool
    delay: Optional[DelayMap] = field(default=None, repr=False)

    def __post_init__(self):
        th = np.asarray(self.theta_idx, dtype=np.int64)
        if th.ndim == 1:
            th = th[:, None]
        th.setflags(write=False)
        object.__setattr__(self, "theta_idx", th)

    @property
    def beyond(self):
        return self.grid.n_steps + 1

    @property
    def capped(self):
        """``theta_idx`` with BEYOND (and anything past T) capped at ``n_steps``."""
        return np.minimum(self.theta_idx, self.grid.n_steps)

    @property
    def dtheta(self):
        c = self.capped
        return (c[1:] - c[:-1]) * self.grid.dt

    def path(self, p=0):
        return self.theta_idx[:, 0 if self.shared else p]

    def broadcast_capped(self, n_paths):
        c = self.capped
        return np.broadcast_to(c, (c.shape[0], n_paths))


def pseudo_inverse(delay, grid=None, threads=None):
    grid = delay.grid if grid is None else grid
    theta = kernels.pseudo_inverse_index(delay.tau_idx, threads=threads)
    return InverseDelayMap(grid, theta, delay.shared, delay)
