"""Brownian increment ensembles with per-path reproducible streams."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .delay import TimeGrid
from .errors import ConfigurationError
from .parallel import PATH_BLOCK, path_blocks, run_blocks
from .rng import STREAM_BROWNIAN, block_generator, check_seed


@dataclass(frozen=True, eq=False)
class BrownianBundle:
    """Increments ``dW[i, p] = W_{t_{i+1}} - W_{t_i}`` on path ``p``.

    Path ``p`` only depends on ``(master_seed, p, n_steps)``: regenerating
    with more paths, fewer paths or another worker count leaves it unchanged.
    """

    grid: TimeGrid
    dW: np.ndarray
    master_seed: int

    @property
    def n_paths(self):
        return self.dW.shape[1]

    @cached_property
    def W(self):
        W = np.zeros((self.grid.n_steps + 1, self.n_paths))
        np.cumsum(self.dW, axis=0, out=W[1:])
        W.setflags(write=False)
        return W

    def substream(self, p):
        """Identifier of the counter slot that generated path ``p``."""
        block, row = divmod(p, PATH_BLOCK)
        return (self.master_seed, STREAM_BROWNIAN, block, row)

    def subset(self, paths):
        """Bundle restricted to a slice or index array of paths."""
        return BrownianBundle(self.grid, np.ascontiguousarray(self.dW[:, paths]), self.master_seed)


def sample_brownian(grid, n_paths, master_seed, threads=None):
    if int(n_paths) != n_paths or n_paths < 1:
        raise ConfigurationError(f"n_paths must be a positive integer, got {n_paths}")
    n_paths = int(n_paths)
    master_seed = check_seed(master_seed)
    dW = np.empty((grid.n_steps, n_paths))
    scale = np.sqrt(grid.dt)

    def work(a, b):
        gen = block_generator(master_seed, STREAM_BROWNIAN, a)
        # row-major per path so each path's draws are independent of later paths
        z = gen.standard_normal((b - a, grid.n_steps))
        dW[:, a:b] = (z * scale).T

    run_blocks(work, path_blocks(n_paths), threads)
    dW.setflags(write=False)
    return BrownianBundle(grid, dW, master_seed)


def deterministic_bundle(grid, n_paths=1):
    """Bundle of zero increments, for noiseless runs."""
    dW = np.zeros((grid.n_steps, n_paths))
    dW.setflags(write=False)
    return BrownianBundle(grid, dW, 0)
