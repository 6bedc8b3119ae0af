import numpy as np
import pytest

from smp_lab.brownian import deterministic_bundle, sample_brownian
from smp_lab.delay import make_time_grid
from smp_lab.errors import ConfigurationError


def test_same_seed_is_bit_identical():
    g = make_time_grid(1, 30)
    a = sample_brownian(g, 1000, 77)
    b = sample_brownian(g, 1000, 77)
    assert a.dW.tobytes() == b.dW.tobytes()
    assert not np.array_equal(a.dW, sample_brownian(g, 1000, 78).dW)


@pytest.mark.parametrize("threads", [1, 4, 8])
def test_thread_count_does_not_change_paths(threads):
    g = make_time_grid(1, 25)
    ref = sample_brownian(g, 3000, 9, threads=1).dW
    assert np.array_equal(sample_brownian(g, 3000, 9, threads=threads).dW, ref)


def test_path_depends_only_on_its_index():
    g = make_time_grid(1, 25)
    small = sample_brownian(g, 300, 4)
    large = sample_brownian(g, 1500, 4)
    assert np.array_equal(small.dW, large.dW[:, :300])
    assert small.substream(299) == large.substream(299)
    assert large.substream(256)[2:] == (1, 0)


def test_increment_moments():
    g = make_time_grid(1, 100)
    b = sample_brownian(g, 100_000, 2024)
    n = b.n_paths
    mean = b.dW.mean(axis=1)
    var = b.dW.var(axis=1, ddof=1)
    assert np.all(np.abs(mean) <= 5 * np.sqrt(g.dt / n))
    # var of the sample variance of a Gaussian: 2 sigma^4 / (n - 1)
    assert np.all(np.abs(var - g.dt) <= 5 * g.dt * np.sqrt(2 / (n - 1)))


def test_single_path_and_zero_paths():
    g = make_time_grid(1, 10)
    b = sample_brownian(g, 1, 0)
    assert b.dW.shape == (10, 1)
    assert b.W[0, 0] == 0 and np.isclose(b.W[-1, 0], b.dW.sum())
    with pytest.raises(ConfigurationError):
        sample_brownian(g, 0, 0)


def test_seed_range():
    g = make_time_grid(1, 4)
    sample_brownian(g, 2, 2 ** 64 - 1)
    with pytest.raises(ConfigurationError):
        sample_brownian(g, 2, -1)


def test_bundle_is_read_only():
    b = sample_brownian(make_time_grid(1, 4), 3, 1)
    with pytest.raises(ValueError):
        b.dW[0, 0] = 1.0
    assert not deterministic_bundle(make_time_grid(1, 4), 2).dW.any()
