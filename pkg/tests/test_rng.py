import numpy as np
from scipy import stats

from lighttrail import rng


def test_draws_are_pure_functions_of_counters():
    a = rng.uniform(3, rng.STREAM_NOISE, 5, np.arange(10), 7)
    b = rng.uniform(3, rng.STREAM_NOISE, 5, np.arange(10), 7)
    assert np.array_equal(a, b)
    # evaluation order and batching do not matter
    single = np.array([rng.uniform(3, rng.STREAM_NOISE, 5, k, 7) for k in range(10)])
    assert np.array_equal(a, single)


def test_streams_and_seeds_differ():
    base = rng.uniform(1, rng.STREAM_BITS, 0, np.arange(100), 0)
    assert not np.array_equal(base, rng.uniform(2, rng.STREAM_BITS, 0, np.arange(100), 0))
    assert not np.array_equal(base, rng.uniform(1, rng.STREAM_NOISE, 0, np.arange(100), 0))
    assert not np.array_equal(base, rng.uniform(1, rng.STREAM_BITS, 1, np.arange(100), 0))


def test_uniform_in_open_interval_and_uniform():
    u = rng.uniform(9, 1, np.arange(200)[:, None], np.arange(500)[None, :], 0).ravel()
    assert u.min() > 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_normal_is_standard():
    z = rng.normal(9, 2, np.arange(300)[:, None], np.arange(300)[None, :], 1).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_bits_prior():
    b = rng.bits(4, np.arange(20000), 18, 0.3)
    assert b.shape == (20000, 18)
    assert abs(b.mean() - 0.3) < 0.005
    assert set(np.unique(b)) == {0, 1}
