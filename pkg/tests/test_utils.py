import numpy as np
import pytest
from scipy.linalg import solve_discrete_lyapunov

import utils
from exceptions import ConfigurationError, NumericError


def test_env_int_falls_back_on_bad_value(monkeypatch, caplog):
    monkeypatch.setenv('SAMPLES', 'many')
    assert utils.env_int('SAMPLES', 1000) == 1000
    assert 'Invalid SAMPLES' in caplog.text
    monkeypatch.setenv('SAMPLES', '42')
    assert utils.env_int('SAMPLES', 1000) == 42


def test_named_streams_are_reproducible_and_distinct():
    a = utils.make_stream(7, 'process').standard_normal(5)
    b = utils.make_stream(7, 'process').standard_normal(5)
    c = utils.make_stream(7, 'channel').standard_normal(5)
    d = utils.make_stream(7, 'queries', 1).standard_normal(5)
    e = utils.make_stream(7, 'queries', 2).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(d, e)


def test_unknown_stream_name():
    with pytest.raises(ConfigurationError):
        utils.make_stream(0, 'nope')


def test_derive_seed_is_deterministic_and_spread():
    seeds = [utils.derive_seed(7, e) for e in range(20)]
    assert seeds == [utils.derive_seed(7, e) for e in range(20)]
    assert len(set(seeds)) == 20
    assert all(0 <= s < 2 ** 63 for s in seeds)


def test_is_psd():
    assert utils.is_psd(np.eye(3))
    assert utils.is_psd(np.zeros((2, 2)))
    assert not utils.is_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not utils.is_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    assert not utils.is_psd(np.array([[np.nan]]))


def test_psd_sqrt_reconstructs_singular_matrix():
    v = np.array([[1.0], [2.0], [-1.0]])
    cov = v @ v.T
    root = utils.psd_sqrt(cov)
    np.testing.assert_allclose(root @ root.T, cov, atol=1e-10)


def test_sample_gaussian_shapes_and_moments():
    rng = np.random.default_rng(3)
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    draws = utils.sample_gaussian(np.array([1.0, -1.0]), utils.psd_sqrt(cov), rng, size=200000)
    assert draws.shape == (200000, 2)
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.03)
    single = utils.sample_gaussian(np.zeros(2), utils.psd_sqrt(cov), rng)
    assert single.shape == (2,)


def test_lyapunov_fixed_point_matches_scipy():
    A = np.array([[0.8, 0.1], [-0.2, 0.5]])
    Q = np.array([[1.0, 0.2], [0.2, 2.0]])
    np.testing.assert_allclose(utils.lyapunov_fixed_point(A, Q), solve_discrete_lyapunov(A, Q), atol=1e-8)


def test_lyapunov_rejects_unstable_matrix():
    with pytest.raises(NumericError):
        utils.lyapunov_fixed_point(np.array([[1.01]]), np.array([[1.0]]))
