import numpy as np
import pytest

from src.core.tensor import Tape
from src.noise import ClassGradCache, LatCache, NoiseSpec
from src.noise.generators import activation_std, anl_noise, gaussian_noise, inject, lat_noise, sample_r
from src.utils.errors import ConfigError, ShapeError, UsageError


def test_sample_r_zero_epsilon(rng):
    assert all(sample_r(0.0, rng) == 0.0 for _ in range(100))


def test_sample_r_bounds_and_mean(rng):
    draws = np.array([sample_r(0.03, rng) for _ in range(100_000)])
    assert draws.min() >= 0.0 and draws.max() <= 0.03
    assert 0.0145 <= draws.mean() <= 0.0155


def test_sample_r_negative_epsilon(rng):
    draws = np.array([sample_r(-0.03, rng) for _ in range(10_000)])
    assert draws.min() >= -0.03 and draws.max() <= 0.0


def test_activation_std():
    assert activation_std(np.full((3, 4), 2.5)) == 0.0
    assert activation_std(np.array([0.0, 2.0])) == pytest.approx(1.0)
    h = np.random.default_rng(1).normal(size=(4, 5))
    assert activation_std(-3.0 * h) == pytest.approx(3.0 * activation_std(h))
    with pytest.raises(ShapeError):
        activation_std(np.array([1.0]))


def test_anl_noise_hand_value():
    eta = anl_noise(np.array([[2.0, -4.0]]), s=1.0, r=0.03)
    np.testing.assert_allclose(eta, [[0.015, -0.03]])


def test_anl_noise_zero_gradient():
    np.testing.assert_array_equal(anl_noise(np.zeros((2, 3)), 1.0, 0.03), np.zeros((2, 3)))


def test_anl_noise_direction_and_magnitude(rng):
    for _ in range(1000):
        g = rng.normal(size=(1, 6))
        s = rng.uniform(0.1, 3.0)
        r = rng.uniform(1e-4, 0.1)
        eta = anl_noise(g, s, r)
        cos = float(eta.ravel() @ g.ravel() / (np.linalg.norm(eta) * np.linalg.norm(g)))
        assert cos == pytest.approx(1.0, rel=1e-12)
        assert np.max(np.abs(eta)) == pytest.approx(r * s, rel=1e-12)


def test_anl_noise_per_sample_vs_batch_norm():
    g = np.array([[1.0, 0.0], [0.0, 4.0]])
    np.testing.assert_allclose(anl_noise(g, 1.0, 0.1), [[0.1, 0.0], [0.0, 0.1]])
    np.testing.assert_allclose(anl_noise(g, 1.0, 0.1, per_sample=False), [[0.025, 0.0], [0.0, 0.1]])


def test_lat_noise():
    np.testing.assert_allclose(lat_noise(np.array([3.0, -0.1, 0.0]), 0.01), [0.01, -0.01, 0.0])
    np.testing.assert_array_equal(lat_noise(np.array([3.0, -2.0]), 0.0), [0.0, 0.0])
    g = np.random.default_rng(2).normal(size=100)
    assert np.max(np.abs(lat_noise(g, -0.05))) <= 0.05


def test_gaussian_noise(rng):
    np.testing.assert_array_equal(gaussian_noise((4, 4), 0.0, rng), np.zeros((4, 4)))
    draws = gaussian_noise(100_000, 0.03, rng)
    assert 0.0073 <= draws.std() <= 0.0077
    assert abs(draws.mean()) < 3 * 0.0075 / np.sqrt(100_000)


def test_inject():
    h = np.array([1.0, 1.0])
    np.testing.assert_allclose(inject(h, np.array([0.1, -0.1])), [1.1, 0.9])
    np.testing.assert_array_equal(inject(h, np.zeros(2)), h)
    assert inject(h, np.array([5.0, 5.0]), train=False) is h
    with pytest.raises(ShapeError):
        inject(h, np.zeros(3))


def test_inject_on_tape_passes_gradient_through():
    tape = Tape()
    h = tape.leaf(np.array([1.0, 2.0]))
    h_hat = inject(h, np.array([0.5, -0.5]), tape=tape)
    np.testing.assert_allclose(h_hat.value, [1.5, 1.5])
    grads = tape.backward(tape.record("sum", (h_hat,), np.sum(h_hat.value), lambda g: (np.ones(2) * g,)))
    np.testing.assert_array_equal(grads[h], [1.0, 1.0])


def test_class_cache_write_read_overwrite():
    cache = ClassGradCache(3, {0: (2,)})
    np.testing.assert_array_equal(cache.entry(0, 1), [0.0, 0.0])
    assert cache.is_cold(0, 1)
    cache.update(0, 1, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(cache.entry(0, 1), [1.0, 2.0])
    cache.update(0, 1, np.array([-3.0, 0.5]))
    np.testing.assert_array_equal(cache.entry(0, 1), [-3.0, 0.5])
    assert not cache.is_cold(0, 1)


def test_class_cache_lookup():
    cache = ClassGradCache(3, {0: (2,)})
    cache.update(0, 0, np.array([1.0, 0.0]))
    cache.update(0, 1, np.array([0.0, 1.0]))
    same = cache.lookup(0, [1, 1, 1])
    assert np.all(same == same[0])
    mixed = cache.lookup(0, [0, 1])
    assert not np.array_equal(mixed[0], mixed[1])
    cold = cache.lookup(0, [2, 2])
    np.testing.assert_array_equal(anl_noise(cold, 1.0, 0.03), np.zeros((2, 2)))


def test_class_cache_errors():
    cache = ClassGradCache(3, {0: (2,)})
    with pytest.raises(UsageError):
        cache.update(0, 3, np.zeros(2))
    with pytest.raises(ShapeError):
        cache.update(0, 0, np.zeros(3))
    with pytest.raises(UsageError):
        cache.lookup(0, [0, 5])


def test_lat_cache_fit_to_batch():
    cache = LatCache()
    assert cache.fetch(0, 4) is None
    g = np.arange(6.0).reshape(3, 2)
    cache.save(0, g)
    np.testing.assert_array_equal(cache.fetch(0, 3), g)
    np.testing.assert_array_equal(cache.fetch(0, 2), g[:2])
    np.testing.assert_array_equal(cache.fetch(0, 5), g[[0, 1, 2, 0, 1]])


def test_noise_spec_validation():
    spec = NoiseSpec(kind="anl", epsilon=-0.03, hooks=[1])
    assert spec.enabled and spec.is_active(1) and not spec.is_active(0)
    assert NoiseSpec(kind="canl").is_active(5)
    assert not NoiseSpec().enabled
    with pytest.raises(ConfigError):
        NoiseSpec(kind="anl", epsilon=1.5)
    with pytest.raises(ConfigError):
        NoiseSpec(kind="anl", norm="channel")
    with pytest.raises(ConfigError, match=r"\[noise\] kind .dropout."):
        NoiseSpec(kind="dropout")
