import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def trig_poly(rng, degree=4, amplitude=2.0):
    """Random real trigonometric polynomial with sup-norm at most `amplitude`.

    Returns (f, df, coefficient tuple); coefficients are scaled so that the
    sum of absolute values bounds the sup norm.
    """
    a = rng.normal(size=degree)
    b = rng.normal(size=degree)
    c0 = rng.normal()
    scale = amplitude * rng.uniform(0.3, 1.0) / (abs(c0) + np.abs(a).sum() + np.abs(b).sum())
    a, b, c0 = a * scale, b * scale, c0 * scale
    k = np.arange(1, degree + 1)

    def f(q):
        q = np.asarray(q, dtype=float)[..., None]
        return c0 + np.sum(a * np.cos(2 * np.pi * k * q) + b * np.sin(2 * np.pi * k * q), axis=-1)

    def df(q):
        q = np.asarray(q, dtype=float)[..., None]
        w = 2 * np.pi * k
        return np.sum(-a * w * np.sin(w * q) + b * w * np.cos(w * q), axis=-1)

    return f, df, (c0, tuple(a), tuple(b))


def dense_extrema(f, samples=200001):
    q = np.linspace(0.0, 1.0, samples)
    v = f(q)
    return float(v.min()), float(v.max())


@pytest.fixture(scope="session")
def engine():
    from gfspec.invariants import SpectralEngine
    return SpectralEngine()
