import functools

import pytest
from hypothesis import HealthCheck, settings

from bubbleimg.geometry import load_shape

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def shape(ref: str):
    return load_shape(ref)


@pytest.fixture(scope="session")
def ball3():
    return shape("sphere(3)")


@pytest.fixture(scope="session")
def ball4():
    return shape("sphere(4)")


def small_scenario(phantom: bool = True, delta: float = 0.0, seed: int = 1, generator: str = "regime1",
                   n: int = 3, count: int = 16) -> dict:
    """Quick regime-1 scenario on a coarse grid (for plumbing tests, not accuracy)."""
    ph = [{"kind": "gaussian", "center": [0.1, 0.0, 0.0], "width": 0.2,
           "delta_rho": 50.0, "delta_k": 1e8}] if phantom else []
    return {"medium": {"box": [[-1.6] * 3, [1.6] * 3], "h": 0.2, "exterior_rho": 1000.0,
                       "exterior_k": 2e9, "phantoms": ph},
            "bubble": {"shape": "sphere(3)", "eps": 0.01, "rho_bar": 2000.0, "k_bar": 2.4e10,
                       "regime": "minnaert"},
            "scan": {"lo": [-0.2] * 3, "hi": [0.2] * 3, "n": n},
            "band": {"omega_min": 7800.0, "omega_max": 9300.0, "count": count},
            "incident": {"theta": [0.0, 0.0, 1.0]},
            "generator": generator, "noise": {"delta": delta, "seed": seed}}
