"""Synthetic objective functions with known minima, plus a registry for
custom objectives. Evaluators are pure and accept a single point or an
array of points (last axis = coordinates)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def branin(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    b = 5.1 / (4.0 * np.pi**2)
    c = 5.0 / np.pi
    t = 1.0 / (8.0 * np.pi)
    return (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * np.cos(x1) + 10.0


def cosines(x):
    # minimized directly; the global minimum sits near the (1, 1) corner
    x = np.asarray(x, dtype=float)
    u = 1.6 * x[..., 0] - 0.5
    v = 1.6 * x[..., 1] - 0.5
    return 1.0 - (u**2 + v**2 - 0.3 * np.cos(3.0 * np.pi * u) - 0.3 * np.cos(3.0 * np.pi * v))


_HART6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HART6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HART6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)


def hartmann6(x):
    x = np.asarray(x, dtype=float)
    inner = np.einsum("ij,...ij->...i", _HART6_A, (x[..., None, :] - _HART6_P) ** 2)
    return -np.einsum("i,...i->...", _HART6_ALPHA, np.exp(-inner))


def eggholder(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return -(x2 + 47.0) * np.sin(np.sqrt(np.abs(x2 + 0.5 * x1 + 47.0))) - x1 * np.sin(
        np.sqrt(np.abs(x1 - (x2 + 47.0)))
    )


def rosenbrock4(x):
    x = np.asarray(x, dtype=float)
    return np.sum(
        100.0 * (x[..., 1:] - x[..., :-1] ** 2) ** 2 + (1.0 - x[..., :-1]) ** 2, axis=-1
    )


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    dim: int
    domain: tuple[tuple[float, float], ...]
    known_minimum: float
    evaluator: Callable[[np.ndarray], float]

    @property
    def bounds(self) -> np.ndarray:
        return np.asarray(self.domain, dtype=float)


_REGISTRY: dict[str, BenchmarkSpec] = {}


def register(spec: BenchmarkSpec, overwrite: bool = False) -> None:
    """Register a custom objective so it can be addressed by name."""
    key = spec.name.lower()
    if key in _REGISTRY and not overwrite:
        raise KeyError(f"benchmark {spec.name!r} is already registered")
    _REGISTRY[key] = spec


def get(name: str) -> BenchmarkSpec:
    try:
        return _REGISTRY[name.lower()]
    except KeyError:
        raise KeyError(
            f"unknown benchmark {name!r}; available: {', '.join(sorted(names()))}"
        ) from None


def names() -> list[str]:
    return [spec.name for spec in _REGISTRY.values()]


def evaluate(name: str, x) -> float:
    """Evaluate a registered benchmark at an in-domain point."""
    spec = get(name)
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != spec.dim:
        raise ValueError(f"{spec.name} expects {spec.dim}-dimensional points, got {x.shape[0]}")
    bounds = spec.bounds
    if np.any(x < bounds[:, 0]) or np.any(x > bounds[:, 1]):
        raise ValueError(f"point {x.tolist()} lies outside the {spec.name} domain")
    return float(spec.evaluator(x))


def min_value(name: str) -> float:
    """The benchmark's known minimum (used for regret)."""
    return get(name).known_minimum


register(BenchmarkSpec("Branin", 2, ((-5.0, 10.0), (0.0, 15.0)), 0.3979, branin))
register(BenchmarkSpec("Cosines", 2, ((0.0, 1.0), (0.0, 1.0)), -1.773, cosines))
register(BenchmarkSpec("Hartmann6", 6, ((0.0, 1.0),) * 6, -3.322, hartmann6))
register(BenchmarkSpec("Eggholder", 2, ((-512.0, 512.0), (-512.0, 512.0)), -959.64, eggholder))
register(BenchmarkSpec("Rosenbrock4", 4, ((-5.0, 10.0),) * 4, 0.0, rosenbrock4))
