"""
Componentwise activation functions sigma and classification functions h.

Both are looked up by name from run configs. Every activation satisfies
sigma(0) = 0 and carries a Lipschitz constant used by the Euler bound.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Activation:
    name: str
    fn: ArrayFn
    deriv: ArrayFn
    lipschitz: float
    second_deriv: Optional[ArrayFn] = None
    smooth: bool = True

    def __post_init__(self) -> None:
        if self.lipschitz <= 0:
            raise ValueError(f"activation {self.name!r} needs a positive Lipschitz constant")
        if float(self.fn(np.zeros(1))[0]) != 0.0:
            raise ValueError(f"activation {self.name!r} must vanish at 0")

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.fn(z)


@dataclass(frozen=True)
class Classifier:
    name: str
    fn: ArrayFn
    deriv: ArrayFn

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.fn(z)


def _tanh_deriv(z: np.ndarray) -> np.ndarray:
    t = np.tanh(z)
    return 1.0 - t * t


def _tanh_second(z: np.ndarray) -> np.ndarray:
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _relu_deriv(z: np.ndarray) -> np.ndarray:
    # subgradient choice at the kink: sigma'(0) = 0
    return (np.asarray(z) > 0).astype(float)


def _silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def _silu_deriv(z: np.ndarray) -> np.ndarray:
    s = expit(z)
    return s + z * s * (1.0 - s)


def _silu_second(z: np.ndarray) -> np.ndarray:
    s = expit(z)
    return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))


def _identity(z: np.ndarray) -> np.ndarray:
    return np.asarray(z, dtype=float)


def _ones(z: np.ndarray) -> np.ndarray:
    return np.ones_like(np.asarray(z, dtype=float))


def _zeros(z: np.ndarray) -> np.ndarray:
    return np.zeros_like(np.asarray(z, dtype=float))


ACTIVATIONS: Dict[str, Activation] = {
    "tanh": Activation("tanh", np.tanh, _tanh_deriv, 1.0, _tanh_second),
    "relu": Activation("relu", _relu, _relu_deriv, 1.0, None, smooth=False),
    # sup |silu'| = 1.0998...
    "silu": Activation("silu", _silu, _silu_deriv, 1.1, _silu_second),
    "identity": Activation("identity", _identity, _ones, 1.0, _zeros),
}

CLASSIFIERS: Dict[str, Classifier] = {
    "identity": Classifier("identity", _identity, _ones),
    "tanh": Classifier("tanh", np.tanh, _tanh_deriv),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def get_classifier(name: str) -> Classifier:
    try:
        return CLASSIFIERS[name]
    except KeyError:
        raise ValueError(f"unknown classifier {name!r}; choose from {sorted(CLASSIFIERS)}") from None


def _fd_mismatch(fn: ArrayFn, deriv: ArrayFn, points: np.ndarray, step: float = 1e-5) -> float:
    fd = (fn(points + step) - fn(points - step)) / (2.0 * step)
    return float(np.max(np.abs(fd - deriv(points))))


def check_activation(act: Activation, seed: int = 0, samples: int = 256, tol: float = 1e-6) -> None:
    """
    Spot-check the construction invariants on random points:
    sigma(0) = 0, |sigma(x) - sigma(y)| <= L|x - y|, and (smooth variants only)
    the derivative against central differences.
    Raises ValueError on the first violation.
    """
    rng = np.random.default_rng(seed)
    if float(act(np.zeros(1))[0]) != 0.0:
        raise ValueError(f"{act.name}: sigma(0) != 0")
    x = rng.uniform(-4.0, 4.0, samples)
    y = rng.uniform(-4.0, 4.0, samples)
    excess = np.abs(act(x) - act(y)) - act.lipschitz * np.abs(x - y)
    if np.any(excess > 1e-12):
        raise ValueError(f"{act.name}: Lipschitz bound {act.lipschitz} violated")
    if act.smooth:
        err = _fd_mismatch(act.fn, act.deriv, x)
        if err > tol:
            raise ValueError(f"{act.name}: derivative disagrees with finite differences by {err:.3e}")
        if act.second_deriv is not None:
            err = _fd_mismatch(act.deriv, act.second_deriv, x)
            if err > tol:
                raise ValueError(f"{act.name}: second derivative disagrees by {err:.3e}")
    logger.debug("activation %s passed its spot checks", act.name)


def check_classifier(cls: Classifier, seed: int = 0, samples: int = 256, tol: float = 1e-6) -> None:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-4.0, 4.0, samples)
    err = _fd_mismatch(cls.fn, cls.deriv, x)
    if err > tol:
        raise ValueError(f"{cls.name}: derivative disagrees with finite differences by {err:.3e}")
