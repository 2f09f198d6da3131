"""Numerically stable scalar nonlinearities used throughout the pipeline.

All functions are elementwise, preserve the input dtype, and accept
arbitrary array shapes.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function 1 / (1 + exp(-x)), stable for large |x|."""
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def d_sigmoid_from_value(s: np.ndarray) -> np.ndarray:
    """Derivative of sigmoid expressed through its value: s * (1 - s)."""
    return s * (1.0 - s)


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) computed as max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def d_softplus(x: np.ndarray) -> np.ndarray:
    """Derivative of softplus, which is the sigmoid."""
    return sigmoid(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def assert_finite(name: str, *arrays: np.ndarray) -> None:
    """Raise NumericalError if any array contains NaN or infinity."""
    from .errors import NumericalError

    for a in arrays:
        if not np.all(np.isfinite(a)):
            bad = int(np.count_nonzero(~np.isfinite(a)))
            raise NumericalError(f"{name}: {bad} non-finite values detected")
