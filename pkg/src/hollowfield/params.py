"""Trainable parameter storage, Adam updates, and gradient verification.

Parameters live in flat float arrays with an equally sized gradient
buffer. The rest of the system accumulates into ``grads`` in a fixed,
deterministic order (vectorized bincount scatters), so training is
bit-reproducible for a given seed and configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, NumericalError


@dataclass
class ParamTensor:
    """A named block of trainable values with a matching gradient buffer.

    Attributes:
        shape: logical dimension sizes; values/grads are stored flat.
        values: flat array of parameter values.
        grads: flat gradient accumulator, same length as values.
        role: coarse label ("hashgrid" | "mlp" | "saliency").
        name: unique identifier used in checkpoints and reports.
    """

    shape: tuple[int, ...]
    values: np.ndarray
    grads: np.ndarray
    role: str = "mlp"
    name: str = ""

    def __post_init__(self) -> None:
        n = int(np.prod(self.shape)) if self.shape else 1
        if self.values.size != n or self.grads.size != n:
            raise ConfigError(
                f"param {self.name!r}: shape {self.shape} implies {n} elements, "
                f"got values={self.values.size} grads={self.grads.size}"
            )

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def view(self) -> np.ndarray:
        """Values reshaped to the logical shape (shares memory)."""
        return self.values.reshape(self.shape)

    def grad_view(self) -> np.ndarray:
        return self.grads.reshape(self.shape)


@dataclass
class AdamState:
    """Per-parameter Adam moments and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-15

    @classmethod
    def for_param(cls, param: ParamTensor, lr: float = 1e-2,
                  beta1: float = 0.9, beta2: float = 0.99,
                  eps: float = 1e-15) -> "AdamState":
        return cls(
            m=np.zeros(param.size, dtype=param.dtype),
            v=np.zeros(param.size, dtype=param.dtype),
            t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def zero_grads(params: Iterable[ParamTensor]) -> None:
    """Reset every gradient buffer to exactly zero."""
    for p in params:
        p.grads.fill(0.0)


def adam_step(param: ParamTensor, state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """
    if state.m.size != param.size or state.v.size != param.size:
        raise ConfigError(
            f"adam state sized {state.m.size} does not match param "
            f"{param.name!r} of size {param.size}"
        )
    g = param.grads
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 / (1.0 - b1 ** state.t)
    bc2 = 1.0 / (1.0 - b2 ** state.t)
    if _kernels.AVAILABLE:
        _kernels.adam_kernel(param.values, g, state.m, state.v,
                             state.lr, b1, b2, state.eps, bc1, bc2)
        return
    state.m += (1.0 - b1) * (g - state.m)
    state.v += (1.0 - b2) * (g * g - state.v)
    param.values -= np.asarray(
        state.lr * (state.m * bc1) / (np.sqrt(state.v * bc2) + state.eps),
        dtype=param.dtype)


def seeded_init(shape: Sequence[int], scheme: str, seed: int,
                a: float = 0.0, b: float = 0.0,
                role: str = "mlp", name: str = "",
                dtype=np.float32) -> ParamTensor:
    """Create a ParamTensor with deterministic initial values.

    scheme is one of "uniform" (requires a < b), "ones", "zeros".
    The same (shape, scheme, seed) always yields bit-identical values.
    """
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape)) if shape else 1
    if scheme == "uniform":
        if not a < b:
            raise ConfigError(f"uniform init needs a < b, got a={a} b={b}")
        rng = np.random.default_rng(seed)
        values = rng.uniform(a, b, size=n).astype(dtype)
    elif scheme == "ones":
        values = np.ones(n, dtype=dtype)
    elif scheme == "zeros":
        values = np.zeros(n, dtype=dtype)
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return ParamTensor(shape=shape, values=values,
                       grads=np.zeros(n, dtype=dtype), role=role, name=name)


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    flagged: np.ndarray = field(repr=False)
    max_rel_error: float = 0.0
    tol: float = 0.0

    @property
    def ok(self) -> bool:
        return not bool(self.flagged.any())

    def summary(self) -> str:
        return (f"max rel err {self.max_rel_error:.3e} "
                f"({int(self.flagged.sum())}/{self.rel_error.size} coords over tol {self.tol:g})")


def finite_diff_check(f: Callable[[], float], params: ParamTensor,
                      h: float, tol: float,
                      analytic: np.ndarray | None = None,
                      rel_floor: float = 0.02) -> GradCheckReport:
    """Compare an analytic gradient with central differences of f.

    f is a zero-argument closure over params.values; it is re-evaluated at
    coordinatewise perturbations theta +- h. ``analytic`` defaults to
    params.grads (populated by the backward pass under test). The analytic
    vector may come from a lower-precision model evaluated at the same
    values; the difference quotient itself runs at params' precision, so
    pass a float64 params/f pair to certify a float32 gradient.

    Relative error per coordinate is |a - d| / max(|a|, |d|, floor) where
    floor = rel_floor * max gradient magnitude: coordinates far below the
    gradient scale are held to an absolute standard, since the difference
    quotient's own noise floor makes a pure ratio meaningless there.
    """
    if h <= 0:
        raise ConfigError(f"finite difference step must be positive, got {h}")
    if analytic is None:
        analytic = params.grads.copy()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.size != params.size:
        raise ConfigError("analytic gradient length does not match params")

    theta = params.values
    numeric = np.zeros(params.size, dtype=np.float64)
    for i in range(params.size):
        orig = theta[i]
        theta[i] = orig + h
        f_plus = float(f())
        theta[i] = orig - h
        f_minus = float(f())
        theta[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(
                f"objective non-finite at coordinate {i} under step {h}")
        numeric[i] = (f_plus - f_minus) / (2.0 * h)

    scale = max(float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)), 1e-300)
    floor = rel_floor * scale
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    flagged = rel > tol
    return GradCheckReport(analytic=analytic, numeric=numeric, rel_error=rel,
                           flagged=flagged, max_rel_error=float(rel.max(initial=0.0)),
                           tol=tol)
