"""Dense float64 matrix helpers: shape-checked arithmetic, gate nonlinearities,
residual norms, and a central-difference gradient checker.

Everything operates on 2-D C-contiguous ``numpy.float64`` arrays and is pure:
inputs are never mutated.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


def as_mat(x, name: str = "array") -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 matrix, rejecting anything else."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ShapeError(f"{name} must be non-empty, got shape {a.shape}")
    return np.ascontiguousarray(a)


def require_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def require_finite(a: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains non-finite entries")


def mat_mul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"mat_mul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b


def add(a, b) -> np.ndarray:
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    require_same_shape(a, b, "add")
    return a + b


def sub(a, b) -> np.ndarray:
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    require_same_shape(a, b, "sub")
    return a - b


def hadamard(a, b) -> np.ndarray:
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    require_same_shape(a, b, "hadamard")
    return a * b


def scale(c: float, a) -> np.ndarray:
    return float(c) * as_mat(a, "a")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # expit saturates cleanly to {0, 1} for large |x|; never NaN on finite input
    return expit(np.asarray(x, dtype=np.float64))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def sigmoid_deriv(y: np.ndarray) -> np.ndarray:
    """Derivative expressed in terms of the sigmoid *output* y."""
    return y * (1.0 - y)


def tanh_deriv(y: np.ndarray) -> np.ndarray:
    """Derivative expressed in terms of the tanh *output* y."""
    return 1.0 - y * y


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh}
_ACTIVATION_DERIVS = {"sigmoid": sigmoid_deriv, "tanh": tanh_deriv}


def activation(kind: str, x) -> np.ndarray:
    if kind not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")
    return _ACTIVATIONS[kind](as_mat(x, "x"))


def activation_deriv(kind: str, y) -> np.ndarray:
    if kind not in _ACTIVATION_DERIVS:
        raise ValueError(f"unknown activation {kind!r}")
    return _ACTIVATION_DERIVS[kind](as_mat(y, "y"))


def residual_norm(a, b) -> float:
    """Frobenius norm of ``a - b`` (a matrix residual treated as one flat vector)."""
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    require_same_shape(a, b, "residual_norm")
    return float(np.linalg.norm(a - b))


def residual_norm_grad(a, b) -> np.ndarray:
    """Gradient of ``residual_norm(a, b)`` with respect to ``a``.

    At a zero residual the norm is not differentiable; the zero matrix is the
    chosen subgradient.
    """
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    require_same_shape(a, b, "residual_norm_grad")
    diff = a - b
    n = np.linalg.norm(diff)
    if n == 0.0:
        return np.zeros_like(diff)
    return diff / n


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix.

    Perturbs one entry at a time: ``(f(x + h e_ij) - f(x - h e_ij)) / (2h)``.
    Intended as an independent oracle for analytic gradients, not for speed.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = as_mat(x, "x").copy()
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            orig = x[i, j]
            x[i, j] = orig + h
            fp = float(f(x))
            x[i, j] = orig - h
            fm = float(f(x))
            x[i, j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(
                    f"finite_diff_grad: non-finite evaluation at entry ({i}, {j})"
                )
            g[i, j] = (fp - fm) / (2.0 * h)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Worst-case elementwise relative error between two gradient arrays.

    The denominator is floored so that finite-difference noise on near-zero
    entries does not dominate: ``|a - n| / max(|a|, |n|, floor)``.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    require_same_shape(a.reshape(a.shape), n.reshape(n.shape), "max_relative_error")
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
