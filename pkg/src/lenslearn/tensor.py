"""Dense tensor container: the numeric currency of the whole toolkit.

A Tensor is a C-contiguous numpy array plus an optional gradient buffer of
the same shape. Image batches use the (batch, channels, height, width)
layout everywhere. Default compute precision is float32; float64 tensors
are reserved for oracle and gradient-check runs.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Two tensors (or a tensor and an operator) do not line up."""


class Tensor:
    """N-dimensional real array with an optional grad buffer.

    ``data`` is always C-contiguous, so ``data.ravel()`` is the row-major
    flat view. ``grad``, when allocated, mirrors ``data``'s shape and dtype.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in FLOAT_DTYPES:
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = np.ascontiguousarray(arr)
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE) -> "Tensor":
        return cls(np.zeros(shape, dtype=dtype))

    @classmethod
    def full(cls, shape, value, dtype=DEFAULT_DTYPE) -> "Tensor":
        return cls(np.full(shape, value, dtype=dtype))

    def copy(self) -> "Tensor":
        out = Tensor(self.data.copy())
        if self.grad is not None:
            out.grad = self.grad.copy()
        return out

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def ensure_grad(self) -> np.ndarray:
        """Allocate (zeroed) the gradient buffer if absent and return it."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        self.ensure_grad()
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) and dtype is None else Tensor(
        x.data if isinstance(x, Tensor) else x, dtype=dtype
    )


def require_same_shape(a: Tensor, b: Tensor, what: str = "tensors") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} must have identical shapes, got {a.shape} and {b.shape}")


def require_all_finite(t: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"{what} contains non-finite values")
