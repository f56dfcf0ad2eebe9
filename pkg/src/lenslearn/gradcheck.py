"""Central finite-difference verification harness for backward passes.

The analytic gradient is produced at the tensor's own precision; the
numeric reference always evaluates the op on float64 copies (the 64-bit
mode exists exactly for these oracle runs), so the check measures backward
correctness rather than float32 summation noise.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def scalar_sum(y: Tensor) -> float:
    """Sum of all output entries, accumulated in float64."""
    return float(y.data.sum(dtype=np.float64))


def gradcheck(op, x: Tensor, eps: float = 1e-3, cotangent: np.ndarray | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``op(t)`` must return ``(y, vjp)`` where ``vjp(grad_out_array)`` gives the
    gradient of sum(grad_out * y) w.r.t. ``t``. By default grad_out is all
    ones (the scalar-reduced sum of outputs); pass an explicit ``cotangent``
    for ops whose output sum is constant by construction (batchnorm's
    per-channel means vanish identically, say). Relative error per
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    Use eps=1e-3 for float32 tensors and eps=1e-6 for float64.
    """
    y, vjp = op(x)
    if cotangent is None:
        cot = np.ones(y.shape, dtype=np.float64)
    else:
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != y.shape:
            raise ValueError(f"cotangent shape {cot.shape} != output shape {y.shape}")
    analytic = np.asarray(vjp(cot.astype(y.data.dtype)), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(
            f"vjp returned shape {analytic.shape}, expected input shape {x.shape}"
        )

    base = x.data.astype(np.float64)
    numeric = np.zeros_like(base)
    flat = numeric.ravel()
    for i in range(base.size):
        for sign in (1.0, -1.0):
            probe = base.copy()
            probe.ravel()[i] += sign * eps
            yp, _ = op(Tensor(probe))
            flat[i] += sign * float((yp.data.astype(np.float64) * cot).sum())
        flat[i] /= 2.0 * eps

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
