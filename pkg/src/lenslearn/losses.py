"""Training objectives and reconstruction metrics.

The reconstruction loss is the mean over all pixels of the Bernoulli
cross-entropy between predicted intensity p and target g; predictions are
clamped to [1e-7, 1 - 1e-7] inside the loss only. Training uses the fused
pre-activation gradient (p - g) / N for stability.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeError

LOSS_CLAMP = 1e-7


def _check_pair(p: Tensor, g: Tensor) -> None:
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {g.shape}")
    if g.data.size and (g.data.min() < 0.0 or g.data.max() > 1.0):
        raise ValueError(
            f"targets must lie in [0,1], got range [{g.data.min()}, {g.data.max()}]"
        )


def bce_pixel_loss(p: Tensor, g: Tensor) -> float:
    """Mean per-pixel cross-entropy; N is the total element count."""
    _check_pair(p, g)
    pc = np.clip(p.data.astype(np.float64), LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    gd = g.data.astype(np.float64)
    per_pixel = -gd * np.log(pc) - (1.0 - gd) * np.log(1.0 - pc)
    return float(per_pixel.mean())


def bce_pixel_grad(p: Tensor, g: Tensor) -> Tensor:
    """d(loss)/dp on the clamped domain: (p - g) / (p (1-p) N)."""
    _check_pair(p, g)
    pc = np.clip(p.data, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    n = p.size
    return Tensor(((pc - g.data) / (pc * (1.0 - pc) * n)).astype(p.data.dtype))


def bce_sigmoid_fused_grad(p: Tensor, g: Tensor) -> Tensor:
    """Gradient w.r.t. the sigmoid pre-activation: (p - g) / N.

    Combining the loss gradient with the sigmoid derivative cancels the
    p(1-p) factor exactly, so saturated outputs stay numerically safe.
    """
    _check_pair(p, g)
    return Tensor(((p.data - g.data) / p.size).astype(p.data.dtype))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce_loss(logits: Tensor, labels: np.ndarray):
    """Mean negative log-softmax at the true labels; returns (loss, grad).

    grad is (softmax - onehot) / batch, ready to feed the logits' backward.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-d (batch, classes), got shape {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch size {logits.shape[0]}"
        )
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    probs = softmax(logits.data.astype(np.float64))
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, Tensor(grad.astype(logits.data.dtype))


def evaluate_mae_mse(pred: Tensor, target: Tensor):
    """(mean |p-g|, mean (p-g)^2); also checks mse <= mae on [0,1]-bounded residuals."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    mae = float(np.abs(diff).mean())
    mse = float((diff * diff).mean())
    if diff.size and np.abs(diff).max() <= 1.0 and mse > mae + 1e-12:
        raise AssertionError(f"mse {mse} > mae {mae} with residuals in [-1, 1]")
    return mae, mse
