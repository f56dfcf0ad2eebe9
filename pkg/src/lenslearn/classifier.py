"""Compact convolutional classifier shared by all three input routes.

13 conv(3x3)-batchnorm-ReLU blocks grouped into 4 pooled stages, widths
scaled by a multiplier, then global average pooling and a fully connected
head. One stage plan serves every geometry: odd feature maps are zero-
padded to even before each pool, and the global pool makes the head size
geometry-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    PadToEven,
    ReLU,
    Sequential,
)
from .losses import softmax
from .network import Network
from .tensor import Tensor, ShapeError
from .unet import ConfigError

DEFAULT_STAGE_PLAN = ((64, 3), (128, 3), (256, 3), (512, 4))


@dataclass
class ClassifierConfig:
    input_h: int = 32
    input_w: int = 32
    num_classes: int = 6
    width_multiplier: float = 0.25
    stage_plan: tuple = DEFAULT_STAGE_PLAN

    def stage_widths(self):
        return [max(1, round(w * self.width_multiplier)) for w, _ in self.stage_plan]

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"need >= 2 classes, got {self.num_classes}")
        h, w = self.input_h, self.input_w
        for _ in self.stage_plan:
            h, w = (h + h % 2) // 2, (w + w % 2) // 2
        if h < 1 or w < 1:
            raise ConfigError(
                f"input {self.input_h}x{self.input_w} underflows after "
                f"{len(self.stage_plan)} pooling stages"
            )


class Classifier(Network):
    def __init__(self, cfg: ClassifierConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x434C4631)))

        layers = []
        ch = 1
        widths = cfg.stage_widths()
        for width, (_, count) in zip(widths, cfg.stage_plan):
            for _ in range(count):
                layers.append(Conv2d(ch, width, 3, padding=1, rng=rng, dtype=dtype))
                layers.append(BatchNorm2d(width, dtype=dtype))
                layers.append(ReLU())
                ch = width
            layers.append(PadToEven())
            layers.append(MaxPool2x2())
        layers.append(GlobalAvgPool())
        layers.append(Linear(ch, cfg.num_classes, rng=rng, dtype=dtype))
        self.body = self.add_child("body", Sequential(*layers))

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (cfg.input_h, cfg.input_w):
            raise ShapeError(
                f"expected input (N, 1, {cfg.input_h}, {cfg.input_w}), got {x.shape}"
            )
        return self.body.forward(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        return self.body.backward(grad_out)


def build_classifier(cfg: ClassifierConfig, seed: int = 0, dtype=np.float32) -> Classifier:
    return Classifier(cfg, seed=seed, dtype=dtype)


def predict(net: Classifier, batch: Tensor):
    """(softmax probabilities, argmax labels); ties go to the lowest index."""
    logits = net.forward(batch)
    probs = softmax(logits.data.astype(np.float64))
    return probs, probs.argmax(axis=1)


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """Entry (i, j) counts true class i predicted as class j."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ShapeError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} contain values outside [0, {num_classes})")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(mat, (labels, preds), 1)
    return mat


def accuracy_from_confusion(mat: np.ndarray) -> float:
    total = mat.sum()
    return float(np.trace(mat) / total) if total else 0.0
