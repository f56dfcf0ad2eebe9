"""Training loops, plans, and metric records for both networks.

Runs are pure functions of (data bytes, config, seeds): batch order comes
from a per-epoch seeded shuffle and all state updates are sequential, so
repeated runs produce byte-identical checkpoints and metric CSVs. Wall
times are measured into the in-memory records but serialized only to the
run manifest, never to the CSV (which must be rerun-stable).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .classifier import Classifier, confusion_matrix
from .data import (
    LabeledImageSet,
    nearest_resize,
    preprocess_recon_inputs,
    ORIGINAL_HW,
)
from .losses import (
    bce_pixel_loss,
    bce_sigmoid_fused_grad,
    evaluate_mae_mse,
    softmax_ce_loss,
)
from .network import Network
from .optim import Adam
from .tensor import Tensor, ShapeError


class NumericError(ArithmeticError):
    """Training produced a non-finite loss."""


@dataclass
class TrainPlan:
    max_epochs: int = 50
    batch_size: int = 32
    shuffle_seed: int = 0
    checkpoint_every: int = 0   # epochs between periodic checkpoints; 0 = final/best only

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class MetricRecord:
    epoch: int
    split: str
    loss: float
    mae: float
    mse: float
    accuracy: float | None = None
    wall_time: float = 0.0

    def key(self):
        """Deterministic fields only (wall_time varies between reruns)."""
        return (self.epoch, self.split, self.loss, self.mae, self.mse, self.accuracy)


METRICS_HEADER = "epoch,split,loss,mae,mse,accuracy,seconds"


def write_metrics_csv(path, records) -> None:
    """Append-style CSV; the seconds column stays empty so reruns are
    byte-identical (timings live in the manifest)."""
    lines = [METRICS_HEADER]
    for r in records:
        acc = "" if r.accuracy is None else f"{r.accuracy:.6f}"
        lines.append(f"{r.epoch},{r.split},{r.loss:.8f},{r.mae:.8f},{r.mse:.8f},{acc},")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x45504F43, epoch)))
    return rng.permutation(n)


def _batches(n: int, batch_size: int, order=None):
    idx = order if order is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def predict_recon(net: Network, inputs: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode forward over a (N,1,H,W) array, in fixed batch order."""
    net.set_training(False)
    out = np.empty_like(inputs)
    for idx in _batches(inputs.shape[0], batch_size):
        out[idx] = net.forward(Tensor(inputs[idx])).data
    return out


def evaluate_recon(net: Network, inputs: np.ndarray, targets: np.ndarray,
                   batch_size: int = 32):
    """(loss, mae, mse) of eval-mode predictions against targets."""
    preds = predict_recon(net, inputs, batch_size)
    loss = bce_pixel_loss(Tensor(preds), Tensor(targets))
    mae, mse = evaluate_mae_mse(Tensor(preds), Tensor(targets))
    return loss, mae, mse


def train_reconstruction(net: Network, train_inputs, train_targets, test_inputs,
                         test_targets, plan: TrainPlan, adam: Adam,
                         checkpoint_dir=None, log=None):
    """Fixed-budget training with the fused sigmoid/cross-entropy gradient.

    Returns (net, records); records hold one train and one test row per
    epoch. Train rows average over that epoch's batches; test rows come
    from a dedicated eval pass. Saves periodic/best/final checkpoints when
    checkpoint_dir is given; best is lowest test MAE.
    """
    n = train_inputs.shape[0]
    if train_targets.shape != train_inputs.shape:
        raise ShapeError(
            f"train inputs {train_inputs.shape} vs targets {train_targets.shape}"
        )
    records = []
    best_mae = np.inf
    saved = []
    for epoch in range(1, plan.max_epochs + 1):
        t0 = time.perf_counter()
        net.set_training(True)
        order = _epoch_order(n, plan.shuffle_seed, epoch)
        tot_loss = tot_mae = tot_mse = 0.0
        for bi, idx in enumerate(_batches(n, plan.batch_size, order)):
            x = Tensor(train_inputs[idx])
            g = Tensor(train_targets[idx])
            net.zero_grads()
            p = net.forward(x)
            loss = bce_pixel_loss(p, g)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {bi} (lr={adam.state.lr})"
                )
            net.backward_from_logits(bce_sigmoid_fused_grad(p, g))
            adam.step()
            mae, mse = evaluate_mae_mse(p, g)
            k = idx.size
            tot_loss += loss * k
            tot_mae += mae * k
            tot_mse += mse * k
        train_time = time.perf_counter() - t0
        records.append(MetricRecord(epoch, "train", tot_loss / n, tot_mae / n,
                                    tot_mse / n, wall_time=train_time))
        t1 = time.perf_counter()
        te_loss, te_mae, te_mse = evaluate_recon(net, test_inputs, test_targets,
                                                 plan.batch_size)
        records.append(MetricRecord(epoch, "test", te_loss, te_mae, te_mse,
                                    wall_time=time.perf_counter() - t1))
        if log:
            log(f"epoch {epoch}: train loss {tot_loss / n:.5f} mae {tot_mae / n:.5f} | "
                f"test loss {te_loss:.5f} mae {te_mae:.5f}")
        if checkpoint_dir is not None:
            if te_mae < best_mae:
                best_mae = te_mae
                path = f"{checkpoint_dir}/checkpoint_best.lltn"
                net.save_checkpoint(path)
                if path not in saved:
                    saved.append(path)
            if plan.checkpoint_every and epoch % plan.checkpoint_every == 0:
                path = f"{checkpoint_dir}/checkpoint_epoch{epoch:04d}.lltn"
                net.save_checkpoint(path)
                saved.append(path)
    if checkpoint_dir is not None:
        path = f"{checkpoint_dir}/checkpoint_final.lltn"
        net.save_checkpoint(path)
        saved.append(path)
    return net, records, saved


def evaluate_classifier(net: Classifier, images: np.ndarray, labels: np.ndarray,
                        batch_size: int = 32):
    """(loss, accuracy, predictions) of eval-mode classification."""
    net.set_training(False)
    n = images.shape[0]
    preds = np.empty(n, dtype=np.int64)
    tot_loss = 0.0
    for idx in _batches(n, batch_size):
        logits = net.forward(Tensor(images[idx]))
        loss, _ = softmax_ce_loss(logits, labels[idx])
        tot_loss += loss * idx.size
        preds[idx] = logits.data.argmax(axis=1)
    acc = float((preds == labels).mean()) if n else 0.0
    return tot_loss / max(n, 1), acc, preds


def train_classifier(net: Classifier, train_set: LabeledImageSet,
                     test_set: LabeledImageSet, plan: TrainPlan, adam: Adam,
                     checkpoint_dir=None, log=None):
    """Same loop discipline as reconstruction; records carry accuracy and the
    final test confusion matrix is returned alongside."""
    n = train_set.count
    images = train_set.images.data
    labels = train_set.labels
    records = []
    best_acc = -1.0
    saved = []
    for epoch in range(1, plan.max_epochs + 1):
        t0 = time.perf_counter()
        net.set_training(True)
        order = _epoch_order(n, plan.shuffle_seed, epoch)
        tot_loss = 0.0
        correct = 0
        for bi, idx in enumerate(_batches(n, plan.batch_size, order)):
            x = Tensor(images[idx])
            y = labels[idx]
            net.zero_grads()
            logits = net.forward(x)
            loss, grad = softmax_ce_loss(logits, y)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {bi} (lr={adam.state.lr})"
                )
            net.backward(grad)
            adam.step()
            tot_loss += loss * idx.size
            correct += int((logits.data.argmax(axis=1) == y).sum())
        train_time = time.perf_counter() - t0
        records.append(MetricRecord(epoch, "train", tot_loss / n, 0.0, 0.0,
                                    accuracy=correct / n, wall_time=train_time))
        t1 = time.perf_counter()
        te_loss, te_acc, _ = evaluate_classifier(
            net, test_set.images.data, test_set.labels, plan.batch_size
        )
        records.append(MetricRecord(epoch, "test", te_loss, 0.0, 0.0,
                                    accuracy=te_acc, wall_time=time.perf_counter() - t1))
        if log:
            log(f"epoch {epoch}: train loss {tot_loss / n:.5f} acc {correct / n:.4f} | "
                f"test loss {te_loss:.5f} acc {te_acc:.4f}")
        if checkpoint_dir is not None:
            if te_acc > best_acc:
                best_acc = te_acc
                path = f"{checkpoint_dir}/checkpoint_best.lltn"
                net.save_checkpoint(path)
                if path not in saved:
                    saved.append(path)
            if plan.checkpoint_every and epoch % plan.checkpoint_every == 0:
                path = f"{checkpoint_dir}/checkpoint_epoch{epoch:04d}.lltn"
                net.save_checkpoint(path)
                saved.append(path)
    if checkpoint_dir is not None:
        path = f"{checkpoint_dir}/checkpoint_final.lltn"
        net.save_checkpoint(path)
        saved.append(path)
    _, _, test_preds = evaluate_classifier(
        net, test_set.images.data, test_set.labels, plan.batch_size
    )
    confusion = confusion_matrix(test_preds, test_set.labels, test_set.num_classes)
    return net, records, confusion, saved


def resolve_route(route: str, gt_set: LabeledImageSet, sensor_set: LabeledImageSet,
                  recon_net: Network | None = None,
                  batch_size: int = 32) -> LabeledImageSet:
    """Produce classifier inputs for one route.

    original: ground-truth images as-is; raw: sensor frames at native size;
    reconstructed: sensor -> preprocessing -> reconstruction net ->
    nearest-downsample to the original resolution (requires recon_net).
    """
    if route == "original":
        return gt_set
    if route == "raw":
        return sensor_set
    if route != "reconstructed":
        raise ValueError(f"unknown route {route!r}")
    if recon_net is None:
        raise ValueError(
            "reconstructed route needs a trained reconstruction checkpoint; none given"
        )
    inputs = preprocess_recon_inputs(sensor_set.images.data)
    outputs = predict_recon(recon_net, inputs, batch_size)
    n = outputs.shape[0]
    small = np.empty((n, 1, ORIGINAL_HW, ORIGINAL_HW), dtype=np.float32)
    for i in range(n):
        small[i, 0] = nearest_resize(outputs[i, 0], ORIGINAL_HW, ORIGINAL_HW)
    return LabeledImageSet(
        images=Tensor(small),
        labels=sensor_set.labels.copy(),
        num_classes=sensor_set.num_classes,
        provenance=sensor_set.provenance + "+reconstructed",
    )
