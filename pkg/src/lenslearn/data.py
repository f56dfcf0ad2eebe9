"""Dataset parsing, deterministic sampling/splitting, and image preprocessing.

Two on-disk formats are supported bit-exactly: big-endian IDX (magics
0x00000803 images / 0x00000801 labels, bytes scaled by 1/255) and the
packed "LLDS" container (44-byte header, float32 images in [0,1], u16
labels). Every loader either returns a complete set or raises a
positioned parse error.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

PACKED_MAGIC = b"LLDS"
PACKED_VERSION = 1
PACKED_HEADER_SIZE = 44  # 28 bytes of fields + 16 reserved


class ParseError(ValueError):
    """Malformed dataset file; message names the offending offset."""


class ValidationError(ValueError):
    """Well-formed input that violates a documented precondition."""


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path) -> str:
    return sha256_hex(Path(path).read_bytes())


@dataclass
class LabeledImageSet:
    images: Tensor          # (count, 1, H, W) float32 in [0, 1]
    labels: np.ndarray      # (count,) int64
    num_classes: int
    provenance: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValidationError(f"images must be (count,1,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValidationError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(
                f"labels outside [0, {self.num_classes}): "
                f"{self.labels.min()}..{self.labels.max()}"
            )

    @property
    def count(self) -> int:
        return self.images.shape[0]

    def take(self, indices) -> "LabeledImageSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(
            images=Tensor(self.images.data[idx].copy()),
            labels=self.labels[idx].copy(),
            num_classes=self.num_classes,
            provenance=self.provenance,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError(
                f"train_fraction must be in (0,1), got {self.train_fraction}"
            )


# ---------------------------------------------------------------------------
# IDX format

def _read_be32(blob: bytes, offset: int, path) -> int:
    if offset + 4 > len(blob):
        raise ParseError(f"{path}: truncated file, needed 4 bytes at offset {offset}")
    return struct.unpack_from(">I", blob, offset)[0]


def load_idx(images_path, labels_path, num_classes: int | None = None) -> LabeledImageSet:
    """Parse an IDX image/label file pair into a labeled set."""
    img_blob = Path(images_path).read_bytes()
    magic = _read_be32(img_blob, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise ParseError(
            f"{images_path}: bad image magic 0x{magic:08x} at offset 0, "
            f"expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    count = _read_be32(img_blob, 4, images_path)
    rows = _read_be32(img_blob, 8, images_path)
    cols = _read_be32(img_blob, 12, images_path)
    expected = 16 + count * rows * cols
    if len(img_blob) != expected:
        raise ParseError(
            f"{images_path}: expected {expected} bytes for {count} images of "
            f"{rows}x{cols}, got {len(img_blob)} (payload ends at offset {len(img_blob)})"
        )
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)

    lbl_blob = Path(labels_path).read_bytes()
    magic = _read_be32(lbl_blob, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise ParseError(
            f"{labels_path}: bad label magic 0x{magic:08x} at offset 0, "
            f"expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    lcount = _read_be32(lbl_blob, 4, labels_path)
    if len(lbl_blob) != 8 + lcount:
        raise ParseError(
            f"{labels_path}: expected {8 + lcount} bytes for {lcount} labels, "
            f"got {len(lbl_blob)}"
        )
    if lcount != count:
        raise ParseError(
            f"label count {lcount} does not match image count {count} "
            f"({labels_path} offset 4)"
        )
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, offset=8).astype(np.int64)

    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    provenance = f"{Path(images_path).name}:{sha256_hex(img_blob)[:16]}"
    return LabeledImageSet(
        images=Tensor((pixels.astype(np.float32) / 255.0)),
        labels=labels,
        num_classes=num_classes,
        provenance=provenance,
    )


def save_idx(images_path, labels_path, st: LabeledImageSet) -> None:
    """Write a set back out as an IDX pair (pixels rounded to bytes)."""
    n, _, h, w = st.images.shape
    pixels = np.clip(np.rint(st.images.data * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(st.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# packed LLDS container

def save_packed(path, st: LabeledImageSet) -> None:
    imgs = st.images.data
    if imgs.size and (imgs.min() < 0.0 or imgs.max() > 1.0):
        raise ValidationError(
            f"packed container requires values in [0,1], got [{imgs.min()}, {imgs.max()}]"
        )
    if st.labels.size and st.labels.max() > 0xFFFF:
        raise ValidationError(f"labels exceed u16 range: max {st.labels.max()}")
    n, c, h, w = imgs.shape
    with open(path, "wb") as f:
        f.write(PACKED_MAGIC)
        f.write(struct.pack("<IIIIII", PACKED_VERSION, n, c, h, w, st.num_classes))
        f.write(b"\x00" * (PACKED_HEADER_SIZE - 28))
        f.write(np.ascontiguousarray(imgs, dtype="<f4").tobytes())
        f.write(st.labels.astype("<u2").tobytes())


def load_packed(path) -> LabeledImageSet:
    blob = Path(path).read_bytes()
    if blob[:4] != PACKED_MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r} at offset 0, expected {PACKED_MAGIC!r}")
    if len(blob) < PACKED_HEADER_SIZE:
        raise ParseError(
            f"{path}: header truncated at offset {len(blob)}, need {PACKED_HEADER_SIZE} bytes"
        )
    version, n, c, h, w, num_classes = struct.unpack_from("<IIIIII", blob, 4)
    if version != PACKED_VERSION:
        raise ParseError(f"{path}: unsupported version {version} at offset 4")
    img_bytes = 4 * n * c * h * w
    expected = PACKED_HEADER_SIZE + img_bytes + 2 * n
    if len(blob) != expected:
        raise ParseError(
            f"{path}: payload length mismatch at offset {min(len(blob), expected)}: "
            f"file has {len(blob)} bytes, header implies {expected}"
        )
    imgs = np.frombuffer(blob, dtype="<f4", count=n * c * h * w,
                         offset=PACKED_HEADER_SIZE).reshape(n, c, h, w)
    labels = np.frombuffer(blob, dtype="<u2", count=n,
                           offset=PACKED_HEADER_SIZE + img_bytes).astype(np.int64)
    provenance = f"{Path(path).name}:{sha256_hex(blob)[:16]}"
    return LabeledImageSet(
        images=Tensor(imgs.astype(np.float32)),
        labels=labels,
        num_classes=num_classes,
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# sampling and splitting

def subsample_mnist6(st: LabeledImageSet, target_per_class: int = 1000, seed: int = 0,
                     per_class_fraction: float | None = None) -> LabeledImageSet:
    """Keep classes 0-5 and draw a seeded per-class subsample.

    target_per_class=1000 reproduces the 6,000-image working set; passing
    per_class_fraction (e.g. 0.1) switches to a fraction of each class.
    """
    if st.num_classes < 6:
        raise ValidationError(f"need >= 6 classes to subsample, got {st.num_classes}")
    chosen = []
    for cls in range(6):
        idx = np.flatnonzero(st.labels == cls)
        rng = np.random.default_rng(np.random.SeedSequence((seed, cls)))
        order = rng.permutation(idx.size)
        if per_class_fraction is not None:
            take = int(round(per_class_fraction * idx.size))
        else:
            take = target_per_class
        take = min(take, idx.size)
        chosen.append(idx[order[:take]])
    picked = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    out = st.take(picked)
    out.num_classes = 6
    return out


def split_train_test(st: LabeledImageSet, spec: SplitSpec):
    """Seeded global shuffle; the first floor(fraction * count) go to train."""
    if st.count < 2:
        raise ValidationError(f"need >= 2 items to split, got {st.count}")
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0x53504C54)))
    perm = rng.permutation(st.count)
    n_train = int(spec.train_fraction * st.count)
    return st.take(perm[:n_train]), st.take(perm[n_train:])


# ---------------------------------------------------------------------------
# resizing and reconstruction preprocessing

RECON_HW = 128
ORIGINAL_HW = 32
TARGET_NOISE_VAR = 0.001


def nearest_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize (no anti-aliasing); exact at integer factors."""
    h, w = img.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return img[rows[:, None], cols[None, :]]


def center_crop_square(img: np.ndarray) -> np.ndarray:
    """Crop the long axis symmetrically (extra pixel goes to the far side)."""
    h, w = img.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return img[top:top + side, left:left + side]


def preprocess_recon_pair(sensor: Tensor, gt: Tensor, noise_seed: int):
    """(sensor frame, ground truth) -> 128x128 (input, noisy clamped target)."""
    if sensor.ndim != 2:
        raise ValidationError(f"sensor frame must be 2-d, got shape {sensor.shape}")
    if gt.ndim != 2 or gt.shape[0] != gt.shape[1]:
        raise ValidationError(f"ground truth must be square 2-d, got shape {gt.shape}")
    if RECON_HW % gt.shape[0] != 0:
        raise ValidationError(
            f"ground truth side {gt.shape[0]} must divide {RECON_HW} for exact scaling"
        )
    inp = nearest_resize(center_crop_square(sensor.data), RECON_HW, RECON_HW)
    target = nearest_resize(gt.data, RECON_HW, RECON_HW).astype(np.float64)
    rng = np.random.default_rng(np.random.SeedSequence((noise_seed, 0x54474E)))
    target = target + rng.normal(0.0, np.sqrt(TARGET_NOISE_VAR), size=target.shape)
    target = np.clip(target, 0.0, 1.0)
    return Tensor(inp.astype(np.float32)), Tensor(target.astype(np.float32))


def preprocess_recon_inputs(sensors: np.ndarray) -> np.ndarray:
    """Input half of the reconstruction preprocessing (no targets, no noise)."""
    n = sensors.shape[0]
    inputs = np.empty((n, 1, RECON_HW, RECON_HW), dtype=np.float32)
    for i in range(n):
        inputs[i, 0] = nearest_resize(center_crop_square(sensors[i, 0]), RECON_HW, RECON_HW)
    return inputs


def preprocess_recon_set(sensors: np.ndarray, gts: np.ndarray, noise_seed: int):
    """Vector form over (count,1,H,W) arrays; per-image seeds derive from the index."""
    n = sensors.shape[0]
    if gts.shape[0] != n:
        raise ValidationError(f"{n} sensor frames but {gts.shape[0]} ground-truth images")
    inputs = np.empty((n, 1, RECON_HW, RECON_HW), dtype=np.float32)
    targets = np.empty_like(inputs)
    for i in range(n):
        inp, tgt = preprocess_recon_pair(
            Tensor(sensors[i, 0]), Tensor(gts[i, 0]), noise_seed=noise_seed + i
        )
        inputs[i, 0] = inp.data
        targets[i, 0] = tgt.data
    return inputs, targets


CLASSIFIER_ROUTES = ("original", "raw", "reconstructed")


def resize_for_classifier(img: Tensor, route: str) -> Tensor:
    """Map one image to its classifier geometry for the given route."""
    if route not in CLASSIFIER_ROUTES:
        raise ValidationError(f"unknown route {route!r}, expected one of {CLASSIFIER_ROUTES}")
    if img.ndim != 2:
        raise ValidationError(f"expected 2-d image, got shape {img.shape}")
    if route == "raw":
        return Tensor(img.data.copy())
    if route == "original":
        if img.shape != (ORIGINAL_HW, ORIGINAL_HW):
            raise ValidationError(
                f"original route expects {ORIGINAL_HW}x{ORIGINAL_HW}, got {img.shape}"
            )
        return Tensor(img.data.copy())
    if img.shape != (RECON_HW, RECON_HW):
        raise ValidationError(
            f"reconstructed route expects {RECON_HW}x{RECON_HW}, got {img.shape}"
        )
    return Tensor(nearest_resize(img.data, ORIGINAL_HW, ORIGINAL_HW).copy())


def normalize_to_object_size(st: LabeledImageSet, object_hw: int = ORIGINAL_HW) -> LabeledImageSet:
    """Bring source images to the object plane size: center-pad smaller images
    with zeros (28x28 MNIST -> 32x32), nearest-resize anything else."""
    n, c, h, w = st.images.shape
    if (h, w) == (object_hw, object_hw):
        return st
    out = np.zeros((n, c, object_hw, object_hw), dtype=np.float32)
    if h <= object_hw and w <= object_hw:
        top = (object_hw - h) // 2
        left = (object_hw - w) // 2
        out[:, :, top:top + h, left:left + w] = st.images.data
    else:
        for i in range(n):
            out[i, 0] = nearest_resize(st.images.data[i, 0], object_hw, object_hw)
    return LabeledImageSet(
        images=Tensor(out),
        labels=st.labels.copy(),
        num_classes=st.num_classes,
        provenance=st.provenance,
    )
