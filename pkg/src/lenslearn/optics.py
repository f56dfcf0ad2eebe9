"""Seeded linear surrogate for the window-plus-edge-sensor capture rig.

The camera is a nonnegative matrix T mapping vectorized object pixels to
vectorized sensor pixels. Each column (one object pixel's space-variant
response) blends a smoothly varying anchor field with a per-pixel unique
field, gets low-passed by a Gaussian over the sensor grid, and is
L1-normalized so every object pixel delivers unit energy. Captures add
per-frame Gaussian read noise and average a fixed number of frames.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.ndimage import gaussian_filter

from .tensor import Tensor


class ValidationError(ValueError):
    """Input violates a documented precondition."""


@dataclass
class OpticsConfig:
    object_h: int = 32
    object_w: int = 32
    sensor_h: int = 125
    sensor_w: int = 170
    distance_mm: float = 250.0        # metadata only; does not enter the math
    smoothing_sigma: float = 2.0      # sensor pixels
    seed: int = 0
    read_noise_sigma: float = 0.01    # per frame, fraction of full scale
    frames_per_capture: int = 10
    psf_corr_length: float = 4.0      # object pixels between anchor fields
    psf_uniqueness: float = 0.5       # weight of the per-pixel unique field

    def validate(self) -> None:
        for name in ("object_h", "object_w", "sensor_h", "sensor_w"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.read_noise_sigma < 0:
            raise ValidationError(f"read_noise_sigma must be >= 0, got {self.read_noise_sigma}")
        if self.frames_per_capture < 1:
            raise ValidationError(
                f"frames_per_capture must be positive, got {self.frames_per_capture}"
            )
        if not 0.0 <= self.psf_uniqueness <= 1.0:
            raise ValidationError(f"psf_uniqueness must be in [0,1], got {self.psf_uniqueness}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TransferOperator:
    """T: (sensor_h * sensor_w) x (object_h * object_w), unit-L1 columns."""

    T: np.ndarray
    config: OpticsConfig

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.T, dtype="<f4").tobytes()).hexdigest()

    def condition_estimate(self) -> float:
        """sigma_max / sigma_min via the eigenvalues of T^T T."""
        t = self.T.astype(np.float64)
        gram = t.T @ t
        eig = np.linalg.eigvalsh(gram)
        smallest = max(float(eig[0]), 1e-300)
        return float(np.sqrt(eig[-1] / smallest))


_NOISE_FLOOR = 0.05


def _anchor_grid(cfg: OpticsConfig):
    rows = max(2, int(np.ceil(cfg.object_h / cfg.psf_corr_length)) + 1)
    cols = max(2, int(np.ceil(cfg.object_w / cfg.psf_corr_length)) + 1)
    return rows, cols


def _field(rng: np.random.Generator, shape) -> np.ndarray:
    # uniform with a positive floor keeps columns nonzero after smoothing
    return rng.uniform(_NOISE_FLOOR, 1.0, size=shape)


def build_transfer_operator(cfg: OpticsConfig) -> TransferOperator:
    """Deterministically materialize the camera matrix for a config."""
    cfg.validate()
    sh, sw = cfg.sensor_h, cfg.sensor_w
    oh, ow = cfg.object_h, cfg.object_w
    arows, acols = _anchor_grid(cfg)

    anchors = np.empty((arows, acols, sh, sw))
    for a in range(arows):
        for b in range(acols):
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0, a * acols + b)))
            anchors[a, b] = _field(rng, (sh, sw))

    # precompute interpolation weights along each object axis
    r_pos = np.linspace(0.0, arows - 1.0, oh) if oh > 1 else np.zeros(1)
    c_pos = np.linspace(0.0, acols - 1.0, ow) if ow > 1 else np.zeros(1)

    t = np.empty((sh * sw, oh * ow), dtype=np.float64)
    beta = cfg.psf_uniqueness
    for r in range(oh):
        r0 = min(int(r_pos[r]), arows - 2)
        fr = r_pos[r] - r0
        for c in range(ow):
            c0 = min(int(c_pos[c]), acols - 2)
            fc = c_pos[c] - c0
            smooth = (
                (1 - fr) * (1 - fc) * anchors[r0, c0]
                + (1 - fr) * fc * anchors[r0, c0 + 1]
                + fr * (1 - fc) * anchors[r0 + 1, c0]
                + fr * fc * anchors[r0 + 1, c0 + 1]
            )
            j = r * ow + c
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1, j)))
            field = (1.0 - beta) * smooth + beta * _field(rng, (sh, sw))
            if cfg.smoothing_sigma > 0:
                field = gaussian_filter(field, cfg.smoothing_sigma, mode="reflect")
            total = field.sum()
            if total <= 0:
                raise RuntimeError(f"transfer column {j} vanished after smoothing")
            t[:, j] = (field / total).ravel()

    return TransferOperator(T=t.astype(np.float32), config=cfg)


def _check_object(obj: Tensor, cfg: OpticsConfig) -> None:
    if obj.shape != (cfg.object_h, cfg.object_w):
        raise ValidationError(
            f"object shape {obj.shape} does not match config "
            f"{(cfg.object_h, cfg.object_w)}"
        )
    if obj.data.size and (obj.data.min() < 0.0 or obj.data.max() > 1.0):
        raise ValidationError(
            f"object values must lie in [0,1], got range "
            f"[{obj.data.min()}, {obj.data.max()}]"
        )


def render_capture(obj: Tensor, op: TransferOperator, rng: np.random.Generator) -> Tensor:
    """Average frames_per_capture noisy frames of T @ vec(obj), clamped at 0."""
    cfg = op.config
    _check_object(obj, cfg)
    s0 = op.T.astype(np.float64) @ obj.data.astype(np.float64).ravel()
    if cfg.read_noise_sigma > 0:
        noise = rng.normal(
            0.0, cfg.read_noise_sigma, size=(cfg.frames_per_capture, s0.size)
        )
        s = s0 + noise.mean(axis=0)
    else:
        s = s0
    s = np.maximum(s, 0.0)
    return Tensor(s.reshape(cfg.sensor_h, cfg.sensor_w).astype(np.float32))


def capture_rng(seed: int, index: int) -> np.random.Generator:
    """Noise stream for one image, derived from (seed, index) only."""
    return np.random.default_rng(np.random.SeedSequence((seed, 2, index)))


def render_dataset(images: np.ndarray, op: TransferOperator, seed: int) -> np.ndarray:
    """Render one capture per (count, 1, H, W) image; order-independent streams.

    Returns a (count, 1, sensor_h, sensor_w) float32 array.
    """
    cfg = op.config
    if images.ndim != 4 or images.shape[1] != 1:
        raise ValidationError(f"expected images (count, 1, H, W), got {images.shape}")
    if images.shape[2:] != (cfg.object_h, cfg.object_w):
        raise ValidationError(
            f"image dims {images.shape[2:]} do not match object dims "
            f"{(cfg.object_h, cfg.object_w)}"
        )
    out = np.empty((images.shape[0], 1, cfg.sensor_h, cfg.sensor_w), dtype=np.float32)
    for i in range(images.shape[0]):
        frame = render_capture(Tensor(images[i, 0]), op, capture_rng(seed, i))
        out[i, 0] = frame.data
    return out
