"""Binary PGM (P5, maxval 255) figure output: bit-exact and codec-free."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np


def to_u8(img: np.ndarray) -> np.ndarray:
    """Map a [0,1] float image to uint8 by rounding."""
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"PGM writer needs a 2-d uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", blob)
    if not m:
        raise ValueError(f"{path}: not a maxval-255 P5 PGM")
    w, h = int(m.group(1)), int(m.group(2))
    data = blob[m.end():]
    if len(data) != w * h:
        raise ValueError(f"{path}: payload is {len(data)} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


GRID_PANEL = 128
GRID_GUTTER = 4
GRID_GUTTER_LEVEL = 64


def recon_grid(inputs: np.ndarray, targets: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    """Rows of (input, ground truth, output) panels for k samples.

    Result is k*128 + (k-1)*4 pixels high and 3*128 + 2*4 wide. Sensor
    inputs are display-normalized by their own maximum; targets and
    outputs are already in [0,1].
    """
    k = inputs.shape[0]
    if k == 0:
        raise ValueError("cannot build a grid from zero samples")
    p, gut = GRID_PANEL, GRID_GUTTER
    height = k * p + (k - 1) * gut
    width = 3 * p + 2 * gut
    grid = np.full((height, width), GRID_GUTTER_LEVEL, dtype=np.uint8)
    for i in range(k):
        top = i * (p + gut)
        inp = inputs[i, 0]
        peak = float(inp.max())
        panels = (inp / peak if peak > 0 else inp, targets[i, 0], outputs[i, 0])
        for j, panel in enumerate(panels):
            left = j * (p + gut)
            grid[top:top + p, left:left + p] = to_u8(np.asarray(panel, dtype=np.float64))
    return grid


def confusion_heatmap(mat: np.ndarray, scale: int = 32) -> np.ndarray:
    """Upscaled grayscale heatmap of a confusion matrix (max count = white)."""
    peak = mat.max()
    norm = mat.astype(np.float64) / peak if peak else mat.astype(np.float64)
    img = to_u8(norm)
    return np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
