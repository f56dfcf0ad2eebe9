"""Network base class and the LLTN checkpoint container.

Checkpoint layout: magic "LLTN", u32 version, then one record per named
state array in network declaration order (parameters, then running
buffers, per layer): u32 name length, UTF-8 name bytes, u32 rank, u32
extents, raw little-endian float32 data. All integers little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from .layers import Layer
from .tensor import ShapeError

CHECKPOINT_MAGIC = b"LLTN"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or mismatched LLTN checkpoint file."""


class Network(Layer):
    """A trainable layer graph with named parameters and checkpoint I/O."""

    def count_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def save_checkpoint(self, path) -> None:
        write_checkpoint(path, list(self.named_state()))

    def load_checkpoint(self, path) -> None:
        entries = read_checkpoint(path)
        expected = list(self.named_state())
        if len(entries) != len(expected):
            raise CheckpointError(
                f"checkpoint holds {len(entries)} arrays, network declares {len(expected)}"
            )
        for (got_name, arr), (want_name, t) in zip(entries, expected):
            if got_name != want_name:
                raise CheckpointError(
                    f"checkpoint entry {got_name!r} does not match declared {want_name!r}"
                )
            if arr.shape != t.shape:
                raise CheckpointError(
                    f"checkpoint entry {got_name!r} has shape {arr.shape}, expected {t.shape}"
                )
            t.data = arr.astype(t.data.dtype)
            t.grad = None


def write_checkpoint(path, entries) -> None:
    """entries: iterable of (name, Tensor-or-ndarray)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, t in entries:
            arr = np.ascontiguousarray(getattr(t, "data", t), dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_checkpoint(path):
    """Return the list of (name, float32 ndarray) records, in file order."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r} at offset 0")
    if len(blob) < 8:
        raise CheckpointError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    entries = []
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise CheckpointError(f"truncated record header at offset {pos}")
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + nlen + 4 > len(blob):
            raise CheckpointError(f"truncated record name at offset {pos}")
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + 4 * rank > len(blob):
            raise CheckpointError(f"truncated extents for {name!r} at offset {pos}")
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = 4 * count
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated data for {name!r} at offset {pos}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += nbytes
        entries.append((name, arr.copy()))
    return entries
