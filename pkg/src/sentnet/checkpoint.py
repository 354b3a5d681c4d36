"""Binary checkpoint serialization.

Layout, all integers little-endian:

    magic "NSRG" | version u32 | entry_count u32
    per entry:  name_len u16 | name utf-8 | tensor_count u8
    per tensor: rank u8 | extents u64[rank] | float32 data
    trailer:    meta_len u32 | utf-8 "key=value\\n" lines

Round trips are bit-identical: tensors are stored as raw little-endian
float32 and metadata keys are written sorted.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointMismatchError,
    CheckpointTruncatedError,
)

MAGIC = b"NSRG"
VERSION = 1

Array = np.ndarray


@dataclass
class Checkpoint:
    """Named (weights, bias) tensor pairs plus string metadata."""

    entries: dict[str, tuple[Array, Array]]
    metadata: dict[str, str] = field(default_factory=dict)

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            entries={k: (w.copy(), b.copy()) for k, (w, b) in self.entries.items()},
            metadata=dict(self.metadata),
        )

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in self.entries.values())

    def validate_against(self, shapes: Mapping[str, tuple[tuple[int, ...], tuple[int, ...]]]) -> None:
        """Check entry names and tensor shapes against a spec's parameter table."""
        missing = sorted(set(shapes) - set(self.entries))
        if missing:
            raise CheckpointMismatchError(f"checkpoint is missing entries for {missing}")
        extra = sorted(set(self.entries) - set(shapes))
        if extra:
            raise CheckpointMismatchError(f"checkpoint has entries for unknown layers {extra}")
        for name, (w_shape, b_shape) in shapes.items():
            w, b = self.entries[name]
            if tuple(w.shape) != w_shape or tuple(b.shape) != b_shape:
                raise CheckpointMismatchError(
                    f"{name}: checkpoint tensors {tuple(w.shape)}/{tuple(b.shape)} "
                    f"do not match spec {w_shape}/{b_shape}"
                )


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointTruncatedError(f"truncated checkpoint while reading {what}")
    return data


def _write_tensor(f: BinaryIO, arr: Array) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(arr.tobytes())


def _read_tensor(f: BinaryIO, what: str) -> Array:
    (rank,) = struct.unpack("<B", _read_exact(f, 1, f"{what} rank"))
    if rank == 0:
        raise CheckpointFormatError(f"{what}: zero-rank tensor")
    extents = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, f"{what} extents"))
    count = 1
    for e in extents:
        count *= e
    raw = _read_exact(f, 4 * count, f"{what} data")
    return np.frombuffer(raw, dtype="<f4").reshape(extents).astype(np.float32, copy=True)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(ckpt.entries)))
    for name, tensors in ckpt.entries.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", len(tensors)))
        for arr in tensors:
            _write_tensor(buf, arr)
    meta_text = "".join(f"{k}={ckpt.metadata[k]}\n" for k in sorted(ckpt.metadata))
    meta_bytes = meta_text.encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path, spec=None) -> Checkpoint:
    """Read a checkpoint; with a spec, also validate names and shapes."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        (n_entries,) = struct.unpack("<I", _read_exact(f, 4, "entry count"))
        entries: dict[str, tuple[Array, Array]] = {}
        for i in range(n_entries):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (n_tensors,) = struct.unpack("<B", _read_exact(f, 1, f"{name} tensor count"))
            if n_tensors != 2:
                raise CheckpointFormatError(f"{name}: expected 2 tensors, found {n_tensors}")
            w = _read_tensor(f, f"{name} weights")
            b = _read_tensor(f, f"{name} bias")
            if name in entries:
                raise CheckpointFormatError(f"duplicate entry {name!r}")
            entries[name] = (w, b)
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        meta_raw = _read_exact(f, meta_len, "metadata").decode("utf-8")
        if f.read(1):
            raise CheckpointFormatError("trailing bytes after metadata block")
    metadata: dict[str, str] = {}
    for line in meta_raw.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CheckpointFormatError(f"malformed metadata line {line!r}")
        key, _, value = line.partition("=")
        metadata[key] = value
    ckpt = Checkpoint(entries=entries, metadata=metadata)
    if spec is not None:
        from .network import parameter_shapes

        ckpt.validate_against(parameter_shapes(spec))
    return ckpt
