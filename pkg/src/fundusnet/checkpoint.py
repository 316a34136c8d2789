"""Binary checkpoint format.

Layout (all integers little-endian):

  magic  b"NNMN"
  u8     format version (1)
  u32    tensor entry count
  entry: u16 name length, name bytes (UTF-8), u8 dtype tag (0 = float32),
         u8 rank, u32 dims[rank], raw little-endian float32 values
  u32    metadata length, then that many bytes of UTF-8 JSON

Tensors cover parameters ("param.<name>"), batch-norm buffers
("buffer.<name>") and optimizer moments ("opt.<slot>.<name>"). Metadata
carries the run configuration (verbatim), its hash, the epoch, seed, and
optimizer scalars. The round trip is bit-exact; a truncated or foreign
file fails before any state is returned.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"NNMN"
VERSION = 1
_DTYPE_F32 = 0


def config_hash(config_dict: dict) -> str:
    canon = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        if arr.dtype != np.float32:
            raise FormatError(f"checkpoint tensors must be float32, {name!r} is {arr.dtype}")
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name!r}")
        if arr.ndim < 1 or arr.ndim > 4:
            raise FormatError(f"tensor {name!r} has unsupported rank {arr.ndim}")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    meta_b = json.dumps(meta).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta_b)))
    chunks.append(meta_b)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, blob: bytes, origin: str):
        self.blob = blob
        self.pos = 0
        self.origin = origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.origin}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Parse a checkpoint fully before returning; no partial state."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic (not a checkpoint)")
    (version,) = reader.unpack("<B")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        dtype_tag, rank = reader.unpack("<BB")
        if dtype_tag != _DTYPE_F32:
            raise FormatError(f"{path}: unknown dtype tag {dtype_tag} for {name!r}")
        if rank < 1 or rank > 4:
            raise FormatError(f"{path}: bad rank {rank} for {name!r}")
        dims = reader.unpack(f"<{rank}I")
        n_values = int(np.prod(dims))
        raw = reader.take(4 * n_values)
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    (meta_len,) = reader.unpack("<I")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"{path}: bad metadata block: {err}") from None
    if reader.pos != len(reader.blob):
        raise FormatError(f"{path}: {len(reader.blob) - reader.pos} trailing bytes")
    return tensors, meta


def model_tensors(model) -> dict[str, np.ndarray]:
    out = {}
    for name, p in model.named_parameters():
        out[f"param.{name}"] = p.data
    for name, b in model.named_buffers():
        out[f"buffer.{name}"] = b
    return out


def optimizer_tensors(opt_state) -> dict[str, np.ndarray]:
    return {f"opt.{name}": arr for name, arr in opt_state.moment_arrays()}


def load_into_model(model, tensors: dict[str, np.ndarray]) -> None:
    """Copy checkpoint tensors into an already-built model, bit-exact."""
    for name, p in model.named_parameters():
        key = f"param.{name}"
        if key not in tensors:
            raise FormatError(f"checkpoint missing parameter {name!r}")
        if tensors[key].shape != p.data.shape:
            raise FormatError(f"shape mismatch for {name!r}: "
                              f"{tensors[key].shape} vs {p.data.shape}")
        p.data = tensors[key].copy()
    for name, b in model.named_buffers():
        key = f"buffer.{name}"
        if key not in tensors:
            raise FormatError(f"checkpoint missing buffer {name!r}")
        b[...] = tensors[key]
