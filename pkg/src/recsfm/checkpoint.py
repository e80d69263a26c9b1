"""Binary checkpoint format for parameters, Adam moments, and metadata.

Layout (all integers little-endian):

    magic            8 bytes  b"DROCKPT1"
    param_count      uint32
    per parameter:
        name_len     uint16
        name         utf-8 bytes
        dtype_code   uint8      0 = float32, 1 = float64
        rank         uint8
        extents      rank x uint32
        values       raw little-endian array bytes (C order)
    has_moments      uint8      0 or 1
    if has_moments:
        adam_step    uint64
        per parameter (same order): m values then v values, raw bytes,
        same dtype and extents as the parameter itself
    meta_count       uint32
    per entry:
        key_len      uint16, key utf-8
        val_len      uint32, value utf-8

Round-trips are bit-exact: save -> load -> save produces identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError
from .optim import AdamState
from .tensor import Parameter

MAGIC = b"DROCKPT1"

_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class Checkpoint:
    """In-memory image of a checkpoint file."""

    params: dict[str, np.ndarray]
    adam: AdamState | None = None
    meta: dict[str, str] = field(default_factory=dict)


def _write_array(out: bytearray, arr: np.ndarray) -> None:
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"checkpoint arrays must be float32/float64, got {arr.dtype}")
    out += arr.astype(_CODE_DTYPES[code], copy=False).tobytes(order="C")


def save_checkpoint(path: str | Path, params: list[Parameter],
                    adam: AdamState | None = None,
                    meta: dict[str, str] | None = None) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise FormatError("duplicate parameter names in checkpoint")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(params))
    for p in params:
        raw = p.name.encode("utf-8")
        code = _DTYPE_CODES.get(p.data.dtype)
        if code is None:
            raise FormatError(f"parameter {p.name} has unsupported dtype {p.data.dtype}")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", code, p.data.ndim)
        out += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
        _write_array(out, p.data)
    if adam is not None:
        out += struct.pack("<B", 1)
        out += struct.pack("<Q", adam.step)
        for p in params:
            if p.name not in adam.m or p.name not in adam.v:
                raise FormatError(f"Adam state missing moments for {p.name}")
            _write_array(out, adam.m[p.name].astype(p.data.dtype, copy=False))
            _write_array(out, adam.v[p.name].astype(p.data.dtype, copy=False))
    else:
        out += struct.pack("<B", 0)
    meta = meta or {}
    out += struct.pack("<I", len(meta))
    for key, value in meta.items():
        kraw = key.encode("utf-8")
        vraw = str(value).encode("utf-8")
        out += struct.pack("<H", len(kraw)) + kraw
        out += struct.pack("<I", len(vraw)) + vraw
    try:
        Path(path).write_bytes(bytes(out))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint {self.path} truncated at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf, str(path))
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"checkpoint {path} has a bad magic header")
    count = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    shapes: list[tuple[str, np.dtype, tuple]] = []
    for _ in range(count):
        name_len = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise FormatError(f"checkpoint {path}: unknown dtype code {code} for {name}")
        if rank:
            vals = r.unpack(f"<{rank}I")
            shape = (vals,) if rank == 1 else tuple(vals)
        else:
            shape = ()
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape)
        if name in params:
            raise FormatError(f"checkpoint {path}: duplicate parameter {name}")
        params[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        shapes.append((name, dtype, shape))
    adam = None
    if r.unpack("<B"):
        adam = AdamState(step=int(r.unpack("<Q")))
        for name, dtype, shape in shapes:
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            m = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape)
            v = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape)
            adam.m[name] = m.astype(dtype.newbyteorder("="), copy=True)
            adam.v[name] = v.astype(dtype.newbyteorder("="), copy=True)
    meta: dict[str, str] = {}
    meta_count = r.unpack("<I")
    for _ in range(meta_count):
        klen = r.unpack("<H")
        key = r.take(klen).decode("utf-8")
        vlen = r.unpack("<I")
        meta[key] = r.take(vlen).decode("utf-8")
    if r.pos != len(buf):
        raise FormatError(f"checkpoint {path} has {len(buf) - r.pos} trailing bytes")
    return Checkpoint(params=params, adam=adam, meta=meta)


def restore_parameters(params: list[Parameter], ckpt: Checkpoint) -> None:
    """Copy checkpoint values into an existing registry; names must match."""
    missing = [p.name for p in params if p.name not in ckpt.params]
    extra = set(ckpt.params) - {p.name for p in params}
    if missing or extra:
        raise FormatError(
            f"checkpoint/model mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for p in params:
        stored = ckpt.params[p.name]
        if stored.shape != p.data.shape:
            raise FormatError(
                f"checkpoint shape {stored.shape} != model shape {p.data.shape} for {p.name}")
        p.tensor.data = stored.astype(p.data.dtype, copy=True)
