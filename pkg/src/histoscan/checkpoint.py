"""Binary checkpoint format.

Little-endian throughout.  Layout:

    magic      4 bytes  b"HSCK"
    version    u32
    kind       u16 length + utf-8 (e.g. "pretrain", "finetune", "mil")
    config     u32 length + utf-8 JSON snapshot
    n_entries  u32
    entry*     u8 group (0 param, 1 buffer)
               u16 name length + utf-8 name
               u8 dtype code (0 '<f4', 1 '<f8', 2 '<i8')
               u8 ndim, u32 per dim
               raw array bytes, C order

Round-trips are bit-exact: arrays are written and restored from their
raw little-endian bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .module import Module

MAGIC = b"HSCK"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]


def _write_str(f, s: str, width: str) -> None:
    raw = s.encode("utf-8")
    f.write(struct.pack(f"<{width}", len(raw)))
    f.write(raw)


def _read_exact(f, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise ValueError("checkpoint: truncated file")
    return raw


def _read_str(f, width: str, size: int) -> str:
    (n,) = struct.unpack(f"<{width}", _read_exact(f, size))
    return _read_exact(f, n).decode("utf-8")


def _write_entry(f, group: int, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    shape = arr.shape  # before ascontiguousarray, which promotes 0-d to 1-d
    arr = np.ascontiguousarray(arr)
    le = arr.dtype.newbyteorder("<")
    if le not in _DTYPE_CODES:
        raise TypeError(f"checkpoint: unsupported dtype {arr.dtype} for {name}")
    f.write(struct.pack("<B", group))
    _write_str(f, name, "H")
    f.write(struct.pack("<BB", _DTYPE_CODES[le], len(shape)))
    for d in shape:
        f.write(struct.pack("<I", d))
    f.write(arr.astype(le, copy=False).tobytes())


def save_checkpoint(path, kind: str, config: dict,
                    params: Iterable[tuple[str, np.ndarray]],
                    buffers: Iterable[tuple[str, np.ndarray]] = ()) -> None:
    params = list(params)
    buffers = list(buffers)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        _write_str(f, kind, "H")
        _write_str(f, json.dumps(config, sort_keys=True), "I")
        f.write(struct.pack("<I", len(params) + len(buffers)))
        for name, arr in params:
            _write_entry(f, 0, name, arr)
        for name, arr in buffers:
            _write_entry(f, 1, name, arr)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise ValueError("checkpoint: bad magic")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise ValueError(f"checkpoint: unsupported version {version}")
        kind = _read_str(f, "H", 2)
        config = json.loads(_read_str(f, "I", 4))
        (n_entries,) = struct.unpack("<I", _read_exact(f, 4))
        params: dict[str, np.ndarray] = {}
        buffers: dict[str, np.ndarray] = {}
        for _ in range(n_entries):
            (group,) = struct.unpack("<B", _read_exact(f, 1))
            name = _read_str(f, "H", 2)
            code, ndim = struct.unpack("<BB", _read_exact(f, 2))
            if code not in _CODE_DTYPES:
                raise ValueError(f"checkpoint: unknown dtype code {code}")
            shape = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(ndim))
            dtype = _CODE_DTYPES[code]
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(_read_exact(f, count * dtype.itemsize), dtype=dtype)
            arr = arr.reshape(shape).copy()
            (params if group == 0 else buffers)[name] = arr
        if f.read(1):
            raise ValueError("checkpoint: trailing bytes")
    return Checkpoint(kind, config, params, buffers)


def model_state(model: Module) -> tuple[list, list]:
    params = [(name, p.data) for name, p in model.named_params()]
    buffers = [(name, b) for name, b in model.named_buffers()]
    return params, buffers


def load_model_state(model: Module, ckpt: Checkpoint) -> None:
    """Copy checkpoint arrays into an already-built model, strictly."""
    seen = set()
    for name, p in model.named_params():
        if name not in ckpt.params:
            raise KeyError(f"checkpoint: missing parameter {name}")
        arr = ckpt.params[name]
        if arr.shape != p.shape:
            raise ValueError(f"checkpoint: shape {arr.shape} != {p.shape} for {name}")
        p.data = arr.astype(p.dtype, copy=True)
        seen.add(name)
    extra = set(ckpt.params) - seen
    if extra:
        raise KeyError(f"checkpoint: unexpected parameters {sorted(extra)[:4]}")
    for name, b in model.named_buffers():
        if name not in ckpt.buffers:
            raise KeyError(f"checkpoint: missing buffer {name}")
        arr = ckpt.buffers[name]
        if arr.shape != b.shape:
            raise ValueError(f"checkpoint: buffer shape {arr.shape} != {b.shape} for {name}")
        b[...] = arr
