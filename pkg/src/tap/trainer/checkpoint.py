"""Binary checkpoint files (little-endian throughout).

Layout::

    magic "TAPK" | version u16 | step u64 | epoch u32 | config sha256 (32 bytes)
    config text   (u32 length + UTF-8)
    rng state     (u32 length + UTF-8 JSON, empty when absent)
    params, first moments, second moments: three tables, each
        count u32, then per entry:
        name (u16 length + UTF-8) | dtype u8 (4 = f32, 8 = f64) | ndim u8 | dims u32 * ndim | data

Entries are written in lexicographic name order, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tap.errors import FormatError

MAGIC = b"TAPK"
VERSION = 1
_HEAD = struct.Struct("<4sHQI32s")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    rng_state: dict | None = None
    config_text: str = ""

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.config_text.encode("utf-8")).digest()


def _write_table(out: list[bytes], table: dict[str, np.ndarray]) -> None:
    out.append(struct.pack("<I", len(table)))
    for name in sorted(table):
        arr = np.asarray(table[name])
        code = 8 if arr.dtype == np.float64 else 4
        name_b = name.encode("utf-8")
        out.append(struct.pack("<H", len(name_b)) + name_b)
        out.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = [_HEAD.pack(MAGIC, VERSION, ckpt.step, ckpt.epoch, ckpt.digest)]
    for text in (ckpt.config_text, json.dumps(ckpt.rng_state, sort_keys=True) if ckpt.rng_state is not None else ""):
        b = text.encode("utf-8")
        out.append(struct.pack("<I", len(b)) + b)
    for table in (ckpt.params, ckpt.m, ckpt.v):
        _write_table(out, table)
    return b"".join(out)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint (need {n} bytes)", self.pos)
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def text(self) -> str:
        (n,) = self.unpack("<I")
        at = self.pos
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.path}: invalid UTF-8 text", at) from None

    def table(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (ln,) = self.unpack("<H")
            name = self.take(ln).decode("utf-8")
            at = self.pos
            code, ndim = self.unpack("<BB")
            if code not in _DTYPES:
                raise FormatError(f"{self.path}: unknown dtype code {code} for {name}", at)
            shape = self.unpack(f"<{ndim}I")
            dt = _DTYPES[code]
            n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            out[name] = np.frombuffer(self.take(n), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        return out


def from_bytes(raw: bytes, path="<bytes>") -> Checkpoint:
    r = _Reader(raw, path)
    magic, version, step, epoch, digest = r.unpack(_HEAD.format)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", 4)
    config_text = r.text()
    rng_text = r.text()
    params, m, v = r.table(), r.table(), r.table()
    if r.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.pos} trailing bytes", r.pos)
    ckpt = Checkpoint(params, m, v, step, epoch, json.loads(rng_text) if rng_text else None, config_text)
    if ckpt.digest != digest:
        raise FormatError(f"{path}: config digest mismatch", 18)
    return ckpt


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), path)
