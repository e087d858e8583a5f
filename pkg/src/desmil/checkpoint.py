"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic        8 bytes  b"DESMILCK"
    version      u32
    payload_len  u64
    payload:
      header     u32 length + UTF-8 JSON (hyperparams, q, meta)
      tensors    u32 count, then per tensor: u16 name length, name, u8 ndim,
                 ndim x u64 shape, float64 data
      tables     u32 count, then per table: u16 name length, name, u64 n,
                 n records of (i64 user, i64 cut, f64 weight)
      rng        u32 length + UTF-8 JSON of generator states
    sha256       32 bytes over every preceding byte
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DESMILCK"
VERSION = 1
_RECORD = np.dtype([("user", "<i8"), ("cut", "<i8"), ("w", "<f8")])


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    hyperparams: dict
    tensors: dict[str, np.ndarray]
    tables: dict[str, dict[tuple[int, int], float]] = field(default_factory=dict)
    rng_states: dict[str, dict] = field(default_factory=dict)
    q: int = 0
    meta: dict = field(default_factory=dict)


def _name(buf: io.BytesIO, name: str) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _blob(buf: io.BytesIO, obj) -> None:
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def to_bytes(ckpt: Checkpoint) -> bytes:
    body = io.BytesIO()
    _blob(body, {"hyperparams": ckpt.hyperparams, "q": ckpt.q, "meta": ckpt.meta})
    body.write(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        _name(body, name)
        body.write(struct.pack("<B", arr.ndim))
        body.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.write(arr.tobytes())
    body.write(struct.pack("<I", len(ckpt.tables)))
    for name, table in ckpt.tables.items():
        _name(body, name)
        rec = np.empty(len(table), dtype=_RECORD)
        for k, ((user, cut), w) in enumerate(sorted(table.items())):
            rec[k] = (user, cut, w)
        body.write(struct.pack("<Q", len(rec)))
        body.write(rec.tobytes())
    _blob(body, ckpt.rng_states)
    payload = body.getvalue()
    head = MAGIC + struct.pack("<IQ", VERSION, len(payload))
    return head + payload + hashlib.sha256(head + payload).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError("checkpoint payload ends early")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def blob(self):
        (n,) = self.unpack("<I")
        return json.loads(self.take(n).decode("utf-8"))


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 20:
        raise CheckpointTruncatedError("file shorter than the fixed header")
    if data[:8] != MAGIC:
        raise CheckpointVersionError(f"bad magic {data[:8]!r}; not a checkpoint of this format")
    version, payload_len = struct.unpack("<IQ", data[8:20])
    if len(data) < 20 + payload_len + 32:
        raise CheckpointTruncatedError(f"expected {20 + payload_len + 32} bytes, found {len(data)}")
    end = 20 + payload_len
    if hashlib.sha256(data[:end]).digest() != data[end : end + 32]:
        raise CheckpointChecksumError("checksum mismatch; checkpoint is corrupted")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")

    r = _Reader(data[20:end])
    header = r.blob()
    tensors = {}
    (count,) = r.unpack("<I")
    for _ in range(count):
        name = r.name()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q")
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    tables = {}
    (count,) = r.unpack("<I")
    for _ in range(count):
        name = r.name()
        (n,) = r.unpack("<Q")
        rec = np.frombuffer(r.take(n * _RECORD.itemsize), dtype=_RECORD)
        tables[name] = {(int(a), int(b)): float(w) for a, b, w in rec}
    rng_states = r.blob()
    return Checkpoint(header["hyperparams"], tensors, tables, rng_states, header["q"], header["meta"])


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
