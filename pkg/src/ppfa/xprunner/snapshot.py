"""Binary round snapshots for offline attack replay.

Layout (little-endian)::

    b"PFSNAP1\\0"  u32 version  u32 n_arrays
    n_arrays x [u16 name_len, name, u32 ndim, ndim x u64 dims, float64 data]
    u32 n_meta
    n_meta x [u16 key_len, key, u32 value_len, value]      (UTF-8 strings)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..federation import RoundSnapshot
from ..numkit import Batch, ModelSpec
from .data import FormatError

MAGIC = b"PFSNAP1\0"
VERSION = 1
_ARRAYS = ("W_prev", "W_client", "eta", "inputs", "labels")


class SnapshotVersionError(FormatError):
    """The file was written by a different format version."""


def snapshot_round(path, W_prev, W_client, eta: float, batch: Batch, meta: dict[str, str]) -> None:
    arrays = {
        "W_prev": np.asarray(W_prev, dtype=np.float64),
        "W_client": np.asarray(W_client, dtype=np.float64),
        "eta": np.asarray([eta], dtype=np.float64),
        "inputs": batch.inputs,
        "labels": batch.labels,
    }
    out = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack(f"<I{a.ndim}Q", a.ndim, *a.shape))
        out.append(a.tobytes())
    out.append(struct.pack("<I", len(meta)))
    for k, v in sorted(meta.items()):
        kb, vb = str(k).encode(), str(v).encode()
        out.append(struct.pack("<H", len(kb)) + kb + struct.pack("<I", len(vb)) + vb)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated {what} at byte offset {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_snapshot(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Raw arrays and metadata of a snapshot file."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise SnapshotVersionError(f"{path}: snapshot version {version} not supported (reader is version {VERSION})")
    (n,) = r.unpack("<I", "array count")
    arrays = {}
    for _ in range(n):
        (nl,) = r.unpack("<H", "array name length")
        name = r.take(nl, "array name").decode()
        (ndim,) = r.unpack("<I", "array rank")
        shape = r.unpack(f"<{ndim}Q", "array shape")
        count = int(np.prod(shape, dtype=np.int64))
        data = r.take(8 * count, f"array {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    (nm,) = r.unpack("<I", "metadata count")
    meta = {}
    for _ in range(nm):
        (kl,) = r.unpack("<H", "metadata key length")
        key = r.take(kl, "metadata key").decode()
        (vl,) = r.unpack("<I", "metadata value length")
        meta[key] = r.take(vl, "metadata value").decode()
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes at byte offset {r.pos}")
    missing = [a for a in _ARRAYS if a not in arrays]
    if missing:
        raise FormatError(f"{path}: missing arrays {missing}")
    return arrays, meta


def load_snapshot(path) -> tuple[RoundSnapshot, dict[str, str]]:
    arrays, meta = read_snapshot(path)
    snap = RoundSnapshot(
        client=int(meta.get("client", -1)), t=int(meta.get("round", 0)),
        W_prev=arrays["W_prev"], W_client=arrays["W_client"], eta=float(arrays["eta"][0]),
        batch=Batch(arrays["inputs"], arrays["labels"]),
    )
    return snap, meta


def model_meta(spec: ModelSpec) -> dict[str, str]:
    return {"model.kind": spec.kind, "model.input_dim": str(spec.input_dim),
            "model.num_classes": str(spec.num_classes), "model.hidden_dim": str(spec.hidden_dim),
            "model.activation": spec.activation}


def spec_from_meta(meta: dict[str, str]) -> ModelSpec:
    try:
        return ModelSpec(meta["model.kind"], int(meta["model.input_dim"]), int(meta["model.num_classes"]),
                         int(meta["model.hidden_dim"]), meta["model.activation"])
    except KeyError as e:
        raise FormatError(f"snapshot metadata lacks {e.args[0]!r}") from e


def save_round_snapshot(path, snap: RoundSnapshot, spec: ModelSpec, extra: dict[str, str] | None = None) -> None:
    meta = {**model_meta(spec), "client": str(snap.client), "round": str(snap.t), **(extra or {})}
    snapshot_round(path, snap.W_prev, snap.W_client, snap.eta, snap.batch, meta)
