"""Dataset ingestion: Gaussian blobs for desk-scale runs and IDX (MNIST-style) files."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..numkit import Batch, ParameterError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    """Malformed binary input; the message carries the byte offset."""


def class_means(classes: int, dim: int, low: float = 0.05, high: float = 0.95) -> np.ndarray:
    """Scaled simplex vertices: class c is ``high`` on coordinates i with i % classes == c."""
    means = np.full((classes, dim), low)
    for c in range(classes):
        means[c, c::classes] = high
    return means


def synth_dataset(classes: int = 4, dim: int = 8, per_class: int = 100, seed: int = 0,
                  sigma: float = 0.3, low: float = 0.05, high: float = 0.95) -> Batch:
    if min(classes, dim, per_class) < 1:
        raise ParameterError("classes, dim and per_class must be >= 1")
    if dim < classes:
        raise ParameterError("need dim >= classes so every class owns a coordinate")
    rng = np.random.default_rng(seed)
    means = class_means(classes, dim, low, high)
    y = np.repeat(np.arange(classes), per_class)
    x = np.clip(means[y] + sigma * rng.standard_normal((y.size, dim)), 0.0, 1.0)
    order = rng.permutation(y.size)
    return Batch.from_indices(x[order], y[order], classes)


def _read_header(buf: bytes, expected_magic: int, path) -> tuple[int, ...]:
    if len(buf) < 4:
        raise FormatError(f"{path}: truncated magic at byte offset {len(buf)}")
    magic = struct.unpack_from(">I", buf, 0)[0]
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x} at byte offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    if len(buf) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated dimension header at byte offset {len(buf)}")
    return struct.unpack_from(f">{ndim}I", buf, 4)


def read_idx(path, expected_magic: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    dims = _read_header(buf, expected_magic, path)
    start = 4 + 4 * len(dims)
    need = int(np.prod(dims, dtype=np.int64))
    if len(buf) - start < need:
        raise FormatError(f"{path}: data truncated at byte offset {len(buf)}, "
                          f"expected {start + need} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=start).reshape(dims)


def downsample(images: np.ndarray, side: int) -> np.ndarray:
    """Center-crop to a multiple of ``side`` and block-average to side x side."""
    n, h, w = images.shape
    f = min(h, w) // side
    if f < 1:
        raise ParameterError(f"cannot downsample {h}x{w} images to {side}x{side}")
    top, left = (h - f * side) // 2, (w - f * side) // 2
    crop = images[:, top:top + f * side, left:left + f * side]
    return crop.reshape(n, side, f, side, f).mean(axis=(2, 4))


def load_idx(images_path, labels_path, num_classes: int = 10, side: int | None = None,
             limit: int | None = None) -> Batch:
    """Images scaled to [0, 1] (optionally downsampled to side x side) with one-hot labels."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected 3 dimensions at byte offset 4")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images "
                          "(count at byte offset 4)")
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{labels_path}: label {labels.max()} >= num_classes {num_classes}")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.astype(np.float64) / 255.0
    if side is not None:
        x = downsample(x, side)
    return Batch.from_indices(x.reshape(x.shape[0], -1), labels, num_classes)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (used for fixtures and exports)."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())
