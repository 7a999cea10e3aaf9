"""IDX (MNIST-style) file parsing and worker partitioning."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tasks import even_partition

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX data; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class DatasetFile:
    images: np.ndarray  # (I, rows, cols), float64 in [0, 1]
    labels: np.ndarray  # (I,), int64

    @property
    def n_samples(self) -> int:
        return int(self.labels.size)

    @property
    def n_features(self) -> int:
        return int(np.prod(self.images.shape[1:]))


def _read(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def parse_idx(blob: bytes, expected_magic: int) -> np.ndarray:
    """Parse an unsigned-byte IDX blob: big-endian magic, one uint32 per dimension, then data."""
    if len(blob) < 4:
        raise IdxFormatError("truncated magic number", len(blob))
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(blob) < header_end:
        raise IdxFormatError(f"truncated header: {ndim} dimensions need {header_end} bytes", len(blob))
    dims = struct.unpack(f">{ndim}I", blob[4:header_end])
    size = int(np.prod(dims))
    if len(blob) < header_end + size:
        raise IdxFormatError(f"truncated data: expected {size} bytes after the header", len(blob))
    if len(blob) > header_end + size:
        raise IdxFormatError("trailing bytes after data", header_end + size)
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def load_idx_dataset(images_path, labels_path) -> DatasetFile:
    """Read an IDX image file (``0x803``) and label file (``0x801``); pixels are scaled to ``[0, 1]``."""
    images = parse_idx(_read(images_path), IMAGES_MAGIC)
    labels = parse_idx(_read(labels_path), LABELS_MAGIC)
    if labels.shape[0] != images.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return DatasetFile(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def partition_dataset(data, n_workers: int, seed: int) -> list[np.ndarray]:
    """Seeded i.i.d. split of a dataset (or a sample count) into balanced disjoint index sets."""
    n_samples = data if isinstance(data, (int, np.integer)) else data.n_samples
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    return even_partition(int(n_samples), n_workers, rng)
