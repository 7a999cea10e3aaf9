"""Norm-scaled stochastic uniform quantizer with a fixed-length bit encoding.

A vector ``y`` is sent as its Euclidean norm plus, per coordinate, a sign and
an integer level in ``{0, ..., s}``.  Level ``l`` stands for the magnitude
``norm * l / s``; each coordinate is rounded up or down to one of its two
neighbouring levels with the probabilities that make the result unbiased.

Bit layout (most significant bit first)::

    [norm: 32-bit IEEE-754 float, big-endian]
    [coordinate 0: 1 sign bit][coordinate 0: w-bit big-endian level]
    ...
    [coordinate D-1: 1 sign bit][coordinate D-1: w-bit big-endian level]

with ``w = ceil(log2(s + 1))``.  A set sign bit means negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INFINITE = math.inf
"""Level count meaning "no quantization": the quantizer is the identity."""

NORM_BITS = 32


class QuantizationError(ValueError):
    """Raised for malformed quantizer input or bit strings."""


def variance_bound(s: int, dimension: int) -> float:
    """Relative variance constant ``q_s`` of the quantizer: ``min(D/s^2, sqrt(D)/s)``."""
    if s < 1 or dimension < 1:
        raise QuantizationError(f"need s >= 1 and D >= 1, got s={s}, D={dimension}")
    return min(dimension / s**2, math.sqrt(dimension) / s)


def level_bits(s: int) -> int:
    # ceil(log2(s + 1)) for s >= 1
    return int(s).bit_length()


def payload_bits(s: int, dimension: int) -> int:
    """Exact length in bits of :func:`encode` output."""
    if s < 1 or dimension < 1:
        raise QuantizationError(f"need s >= 1 and D >= 1, got s={s}, D={dimension}")
    return NORM_BITS + dimension * (1 + level_bits(s))


@dataclass(frozen=True)
class QuantSpec:
    levels: float  # positive int, or INFINITE
    dimension: int
    variance_bound: float
    payload_bits: int

    def __post_init__(self):
        if self.dimension < 1:
            raise QuantizationError(f"dimension must be positive, got {self.dimension}")
        if self.is_exact:
            if self.variance_bound != 0:
                raise QuantizationError("unquantized spec must have zero variance bound")
        else:
            if self.levels != int(self.levels) or self.levels < 1:
                raise QuantizationError(f"levels must be a positive integer, got {self.levels}")
            if not math.isclose(self.variance_bound, variance_bound(int(self.levels), self.dimension)):
                raise QuantizationError("variance_bound inconsistent with (levels, dimension)")
            if self.payload_bits != payload_bits(int(self.levels), self.dimension):
                raise QuantizationError("payload_bits inconsistent with (levels, dimension)")

    @classmethod
    def create(cls, levels: float, dimension: int) -> "QuantSpec":
        if levels == INFINITE:
            # full-precision exchange: one float32 per coordinate
            return cls(INFINITE, dimension, 0.0, NORM_BITS * dimension)
        s = int(levels)
        return cls(s, dimension, variance_bound(s, dimension), payload_bits(s, dimension))

    @property
    def is_exact(self) -> bool:
        return self.levels == INFINITE


def _check_input(y, spec: QuantSpec) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != spec.dimension:
        raise QuantizationError(f"expected a vector of length {spec.dimension}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise QuantizationError("input contains non-finite components")
    return y


def quantize_levels(y, spec: QuantSpec, rng: np.random.Generator):
    """Draw the random representation of ``y``: ``(norm, negative mask, levels)``.

    Always consumes exactly ``D`` uniforms from ``rng`` so that stream usage
    does not depend on the data.
    """
    if spec.is_exact:
        raise QuantizationError("unquantized spec has no level representation")
    y = _check_input(y, spec)
    s = int(spec.levels)
    u = rng.random(spec.dimension)
    norm = float(np.linalg.norm(y))
    negative = y < 0
    if norm == 0.0:
        return 0.0, negative, np.zeros(spec.dimension, dtype=np.int64)
    scaled = np.minimum(np.abs(y) / norm, 1.0) * s
    lower = np.floor(scaled)
    levels = lower + (u < scaled - lower)
    return norm, negative, np.minimum(levels, s).astype(np.int64)


def _reconstruct(norm: float, negative: np.ndarray, levels: np.ndarray, s: int) -> np.ndarray:
    signs = np.where(negative, -1.0, 1.0)
    return norm * signs * (levels / s)


def quantize(y, spec: QuantSpec, rng: np.random.Generator) -> np.ndarray:
    """Unbiased random quantization ``Q(y; s)``; the identity when levels is INFINITE."""
    if spec.is_exact:
        return _check_input(y, spec).copy()
    norm, negative, levels = quantize_levels(y, spec, rng)
    return _reconstruct(norm, negative, levels, int(spec.levels))


def encode(y, spec: QuantSpec, rng: np.random.Generator) -> np.ndarray:
    """Quantize ``y`` and serialize it; returns a uint8 array of 0/1 bits."""
    norm, negative, levels = quantize_levels(y, spec, rng)
    width = level_bits(int(spec.levels))
    head = np.unpackbits(np.frombuffer(np.array([norm], dtype=">f4").tobytes(), dtype=np.uint8))
    shifts = np.arange(width - 1, -1, -1)
    level_field = (levels[:, None] >> shifts) & 1
    body = np.concatenate([negative[:, None].astype(np.int64), level_field], axis=1)
    return np.concatenate([head, body.ravel().astype(np.uint8)])


def decode(bits, spec: QuantSpec) -> np.ndarray:
    """Inverse of :func:`encode`.  The norm comes back rounded to float32."""
    if spec.is_exact:
        raise QuantizationError("unquantized spec has no bit encoding")
    bits = np.asarray(bits, dtype=np.uint8)
    expected = spec.payload_bits
    if bits.ndim != 1 or bits.shape[0] < expected:
        raise QuantizationError(f"bit string truncated: got {bits.size} bits, expected {expected}")
    if bits.shape[0] > expected:
        raise QuantizationError(f"bit string too long: got {bits.size} bits, expected {expected}")
    if np.any(bits > 1):
        raise QuantizationError("bit string contains values other than 0/1")
    s = int(spec.levels)
    width = level_bits(s)
    norm = float(np.frombuffer(np.packbits(bits[:NORM_BITS]).tobytes(), dtype=">f4")[0])
    body = bits[NORM_BITS:].reshape(spec.dimension, 1 + width).astype(np.int64)
    negative = body[:, 0] == 1
    weights = 1 << np.arange(width - 1, -1, -1)
    levels = body[:, 1:] @ weights
    if np.any(levels > s):
        raise QuantizationError("level index exceeds the number of levels")
    return _reconstruct(norm, negative, levels, s)


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for a ``(seed, path...)`` address, e.g. ``(seed, k0, worker)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path)))
