import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedopt.quantizer import (
    INFINITE,
    QuantizationError,
    QuantSpec,
    decode,
    derive_rng,
    encode,
    level_bits,
    payload_bits,
    quantize,
    quantize_levels,
    variance_bound,
)


class TestVarianceBound:
    def test_known_values(self):
        assert variance_bound(1, 2) == pytest.approx(math.sqrt(2), rel=1e-12)
        assert variance_bound(1, 1) == 1.0
        assert variance_bound(4, 16) == 1.0

    def test_rejects_bad_arguments(self):
        with pytest.raises(QuantizationError):
            variance_bound(0, 3)
        with pytest.raises(QuantizationError):
            variance_bound(2, 0)

    def test_monte_carlo_s1_d2(self):
        rng = np.random.default_rng(0)
        spec = QuantSpec.create(1, 2)
        ratios = []
        for _ in range(1000):
            y = rng.normal(size=2)
            draws = np.array([quantize(y, spec, rng) for _ in range(200)])
            ratios.append(np.mean(np.sum((draws - y) ** 2, axis=1)) / (y @ y))
        assert np.mean(ratios) <= math.sqrt(2) * 1.05


class TestPayloadBits:
    @pytest.mark.parametrize("s,d,bits", [(1, 3, 38), (3, 1, 35), (1, 101632, 203296)])
    def test_formula(self, s, d, bits):
        assert payload_bits(s, d) == bits

    @given(st.integers(1, 10_000))
    def test_level_width(self, s):
        assert level_bits(s) == math.ceil(math.log2(s + 1))

    def test_paper_dimension_encode_length(self):
        spec = QuantSpec.create(1, 101632)
        y = np.random.default_rng(1).normal(size=101632)
        assert encode(y, spec, derive_rng(0)).size == 203296


class TestQuantSpec:
    def test_infinite_has_zero_variance(self):
        spec = QuantSpec.create(INFINITE, 5)
        assert spec.variance_bound == 0.0 and spec.is_exact
        assert spec.payload_bits == 32 * 5

    @given(st.integers(1, 300), st.integers(1, 300))
    def test_fields_consistent(self, s, d):
        spec = QuantSpec.create(s, d)
        assert spec.variance_bound == variance_bound(s, d)
        assert spec.payload_bits == payload_bits(s, d)


class TestQuantize:
    def test_zero_vector(self):
        spec = QuantSpec.create(3, 4)
        assert np.array_equal(quantize(np.zeros(4), spec, derive_rng(0)), np.zeros(4))

    @pytest.mark.parametrize("s", [1, 2, 7, 100])
    def test_single_coordinate_is_exact(self, s):
        spec = QuantSpec.create(s, 1)
        for seed in range(5):
            assert quantize(np.array([0.7]), spec, derive_rng(seed))[0] == 0.7

    def test_mean_of_3_4(self):
        spec = QuantSpec.create(1, 2)
        rng = derive_rng(42)
        n = 100_000
        draws = np.array([quantize(np.array([3.0, 4.0]), spec, rng) for _ in range(n)])
        se = draws.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - [3.0, 4.0]) <= 4 * se)

    def test_infinite_is_identity(self):
        y = np.random.default_rng(3).normal(size=9)
        out = quantize(y, QuantSpec.create(INFINITE, 9), derive_rng(0))
        assert np.array_equal(out, y) and out is not y

    def test_dimension_mismatch(self):
        with pytest.raises(QuantizationError):
            quantize(np.ones(3), QuantSpec.create(2, 4), derive_rng(0))

    def test_non_finite_rejected(self):
        with pytest.raises(QuantizationError):
            quantize(np.array([1.0, np.nan]), QuantSpec.create(2, 2), derive_rng(0))

    def test_deterministic(self):
        y = np.random.default_rng(5).normal(size=30)
        spec = QuantSpec.create(4, 30)
        a = quantize(y, spec, derive_rng(9, 1, 2))
        b = quantize(y, spec, derive_rng(9, 1, 2))
        assert a.tobytes() == b.tobytes()

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 50), st.integers(1, 40), st.integers(0, 2**31))
    def test_output_on_grid(self, s, d, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=d)
        out = quantize(y, QuantSpec.create(s, d), rng)
        norm = np.linalg.norm(y)
        levels = np.abs(out) / norm * s
        assert np.allclose(levels, np.round(levels), atol=1e-9)
        assert np.all((np.sign(out) == np.sign(y)) | (out == 0))
        # each coordinate lands on one of its two neighbouring levels
        assert np.all(np.abs(levels - np.abs(y) / norm * s) < 1 + 1e-9)

    def test_stream_consumption_is_data_independent(self):
        spec = QuantSpec.create(3, 6)
        r1, r2 = derive_rng(1), derive_rng(1)
        quantize(np.zeros(6), spec, r1)
        quantize(np.arange(6.0), spec, r2)
        assert r1.random() == r2.random()


class TestEncoding:
    def test_zero_vector_round_trip(self):
        spec = QuantSpec.create(1, 5)
        bits = encode(np.zeros(5), spec, derive_rng(0))
        assert bits.size == 32 + 2 * 5
        assert np.array_equal(decode(bits, spec), np.zeros(5))

    def test_length_s1_d3(self):
        assert encode(np.ones(3), QuantSpec.create(1, 3), derive_rng(0)).size == 38

    def test_layout(self):
        # y = (-1, 0): norm 1, first coordinate negative at the top level
        spec = QuantSpec.create(3, 2)
        bits = encode(np.array([-1.0, 0.0]), spec, derive_rng(0))
        assert np.packbits(bits[:32]).tobytes() == bytes([0x3F, 0x80, 0, 0])
        assert bits[32:].tolist() == [1, 1, 1, 0, 0, 0]

    def test_round_trip_matches_quantize(self):
        gen = np.random.default_rng(11)
        spec = QuantSpec.create(5, 8)
        for i in range(100):
            y = gen.normal(size=8) * gen.uniform(0.1, 10)
            expected = quantize(y, spec, derive_rng(i))
            got = decode(encode(y, spec, derive_rng(i)), spec)
            # signs and levels agree exactly; the norm is carried as float32
            norm32 = float(np.float32(np.linalg.norm(y)))
            assert np.array_equal(np.sign(got), np.sign(expected))
            assert np.array_equal(np.rint(got / norm32 * 5), np.rint(expected / np.linalg.norm(y) * 5))
            assert np.allclose(got, expected, rtol=2**-23, atol=0)

    def test_levels_survive_round_trip(self):
        spec = QuantSpec.create(13, 20)
        y = np.random.default_rng(2).normal(size=20)
        _, negative, levels = quantize_levels(y, spec, derive_rng(3))
        bits = encode(y, spec, derive_rng(3))
        body = bits[32:].reshape(20, 1 + level_bits(13))
        assert np.array_equal(body[:, 0] == 1, negative)
        assert np.array_equal(body[:, 1:] @ (1 << np.arange(level_bits(13) - 1, -1, -1)), levels)

    def test_truncated(self):
        spec = QuantSpec.create(2, 4)
        bits = encode(np.ones(4), spec, derive_rng(0))
        with pytest.raises(QuantizationError, match="truncated"):
            decode(bits[:-1], spec)

    def test_too_long(self):
        spec = QuantSpec.create(2, 4)
        bits = encode(np.ones(4), spec, derive_rng(0))
        with pytest.raises(QuantizationError):
            decode(np.append(bits, 0), spec)

    def test_level_out_of_range(self):
        # s = 2 uses two level bits, so the pattern 11 (= 3) is invalid
        spec = QuantSpec.create(2, 1)
        bits = np.concatenate([np.unpackbits(np.frombuffer(bytes([0x3F, 0x80, 0, 0]), np.uint8)), [0, 1, 1]])
        with pytest.raises(QuantizationError):
            decode(bits.astype(np.uint8), spec)

    def test_infinite_not_encodable(self):
        with pytest.raises(QuantizationError):
            encode(np.ones(2), QuantSpec.create(INFINITE, 2), derive_rng(0))
