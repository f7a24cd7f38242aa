"""LSH sketch: 충돌 법칙, sketch 불변식, 집계 / 정규화, 파일 포맷."""
import io
import math
import time

import numpy as np
import pytest

from mm_modules.errors import DimError, FormatError, MissingInput, MixedBank, NonFiniteError, SpecError
from mm_modules.sketcher import (
    BinarySketch,
    ClassicalSketch,
    CountSketch,
    aggregate,
    aggregate_buckets,
    build_bank,
    dump_sketch,
    estimate_angle,
    flatten,
    load_bank,
    load_sketch,
    materialize_onehot,
    normalize_widthwise,
    save_bank,
    sketch_batch,
    sketch_binary,
    sketch_classical,
    sketch_nbytes,
    SketchSpec,
)


def _pair_at_angle(theta: float, dim: int, rng) -> tuple:
    """각도 theta인 단위 벡터 쌍."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    u, w = q[:, 0], q[:, 1]
    return u, math.cos(theta) * u + math.sin(theta) * w


class TestSketchSpec:
    @pytest.mark.parametrize("depth, width", [(0, 4), (4, 1), (4, 6), (4, 100)])
    def test_invalid(self, depth, width):
        with pytest.raises(SpecError):
            SketchSpec(depth, width, 0)

    def test_bits_per_row(self):
        assert SketchSpec(3, 2, 0).bits_per_row == 1
        assert SketchSpec(3, 512, 0).bits_per_row == 9


class TestBank:
    """초평면 bank는 (seed, input_dim)만으로 결정된다."""

    def test_same_seed_same_bank(self):
        a = build_bank(SketchSpec(8, 16, 5), 10)
        b = build_bank(SketchSpec(8, 16, 5), 10)
        np.testing.assert_array_equal(a.normals, b.normals)
        c = build_bank(SketchSpec(8, 16, 6), 10)
        assert not np.array_equal(a.normals, c.normals)

    def test_rows_do_not_depend_on_depth(self):
        small = build_bank(SketchSpec(3, 8, 9), 5)
        large = build_bank(SketchSpec(7, 8, 9), 5)
        np.testing.assert_array_equal(large.normals[:3], small.normals)

    def test_normals_read_only(self):
        bank = build_bank(SketchSpec(2, 4, 0), 3)
        with pytest.raises(ValueError):
            bank.normals[0, 0, 0] = 1.0

    def test_round_trip(self):
        bank = build_bank(SketchSpec(4, 8, 2 ** 63 + 5), 6)
        buf = io.BytesIO()
        n = save_bank(bank, buf)
        assert n == 28 + 8 * 4 * 3 * 6
        loaded = load_bank(buf.getvalue())
        assert loaded.key == bank.key
        np.testing.assert_array_equal(loaded.normals, bank.normals)

    def test_truncated_bank(self):
        buf = io.BytesIO()
        save_bank(build_bank(SketchSpec(2, 4, 0), 3), buf)
        with pytest.raises(FormatError):
            load_bank(buf.getvalue()[:-1])
        with pytest.raises(FormatError):
            load_bank(b"XXXX" + buf.getvalue()[4:])


class TestCollisionLaw:
    """부호 비트 일치율 ≈ 1 − θ/π."""

    @pytest.mark.parametrize("theta", [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4])
    def test_match_fraction(self, theta):
        started = time.perf_counter()
        rng = np.random.default_rng(int(theta * 1000))
        u, v = _pair_at_angle(theta, 8, rng)
        bank = build_bank(SketchSpec(2500, 16, 17), 8)
        a, b = sketch_binary(bank, u), sketch_binary(bank, v)
        match = float(np.mean(a.bits == b.bits))
        assert abs(match - (1.0 - theta / math.pi)) <= 0.02
        assert abs(estimate_angle(a, b) - theta) <= 0.05
        assert time.perf_counter() - started < 5.0

    def test_opposite_vectors(self):
        bank = build_bank(SketchSpec(64, 4, 1), 5)
        v = np.random.default_rng(0).standard_normal(5)
        assert estimate_angle(sketch_binary(bank, v), sketch_binary(bank, -v)) == pytest.approx(math.pi)

    def test_negation_flips_every_bit(self, rng):
        bank = build_bank(SketchSpec(32, 16, 4), 7)
        for _ in range(20):
            v = rng.standard_normal(7)
            a, b = sketch_binary(bank, v), sketch_binary(bank, -v)
            np.testing.assert_array_equal(b.bits, 1 - a.bits)

    def test_mixed_specs(self):
        v = np.ones(3)
        a = sketch_binary(build_bank(SketchSpec(4, 4, 0), 3), v)
        b = sketch_binary(build_bank(SketchSpec(4, 4, 1), 3), v)
        with pytest.raises(MixedBank):
            estimate_angle(a, b)


class TestSketchInvariants:
    """1,000개 벡터 × 10 seed에서 성립해야 하는 성질."""

    @pytest.mark.parametrize("seed", range(10))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        spec = SketchSpec(16, 8, seed)
        bank = build_bank(spec, 12)
        X = rng.standard_normal((1000, 12))

        buckets = sketch_batch(bank, X, kind="classical")
        assert buckets.shape == (1000, 16)
        assert buckets.min() >= 0 and buckets.max() < 8

        onehot = materialize_onehot(ClassicalSketch(buckets[0], spec))
        np.testing.assert_array_equal(onehot.sum(axis=1), np.ones(16))

        for scale in (2.0, 0.25, 1024.0):
            np.testing.assert_array_equal(sketch_batch(bank, scale * X, kind="classical"), buckets)

        counts = aggregate_buckets(buckets, spec)
        np.testing.assert_array_equal(counts.counts.sum(axis=1), np.full(16, 1000.0))

        normalized = normalize_widthwise(aggregate_buckets(buckets[:37], spec))
        norms = np.linalg.norm(normalized, axis=1)
        np.testing.assert_allclose(norms[norms > 0], 1.0, atol=1e-12)

    def test_binary_and_classical_agree(self, rng):
        bank = build_bank(SketchSpec(6, 16, 3), 7)
        X = rng.standard_normal((20, 7))
        bits = sketch_batch(bank, X, kind="binary")
        buckets = sketch_batch(bank, X, kind="classical")
        weights = np.array([8, 4, 2, 1])
        np.testing.assert_array_equal(bits.astype(np.int64) @ weights, buckets)
        for i in range(20):
            np.testing.assert_array_equal(sketch_binary(bank, X[i]).bits, bits[i])
            np.testing.assert_array_equal(sketch_classical(bank, X[i]).buckets, buckets[i])

    def test_batch_order_independent_of_chunking(self, rng):
        bank = build_bank(SketchSpec(3, 4, 0), 4)
        X = rng.standard_normal((50, 4))
        full = sketch_batch(bank, X)
        np.testing.assert_array_equal(sketch_batch(bank, X[::-1])[::-1], full)

    def test_rejects_bad_input(self):
        bank = build_bank(SketchSpec(3, 4, 0), 4)
        with pytest.raises(MissingInput):
            sketch_binary(bank, np.zeros(4))
        with pytest.raises(NonFiniteError):
            sketch_binary(bank, np.array([1.0, np.nan, 0.0, 0.0]))
        with pytest.raises(DimError):
            sketch_binary(bank, np.ones(5))
        with pytest.raises(SpecError):
            sketch_batch(bank, np.ones((2, 4)), kind="dense")


class TestAggregation:
    def test_aggregate_matches_onehot_sum(self, rng):
        spec = SketchSpec(5, 8, 4)
        bank = build_bank(spec, 6)
        sketches = [sketch_classical(bank, rng.standard_normal(6)) for _ in range(9)]
        expected = sum(materialize_onehot(s) for s in sketches)
        cs = aggregate(sketches)
        np.testing.assert_array_equal(cs.counts, expected)
        assert cs.n_items == 9

    def test_count_sketch_addition(self):
        spec = SketchSpec(2, 4, 0)
        a = aggregate_buckets(np.array([[0, 1], [2, 3]]), spec)
        b = aggregate_buckets(np.array([[0, 0]]), spec)
        total = a + b
        assert total.n_items == 3
        np.testing.assert_array_equal(total.counts.sum(axis=1), [3.0, 3.0])
        other = aggregate_buckets(np.array([[0, 0]]), SketchSpec(2, 4, 1))
        with pytest.raises(MixedBank):
            a + other

    def test_empty_aggregate(self):
        with pytest.raises(MissingInput):
            aggregate([])

    def test_zero_row_stays_zero(self):
        out = normalize_widthwise(np.array([[3.0, 4.0], [0.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 0.0]])

    def test_aggregate_of_union_is_sum(self, rng):
        spec = SketchSpec(6, 16, 2)
        bank = build_bank(spec, 5)
        first = [sketch_classical(bank, rng.standard_normal(5)) for _ in range(4)]
        second = [sketch_classical(bank, rng.standard_normal(5)) for _ in range(7)]
        union = aggregate(first + second)
        parts = aggregate(first) + aggregate(second)
        np.testing.assert_array_equal(union.counts, parts.counts)
        assert union.n_items == parts.n_items == 11

    @pytest.mark.parametrize("depth, width, kind, length", [
        (128, 512, "classical", 65536),
        (210, 512, "classical", 107520),
        (128, 512, "binary", 1152),
    ])
    def test_flatten_lengths(self, depth, width, kind, length):
        spec = SketchSpec(depth, width, 0)
        if kind == "classical":
            sketch = ClassicalSketch(np.zeros(depth, dtype=np.int64), spec)
        else:
            sketch = BinarySketch(np.zeros((depth, spec.bits_per_row), dtype=np.uint8), spec)
        assert flatten(sketch).shape == (length,)

    def test_flatten_row_major(self):
        spec = SketchSpec(2, 4, 0)
        flat = flatten(ClassicalSketch(np.array([1, 3]), spec))
        np.testing.assert_array_equal(flat, [0, 1, 0, 0, 0, 0, 0, 1])
        bits = flatten(BinarySketch(np.array([[1, 0], [0, 1]], dtype=np.uint8), spec))
        np.testing.assert_array_equal(bits, [1.0, 0.0, 0.0, 1.0])


class TestSketchFiles:
    """SKCH 덤프와 메모리 비교."""

    def _sketches(self):
        spec = SketchSpec(5, 8, 11)
        bank = build_bank(spec, 4)
        v = np.array([0.3, -1.0, 2.0, 0.5])
        counts = aggregate_buckets(sketch_batch(bank, np.stack([v, -v, 2 * v])), spec)
        return spec, [sketch_binary(bank, v), sketch_classical(bank, v), counts]

    def test_round_trip(self):
        spec, sketches = self._sketches()
        for sketch, kind in zip(sketches, ("binary", "classical", "counts")):
            buf = io.BytesIO()
            n = dump_sketch(sketch, buf)
            assert n == sketch_nbytes(kind, spec)
            loaded = load_sketch(buf.getvalue(), spec)
            assert type(loaded) is type(sketch)
            np.testing.assert_array_equal(flatten(loaded), flatten(sketch))

    def test_wrong_spec(self):
        spec, sketches = self._sketches()
        buf = io.BytesIO()
        dump_sketch(sketches[1], buf)
        with pytest.raises(FormatError):
            load_sketch(buf.getvalue(), SketchSpec(5, 16, 11))
        with pytest.raises(FormatError):
            load_sketch(buf.getvalue()[:-1], spec)

    def test_binary_is_much_smaller_than_dense(self):
        spec = SketchSpec(128, 512, 0)
        bank = build_bank(spec, 4)
        buf = io.BytesIO()
        dump_sketch(sketch_binary(bank, np.ones(4)), buf)
        assert len(buf.getvalue()) == 13 + 144
        assert sketch_nbytes("dense", spec) >= 50 * len(buf.getvalue())
        assert isinstance(load_sketch(buf.getvalue(), spec), BinarySketch)

    def test_counts_keep_item_count(self):
        spec, sketches = self._sketches()
        buf = io.BytesIO()
        dump_sketch(sketches[2], buf)
        loaded = load_sketch(buf.getvalue(), spec)
        assert isinstance(loaded, CountSketch)
        assert loaded.n_items == 3
