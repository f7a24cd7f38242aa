"""임베딩 파일 입출력, manifest 검증, split 테스트."""
import io
import struct

import numpy as np
import pytest

from conftest import make_manifest
from mm_modules.embedding_store import (
    DatasetManifest,
    EmbeddingRecord,
    EmbeddingTable,
    ModalityId,
    SplitPlan,
    load_embeddings,
    load_manifest,
    make_split,
    save_embeddings,
    save_manifest,
    validate_manifest,
)
from mm_modules.errors import DimError, DuplicateError, FormatError, ManifestError, SplitError

TITLE = ModalityId("title", 3)


def _emb1(records):
    buf = io.BytesIO()
    save_embeddings(records, buf, dim=TITLE.dim)
    return buf.getvalue()


class TestRecords:
    """EmbeddingRecord / EmbeddingTable 불변식."""

    def test_wrong_length_is_dim_error(self):
        with pytest.raises(DimError) as e:
            EmbeddingRecord("x", TITLE, np.ones(4))
        assert (e.value.got, e.value.want) == (4, 3)

    def test_absent_must_be_zero(self):
        with pytest.raises(FormatError):
            EmbeddingRecord("x", TITLE, np.ones(3), present=False)

    def test_present_zero_needs_allow_zero(self):
        with pytest.raises(FormatError):
            EmbeddingRecord("x", TITLE, np.zeros(3))
        rec = EmbeddingRecord("x", TITLE, np.zeros(3), allow_zero=True)
        assert rec.present

    def test_vector_is_read_only(self):
        rec = EmbeddingRecord("x", TITLE, np.ones(3))
        with pytest.raises(ValueError):
            rec.vector[0] = 2.0

    def test_table_reindex_follows_requested_order(self):
        records = [
            EmbeddingRecord("a", TITLE, [1.0, 0.0, 0.0]),
            EmbeddingRecord.absent("b", TITLE),
            EmbeddingRecord("c", TITLE, [0.0, 0.0, 3.0]),
        ]
        table = EmbeddingTable.from_records(TITLE, records)
        vectors, present = table.reindex(["c", "a", "b"])
        np.testing.assert_array_equal(vectors[:, 2], [3.0, 0.0, 0.0])
        np.testing.assert_array_equal(present, [True, True, False])
        with pytest.raises(ManifestError):
            table.reindex(["zzz"])


class TestEmb1:
    """EMB1 바이너리 포맷."""

    def test_round_trip_keeps_order_and_presence(self):
        records = [
            EmbeddingRecord("상품-1", TITLE, [0.5, -1.25, 2.0]),
            EmbeddingRecord.absent("p2", TITLE),
            EmbeddingRecord("p3", TITLE, [1.0, 1.0, 1.0]),
        ]
        loaded = load_embeddings(_emb1(records), TITLE)
        assert [r.item_id for r in loaded] == ["상품-1", "p2", "p3"]
        assert [r.present for r in loaded] == [True, False, True]
        np.testing.assert_array_equal(loaded[0].vector, [0.5, -1.25, 2.0])

    def test_save_load_save_is_bitwise_identical(self):
        rng = np.random.default_rng(3)
        records = [EmbeddingRecord(f"p{i}", TITLE, rng.normal(size=3)) for i in range(5)]
        records.insert(2, EmbeddingRecord.absent("missing", TITLE))
        first = _emb1(records)
        second = _emb1(load_embeddings(first, TITLE))
        assert first == second
        assert _emb1(load_embeddings(second, TITLE)) == second

    def test_short_last_row_is_dim_error(self):
        wide = ModalityId("text", 768)
        raw_id = b"p1"
        data = (struct.pack("<4sII", b"EMB1", 768, 1) + struct.pack("<H", len(raw_id)) + raw_id + b"\x01"
                + np.ones(767, dtype="<f4").tobytes())
        with pytest.raises(DimError) as e:
            load_embeddings(data, wide)
        assert (e.value.row, e.value.got, e.value.want) == (0, 767, 768)

    def test_header_dim_mismatch(self):
        data = _emb1([EmbeddingRecord("p1", TITLE, [1.0, 2.0, 3.0])])
        with pytest.raises(DimError):
            load_embeddings(data, ModalityId("title", 4))

    def test_truncated_stream(self):
        data = _emb1([EmbeddingRecord("p1", TITLE, [1.0, 2.0, 3.0])])
        with pytest.raises(FormatError):
            load_embeddings(data[:-2], TITLE)
        with pytest.raises(FormatError):
            load_embeddings(data + b"\x00", TITLE)

    def test_duplicate_ids(self):
        rec = EmbeddingRecord("p1", TITLE, [1.0, 2.0, 3.0])
        with pytest.raises(DuplicateError) as e:
            load_embeddings(_emb1([rec, rec]), TITLE)
        assert e.value.item_id == "p1"

    def test_bad_present_flag(self):
        data = bytearray(_emb1([EmbeddingRecord("p1", TITLE, [1.0, 2.0, 3.0])]))
        flag_at = struct.calcsize("<4sII") + 2 + len("p1")
        data[flag_at] = 2
        with pytest.raises(FormatError):
            load_embeddings(bytes(data), TITLE)

    def test_zero_present_row_rejected_unless_allowed(self):
        rec = EmbeddingRecord("p1", TITLE, np.zeros(3), allow_zero=True)
        data = _emb1([rec])
        with pytest.raises(FormatError):
            load_embeddings(data, TITLE)
        assert load_embeddings(data, TITLE, allow_zero=True)[0].present


class TestCsv:
    """사람이 작성하는 CSV fixture."""

    def test_parse(self):
        text = b"item_id,present,v0,v1,v2\nx1,1,0.5,0.25,1\nx2,0,0,0,0\n"
        records = load_embeddings(text, TITLE)
        assert [r.item_id for r in records] == ["x1", "x2"]
        assert not records[1].present

    def test_short_row_reports_row_and_length(self):
        text = b"item_id,present,v0,v1,v2\nx1,1,0.5,0.25\n"
        with pytest.raises(DimError) as e:
            load_embeddings(text, TITLE)
        assert (e.value.row, e.value.got, e.value.want) == (0, 2, 3)

    def test_column_count_mismatch(self):
        text = b"item_id,present,v0,v1\nx1,1,0.5,0.25\n"
        with pytest.raises(DimError):
            load_embeddings(text, TITLE)

    def test_empty_file(self):
        with pytest.raises(FormatError):
            load_embeddings(b"", TITLE)


class TestManifest:
    """manifest 구조 검증과 저장/로드."""

    def _manifest(self, **kw) -> DatasetManifest:
        rng = np.random.default_rng(0)
        present = {"image": np.array([True, False, True, True])}
        labels = kw.pop("labels", {"i0": 0, "i1": 1, "i2": 2, "i3": 0})
        return make_manifest(
            {"title": rng.normal(size=(4, 3)), "image": rng.normal(size=(4, 2))},
            labels,
            present=present,
            **kw,
        )

    def test_report(self):
        report = validate_manifest(self._manifest())
        assert report.n_items == 4
        assert report.dims == {"title": 3, "image": 2}
        assert report.missing_rate == {"title": 0.0, "image": 0.25}
        assert report.class_counts == {0: 2, 1: 1, 2: 1}

    def test_label_out_of_range(self):
        with pytest.raises(ManifestError) as e:
            validate_manifest(self._manifest(labels={"i0": 0, "i1": 5, "i2": 2, "i3": 0}))
        assert e.value.offending_id == "i1"

    def test_label_for_unknown_id(self):
        with pytest.raises(ManifestError) as e:
            validate_manifest(self._manifest(labels={"i0": 0, "i1": 1, "i2": 2, "i3": 0, "ghost": 1}))
        assert e.value.offending_id == "ghost"

    def test_multilabel_arity(self):
        labels = {"i0": (1, 0, 0), "i1": (0, 1), "i2": (0, 0, 1), "i3": (1, 1, 0)}
        with pytest.raises(ManifestError) as e:
            validate_manifest(self._manifest(labels=labels, task="multilabel"))
        assert e.value.offending_id == "i1"

    def test_interaction_with_unknown_item(self):
        manifest = self._manifest(
            labels={"u0": 1},
            task="binary",
            n_classes=2,
            interactions={"u0": ("i0", "i9")},
            label_target="users",
        )
        with pytest.raises(ManifestError) as e:
            validate_manifest(manifest)
        assert e.value.offending_id == "i9"

    def test_save_and_load(self, tmp_path):
        manifest = self._manifest()
        path = save_manifest(manifest, tmp_path)
        loaded = load_manifest(path)
        assert loaded.modality_names == ("title", "image")
        assert loaded.labels == manifest.labels
        vectors, present = loaded.aligned("image")
        np.testing.assert_array_equal(present, [True, False, True, True])
        np.testing.assert_allclose(vectors, manifest.aligned("image")[0], atol=1e-6)


class TestSplit:
    """결정적 split과 partition 성질."""

    @pytest.mark.parametrize("seed", range(20))
    def test_fractions_partition(self, seed):
        n = 103
        split = make_split(n, SplitPlan.from_fractions(0.6, 0.2, 0.2, seed=seed))
        union = np.concatenate([split.train, split.val, split.test])
        np.testing.assert_array_equal(np.sort(union), np.arange(n))
        assert split.sizes() == (63, 20, 20)

    def test_default_fractions_at_scale(self):
        split = make_split(60000, SplitPlan.from_fractions(0.6, 0.2, 0.2, seed=0))
        assert split.sizes() == (36000, 12000, 12000)

    @pytest.mark.parametrize("n, k", [(50, 4), (47, 5), (13, 3)])
    def test_kfold_sizes_differ_by_at_most_one(self, n, k):
        split = make_split(n, SplitPlan.holdout_plus_kfold(0.2, k, seed=2))
        sizes = [len(val) for _, val in split.folds]
        assert max(sizes) - min(sizes) <= 1

    def test_same_seed_same_split(self):
        plan = SplitPlan.from_fractions(0.5, 0.25, 0.25, seed=7)
        a, b = make_split(40, plan), make_split(40, plan)
        np.testing.assert_array_equal(a.test, b.test)
        c = make_split(40, SplitPlan.from_fractions(0.5, 0.25, 0.25, seed=8))
        assert not np.array_equal(a.test, c.test)

    def test_kfold_covers_pool(self):
        split = make_split(50, SplitPlan.holdout_plus_kfold(0.2, 4, seed=1))
        assert len(split.test) == 10
        assert len(split.folds) == 4
        held_out = np.sort(np.concatenate([v for _, v in split.folds]))
        np.testing.assert_array_equal(held_out, split.train)
        for train, val in split.folds:
            assert not set(train) & set(val)
            assert not set(train) & set(split.test)

    @pytest.mark.parametrize("n, plan", [
        (9, SplitPlan.from_fractions(0.6, 0.2, 0.2, seed=0)),
        (50, SplitPlan.from_fractions(0.6, 0.2, 0.3, seed=0)),
        (50, SplitPlan.holdout_plus_kfold(0.2, 1, seed=0)),
        (3, SplitPlan.holdout_plus_kfold(0.0, 5, seed=0)),
        (10, SplitPlan.holdout_plus_kfold(0.8, 5, seed=0)),
    ])
    def test_impossible_plans(self, n, plan):
        with pytest.raises(SplitError):
            make_split(n, plan)
