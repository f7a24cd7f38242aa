import json
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from mm_modules.embedding_store import DatasetManifest, EmbeddingTable, ModalityId
from mm_modules.synth import SynthSpec, synth_generate


def tiny_synth(**overrides) -> dict:
    """러너 / CLI 테스트용 소형 합성 데이터셋 (3 클래스, 두 모달리티, b는 10% 결측)."""
    doc = {
        "n_items": 120,
        "n_classes": 3,
        "seed": 3,
        "task": "multiclass",
        "separation": 4.0,
        "modalities": [
            {"name": "a", "dim": 6, "informativeness": 0.5},
            {"name": "b", "dim": 6, "informativeness": 0.5, "missing_rate": 0.1},
        ],
    }
    doc.update(overrides)
    return doc


def tiny_users_synth() -> dict:
    return {
        "n_items": 60,
        "n_classes": 4,
        "seed": 5,
        "task": "binary",
        "separation": 6.0,
        "modalities": [{"name": "plot", "dim": 8, "informativeness": 1.0}],
        "users": {"n_users": 40, "min_items": 5, "max_items": 10, "affinity": 4.0, "positive_rate": 0.5},
    }


def tiny_config(**overrides) -> dict:
    doc = {
        "name": "tiny",
        "dataset": {"synth": tiny_synth()},
        "techniques": ["late", "early", "sketch", "sketch_binarized"],
        "width_cap": 8,
        "default_sketch": {"depth": 4, "width": 4, "seed": 1},
        "train": {
            t: {"epochs": 2, "batch_size": 16, "learning_rate": 0.01}
            for t in ("late", "early", "sketch", "sketch_binarized")
        },
        "split": {"kind": "fractions", "fractions": [0.6, 0.2, 0.2], "seed": 2},
        "n_runs": 2,
        "base_seed": 10,
    }
    doc.update(overrides)
    return doc


def make_manifest(vectors: dict, labels: dict, task: str = "multiclass", n_classes: int = 3,
                  present: dict = None, interactions: dict = None, label_target: str = "items") -> DatasetManifest:
    """{모달리티: (n, dim) 배열}로 manifest를 만든다. 아이템 id는 i0, i1, ..."""
    n = len(next(iter(vectors.values())))
    items = tuple(f"i{k}" for k in range(n))
    modalities, tables = [], {}
    for name, arr in vectors.items():
        arr = np.asarray(arr, dtype=np.float64)
        modality = ModalityId(name, arr.shape[1])
        mask = np.ones(n, dtype=bool) if present is None or name not in present else np.asarray(present[name])
        arr = np.where(mask[:, None], arr, 0.0)
        modalities.append(modality)
        tables[name] = EmbeddingTable(modality, items, arr, mask)
    return DatasetManifest(
        modalities=tuple(modalities),
        items=items,
        labels=labels,
        task=task,
        n_classes=n_classes,
        embeddings=tables,
        interactions=interactions,
        label_target=label_target,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_manifest():
    return synth_generate(SynthSpec.from_dict(tiny_synth()))


@pytest.fixture
def write_config(tmp_path):
    def _write(doc: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path
    return _write
