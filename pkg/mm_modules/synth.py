"""
합성 멀티모달 데이터셋 생성기 (데스크 규모 실험용)

클래스마다 ±1 코드 벡터(클래스 신호)를 두고, 각 모달리티는 그 신호 좌표 중
informativeness 비율만큼만 본다. 보이는 신호를 무작위 직교 투영으로 dim 차원에
심은 뒤 가우시안 노이즈를 더한다.

  - informativeness = 0 → 클래스와 무관한 단일 가우시안 (순수 노이즈)
  - 두 모달리티가 신호 좌표를 나눠 가지면 → 서로 보완적 (단독 < 결합)

유저 생성 시 각 유저는 binary 라벨을 갖고, 라벨에 따라 선호하는 아이템 클래스가
달라진다 (유저 = 본 콘텐츠의 혼합).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from mm_modules.embedding_store import (
    MASK64,
    TASKS,
    DatasetManifest,
    EmbeddingTable,
    ModalityId,
    save_manifest,
)
from mm_modules.errors import SpecError

logger = logging.getLogger(__name__)

# 난수 스트림 라벨 (seed와 함께 SeedSequence entropy로 들어간다)
_STREAM_LABELS = 0
_STREAM_USERS = 2
_STREAM_MODALITY = 100
_STREAM_MISSING = 200

# 클래스 신호의 최소 좌표 수 (K=2여도 모달리티들이 신호를 나눠 가질 수 있도록)
MIN_SIGNAL_COORDS = 8


@dataclass(frozen=True)
class SynthModality:
    name: str
    dim: int
    informativeness: float
    missing_rate: float = 0.0
    signal_offset: Optional[float] = None


@dataclass(frozen=True)
class SynthUsers:
    n_users: int
    min_items: int = 20
    max_items: int = 40
    affinity: float = 4.0
    positive_rate: float = 0.5


@dataclass(frozen=True)
class SynthSpec:
    """
    합성 데이터셋 사양.

    task: multiclass | multilabel | binary
    users가 주어지면 라벨은 유저에 붙는 binary 라벨이 되고,
    n_classes는 아이템 클래스(콘텐츠 장르) 수로만 쓰인다.
    """
    n_items: int
    n_classes: int
    modalities: Tuple[SynthModality, ...]
    seed: int
    task: str = "multiclass"
    separation: float = 3.0
    noise: float = 1.0
    label_rate: float = 0.2
    users: Optional[SynthUsers] = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SynthSpec":
        try:
            modalities = tuple(SynthModality(**m) for m in doc["modalities"])
            users = SynthUsers(**doc["users"]) if doc.get("users") else None
            rest = {k: v for k, v in doc.items() if k not in ("modalities", "users")}
            spec = cls(modalities=modalities, users=users, **rest)
        except (KeyError, TypeError) as e:
            raise SpecError(f"SynthSpec 형식 오류: {e}") from e
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.task not in TASKS:
            raise SpecError(f"알 수 없는 task: {self.task}")
        if self.n_items < 1:
            raise SpecError("n_items는 1 이상이어야 합니다.")
        if self.n_classes < 2:
            raise SpecError("n_classes는 2 이상이어야 합니다.")
        if self.task == "binary" and self.users is None and self.n_classes != 2:
            raise SpecError("아이템 binary task는 n_classes=2여야 합니다.")
        if not self.modalities:
            raise SpecError("모달리티가 하나 이상 필요합니다.")
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise SpecError(f"모달리티 이름 중복: {names}")
        for m in self.modalities:
            if m.dim < 1:
                raise SpecError(f"{m.name}: dim은 1 이상이어야 합니다.")
            if not 0.0 <= m.informativeness <= 1.0:
                raise SpecError(f"{m.name}: informativeness는 [0, 1] 범위여야 합니다.")
            if not 0.0 <= m.missing_rate < 1.0:
                raise SpecError(f"{m.name}: missing_rate는 [0, 1) 범위여야 합니다.")
            if m.signal_offset is not None and not 0.0 <= m.signal_offset < 1.0:
                raise SpecError(f"{m.name}: signal_offset은 [0, 1) 범위여야 합니다.")
        if self.separation <= 0 or self.noise <= 0:
            raise SpecError("separation / noise는 양수여야 합니다.")
        if not 0.0 < self.label_rate < 1.0:
            raise SpecError("label_rate는 (0, 1) 범위여야 합니다.")
        if self.users is not None:
            u = self.users
            if self.task != "binary":
                raise SpecError("유저 생성은 binary task만 지원합니다.")
            if u.n_users < 2:
                raise SpecError("n_users는 2 이상이어야 합니다.")
            if not 1 <= u.min_items <= u.max_items:
                raise SpecError(f"min_items/max_items 범위 오류: {u.min_items}, {u.max_items}")
            if u.max_items > self.n_items:
                raise SpecError("max_items가 n_items보다 큽니다.")
            if u.affinity <= 0 or not 0.0 < u.positive_rate < 1.0:
                raise SpecError("affinity > 0, positive_rate ∈ (0, 1) 이어야 합니다.")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & MASK64, stream])


def _class_codes(n_classes: int) -> np.ndarray:
    """클래스 k → ±1 비트 코드 (MSB 먼저). shape (K, B), B = ceil(log2 K)."""
    n_bits = max(1, math.ceil(math.log2(n_classes)))
    bits = (np.arange(n_classes)[:, None] >> np.arange(n_bits - 1, -1, -1)[None, :]) & 1
    return 2.0 * bits - 1.0


def _spread(base: np.ndarray) -> np.ndarray:
    """
    (n, B) 기본 신호의 각 좌표를 r번 연속으로 반복해 최소 MIN_SIGNAL_COORDS 좌표로 늘린다.
    1/sqrt(r) 배율로 좌표 하나당 에너지를 나누므로 전체 신호 크기는 그대로이고,
    informativeness 비율만큼의 좌표 = 그 비율만큼의 신호 에너지가 된다.
    """
    repeats = max(1, math.ceil(MIN_SIGNAL_COORDS / base.shape[1]))
    return np.repeat(base, repeats, axis=1) / math.sqrt(repeats)


def _signal_slices(spec: SynthSpec, n_signal: int) -> List[np.ndarray]:
    """모달리티별로 보는 신호 좌표 인덱스. offset 미지정 시 앞 모달리티 뒤를 이어 받는다."""
    slices = []
    cursor = 0.0
    for m in spec.modalities:
        offset = cursor if m.signal_offset is None else m.signal_offset
        n_seen = int(round(m.informativeness * n_signal))
        if m.informativeness > 0:
            n_seen = max(1, n_seen)
        start = int(round(offset * n_signal)) % n_signal
        slices.append((start + np.arange(n_seen)) % n_signal)
        cursor = (offset + m.informativeness) % 1.0
    return slices


def _projection(rng: np.random.Generator, n_seen: int, dim: int) -> np.ndarray:
    """(n_seen, dim) 투영. 가능하면 직교 행."""
    gauss = rng.standard_normal((dim, n_seen))
    if n_seen <= dim:
        q, _ = np.linalg.qr(gauss)
        return q.T
    return gauss.T / np.linalg.norm(gauss.T, axis=1, keepdims=True)


def _item_labels(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n, k = spec.n_items, spec.n_classes
    if spec.task == "multilabel":
        khot = (rng.random((n, k)) < spec.label_rate).astype(np.int64)
        empty = np.flatnonzero(khot.sum(axis=1) == 0)
        khot[empty, rng.integers(0, k, size=empty.size)] = 1
        return khot
    return rng.integers(0, k, size=n)


def _signal_matrix(spec: SynthSpec, labels: np.ndarray) -> np.ndarray:
    """아이템별 클래스 신호 (n, S)."""
    if spec.task == "multilabel":
        return _spread(2.0 * labels.astype(np.float64) - 1.0)
    return _spread(_class_codes(spec.n_classes)[labels])


def _generate_users(spec: SynthSpec, item_classes: np.ndarray, item_ids: List[str]):
    u = spec.users
    rng = _rng(spec.seed, _STREAM_USERS)
    k = spec.n_classes
    class_sizes = np.bincount(item_classes, minlength=k).astype(np.float64)
    interactions: Dict[str, Tuple[str, ...]] = {}
    labels: Dict[str, int] = {}
    for idx in range(u.n_users):
        user_id = f"user_{idx:05d}"
        label = int(rng.random() < u.positive_rate)
        # 라벨 1 → 앞쪽 절반 클래스 선호, 라벨 0 → 뒤쪽 절반
        preferred = np.arange(k) < (k // 2) if label == 1 else np.arange(k) >= (k // 2)
        class_weight = np.where(preferred, u.affinity, 1.0)
        item_weight = class_weight[item_classes] / np.maximum(class_sizes[item_classes], 1.0)
        item_weight /= item_weight.sum()
        n_seen = int(rng.integers(u.min_items, u.max_items + 1))
        chosen = rng.choice(len(item_ids), size=n_seen, replace=False, p=item_weight)
        interactions[user_id] = tuple(item_ids[i] for i in chosen)
        labels[user_id] = label
    return interactions, labels


def synth_generate(spec: SynthSpec, out_dir: Optional[Union[str, Path]] = None) -> DatasetManifest:
    """
    SynthSpec → DatasetManifest (+ out_dir가 있으면 manifest.json, *.emb 파일).
    같은 spec이면 비트 단위로 같은 결과를 낸다.
    """
    spec.validate()
    n = spec.n_items
    item_ids = [f"item_{i:06d}" for i in range(n)]
    item_labels = _item_labels(spec, _rng(spec.seed, _STREAM_LABELS))
    signal = _signal_matrix(spec, item_labels)
    n_signal = signal.shape[1]
    slices = _signal_slices(spec, n_signal)

    tables: Dict[str, EmbeddingTable] = {}
    modalities = []
    for m_idx, (m, seen) in enumerate(zip(spec.modalities, slices)):
        rng = _rng(spec.seed, _STREAM_MODALITY + m_idx)
        modality = ModalityId(m.name, m.dim)
        vectors = spec.noise * rng.standard_normal((n, m.dim))
        if seen.size:
            proj = _projection(rng, seen.size, m.dim)
            vectors += spec.separation * (signal[:, seen] @ proj)
        # 디스크 포맷(f32)과 메모리 값을 일치시킨다
        vectors = vectors.astype(np.float32).astype(np.float64)

        present = np.ones(n, dtype=bool)
        n_missing = int(round(m.missing_rate * n))
        if n_missing:
            miss = _rng(spec.seed, _STREAM_MISSING + m_idx).choice(n, size=n_missing, replace=False)
            present[miss] = False
            vectors[miss] = 0.0
        tables[m.name] = EmbeddingTable(modality, tuple(item_ids), vectors, present)
        modalities.append(modality)
        logger.debug(f"합성 모달리티 {m.name}: dim={m.dim}, 신호 좌표={seen.tolist()}, 결측={n_missing}")

    if spec.users is not None:
        interactions, labels = _generate_users(spec, item_labels, item_ids)
        label_target = "users"
        n_classes = 2
    else:
        interactions = None
        label_target = "items"
        n_classes = spec.n_classes
        if spec.task == "multilabel":
            labels = {iid: tuple(int(v) for v in row) for iid, row in zip(item_ids, item_labels)}
        else:
            labels = {iid: int(v) for iid, v in zip(item_ids, item_labels)}

    manifest = DatasetManifest(
        modalities=tuple(modalities),
        items=tuple(item_ids),
        labels=labels,
        task=spec.task,
        n_classes=n_classes,
        embeddings=tables,
        interactions=interactions,
        label_target=label_target,
    )
    logger.info(
        f"합성 데이터셋 생성: items={n}, classes={spec.n_classes}, task={spec.task}, "
        f"users={len(interactions) if interactions else 0}"
    )
    if out_dir is not None:
        save_manifest(manifest, out_dir)
    return manifest
