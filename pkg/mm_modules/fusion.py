"""
모달리티 결합 (fusion)

  - early_concat : 모달리티 임베딩을 plan 순서대로 이어 붙여 하나의 입력으로
  - late         : 모달리티별 모델의 출력 확률을 mean / majority_vote / concat_head로 결합
  - sketch_concat: 모달리티별 flatten된 sketch를 이어 붙임

결측 정책 (missing_policy):
  - zeros     : 비어 있는 모달리티 자리를 0으로 채움 (late는 균등 확률 = 기권)
  - skip_item : 모달리티가 하나라도 빠진 아이템을 제외
  - error     : MissingModality 예외
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from mm_modules.embedding_store import EmbeddingRecord, EmbeddingTable, ModalityId
from mm_modules.errors import DimError, MissingModality, MMRepError, NonFiniteError, SpecError
from mm_modules.sketcher import (
    HyperplaneBank,
    aggregate_buckets,
    normalize_widthwise,
    sketch_batch,
    sum_bits,
)

logger = logging.getLogger(__name__)

TECHNIQUES = ("early_concat", "late", "sketch_concat")
COMBINERS = ("mean", "majority_vote", "concat_head")
MISSING_POLICIES = ("zeros", "skip_item", "error")
SKETCH_KINDS = ("classical", "binary")

SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class FusionPlan:
    technique: str
    modalities: Tuple[ModalityId, ...]
    missing_policy: str = "zeros"
    combiner: Optional[str] = None

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise SpecError(f"알 수 없는 fusion 기법: {self.technique}")
        if self.missing_policy not in MISSING_POLICIES:
            raise SpecError(f"알 수 없는 missing_policy: {self.missing_policy}")
        if not self.modalities:
            raise SpecError("FusionPlan에 모달리티가 없습니다.")
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise SpecError(f"모달리티 중복: {names}")
        if self.technique == "late":
            if self.combiner not in COMBINERS:
                raise SpecError(f"late fusion combiner는 {COMBINERS} 중 하나여야 합니다: {self.combiner}")
        elif self.combiner is not None:
            raise SpecError(f"{self.technique}에는 combiner를 지정하지 않습니다.")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(m.name for m in self.modalities)

    @property
    def total_dim(self) -> int:
        return sum(m.dim for m in self.modalities)


@dataclass(frozen=True)
class Segment:
    modality: ModalityId
    offset: int
    length: int
    present: bool


@dataclass(frozen=True, eq=False)
class FusedVector:
    item_id: str
    values: np.ndarray
    provenance: Tuple[Segment, ...]

    @property
    def total_dim(self) -> int:
        return int(self.values.shape[0])

    def segment(self, name: str) -> np.ndarray:
        for seg in self.provenance:
            if seg.modality.name == name:
                return self.values[seg.offset:seg.offset + seg.length]
        raise KeyError(name)


# ── early fusion ───────────────────────────────────────────

def early_fuse(
    records: Mapping[str, EmbeddingRecord],
    plan: FusionPlan,
    item_id: Optional[str] = None,
) -> Optional[FusedVector]:
    """
    한 아이템의 모달리티 레코드를 plan 순서대로 이어 붙인다.
    skip_item 정책에서 빠진 모달리티가 있으면 None을 반환한다.
    """
    if plan.technique != "early_concat":
        raise SpecError(f"early_fuse는 early_concat plan만 받습니다: {plan.technique}")
    if item_id is None:
        item_id = next((r.item_id for r in records.values()), "")

    parts: List[np.ndarray] = []
    provenance: List[Segment] = []
    offset = 0
    for m in plan.modalities:
        rec = records.get(m.name)
        if rec is not None and rec.modality.dim != m.dim:
            raise DimError(item_id, rec.modality.dim, m.dim)
        present = rec is not None and rec.present
        if not present:
            if plan.missing_policy == "error":
                raise MissingModality(item_id, m.name)
            if plan.missing_policy == "skip_item":
                return None
            parts.append(np.zeros(m.dim))
        else:
            parts.append(rec.vector)
        provenance.append(Segment(m, offset, m.dim, present))
        offset += m.dim
    return FusedVector(item_id, np.concatenate(parts), tuple(provenance))


def _apply_policy(present: np.ndarray, plan: FusionPlan, item_ids: Sequence[str]) -> np.ndarray:
    """(n, m) present 마스크 → 유지할 행 인덱스."""
    all_present = present.all(axis=1)
    if plan.missing_policy == "error" and not all_present.all():
        row = int(np.flatnonzero(~all_present)[0])
        col = int(np.flatnonzero(~present[row])[0])
        raise MissingModality(item_ids[row], plan.names[col])
    if plan.missing_policy == "skip_item":
        kept = np.flatnonzero(all_present)
        if kept.size < len(item_ids):
            logger.info(f"skip_item: 모달리티 결측 아이템 {len(item_ids) - kept.size}개 제외")
        return kept
    return np.arange(len(item_ids))


def early_fuse_batch(
    tables: Mapping[str, EmbeddingTable],
    item_ids: Sequence[str],
    plan: FusionPlan,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    early_fuse의 배치 버전.

    Returns:
        (X (n_kept, total_dim), kept 인덱스 (item_ids 기준))
    """
    if plan.technique != "early_concat":
        raise SpecError(f"early_fuse는 early_concat plan만 받습니다: {plan.technique}")
    blocks, masks = [], []
    for m in plan.modalities:
        table = tables[m.name]
        if table.modality.dim != m.dim:
            raise DimError(m.name, table.modality.dim, m.dim)
        vectors, present = table.reindex(item_ids)
        blocks.append(np.where(present[:, None], vectors, 0.0))
        masks.append(present)
    present = np.stack(masks, axis=1) if masks else np.zeros((len(item_ids), 0), dtype=bool)
    kept = _apply_policy(present, plan, item_ids)
    return np.concatenate(blocks, axis=1)[kept], kept


# ── sketch fusion ──────────────────────────────────────────

def sketch_fuse(
    flat_sketches: Sequence[Union[np.ndarray, FusedVector]],
    modalities: Optional[Sequence[ModalityId]] = None,
    item_id: str = "",
    present: Optional[Sequence[bool]] = None,
) -> FusedVector:
    """flatten된 sketch(또는 이미 결합된 FusedVector)를 순서대로 이어 붙인다."""
    parts: List[np.ndarray] = []
    provenance: List[Segment] = []
    offset = 0
    for i, part in enumerate(flat_sketches):
        if isinstance(part, FusedVector):
            for seg in part.provenance:
                provenance.append(Segment(seg.modality, offset + seg.offset, seg.length, seg.present))
            values = part.values
        else:
            values = np.asarray(part, dtype=np.float64).ravel()
            modality = modalities[i] if modalities is not None else ModalityId(f"segment{i}", max(values.size, 1))
            flag = True if present is None else bool(present[i])
            provenance.append(Segment(modality, offset, values.size, flag))
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"sketch 입력 {i}에 NaN/inf가 있습니다.")
        parts.append(values)
        offset += values.size
    if not parts:
        raise SpecError("결합할 sketch가 없습니다.")
    return FusedVector(item_id, np.concatenate(parts), tuple(provenance))


def _flat_item_sketches(bank: HyperplaneBank, vectors: np.ndarray, kind: str) -> np.ndarray:
    """present 아이템 벡터 (n, dim) → flatten sketch (n, d·w) 또는 (n, d·b)."""
    spec = bank.spec
    if kind == "binary":
        bits = sketch_batch(bank, vectors, kind="binary")
        return bits.reshape(len(vectors), -1).astype(np.float64)
    buckets = sketch_batch(bank, vectors, kind="classical")
    flat = np.zeros((len(vectors), spec.depth * spec.width), dtype=np.float64)
    cols = np.arange(spec.depth)[None, :] * spec.width + buckets
    flat[np.arange(len(vectors))[:, None], cols] = 1.0
    return flat


def sketch_fuse_batch(
    tables: Mapping[str, EmbeddingTable],
    item_ids: Sequence[str],
    banks: Mapping[str, HyperplaneBank],
    plan: FusionPlan,
    kind: str = "classical",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    아이템별 sketch를 flatten해 plan 순서로 이어 붙인다. 결측 모달리티 구간은 0.

    Returns:
        (X (n_kept, Σ segment), kept 인덱스)
    """
    if plan.technique != "sketch_concat":
        raise SpecError(f"sketch_fuse는 sketch_concat plan만 받습니다: {plan.technique}")
    if kind not in SKETCH_KINDS:
        raise SpecError(f"알 수 없는 sketch 종류: {kind}")
    blocks, masks = [], []
    for m in plan.modalities:
        vectors, present = tables[m.name].reindex(item_ids)
        bank = banks[m.name]
        seg_len = bank.spec.depth * (bank.spec.width if kind == "classical" else bank.spec.bits_per_row)
        block = np.zeros((len(item_ids), seg_len), dtype=np.float64)
        rows = np.flatnonzero(present)
        if rows.size:
            block[rows] = _flat_item_sketches(bank, vectors[rows], kind)
        blocks.append(block)
        masks.append(present)
    present = np.stack(masks, axis=1)
    kept = _apply_policy(present, plan, item_ids)
    return np.concatenate(blocks, axis=1)[kept], kept


# ── 유저 표현 (유저 = 본 아이템의 합) ─────────────────────

def user_sketch_fuse(
    tables: Mapping[str, EmbeddingTable],
    interactions: Mapping[str, Sequence[str]],
    user_ids: Sequence[str],
    banks: Mapping[str, HyperplaneBank],
    plan: FusionPlan,
    kind: str = "classical",
) -> np.ndarray:
    """
    유저별 sketch 합 → width-wise L2 정규화 → flatten → 모달리티 순으로 concat.
    유저가 본 아이템 중 해당 모달리티가 있는 것이 하나도 없으면 그 구간은 0.
    """
    if kind not in SKETCH_KINDS:
        raise SpecError(f"알 수 없는 sketch 종류: {kind}")
    blocks = []
    for m in plan.modalities:
        table, bank = tables[m.name], banks[m.name]
        spec = bank.spec
        rows = np.flatnonzero(table.present)
        per_item = np.zeros(len(table), dtype=np.int64) - 1
        per_item[rows] = np.arange(rows.size)
        if rows.size:
            item_sketches = sketch_batch(bank, table.vectors[rows], kind=kind)
        seg_width = spec.width if kind == "classical" else spec.bits_per_row
        block = np.zeros((len(user_ids), spec.depth * seg_width), dtype=np.float64)
        for u, user in enumerate(user_ids):
            idx = per_item[[table.index_of(i) for i in interactions[user]]]
            idx = idx[idx >= 0]
            if idx.size == 0:
                continue
            if kind == "classical":
                summed = aggregate_buckets(item_sketches[idx], spec)
            else:
                summed = sum_bits(item_sketches[idx])
            block[u] = normalize_widthwise(summed).ravel()
        blocks.append(block)
    return np.concatenate(blocks, axis=1)


def user_mean_fuse(
    tables: Mapping[str, EmbeddingTable],
    interactions: Mapping[str, Sequence[str]],
    user_ids: Sequence[str],
    plan: FusionPlan,
) -> np.ndarray:
    """
    유저가 본 아이템들의 early-concat 벡터 평균. 모달리티별로 그 모달리티가 있는
    아이템만 평균하고, 하나도 없으면 그 구간은 0 (user_sketch_fuse와 같은 규칙).
    """
    blocks = []
    for m in plan.modalities:
        table = tables[m.name]
        block = np.zeros((len(user_ids), m.dim), dtype=np.float64)
        for u, user in enumerate(user_ids):
            idx = np.array([table.index_of(i) for i in interactions[user]], dtype=np.int64)
            idx = idx[table.present[idx]]
            if idx.size:
                block[u] = table.vectors[idx].mean(axis=0)
        blocks.append(block)
    return np.concatenate(blocks, axis=1)


# ── late fusion ────────────────────────────────────────────

def _check_outputs(outputs: Sequence[np.ndarray], combiner: str) -> List[np.ndarray]:
    if not outputs:
        raise SpecError("결합할 출력이 없습니다.")
    arrays = [np.asarray(o, dtype=np.float64) for o in outputs]
    k = arrays[0].shape[-1]
    for a in arrays[1:]:
        if a.shape != arrays[0].shape:
            raise DimError("late", int(a.shape[-1]), int(k))
    if combiner in ("mean", "majority_vote"):
        for a in arrays:
            if np.any(np.abs(a.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
                raise MMRepError(f"{combiner} 입력은 확률 벡터(합=1)여야 합니다.")
    return arrays


def late_combine(outputs: Sequence[np.ndarray], combiner: str) -> np.ndarray:
    """
    모달리티별 출력 (K,) 또는 (n, K)를 결합한다.

      mean          → 원소별 평균
      majority_vote → 가장 많이 뽑힌 argmax 클래스의 one-hot (동률은 낮은 인덱스)
      concat_head   → 이어 붙인 feature (head 모델 입력)
    """
    if combiner not in COMBINERS:
        raise SpecError(f"알 수 없는 combiner: {combiner}")
    arrays = _check_outputs(outputs, combiner)
    if combiner == "mean":
        return np.mean(np.stack(arrays), axis=0)
    if combiner == "concat_head":
        return np.concatenate(arrays, axis=-1)

    return _vote(np.stack(arrays), None)


def _vote(stacked: np.ndarray, voting: Optional[np.ndarray]) -> np.ndarray:
    """stacked (m, ..., K), voting (m, ...) bool 또는 None → 최다 득표 one-hot."""
    k = stacked.shape[-1]
    ballots = np.argmax(stacked, axis=-1)[..., None] == np.arange(k)
    if voting is not None:
        ballots &= voting[..., None]
    tally = ballots.sum(axis=0)
    return np.eye(k)[np.argmax(tally, axis=-1)]


def abstain_missing(outputs: np.ndarray, present: np.ndarray) -> np.ndarray:
    """결측 아이템의 출력을 균등 확률 1/K로 바꾼다 (모달리티 기권)."""
    outputs = np.array(outputs, dtype=np.float64)
    k = outputs.shape[-1]
    outputs[~np.asarray(present, dtype=bool)] = 1.0 / k
    return outputs


def late_fuse_batch(
    outputs: Mapping[str, np.ndarray],
    present: Mapping[str, np.ndarray],
    plan: FusionPlan,
    item_ids: Sequence[str],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    모달리티별 (n, K) 출력과 present 마스크 → 결합 결과 (n_kept, ·), kept 인덱스.
    zeros 정책에서 결측 모달리티는 균등 확률로 기권한다.
    """
    if plan.technique != "late":
        raise SpecError(f"late_fuse는 late plan만 받습니다: {plan.technique}")
    mask = np.stack([np.asarray(present[n], dtype=bool) for n in plan.names], axis=1)
    kept = _apply_policy(mask, plan, item_ids)
    filled = [abstain_missing(outputs[n], mask[:, j])[kept] for j, n in enumerate(plan.names)]
    if plan.combiner == "majority_vote":
        # 기권한 모달리티는 투표하지 않는다. 전원 기권이면 클래스 0
        _check_outputs(filled, plan.combiner)
        return _vote(np.stack(filled), mask[kept].T), kept
    return late_combine(filled, plan.combiner), kept


def head_input_dim(member_output_dims: Sequence[int]) -> int:
    """concat_head 입력 크기 = 멤버 출력 차원의 합."""
    return int(sum(member_output_dims))
