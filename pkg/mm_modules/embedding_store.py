"""
모달리티별 임베딩 저장소

사전 계산된 임베딩 벡터(EMB1 바이너리 / CSV)를 읽고 쓰며,
manifest 검증과 train/val/test split을 담당한다.

EMB1 포맷:
    "EMB1" | u32 LE dim | u32 LE row_count |
    row마다 u16 LE id_len, UTF-8 id, u8 present, dim × f32 LE
CSV 포맷 (사람이 작성하는 fixture용):
    item_id,present,v0,...,v{dim-1}

디스크는 f32, 메모리 연산은 f64.
"""
from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from mm_modules.errors import (
    DimError,
    DuplicateError,
    FormatError,
    ManifestError,
    SplitError,
)

logger = logging.getLogger(__name__)

EMB_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")
_ID_LEN = struct.Struct("<H")
MASK64 = (1 << 64) - 1

TASKS = ("multiclass", "multilabel", "binary")
LABEL_TARGETS = ("items", "users")


# ── 도메인 타입 ─────────────────────────────────────────────

@dataclass(frozen=True)
class ModalityId:
    """모달리티 이름과 선언 차원."""
    name: str
    dim: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("모달리티 이름이 비어 있습니다.")
        if int(self.dim) < 1:
            raise ValueError(f"dim은 1 이상이어야 합니다: {self.name}={self.dim}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """
    한 아이템의 한 모달리티 벡터.
    present=False 이면 vector는 길이 dim의 all-zero sentinel이다.
    """
    item_id: str
    modality: ModalityId
    vector: np.ndarray
    present: bool = True
    allow_zero: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != self.modality.dim:
            raise DimError(self.item_id, int(vec.size), self.modality.dim)
        if not self.present and np.any(vec):
            raise FormatError(f"absent 레코드의 벡터가 all-zero가 아닙니다: {self.item_id}")
        if self.present and not self.allow_zero and not np.any(vec):
            raise FormatError(f"present 레코드가 all-zero입니다 (allow_zero 필요): {self.item_id}")
        object.__setattr__(self, "vector", _freeze(vec.copy()))

    @classmethod
    def absent(cls, item_id: str, modality: ModalityId) -> "EmbeddingRecord":
        return cls(item_id, modality, np.zeros(modality.dim), present=False)


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """
    한 모달리티의 레코드를 (n, dim) 행렬 + present 마스크로 묶은 뷰.
    배치 파이프라인(fusion, sketch)은 모두 이 형태를 사용한다.
    """
    modality: ModalityId
    item_ids: Tuple[str, ...]
    vectors: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        present = np.asarray(self.present, dtype=bool)
        if vectors.shape != (len(self.item_ids), self.modality.dim):
            raise DimError("table", int(vectors.shape[-1]) if vectors.ndim == 2 else -1, self.modality.dim)
        object.__setattr__(self, "vectors", _freeze(vectors.copy()))
        object.__setattr__(self, "present", _freeze(present.copy()))
        object.__setattr__(self, "_index", {iid: i for i, iid in enumerate(self.item_ids)})

    @classmethod
    def from_records(cls, modality: ModalityId, records: Sequence[EmbeddingRecord]) -> "EmbeddingTable":
        if records:
            vectors = np.stack([r.vector for r in records])
        else:
            vectors = np.zeros((0, modality.dim))
        return cls(
            modality=modality,
            item_ids=tuple(r.item_id for r in records),
            vectors=vectors,
            present=np.array([r.present for r in records], dtype=bool),
        )

    def to_records(self) -> List[EmbeddingRecord]:
        return [
            EmbeddingRecord(iid, self.modality, self.vectors[i], bool(self.present[i]), allow_zero=True)
            for i, iid in enumerate(self.item_ids)
        ]

    def __len__(self) -> int:
        return len(self.item_ids)

    def index_of(self, item_id: str) -> int:
        return self._index[item_id]  # type: ignore[attr-defined]

    def has(self, item_id: str) -> bool:
        return item_id in self._index  # type: ignore[attr-defined]

    def reindex(self, item_ids: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        """item_ids 순서로 정렬된 (vectors, present)를 반환한다."""
        try:
            rows = np.array([self.index_of(i) for i in item_ids], dtype=np.int64)
        except KeyError as e:
            raise ManifestError(e.args[0], f"{self.modality.name} 임베딩 레코드 없음") from e
        if rows.size == 0:
            return np.zeros((0, self.modality.dim)), np.zeros(0, dtype=bool)
        return self.vectors[rows], self.present[rows]


# ── EMB1 / CSV 입출력 ───────────────────────────────────────

def _read_all(source: Union[BinaryIO, bytes, bytearray, str, Path]) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def _check_unique(records: List[EmbeddingRecord]) -> None:
    seen = set()
    for r in records:
        if r.item_id in seen:
            raise DuplicateError(r.item_id)
        seen.add(r.item_id)


def _parse_emb1(data: bytes, expected: ModalityId, allow_zero: bool) -> List[EmbeddingRecord]:
    if len(data) < _HEADER.size:
        raise FormatError("EMB1 헤더가 잘렸습니다.")
    magic, dim, row_count = _HEADER.unpack_from(data, 0)
    if magic != EMB_MAGIC:
        raise FormatError(f"EMB1 magic 불일치: {magic!r}")
    if dim != expected.dim:
        raise DimError("header", dim, expected.dim)

    records: List[EmbeddingRecord] = []
    offset = _HEADER.size
    vec_bytes = 4 * dim
    for row in range(row_count):
        if offset + _ID_LEN.size > len(data):
            raise FormatError(f"row {row}: id 길이 필드가 잘렸습니다.")
        (id_len,) = _ID_LEN.unpack_from(data, offset)
        offset += _ID_LEN.size
        if offset + id_len + 1 > len(data):
            raise FormatError(f"row {row}: 스트림이 잘렸습니다.")
        remaining = len(data) - (offset + id_len + 1)
        if remaining < vec_bytes:
            # 마지막 row가 f32 단위로 짧으면 차원 불일치, 아니면 잘린 스트림
            if row == row_count - 1 and remaining % 4 == 0:
                raise DimError(row, remaining // 4, dim)
            raise FormatError(f"row {row}: 스트림이 잘렸습니다.")
        try:
            item_id = data[offset:offset + id_len].decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"row {row}: id가 UTF-8이 아닙니다.") from e
        offset += id_len
        flag = data[offset]
        offset += 1
        if flag not in (0, 1):
            raise FormatError(f"row {row}: present 플래그가 0/1이 아닙니다: {flag}")
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += vec_bytes
        if flag == 0:
            records.append(EmbeddingRecord.absent(item_id, expected))
        else:
            if not allow_zero and not np.any(values):
                raise FormatError(f"row {row}: present 레코드가 all-zero입니다.")
            records.append(EmbeddingRecord(item_id, expected, values, True, allow_zero=allow_zero))
    if offset != len(data):
        raise FormatError(f"EMB1 뒤에 {len(data) - offset}바이트가 남았습니다.")
    return records


def _parse_csv(data: bytes, expected: ModalityId, allow_zero: bool) -> List[EmbeddingRecord]:
    try:
        df = pd.read_csv(io.BytesIO(data), dtype={"item_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"CSV 파싱 실패: {e}") from e

    want_cols = ["item_id", "present"] + [f"v{i}" for i in range(expected.dim)]
    if list(df.columns[:2]) != want_cols[:2]:
        raise FormatError(f"CSV 헤더는 item_id,present,v0.. 로 시작해야 합니다: {list(df.columns[:2])}")
    if len(df.columns) != len(want_cols):
        raise DimError("header", len(df.columns) - 2, expected.dim)
    if list(df.columns) != want_cols:
        raise FormatError("CSV 값 컬럼 이름이 v0..v{dim-1} 순서가 아닙니다.")

    values = df[want_cols[2:]].to_numpy(dtype=np.float64)
    records: List[EmbeddingRecord] = []
    for row in range(len(df)):
        filled = ~np.isnan(values[row])
        if not filled.all():
            raise DimError(row, int(filled.sum()), expected.dim)
        flag = df["present"].iloc[row]
        if flag not in (0, 1):
            raise FormatError(f"row {row}: present 값이 0/1이 아닙니다: {flag}")
        item_id = str(df["item_id"].iloc[row])
        if flag == 0:
            records.append(EmbeddingRecord.absent(item_id, expected))
        else:
            if not allow_zero and not np.any(values[row]):
                raise FormatError(f"row {row}: present 레코드가 all-zero입니다.")
            records.append(EmbeddingRecord(item_id, expected, values[row], True, allow_zero=allow_zero))
    return records


def load_embeddings(
    source: Union[BinaryIO, bytes, str, Path],
    expected: ModalityId,
    *,
    allow_zero: bool = False,
) -> List[EmbeddingRecord]:
    """
    EMB1(또는 CSV fallback) 스트림에서 레코드 리스트를 읽는다. 파일 순서를 유지한다.

    Raises:
        DimError: 차원 불일치
        FormatError: 잘린 스트림 / 잘못된 포맷
        DuplicateError: 같은 item_id 중복
    """
    data = _read_all(source)
    if data[:4] == EMB_MAGIC:
        records = _parse_emb1(data, expected, allow_zero)
    else:
        records = _parse_csv(data, expected, allow_zero)
    _check_unique(records)
    logger.debug(f"임베딩 로드: {expected.name} ({len(records)} rows, dim={expected.dim})")
    return records


def save_embeddings(records: Sequence[EmbeddingRecord], sink: BinaryIO, dim: Optional[int] = None) -> int:
    """레코드를 EMB1로 기록하고 쓴 바이트 수를 반환한다."""
    if dim is None:
        if not records:
            raise FormatError("빈 레코드 리스트는 dim을 지정해야 합니다.")
        dim = records[0].modality.dim
    chunks = [_HEADER.pack(EMB_MAGIC, dim, len(records))]
    for r in records:
        if r.modality.dim != dim:
            raise DimError(r.item_id, r.modality.dim, dim)
        raw_id = r.item_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise FormatError(f"item_id가 너무 깁니다: {r.item_id[:32]}...")
        chunks.append(_ID_LEN.pack(len(raw_id)))
        chunks.append(raw_id)
        chunks.append(b"\x01" if r.present else b"\x00")
        chunks.append(np.asarray(r.vector, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    sink.write(payload)
    return len(payload)


# ── Manifest ────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DatasetManifest:
    """
    데이터셋 정의: 모달리티, 아이템, 라벨, (선택) 유저 → 아이템 상호작용.

    label_target="users" 이면 labels는 유저 id를 키로 갖는다
    (유저가 본 콘텐츠로 유저 속성을 분류하는 binary task).
    """
    modalities: Tuple[ModalityId, ...]
    items: Tuple[str, ...]
    labels: Mapping[str, object]
    task: str
    n_classes: int
    embeddings: Mapping[str, EmbeddingTable] = field(default_factory=dict)
    interactions: Optional[Mapping[str, Tuple[str, ...]]] = None
    label_target: str = "items"

    @property
    def modality_names(self) -> Tuple[str, ...]:
        return tuple(m.name for m in self.modalities)

    def modality(self, name: str) -> ModalityId:
        for m in self.modalities:
            if m.name == name:
                return m
        raise ManifestError(name, "선언되지 않은 모달리티")

    def label_ids(self) -> Tuple[str, ...]:
        """라벨 대상 id 목록 (items 순서 또는 interactions 순서)."""
        if self.label_target == "users":
            return tuple(self.interactions or ())
        return self.items

    def label_array(self, ids: Optional[Sequence[str]] = None) -> np.ndarray:
        """
        라벨을 배열로 반환한다.
        multiclass/binary → (n,) int, multilabel → (n, K) float
        """
        ids = self.label_ids() if ids is None else ids
        if self.task == "multilabel":
            return np.array([self.labels[i] for i in ids], dtype=np.float64).reshape(len(ids), self.n_classes)
        return np.array([self.labels[i] for i in ids], dtype=np.int64)

    def aligned(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        """items 순서로 정렬된 (vectors, present)."""
        if name not in self.embeddings:
            raise ManifestError(name, "임베딩 테이블이 로드되지 않음")
        return self.embeddings[name].reindex(self.items)

    def to_json_dict(self, files: Optional[Mapping[str, str]] = None) -> dict:
        doc = {
            "task": self.task,
            "n_classes": self.n_classes,
            "label_target": self.label_target,
            "modalities": [
                {"name": m.name, "dim": m.dim, **({"file": files[m.name]} if files and m.name in files else {})}
                for m in self.modalities
            ],
            "items": list(self.items),
            "labels": {k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in self.labels.items()},
        }
        if self.interactions is not None:
            doc["interactions"] = {u: list(v) for u, v in self.interactions.items()}
        return doc


def _parse_label(raw, task: str):
    if task == "multilabel":
        if not isinstance(raw, (list, tuple)):
            return raw
        return tuple(int(v) for v in raw)
    return raw


def manifest_from_dict(doc: Mapping, embeddings: Optional[Mapping[str, EmbeddingTable]] = None) -> DatasetManifest:
    """JSON dict → DatasetManifest. 구조 검증은 validate_manifest에서 한다."""
    try:
        task = doc["task"]
        modalities = tuple(ModalityId(m["name"], int(m["dim"])) for m in doc["modalities"])
        items = tuple(str(i) for i in doc["items"])
        labels_raw = doc.get("labels", {})
    except (KeyError, TypeError) as e:
        raise FormatError(f"manifest 필수 키 누락: {e}") from e
    if task not in TASKS:
        raise FormatError(f"알 수 없는 task: {task}")
    n_classes = int(doc.get("n_classes", 2 if task == "binary" else 0))
    label_target = doc.get("label_target", "items")
    if label_target not in LABEL_TARGETS:
        raise FormatError(f"알 수 없는 label_target: {label_target}")
    interactions = doc.get("interactions")
    if interactions is not None:
        interactions = {str(u): tuple(str(i) for i in v) for u, v in interactions.items()}
    return DatasetManifest(
        modalities=modalities,
        items=items,
        labels={str(k): _parse_label(v, task) for k, v in labels_raw.items()},
        task=task,
        n_classes=n_classes,
        embeddings=dict(embeddings or {}),
        interactions=interactions,
        label_target=label_target,
    )


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """manifest JSON과 모달리티별 임베딩 파일(상대 경로)을 함께 로드한다."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest JSON 파싱 실패: {path}: {e}") from e

    manifest = manifest_from_dict(doc)
    tables: Dict[str, EmbeddingTable] = {}
    for entry, modality in zip(doc["modalities"], manifest.modalities):
        file_name = entry.get("file")
        if not file_name:
            raise ManifestError(modality.name, "모달리티 file 경로가 없습니다")
        records = load_embeddings(path.parent / file_name, modality, allow_zero=bool(entry.get("allow_zero", False)))
        tables[modality.name] = EmbeddingTable.from_records(modality, records)
    logger.info(f"manifest 로드 완료: {path} (items={len(manifest.items)}, modalities={list(tables)})")
    return DatasetManifest(
        modalities=manifest.modalities,
        items=manifest.items,
        labels=manifest.labels,
        task=manifest.task,
        n_classes=manifest.n_classes,
        embeddings=tables,
        interactions=manifest.interactions,
        label_target=manifest.label_target,
    )


def save_manifest(manifest: DatasetManifest, out_dir: Union[str, Path]) -> Path:
    """manifest.json + <modality>.emb 파일을 out_dir에 저장한다."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for m in manifest.modalities:
        file_name = f"{m.name}.emb"
        with open(out_dir / file_name, "wb") as f:
            save_embeddings(manifest.embeddings[m.name].to_records(), f, dim=m.dim)
        files[m.name] = file_name
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest.to_json_dict(files), f, indent=2, ensure_ascii=False)
    logger.info(f"manifest 저장: {manifest_path}")
    return manifest_path


# ── 검증 ────────────────────────────────────────────────────

@dataclass(frozen=True)
class ValidationReport:
    task: str
    n_items: int
    n_users: int
    dims: Dict[str, int]
    missing_rate: Dict[str, float]
    class_counts: Dict[int, int]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_items": self.n_items,
            "n_users": self.n_users,
            "dims": dict(self.dims),
            "missing_rate": dict(self.missing_rate),
            "class_counts": {str(k): v for k, v in self.class_counts.items()},
        }


def _check_label(entity: str, raw, task: str, n_classes: int) -> None:
    if task == "multilabel":
        if not isinstance(raw, (list, tuple)) or len(raw) != n_classes:
            raise ManifestError(entity, f"multilabel 라벨은 길이 {n_classes}의 K-hot 벡터여야 합니다")
        if any(v not in (0, 1) for v in raw):
            raise ManifestError(entity, "K-hot 라벨 값은 0/1이어야 합니다")
        return
    if isinstance(raw, bool) or not isinstance(raw, (int, np.integer)):
        raise ManifestError(entity, f"{task} 라벨은 정수여야 합니다")
    upper = 2 if task == "binary" else n_classes
    if not 0 <= int(raw) < upper:
        raise ManifestError(entity, f"라벨 {raw}이 범위 [0, {upper}) 밖입니다")


def validate_manifest(manifest: DatasetManifest) -> ValidationReport:
    """
    구조 위반이면 ManifestError, 아니면 모달리티별 결측률 / 클래스별 개수 / 차원표를 반환한다.
    """
    names = [m.name for m in manifest.modalities]
    for name in names:
        if names.count(name) > 1:
            raise ManifestError(name, "모달리티 이름 중복")
    item_set = set(manifest.items)
    if len(item_set) != len(manifest.items):
        dup = next(i for i in manifest.items if manifest.items.count(i) > 1)
        raise ManifestError(dup, "item id 중복")
    if manifest.task in ("multiclass", "multilabel") and manifest.n_classes < 2:
        raise ManifestError("n_classes", f"{manifest.task} task는 n_classes ≥ 2가 필요합니다")

    # 아이템마다 모달리티당 정확히 한 레코드
    missing_rate: Dict[str, float] = {}
    for m in manifest.modalities:
        table = manifest.embeddings.get(m.name)
        if table is None:
            raise ManifestError(m.name, "임베딩 테이블 없음")
        if table.modality.dim != m.dim:
            raise ManifestError(m.name, f"차원 불일치 {table.modality.dim} != {m.dim}")
        for iid in table.item_ids:
            if iid not in item_set:
                raise ManifestError(iid, f"{m.name}: 선언되지 않은 아이템의 레코드")
        _, present = table.reindex(manifest.items)
        n = len(manifest.items)
        missing_rate[m.name] = float(np.count_nonzero(~present)) / n if n else 0.0

    # 상호작용
    users: Tuple[str, ...] = ()
    if manifest.interactions is not None:
        users = tuple(manifest.interactions)
        for user, seq in manifest.interactions.items():
            if not seq:
                raise ManifestError(user, "빈 interaction 리스트")
            for iid in seq:
                if iid not in item_set:
                    raise ManifestError(iid, f"user {user}: 선언되지 않은 아이템")
    if manifest.label_target == "users" and manifest.interactions is None:
        raise ManifestError("label_target", "users 라벨에는 interactions가 필요합니다")

    # 라벨
    targets = set(manifest.label_ids())
    for key in manifest.labels:
        if key not in targets:
            raise ManifestError(key, "라벨 대상이 아닌 id")
    class_counts: Dict[int, int] = {}
    for entity in manifest.label_ids():
        if entity not in manifest.labels:
            raise ManifestError(entity, "라벨 없음")
        raw = manifest.labels[entity]
        _check_label(entity, raw, manifest.task, manifest.n_classes)
        if manifest.task == "multilabel":
            for k, v in enumerate(raw):
                class_counts[k] = class_counts.get(k, 0) + int(v)
        else:
            class_counts[int(raw)] = class_counts.get(int(raw), 0) + 1

    report = ValidationReport(
        task=manifest.task,
        n_items=len(manifest.items),
        n_users=len(users),
        dims={m.name: m.dim for m in manifest.modalities},
        missing_rate=missing_rate,
        class_counts=dict(sorted(class_counts.items())),
    )
    for name, rate in missing_rate.items():
        if rate > 0:
            logger.info(f"모달리티 결측: {name} = {rate:.1%}")
    return report


# ── Split ───────────────────────────────────────────────────

@dataclass(frozen=True)
class SplitPlan:
    """
    kind="fractions": (train, val, test) 비율
    kind="holdout_plus_kfold": test 비율 + 나머지에서 k-fold
    """
    kind: str
    seed: int
    fractions: Optional[Tuple[float, float, float]] = None
    test_fraction: Optional[float] = None
    k: Optional[int] = None

    @classmethod
    def from_fractions(cls, train: float, val: float, test: float, seed: int) -> "SplitPlan":
        return cls(kind="fractions", seed=seed, fractions=(train, val, test))

    @classmethod
    def holdout_plus_kfold(cls, test_fraction: float, k: int, seed: int) -> "SplitPlan":
        return cls(kind="holdout_plus_kfold", seed=seed, test_fraction=test_fraction, k=k)


@dataclass(frozen=True, eq=False)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    folds: Tuple[Tuple[np.ndarray, np.ndarray], ...] = ()

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def _floor_size(n: int, fraction: float) -> int:
    # 0.2 * 60000 같은 값이 부동소수 오차로 하나 작아지지 않도록 작은 여유를 둔다
    return int(math.floor(n * fraction + 1e-9))


def make_split(n_items: int, plan: SplitPlan) -> SplitIndices:
    """
    결정적(seed 고정) split. 인덱스 집합은 서로소이고 합집합은 {0..n-1}.
    val/test 크기는 floor, 나머지는 train으로 간다.
    """
    rng = np.random.default_rng(int(plan.seed) & MASK64)

    if plan.kind == "fractions":
        if plan.fractions is None or len(plan.fractions) != 3:
            raise SplitError("fractions는 (train, val, test) 세 값이어야 합니다.")
        f_train, f_val, f_test = (float(f) for f in plan.fractions)
        if min(f_train, f_val, f_test) < 0:
            raise SplitError(f"음수 비율: {plan.fractions}")
        if abs(f_train + f_val + f_test - 1.0) > 1e-9:
            raise SplitError(f"비율의 합이 1이 아닙니다: {plan.fractions}")
        if n_items < 10:
            raise SplitError(f"fractions split은 n ≥ 10이 필요합니다 (n={n_items})")
        n_val = _floor_size(n_items, f_val)
        n_test = _floor_size(n_items, f_test)
        n_train = n_items - n_val - n_test
        perm = rng.permutation(n_items)
        return SplitIndices(
            train=np.sort(perm[:n_train]),
            val=np.sort(perm[n_train:n_train + n_val]),
            test=np.sort(perm[n_train + n_val:]),
        )

    if plan.kind == "holdout_plus_kfold":
        k = int(plan.k or 0)
        test_fraction = float(plan.test_fraction if plan.test_fraction is not None else -1)
        if k < 2:
            raise SplitError(f"k는 2 이상이어야 합니다 (k={k})")
        if not 0.0 <= test_fraction < 1.0:
            raise SplitError(f"test_fraction은 [0, 1) 범위여야 합니다: {test_fraction}")
        if n_items < k:
            raise SplitError(f"k-fold는 n ≥ k가 필요합니다 (n={n_items}, k={k})")
        n_test = _floor_size(n_items, test_fraction)
        if n_items - n_test < k:
            raise SplitError(f"test를 뺀 학습 풀({n_items - n_test})이 k={k}보다 작습니다")
        perm = rng.permutation(n_items)
        pool = perm[:n_items - n_test]
        test = np.sort(perm[n_items - n_test:])
        folds = []
        for chunk in np.array_split(pool, k):
            val_idx = np.sort(chunk)
            train_idx = np.sort(np.setdiff1d(pool, chunk, assume_unique=True))
            folds.append((train_idx, val_idx))
        return SplitIndices(
            train=np.sort(pool),
            val=np.zeros(0, dtype=np.int64),
            test=test,
            folds=tuple(folds),
        )

    raise SplitError(f"알 수 없는 split 종류: {plan.kind}")
