"""
LSH 기반 sketch 표현

d개의 행 각각에 원점을 지나는 b = log2(w)개의 무작위 초평면을 둔다.
행 i의 부호 비트 b개가
  - 그대로 나열되면 binarized sketch (d × b 비트)
  - 정수로 읽히면(첫 초평면이 MSB) classical sketch의 bucket (d × w one-hot)
이 된다. 두 표현은 같은 비트의 두 가지 뷰다.

유저 표현: classical sketch 합(CountSketch) → 행별(width-wise) L2 정규화 → flatten

난수 스트림:
    (row, bit)마다 numpy Philox(key=seed, counter=[0, 0, bit, row])를 만들고
    standard_normal(input_dim)을 뽑는다. 좌표 j는 그 스트림의 j번째 값이다.
    생성 순서 / 병렬 여부와 무관하게 같은 bank가 나온다.

파일 포맷:
    LSHB: "LSHB" | u32 version | u32 depth | u32 width | u64 seed | u32 input_dim |
          f64 LE 계수 (row, bit, coord 순)
    SKCH: "SKCH" | u8 kind (0=binary, 1=classical, 2=counts) | u32 depth | u32 width_or_bits |
          [counts만: u32 n_items] | payload
          (binary: 비트 packing, classical: u32 bucket, counts: f64)
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence, Tuple, Union

import numpy as np

from mm_modules.embedding_store import MASK64
from mm_modules.errors import (
    DimError,
    FormatError,
    MissingInput,
    MixedBank,
    NonFiniteError,
    SpecError,
)

logger = logging.getLogger(__name__)

BANK_MAGIC = b"LSHB"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<4sIIIQI")

SKETCH_MAGIC = b"SKCH"
_SKETCH_HEADER = struct.Struct("<4sBII")
_COUNT_ITEMS = struct.Struct("<I")
KIND_CODES = {"binary": 0, "classical": 1, "counts": 2}

# sketch_batch가 한 번에 투영하는 최대 행 수
BATCH_CHUNK = 4096


# ── 타입 ────────────────────────────────────────────────────

@dataclass(frozen=True)
class SketchSpec:
    depth: int
    width: int
    seed: int

    def __post_init__(self):
        if int(self.depth) < 1:
            raise SpecError(f"depth는 1 이상이어야 합니다: {self.depth}")
        w = int(self.width)
        if w < 2 or w & (w - 1):
            raise SpecError(f"width는 2 이상의 2의 거듭제곱이어야 합니다: {self.width}")

    @property
    def bits_per_row(self) -> int:
        return int(self.width).bit_length() - 1


@dataclass(frozen=True, eq=False)
class HyperplaneBank:
    """불변 초평면 묶음. normals shape = (depth, bits_per_row, input_dim)."""
    spec: SketchSpec
    input_dim: int
    normals: np.ndarray

    def __post_init__(self):
        want = (self.spec.depth, self.spec.bits_per_row, self.input_dim)
        if self.normals.shape != want:
            raise SpecError(f"normals shape {self.normals.shape} != {want}")
        normals = np.array(self.normals, dtype=np.float64)
        normals.flags.writeable = False
        object.__setattr__(self, "normals", normals)

    @property
    def key(self) -> Tuple[int, int, int, int]:
        return (self.spec.depth, self.spec.width, self.spec.seed, self.input_dim)


@dataclass(frozen=True, eq=False)
class BinarySketch:
    bits: np.ndarray          # (depth, bits_per_row) uint8 0/1
    spec: SketchSpec


@dataclass(frozen=True, eq=False)
class ClassicalSketch:
    buckets: np.ndarray       # (depth,) int64, 각 값 ∈ [0, width)
    spec: SketchSpec


@dataclass(frozen=True, eq=False)
class CountSketch:
    """classical sketch의 합. 정규화 전에는 모든 행의 합이 n_items."""
    counts: np.ndarray        # (depth, width) float64
    n_items: int
    spec: SketchSpec

    def __add__(self, other: "CountSketch") -> "CountSketch":
        _check_same_spec(self.spec, other.spec)
        return CountSketch(self.counts + other.counts, self.n_items + other.n_items, self.spec)


def _check_same_spec(a: SketchSpec, b: SketchSpec) -> None:
    if a != b:
        raise MixedBank(f"서로 다른 sketch spec: {a} vs {b}")


# ── bank ────────────────────────────────────────────────────

def _hyperplane(seed: int, row: int, bit: int, input_dim: int) -> np.ndarray:
    counter = np.array([0, 0, bit, row], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=int(seed) & MASK64, counter=counter))
    return gen.standard_normal(input_dim)


def build_bank(spec: SketchSpec, input_dim: int) -> HyperplaneBank:
    """(seed, input_dim)만으로 결정되는 초평면 bank를 만든다."""
    if int(input_dim) < 1:
        raise SpecError(f"input_dim은 1 이상이어야 합니다: {input_dim}")
    d, b = spec.depth, spec.bits_per_row
    normals = np.empty((d, b, input_dim), dtype=np.float64)
    for row in range(d):
        for bit in range(b):
            normals[row, bit] = _hyperplane(spec.seed, row, bit, input_dim)
    logger.debug(f"hyperplane bank 생성: d={d}, b={b}, input_dim={input_dim}, seed={spec.seed}")
    return HyperplaneBank(spec, int(input_dim), normals)


# ── sketch ──────────────────────────────────────────────────

def _check_vectors(bank: HyperplaneBank, vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != bank.input_dim:
        raise DimError("vector", int(vectors.shape[-1]) if vectors.ndim else 0, bank.input_dim)
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteError("sketch 입력에 NaN/inf가 있습니다.")
    zero_rows = np.flatnonzero(~np.any(vectors, axis=1))
    if zero_rows.size:
        raise MissingInput(f"all-zero 벡터는 sketch할 수 없습니다 (row={int(zero_rows[0])}). present 플래그로 걸러주세요.")
    return vectors


def _project_bits(bank: HyperplaneBank, vectors: np.ndarray) -> np.ndarray:
    """(n, input_dim) → (n, d, b) uint8. 투영값 0은 비트 1."""
    d, b = bank.spec.depth, bank.spec.bits_per_row
    flat = bank.normals.reshape(d * b, bank.input_dim)
    out = np.empty((vectors.shape[0], d, b), dtype=np.uint8)
    for start in range(0, vectors.shape[0], BATCH_CHUNK):
        chunk = vectors[start:start + BATCH_CHUNK]
        proj = np.einsum("nk,mk->nm", chunk, flat)
        out[start:start + chunk.shape[0]] = (proj >= 0.0).reshape(-1, d, b)
    return out


def _bits_to_buckets(bits: np.ndarray) -> np.ndarray:
    b = bits.shape[-1]
    weights = (1 << np.arange(b - 1, -1, -1)).astype(np.int64)
    return bits.astype(np.int64) @ weights


def sketch_binary(bank: HyperplaneBank, vector: np.ndarray) -> BinarySketch:
    vectors = _check_vectors(bank, np.asarray(vector, dtype=np.float64).reshape(1, -1))
    return BinarySketch(_project_bits(bank, vectors)[0], bank.spec)


def sketch_classical(bank: HyperplaneBank, vector: np.ndarray) -> ClassicalSketch:
    bits = sketch_binary(bank, vector).bits
    return ClassicalSketch(_bits_to_buckets(bits), bank.spec)


def sketch_batch(bank: HyperplaneBank, vectors: np.ndarray, kind: str = "classical") -> np.ndarray:
    """
    여러 벡터를 한 번에 sketch한다. 출력 순서 = 입력 순서.

    Returns:
        kind="binary"    → (n, d, b) uint8
        kind="classical" → (n, d) int64 bucket
    """
    if kind not in ("binary", "classical"):
        raise SpecError(f"알 수 없는 sketch 종류: {kind}")
    vectors = _check_vectors(bank, vectors)
    bits = _project_bits(bank, vectors)
    return bits if kind == "binary" else _bits_to_buckets(bits)


def materialize_onehot(sketch: ClassicalSketch) -> np.ndarray:
    d, w = sketch.spec.depth, sketch.spec.width
    dense = np.zeros((d, w), dtype=np.float64)
    dense[np.arange(d), sketch.buckets] = 1.0
    return dense


# ── 집계 / 정규화 ──────────────────────────────────────────

def aggregate_buckets(buckets: np.ndarray, spec: SketchSpec) -> CountSketch:
    """(n, d) bucket 배열 → CountSketch. aggregate의 배치 버전."""
    buckets = np.asarray(buckets, dtype=np.int64)
    if buckets.ndim != 2 or buckets.shape[0] == 0:
        raise MissingInput("집계할 sketch가 없습니다.")
    d, w = spec.depth, spec.width
    if buckets.shape[1] != d:
        raise DimError("buckets", buckets.shape[1], d)
    flat_index = (np.arange(d)[None, :] * w + buckets).ravel()
    counts = np.bincount(flat_index, minlength=d * w).astype(np.float64).reshape(d, w)
    return CountSketch(counts, int(buckets.shape[0]), spec)


def aggregate(sketches: Sequence[ClassicalSketch]) -> CountSketch:
    if not sketches:
        raise MissingInput("집계할 sketch가 없습니다.")
    spec = sketches[0].spec
    for s in sketches[1:]:
        _check_same_spec(spec, s.spec)
    return aggregate_buckets(np.stack([s.buckets for s in sketches]), spec)


def sum_bits(bits: np.ndarray) -> np.ndarray:
    """(n, d, b) 비트 → (d, b) 합. binarized 유저 표현용."""
    bits = np.asarray(bits)
    if bits.ndim != 3 or bits.shape[0] == 0:
        raise MissingInput("집계할 sketch가 없습니다.")
    return bits.sum(axis=0, dtype=np.float64)


def normalize_widthwise(cs: Union[CountSketch, np.ndarray]) -> np.ndarray:
    """각 행을 L2 norm으로 나눈다. all-zero 행은 그대로 0."""
    matrix = cs.counts if isinstance(cs, CountSketch) else np.asarray(cs, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    out = np.zeros_like(matrix, dtype=np.float64)
    np.divide(matrix, norms, out=out, where=norms > 0)
    return out


def flatten(x: Union[np.ndarray, BinarySketch, ClassicalSketch, CountSketch]) -> np.ndarray:
    """row-major flatten. 비트는 {0.0, 1.0}."""
    if isinstance(x, BinarySketch):
        return x.bits.astype(np.float64).ravel()
    if isinstance(x, ClassicalSketch):
        return materialize_onehot(x).ravel()
    if isinstance(x, CountSketch):
        return x.counts.ravel().copy()
    return np.asarray(x, dtype=np.float64).ravel()


def estimate_angle(a: BinarySketch, b: BinarySketch) -> float:
    """불일치 비트 비율 × π."""
    _check_same_spec(a.spec, b.spec)
    n_bits = a.spec.depth * a.spec.bits_per_row
    mismatch = int(np.count_nonzero(a.bits != b.bits))
    return float(np.clip(math.pi * mismatch / n_bits, 0.0, math.pi))


# ── 파일 입출력 ─────────────────────────────────────────────

def _read_all(source: Union[BinaryIO, bytes, str, Path]) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def save_bank(bank: HyperplaneBank, sink: BinaryIO) -> int:
    spec = bank.spec
    payload = _BANK_HEADER.pack(
        BANK_MAGIC, BANK_VERSION, spec.depth, spec.width, int(spec.seed) & MASK64, bank.input_dim
    ) + bank.normals.astype("<f8").tobytes()
    sink.write(payload)
    return len(payload)


def load_bank(source: Union[BinaryIO, bytes, str, Path]) -> HyperplaneBank:
    data = _read_all(source)
    if len(data) < _BANK_HEADER.size:
        raise FormatError("LSHB 헤더가 잘렸습니다.")
    magic, version, depth, width, seed, input_dim = _BANK_HEADER.unpack_from(data, 0)
    if magic != BANK_MAGIC:
        raise FormatError(f"LSHB magic 불일치: {magic!r}")
    if version != BANK_VERSION:
        raise FormatError(f"지원하지 않는 LSHB 버전: {version}")
    spec = SketchSpec(depth, width, seed)
    n_coef = depth * spec.bits_per_row * input_dim
    if len(data) != _BANK_HEADER.size + 8 * n_coef:
        raise FormatError(f"LSHB 크기 불일치: {len(data)} bytes, 계수 {n_coef}개 기대")
    normals = np.frombuffer(data, dtype="<f8", offset=_BANK_HEADER.size).reshape(depth, spec.bits_per_row, input_dim)
    return HyperplaneBank(spec, input_dim, normals)


def dump_sketch(sketch: Union[BinarySketch, ClassicalSketch, CountSketch], sink: BinaryIO) -> int:
    spec = sketch.spec
    if isinstance(sketch, BinarySketch):
        header = _SKETCH_HEADER.pack(SKETCH_MAGIC, KIND_CODES["binary"], spec.depth, spec.bits_per_row)
        payload = np.packbits(sketch.bits.astype(np.uint8).ravel()).tobytes()
    elif isinstance(sketch, ClassicalSketch):
        header = _SKETCH_HEADER.pack(SKETCH_MAGIC, KIND_CODES["classical"], spec.depth, spec.width)
        payload = sketch.buckets.astype("<u4").tobytes()
    else:
        header = _SKETCH_HEADER.pack(SKETCH_MAGIC, KIND_CODES["counts"], spec.depth, spec.width)
        header += _COUNT_ITEMS.pack(sketch.n_items)
        payload = sketch.counts.astype("<f8").tobytes()
    blob = header + payload
    sink.write(blob)
    return len(blob)


def load_sketch(source: Union[BinaryIO, bytes, str, Path], spec: SketchSpec):
    """SKCH 덤프를 읽는다. 파일에는 seed가 없으므로 spec을 함께 받아 차원을 검증한다."""
    data = _read_all(source)
    if len(data) < _SKETCH_HEADER.size:
        raise FormatError("SKCH 헤더가 잘렸습니다.")
    magic, kind, depth, second = _SKETCH_HEADER.unpack_from(data, 0)
    if magic != SKETCH_MAGIC:
        raise FormatError(f"SKCH magic 불일치: {magic!r}")
    d = spec.depth
    body = data[_SKETCH_HEADER.size:]

    if kind == KIND_CODES["binary"]:
        b = spec.bits_per_row
        if (depth, second) != (d, b):
            raise FormatError(f"SKCH 차원 {depth}×{second} != {d}×{b}")
        if len(body) != (d * b + 7) // 8:
            raise FormatError("binary sketch payload 크기 불일치")
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=d * b).reshape(d, b)
        return BinarySketch(bits, spec)

    if (depth, second) != (d, spec.width):
        raise FormatError(f"SKCH 차원 {depth}×{second} != {d}×{spec.width}")
    if kind == KIND_CODES["classical"]:
        if len(body) != 4 * d:
            raise FormatError("classical sketch payload 크기 불일치")
        buckets = np.frombuffer(body, dtype="<u4").astype(np.int64)
        if np.any(buckets >= spec.width):
            raise FormatError("bucket 값이 width 범위를 벗어났습니다.")
        return ClassicalSketch(buckets, spec)
    if kind == KIND_CODES["counts"]:
        if len(body) != _COUNT_ITEMS.size + 8 * d * spec.width:
            raise FormatError("count sketch payload 크기 불일치")
        (n_items,) = _COUNT_ITEMS.unpack_from(body, 0)
        counts = np.frombuffer(body, dtype="<f8", offset=_COUNT_ITEMS.size).reshape(d, spec.width).copy()
        return CountSketch(counts, n_items, spec)
    raise FormatError(f"알 수 없는 SKCH kind: {kind}")


def sketch_nbytes(kind: str, spec: SketchSpec) -> int:
    """
    한 sketch의 직렬화 크기(bytes).
    kind="dense"는 비교용으로 d × w one-hot을 f64로 펼친 크기다.
    """
    d, w, b = spec.depth, spec.width, spec.bits_per_row
    if kind == "binary":
        return _SKETCH_HEADER.size + (d * b + 7) // 8
    if kind == "classical":
        return _SKETCH_HEADER.size + 4 * d
    if kind == "counts":
        return _SKETCH_HEADER.size + _COUNT_ITEMS.size + 8 * d * w
    if kind == "dense":
        return 8 * d * w
    raise SpecError(f"알 수 없는 sketch 종류: {kind}")
