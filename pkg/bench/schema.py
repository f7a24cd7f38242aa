"""
실험 설정 스키마 (pydantic)

설정 파일은 JSON이다. 필드 설명은 docs/config_schema.md 참고.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from bench.config import DEFAULT_KFOLD, DEFAULT_LOGREG_C, DEFAULT_MIN_GAIN
from mm_modules.embedding_store import SplitPlan
from mm_modules.errors import ConfigError

Technique = Literal["late", "early", "sketch", "sketch_binarized"]
TECHNIQUES: Tuple[str, ...] = ("late", "early", "sketch", "sketch_binarized")

# 기법별 기본 아키텍처 (late는 모달리티별 멤버 모델)
DEFAULT_ARCHITECTURES = {
    "late": "amazon_early",
    "early": "amazon_early",
    "sketch": "amazon_sketch",
    "sketch_binarized": "amazon_sketch",
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SketchConfig(_Strict):
    depth: int = Field(default=32, ge=1)
    width: int = Field(default=64, ge=2)
    seed: int = 0

    @field_validator("width")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError(f"width는 2의 거듭제곱이어야 합니다: {v}")
        return v


class TrainSettings(_Strict):
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)


class LogRegSettings(_Strict):
    C: float = Field(default=DEFAULT_LOGREG_C, gt=0)
    max_iters: int = Field(default=5000, ge=1)
    tolerance: float = Field(default=1e-6, gt=0)
    learning_rate: float = Field(default=0.05, gt=0)


class SplitSettings(_Strict):
    kind: Literal["fractions", "holdout_plus_kfold"] = "fractions"
    fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    test_fraction: float = Field(default=0.2, ge=0, lt=1)
    k: int = Field(default=DEFAULT_KFOLD, ge=2)
    seed: int = 0

    def to_plan(self) -> SplitPlan:
        if self.kind == "fractions":
            return SplitPlan.from_fractions(*self.fractions, seed=self.seed)
        return SplitPlan.holdout_plus_kfold(self.test_fraction, self.k, seed=self.seed)


class DatasetSettings(_Strict):
    manifest: Optional[str] = None
    synth: Optional[dict] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> "DatasetSettings":
        if (self.manifest is None) == (self.synth is None):
            raise ValueError("dataset에는 manifest 또는 synth 중 정확히 하나가 필요합니다.")
        return self


class ExperimentConfig(_Strict):
    name: str = "experiment"
    dataset: DatasetSettings
    task: Optional[Literal["multiclass", "multilabel", "binary"]] = None
    techniques: List[Technique] = Field(min_length=1)
    modality_subsets: Optional[List[List[str]]] = None
    sketch: Dict[str, SketchConfig] = Field(default_factory=dict)
    default_sketch: SketchConfig = Field(default_factory=SketchConfig)
    architectures: Dict[str, str] = Field(default_factory=dict)
    width_cap: Optional[int] = Field(default=None, ge=1)
    preset: Optional[Literal["amazon", "ml25m"]] = None
    train: Dict[str, TrainSettings] = Field(default_factory=dict)
    logreg: LogRegSettings = Field(default_factory=LogRegSettings)
    late_combiner: Literal["mean", "majority_vote", "concat_head"] = "concat_head"
    missing_policy: Dict[str, Literal["zeros", "skip_item", "error"]] = Field(default_factory=dict)
    split: SplitSettings = Field(default_factory=SplitSettings)
    n_runs: int = Field(default=1, ge=1)
    base_seed: int = 0
    threshold: float = Field(default=0.5, gt=0, lt=1)
    min_gain: float = Field(default=DEFAULT_MIN_GAIN, ge=0)

    @field_validator("techniques")
    @classmethod
    def _unique_techniques(cls, v: List[str]) -> List[str]:
        if len(set(v)) != len(v):
            raise ValueError(f"techniques 중복: {v}")
        return v

    @field_validator("modality_subsets")
    @classmethod
    def _nonempty_subsets(cls, v: Optional[List[List[str]]]) -> Optional[List[List[str]]]:
        if v is None:
            return v
        if not v:
            raise ValueError("modality_subsets가 비어 있습니다.")
        for subset in v:
            if not subset or len(set(subset)) != len(subset):
                raise ValueError(f"잘못된 modality subset: {subset}")
        return v

    @field_validator("architectures", "train", "missing_policy")
    @classmethod
    def _known_technique_keys(cls, v: dict) -> dict:
        unknown = set(v) - set(TECHNIQUES)
        if unknown:
            raise ValueError(f"알 수 없는 기법 키: {sorted(unknown)}")
        return v

    def sketch_for(self, modality: str) -> SketchConfig:
        return self.sketch.get(modality, self.default_sketch)

    def architecture_for(self, technique: str) -> str:
        return self.architectures.get(technique, DEFAULT_ARCHITECTURES[technique])

    def policy_for(self, technique: str) -> str:
        return self.missing_policy.get(technique, "zeros")


def _validation_message(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(doc: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    """dict → ExperimentConfig. manifest 상대 경로는 base_dir 기준으로 바꾼다."""
    try:
        config = ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"설정 검증 실패: {_validation_message(e)}") from e
    if base_dir is not None and config.dataset.manifest is not None:
        path = Path(config.dataset.manifest)
        if not path.is_absolute():
            resolved = DatasetSettings(manifest=str((base_dir / path).resolve()))
            config = config.model_copy(update={"dataset": resolved})
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"설정 파일이 없습니다: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"설정 JSON 파싱 실패: {path}: {e}") from e
    return parse_config(doc, base_dir=path.parent)
