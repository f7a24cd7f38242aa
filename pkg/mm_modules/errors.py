"""
도메인 예외 정의

모든 예외는 ValueError를 상속한다. 호출부(CLI, runner)는 ValueError 단위로
잡아서 종료 코드나 실패 RunRecord로 변환한다.
"""
from typing import Optional


class MMRepError(ValueError):
    """툴킷 공통 부모 예외."""


# ── 데이터 / 포맷 ─────────────────────────────────────────

class FormatError(MMRepError):
    """EMB1/CSV/LSHB/SKCH/MODL 스트림이 잘렸거나 형식이 맞지 않음."""


class DimError(MMRepError):
    """벡터 길이가 선언된 차원과 다름."""

    def __init__(self, row, got: int, want: int, message: Optional[str] = None):
        self.row = row
        self.got = got
        self.want = want
        super().__init__(message or f"차원 불일치 (row={row}): got={got}, want={want}")


class DuplicateError(MMRepError):
    """같은 item_id가 두 번 이상 등장함."""

    def __init__(self, item_id: str):
        self.item_id = item_id
        super().__init__(f"중복 item_id: {item_id}")


class ManifestError(MMRepError):
    """manifest 구조 위반 (알 수 없는 id, 라벨 arity 불일치 등)."""

    def __init__(self, offending_id, message: str):
        self.offending_id = offending_id
        super().__init__(f"{message} (id={offending_id})")


class SplitError(MMRepError):
    """불가능한 split 계획."""


class SpecError(MMRepError):
    """잘못된 SynthSpec / SketchSpec / NetworkSpec."""


# ── sketch / fusion ──────────────────────────────────────

class MissingInput(MMRepError):
    """all-zero sentinel 벡터는 해시하지 않는다. present 플래그로 걸러야 한다."""


class MixedBank(MMRepError):
    """서로 다른 HyperplaneBank에서 나온 sketch를 섞음."""


class MissingModality(MMRepError):
    """missing_policy=error 에서 모달리티가 비어 있음."""

    def __init__(self, item_id: str, modality: str):
        self.item_id = item_id
        self.modality = modality
        super().__init__(f"모달리티 누락: item={item_id}, modality={modality}")


# ── 학습 ─────────────────────────────────────────────────

class NonFiniteError(MMRepError):
    """입력 배치에 NaN/inf가 있음."""


class TrainingDiverged(MMRepError):
    """학습 손실이 유한하지 않음."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"학습 발산: epoch={epoch}, loss={loss}")


class DegenerateLabels(MMRepError):
    """라벨에 클래스가 하나뿐임."""


# ── 평가 / 실행 ──────────────────────────────────────────

class UndefinedMetric(MMRepError):
    """양성 또는 음성이 없어 지표가 정의되지 않음."""


class TaskMismatch(MMRepError):
    """지표가 요구하는 task와 라벨 형식이 다름."""


class ConfigError(MMRepError):
    """실험 설정 오류. 학습 시작 전에 보고된다."""


class LeakageError(MMRepError):
    """학습에 사용된 id가 test split에 섞여 있음."""
