"""
평가 지표: accuracy(+ 클래스별), micro-AUC, micro-mAP, MCC
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.stats import rankdata

from mm_modules.embedding_store import TASKS
from mm_modules.errors import NonFiniteError, TaskMismatch, UndefinedMetric

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class Predictions:
    """
    multiclass : scores (n, K), labels (n,) 정수
    multilabel : scores (n, K), labels (n, K) 0/1
    binary     : scores (n,) 양성 확률, labels (n,) 0/1
    """
    scores: np.ndarray
    labels: np.ndarray
    task: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise TaskMismatch(f"알 수 없는 task: {self.task}")
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        if self.task == "binary" and scores.ndim == 2:
            # (n, 1) sigmoid 출력 또는 (n, 2) softmax 출력의 양성 열
            if scores.shape[1] not in (1, 2):
                raise TaskMismatch(f"binary score는 (n,), (n, 1), (n, 2) 중 하나여야 합니다: {scores.shape}")
            scores = scores[:, -1]
        if self.task == "binary" and scores.ndim != 1:
            raise TaskMismatch(f"binary score shape {scores.shape}")
        if scores.shape[0] < 1:
            raise UndefinedMetric("예측이 비어 있습니다.")
        if not np.all(np.isfinite(scores)):
            raise NonFiniteError("score에 NaN/inf가 있습니다.")
        if labels.shape[0] != scores.shape[0]:
            raise TaskMismatch(f"score {scores.shape[0]}개, 라벨 {labels.shape[0]}개")
        if self.task == "multilabel" and labels.shape != scores.shape:
            raise TaskMismatch(f"multilabel 라벨 shape {labels.shape} != score shape {scores.shape}")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n_classes(self) -> int:
        return int(self.scores.shape[1]) if self.scores.ndim == 2 else 2


def _require(pred: Predictions, *tasks: str) -> None:
    if pred.task not in tasks:
        raise TaskMismatch(f"이 지표는 {tasks} task 전용입니다 (got {pred.task}).")


def accuracy(pred: Predictions) -> float:
    """argmax(scores) == label 비율. argmax 동률은 낮은 인덱스."""
    _require(pred, "multiclass")
    return float(np.mean(np.argmax(pred.scores, axis=1) == pred.labels))


def per_class_accuracy(pred: Predictions) -> np.ndarray:
    """클래스별 accuracy. 해당 클래스 아이템이 없으면 NaN (0이 아니라 '없음')."""
    _require(pred, "multiclass")
    hits = np.argmax(pred.scores, axis=1) == pred.labels
    out = np.full(pred.n_classes, np.nan)
    for k in range(pred.n_classes):
        mask = pred.labels == k
        if mask.any():
            out[k] = float(np.mean(hits[mask]))
    return out


def _flat_pairs(pred: Predictions):
    _require(pred, "multilabel", "binary")
    scores = pred.scores.ravel()
    labels = pred.labels.astype(np.float64).ravel()
    if np.any((labels != 0) & (labels != 1)):
        raise TaskMismatch("micro 지표 라벨은 0/1이어야 합니다.")
    return scores, labels.astype(bool)


def micro_auc(pred: Predictions) -> float:
    """(item, class) 쌍을 펼친 Mann-Whitney AUC. 동점은 midrank."""
    scores, labels = _flat_pairs(pred)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("양성과 음성이 모두 있어야 AUC가 정의됩니다.")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def micro_map(pred: Predictions) -> float:
    """score 내림차순(동점은 원래 순서) 정렬 후 양성 위치에서의 precision 평균."""
    scores, labels = _flat_pairs(pred)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetric("양성이 없으면 AP가 정의되지 않습니다.")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].mean())


def mcc_from_confusion(tp: int, tn: int, fp: int, fn: int) -> float:
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(denom))


def mcc(pred: Predictions, threshold: float = DEFAULT_THRESHOLD) -> float:
    """binary score를 threshold 이상이면 양성으로 보고 MCC를 계산한다. 분모 0이면 0."""
    _require(pred, "binary")
    if pred.scores.ndim != 1:
        raise TaskMismatch("binary score는 (n,) 양성 확률이어야 합니다.")
    y = pred.labels.astype(np.int64)
    if np.any((y != 0) & (y != 1)):
        raise TaskMismatch("binary 라벨은 0/1이어야 합니다.")
    y_hat = pred.scores >= threshold
    y = y.astype(bool)
    tp = int(np.sum(y_hat & y))
    tn = int(np.sum(~y_hat & ~y))
    fp = int(np.sum(y_hat & ~y))
    fn = int(np.sum(~y_hat & y))
    return mcc_from_confusion(tp, tn, fp, fn)


METRICS_BY_TASK = {
    "multiclass": ("accuracy",),
    "multilabel": ("micro_auc", "micro_map"),
    "binary": ("mcc", "micro_auc"),
}
PRIMARY_METRIC = {"multiclass": "accuracy", "multilabel": "micro_auc", "binary": "mcc"}


def evaluate(pred: Predictions, threshold: float = DEFAULT_THRESHOLD) -> Dict[str, float]:
    """task에 맞는 지표 묶음. 정의되지 않는 지표는 NaN."""
    fns = {
        "accuracy": accuracy,
        "micro_auc": micro_auc,
        "micro_map": micro_map,
        "mcc": lambda p: mcc(p, threshold),
    }
    out: Dict[str, float] = {}
    for name in METRICS_BY_TASK[pred.task]:
        try:
            out[name] = fns[name](pred)
        except UndefinedMetric:
            out[name] = float("nan")
    return out
