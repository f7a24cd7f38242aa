"""
실험 실행기

설정 → 데이터셋 로드/검증 → split (split.seed로 고정) → (기법, 모달리티 subset, run) grid 실행
→ RunRecord + EvalReport

run 시드:
    seed = base_seed + run_index
    기법/subset별 난수 스트림 = SeedSequence([seed, crc32("technique|a+b")])
    기법을 추가해도 다른 기법의 결과는 바뀌지 않는다.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from bench.config import AUDIT_FILE, HISTORY_DIR, RECORDS_FILE, REPORT_JSON, REPORT_MD, TIMINGS_FILE
from bench.report import EvalReport, RunRecord, build_report, records_to_json, report_to_markdown
from bench.schema import ExperimentConfig, load_config
from mm_modules.embedding_store import MASK64, DatasetManifest, SplitIndices, load_manifest, make_split, validate_manifest
from mm_modules.errors import ConfigError, DimError, LeakageError, MMRepError, SplitError
from mm_modules.fusion import (
    FusionPlan,
    early_fuse_batch,
    head_input_dim,
    late_fuse_batch,
    sketch_fuse_batch,
    user_mean_fuse,
    user_sketch_fuse,
)
from mm_modules.metrics import Predictions, evaluate, per_class_accuracy
from mm_modules.neural import (
    PAPER_ARCHITECTURES,
    AdamConfig,
    LogRegConfig,
    TrainConfig,
    build_paper_architecture,
    fit_logreg,
    predict_proba,
    preset_train_config,
    train,
)
from mm_modules.sketcher import HyperplaneBank, SketchSpec, build_bank
from mm_modules.synth import SynthSpec, synth_generate

logger = logging.getLogger(__name__)

SKETCH_KIND = {"sketch": "classical", "sketch_binarized": "binary"}


# ── 시드 ────────────────────────────────────────────────────

def run_seed(base_seed: int, run_index: int) -> int:
    return int(base_seed) + int(run_index)


def stream_seed(seed: int, technique: str, subset: Sequence[str]) -> int:
    label = zlib.crc32(f"{technique}|{'+'.join(subset)}".encode("utf-8"))
    return int(np.random.SeedSequence([int(seed) & MASK64, label]).generate_state(1, np.uint64)[0])


def _derive(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed) & MASK64, index]).generate_state(1, np.uint64)[0])


def subset_grid(names: Sequence[str], subsets: Optional[Sequence[Sequence[str]]] = None) -> List[Tuple[str, ...]]:
    """기본 grid: 공집합이 아닌 모든 subset (크기 순, 선언 순). 2^m − 1개."""
    if subsets is not None:
        return [tuple(s) for s in subsets]
    grid: List[Tuple[str, ...]] = []
    for size in range(1, len(names) + 1):
        grid.extend(itertools.combinations(names, size))
    return grid


# ── 데이터 / 설정 검증 ─────────────────────────────────────

def load_dataset(config: ExperimentConfig) -> DatasetManifest:
    if config.dataset.manifest is not None:
        return load_manifest(config.dataset.manifest)
    return synth_generate(SynthSpec.from_dict(config.dataset.synth))


def check_config(config: ExperimentConfig, manifest: DatasetManifest) -> None:
    """학습 전에 설정과 데이터셋의 모순을 ConfigError로 보고한다."""
    names = set(manifest.modality_names)
    if config.task is not None and config.task != manifest.task:
        raise ConfigError(f"설정 task={config.task}와 데이터셋 task={manifest.task}가 다릅니다.")
    for subset in config.modality_subsets or []:
        unknown = [n for n in subset if n not in names]
        if unknown:
            raise ConfigError(f"데이터셋에 없는 모달리티: {unknown}")
    unknown_sketch = set(config.sketch) - names
    if unknown_sketch:
        raise ConfigError(f"sketch 설정에 데이터셋에 없는 모달리티: {sorted(unknown_sketch)}")
    for technique in config.techniques:
        arch = config.architecture_for(technique)
        if arch not in PAPER_ARCHITECTURES:
            raise ConfigError(f"알 수 없는 아키텍처: {technique}={arch}")
    if manifest.label_target == "users":
        if "late" in config.techniques:
            raise ConfigError("유저 분류 task에는 late fusion을 쓸 수 없습니다 (유저 = 아이템 표현의 합).")
        if manifest.task != "binary":
            raise ConfigError("유저 분류는 binary task만 지원합니다.")
    if manifest.task == "multilabel" and "late" in config.techniques and config.late_combiner != "concat_head":
        raise ConfigError("multilabel late fusion은 concat_head combiner만 지원합니다.")


# ── 실행 컨텍스트 ──────────────────────────────────────────

@dataclass(eq=False)
class _Context:
    config: ExperimentConfig
    manifest: DatasetManifest
    split: SplitIndices
    banks: Dict[str, HyperplaneBank]
    ids: Tuple[str, ...]
    labels: np.ndarray

    @property
    def task(self) -> str:
        return self.manifest.task

    @property
    def user_task(self) -> bool:
        return self.manifest.label_target == "users"

    @property
    def head(self) -> Tuple[str, int]:
        if self.task == "multilabel":
            return "sigmoid", self.manifest.n_classes
        return "softmax", (2 if self.task == "binary" else self.manifest.n_classes)


def _train_config(ctx: _Context, technique: str, subset: Sequence[str], seed: int) -> TrainConfig:
    config = ctx.config
    if technique in config.train:
        s = config.train[technique]
        return TrainConfig(s.epochs, s.batch_size, seed, AdamConfig(s.learning_rate))
    if config.preset is not None:
        return preset_train_config(technique, config.preset, subset, shuffle_seed=seed)
    return TrainConfig(shuffle_seed=seed)


def _fit_network(ctx: _Context, arch: str, X: np.ndarray, y: np.ndarray, train_rows, val_rows,
                 technique: str, subset: Sequence[str], seed: int):
    head, k = ctx.head
    spec = build_paper_architecture(arch, X.shape[1], k, ctx.config.width_cap, head, init_seed=seed)
    val = (X[val_rows], y[val_rows]) if len(val_rows) else None
    return train(spec, X[train_rows], y[train_rows], _train_config(ctx, technique, subset, seed), val)


def _positions(kept: np.ndarray, n: int, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """원래 행 인덱스 → (feature 행렬 행, 남은 원래 행)."""
    pos = np.full(n, -1, dtype=np.int64)
    pos[kept] = np.arange(len(kept))
    mapped = pos[rows]
    return mapped[mapped >= 0], rows[mapped >= 0]


def _scores(ctx: _Context, probs: np.ndarray) -> np.ndarray:
    if ctx.task == "binary":
        return probs[:, 1] if probs.shape[1] == 2 else probs[:, 0]
    return probs


@dataclass(eq=False)
class _Fitted:
    scores: np.ndarray
    eval_rows: np.ndarray
    fit_rows: np.ndarray
    history: List[dict] = field(default_factory=list)


class _Pipeline:
    """한 (기법, subset, run)의 표현 생성과 학습/예측. 표현은 fold 사이에서 재사용한다."""

    def __init__(self, ctx: _Context, technique: str, subset: Tuple[str, ...], seed: int):
        self.ctx = ctx
        self.technique = technique
        self.subset = subset
        self.seed = seed
        self.modalities = tuple(ctx.manifest.modality(n) for n in subset)
        self.policy = ctx.config.policy_for(technique)
        self._features: Optional[Tuple[np.ndarray, np.ndarray]] = None

    # 표현
    def features(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._features is not None:
            return self._features
        ctx, tables = self.ctx, self.ctx.manifest.embeddings
        if ctx.user_task:
            interactions = ctx.manifest.interactions
            if self.technique == "early":
                plan = FusionPlan("early_concat", self.modalities, "zeros")
                X = user_mean_fuse(tables, interactions, ctx.ids, plan)
            else:
                plan = FusionPlan("sketch_concat", self.modalities, "zeros")
                X = user_sketch_fuse(tables, interactions, ctx.ids, ctx.banks, plan, SKETCH_KIND[self.technique])
            self._features = (X, np.arange(len(ctx.ids)))
        elif self.technique == "early":
            plan = FusionPlan("early_concat", self.modalities, self.policy)
            self._features = early_fuse_batch(tables, ctx.ids, plan)
        else:
            plan = FusionPlan("sketch_concat", self.modalities, self.policy)
            self._features = sketch_fuse_batch(tables, ctx.ids, ctx.banks, plan, SKETCH_KIND[self.technique])
        logger.debug(f"{self.technique} {self.subset}: feature shape={self._features[0].shape}")
        return self._features

    # 학습 + 예측
    def fit_predict(self, train_rows: np.ndarray, val_rows: np.ndarray, eval_rows: np.ndarray) -> _Fitted:
        if self.technique == "late":
            return self._fit_predict_late(train_rows, val_rows, eval_rows)
        ctx = self.ctx
        X, kept = self.features()
        y = ctx.labels[kept]
        n = len(ctx.ids)
        tr, tr_orig = _positions(kept, n, train_rows)
        va, _ = _positions(kept, n, val_rows)
        ev, ev_orig = _positions(kept, n, eval_rows)
        if ctx.user_task:
            s = ctx.config.logreg
            model = fit_logreg(X[tr], y[tr], LogRegConfig(s.C, s.max_iters, s.tolerance, s.learning_rate))
        else:
            arch = ctx.config.architecture_for(self.technique)
            model = _fit_network(ctx, arch, X, y, tr, va, self.technique, self.subset, self.seed)
        return _Fitted(_scores(ctx, predict_proba(model, X[ev])), ev_orig, tr_orig, model.history)

    def _fit_predict_late(self, train_rows, val_rows, eval_rows) -> _Fitted:
        """멤버(모달리티별) 모델을 먼저 학습해 고정한 뒤 결합한다. concat_head는 그 위에 head를 학습."""
        ctx, config = self.ctx, self.ctx.config
        arch = config.architecture_for("late")
        outputs, presents, history = {}, {}, []
        fitted_rows = []
        for j, m in enumerate(self.modalities):
            vectors, present = ctx.manifest.embeddings[m.name].reindex(ctx.ids)
            X = np.where(present[:, None], vectors, 0.0)
            tr = train_rows[present[train_rows]]
            va = val_rows[present[val_rows]]
            if tr.size == 0:
                raise MMRepError(f"학습 split에 {m.name} 모달리티가 있는 아이템이 없습니다.")
            member = _fit_network(ctx, arch, X, ctx.labels, tr, va, "late", (m.name,), _derive(self.seed, j + 1))
            fitted_rows.append(tr)
            outputs[m.name] = predict_proba(member, X)
            presents[m.name] = present
            history += [{"model": m.name, **h} for h in member.history]

        plan = FusionPlan("late", self.modalities, self.policy, config.late_combiner)
        combined, kept = late_fuse_batch(outputs, presents, plan, ctx.ids)
        n = len(ctx.ids)
        ev, ev_orig = _positions(kept, n, eval_rows)
        if config.late_combiner != "concat_head":
            return _Fitted(_scores(ctx, combined[ev]), ev_orig, np.unique(np.concatenate(fitted_rows)), history)

        tr, tr_orig = _positions(kept, n, train_rows)
        va, _ = _positions(kept, n, val_rows)
        y = ctx.labels[kept]
        head_out = ctx.head[1]
        want = head_input_dim([head_out] * len(self.modalities))
        if combined.shape[1] != want:
            raise DimError("late head", combined.shape[1], want)
        head = _fit_network(ctx, "amazon_late_head", combined, y, tr, va, "late", self.subset, _derive(self.seed, 0))
        history += [{"model": "head", **h} for h in head.history]
        fitted_rows.append(tr_orig)
        return _Fitted(_scores(ctx, predict_proba(head, combined[ev])), ev_orig, np.unique(np.concatenate(fitted_rows)), history)


def _metrics(ctx: _Context, fitted: _Fitted) -> Tuple[Dict[str, float], Dict[str, float]]:
    labels = ctx.labels[fitted.eval_rows]
    pred = Predictions(fitted.scores, labels, ctx.task)
    metrics = evaluate(pred, ctx.config.threshold)
    per_class = {}
    if ctx.task == "multiclass":
        per_class = {str(k): float(v) for k, v in enumerate(per_class_accuracy(pred)) if not np.isnan(v)}
    return metrics, per_class


def _overlap(ids: Sequence[str], fit_rows: np.ndarray, held_rows: np.ndarray) -> int:
    """학습에 실제로 들어간 id와 평가(또는 test) id의 교집합 크기."""
    return len({ids[i] for i in fit_rows} & {ids[i] for i in held_rows})


def _run_cell(ctx: _Context, technique: str, subset: Tuple[str, ...], run_index: int):
    seed = run_seed(ctx.config.base_seed, run_index)
    stream = stream_seed(seed, technique, subset)
    split = ctx.split
    started = time.perf_counter()
    audit = {
        "technique": technique,
        "modalities": list(subset),
        "run_index": run_index,
        "n_train": 0,
        "n_test": 0,
        "overlap": 0,
    }
    history: List[dict] = []
    try:
        pipeline = _Pipeline(ctx, technique, subset, stream)
        fitted = pipeline.fit_predict(split.train, split.val, split.test)
        audit["n_train"] = int(len(fitted.fit_rows))
        audit["n_test"] = int(len(fitted.eval_rows))
        audit["overlap"] = _overlap(ctx.ids, fitted.fit_rows, np.concatenate([fitted.eval_rows, split.test]))
        metrics, per_class = _metrics(ctx, fitted)
        history = fitted.history
        if split.folds:
            fold_metrics = []
            for fold_train, fold_val in split.folds:
                fold_fit = pipeline.fit_predict(fold_train, np.zeros(0, dtype=np.int64), fold_val)
                held_out = np.concatenate([fold_fit.eval_rows, split.test])
                audit["overlap"] += _overlap(ctx.ids, fold_fit.fit_rows, held_out)
                fold_metrics.append(_metrics(ctx, fold_fit)[0])
            for name in list(metrics):
                metrics[f"cv_{name}"] = float(np.nanmean([m[name] for m in fold_metrics]))
        record = RunRecord(technique, subset, run_index, seed, metrics, per_class)
    except LeakageError:
        raise
    except (MMRepError, FloatingPointError) as e:
        logger.warning(f"run 실패: {technique} {subset} run={run_index}: {e}")
        record = RunRecord(technique, subset, run_index, seed, {}, status="failed", error=str(e))
    record.wall_time = time.perf_counter() - started
    return record, audit, history


# ── 실험 ────────────────────────────────────────────────────

@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    task: str
    records: List[RunRecord]
    report: EvalReport
    audit: List[dict]
    histories: Dict[str, List[dict]]


def _build_banks(config: ExperimentConfig, manifest: DatasetManifest) -> Dict[str, HyperplaneBank]:
    banks = {}
    if not any(t in SKETCH_KIND for t in config.techniques):
        return banks
    for m in manifest.modalities:
        s = config.sketch_for(m.name)
        banks[m.name] = build_bank(SketchSpec(s.depth, s.width, s.seed), m.dim)
    return banks


def run_experiment(
    config: ExperimentConfig,
    manifest: Optional[DatasetManifest] = None,
    threads: int = 1,
    progress: bool = False,
) -> ExperimentResult:
    """
    전체 ablation grid를 실행한다. 설정 오류는 학습 전에 ConfigError로,
    run 단위 실패는 status="failed" 기록으로 남는다.
    """
    manifest = manifest if manifest is not None else load_dataset(config)
    validate_manifest(manifest)
    check_config(config, manifest)

    ids = manifest.label_ids()
    try:
        split = make_split(len(ids), config.split.to_plan())
    except SplitError as e:
        raise ConfigError(f"split 설정 오류: {e}") from e
    ctx = _Context(config, manifest, split, _build_banks(config, manifest), ids, manifest.label_array(ids))

    subsets = subset_grid(manifest.modality_names, config.modality_subsets)
    cells = [
        (technique, subset, run_index)
        for technique in config.techniques
        for subset in subsets
        for run_index in range(config.n_runs)
    ]
    logger.info(
        f"실험 시작: {config.name} (task={manifest.task}, techniques={config.techniques}, "
        f"subsets={len(subsets)}, runs={config.n_runs}, cells={len(cells)})"
    )
    outputs = Parallel(n_jobs=max(1, threads), prefer="threads")(
        delayed(_run_cell)(ctx, t, s, r) for t, s, r in tqdm(cells, desc="Runs", disable=not progress)
    )

    records = [o[0] for o in outputs]
    audit = [o[1] for o in outputs]
    leaked = [a for a in audit if a["overlap"]]
    if leaked:
        raise LeakageError(f"train/test id가 겹칩니다: {leaked[0]}")
    histories = {
        f"{t}__{'+'.join(s)}__run{r}": o[2] for (t, s, r), o in zip(cells, outputs)
    }
    k_folds = config.split.k if split.folds else None
    report = build_report(records, manifest.task, k_folds)
    for cell in report.failed_cells():
        logger.warning(f"모든 run 실패: {cell['technique']} {cell['modalities']}")
    return ExperimentResult(config, manifest.task, records, report, audit, histories)


def write_outputs(result: ExperimentResult, out_dir: Union[str, Path]) -> Path:
    """records.json, report.json, report.md, audit.jsonl, timings.jsonl, histories/*.jsonl"""
    out_dir = Path(out_dir)
    (out_dir / HISTORY_DIR).mkdir(parents=True, exist_ok=True)
    (out_dir / RECORDS_FILE).write_text(records_to_json(result.records, result.task), encoding="utf-8")
    (out_dir / REPORT_JSON).write_text(
        json.dumps(result.report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    (out_dir / REPORT_MD).write_text(report_to_markdown(result.report), encoding="utf-8")
    with open(out_dir / AUDIT_FILE, "w", encoding="utf-8") as f:
        for entry in result.audit:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    with open(out_dir / TIMINGS_FILE, "w", encoding="utf-8") as f:
        for r in result.records:
            f.write(json.dumps({
                "technique": r.technique, "modalities": list(r.subset),
                "run_index": r.run_index, "wall_time": r.wall_time,
            }) + "\n")
    for key, history in result.histories.items():
        with open(out_dir / HISTORY_DIR / f"{key}.jsonl", "w", encoding="utf-8") as f:
            for entry in history:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
    logger.info(f"결과 저장: {out_dir}")
    return out_dir


# ── 기준 지표 ───────────────────────────────────────────────

def reference_metrics(config_path: Union[str, Path], threads: int = 1) -> dict:
    """설정 하나를 실행해 (기법, subset)별 주 지표 평균을 기록용 dict로 만든다."""
    config = load_config(config_path)
    result = run_experiment(config, threads=threads)
    report = result.report
    cells = {}
    for cell in report.cells:
        mean = report.mean(cell["technique"], cell["modalities"])
        key = f"{cell['technique']}|{'+'.join(cell['modalities'])}"
        cells[key] = None if math.isnan(mean) else round(mean, 6)
    return {
        "task": result.task,
        "primary_metric": report.primary_metric,
        "n_runs": config.n_runs,
        "base_seed": config.base_seed,
        "cells": cells,
    }


def freeze_reference(
    config_paths: Sequence[Union[str, Path]],
    output_path: Union[str, Path],
    threads: int = 1,
    missing_only: bool = False,
) -> dict:
    """
    기준 지표 JSON(설정 이름 → reference_metrics)을 갱신한다.
    missing_only=True면 파일에 이미 있는 설정은 다시 실행하지 않는다.
    """
    output_path = Path(output_path)
    output = json.loads(output_path.read_text(encoding="utf-8")) if output_path.exists() else {}
    todo = [Path(p) for p in config_paths if not (missing_only and Path(p).stem in output)]
    for path in todo:
        logger.info(f"기준 지표 생성: {path.name}")
        output[path.stem] = reference_metrics(path, threads)
    if todo:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        output_path.write_text(json.dumps(output, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return output
