"""
실행 기록 집계와 비교표 출력

RunRecord 리스트 → (기법, 모달리티 subset)별 평균 ± 표본 표준편차 → JSON / markdown 표
ablation_verdict: 멀티모달 cell이 구성 단일 모달리티 중 최고 cell을 이기는지,
                  모달리티를 더했을 때 평균 지표가 얼마나 바뀌는지
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from bench.config import DEFAULT_MIN_GAIN
from mm_modules.errors import MMRepError
from mm_modules.metrics import PRIMARY_METRIC


# ── RunRecord ──────────────────────────────────────────────

def _to_json_number(v: float) -> Optional[float]:
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def _from_json_number(v) -> float:
    return float("nan") if v is None else float(v)


@dataclass
class RunRecord:
    """한 (기법, subset, run)의 결과. wall_time은 byte 비교 대상 파일에 넣지 않는다."""
    technique: str
    subset: Tuple[str, ...]
    run_index: int
    seed: int
    metrics: Dict[str, float]
    per_class: Dict[str, float] = field(default_factory=dict)
    status: str = "ok"
    error: Optional[str] = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "technique": self.technique,
            "modalities": list(self.subset),
            "run_index": self.run_index,
            "seed": self.seed,
            "metrics": {k: _to_json_number(v) for k, v in sorted(self.metrics.items())},
            "per_class": {k: _to_json_number(v) for k, v in sorted(self.per_class.items(), key=lambda kv: int(kv[0]))},
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        return cls(
            technique=doc["technique"],
            subset=tuple(doc["modalities"]),
            run_index=int(doc["run_index"]),
            seed=int(doc["seed"]),
            metrics={k: _from_json_number(v) for k, v in doc["metrics"].items()},
            per_class={k: _from_json_number(v) for k, v in doc.get("per_class", {}).items()},
            status=doc.get("status", "ok"),
            error=doc.get("error"),
        )


def records_to_json(records: Sequence[RunRecord], task: str) -> str:
    doc = {"task": task, "records": [r.to_dict() for r in records]}
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def records_from_json(text: str) -> Tuple[str, List[RunRecord]]:
    try:
        doc = json.loads(text)
        return doc["task"], [RunRecord.from_dict(r) for r in doc["records"]]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise MMRepError(f"records JSON 형식 오류: {e}") from e


def subset_label(subset: Sequence[str]) -> str:
    return " + ".join(subset)


# ── EvalReport ─────────────────────────────────────────────

@dataclass
class EvalReport:
    task: str
    primary_metric: str
    cells: List[dict]
    techniques: List[str]
    subsets: List[Tuple[str, ...]]
    k_folds: Optional[int] = None

    def cell(self, technique: str, subset: Sequence[str]) -> Optional[dict]:
        for c in self.cells:
            if c["technique"] == technique and tuple(c["modalities"]) == tuple(subset):
                return c
        return None

    def mean(self, technique: str, subset: Sequence[str], metric: Optional[str] = None) -> float:
        c = self.cell(technique, subset)
        if c is None:
            return float("nan")
        stats = c["metrics"].get(metric or self.primary_metric)
        return float("nan") if stats is None or stats["mean"] is None else stats["mean"]

    def failed_cells(self) -> List[dict]:
        """모든 run이 실패한 cell."""
        return [c for c in self.cells if c["n_ok"] == 0]

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "primary_metric": self.primary_metric,
            "k_folds": self.k_folds,
            "cells": self.cells,
        }


def build_report(records: Sequence[RunRecord], task: str, k_folds: Optional[int] = None) -> EvalReport:
    """(기법, subset)별 평균 / 표본 표준편차(ddof=1, run 1개면 0). 실패 run은 제외."""
    if not records:
        raise MMRepError("집계할 기록이 없습니다.")
    rows = []
    for r in records:
        base = {"technique": r.technique, "subset": subset_label(r.subset), "ok": r.status == "ok"}
        if not r.metrics:
            rows.append({**base, "metric": None, "value": float("nan")})
        for name, value in r.metrics.items():
            rows.append({**base, "metric": name, "value": value if r.status == "ok" else float("nan")})
    df = pd.DataFrame(rows)

    techniques = list(dict.fromkeys(r.technique for r in records))
    subsets = list(dict.fromkeys(r.subset for r in records))
    runs = pd.DataFrame([
        {"technique": r.technique, "subset": subset_label(r.subset), "ok": r.status == "ok"} for r in records
    ])
    run_counts = runs.groupby(["technique", "subset"], sort=False)["ok"].agg(["sum", "count"])

    valid = df.dropna(subset=["metric"])
    stats = None if valid.empty else (
        valid
        .groupby(["technique", "subset", "metric"], sort=False)["value"]
        .agg(mean="mean", std=lambda s: float(s.dropna().std(ddof=1)) if s.notna().sum() > 1 else 0.0, n_runs="count")
        .sort_index()
    )

    cells = []
    for technique in techniques:
        for subset in subsets:
            key = (technique, subset_label(subset))
            if key not in run_counts.index:
                continue
            metrics = {}
            if stats is not None and key in stats.index.droplevel("metric"):
                for metric, row in stats.loc[key].iterrows():
                    metrics[metric] = {
                        "mean": _to_json_number(float(row["mean"])),
                        "std": _to_json_number(float(row["std"])) if row["n_runs"] else None,
                        "n_runs": int(row["n_runs"]),
                    }
            cells.append({
                "technique": technique,
                "modalities": list(subset),
                "metrics": dict(sorted(metrics.items())),
                "n_ok": int(run_counts.loc[key, "sum"]),
                "n_total": int(run_counts.loc[key, "count"]),
            })
    return EvalReport(task, PRIMARY_METRIC[task], cells, techniques, subsets, k_folds)


def report_to_markdown(report: EvalReport, metrics: Optional[Sequence[str]] = None) -> str:
    """행 = 모달리티 subset, 열 = 기법, 값 = mean ± std, 열마다 최고 cell은 굵게."""
    if metrics is None:
        seen = []
        for c in report.cells:
            for m in c["metrics"]:
                if m not in seen:
                    seen.append(m)
        metrics = [report.primary_metric] + sorted(m for m in seen if m != report.primary_metric)
    lines: List[str] = []
    for metric in metrics:
        best = {}
        for t in report.techniques:
            means = [report.mean(t, s, metric) for s in report.subsets]
            finite = [m for m in means if not math.isnan(m)]
            best[t] = max(finite) if finite else None
        lines.append(f"### {metric}")
        lines.append("")
        lines.append("| modalities | " + " | ".join(report.techniques) + " |")
        lines.append("|---|" + "---|" * len(report.techniques))
        for s in report.subsets:
            row = []
            for t in report.techniques:
                c = report.cell(t, s)
                stats = c["metrics"].get(metric) if c else None
                if stats is None or stats["mean"] is None:
                    row.append("-")
                    continue
                text = f"{stats['mean']:.3f} ± {(stats['std'] or 0.0):.3f}"
                row.append(f"**{text}**" if stats["mean"] == best[t] else text)
            lines.append(f"| {subset_label(s)} | " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def emit_report(records: Sequence[RunRecord], fmt: str, task: str, k_folds: Optional[int] = None) -> str:
    """fmt: json | md(markdown_table). 같은 기록이면 같은 바이트를 낸다."""
    report = build_report(records, task, k_folds)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if fmt in ("md", "markdown", "markdown_table"):
        return report_to_markdown(report)
    raise MMRepError(f"알 수 없는 report 형식: {fmt}")


# ── ablation ───────────────────────────────────────────────

def ablation_verdict(report: EvalReport, metric: Optional[str] = None, min_gain: float = DEFAULT_MIN_GAIN) -> Dict[str, dict]:
    """
    기법마다
      cells      : 멀티모달 subset별 boost 여부 (최고 단일 모달리티 cell보다 엄격히 큰가)와 margin
      modalities : 모달리티별 기여도 = 그 모달리티가 없는 subset T에 더했을 때 평균 변화의 평균.
                   변화가 min_gain보다 커야 contributing
    """
    metric = metric or report.primary_metric
    verdict: Dict[str, dict] = {}
    for t in report.techniques:
        means = {
            tuple(c["modalities"]): report.mean(t, c["modalities"], metric)
            for c in report.cells if c["technique"] == t
        }
        means = {s: m for s, m in means.items() if not math.isnan(m)}
        cells = []
        for subset, fused in means.items():
            if len(subset) < 2:
                continue
            singles = {(name,): means[(name,)] for name in subset if (name,) in means}
            if not singles:
                continue
            best_subset, best = max(singles.items(), key=lambda kv: kv[1])
            cells.append({
                "modalities": list(subset),
                "mean": fused,
                "best_unimodal": best,
                "best_unimodal_modality": best_subset[0],
                "boost": fused > best,
                "margin": fused - best,
            })

        modalities = {}
        names = sorted({n for s in means for n in s})
        for name in names:
            deltas = []
            for subset, base in means.items():
                if name in subset:
                    continue
                grown = tuple(n for n in _ordered_union(subset, name, means))
                if grown in means:
                    deltas.append(means[grown] - base)
            if deltas:
                gain = sum(deltas) / len(deltas)
                modalities[name] = {"contribution": gain, "contributing": gain > min_gain, "n_pairs": len(deltas)}
            else:
                modalities[name] = {"contribution": None, "contributing": None, "n_pairs": 0}
        verdict[t] = {"metric": metric, "cells": cells, "modalities": modalities}
    return verdict


def _ordered_union(subset: Tuple[str, ...], name: str, known: Dict[Tuple[str, ...], float]) -> Tuple[str, ...]:
    """subset ∪ {name}을 report에 있는 subset 순서로 맞춘다."""
    target = set(subset) | {name}
    for s in known:
        if set(s) == target and len(s) == len(target):
            return s
    return tuple(subset) + (name,)
