"""실행 기록 집계, 비교표, ablation 판정."""
import json
import math

import pytest

from bench.report import (
    RunRecord,
    ablation_verdict,
    build_report,
    emit_report,
    records_from_json,
    records_to_json,
    report_to_markdown,
)
from mm_modules.errors import MMRepError


def _rec(technique, subset, run, acc, status="ok"):
    metrics = {"accuracy": acc} if status == "ok" else {}
    return RunRecord(technique, tuple(subset), run, 100 + run, metrics, status=status,
                     error=None if status == "ok" else "diverged")


def _records():
    return [
        _rec("early", ["title"], 0, 0.50), _rec("early", ["title"], 1, 0.70),
        _rec("early", ["image"], 0, 0.40), _rec("early", ["image"], 1, 0.40),
        _rec("early", ["title", "image"], 0, 0.90), _rec("early", ["title", "image"], 1, 0.80),
        _rec("late", ["title"], 0, 0.55), _rec("late", ["title"], 1, 0.0, status="failed"),
        _rec("late", ["image"], 0, 0.45), _rec("late", ["image"], 1, 0.45),
        _rec("late", ["title", "image"], 0, 0.55), _rec("late", ["title", "image"], 1, 0.55),
    ]


class TestBuildReport:
    def test_mean_and_sample_std(self):
        report = build_report(_records(), "multiclass")
        cell = report.cell("early", ["title"])
        assert cell["metrics"]["accuracy"]["mean"] == pytest.approx(0.6)
        assert cell["metrics"]["accuracy"]["std"] == pytest.approx(math.sqrt(0.02))
        assert report.cell("early", ["image"])["metrics"]["accuracy"]["std"] == 0.0

    def test_failed_runs_are_excluded(self):
        report = build_report(_records(), "multiclass")
        cell = report.cell("late", ["title"])
        assert (cell["n_ok"], cell["n_total"]) == (1, 2)
        assert cell["metrics"]["accuracy"] == {"mean": 0.55, "std": 0.0, "n_runs": 1}
        assert report.failed_cells() == []

    def test_all_failed_cell(self):
        records = _records() + [_rec("sketch", ["title"], 0, 0.0, status="failed")]
        report = build_report(records, "multiclass")
        failed = report.failed_cells()
        assert [(c["technique"], c["modalities"]) for c in failed] == [("sketch", ["title"])]
        assert math.isnan(report.mean("sketch", ["title"]))

    def test_only_failures(self):
        report = build_report([_rec("early", ["title"], 0, 0.0, status="failed")], "multiclass")
        assert len(report.failed_cells()) == 1

    def test_empty(self):
        with pytest.raises(MMRepError):
            build_report([], "multiclass")


class TestRendering:
    def test_markdown_bolds_best_per_technique(self):
        md = report_to_markdown(build_report(_records(), "multiclass"))
        lines = md.splitlines()
        assert lines[0] == "### accuracy"
        assert lines[2] == "| modalities | early | late |"
        row = next(l for l in lines if l.startswith("| title + image |"))
        assert "**0.850 ± 0.071**" in row
        assert "**0.550 ± 0.000**" in row

    def test_json_is_deterministic(self):
        a = emit_report(_records(), "json", "multiclass")
        b = emit_report(list(_records()), "json", "multiclass")
        assert a == b
        doc = json.loads(a)
        assert doc["primary_metric"] == "accuracy"

    def test_unknown_format(self):
        with pytest.raises(MMRepError):
            emit_report(_records(), "html", "multiclass")

    def test_records_json_round_trip(self):
        records = _records()
        records[0].metrics["accuracy"] = float("nan")
        text = records_to_json(records, "multiclass")
        assert '"accuracy": null' in text
        task, loaded = records_from_json(text)
        assert task == "multiclass"
        assert math.isnan(loaded[0].metrics["accuracy"])
        assert records_to_json(loaded, task) == text

    def test_bad_records_json(self):
        with pytest.raises(MMRepError):
            records_from_json("{not json")
        with pytest.raises(MMRepError):
            records_from_json('{"records": []}')


class TestAblationVerdict:
    def test_boost_and_margin(self):
        verdict = ablation_verdict(build_report(_records(), "multiclass"))
        early = verdict["early"]["cells"][0]
        assert early["modalities"] == ["title", "image"]
        assert early["boost"] is True
        assert early["best_unimodal_modality"] == "title"
        assert early["margin"] == pytest.approx(0.25)

    def test_equal_means_are_not_a_boost(self):
        late = ablation_verdict(build_report(_records(), "multiclass"))["late"]["cells"][0]
        assert late["mean"] == pytest.approx(late["best_unimodal"])
        assert late["boost"] is False

    def test_modality_contribution(self):
        verdict = ablation_verdict(build_report(_records(), "multiclass"), min_gain=0.01)
        mods = verdict["early"]["modalities"]
        assert mods["image"]["contribution"] == pytest.approx(0.25)
        assert mods["image"]["contributing"] is True
        late = verdict["late"]["modalities"]
        assert late["title"]["contribution"] == pytest.approx(0.10)
        assert late["image"]["contributing"] is False
