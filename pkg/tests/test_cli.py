"""CLI 하위 명령과 종료 코드."""
import json

import pytest

from bench.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_TRAINING, main
from conftest import tiny_config, tiny_synth


def _fast(**overrides):
    return tiny_config(techniques=["early", "sketch"], n_runs=1, **overrides)


class TestRun:
    def test_run_writes_outputs(self, write_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", "--config", str(write_config(_fast())), "--out", str(out), "--quiet"])
        assert code == EXIT_OK
        for name in ("records.json", "report.json", "report.md", "audit.jsonl", "timings.jsonl"):
            assert (out / name).is_file()
        assert "| modalities | early | sketch |" in capsys.readouterr().out

    def test_runs_and_seed_override(self, write_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main([
            "run", "--config", str(write_config(_fast())), "--out", str(out),
            "--runs", "2", "--seed", "7", "--format", "json", "--quiet",
        ])
        assert code == EXIT_OK
        records = json.loads((out / "records.json").read_text())["records"]
        assert sorted({r["seed"] for r in records}) == [7, 8]
        assert json.loads(capsys.readouterr().out)["primary_metric"] == "accuracy"

    def test_failing_cells_exit_code(self, write_config, tmp_path):
        doc = tiny_config(techniques=["early"], n_runs=1, missing_policy={"early": "error"})
        out = tmp_path / "out"
        assert main(["run", "--config", str(write_config(doc)), "--out", str(out), "--quiet"]) == EXIT_TRAINING
        records = json.loads((out / "records.json").read_text())["records"]
        assert {r["status"] for r in records} == {"ok", "failed"}
        assert main(["report", "--records", str(out / "records.json")]) == EXIT_TRAINING


class TestConfigErrors:
    def test_bad_sketch_width(self, write_config, tmp_path):
        doc = _fast(default_sketch={"depth": 4, "width": 12, "seed": 0})
        assert main(["run", "--config", str(write_config(doc)), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_unknown_field(self, write_config, tmp_path):
        doc = _fast(learning_rate=0.1)
        assert main(["run", "--config", str(write_config(doc)), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_zero_runs(self, write_config, tmp_path):
        args = ["run", "--config", str(write_config(_fast())), "--out", str(tmp_path), "--runs", "0"]
        assert main(args) == EXIT_CONFIG

    def test_unknown_subset_modality(self, write_config, tmp_path):
        doc = _fast(modality_subsets=[["a", "c"]])
        assert main(["run", "--config", str(write_config(doc)), "--out", str(tmp_path)]) == EXIT_CONFIG


class TestDataCommands:
    @pytest.fixture
    def synth_dir(self, write_config, tmp_path):
        data = tmp_path / "data"
        assert main(["synth", "--config", str(write_config(tiny_synth(), "synth.json")), "--out", str(data)]) == EXIT_OK
        return data

    def test_synth_then_validate(self, synth_dir, capsys):
        capsys.readouterr()
        assert main(["validate", "--config", str(synth_dir / "manifest.json")]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["n_items"] == 120
        assert report["dims"] == {"a": 6, "b": 6}
        assert report["missing_rate"]["b"] == pytest.approx(0.1)

    def test_truncated_embeddings(self, synth_dir):
        emb = synth_dir / "b.emb"
        emb.write_bytes(emb.read_bytes()[:-3])
        assert main(["validate", "--config", str(synth_dir / "manifest.json")]) == EXIT_DATA

    def test_bad_synth_spec(self, write_config, tmp_path):
        path = write_config(tiny_synth(n_classes=1), "synth.json")
        assert main(["synth", "--config", str(path), "--out", str(tmp_path / "x")]) == EXIT_DATA

    def test_run_from_manifest(self, synth_dir, write_config, tmp_path):
        doc = _fast(dataset={"manifest": "data/manifest.json"})
        out = tmp_path / "out"
        assert main(["run", "--config", str(write_config(doc)), "--out", str(out), "--quiet"]) == EXIT_OK
        records = json.loads((out / "records.json").read_text())
        assert records["task"] == "multiclass"
        assert len(records["records"]) == 2 * 3

    def test_report_round_trip(self, write_config, tmp_path, capsys):
        out = tmp_path / "out"
        main(["run", "--config", str(write_config(_fast())), "--out", str(out), "--quiet"])
        capsys.readouterr()
        assert main(["report", "--records", str(out / "records.json"), "--format", "json"]) == EXIT_OK
        rendered = capsys.readouterr().out
        assert json.loads(rendered) == json.loads((out / "report.json").read_text())
