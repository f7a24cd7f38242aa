"""
고정 설정(configs/*.json)의 실험 결론 확인.

느리므로 acceptance 마커를 붙였다:  pytest -m "not acceptance" 로 건너뛸 수 있다.
재실행한 평균 지표가 tests/fixtures/reference_metrics.json의 기록과 같은지도 확인한다.
기록이 없는 설정은 처음 실행할 때 만들어 고정한다 (scripts/generate_reference.py와 같은 값).
"""
import dataclasses
import math

import numpy as np
import pytest

from bench.config import CONFIG_DIR, FIXTURE_DIR
from bench.report import ablation_verdict
from bench.runner import freeze_reference, load_dataset, run_experiment
from bench.schema import load_config

pytestmark = pytest.mark.acceptance

REFERENCE = FIXTURE_DIR / "reference_metrics.json"
FIXTURES = {"two_modality_boost": "two_modality", "noise_modality": "noise_modality", "user_aggregation": "user_aggregation"}


def _run(name):
    config = load_config(CONFIG_DIR / f"{name}.json")
    return config, run_experiment(config, threads=2)


@pytest.fixture(scope="module")
def two_modality():
    return _run("two_modality_boost")


@pytest.fixture(scope="module")
def noise_modality():
    return _run("noise_modality")


@pytest.fixture(scope="module")
def user_aggregation():
    return _run("user_aggregation")


class TestTwoModalityBoost:
    """각 모달리티가 클래스 신호의 절반씩만 본다 → 결합해야 풀린다."""

    def test_early_fusion_beats_best_single(self, two_modality):
        _, result = two_modality
        report = result.report
        best = max(report.mean("early", ["title"]), report.mean("early", ["image"]))
        assert report.mean("early", ["title", "image"]) >= best + 0.05

    def test_late_fusion_beats_best_single(self, two_modality):
        _, result = two_modality
        report = result.report
        best = max(report.mean("late", ["title"]), report.mean("late", ["image"]))
        assert report.mean("late", ["title", "image"]) > best

    def test_verdict(self, two_modality):
        config, result = two_modality
        verdict = ablation_verdict(result.report, min_gain=config.min_gain)
        assert verdict["early"]["cells"][0]["boost"] is True
        assert verdict["late"]["cells"][0]["boost"] is True


class TestNoiseModality:
    def test_noise_does_not_contribute(self, noise_modality):
        config, result = noise_modality
        mods = ablation_verdict(result.report, min_gain=config.min_gain)["sketch"]["modalities"]
        assert mods["noise"]["contributing"] is False
        assert mods["text"]["contributing"] is True

    def test_noise_alone_is_near_chance(self, noise_modality):
        _, result = noise_modality
        assert result.report.mean("sketch", ["noise"]) < 0.4
        assert result.report.mean("sketch", ["text"]) > 0.5


class TestUserAggregation:
    def test_sketch_users_are_separable(self, user_aggregation):
        _, result = user_aggregation
        assert result.report.mean("sketch", ["plot"]) > 0.3
        assert result.report.mean("sketch_binarized", ["plot"]) > 0.3

    def test_shuffled_labels_give_no_signal(self):
        config = load_config(CONFIG_DIR / "user_aggregation.json").model_copy(update={"techniques": ["sketch"]})
        manifest = load_dataset(config)
        users = list(manifest.labels)
        values = [manifest.labels[u] for u in users]
        order = np.random.default_rng(0).permutation(len(users))
        shuffled = dataclasses.replace(manifest, labels={u: values[i] for u, i in zip(users, order)})
        result = run_experiment(config, manifest=shuffled)
        assert abs(result.report.mean("sketch", ["plot"])) <= 0.1


@pytest.fixture(scope="module")
def reference():
    """기준 지표. 파일에 없는 설정은 한 번 실행(threads=1)해 tests/fixtures에 고정한다."""
    paths = [CONFIG_DIR / f"{name}.json" for name in sorted(FIXTURES)]
    return freeze_reference(paths, REFERENCE, threads=1, missing_only=True)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_matches_reference(name, reference, request):
    _, result = request.getfixturevalue(FIXTURES[name])
    expected = reference[name]
    assert expected["primary_metric"] == result.report.primary_metric
    assert set(expected["cells"]) == {f"{c['technique']}|{'+'.join(c['modalities'])}" for c in result.report.cells}
    for key, value in expected["cells"].items():
        technique, subset = key.split("|")
        mean = result.report.mean(technique, subset.split("+"))
        if value is None:
            assert math.isnan(mean)
        else:
            assert mean == pytest.approx(value, abs=1e-3)
