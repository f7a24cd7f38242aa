"""
멀티모달 표현 벤치 CLI

    python -m bench synth    --config synth.json --out data/
    python -m bench validate --config data/manifest.json
    python -m bench run      --config configs/two_modality_boost.json --out out/ [--runs N] [--seed S]
                             [--format json|md] [--threads N] [--quiet]
    python -m bench report   --records out/records.json [--format json|md]

종료 코드: 0 성공, 2 설정 오류, 3 데이터 오류, 4 어떤 cell의 모든 run이 실패
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from bench.config import LOG_LEVEL, OUT_DIR, THREADS
from bench.report import ablation_verdict, build_report, emit_report, records_from_json, report_to_markdown
from bench.runner import run_experiment, write_outputs
from bench.schema import load_config
from mm_modules.embedding_store import load_manifest, validate_manifest
from mm_modules.errors import (
    ConfigError,
    DimError,
    DuplicateError,
    FormatError,
    ManifestError,
    MMRepError,
    SpecError,
)
from mm_modules.synth import SynthSpec, synth_generate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

_DATA_ERRORS = (FormatError, DimError, ManifestError, DuplicateError, SpecError)


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"파일이 없습니다: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON 파싱 실패: {path}: {e}") from e


def cmd_synth(args) -> int:
    spec = SynthSpec.from_dict(_read_json(args.config))
    out = Path(args.out or OUT_DIR / "synth")
    manifest = synth_generate(spec, out)
    print(json.dumps(validate_manifest(manifest).to_dict(), indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_validate(args) -> int:
    report = validate_manifest(load_manifest(args.config))
    print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_config(args.config)
    update = {}
    if args.runs is not None:
        update["n_runs"] = args.runs
    if args.seed is not None:
        update["base_seed"] = args.seed
    if update:
        if update.get("n_runs", 1) < 1:
            raise ConfigError("--runs는 1 이상이어야 합니다.")
        config = config.model_copy(update=update)

    result = run_experiment(config, threads=args.threads, progress=not args.quiet)
    out = Path(args.out or OUT_DIR / config.name)
    write_outputs(result, out)

    if args.format == "json":
        print(json.dumps(result.report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
    else:
        print(report_to_markdown(result.report))
        has_multimodal = any(len(s) > 1 for s in result.report.subsets)
        if has_multimodal and not args.quiet:
            verdict = ablation_verdict(result.report, min_gain=config.min_gain)
            print(json.dumps(verdict, indent=2, ensure_ascii=False))

    failed = result.report.failed_cells()
    if failed:
        logger.error(f"모든 run이 실패한 cell {len(failed)}개")
        return EXIT_TRAINING
    return EXIT_OK


def cmd_report(args) -> int:
    task, records = records_from_json(Path(args.records).read_text(encoding="utf-8"))
    fmt = "json" if args.format == "json" else "md"
    text = emit_report(records, fmt, task)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / ("report.json" if fmt == "json" else "report.md")).write_text(text, encoding="utf-8")
    print(text)
    return EXIT_TRAINING if build_report(records, task).failed_cells() else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="멀티모달 표현(late/early fusion, LSH sketch) 비교 벤치")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="합성 데이터셋 생성")
    p.add_argument("--config", required=True, help="SynthSpec JSON 경로")
    p.add_argument("--out", default=None, help="출력 디렉토리")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="manifest 검증")
    p.add_argument("--config", required=True, help="manifest.json 경로")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="ablation 실험 실행")
    p.add_argument("--config", required=True, help="실험 설정 JSON 경로")
    p.add_argument("--out", default=None, help="결과 디렉토리 (기본: out/<name>)")
    p.add_argument("--runs", type=int, default=None, help="run 수 (설정값 덮어쓰기)")
    p.add_argument("--seed", type=int, default=None, help="base seed (설정값 덮어쓰기)")
    p.add_argument("--format", choices=["json", "md"], default="md")
    p.add_argument("--threads", type=int, default=THREADS)
    p.add_argument("--quiet", action="store_true", help="진행 표시 / verdict 출력 끄기")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="records.json 다시 렌더링")
    p.add_argument("--records", required=True, help="records.json 경로")
    p.add_argument("--format", choices=["json", "md"], default="md")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as e:
        logger.error(f"설정 오류: {e}")
        return EXIT_CONFIG
    except _DATA_ERRORS as e:
        logger.error(f"데이터 오류: {e}")
        return EXIT_DATA
    except MMRepError as e:
        logger.error(f"실행 오류: {e}")
        return EXIT_DATA
    except FileNotFoundError as e:
        logger.error(f"파일 없음: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
