"""
고정 실험 설정 → 기준 지표 JSON 생성 스크립트

configs/*.json의 실험을 그대로 실행하고, (설정, 기법, 모달리티 subset)별
주 지표 평균을 tests/fixtures/reference_metrics.json에 기록한다.
tests/test_acceptance.py는 이 파일의 값과 재실행 결과를 비교한다.

사용법:
    python scripts/generate_reference.py
    python scripts/generate_reference.py --config configs/noise_modality.json --threads 4
    python scripts/generate_reference.py --missing-only
"""
import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from bench.config import CONFIG_DIR, FIXTURE_DIR
from bench.runner import freeze_reference

REFERENCE_FILE = "reference_metrics.json"


def main():
    parser = argparse.ArgumentParser(description="고정 실험 설정 → 기준 지표 JSON")
    parser.add_argument("--config", "-c", action="append", default=None,
                        help="실험 설정 JSON (여러 번 지정 가능, 기본: configs/*.json 전부)")
    parser.add_argument("--output", "-o", default=str(FIXTURE_DIR / REFERENCE_FILE),
                        help="출력 JSON 경로")
    parser.add_argument("--threads", type=int, default=1, help="grid cell 병렬 수")
    parser.add_argument("--missing-only", action="store_true",
                        help="출력 파일에 없는 설정만 실행")
    args = parser.parse_args()

    paths = [Path(p) for p in args.config] if args.config else sorted(CONFIG_DIR.glob("*.json"))
    total = len(paths)
    print(f"설정 {total}개 실행 중: {', '.join(p.stem for p in paths)}")
    output = freeze_reference(paths, args.output, args.threads, args.missing_only)

    for path in paths:
        ref = output[path.stem]
        print(f"\n{path.stem} ({ref['primary_metric']})")
        for key, value in ref["cells"].items():
            shown = "-" if value is None else f"{value:.4f}"
            print(f"    {key:40s} {shown}")
    print(f"\n=== 기준 지표 생성 완료 ===")
    print(f"  파일: {args.output}")


if __name__ == "__main__":
    main()
