import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# 프로젝트 루트
ROOT = Path(__file__).resolve().parent.parent

# ===== 실험 설정 / 결과 =====
CONFIG_DIR = ROOT / 'configs'                               # 고정 실험 설정 JSON
OUT_DIR    = Path(os.getenv('MMREP_OUT_DIR', ROOT / 'out'))   # run 결과 기본 위치
FIXTURE_DIR = ROOT / 'tests' / 'fixtures'                   # 기준 지표 (generate_reference.py)

# ===== 실행 설정 =====
THREADS   = int(os.getenv('MMREP_THREADS', '1'))    # grid cell 병렬 수
LOG_LEVEL = os.getenv('MMREP_LOG_LEVEL', 'INFO')

# ===== 기본값 =====
DEFAULT_KFOLD = 5            # holdout_plus_kfold에서 k 미지정 시
DEFAULT_LOGREG_C = 0.1       # 유저 분류 로지스틱 회귀
DEFAULT_MIN_GAIN = 0.01      # ablation: 모달리티 기여 판정 최소 향상

# 결과 파일 이름
RECORDS_FILE  = 'records.json'
REPORT_JSON   = 'report.json'
REPORT_MD     = 'report.md'
AUDIT_FILE    = 'audit.jsonl'
TIMINGS_FILE  = 'timings.jsonl'
HISTORY_DIR   = 'histories'
