"""
실험 벤치: 설정 스키마, ablation grid 실행기, 리포트, CLI
"""
