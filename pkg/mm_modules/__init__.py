"""
멀티모달 표현 모듈 패키지: late / early fusion, LSH sketch

embedding_store: 임베딩 파일(EMB1/CSV) 입출력, manifest 검증, split
synth:           합성 멀티모달 데이터셋
sketcher:        classical / binarized sketch, 집계, 정규화
fusion:          early / late / sketch 결합과 결측 정책
neural:          numpy head 네트워크, Adam, 로지스틱 회귀
metrics:         accuracy, micro-AUC, micro-mAP, MCC
"""
from mm_modules.embedding_store import (
    DatasetManifest,
    EmbeddingRecord,
    EmbeddingTable,
    ModalityId,
    SplitIndices,
    SplitPlan,
    ValidationReport,
    load_embeddings,
    load_manifest,
    make_split,
    save_embeddings,
    save_manifest,
    validate_manifest,
)
from mm_modules.synth import SynthModality, SynthSpec, SynthUsers, synth_generate
from mm_modules.sketcher import (
    BinarySketch,
    ClassicalSketch,
    CountSketch,
    HyperplaneBank,
    SketchSpec,
    aggregate,
    build_bank,
    estimate_angle,
    flatten,
    normalize_widthwise,
    sketch_batch,
    sketch_binary,
    sketch_classical,
)
from mm_modules.fusion import (
    FusedVector,
    FusionPlan,
    early_fuse,
    late_combine,
    sketch_fuse,
)
from mm_modules.neural import (
    AdamConfig,
    LogRegConfig,
    NetworkSpec,
    TrainConfig,
    TrainedModel,
    build_paper_architecture,
    fit_logreg,
    forward,
    loss_and_grad,
    predict_proba,
    train,
)
from mm_modules.metrics import (
    Predictions,
    accuracy,
    mcc,
    micro_auc,
    micro_map,
    per_class_accuracy,
)

__all__ = [
    'DatasetManifest',
    'EmbeddingRecord',
    'EmbeddingTable',
    'ModalityId',
    'SplitIndices',
    'SplitPlan',
    'ValidationReport',
    'load_embeddings',
    'load_manifest',
    'make_split',
    'save_embeddings',
    'save_manifest',
    'validate_manifest',
    'SynthModality',
    'SynthSpec',
    'SynthUsers',
    'synth_generate',
    'BinarySketch',
    'ClassicalSketch',
    'CountSketch',
    'HyperplaneBank',
    'SketchSpec',
    'aggregate',
    'build_bank',
    'estimate_angle',
    'flatten',
    'normalize_widthwise',
    'sketch_batch',
    'sketch_binary',
    'sketch_classical',
    'FusedVector',
    'FusionPlan',
    'early_fuse',
    'late_combine',
    'sketch_fuse',
    'AdamConfig',
    'LogRegConfig',
    'NetworkSpec',
    'TrainConfig',
    'TrainedModel',
    'build_paper_architecture',
    'fit_logreg',
    'forward',
    'loss_and_grad',
    'predict_proba',
    'train',
    'Predictions',
    'accuracy',
    'mcc',
    'micro_auc',
    'micro_map',
    'per_class_accuracy',
]
