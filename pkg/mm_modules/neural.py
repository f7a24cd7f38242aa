"""
numpy로 직접 구현한 분류 head

  - 레이어: Dense(relu | linear), Dropout(inverted), BatchNorm(momentum 0.9, eps 1e-5)
  - 출력: softmax(K) + categorical CE  /  sigmoid(K) + binary CE
  - 최적화: Adam (bias correction 포함)
  - L2 정규화 로지스틱 회귀 (full-batch Adam, 목적함수가 증가하면 step 절반)

forward는 순수 함수다. batchnorm의 running 통계는 forward가 돌려준
batch_stats를 train()이 반영한다.

MODL 체크포인트:
    "MODL" | u32 version | u32 header_len | header JSON (spec + history) |
    u32 blob 개수 | blob마다 u16 name_len, name, u8 ndim, ndim × u32 shape, f64 LE 값
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from mm_modules.embedding_store import MASK64
from mm_modules.errors import (
    DegenerateLabels,
    DimError,
    FormatError,
    NonFiniteError,
    SpecError,
    TaskMismatch,
    TrainingDiverged,
)

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
BN_MOMENTUM = 0.9
BN_EPS = 1e-5

MODEL_MAGIC = b"MODL"
MODEL_VERSION = 1


# ── 스펙 ────────────────────────────────────────────────────

@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "relu"

    def __post_init__(self):
        if self.units < 1:
            raise SpecError(f"Dense units는 1 이상이어야 합니다: {self.units}")
        if self.activation not in ("relu", "linear"):
            raise SpecError(f"지원하지 않는 activation: {self.activation}")


@dataclass(frozen=True)
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise SpecError(f"dropout rate는 [0, 1) 범위여야 합니다: {self.rate}")


@dataclass(frozen=True)
class BatchNorm:
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS


LayerSpec = Union[Dense, Dropout, BatchNorm]

_HEAD_LOSS = {"softmax": "categorical_ce", "sigmoid": "binary_ce"}


@dataclass(frozen=True)
class NetworkSpec:
    """
    input_dim → layers(은닉층) → 출력 dense(n_outputs) + head 활성화.
    layers가 비어 있고 sigmoid(1)이면 로지스틱 회귀다.
    """
    input_dim: int
    layers: Tuple[LayerSpec, ...]
    head: str
    n_outputs: int
    loss: str = ""
    init_seed: int = 0

    def __post_init__(self):
        if self.head not in _HEAD_LOSS:
            raise SpecError(f"알 수 없는 head: {self.head}")
        if not self.loss:
            object.__setattr__(self, "loss", _HEAD_LOSS[self.head])
        if self.loss != _HEAD_LOSS[self.head]:
            raise SpecError(f"{self.head} head는 {_HEAD_LOSS[self.head]} loss와 짝을 이뤄야 합니다: {self.loss}")
        if self.n_outputs < 1 or self.input_dim < 1:
            raise SpecError(f"input_dim / n_outputs는 1 이상이어야 합니다: {self.input_dim}, {self.n_outputs}")
        object.__setattr__(self, "layers", tuple(self.layers))

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            layers.append({"type": type(layer).__name__.lower(), **asdict(layer)})
        return {
            "input_dim": self.input_dim,
            "layers": layers,
            "head": self.head,
            "n_outputs": self.n_outputs,
            "loss": self.loss,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        kinds = {"dense": Dense, "dropout": Dropout, "batchnorm": BatchNorm}
        try:
            layers = tuple(kinds[l["type"]](**{k: v for k, v in l.items() if k != "type"}) for l in doc["layers"])
            return cls(doc["input_dim"], layers, doc["head"], doc["n_outputs"], doc["loss"], doc["init_seed"])
        except (KeyError, TypeError) as e:
            raise SpecError(f"NetworkSpec 형식 오류: {e}") from e


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise SpecError(f"learning_rate는 양수여야 합니다: {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise SpecError("beta1, beta2는 (0, 1) 범위여야 합니다.")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    shuffle_seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise SpecError(f"epochs, batch_size는 1 이상이어야 합니다: {self.epochs}, {self.batch_size}")


@dataclass(frozen=True)
class LogRegConfig:
    C: float = 0.1
    max_iters: int = 5000
    tolerance: float = 1e-6
    learning_rate: float = 0.05

    def __post_init__(self):
        if self.C <= 0:
            raise SpecError(f"C는 양수여야 합니다: {self.C}")
        if self.max_iters < 1 or self.tolerance <= 0 or self.learning_rate <= 0:
            raise SpecError("max_iters ≥ 1, tolerance > 0, learning_rate > 0 이어야 합니다.")


@dataclass(eq=False)
class TrainedModel:
    spec: NetworkSpec
    params: Dict[str, np.ndarray]
    state: Dict[str, np.ndarray]
    history: List[dict] = field(default_factory=list)


@dataclass(eq=False)
class ForwardPass:
    outputs: np.ndarray
    logits: np.ndarray
    masks: Dict[int, np.ndarray]
    batch_stats: Dict[int, Tuple[np.ndarray, np.ndarray]]
    cache: list = field(default_factory=list, repr=False)
    last_hidden: Optional[np.ndarray] = field(default=None, repr=False)


# ── 아키텍처 ────────────────────────────────────────────────

PAPER_ARCHITECTURES = ("amazon_late_head", "amazon_early", "amazon_sketch", "ml25m")


def build_paper_architecture(
    name: str,
    input_dim: int,
    n_classes: int,
    width_cap: Optional[int] = None,
    head: Optional[str] = None,
    init_seed: int = 0,
) -> NetworkSpec:
    """
    고정된 head 아키텍처를 만든다.

    width_cap: 은닉층 폭 상한 (데스크 규모 실행, gradient 검증용)
    head: softmax/sigmoid 강제 (multilabel task에서 amazon_* 사용 등)
    """
    def units(n: int) -> int:
        return min(n, width_cap) if width_cap else n

    if name == "amazon_late_head":
        layers = [Dense(units(20))]
        default_head = "softmax"
    elif name == "amazon_early":
        layers = []
        for _ in range(3):
            layers += [Dense(units(64)), Dropout(0.1)]
        layers.append(Dense(units(64)))
        default_head = "softmax"
    elif name == "amazon_sketch":
        layers = [
            Dense(units(1024)), Dropout(0.2), BatchNorm(),
            Dense(units(512)), Dropout(0.2), BatchNorm(),
            Dense(units(128)), Dropout(0.2),
        ]
        default_head = "softmax"
    elif name == "ml25m":
        layers = [Dense(units(1024)), Dense(units(512)), Dense(units(128))]
        default_head = "sigmoid"
    else:
        raise SpecError(f"알 수 없는 아키텍처: {name}")
    return NetworkSpec(
        input_dim=input_dim,
        layers=tuple(layers),
        head=head or default_head,
        n_outputs=n_classes,
        init_seed=init_seed,
    )


def preset_train_config(
    technique: str,
    dataset: str = "amazon",
    modalities: Sequence[str] = (),
    shuffle_seed: int = 0,
) -> TrainConfig:
    """
    기법 / 데이터셋별 학습 프리셋.

    amazon: batch 32, 10 epoch (binarized sketch 20), lr late 1e-4 / early 1e-3 / sketch 1e-5 / binarized 1e-4
    ml25m : batch 64, lr 1e-5, 20 epoch (멀티모달 early fusion과 단일 graph 모델은 30)
    """
    if dataset == "amazon":
        lr = {"late": 1e-4, "early": 1e-3, "sketch": 1e-5, "sketch_binarized": 1e-4}
        if technique not in lr:
            raise SpecError(f"알 수 없는 기법: {technique}")
        epochs = 20 if technique == "sketch_binarized" else 10
        return TrainConfig(epochs, 32, shuffle_seed, AdamConfig(lr[technique]))
    if dataset == "ml25m":
        long_run = (technique == "early" and len(modalities) > 1) or (
            len(modalities) == 1 and "graph" in modalities[0]
        )
        return TrainConfig(30 if long_run else 20, 64, shuffle_seed, AdamConfig(1e-5))
    raise SpecError(f"알 수 없는 데이터셋 프리셋: {dataset}")


def init(spec: NetworkSpec) -> TrainedModel:
    """Glorot uniform 가중치, 0 bias, BN gamma=1 / beta=0, running mean 0 / var 1."""
    rng = np.random.default_rng(int(spec.init_seed) & MASK64)
    params: Dict[str, np.ndarray] = {}
    state: Dict[str, np.ndarray] = {}
    fan_in = spec.input_dim
    n_dense = n_bn = 0

    def glorot(n_in: int, n_out: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_in, n_out))

    for layer in spec.layers:
        if isinstance(layer, Dense):
            params[f"dense{n_dense}.W"] = glorot(fan_in, layer.units)
            params[f"dense{n_dense}.b"] = np.zeros(layer.units)
            fan_in = layer.units
            n_dense += 1
        elif isinstance(layer, BatchNorm):
            params[f"bn{n_bn}.gamma"] = np.ones(fan_in)
            params[f"bn{n_bn}.beta"] = np.zeros(fan_in)
            state[f"bn{n_bn}.mean"] = np.zeros(fan_in)
            state[f"bn{n_bn}.var"] = np.ones(fan_in)
            n_bn += 1
    params["out.W"] = glorot(fan_in, spec.n_outputs)
    params["out.b"] = np.zeros(spec.n_outputs)
    return TrainedModel(spec, params, state)


# ── forward / backward ─────────────────────────────────────

def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_batch(spec: NetworkSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise DimError("batch", int(X.shape[-1]) if X.ndim else 0, spec.input_dim)
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("입력 배치에 NaN/inf가 있습니다.")
    return X


def _forward(
    spec: NetworkSpec,
    params: Dict[str, np.ndarray],
    state: Dict[str, np.ndarray],
    X: np.ndarray,
    train: bool,
    rng: Optional[np.random.Generator] = None,
    masks: Optional[Dict[int, np.ndarray]] = None,
) -> ForwardPass:
    h = X
    cache = []
    used_masks: Dict[int, np.ndarray] = {}
    batch_stats: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    n_dense = n_bn = 0
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            W, b = params[f"dense{n_dense}.W"], params[f"dense{n_dense}.b"]
            z = h @ W + b
            cache.append(("dense", n_dense, h, z, layer.activation))
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z
            n_dense += 1
        elif isinstance(layer, Dropout):
            mask = None
            if train and layer.rate > 0:
                if masks is not None and li in masks:
                    mask = masks[li]
                elif rng is None:
                    raise SpecError("train 모드 dropout에는 mask_seed가 필요합니다.")
                else:
                    mask = (rng.random(h.shape) >= layer.rate) / (1.0 - layer.rate)
                used_masks[li] = mask
                h = h * mask
            cache.append(("dropout", li, mask))
        else:
            gamma, beta = params[f"bn{n_bn}.gamma"], params[f"bn{n_bn}.beta"]
            if train:
                mu = h.mean(axis=0)
                var = h.var(axis=0)
                batch_stats[n_bn] = (mu, var)
            else:
                mu, var = state[f"bn{n_bn}.mean"], state[f"bn{n_bn}.var"]
            inv_std = 1.0 / np.sqrt(var + layer.eps)
            xhat = (h - mu) * inv_std
            cache.append(("bn", n_bn, xhat, inv_std, train))
            h = gamma * xhat + beta
            n_bn += 1
    logits = h @ params["out.W"] + params["out.b"]
    outputs = _softmax(logits) if spec.head == "softmax" else _sigmoid(logits)
    return ForwardPass(outputs, logits, used_masks, batch_stats, cache, h)


def forward(
    model: TrainedModel,
    batch: np.ndarray,
    mode: str = "infer",
    mask_seed: Optional[int] = None,
    masks: Optional[Dict[int, np.ndarray]] = None,
) -> ForwardPass:
    """
    mode="train": dropout 마스크(mask_seed 또는 고정 masks), batchnorm은 배치 통계
    mode="infer": dropout 없음, batchnorm은 running 통계
    """
    if mode not in ("train", "infer"):
        raise SpecError(f"알 수 없는 mode: {mode}")
    X = _check_batch(model.spec, batch)
    rng = np.random.default_rng(int(mask_seed) & MASK64) if mask_seed is not None else None
    return _forward(model.spec, model.params, model.state, X, mode == "train", rng, masks)


def _targets(spec: NetworkSpec, labels: np.ndarray) -> np.ndarray:
    """라벨 → (n, K) 타깃 행렬."""
    y = np.asarray(labels)
    k = spec.n_outputs
    if spec.head == "softmax":
        if y.ndim == 1:
            if y.size and (y.min() < 0 or y.max() >= k):
                raise TaskMismatch(f"클래스 라벨이 [0, {k}) 범위를 벗어났습니다.")
            return np.eye(k)[y.astype(np.int64)]
        if y.ndim == 2 and y.shape[1] == k:
            return y.astype(np.float64)
        raise DimError("labels", int(y.shape[-1]), k)
    if y.ndim == 1 and k == 1:
        y = y.reshape(-1, 1)
    if y.ndim != 2 or y.shape[1] != k:
        raise DimError("labels", int(y.shape[-1]) if y.ndim else 0, k)
    if np.any((y != 0) & (y != 1)):
        raise TaskMismatch("sigmoid head 라벨은 0/1이어야 합니다.")
    return y.astype(np.float64)


def _loss(spec: NetworkSpec, outputs: np.ndarray, Y: np.ndarray) -> float:
    p = np.clip(outputs, PROB_CLAMP, 1.0)
    if spec.head == "softmax":
        return float(-np.mean(np.sum(Y * np.log(p), axis=1)))
    q = np.clip(1.0 - outputs, PROB_CLAMP, 1.0)
    return float(-np.mean(Y * np.log(p) + (1.0 - Y) * np.log(q)))


def _backward(spec: NetworkSpec, params: Dict[str, np.ndarray], fp: ForwardPass, Y: np.ndarray) -> Dict[str, np.ndarray]:
    n = Y.shape[0]
    if spec.head == "softmax":
        dz = (fp.outputs - Y) / n
    else:
        dz = (fp.outputs - Y) / (n * spec.n_outputs)
    grads: Dict[str, np.ndarray] = {
        "out.W": fp.last_hidden.T @ dz,
        "out.b": dz.sum(axis=0),
    }
    dh = dz @ params["out.W"].T
    for entry in reversed(fp.cache):
        kind = entry[0]
        if kind == "dense":
            _, idx, h_in, z, activation = entry
            dz = dh * (z > 0) if activation == "relu" else dh
            grads[f"dense{idx}.W"] = h_in.T @ dz
            grads[f"dense{idx}.b"] = dz.sum(axis=0)
            dh = dz @ params[f"dense{idx}.W"].T
        elif kind == "dropout":
            mask = entry[2]
            if mask is not None:
                dh = dh * mask
        else:
            _, idx, xhat, inv_std, batch_mode = entry
            gamma = params[f"bn{idx}.gamma"]
            grads[f"bn{idx}.gamma"] = (dh * xhat).sum(axis=0)
            grads[f"bn{idx}.beta"] = dh.sum(axis=0)
            dxhat = dh * gamma
            if batch_mode:
                m = dxhat.shape[0]
                dh = (inv_std / m) * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dh = dxhat * inv_std
    return {name: grads[name] for name in params}


def loss_and_grad(
    model: TrainedModel,
    batch: np.ndarray,
    labels: np.ndarray,
    mask_seed: Optional[int] = None,
    masks: Optional[Dict[int, np.ndarray]] = None,
    mode: str = "train",
) -> Tuple[float, Dict[str, np.ndarray]]:
    """배치 평균 loss와 파라미터별 gradient (params와 같은 키/순서)."""
    Y = _targets(model.spec, labels)
    fp = forward(model, batch, mode=mode, mask_seed=mask_seed, masks=masks)
    if Y.shape[0] != fp.outputs.shape[0]:
        raise DimError("labels", Y.shape[0], fp.outputs.shape[0])
    return _loss(model.spec, fp.outputs, Y), _backward(model.spec, model.params, fp, Y)


def predict_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return forward(model, X, mode="infer").outputs


# ── 최적화 ──────────────────────────────────────────────────

class Adam:
    """파라미터 dict를 제자리에서 갱신하는 Adam."""

    def __init__(self, params: Dict[str, np.ndarray], config: AdamConfig):
        self.config = config
        self.lr = config.learning_rate
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, g in grads.items():
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + c.epsilon)

    def snapshot(self):
        return self.t, dict(self.m), dict(self.v)

    def restore(self, snap) -> None:
        self.t, self.m, self.v = snap[0], dict(snap[1]), dict(snap[2])


def _apply_batch_stats(model: TrainedModel, fp: ForwardPass) -> None:
    bn_layers = [l for l in model.spec.layers if isinstance(l, BatchNorm)]
    for idx, (mu, var) in fp.batch_stats.items():
        momentum = bn_layers[idx].momentum
        model.state[f"bn{idx}.mean"] = momentum * model.state[f"bn{idx}.mean"] + (1.0 - momentum) * mu
        model.state[f"bn{idx}.var"] = momentum * model.state[f"bn{idx}.var"] + (1.0 - momentum) * var


def train(
    spec: NetworkSpec,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    val: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> TrainedModel:
    """
    seed 고정 셔플 mini-batch + Adam. 같은 seed면 파라미터 바이트가 같다.
    history: epoch마다 {"epoch", "loss", "val_loss"}
    """
    model = init(spec)
    X = _check_batch(spec, X)
    if X.shape[0] == 0:
        raise SpecError("학습 데이터가 비어 있습니다.")
    Y = _targets(spec, y)
    if Y.shape[0] != X.shape[0]:
        raise DimError("labels", Y.shape[0], X.shape[0])
    Y_val = _targets(spec, val[1]) if val is not None else None
    X_val = _check_batch(spec, val[0]) if val is not None else None

    seed = int(cfg.shuffle_seed) & MASK64
    shuffle_rng = np.random.default_rng([seed, 0])
    mask_rng = np.random.default_rng([seed, 1])
    optimizer = Adam(model.params, cfg.adam)
    n = X.shape[0]

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            fp = _forward(spec, model.params, model.state, X[idx], True, mask_rng)
            loss = _loss(spec, fp.outputs, Y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            grads = _backward(spec, model.params, fp, Y[idx])
            optimizer.step(model.params, grads)
            _apply_batch_stats(model, fp)
            total += loss * len(idx)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(p)) for p in model.params.values()):
            raise TrainingDiverged(epoch, epoch_loss)
        entry = {"epoch": epoch, "loss": epoch_loss, "val_loss": None}
        if X_val is not None and len(X_val):
            val_out = _forward(spec, model.params, model.state, X_val, False).outputs
            entry["val_loss"] = _loss(spec, val_out, Y_val)
        model.history.append(entry)
        logger.debug(f"epoch {epoch}: loss={epoch_loss:.6f}, val_loss={entry['val_loss']}")
    return model


def logreg_objective(model: TrainedModel, X: np.ndarray, y: np.ndarray, C: float) -> Tuple[float, Dict[str, np.ndarray]]:
    """(1/n)·Σ logloss + (1/(2Cn))·‖W‖². bias는 정규화하지 않는다."""
    n = X.shape[0]
    loss, grads = loss_and_grad(model, X, y, mode="infer")
    W = model.params["out.W"]
    loss += float(np.sum(W * W)) / (2.0 * C * n)
    grads["out.W"] = grads["out.W"] + W / (C * n)
    return loss, grads


def fit_logreg(X: np.ndarray, y: np.ndarray, cfg: LogRegConfig) -> TrainedModel:
    """
    L2 정규화 로지스틱 회귀. 0에서 시작하는 full-batch Adam,
    목적함수가 증가하는 step은 버리고 learning rate를 절반으로 줄인다.
    gradient ∞-norm < tolerance 이거나 max_iters에서 멈춘다.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimError("logreg", int(y.shape[0]), int(X.shape[0]) if X.ndim else 0)
    if X.shape[0] < 2 or np.unique(y).size < 2:
        raise DegenerateLabels("로지스틱 회귀에는 두 클래스가 모두 필요합니다.")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("입력에 NaN/inf가 있습니다.")

    spec = NetworkSpec(input_dim=X.shape[1], layers=(), head="sigmoid", n_outputs=1)
    model = TrainedModel(
        spec,
        {"out.W": np.zeros((X.shape[1], 1)), "out.b": np.zeros(1)},
        {},
    )
    optimizer = Adam(model.params, AdamConfig(cfg.learning_rate))
    obj, grads = logreg_objective(model, X, y, cfg.C)
    grad_norm = max(float(np.max(np.abs(g))) for g in grads.values())
    iters = 0
    while iters < cfg.max_iters and grad_norm >= cfg.tolerance and optimizer.lr > 1e-14:
        iters += 1
        snap = optimizer.snapshot()
        previous = dict(model.params)
        optimizer.step(model.params, grads)
        new_obj, new_grads = logreg_objective(model, X, y, cfg.C)
        if new_obj > obj:
            model.params.update(previous)
            optimizer.restore(snap)
            optimizer.lr *= 0.5
            continue
        obj, grads = new_obj, new_grads
        grad_norm = max(float(np.max(np.abs(g))) for g in grads.values())

    converged = grad_norm < cfg.tolerance
    model.history.append({"iterations": iters, "objective": obj, "grad_norm": grad_norm, "converged": converged})
    if not converged:
        logger.warning(f"로지스틱 회귀 미수렴: iters={iters}, grad_norm={grad_norm:.3e}")
    return model


# ── 체크포인트 / history ───────────────────────────────────

def save_model(model: TrainedModel, sink: BinaryIO) -> int:
    header = json.dumps({"spec": model.spec.to_dict(), "history": model.history}, sort_keys=True).encode("utf-8")
    blobs = [(f"param:{k}", v) for k, v in model.params.items()] + [(f"state:{k}", v) for k, v in model.state.items()]
    chunks = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(header)), header, struct.pack("<I", len(blobs))]
    for name, arr in blobs:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    sink.write(payload)
    return len(payload)


def load_model(source: Union[BinaryIO, bytes, str, Path]) -> TrainedModel:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    try:
        if data[:4] != MODEL_MAGIC:
            raise FormatError(f"MODL magic 불일치: {data[:4]!r}")
        version, header_len = struct.unpack_from("<II", data, 4)
        if version != MODEL_VERSION:
            raise FormatError(f"지원하지 않는 MODL 버전: {version}")
        offset = 12
        doc = json.loads(data[offset:offset + header_len].decode("utf-8"))
        offset += header_len
        (n_blobs,) = struct.unpack_from("<I", data, offset)
        offset += 4
        params: Dict[str, np.ndarray] = {}
        state: Dict[str, np.ndarray] = {}
        for _ in range(n_blobs):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if offset + 8 * count > len(data):
                raise FormatError("MODL 파라미터 blob이 잘렸습니다.")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * count
            kind, key = name.split(":", 1)
            (params if kind == "param" else state)[key] = arr
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"MODL 파싱 실패: {e}") from e
    if offset != len(data):
        raise FormatError(f"MODL 뒤에 {len(data) - offset}바이트가 남았습니다.")
    return TrainedModel(NetworkSpec.from_dict(doc["spec"]), params, state, list(doc["history"]))

