"""Student head over frozen features, the KD/CE loss stack and its training loop."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import LabelSpace, OneHotVector, log_softened_softmax, softened_softmax
from .errors import EmptyDataset, InvalidAlpha, InvalidInput, InvalidTemperature, SchemaError, ShapeError
from .training import EpochRecord, TrainingHistory, fit, init_affine, load_checkpoint, save_checkpoint

TABLE3_HIDDEN = ([1024], [1024, 512], [1024, 512, 256], [1024, 512, 256, 128], [1024, 512, 256, 128, 64])
DEFAULT_FEATURE_DIM = 3584


@dataclass(frozen=True)
class DistillHeadConfig:
    input_dim: int = DEFAULT_FEATURE_DIM
    hidden_dims: tuple[int, ...] = (1024,)
    num_classes: int = 8

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.num_classes < 2 or any(h < 1 for h in self.hidden_dims):
            raise InvalidInput(f"invalid head config {self}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dims": list(self.hidden_dims), "num_classes": self.num_classes}


def param_count(config: DistillHeadConfig) -> int:
    dims = config.dims
    return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))


@dataclass
class DistillHead:
    config: DistillHeadConfig
    params: list[np.ndarray]  # [W0, b0, W1, b1, ...], W of shape (out, in)

    def __post_init__(self):
        dims = self.config.dims
        expected = []
        for i, o in zip(dims[:-1], dims[1:]):
            expected += [(o, i), (o,)]
        if [p.shape for p in self.params] != expected:
            raise ShapeError(f"head params {[p.shape for p in self.params]} do not match config {expected}")

    @classmethod
    def init(cls, config: DistillHeadConfig, seed: int = 0) -> "DistillHead":
        rng = np.random.default_rng([seed, 0])
        params = []
        dims = config.dims
        for i, o in zip(dims[:-1], dims[1:]):
            params += list(init_affine(rng, i, o))
        return cls(config, params)

    @classmethod
    def zeros(cls, config: DistillHeadConfig) -> "DistillHead":
        dims = config.dims
        params = []
        for i, o in zip(dims[:-1], dims[1:]):
            params += [np.zeros((o, i)), np.zeros(o)]
        return cls(config, params)

    @property
    def layers(self):
        return list(zip(self.params[0::2], self.params[1::2]))

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def _forward(x: np.ndarray, params: list[np.ndarray]):
    """Batched forward pass returning logits and the per-layer inputs/pre-activations."""
    acts, pre = [x], []
    n_layers = len(params) // 2
    h = x
    for k in range(n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        z = h @ w.T + b
        if k < n_layers - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return h, acts, pre


def head_forward(features, head: DistillHead) -> np.ndarray:
    """Logits for one feature vector (d,) or a batch (n, d). ReLU between hidden layers only."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != head.config.input_dim or x.ndim not in (1, 2):
        raise ShapeError(f"features of shape {x.shape} do not match head input_dim {head.config.input_dim}")
    logits, _, _ = _forward(np.atleast_2d(x), head.params)
    return logits[0] if x.ndim == 1 else logits


def student_distribution(features, head: DistillHead) -> np.ndarray:
    return softened_softmax(head_forward(features, head), 1.0)


# -- losses ------------------------------------------------------------------


def _as_index(target, num_classes: int) -> np.ndarray:
    if isinstance(target, OneHotVector):
        return np.array([target.hot_index])
    idx = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if np.any(idx < 0) or np.any(idx >= num_classes):
        raise ShapeError(f"target indices outside [0, {num_classes})")
    return idx


def kd_loss(student_logits, teacher_logits, tau: float) -> float:
    """tau^2 * KL(teacher^tau || student^tau); averaged over rows for batches."""
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape:
        raise ShapeError(f"student {s.shape} and teacher {t.shape} logits differ in shape")
    log_pt = log_softened_softmax(t, tau)
    log_ps = log_softened_softmax(s, tau)
    kl = np.sum(np.exp(log_pt) * (log_pt - log_ps), axis=-1)
    return float(tau * tau * np.mean(np.maximum(kl, 0.0)))


def ce_loss(student_logits, target) -> float:
    """-log p_s(true) at temperature 1; averaged over rows for batches."""
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    idx = _as_index(target, s.shape[-1])
    if idx.shape[0] != s.shape[0]:
        raise ShapeError(f"{s.shape[0]} logit rows vs {idx.shape[0]} targets")
    log_ps = log_softened_softmax(s, 1.0)
    return float(-np.mean(log_ps[np.arange(len(idx)), idx]))


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidAlpha(f"alpha must lie in [0, 1], got {alpha!r}")


def total_loss(l_kd: float, l_ce: float, alpha: float) -> float:
    _check_alpha(alpha)
    if not (np.isfinite(l_kd) and np.isfinite(l_ce)):
        raise InvalidInput("losses must be finite")
    if alpha == 0.0:
        return float(l_ce)
    if alpha == 1.0:
        return float(l_kd)
    return alpha * l_kd + (1 - alpha) * l_ce


@dataclass(frozen=True)
class DistillHyperparams:
    alpha: float = 0.5
    tau: float = 2.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not self.tau > 0:
            raise InvalidTemperature(f"tau must be positive, got {self.tau!r}")
        if not self.learning_rate > 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidInput(f"invalid optimisation settings in {self}")


def _losses_and_logit_grad(logits, teacher_logits, y, alpha, tau):
    n = logits.shape[0]
    log_ps_tau = log_softened_softmax(logits, tau)
    log_pt_tau = log_softened_softmax(teacher_logits, tau)
    pt_tau = np.exp(log_pt_tau)
    kd = tau * tau * np.mean(np.maximum(np.sum(pt_tau * (log_pt_tau - log_ps_tau), axis=1), 0.0))
    log_ps = log_softened_softmax(logits, 1.0)
    ce = -np.mean(log_ps[np.arange(n), y])
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), y] = 1.0
    # d(tau^2 KL)/dz = tau (p_s^tau - p_t^tau); d CE/dz = p_s - y
    dlogits = (alpha * tau * (np.exp(log_ps_tau) - pt_tau) + (1 - alpha) * (np.exp(log_ps) - onehot)) / n
    return kd, ce, dlogits


def _backward(params, acts, pre, dlogits):
    grads = [None] * len(params)
    n_layers = len(params) // 2
    delta = dlogits
    for k in reversed(range(n_layers)):
        w = params[2 * k]
        grads[2 * k] = delta.T @ acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ w) * (pre[k - 1] > 0)
    return grads


def _loss_and_grads(params, x, teacher_logits, y, alpha, tau):
    logits, acts, pre = _forward(x, params)
    kd, ce, dlogits = _losses_and_logit_grad(logits, teacher_logits, y, alpha, tau)
    return alpha * kd + (1 - alpha) * ce, kd, ce, _backward(params, acts, pre, dlogits)


def distill_objective(features, head: DistillHead, teacher_logits, target, hyperparams: DistillHyperparams):
    """(L_total, L_KD, L_CE) for a sample or batch."""
    x, t, y = _prepare(features, head, teacher_logits, target)
    total, kd, ce, _ = _loss_and_grads(head.params, x, t, y, hyperparams.alpha, hyperparams.tau)
    return total, kd, ce


def loss_gradients(features, head: DistillHead, teacher_logits, target,
                   hyperparams: DistillHyperparams) -> list[np.ndarray]:
    """Analytic gradients of L_total w.r.t. every head parameter, in ``head.params`` order."""
    x, t, y = _prepare(features, head, teacher_logits, target)
    return _loss_and_grads(head.params, x, t, y, hyperparams.alpha, hyperparams.tau)[3]


def _prepare(features, head, teacher_logits, target):
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    cfg = head.config
    if x.shape[1] != cfg.input_dim:
        raise ShapeError(f"features have dim {x.shape[1]}, head expects {cfg.input_dim}")
    if t.shape != (x.shape[0], cfg.num_classes):
        raise ShapeError(f"teacher logits shape {t.shape} != ({x.shape[0]}, {cfg.num_classes})")
    y = _as_index(target, cfg.num_classes)
    if y.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} feature rows vs {y.shape[0]} targets")
    return x, t, y


# -- training ----------------------------------------------------------------


class DistillData(NamedTuple):
    """Row-aligned stage-2 inputs: features (n, d), teacher logits (n, C), label indices (n,)."""

    features: np.ndarray
    teacher_logits: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.features.shape[0]


def assemble_distill_data(features, teacher, ids, labels, space: LabelSpace) -> DistillData:
    """Align a feature table, a teacher table and labels on ``ids``."""
    ids = list(ids)
    x = features.select(ids)
    t = teacher.select(ids)
    if t.shape[1] != space.size:
        raise SchemaError(f"teacher logits have {t.shape[1]} classes, space {space.name!r} has {space.size}")
    y = np.array([space.index(label) for label in labels], dtype=np.int64)
    return DistillData(x, t, y, tuple(ids))


def _accuracy(params, x, y) -> float:
    if len(y) == 0:
        return float("nan")
    logits, _, _ = _forward(x, params)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def train_distill_head(train: DistillData, val: DistillData | None, config: DistillHeadConfig,
                       hyperparams: DistillHyperparams) -> tuple[DistillHead, TrainingHistory]:
    """Fit the head; returns the best-validation-accuracy weights and the per-epoch history.

    Inputs are never modified. Without a validation set the training accuracy
    drives checkpoint selection and early stopping.
    """
    if train is None or len(train) == 0:
        raise EmptyDataset("stage-2 training set is empty")
    for part in (train, val):
        if part is not None and len(part):
            if part.features.shape[1] != config.input_dim:
                raise ShapeError(f"feature dim {part.features.shape[1]} != head input_dim {config.input_dim}")
            if part.teacher_logits.shape[1] != config.num_classes:
                raise ShapeError(f"teacher C={part.teacher_logits.shape[1]} != head num_classes {config.num_classes}")
    hp = hyperparams
    head = DistillHead.init(config, hp.seed)
    x, t, y = train.features, train.teacher_logits, train.labels
    has_val = val is not None and len(val) > 0

    def grad_fn(params, idx):
        return _loss_and_grads(params, x[idx], t[idx], y[idx], hp.alpha, hp.tau)[3]

    def evaluate(params, epoch):
        total, kd, ce, _ = _loss_and_grads(params, x, t, y, hp.alpha, hp.tau)
        train_acc = _accuracy(params, x, y)
        val_acc = _accuracy(params, val.features, val.labels) if has_val else train_acc
        return EpochRecord(epoch, float(total), float(kd), float(ce), train_acc, val_acc)

    best, history = fit(
        head.params, grad_fn, evaluate, len(train),
        learning_rate=hp.learning_rate, batch_size=hp.batch_size,
        max_epochs=hp.max_epochs, patience=hp.patience, seed=hp.seed,
    )
    return DistillHead(config, best), history


# -- checkpoints -------------------------------------------------------------


def save_head(stem, head: DistillHead, *, space: LabelSpace | None = None, seed: int = 0,
              epoch: int = 0, metrics: dict | None = None) -> str:
    manifest = {
        "kind": "distill_head",
        "config": head.config.to_dict(),
        "space": space.name if space else None,
        "seed": seed,
        "epoch": epoch,
        "metrics": metrics or {},
        "param_count": param_count(head.config),
    }
    return save_checkpoint(stem, manifest, head.params)


def load_head(stem) -> tuple[DistillHead, dict]:
    manifest, arrays = load_checkpoint(stem)
    cfg = manifest["config"]
    config = DistillHeadConfig(cfg["input_dim"], tuple(cfg["hidden_dims"]), cfg["num_classes"])
    n = sum(a.size for a in arrays)
    if n != param_count(config) or manifest.get("param_count") != n:
        raise SchemaError(f"checkpoint {stem} holds {n} parameters, config needs {param_count(config)}")
    return DistillHead(config, arrays), manifest
