"""Fusion gates over the VLM one-hot (v1) and the student distribution (v2).

Each variant is a forward/backward pair over an ordered parameter list, so
training, checkpointing and gradient checks treat all five uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .core import LabelSpace, argmax_index, log_softened_softmax, softened_softmax
from .errors import EmptyDataset, InvalidInput, SchemaError, ShapeError
from .training import EpochRecord, TrainingHistory, fit, init_affine, load_checkpoint, save_checkpoint


class GateVariant(str, Enum):
    CONCAT_LINEAR = "concat_linear"
    MOE = "moe"
    BILINEAR = "bilinear"
    DYNAMIC_WEIGHTING = "dynamic_weighting"
    CROSS_GATING = "cross_gating"


VARIANTS = tuple(GateVariant)


def gate_param_count(variant, num_classes: int, moe_experts: int = 2) -> int:
    C, E = num_classes, moe_experts
    variant = GateVariant(variant)
    if variant is GateVariant.CONCAT_LINEAR:
        return 2 * C * C + C
    if variant is GateVariant.DYNAMIC_WEIGHTING:
        return 2 * C * 2 + 2
    if variant is GateVariant.CROSS_GATING:
        return 2 * (C * C + C)
    if variant is GateVariant.BILINEAR:
        return C * C * C + (C * C + C)
    return E * (2 * C * C + C) + (2 * C * E + E) + (C * C + C)


def _param_shapes(variant: GateVariant, C: int, E: int) -> list[tuple[str, tuple[int, ...]]]:
    if variant is GateVariant.CONCAT_LINEAR:
        return [("W", (C, 2 * C)), ("b", (C,))]
    if variant is GateVariant.MOE:
        return [("expert_W", (E, C, 2 * C)), ("expert_b", (E, C)), ("router_W", (E, 2 * C)),
                ("router_b", (E,)), ("out_W", (C, C)), ("out_b", (C,))]
    if variant is GateVariant.BILINEAR:
        return [("bilinear_W", (C, C, C)), ("out_W", (C, C)), ("out_b", (C,))]
    if variant is GateVariant.DYNAMIC_WEIGHTING:
        return [("W", (2, 2 * C)), ("b", (2,))]
    return [("W1", (C, C)), ("b1", (C,)), ("W2", (C, C)), ("b2", (C,))]


@dataclass
class GateParams:
    variant: GateVariant
    num_classes: int
    params: list[np.ndarray]
    moe_experts: int = 2

    def __post_init__(self):
        self.variant = GateVariant(self.variant)
        expected = [s for _, s in _param_shapes(self.variant, self.num_classes, self.moe_experts)]
        if [p.shape for p in self.params] != expected:
            raise ShapeError(f"{self.variant.value} params {[p.shape for p in self.params]} != {expected}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in _param_shapes(self.variant, self.num_classes, self.moe_experts)]

    def named(self) -> dict[str, np.ndarray]:
        return dict(zip(self.names, self.params))

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    @classmethod
    def zeros(cls, variant, num_classes: int, moe_experts: int = 2) -> "GateParams":
        variant = GateVariant(variant)
        shapes = _param_shapes(variant, num_classes, moe_experts)
        return cls(variant, num_classes, [np.zeros(s) for _, s in shapes], moe_experts)

    @classmethod
    def init(cls, variant, num_classes: int, seed: int = 0, moe_experts: int = 2) -> "GateParams":
        """Uniform(+-1/sqrt(fan_in)) weights and biases, seeded."""
        variant = GateVariant(variant)
        C, E = num_classes, moe_experts
        rng = np.random.default_rng([seed, 0])
        if variant is GateVariant.CONCAT_LINEAR:
            params = list(init_affine(rng, 2 * C, C))
        elif variant is GateVariant.MOE:
            experts = [init_affine(rng, 2 * C, C) for _ in range(E)]
            params = [np.stack([w for w, _ in experts]), np.stack([b for _, b in experts]),
                      *init_affine(rng, 2 * C, E), *init_affine(rng, C, C)]
        elif variant is GateVariant.BILINEAR:
            bound = 1.0 / C
            params = [rng.uniform(-bound, bound, size=(C, C, C)), *init_affine(rng, C, C)]
        elif variant is GateVariant.DYNAMIC_WEIGHTING:
            params = list(init_affine(rng, 2 * C, 2))
        else:
            params = [*init_affine(rng, C, C), *init_affine(rng, C, C)]
        return cls(variant, C, params, E)


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(variant: GateVariant, params, v1, v2):
    """Batched forward; returns logits (n, C) and a cache for the backward pass."""
    h = np.concatenate([v1, v2], axis=1)
    if variant is GateVariant.CONCAT_LINEAR:
        w, b = params
        return h @ w.T + b, (h,)
    if variant is GateVariant.MOE:
        ew, eb, rw, rb, ow, ob = params
        experts = np.einsum("nj,ecj->nec", h, ew) + eb
        mix = _softmax_rows(h @ rw.T + rb)
        mixed = np.einsum("ne,nec->nc", mix, experts)
        return mixed @ ow.T + ob, (h, experts, mix, mixed)
    if variant is GateVariant.BILINEAR:
        bw, ow, ob = params
        z = np.einsum("ni,kij,nj->nk", v1, bw, v2)
        return z @ ow.T + ob, (z,)
    if variant is GateVariant.DYNAMIC_WEIGHTING:
        w, b = params
        mix = _softmax_rows(h @ w.T + b)
        return mix[:, :1] * v1 + mix[:, 1:] * v2, (h, mix)
    w1, b1, w2, b2 = params
    g1 = _sigmoid(v2 @ w1.T + b1)
    g2 = _sigmoid(v1 @ w2.T + b2)
    return g1 * v1 + g2 * v2, (g1, g2)


def _backward(variant: GateVariant, params, v1, v2, cache, dy):
    if variant is GateVariant.CONCAT_LINEAR:
        (h,) = cache
        return [dy.T @ h, dy.sum(axis=0)]
    if variant is GateVariant.MOE:
        ew, eb, rw, rb, ow, ob = params
        h, experts, mix, mixed = cache
        dmixed = dy @ ow
        dexperts = mix[:, :, None] * dmixed[:, None, :]
        dmix = np.einsum("nec,nc->ne", experts, dmixed)
        dr = mix * (dmix - np.sum(mix * dmix, axis=1, keepdims=True))
        return [
            np.einsum("nec,nj->ecj", dexperts, h),
            dexperts.sum(axis=0),
            dr.T @ h,
            dr.sum(axis=0),
            dy.T @ mixed,
            dy.sum(axis=0),
        ]
    if variant is GateVariant.BILINEAR:
        (z,) = cache
        bw, ow, ob = params
        dz = dy @ ow
        return [np.einsum("nk,ni,nj->kij", dz, v1, v2), dy.T @ z, dy.sum(axis=0)]
    if variant is GateVariant.DYNAMIC_WEIGHTING:
        h, mix = cache
        dmix = np.stack([np.sum(dy * v1, axis=1), np.sum(dy * v2, axis=1)], axis=1)
        dr = mix * (dmix - np.sum(mix * dmix, axis=1, keepdims=True))
        return [dr.T @ h, dr.sum(axis=0)]
    g1, g2 = cache
    da1 = dy * v1 * g1 * (1 - g1)
    da2 = dy * v2 * g2 * (1 - g2)
    return [da1.T @ v2, da1.sum(axis=0), da2.T @ v1, da2.sum(axis=0)]


def _check_inputs(v1, v2, C):
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape or v1.shape[-1] != C or v1.ndim not in (1, 2):
        raise ShapeError(f"gate inputs {v1.shape} / {v2.shape} do not match C={C}")
    return v1, v2


def gate_forward(v1, v2, params: GateParams) -> np.ndarray:
    """Fused logits for one (v1, v2) pair or a batch of rows."""
    v1, v2 = _check_inputs(v1, v2, params.num_classes)
    single = v1.ndim == 1
    logits, _ = _forward(params.variant, params.params, np.atleast_2d(v1), np.atleast_2d(v2))
    return logits[0] if single else logits


def fuse_predict(v1, v2, params: GateParams, space: LabelSpace | None = None):
    """(label or index, probabilities) from the softmax of the gate logits."""
    probs = softened_softmax(gate_forward(v1, v2, params), 1.0)
    idx = argmax_index(probs)
    if space is None:
        return idx, probs
    if np.ndim(idx) == 0:
        return space.labels[int(idx)], probs
    return [space.labels[int(i)] for i in idx], probs


def gate_loss_and_grads(params: GateParams, v1, v2, labels):
    """Mean cross-entropy of the gate logits and its gradients, in ``params.params`` order."""
    v1, v2 = _check_inputs(v1, v2, params.num_classes)
    v1, v2 = np.atleast_2d(v1), np.atleast_2d(v2)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    return _loss_and_grads(params.variant, params.params, v1, v2, y)


def _loss_and_grads(variant, plist, v1, v2, y):
    n = v1.shape[0]
    logits, cache = _forward(variant, plist, v1, v2)
    log_p = log_softened_softmax(logits, 1.0)
    loss = -np.mean(log_p[np.arange(n), y])
    dy = np.exp(log_p)
    dy[np.arange(n), y] -= 1.0
    dy /= n
    return float(loss), _backward(variant, plist, v1, v2, cache, dy)


# -- training ----------------------------------------------------------------


class GateData(NamedTuple):
    """Row-aligned stage-3 inputs: v1 (n, C), v2 (n, C), label indices (n,)."""

    v1: np.ndarray
    v2: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.v1.shape[0]

    def subset(self, idx) -> "GateData":
        idx = np.asarray(idx)
        ids = tuple(self.ids[i] for i in idx) if self.ids else ()
        return GateData(self.v1[idx], self.v2[idx], self.labels[idx], ids)


@dataclass(frozen=True)
class GateHyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    moe_experts: int = 2

    def __post_init__(self):
        if not self.learning_rate > 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidInput(f"invalid optimisation settings in {self}")
        if self.moe_experts < 1:
            raise InvalidInput("moe_experts must be >= 1")


def gate_accuracy(params: GateParams, data: GateData) -> float:
    if len(data) == 0:
        return float("nan")
    logits = gate_forward(data.v1, data.v2, params)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def train_gate(train: GateData, val: GateData | None, variant, hyperparams: GateHyperparams,
               ) -> tuple[GateParams, TrainingHistory]:
    """Cross-entropy training of one gate; v1/v2 are read-only inputs."""
    if train is None or len(train) == 0:
        raise EmptyDataset("stage-3 training set is empty")
    hp = hyperparams
    C = train.v1.shape[1]
    for part in (train, val):
        if part is not None and len(part) and (part.v1.shape[1] != C or part.v2.shape != part.v1.shape):
            raise ShapeError("gate examples must share one label space")
    gate = GateParams.init(variant, C, hp.seed, hp.moe_experts)
    has_val = val is not None and len(val) > 0

    def grad_fn(plist, idx):
        return _loss_and_grads(gate.variant, plist, train.v1[idx], train.v2[idx], train.labels[idx])[1]

    def evaluate(plist, epoch):
        loss, _ = _loss_and_grads(gate.variant, plist, train.v1, train.v2, train.labels)
        current = GateParams(gate.variant, C, plist, hp.moe_experts)
        train_acc = gate_accuracy(current, train)
        val_acc = gate_accuracy(current, val) if has_val else train_acc
        return EpochRecord(epoch, loss, 0.0, loss, train_acc, val_acc)

    best, history = fit(
        gate.params, grad_fn, evaluate, len(train),
        learning_rate=hp.learning_rate, batch_size=hp.batch_size,
        max_epochs=hp.max_epochs, patience=hp.patience, seed=hp.seed,
    )
    return GateParams(gate.variant, C, best, hp.moe_experts), history


def save_gate(stem, gate: GateParams, *, seed: int = 0, metrics: dict | None = None) -> str:
    manifest = {
        "kind": "gate",
        "variant": gate.variant.value,
        "C": gate.num_classes,
        "moe_experts": gate.moe_experts,
        "seed": seed,
        "metrics": metrics or {},
        "param_count": gate_param_count(gate.variant, gate.num_classes, gate.moe_experts),
    }
    return save_checkpoint(stem, manifest, gate.params)


def load_gate(stem) -> tuple[GateParams, dict]:
    manifest, arrays = load_checkpoint(stem)
    variant = GateVariant(manifest["variant"])
    C, E = manifest["C"], manifest.get("moe_experts", 2)
    n = sum(a.size for a in arrays)
    if n != gate_param_count(variant, C, E):
        raise SchemaError(f"checkpoint {stem} holds {n} parameters, {variant.value} needs {gate_param_count(variant, C, E)}")
    return GateParams(variant, C, arrays, E), manifest
