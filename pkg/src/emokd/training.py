"""Optimizer, mini-batch loop, history and checkpoint payloads shared by both trainable stages."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import MissingArtifact, SchemaError, TrainingDiverged


class Adam:
    """Adam with decoupled weight decay (AdamW form); weight_decay=0 by default."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    l_total: float
    l_kd: float
    l_ce: float
    train_acc: float
    val_acc: float


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    COLUMNS = ("epoch", "L_total", "L_KD", "L_CE", "train_acc", "val_acc")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    @property
    def best(self) -> EpochRecord:
        return next(r for r in self.records if r.epoch == self.best_epoch)

    def to_table(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.records:
            writer.writerow([r.epoch] + [repr(float(x)) for x in (r.l_total, r.l_kd, r.l_ce, r.train_acc, r.val_acc)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "records": [asdict(r) for r in self.records]}


def init_affine(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    b = rng.uniform(-bound, bound, size=fan_out)
    return w, b


def fit(
    params: list[np.ndarray],
    grad_fn: Callable[[list[np.ndarray], np.ndarray], list[np.ndarray]],
    evaluate: Callable[[list[np.ndarray], int], EpochRecord],
    n_train: int,
    *,
    learning_rate: float,
    batch_size: int,
    max_epochs: int,
    patience: int,
    seed: int,
) -> tuple[list[np.ndarray], TrainingHistory]:
    """Seeded mini-batch Adam with best-validation checkpointing.

    ``params`` is updated in place; the returned list is a copy taken at the
    epoch with the highest validation accuracy (earliest on ties).
    """
    opt = Adam(params, lr=learning_rate)
    rng = np.random.default_rng([seed, 1])
    history = TrainingHistory()
    best_params, best_acc, stale = None, -np.inf, 0
    for epoch in range(1, max_epochs + 1):
        perm = rng.permutation(n_train)
        for start in range(0, n_train, batch_size):
            grads = grad_fn(params, perm[start:start + batch_size])
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(epoch, "non-finite gradient")
            opt.step(params, grads)
        rec = evaluate(params, epoch)
        if not all(np.isfinite(x) for x in (rec.l_total, rec.l_kd, rec.l_ce)):
            raise TrainingDiverged(epoch)
        history.records.append(rec)
        if rec.val_acc > best_acc:
            best_acc, stale = rec.val_acc, 0
            best_params = [p.copy() for p in params]
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= patience:
                break
    return best_params, history


# -- checkpoint payloads -----------------------------------------------------


def payload_bytes(arrays: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes(order="C") for a in arrays)


def save_checkpoint(stem, manifest: dict, arrays: Sequence[np.ndarray]) -> str:
    """Write ``<stem>.bin`` (row-major float32) and ``<stem>.json``; return the payload sha256."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blob = payload_bytes(arrays)
    digest = hashlib.sha256(blob).hexdigest()
    manifest = dict(manifest)
    manifest["shapes"] = [list(a.shape) for a in arrays]
    manifest["payload_sha256"] = digest
    _atomic_write(stem.with_suffix(".bin"), blob)
    _atomic_write(stem.with_suffix(".json"), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return digest


def load_checkpoint(stem) -> tuple[dict, list[np.ndarray]]:
    stem = Path(stem)
    meta_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    if not meta_path.exists() or not bin_path.exists():
        raise MissingArtifact(f"checkpoint {stem} not found")
    manifest = json.loads(meta_path.read_text())
    blob = bin_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest.get("payload_sha256"):
        raise SchemaError(f"{bin_path}: payload digest does not match manifest")
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    shapes = [tuple(s) for s in manifest["shapes"]]
    total = sum(int(np.prod(s)) for s in shapes)
    if total != flat.size:
        raise SchemaError(f"{bin_path}: {flat.size} floats but manifest shapes need {total}")
    arrays, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[offset:offset + size].reshape(shape).copy())
        offset += size
    return manifest, arrays


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
