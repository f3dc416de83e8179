"""Accuracy, complementarity statistics, ablation sweeps and report emission."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import plotting
from .distillation import (
    TABLE3_HIDDEN,
    DistillData,
    DistillHeadConfig,
    DistillHyperparams,
    param_count,
    train_distill_head,
)
from .errors import EmoKDError, EmptyDataset, InvalidGrid, ShapeError
from .gating import GateData, GateHyperparams, GateVariant, gate_accuracy, gate_param_count, train_gate

log = logging.getLogger(__name__)


def accuracy(predicted: Sequence, truth: Sequence) -> float:
    predicted, truth = list(predicted), list(truth)
    if len(predicted) != len(truth):
        raise ShapeError(f"{len(predicted)} predictions vs {len(truth)} labels")
    if not truth:
        raise EmptyDataset("accuracy of an empty set")
    return sum(p == t for p, t in zip(predicted, truth)) / len(truth)


@dataclass(frozen=True)
class Partition:
    """Per-sample correctness of two systems, as counts over ``n`` samples."""

    both: int
    a_only: int
    b_only: int
    neither: int

    @property
    def n(self) -> int:
        return self.both + self.a_only + self.b_only + self.neither

    def fraction(self, *keys: str) -> float:
        return sum(getattr(self, k) for k in keys) / self.n

    def fractions(self) -> dict[str, float]:
        return {k: self.fraction(k) for k in ("both", "a_only", "b_only", "neither")}

    def counts(self) -> dict[str, int]:
        return {"both": self.both, "a_only": self.a_only, "b_only": self.b_only, "neither": self.neither}


def complementarity(preds_a: Sequence, preds_b: Sequence, truth: Sequence) -> Partition:
    preds_a, preds_b, truth = list(preds_a), list(preds_b), list(truth)
    if not len(preds_a) == len(preds_b) == len(truth):
        raise ShapeError(f"lengths differ: {len(preds_a)}, {len(preds_b)}, {len(truth)}")
    if not truth:
        raise EmptyDataset("complementarity of an empty set")
    counts = {"both": 0, "a_only": 0, "b_only": 0, "neither": 0}
    for a, b, t in zip(preds_a, preds_b, truth):
        key = {(True, True): "both", (True, False): "a_only", (False, True): "b_only", (False, False): "neither"}
        counts[key[(a == t, b == t)]] += 1
    return Partition(**counts)


def oracle_upper_bound(partition) -> float:
    """Accuracy of a selector that is right whenever either system is."""
    if isinstance(partition, Partition):
        return partition.fraction("both", "a_only", "b_only")
    return partition["both"] + partition["a_only"] + partition["b_only"]


# -- reports -----------------------------------------------------------------


@dataclass
class EvalReport:
    dataset: str
    accuracies: dict[str, float]
    partition: Partition
    partition_systems: tuple[str, str]
    param_counts: dict[str, int]
    trace: list[dict] = field(default_factory=list)
    config: dict | None = None
    name: str = "evaluation"

    @property
    def oracle(self) -> float:
        return oracle_upper_bound(self.partition)

    @property
    def fused_within_oracle(self) -> bool | None:
        fused = self.accuracies.get("fused")
        return None if fused is None else fused <= self.oracle + 1e-12

    def summary(self) -> dict:
        return {
            "kind": "evaluation",
            "dataset": self.dataset,
            "accuracies": self.accuracies,
            "partition": {
                "systems": list(self.partition_systems),
                "counts": self.partition.counts(),
                "fractions": self.partition.fractions(),
                "oracle_upper_bound": self.oracle,
            },
            "fused_within_oracle": self.fused_within_oracle,
            "param_counts": self.param_counts,
            "config": self.config,
        }


def build_eval_report(dataset: str, ids, truth, v1_labels, v2_labels, fused_labels=None, *,
                      param_counts: dict | None = None, extra_accuracies: dict | None = None,
                      config: dict | None = None, name: str = "evaluation") -> EvalReport:
    """Score VLM (v1), student (v2) and fused predictions, partitioning student vs VLM."""
    truth = list(truth)
    acc = {"vlm": accuracy(v1_labels, truth), "student": accuracy(v2_labels, truth)}
    if fused_labels is not None:
        acc["fused"] = accuracy(fused_labels, truth)
    acc.update(extra_accuracies or {})
    partition = complementarity(v2_labels, v1_labels, truth)
    trace = []
    fused_iter = fused_labels if fused_labels is not None else [None] * len(truth)
    for sid, a, b, f, t in zip(ids, v1_labels, v2_labels, fused_iter, truth):
        trace.append({"sample_id": sid, "vlm": a, "student": b, "fused": f, "truth": t})
    report = EvalReport(dataset, acc, partition, ("student", "vlm"), dict(param_counts or {}), trace, config, name)
    if report.fused_within_oracle is False:
        log.warning("fused accuracy %.4f exceeds oracle bound %.4f", acc["fused"], report.oracle)
    return report


@dataclass
class ComplementarityReport:
    dataset: str
    partition: Partition
    systems: tuple[str, str]
    accuracies: dict[str, float]
    config: dict | None = None
    name: str = "complementarity"

    def summary(self) -> dict:
        return {
            "kind": "complementarity",
            "dataset": self.dataset,
            "systems": list(self.systems),
            "accuracies": self.accuracies,
            "counts": self.partition.counts(),
            "fractions": self.partition.fractions(),
            "oracle_upper_bound": oracle_upper_bound(self.partition),
            "config": self.config,
        }


def complementarity_report(dataset, preds_a, preds_b, truth, systems=("teacher", "vlm"), config=None):
    part = complementarity(preds_a, preds_b, truth)
    acc = {systems[0]: part.fraction("both", "a_only"), systems[1]: part.fraction("both", "b_only")}
    return ComplementarityReport(dataset, part, tuple(systems), acc, config)


@dataclass
class SweepResult:
    name: str
    parameter: str
    records: list[dict]
    dataset: str = ""
    config: dict | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def values(self) -> list:
        return [r["value"] for r in self.records]

    def summary(self) -> dict:
        return {"kind": "sweep", "name": self.name, "dataset": self.dataset, "parameter": self.parameter,
                "records": self.records, "config": self.config}


def _seeds(seed: int, n_seeds: int) -> list[int]:
    if n_seeds < 1:
        raise InvalidGrid("n_seeds must be >= 1")
    return [seed + k for k in range(n_seeds)]


def run_alpha_sweep(grid: Iterable[float], train: DistillData, val: DistillData | None,
                    config: DistillHeadConfig, hyperparams: DistillHyperparams | None = None, *,
                    seed: int | None = None, n_seeds: int = 1, dataset: str = "") -> SweepResult:
    hp = hyperparams or DistillHyperparams()
    seed = hp.seed if seed is None else seed
    grid = sorted(set(float(a) for a in grid))
    if not grid or any(not 0.0 <= a <= 1.0 for a in grid):
        raise InvalidGrid(f"alpha grid must be a non-empty subset of [0, 1], got {grid}")
    records = []
    for alpha in grid:
        accs, kds = [], []
        for s in _seeds(seed, n_seeds):
            try:
                _, hist = train_distill_head(train, val, config, replace(hp, alpha=alpha, seed=s))
            except EmoKDError as exc:
                exc.args = (f"alpha={alpha}: {exc}",)
                raise
            accs.append(hist.best.val_acc)
            kds.append(hist.final.l_kd)
        records.append({"value": alpha, "accuracy": float(np.mean(accs)), "final_l_kd": float(np.mean(kds)),
                        "epochs": len(hist)})
    return SweepResult("alpha_sweep", "alpha", records, dataset)


def default_depth_grid(input_dim: int, num_classes: int) -> list[DistillHeadConfig]:
    return [DistillHeadConfig(input_dim, tuple(h), num_classes) for h in TABLE3_HIDDEN]


def run_depth_sweep(configs: Sequence[DistillHeadConfig], train: DistillData, val: DistillData | None,
                    hyperparams: DistillHyperparams | None = None, *, seed: int | None = None,
                    n_seeds: int = 1, dataset: str = "") -> SweepResult:
    hp = hyperparams or DistillHyperparams()
    seed = hp.seed if seed is None else seed
    configs = list(configs)
    if not configs:
        raise InvalidGrid("depth grid is empty")
    records = []
    for cfg in sorted(configs, key=lambda c: (len(c.hidden_dims), param_count(c))):
        accs = []
        for s in _seeds(seed, n_seeds):
            _, hist = train_distill_head(train, val, cfg, replace(hp, seed=s))
            accs.append(hist.best.val_acc)
        records.append({"value": len(cfg.hidden_dims), "hidden_dims": str(list(cfg.hidden_dims)),
                        "param_count": param_count(cfg), "accuracy": float(np.mean(accs))})
    return SweepResult("depth_sweep", "depth", records, dataset)


def run_gate_sweep(variants: Iterable, train: GateData, val: GateData | None, test: GateData,
                   hyperparams: GateHyperparams | None = None, *, seed: int | None = None,
                   n_seeds: int = 1, dataset: str = "") -> SweepResult:
    hp = hyperparams or GateHyperparams()
    seed = hp.seed if seed is None else seed
    try:
        chosen = {GateVariant(v) for v in variants}
    except ValueError as exc:
        raise InvalidGrid(str(exc)) from None
    if not chosen:
        raise InvalidGrid("gate variant grid is empty")
    C = train.v1.shape[1]
    records = []
    for variant in (v for v in GateVariant if v in chosen):
        accs, val_accs = [], []
        for s in _seeds(seed, n_seeds):
            gate, hist = train_gate(train, val, variant, replace(hp, seed=s))
            accs.append(gate_accuracy(gate, test))
            val_accs.append(hist.best.val_acc)
        records.append({"value": variant.value, "accuracy": float(np.mean(accs)),
                        "val_accuracy": float(np.mean(val_accs)),
                        "param_count": gate_param_count(variant, C, hp.moe_experts)})
    return SweepResult("gate_sweep", "variant", records, dataset)


# -- emission ----------------------------------------------------------------


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _csv(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return buf.getvalue()


def emit_report(result, out_dir, name: str | None = None) -> dict[str, Path]:
    """Write ``summary/<name>.summary.json``, ``tables/<name>.table.csv`` and ``plots/<name>.plot.png``.

    Summary and table bytes depend only on the result's contents.
    """
    out = Path(out_dir)
    name = name or result.name
    try:
        for sub in ("summary", "tables", "plots"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create report directories under {out}: {exc.strerror}", str(out)) from exc

    paths = {
        "summary": out / "summary" / f"{name}.summary.json",
        "table": out / "tables" / f"{name}.table.csv",
        "plot": out / "plots" / f"{name}.plot.png",
    }
    if isinstance(result, SweepResult):
        columns = list(dict.fromkeys(k for r in result.records for k in r))
        table = _csv(result.records, columns)
        plot = {"alpha_sweep": plotting.plot_alpha_sweep, "depth_sweep": plotting.plot_depth_sweep,
                "gate_sweep": plotting.plot_gate_sweep}[result.name]
        render = lambda p: plot(result, p)  # noqa: E731
    elif isinstance(result, EvalReport):
        table = _csv(result.trace, ("sample_id", "vlm", "student", "fused", "truth"))
        render = lambda p: plotting.plot_partition(  # noqa: E731
            result.partition, p, labels=result.partition_systems, title=f"{result.dataset}: student vs VLM")
    elif isinstance(result, ComplementarityReport):
        rows = [{"bucket": k, "count": c, "fraction": result.partition.fraction(k)}
                for k, c in result.partition.counts().items()]
        table = _csv(rows, ("bucket", "count", "fraction"))
        render = lambda p: plotting.plot_partition(  # noqa: E731
            result.partition, p, labels=result.systems, title=f"{result.dataset}: complementarity")
    else:
        raise TypeError(f"cannot emit a report for {type(result).__name__}")

    paths["summary"].write_text(_dump_json(result.summary()), encoding="utf-8")
    paths["table"].write_text(table, encoding="utf-8")
    render(paths["plot"])
    return paths
