"""Config validation, run manifests and the stage commands behind the CLI."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import argmax_index
from .data import (
    DatasetProfile,
    ReplayClient,
    RemoteTextClient,
    Sample,
    SampleIndex,
    SplitSpec,
    build_categorical_triplet,
    generate_descriptive_triplets,
    get_profile,
    read_triplets,
    scan_dataset,
    split_index,
    triplet_to_line,
)
from .distillation import (
    DEFAULT_FEATURE_DIM,
    DistillData,
    DistillHeadConfig,
    DistillHyperparams,
    assemble_distill_data,
    load_head,
    param_count,
    save_head,
    student_distribution,
    train_distill_head,
)
from .errors import ConfigError, EmoKDError, InvalidInput, MissingArtifact, SchemaError
from .evaluation import (
    build_eval_report,
    complementarity_report,
    default_depth_grid,
    emit_report,
    run_alpha_sweep,
    run_depth_sweep,
    run_gate_sweep,
)
from .gating import (
    VARIANTS,
    GateData,
    GateHyperparams,
    GateVariant,
    fuse_predict,
    gate_param_count,
    load_gate,
    save_gate,
    train_gate,
)
from .predictors import (
    SyntheticSpec,
    VectorTable,
    VlmPrediction,
    generate_synthetic,
    load_feature_file,
    load_label_file,
    load_teacher_file,
    load_vlm_file,
    vlm_matrix,
    write_label_file,
    write_vector_file,
    write_vlm_file,
)
from .training import file_digest

log = logging.getLogger(__name__)

PATH_KEYS = ("data_root", "features_file", "teacher_file", "vlm_file", "labels_file")

DEFAULTS = {
    "profile": "fi",
    "seed": 0,
    "out_dir": "runs",
    **{k: None for k in PATH_KEYS},
    "split": {"train": 0.8, "val": 0.1, "test": 0.1},
    "head": {"input_dim": None, "hidden_dims": [1024], "num_classes": None},
    "distill": {"alpha": 0.5, "tau": 2.0, "learning_rate": 1e-3, "batch_size": 64, "max_epochs": 30, "patience": 5},
    "gate": {"variant": "concat_linear", "learning_rate": 1e-3, "batch_size": 64, "max_epochs": 30,
             "patience": 5, "moe_experts": 2},
    "synthetic": None,
    "clients": {"text_generation": None, "encoder": None, "vlm": None},
    "instructions": {"kinds": ["conversation", "reasoning"], "per_kind": 1, "workers": 4},
    "ablation": {"alpha_grid": [round(0.1 * k, 1) for k in range(1, 10)], "depth_grid": None,
                 "gate_variants": [v.value for v in VARIANTS], "n_seeds": 1},
}

SYNTHETIC_DEFAULTS = {
    "n": 2000, "d": 32, "teacher_accuracy": 0.7, "vlm_accuracy": 0.7, "overlap": 0.5,
    "confidence_correct": 0.9, "confidence_wrong": 0.6, "separation": 2.0, "noise": 1.0, "seed": None,
}

CLIENT_KEYS = {"kind", "path", "endpoint", "token_env", "timeout", "params"}

STAGES = ("instructions", "distill", "gate", "evaluate")
# stages that must be complete before each one may run
REQUIRES = {"instructions": (), "distill": (), "gate": ("distill",), "evaluate": ("distill", "gate")}
# stages invalidated when each one re-runs
DOWNSTREAM = {"instructions": (), "distill": ("gate", "evaluate"), "gate": ("evaluate",), "evaluate": ()}


def _merge(defaults: dict, raw: dict, where: str = "") -> dict:
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys{' in ' + where if where else ''}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in raw.items():
        sub = defaults[key]
        if isinstance(sub, dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{where + '.' if where else ''}{key} must be a mapping")
            out[key] = _merge(sub, value, f"{where}.{key}" if where else key)
        else:
            out[key] = value
    return out


def set_dotted(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a mapping")
    node[keys[-1]] = value


@dataclass
class RunConfig:
    profile: DatasetProfile
    seed: int
    out_dir: Path
    paths: dict[str, Path | None]
    split: SplitSpec
    head: DistillHeadConfig
    distill: DistillHyperparams
    gate_variant: GateVariant
    gate: GateHyperparams
    synthetic: SyntheticSpec | None
    clients: dict
    instructions: dict
    ablation: dict
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def space(self):
        return self.profile.space

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def run_dir(self) -> Path:
        return self.out_dir / self.run_id


def validate_config(raw, overrides: dict | None = None) -> RunConfig:
    """Parse structured text (YAML or JSON) or a mapping into a checked RunConfig.

    ``overrides`` maps dotted keys to values and wins over the file.
    """
    if raw is None or isinstance(raw, str):
        try:
            raw = yaml.safe_load(raw or "") or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML/JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    raw = copy.deepcopy(raw)
    for key, value in (overrides or {}).items():
        set_dotted(raw, key, value)
    cfg = _merge(DEFAULTS, raw)
    if cfg["synthetic"] is not None:
        cfg["synthetic"] = _merge(SYNTHETIC_DEFAULTS, cfg["synthetic"], "synthetic")
    for name, client in (cfg["clients"] or {}).items():
        if client is not None:
            if "token" in client:
                raise ConfigError("tokens must come from environment variables (token_env)")
            unknown = sorted(set(client) - CLIENT_KEYS)
            if unknown:
                raise ConfigError(f"unknown config keys in clients.{name}: {', '.join(unknown)}")

    try:
        profile = get_profile(cfg["profile"])
        seed = int(cfg["seed"])
        C = profile.space.size

        paths = {}
        for key in PATH_KEYS:
            value = cfg[key]
            if value is not None:
                path = Path(value)
                if not path.exists():
                    raise ConfigError(f"{key}: path {path} does not exist")
                paths[key] = path
            else:
                paths[key] = None

        synth = None
        if cfg["synthetic"] is not None:
            s = cfg["synthetic"]
            synth = SyntheticSpec(
                n=int(s["n"]), C=C, d=int(s["d"]),
                teacher_accuracy=float(s["teacher_accuracy"]), vlm_accuracy=float(s["vlm_accuracy"]),
                overlap=float(s["overlap"]), confidence_correct=float(s["confidence_correct"]),
                confidence_wrong=float(s["confidence_wrong"]),
                seed=seed if s["seed"] is None else int(s["seed"]),
                separation=float(s["separation"]), noise=float(s["noise"]),
            )
            synth.buckets()

        h = cfg["head"]
        if h["num_classes"] is not None and int(h["num_classes"]) != C:
            raise ConfigError(f"head.num_classes={h['num_classes']} but profile {profile.name!r} has {C} classes")
        input_dim = h["input_dim"]
        if input_dim is None:
            input_dim = synth.d if synth else DEFAULT_FEATURE_DIM
        if synth is not None and int(input_dim) != synth.d:
            raise ConfigError(f"head.input_dim={input_dim} but synthetic.d={synth.d}")
        head = DistillHeadConfig(int(input_dim), tuple(int(x) for x in h["hidden_dims"]), C)
        cfg["head"] = head.to_dict()

        d = cfg["distill"]
        distill = DistillHyperparams(
            alpha=float(d["alpha"]), tau=float(d["tau"]), learning_rate=float(d["learning_rate"]),
            batch_size=int(d["batch_size"]), max_epochs=int(d["max_epochs"]), patience=int(d["patience"]),
            seed=seed,
        )
        g = cfg["gate"]
        variant = GateVariant(g["variant"])
        gate = GateHyperparams(
            learning_rate=float(g["learning_rate"]), batch_size=int(g["batch_size"]),
            max_epochs=int(g["max_epochs"]), patience=int(g["patience"]), seed=seed,
            moe_experts=int(g["moe_experts"]),
        )
        sp = cfg["split"]
        split = SplitSpec(float(sp["train"]), float(sp["val"]), float(sp["test"]), seed)

        ins = cfg["instructions"]
        bad = [k for k in ins["kinds"] if k not in ("conversation", "reasoning")]
        if bad:
            raise ConfigError(f"instructions.kinds: unknown kinds {bad}")
        ab = cfg["ablation"]
        [GateVariant(v) for v in ab["gate_variants"]]
        if any(not 0 <= float(a) <= 1 for a in ab["alpha_grid"]):
            raise ConfigError("ablation.alpha_grid values must lie in [0, 1]")
    except ConfigError:
        raise
    except (InvalidInput, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from None

    resolved = {k: v for k, v in cfg.items() if k != "out_dir"}
    return RunConfig(
        profile=profile, seed=seed, out_dir=Path(cfg["out_dir"]), paths=paths, split=split, head=head,
        distill=distill, gate_variant=variant, gate=gate, synthetic=synth, clients=cfg["clients"],
        instructions=ins, ablation=ab, resolved=resolved,
    )


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return validate_config(text, overrides)


# -- manifest ----------------------------------------------------------------


@dataclass
class RunManifest:
    run_id: str
    config: dict
    stages: dict[str, bool] = field(default_factory=lambda: {s: False for s in STAGES})
    digests: dict[str, str] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @classmethod
    def open(cls, cfg: RunConfig) -> "RunManifest":
        path = cfg.run_dir / "manifest.json"
        if path.exists():
            data = json.loads(path.read_text())
            return cls(data["run_id"], data["config"], data["stages"], data["digests"], data["metrics"])
        return cls(cfg.run_id, cfg.resolved)

    def require(self, stage: str) -> None:
        missing = [s for s in REQUIRES[stage] if not self.stages.get(s)]
        if missing:
            raise MissingArtifact(f"stage {stage!r} needs completed stage(s) {missing} for run {self.run_id}")

    def start(self, stage: str) -> None:
        self.require(stage)
        self.stages[stage] = False
        for s in DOWNSTREAM[stage]:
            self.stages[s] = False

    def save(self, run_dir: Path) -> None:
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "manifest.json"
        tmp = path.with_name(path.name + ".tmp")
        data = {"run_id": self.run_id, "config": self.config, "stages": self.stages,
                "digests": self.digests, "metrics": self.metrics}
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)


# -- stage inputs ------------------------------------------------------------


@dataclass
class StageData:
    index: SampleIndex
    features: VectorTable | None
    teacher: VectorTable | None
    vlm: dict[str, VlmPrediction] | None
    splits: tuple[SampleIndex, SampleIndex, SampleIndex] | None = None

    @property
    def space(self):
        return self.index.profile.space


def _synthetic(cfg: RunConfig):
    return generate_synthetic(cfg.synthetic, cfg.space)


def load_index(cfg: RunConfig) -> SampleIndex:
    if cfg.synthetic is not None and not any(cfg.paths.values()):
        syn = _synthetic(cfg)
        return SampleIndex(tuple(Sample(i, "", l) for i, l in zip(syn.ids, syn.labels)), cfg.profile)
    if cfg.paths["labels_file"] is not None:
        space, labels = load_label_file(cfg.paths["labels_file"])
        if space != cfg.space:
            raise ConfigError(f"labels file space {space.name!r} does not match profile {cfg.profile.name!r}")
        return SampleIndex(tuple(Sample(i, "", labels[i]) for i in sorted(labels)), cfg.profile)
    if cfg.paths["data_root"] is not None:
        return scan_dataset(cfg.paths["data_root"], cfg.profile)
    raise ConfigError("no sample source: set synthetic, labels_file or data_root")


def load_stage_data(cfg: RunConfig, need=("features", "teacher", "vlm")) -> StageData:
    """Resolve samples, features, teacher logits and VLM predictions for a run.

    A synthetic block with no file paths generates everything in memory.
    """
    if cfg.synthetic is not None and not any(cfg.paths.values()):
        syn = _synthetic(cfg)
        index = SampleIndex(tuple(Sample(i, "", l) for i, l in zip(syn.ids, syn.labels)), cfg.profile)
        data = StageData(index, syn.features, syn.teacher, {p.sample_id: p for p in syn.vlm})
    else:
        index = load_index(cfg)
        tables = {}
        for key, loader in (("features", load_feature_file), ("teacher", load_teacher_file)):
            path = cfg.paths[f"{key}_file"]
            if path is None:
                if key in need:
                    raise MissingArtifact(f"{key}_file is not configured")
                tables[key] = None
            else:
                tables[key] = loader(path, cfg.space)
        vlm = None
        if cfg.paths["vlm_file"] is not None:
            vlm = {p.sample_id: p for p in load_vlm_file(cfg.paths["vlm_file"], cfg.space)}
        elif "vlm" in need:
            raise MissingArtifact("vlm_file is not configured")
        data = StageData(index, tables["features"], tables["teacher"], vlm)
        for key in ("features", "teacher"):
            table = tables[key]
            if table is not None:
                missing = [s for s in index.ids if s not in table]
                if missing:
                    raise SchemaError(f"{key} file lacks {len(missing)} labelled sample(s), e.g. {missing[:3]}")
        if vlm is not None:
            missing = [s for s in index.ids if s not in vlm]
            if missing:
                raise SchemaError(f"vlm file lacks {len(missing)} labelled sample(s), e.g. {missing[:3]}")
    data.splits = split_index(data.index, cfg.split)
    return data


def _distill_part(data: StageData, part: SampleIndex) -> DistillData:
    return assemble_distill_data(data.features, data.teacher, part.ids, part.labels, data.space)


def _gate_part(data: StageData, part: SampleIndex, head) -> GateData:
    C = data.space.size
    v1 = vlm_matrix([data.vlm[s] for s in part.ids], C)
    v2 = student_distribution(data.features.select(part.ids), head)
    y = np.array([data.space.index(label) for label in part.labels], dtype=np.int64)
    return GateData(v1, v2, y, tuple(part.ids))


def _vlm_label(pred: VlmPrediction, space) -> str:
    return space.labels[pred.parsed] if pred.parsed is not None else "<unparsed>"


# -- commands ----------------------------------------------------------------


def _make_text_client(spec: dict | None):
    if spec is None:
        return None
    kind = spec.get("kind", "replay")
    if kind == "replay":
        if not spec.get("path"):
            raise ConfigError("clients.text_generation.path is required for a replay client")
        return ReplayClient.from_file(spec["path"])
    if kind == "remote":
        if not spec.get("endpoint"):
            raise ConfigError("clients.text_generation.endpoint is required for a remote client")
        return RemoteTextClient(spec["endpoint"], spec.get("token_env"), spec.get("timeout", 60.0), spec.get("params"))
    raise ConfigError(f"unknown client kind {kind!r}")


def cmd_prepare_instructions(cfg: RunConfig, client=None) -> Path:
    """Write categorical and descriptive triplets, resuming after completed samples."""
    manifest = RunManifest.open(cfg)
    manifest.start("instructions")
    manifest.save(cfg.run_dir)
    index = load_index(cfg)
    client = client if client is not None else _make_text_client(cfg.clients.get("text_generation"))
    kinds = list(cfg.instructions["kinds"]) if client is not None else []
    if client is None and cfg.instructions["kinds"]:
        log.info("no text-generation client configured; writing categorical triplets only")
    per_kind = int(cfg.instructions["per_kind"])

    out = cfg.run_dir / "instructions" / "triplets.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    done = {t.image_ref for t in read_triplets(out)} if out.exists() else set()
    todo = [s for s in sorted(index.entries, key=lambda e: e.sample_id) if s.sample_id not in done]

    def build(sample):
        block = [build_categorical_triplet(sample, cfg.space)]
        if kinds:
            block += generate_descriptive_triplets(sample, kinds, client, per_kind)
        return block

    workers = max(1, int(cfg.instructions.get("workers", 1)))
    failure = None
    with open(out, "a", encoding="utf-8") as fh, ThreadPoolExecutor(max_workers=workers) as pool:
        for start in range(0, len(todo), workers):
            chunk = todo[start:start + workers]
            futures = [pool.submit(build, s) for s in chunk]
            for fut in futures:
                try:
                    block = fut.result()
                except EmoKDError as exc:
                    failure = exc
                    break
                fh.write("".join(triplet_to_line(t) + "\n" for t in block))
                fh.flush()
            if failure:
                break
    if failure:
        raise failure
    manifest.stages["instructions"] = True
    manifest.digests["triplets"] = file_digest(out)
    manifest.metrics["instructions"] = {"samples": len(index), "triplets": len(read_triplets(out))}
    manifest.save(cfg.run_dir)
    return out


def cmd_train_distill(cfg: RunConfig) -> dict:
    manifest = RunManifest.open(cfg)
    manifest.start("distill")
    data = load_stage_data(cfg, need=("features", "teacher"))
    if data.features.dim != cfg.head.input_dim:
        raise ConfigError(f"feature dim {data.features.dim} does not match head.input_dim {cfg.head.input_dim}")
    train, val, _ = data.splits
    head, history = train_distill_head(_distill_part(data, train), _distill_part(data, val), cfg.head, cfg.distill)
    best = history.best
    metrics = {"best_epoch": history.best_epoch, "epochs": len(history), "val_acc": best.val_acc,
               "train_acc": best.train_acc, "final_l_kd": history.final.l_kd, "param_count": param_count(cfg.head)}
    run_dir = cfg.run_dir
    digest = save_head(run_dir / "checkpoints" / "head", head, space=cfg.space, seed=cfg.seed,
                       epoch=history.best_epoch, metrics=metrics)
    (run_dir / "tables").mkdir(parents=True, exist_ok=True)
    (run_dir / "tables" / "distill_history.table.csv").write_text(history.to_table())
    manifest.digests["head"] = digest
    manifest.metrics["distill"] = metrics
    manifest.stages["distill"] = True
    manifest.save(run_dir)
    return metrics


def _load_trained_head(cfg: RunConfig, manifest: RunManifest):
    stem = cfg.run_dir / "checkpoints" / "head"
    if not stem.with_suffix(".bin").exists():
        raise MissingArtifact(f"stage-2 checkpoint {stem} is missing; run train-distill first")
    head, meta = load_head(stem)
    if meta["payload_sha256"] != manifest.digests.get("head"):
        raise MissingArtifact(f"head checkpoint {stem} does not match the run manifest; re-run train-distill")
    return head


def cmd_train_gate(cfg: RunConfig) -> dict:
    manifest = RunManifest.open(cfg)
    if not (cfg.run_dir / "checkpoints" / "head.bin").exists():
        raise MissingArtifact("stage-2 head checkpoint is missing; run train-distill first")
    manifest.start("gate")
    head = _load_trained_head(cfg, manifest)
    head_bin = cfg.run_dir / "checkpoints" / "head.bin"
    before = file_digest(head_bin)
    data = load_stage_data(cfg)
    train, val, _ = data.splits
    gate, history = train_gate(_gate_part(data, train, head), _gate_part(data, val, head), cfg.gate_variant, cfg.gate)
    metrics = {"best_epoch": history.best_epoch, "epochs": len(history), "val_acc": history.best.val_acc,
               "train_acc": history.best.train_acc,
               "param_count": gate_param_count(cfg.gate_variant, cfg.space.size, cfg.gate.moe_experts)}
    digest = save_gate(cfg.run_dir / "checkpoints" / "gate", gate, seed=cfg.seed, metrics=metrics)
    (cfg.run_dir / "tables" / "gate_history.table.csv").write_text(history.to_table())
    after = file_digest(head_bin)
    if after != before:
        raise SchemaError("head checkpoint changed during gate training")
    manifest.digests["gate"] = digest
    manifest.metrics["gate"] = metrics
    manifest.stages["gate"] = True
    manifest.save(cfg.run_dir)
    return metrics


def cmd_evaluate(cfg: RunConfig) -> dict:
    manifest = RunManifest.open(cfg)
    manifest.start("evaluate")
    head = _load_trained_head(cfg, manifest)
    gate, meta = load_gate(cfg.run_dir / "checkpoints" / "gate")
    if meta["payload_sha256"] != manifest.digests.get("gate"):
        raise MissingArtifact("gate checkpoint does not match the run manifest; re-run train-gate")
    data = load_stage_data(cfg)
    _, _, test = data.splits
    space = data.space
    part = _gate_part(data, test, head)
    v1_labels = [_vlm_label(data.vlm[s], space) for s in test.ids]
    v2_labels = [space.labels[i] for i in argmax_index(part.v2)]
    fused_labels, _ = fuse_predict(part.v1, part.v2, gate, space)
    teacher_labels = [space.labels[i] for i in argmax_index(data.teacher.select(test.ids))]
    truth = test.labels
    teacher_acc = sum(a == t for a, t in zip(teacher_labels, truth)) / len(truth)
    counts = {"head": param_count(head.config), "gate": gate.n_params()}
    counts["trainable_total"] = counts["head"] + counts["gate"]
    report = build_eval_report(
        cfg.profile.name, test.ids, truth, v1_labels, v2_labels, fused_labels,
        param_counts=counts, extra_accuracies={"teacher": teacher_acc}, config=cfg.resolved,
    )
    paths = emit_report(report, cfg.run_dir)
    manifest.metrics["evaluate"] = {"accuracies": report.accuracies, "oracle_upper_bound": report.oracle,
                                    "fused_within_oracle": report.fused_within_oracle}
    manifest.stages["evaluate"] = True
    manifest.save(cfg.run_dir)
    return {"report": report, "paths": paths}


def cmd_ablate(cfg: RunConfig, which: str) -> dict:
    ab = cfg.ablation
    n_seeds = int(ab["n_seeds"])
    if which == "alpha":
        data = load_stage_data(cfg, need=("features", "teacher"))
        train, val, _ = data.splits
        result = run_alpha_sweep(ab["alpha_grid"], _distill_part(data, train), _distill_part(data, val),
                                 cfg.head, cfg.distill, n_seeds=n_seeds, dataset=cfg.profile.name)
    elif which == "depth":
        data = load_stage_data(cfg, need=("features", "teacher"))
        train, val, _ = data.splits
        if ab["depth_grid"]:
            configs = [DistillHeadConfig(cfg.head.input_dim, tuple(h), cfg.space.size) for h in ab["depth_grid"]]
        else:
            configs = default_depth_grid(cfg.head.input_dim, cfg.space.size)
        result = run_depth_sweep(configs, _distill_part(data, train), _distill_part(data, val), cfg.distill,
                                 n_seeds=n_seeds, dataset=cfg.profile.name)
    elif which == "gate":
        manifest = RunManifest.open(cfg)
        manifest.require("gate")
        head = _load_trained_head(cfg, manifest)
        data = load_stage_data(cfg)
        train, val, test = data.splits
        result = run_gate_sweep(ab["gate_variants"], _gate_part(data, train, head), _gate_part(data, val, head),
                                _gate_part(data, test, head), cfg.gate, n_seeds=n_seeds, dataset=cfg.profile.name)
    else:
        raise ConfigError(f"unknown ablation {which!r}; expected alpha, depth or gate")
    result.config = cfg.resolved
    paths = emit_report(result, cfg.run_dir)
    return {"result": result, "paths": paths}


def cmd_complementarity(cfg: RunConfig) -> dict:
    """Teacher-vs-VLM partition over every labelled sample."""
    data = load_stage_data(cfg, need=("teacher", "vlm"))
    space = data.space
    ids = data.index.ids
    teacher_labels = [space.labels[i] for i in argmax_index(data.teacher.select(ids))]
    vlm_labels = [_vlm_label(data.vlm[s], space) for s in ids]
    report = complementarity_report(cfg.profile.name, teacher_labels, vlm_labels, data.index.labels,
                                    ("teacher", "vlm"), cfg.resolved)
    paths = emit_report(report, cfg.run_dir)
    return {"report": report, "paths": paths}


def cmd_synth(cfg: RunConfig) -> dict[str, Path]:
    if cfg.synthetic is None:
        raise ConfigError("synth needs a synthetic block in the config")
    syn = _synthetic(cfg)
    out = cfg.run_dir / "synthetic"
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features_file": out / "features.tsv",
        "teacher_file": out / "teacher.tsv",
        "vlm_file": out / "vlm.jsonl",
        "labels_file": out / "labels.jsonl",
    }
    write_vector_file(paths["features_file"], syn.features)
    write_vector_file(paths["teacher_file"], syn.teacher)
    write_vlm_file(paths["vlm_file"], syn.vlm, syn.space)
    write_label_file(paths["labels_file"], syn.ids, syn.labels, syn.space)
    return paths
