"""Command-line entry point.

Exit codes: 0 success, 2 usage/config error, 3 missing artifact,
4 training failure, 5 IO/client failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from . import pipeline
from .errors import EmoKDError
from .gating import VARIANTS

log = logging.getLogger("emokd")

VARIANT_NAMES = [v.value for v in VARIANTS]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML or JSON run config")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the run seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output root (runs land in OUT/<run_id>)")
    p.add_argument("--set", dest="overrides", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                   help="override a dotted config key, e.g. distill.alpha=0.7 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="emokd", parents=[common],
                                     description="Distilled-head + VLM gated fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare-instructions", parents=[common], help="build instruction triplets")
    sub.add_parser("train-distill", parents=[common], help="stage 2: train the distilled head")
    p = sub.add_parser("train-gate", parents=[common], help="stage 3: train the fusion gate")
    p.add_argument("--variant", choices=VARIANT_NAMES, default=None)
    sub.add_parser("evaluate", parents=[common], help="score VLM, head and fused predictions on the test split")
    p = sub.add_parser("ablate", parents=[common], help="alpha, depth or gate sweep")
    p.add_argument("--which", choices=("alpha", "depth", "gate"), required=True)
    p.add_argument("--variants", nargs="+", choices=VARIANT_NAMES, default=None)
    p.add_argument("--n-seeds", type=int, default=None)
    sub.add_parser("complementarity", parents=[common], help="teacher vs VLM correctness partition")
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset from the config's synthetic block")
    return parser


def _parse_override(item: str):
    if "=" not in item:
        raise pipeline.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def config_from_args(args) -> pipeline.RunConfig:
    overrides = dict(_parse_override(item) for item in getattr(args, "overrides", []) or [])
    if hasattr(args, "seed"):
        overrides["seed"] = args.seed
    if hasattr(args, "out"):
        overrides["out_dir"] = args.out
    if getattr(args, "variant", None):
        overrides["gate.variant"] = args.variant
    if getattr(args, "variants", None):
        overrides["ablation.gate_variants"] = args.variants
    if getattr(args, "n_seeds", None):
        overrides["ablation.n_seeds"] = args.n_seeds
    return pipeline.load_config(getattr(args, "config", None), overrides)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def run(args) -> None:
    cfg = config_from_args(args)
    cmd = args.command
    if cmd == "prepare-instructions":
        out = pipeline.cmd_prepare_instructions(cfg)
        _print({"run_id": cfg.run_id, "triplets": str(out)})
    elif cmd == "train-distill":
        _print({"run_id": cfg.run_id, **pipeline.cmd_train_distill(cfg)})
    elif cmd == "train-gate":
        _print({"run_id": cfg.run_id, **pipeline.cmd_train_gate(cfg)})
    elif cmd == "evaluate":
        res = pipeline.cmd_evaluate(cfg)
        _print({"run_id": cfg.run_id, "accuracies": res["report"].accuracies,
                "files": {k: str(v) for k, v in res["paths"].items()}})
    elif cmd == "ablate":
        res = pipeline.cmd_ablate(cfg, args.which)
        _print({"run_id": cfg.run_id, "records": res["result"].records,
                "files": {k: str(v) for k, v in res["paths"].items()}})
    elif cmd == "complementarity":
        res = pipeline.cmd_complementarity(cfg)
        _print({"run_id": cfg.run_id, **res["report"].summary(), "config": None,
                "files": {k: str(v) for k, v in res["paths"].items()}})
    elif cmd == "synth":
        paths = pipeline.cmd_synth(cfg)
        _print({"run_id": cfg.run_id, **{k: str(v) for k, v in paths.items()}})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                         format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except EmoKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
