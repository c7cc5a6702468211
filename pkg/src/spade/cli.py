"""Command-line entry point: ``spade gen-data | calibrate | train | eval | inspect-graph | config``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .errors import ConfigError, ContractError, MissingArtifactError, NumericError, SpadeError

EXIT_OK, EXIT_CONTRACT, EXIT_NUMERIC = 0, 2, 3

ABLATIONS = {
    "no_lora": ("calibration.lora", False),
    "no_inversion": ("calibration.inversion", False),
    "no_calibration": ("calibration.enabled", False),
    "no_lcnl": ("model.lcnl", False),
    "no_lcnnl": ("model.lcnnl", False),
    "no_lcl": ("model.lcl", False),
    "no_rqc": ("train.rqc", False),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file (defaults to the run directory's config.json)")
    p.add_argument("--run-dir", type=Path, help="run directory (default: newest under --runs-root)")
    p.add_argument("--runs-root", type=Path, default=Path("runs"))
    p.add_argument("--seed", type=int, help="seed for data generation and model initialization")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. train.epochs=5")
    p.add_argument("--allow-config-mismatch", action="store_true", help="load checkpoints whose config hash differs")
    for flag in ABLATIONS:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    p.add_argument("--ov-mode", choices=("both", "diffusion", "pooling"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spade", description="Desk-scale open-vocabulary panoptic scene graph pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("gen-data", "generate the synthetic train/test corpus"),
        ("calibrate", "calibrate the student denoiser against the teacher"),
        ("train", "train the scene-graph head on frozen features"),
    ]:
        _common(sub.add_parser(name, help=help_))
    ev = sub.add_parser("eval", help="score a trained model, or a prediction file against ground truth")
    _common(ev)
    ev.add_argument("--pred", type=Path, help="prediction JSONL (standalone scoring)")
    ev.add_argument("--gt", type=Path, help="ground-truth dataset JSONL (standalone scoring)")
    ev.add_argument("--split", type=Path, help="dataset.meta.json carrying the vocabulary split")
    ev.add_argument("--out", type=Path, help="write metrics.json and report.txt here (standalone scoring)")
    ins = sub.add_parser("inspect-graph", help="dump graph, attention and pair selection for one scene")
    _common(ins)
    ins.add_argument("--scene", required=True, help="scene id, e.g. test000001")
    cfg = sub.add_parser("config", help="print the resolved config")
    _common(cfg)
    cfg.add_argument("--defaults", action="store_true", help="print the built-in defaults")
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args, run_dir: Path | None):
    from .pipeline import RunConfig

    if args.config is not None:
        if not args.config.exists():
            raise MissingArtifactError(f"config file {args.config} does not exist")
        cfg = RunConfig.from_json(args.config.read_text(encoding="utf-8"))
    elif run_dir is not None and (run_dir / "config.json").exists():
        cfg = RunConfig.from_json((run_dir / "config.json").read_text(encoding="utf-8"))
    else:
        cfg = RunConfig()
    updates = {}
    if args.seed is not None:
        updates.update({"seed": args.seed, "data.seed": args.seed})
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        updates[key.strip()] = _parse_value(value)
    for flag, (key, value) in ABLATIONS.items():
        if getattr(args, flag):
            updates[key] = value
    if args.ov_mode:
        updates["model.ov_mode"] = args.ov_mode
    return cfg.replace(**updates) if updates else cfg


def find_run_dir(args, create: bool, cfg=None) -> Path:
    if args.run_dir is not None:
        if not create and not args.run_dir.is_dir():
            raise MissingArtifactError(f"run directory {args.run_dir} does not exist; run `spade gen-data --run-dir {args.run_dir}` first")
        return args.run_dir
    if create:
        return args.runs_root / f"{time.strftime('%Y%m%d-%H%M%S')}-{cfg.hash()}"
    runs = sorted(p for p in args.runs_root.glob("*") if (p / "config.json").exists()) if args.runs_root.is_dir() else []
    if not runs:
        raise MissingArtifactError(f"no run directory under {args.runs_root}; run `spade gen-data` first")
    return runs[-1]


def _cmd(args) -> int:
    from . import pipeline
    from .evaluation import ingest, load_split

    if args.command == "config":
        cfg = pipeline.RunConfig() if args.defaults else resolve_config(args, args.run_dir)
        sys.stdout.write(cfg.to_json())
        return EXIT_OK

    if args.command == "eval" and (args.pred or args.gt):
        if not (args.pred and args.gt):
            raise ConfigError("standalone eval needs both --pred and --gt")
        split = load_split(args.split) if args.split else None
        report = ingest(args.pred, args.gt, split)
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
            (args.out / "report.txt").write_text(report.to_table() + "\n", encoding="utf-8")
        print(report.to_table())
        return EXIT_OK

    if args.command == "gen-data":
        provisional = resolve_config(args, args.run_dir)
        run_dir = find_run_dir(args, create=True, cfg=provisional)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(provisional.to_json(), encoding="utf-8")
        print(pipeline.gen_data(provisional, run_dir))
        return EXIT_OK

    run_dir = find_run_dir(args, create=False)
    cfg = resolve_config(args, run_dir)
    allow = args.allow_config_mismatch
    if args.command == "calibrate":
        print(pipeline.calibrate_cmd(cfg, run_dir))
    elif args.command == "train":
        print(pipeline.train_cmd(cfg, run_dir, allow))
    elif args.command == "eval":
        out = pipeline.eval_cmd(cfg, run_dir, allow)
        print((out / "report.txt").read_text(encoding="utf-8"), end="")
        print(out)
    elif args.command == "inspect-graph":
        print(pipeline.inspect_cmd(cfg, run_dir, args.scene, allow))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _cmd(args)
    except NumericError as exc:
        print(f"spade: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContractError, ConfigError, SpadeError) as exc:
        print(f"spade: error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"spade: error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
