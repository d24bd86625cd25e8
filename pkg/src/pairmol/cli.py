"""Command-line entry point: pretrain, finetune, evaluate, construct-env
and selfcheck subcommands bound to TOML config files with flag overrides."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import data as mol_data
from . import finetune as ft
from . import geometry as geo
from . import pretrain as pt
from .nets import EncoderConfig, ForceHeadConfig, SchNetConfig
from .selfcheck import run_selfcheck

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ValidationError(ValueError):
    pass


def _build_config(cls, table: dict, **overrides):
    """Instantiate a config dataclass, rejecting unknown keys."""
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - fields
    if unknown:
        raise ValidationError(
            f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    merged = dict(table)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc


def _load_toml(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def _encoder_config(table: dict) -> EncoderConfig:
    table = dict(table)
    schnet = _build_config(SchNetConfig, table.pop("schnet", {}))
    force = _build_config(ForceHeadConfig, table.pop("force_head", {}))
    return _build_config(EncoderConfig, table, schnet=schnet, force_head=force)


def _load_dataset(cfg: dict, seed: int):
    dcfg = cfg.get("data", {})
    path = dcfg.get("path")
    if not path:
        raise ValidationError("config is missing data.path")
    return mol_data.load_pair_dataset(
        path, format=dcfg.get("format", "csv-smiles"), seed=seed,
        cache_dir=dcfg.get("cache_dir"))


def _cmd_pretrain(args) -> int:
    cfg_file = _load_toml(args.config)
    cfg = _build_config(
        pt.PretrainConfig, cfg_file.get("pretrain", {}),
        seed=args.seed, n_target_atoms=args.n, alpha=args.alpha,
        tau=args.tau, task=args.task)
    encoder_cfg = _encoder_config(cfg_file.get("encoder", {}))
    dataset = _load_dataset(cfg_file, cfg.seed)
    out = args.out or "pretrained.ckpt"
    pt.run_pretraining(cfg, dataset, out, encoder_cfg=encoder_cfg)
    print(f"checkpoint written to {out}")
    return EXIT_OK


def _cmd_finetune(args) -> int:
    cfg_file = _load_toml(args.config)
    table = dict(cfg_file.get("finetune", {}))
    repeats = table.pop("repeats", 1)
    cfg = _build_config(
        ft.FinetuneConfig, table, seed=args.seed,
        checkpoint=args.checkpoint)
    encoder_cfg = _encoder_config(cfg_file.get("encoder", {}))
    dataset = _load_dataset(cfg_file, cfg.seed)
    scheme = args.split or cfg_file.get("split", {}).get("scheme", "kfold5")
    splits = mol_data.make_splits(dataset, scheme, cfg.seed)
    out = args.out or "report.json"
    report = ft.run_finetune(
        cfg, splits, dataset, checkpoint=args.checkpoint,
        encoder_cfg=encoder_cfg, repeats=repeats, report_path=out)
    print(f"{report['n_runs']} runs, mean={report['mean']} std={report['std']}")
    print(f"report written to {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    path = Path(args.predictions)
    if not path.exists():
        raise ValidationError(f"predictions file not found: {path}")
    preds, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            preds.append(float(row["pred"]))
            labels.append(float(row["label"]))
    task = ("binary_classification" if args.task == "binary_classification"
            else "regression")
    metric = ft.evaluate(preds, labels, task)
    name = "auroc" if task == "binary_classification" else "rmse"
    print(f"{name}={metric:.4f}")
    return EXIT_OK


def _cmd_construct_env(args) -> int:
    dataset = mol_data.load_pair_dataset(args.pair, seed=args.seed or 0)
    pair = dataset[args.index]
    vg = geo.build_virtual_geometry(pair, args.n, args.seed or 0)
    elements = (list(pair.larger.molecule.elements)
                + list(pair.smaller.molecule.elements) * vg.n_replicas)
    out = Path(args.out or "environment")
    geo.export_geometry(vg, elements, out.with_suffix(".xyz"),
                        out.with_suffix(".json"))
    print(f"wrote {out.with_suffix('.xyz')} and {out.with_suffix('.json')}")
    return EXIT_OK


def _cmd_selfcheck(args) -> int:
    return EXIT_OK if run_selfcheck() else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairmol",
        description="Geometric pre-training for molecular pair prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run joint contrastive + force pre-training")
    p.add_argument("--config", help="TOML config file ([pretrain], [encoder], [data])")
    p.add_argument("--seed", type=int, help="global seed (default 0)")
    p.add_argument("--out", help="checkpoint output path (default pretrained.ckpt)")
    p.add_argument("--n", type=int, help="target atoms per environment (default 5)")
    p.add_argument("--alpha", type=float, help="force-loss weight (default 0.1)")
    p.add_argument("--tau", type=float, help="contrastive temperature (default 0.1)")
    p.add_argument("--task", help="lr preset: chromophore|solvation|ddi (default chromophore)")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune and evaluate on labeled pairs")
    p.add_argument("--config", help="TOML config file ([finetune], [encoder], [data])")
    p.add_argument("--seed", type=int, help="global seed (default 0)")
    p.add_argument("--out", help="JSON report path (default report.json)")
    p.add_argument("--split", choices=["kfold5", "molecule", "scaffold"],
                   help="split scheme (default kfold5)")
    p.add_argument("--checkpoint", help="pre-trained checkpoint to initialize the encoder")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("evaluate", help="score a predictions CSV (pred,label columns)")
    p.add_argument("--predictions", required=True, help="CSV with pred,label columns")
    p.add_argument("--task", default="regression",
                   choices=["regression", "binary_classification"],
                   help="metric: rmse or auroc (default regression)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("construct-env", help="emit one virtual environment as XYZ + JSON")
    p.add_argument("--pair", required=True, help="CSV with smiles_1,smiles_2 columns")
    p.add_argument("--index", type=int, default=0, help="pair row to use (default 0)")
    p.add_argument("--n", type=int, default=5, help="target atoms (default 5)")
    p.add_argument("--seed", type=int, default=0, help="construction seed (default 0)")
    p.add_argument("--out", help="output path prefix (default environment)")
    p.set_defaults(func=_cmd_construct_env)

    p = sub.add_parser("selfcheck", help="run the structural property suite")
    p.set_defaults(func=_cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
