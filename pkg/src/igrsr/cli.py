"""Command-line entry point: ``python -m igrsr <command> --config FILE --seed N --out DIR``.

Exit codes: 0 success, 2 config error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .data import DataFormatError, EmptyDatasetError, save_dataset, write_tsv
from .experiments import SCHEMA_VERSION, Experiment, write_outputs, write_sweep_csv
from .metrics import rank_and_score
from .trainer import CheckpointError, TrainingDivergence, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("igrsr")


def _synth(config: ExperimentConfig, exp: Experiment, out: Path, args) -> None:
    ds = exp.dataset()
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "dataset.json")
    write_tsv(ds, out / "interactions.tsv")
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "synth",
        "config_fingerprint": exp.fingerprint,
        "config": config.to_dict(),
        "dataset": ds.stats(),
        "seeds": list(config.seeds),
        "runs": [],
    }
    write_outputs(out, report, [])


def _pretrain(config, exp: Experiment, out: Path, args) -> None:
    runs = []
    for seed in config.seeds:
        backbone = exp.backbone(seed)
        runs += [r for r in exp.runs if r.model is backbone]
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(backbone, out / f"backbone_seed{seed}.npz", exp.fingerprint)
    write_outputs(out, exp._report("pretrain", runs), runs)


def _train(config, exp: Experiment, out: Path, args) -> None:
    if args.backbone:
        backbone = load_checkpoint(args.backbone)
        backbone.freeze()
        for seed in config.seeds:
            exp.pretrained[seed] = backbone
    report = exp.run_main()
    out.mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        save_checkpoint(exp.baseline(seed).model, out / f"baseline_seed{seed}.npz", exp.fingerprint)
        save_checkpoint(exp.igrsr(seed, config.model.variant).model, out / f"igrsr_seed{seed}.npz", exp.fingerprint)
    write_outputs(out, report, exp.runs)


def _eval(config, exp: Experiment, out: Path, args) -> None:
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    model = load_checkpoint(args.checkpoint)
    ds, splits = exp.dataset(), exp.splits()
    results = {
        name: rank_and_score(model, ds, split, config.model.n_max, config.eval_batch_size).to_dict()
        for name, split in (("val", splits[1]), ("test", splits[2]))
    }
    report = exp._report("eval", [], checkpoint=str(args.checkpoint), model_fingerprint=model.fingerprint(), metrics=results)
    write_outputs(out, report, [])


def _ablate(config, exp: Experiment, out: Path, args) -> None:
    write_outputs(out, exp.run_ablations(), exp.runs)


def _noise(config, exp: Experiment, out: Path, args) -> None:
    write_outputs(out, exp.run_noise(), exp.runs)


def _sweep(config, exp: Experiment, out: Path, args) -> None:
    report, rows = exp.run_token_sweep()
    write_outputs(out, report, exp.runs)
    write_sweep_csv(out / "sweep.csv", rows)


COMMANDS = {
    "synth": (_synth, "generate the synthetic multi-intent dataset"),
    "pretrain": (_pretrain, "train and freeze the backbone used by the intent distiller"),
    "train": (_train, "train the baseline and IGR-SR on shared splits"),
    "eval": (_eval, "score a saved checkpoint with full ranking"),
    "ablate": (_ablate, "train every ablation variant"),
    "noise": (_noise, "clean vs noise-injected training"),
    "sweep": (_sweep, "prefix/intent token-count grid"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igrsr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="TOML or JSON experiment config (defaults when omitted)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's seed list")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--checkpoint", type=Path, help="model archive written by train or pretrain")
        if name == "train":
            p.add_argument("--backbone", type=Path, help="frozen backbone archive from pretrain")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        exp = Experiment(config)
        COMMANDS[args.command][0](config, exp, args.out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, EmptyDatasetError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(json.dumps({"command": args.command, "out": str(args.out)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
