"""Command-line front end.

Verbs: run, sweep-da-pla, sweep-mu-lambda, vaccinate, report, make-dataset.
Every experiment is driven by a YAML config; common flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, normalize_trigger, parse_config
from .dataset import DATA_ROOT_ENV
from .errors import NabkitError
from .reporting import render_summary


def _add_common(parser: argparse.ArgumentParser, needs_config: bool = True) -> None:
    if needs_config:
        parser.add_argument("-c", "--config", help="YAML experiment config (defaults apply if omitted)")
    parser.add_argument("--seed", type=int, help="override the experiment seed (data and training)")
    parser.add_argument("--out", help="output root directory (overrides config output.directory)")
    parser.add_argument("--data-root", help=f"dataset root directory (overrides ${DATA_ROOT_ENV})")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded deterministic torch kernels")
    parser.add_argument("--force", action="store_true", help="overwrite an existing output directory")


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else parse_config({})
    if args.seed is not None:
        config.seed = args.seed
        config.training.seed = args.seed
    if args.data_root:
        config.dataset.root = args.data_root
    return config


def _grid(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _print_cells(cells) -> None:
    for cell in cells:
        coords = " ".join(f"{k}={v}" for k, v in cell.coords.items())
        if cell.status != "ok":
            print(f"{coords}  {cell.status}: {cell.reason}")
            continue
        parts = []
        for mode, rep in cell.result.metrics.items():
            for name in ("asr", "ca", "dsr"):
                value = getattr(rep, name)
                if value is not None:
                    parts.append(f"{mode}_{name}={value:.2f}")
        print(f"{coords}  {' '.join(parts)}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="nabkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full pipeline: poison, defend, train, evaluate")
    _add_common(p_run)

    p_dapla = sub.add_parser("sweep-da-pla",
                             help="grid over detection accuracy and pseudo-label accuracy")
    _add_common(p_dapla)
    p_dapla.add_argument("--da", required=True, help="comma-separated detection accuracies")
    p_dapla.add_argument("--pla", required=True, help="comma-separated pseudo-label accuracies")

    p_mulam = sub.add_parser("sweep-mu-lambda",
                             help="grid over detection rate and poisoning rate")
    _add_common(p_mulam)
    p_mulam.add_argument("--mu", required=True, help="comma-separated detection rates (0 disables defense)")
    p_mulam.add_argument("--lam", required=True, help="comma-separated poisoning rates")

    p_vacc = sub.add_parser("vaccinate", help="self-poison with a known trigger and defend against it")
    _add_common(p_vacc)
    p_vacc.add_argument("--defender-trigger", default="patch",
                        help="defender trigger kind (patch, blend, warp)")
    p_vacc.add_argument("--target-class", type=int, required=True,
                        help="target class of the defender's bait attack")
    p_vacc.add_argument("--vaccination-rate", type=float, default=0.1)
    p_vacc.add_argument("--process-fraction", type=float, default=1.0)
    p_vacc.add_argument("--no-attacker", action="store_true",
                        help="drop the configured attack and vaccinate only")

    p_report = sub.add_parser("report", help="render tables and plots for a run directory")
    p_report.add_argument("run_dir", help="directory produced by run or a sweep")

    p_make = sub.add_parser("make-dataset", help="write clean and poisoned dataset containers")
    _add_common(p_make)
    p_make.add_argument("--dest", required=True, help="directory for the container files")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except NabkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    from . import experiment

    if args.command == "run":
        config = _load(args)
        result = experiment.run(config, out_root=args.out, force=args.force,
                                deterministic=args.deterministic)
        print(render_summary(result.metrics, result.diagnostics))
        print(f"artifacts: {result.run_dir}")
        return 0

    if args.command == "sweep-da-pla":
        config = _load(args)
        cells = experiment.sweep_da_pla(config, _grid(args.da), _grid(args.pla),
                                        out_root=args.out, force=args.force,
                                        deterministic=args.deterministic)
        _print_cells(cells)
        return 0

    if args.command == "sweep-mu-lambda":
        config = _load(args)
        cells = experiment.sweep_mu_lambda(config, _grid(args.mu), _grid(args.lam),
                                           out_root=args.out, force=args.force,
                                           deterministic=args.deterministic)
        _print_cells(cells)
        return 0

    if args.command == "vaccinate":
        config = _load(args)
        outcome = experiment.vaccinate(
            config,
            defender_trigger=normalize_trigger({"kind": args.defender_trigger}, "defender_trigger"),
            target_class=args.target_class,
            vaccination_rate=args.vaccination_rate,
            process_fraction=args.process_fraction,
            attacker_enabled=not args.no_attacker,
            out_root=args.out, force=args.force, deterministic=args.deterministic,
        )
        print(render_summary(outcome.result.metrics, outcome.result.diagnostics))
        print(f"artifacts: {outcome.result.run_dir}")
        return 0

    if args.command == "report":
        from .reporting import report

        outputs = report(args.run_dir)
        for kind, paths in outputs.items():
            for path in paths:
                print(f"{kind}: {path}")
        return 0

    if args.command == "make-dataset":
        config = _load(args)
        paths = experiment.make_dataset(config, args.dest, force=args.force)
        print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
