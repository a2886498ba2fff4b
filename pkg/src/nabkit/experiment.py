"""End-to-end pipeline orchestration: load, poison, defend, train, evaluate.

Also implements the sweep protocols (detection-accuracy x pseudo-label
accuracy with controlled components, detection rate x poisoning rate with
real components) and the vaccination experiment.
"""

from __future__ import annotations

import copy
import csv
import json
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .attacks import (
    TargetMap,
    TriggerKind,
    TriggerSpec,
    apply_trigger,
    poison_dataset,
)
from .config import (
    ExperimentConfig,
    build_stamp,
    build_target_map,
    build_trigger,
    config_hash,
    config_to_yaml,
)
from .container import save_split
from .dataset import (
    DatasetSplit,
    LabeledExample,
    PoisonManifest,
    Provenance,
    load_dataset,
    split_verified,
    subsample,
)
from .defense import NABDataset, nab_transform, stamp_rate
from .detection import (
    DetectionReport,
    detect_lga,
    detect_ln,
    detect_oracle,
    detect_spectre,
    detection_accuracy,
    que_scores,
)
from .errors import ArgumentError, ConfigError, StageError
from .metrics import MetricsReport, compute_core_metrics, compute_filter_metrics
from .relabeling import (
    FeatureExtractor,
    PseudoLabelMap,
    nc_pseudo_labels,
    pseudo_label_accuracy,
    synthetic_pseudo_labels,
    train_feature_extractor,
    vd_pseudo_labels,
)
from .seeding import rng_for, round_count
from .stamping import StampSpec
from .training import EvalProbe, TrainConfig, TrainResult, train

_STREAM_VACCINE_SELECT = 61
_STREAM_VACCINE_PROCESS = 62


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def set_deterministic() -> None:
    """Single-threaded, deterministic torch kernels for bit-stable runs."""
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


@dataclass
class PreparedData:
    """Everything upstream of the defense, shared across sweep cells."""

    train_clean: DatasetSplit
    test: DatasetSplit
    poisoned: DatasetSplit
    manifest: PoisonManifest
    trigger: TriggerSpec
    target_map: TargetMap


@dataclass
class RunResult:
    config: ExperimentConfig
    run_dir: Optional[Path]
    metrics: dict[str, MetricsReport]
    diagnostics: dict
    train_result: TrainResult
    manifest: PoisonManifest
    detection: Optional[DetectionReport] = None
    labels: Optional[PseudoLabelMap] = None

    def metric(self, mode: str, name: str) -> float:
        value = getattr(self.metrics[mode], name)
        if value is None:
            raise KeyError(f"metric {name} missing from mode {mode}")
        return value


def _prepare(config: ExperimentConfig, run_dir: Path | None = None) -> PreparedData:
    with _stage("load"):
        pair = load_dataset(
            config.dataset.name,
            config.dataset.root,
            seed=config.dataset.seed,
            train_size=config.dataset.train_size,
            test_size=config.dataset.test_size,
            class_count=config.dataset.class_count,
        )
        train_clean, test = pair.train, pair.test
        if config.dataset.subsample_fraction is not None:
            train_clean = subsample(train_clean, config.dataset.subsample_fraction, config.dataset.seed)

    surrogate = None
    if config.attack.trigger["kind"] == "clean_label":
        with _stage("surrogate"):
            surrogate_config = dc_replace(
                config.training, epochs=config.attack.trigger["surrogate_epochs"]
            )
            surrogate = train(train_clean, surrogate_config).classifier

    with _stage("poison"):
        trigger = build_trigger(config.attack.trigger, surrogate=surrogate)
        target_map = build_target_map(config.attack.target)
        poisoned, manifest = poison_dataset(
            train_clean, trigger, target_map, config.attack.poison_rate, config.seed
        )
        if run_dir is not None:
            _write_json(run_dir / "poison_manifest.json", manifest.to_json_dict())
    return PreparedData(train_clean, test, poisoned, manifest, trigger, target_map)


def _build_extractor(config: ExperimentConfig, prepared: PreparedData,
                     recipe: str, epochs: int) -> FeatureExtractor:
    if recipe == "verified-supervised":
        verified, _ = split_verified(prepared.train_clean, config.defense.verified_fraction, config.seed)
        data = verified
    elif recipe == "contrastive":
        data = prepared.poisoned
    else:
        raise ConfigError(f"unknown extractor recipe '{recipe}'")
    return train_feature_extractor(
        data, recipe=recipe, epochs=epochs, seed=config.seed,
        architecture=config.training.architecture,
    )


def _detector_factory(config: ExperimentConfig, prepared: PreparedData,
                      extractor: FeatureExtractor | None) -> Callable[[DatasetSplit, float], DetectionReport]:
    spec = config.defense.detector
    name = spec["name"]
    if name == "oracle":
        return lambda dp, rate: detect_oracle(
            dp, prepared.manifest, rate, spec["detection_accuracy"], config.seed
        )
    if name == "lga":
        return lambda dp, rate: detect_lga(
            dp, rate, gamma=spec["gamma"], isolation_epochs=spec["isolation_epochs"],
            train_config=config.training,
        )
    if name == "ln":
        return lambda dp, rate: detect_ln(
            dp, rate, extractor, sce_alpha=spec["sce_alpha"], sce_beta=spec["sce_beta"],
            epochs=spec["epochs"], clip=spec["clip"], seed=config.seed,
        )
    if name == "spectre":
        score_fn = que_scores if spec["scoring"] == "que" else None
        feature_cache: dict[int, FeatureExtractor] = {}

        def spectre_detector(dp: DatasetSplit, rate: float) -> DetectionReport:
            # the spectral signature needs representations of a model that
            # has learned the inspected data; trained once per split
            if id(dp) not in feature_cache:
                fe_config = dc_replace(config.training, epochs=spec["feature_epochs"])
                feature_cache[id(dp)] = FeatureExtractor(
                    train(dp, fe_config).classifier, recipe="supervised"
                )
            return detect_spectre(
                dp, rate, feature_cache[id(dp)],
                projection_dim=spec["projection_dim"], score_fn=score_fn,
            )

        return spectre_detector
    raise ConfigError(f"unknown detector '{name}'")


def _needs_extractor(config: ExperimentConfig) -> bool:
    # spectre trains its own representation on the inspected split
    return config.defense.detector["name"] == "ln" or \
        config.defense.relabeler["name"] == "nc"


def _stamp_overlaps_trigger(trigger: TriggerSpec, stamp: StampSpec, image_shape) -> bool:
    h, w, _ = image_shape
    if trigger.kind in (TriggerKind.PATCH, TriggerKind.CLEAN_LABEL):
        size = trigger.params.size if trigger.kind == TriggerKind.PATCH else trigger.params.patch.size
        trig_rows = range(h - size, h)
        trig_cols = range(w - size, w)
        stamp_rows = range(stamp.row, stamp.row + stamp.height)
        stamp_cols = range(stamp.col, stamp.col + stamp.width)
        return bool(set(trig_rows) & set(stamp_rows)) and bool(set(trig_cols) & set(stamp_cols))
    return False


def _run_defense(config: ExperimentConfig, prepared: PreparedData, run_dir: Path | None):
    """Detect, relabel and transform; returns (nab, report, labels, diagnostics)."""
    extractor = None
    if _needs_extractor(config):
        with _stage("extractor"):
            recipe = config.defense.relabeler.get("recipe", "verified-supervised")
            epochs = config.defense.relabeler.get("extractor_epochs", 20)
            extractor = _build_extractor(config, prepared, recipe, epochs)

    with _stage("detect"):
        detector = _detector_factory(config, prepared, extractor)
        report = detector(prepared.poisoned, config.defense.detection_rate)
        if run_dir is not None:
            _write_json(run_dir / "detection.json", report.to_json_dict())

    with _stage("relabel"):
        rspec = config.defense.relabeler
        if rspec["name"] == "synthetic":
            labels = synthetic_pseudo_labels(
                prepared.poisoned, prepared.poisoned.ids, rspec["accuracy"], config.seed,
                truth=prepared.train_clean,
            )
        elif rspec["name"] == "vd":
            verified, _ = split_verified(
                prepared.train_clean, config.defense.verified_fraction, config.seed
            )
            vd_config = dc_replace(config.training, epochs=rspec["epochs"])
            labels = vd_pseudo_labels(verified, prepared.poisoned, vd_config, seed=config.seed)
        elif rspec["name"] == "nc":
            labels = nc_pseudo_labels(
                prepared.poisoned, extractor, removal_rate=rspec["removal_rate"],
                detector=detector, seed=config.seed,
            )
        else:
            raise ConfigError(f"unknown relabeler '{rspec['name']}'")
        if run_dir is not None:
            _write_json(run_dir / "pseudo_labels.json", labels.to_json_dict())

    with _stage("transform"):
        stamp = build_stamp(config.defense.stamp)
        if _stamp_overlaps_trigger(prepared.trigger, stamp, prepared.poisoned.image_shape):
            warnings.warn("stamp region overlaps the attacker's trigger region")
        nab = nab_transform(prepared.poisoned, report, labels, stamp)
        if run_dir is not None:
            _write_json(run_dir / "nab.json", nab.stamped_extras())

    diagnostics = {
        "detection_accuracy": detection_accuracy(report, prepared.manifest),
        "pseudo_label_accuracy": pseudo_label_accuracy(
            labels, prepared.train_clean, report.suspected_ids
        ),
        "stamp_rate": stamp_rate(nab),
        "detection_method": report.method,
        "relabel_method": labels.method,
    }
    return nab, report, labels, diagnostics


def _execute(config: ExperimentConfig, prepared: PreparedData,
             run_dir: Path | None = None) -> RunResult:
    """Defense, training and evaluation over already-poisoned data."""
    defense_on = config.defense.enabled
    nab = report = labels = None
    diagnostics: dict = {}
    if defense_on:
        nab, report, labels, diagnostics = _run_defense(config, prepared, run_dir)
        train_data = nab.split
    else:
        train_data = prepared.poisoned

    stamp = build_stamp(config.defense.stamp) if defense_on else None
    with _stage("train"):
        probe = EvalProbe(prepared.test, prepared.trigger, prepared.target_map, stamp)
        result = train(train_data, config.training, probe=probe)
        if run_dir is not None:
            result.classifier.save(run_dir / "model.pt", config_hash(config))
            _write_trace_csv(run_dir / "trace.csv", result)

    with _stage("evaluate"):
        metrics: dict[str, MetricsReport] = {}
        clf = result.classifier
        for mode in config.evaluation.modes:
            if mode == "plain":
                metrics[mode] = compute_core_metrics(
                    clf, prepared.test, prepared.trigger, prepared.target_map, None
                )
            elif mode == "defended":
                if stamp is None:
                    continue  # no stamp without the defense
                metrics[mode] = compute_core_metrics(
                    clf, prepared.test, prepared.trigger, prepared.target_map, stamp
                )
            elif mode == "filtered":
                if stamp is None:
                    continue
                metrics[mode] = compute_filter_metrics(clf, prepared.test, prepared.trigger, stamp)
        h = config_hash(config)
        for mode, rep in metrics.items():
            rep.seed = config.seed
            rep.config_hash = h
            rep.metadata.update(diagnostics)
        if run_dir is not None:
            _write_run_outputs(run_dir, config, metrics, diagnostics, result)

    return RunResult(
        config=config, run_dir=run_dir, metrics=metrics, diagnostics=diagnostics,
        train_result=result, manifest=prepared.manifest, detection=report, labels=labels,
    )


def _prepare_run_dir(config: ExperimentConfig, out_root: str | Path | None,
                     force: bool, kind: str = "run") -> Path:
    root = Path(out_root if out_root is not None else config.output.directory)
    run_dir = root / f"{kind}-{config_hash(config)}"
    if run_dir.exists():
        if not force:
            raise ArgumentError(
                f"output directory {run_dir} already exists; pass force to overwrite"
            )
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(config_to_yaml(config))
    return run_dir


def run(config: ExperimentConfig, out_root: str | Path | None = None,
        force: bool = False, deterministic: bool = False, write: bool = True) -> RunResult:
    """Execute the full pipeline for one config; artifacts land in one directory."""
    if deterministic:
        set_deterministic()
    run_dir = _prepare_run_dir(config, out_root, force) if write else None
    prepared = _prepare(config, run_dir)
    return _execute(config, prepared, run_dir)


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _write_trace_csv(path: Path, result: TrainResult) -> None:
    rows = result.trace_rows()
    if not rows:
        return
    keys = sorted({k for row in rows for k in row}, key=lambda k: (k != "epoch", k))
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def merged_metrics_dict(metrics: dict[str, MetricsReport], diagnostics: dict,
                        config: ExperimentConfig) -> dict:
    return {
        "config_hash": config_hash(config),
        "seed": config.seed,
        "modes": {mode: rep.to_json_dict() for mode, rep in metrics.items()},
        "diagnostics": diagnostics,
    }


def _write_run_outputs(run_dir: Path, config: ExperimentConfig,
                       metrics: dict[str, MetricsReport], diagnostics: dict,
                       result: TrainResult) -> None:
    from .reporting import render_summary, write_run_plots

    _write_json(run_dir / "metrics.json", merged_metrics_dict(metrics, diagnostics, config))
    if "table" in config.output.formats:
        (run_dir / "summary.txt").write_text(render_summary(metrics, diagnostics))
    if "plots" in config.output.formats:
        write_run_plots(run_dir, result)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepCell:
    coords: dict[str, float]
    status: str  # ok | infeasible
    result: Optional[RunResult] = None
    reason: str = ""


def _cell_metrics_row(cell: SweepCell) -> dict:
    row = dict(cell.coords)
    row["status"] = cell.status
    if cell.result is None:
        return row
    for mode, rep in cell.result.metrics.items():
        for name in MetricsReport._FIELDS:
            value = getattr(rep, name)
            if value is not None:
                row[f"{mode}_{name}"] = round(value, 4)
    for key in ("detection_accuracy", "pseudo_label_accuracy", "stamp_rate"):
        if key in cell.result.diagnostics:
            row[key] = round(cell.result.diagnostics[key], 4)
    return row


def _write_sweep_outputs(sweep_dir: Path, cells: list[SweepCell],
                         row_key: str, col_key: str,
                         matrix_metrics: tuple[str, ...]) -> None:
    rows = [_cell_metrics_row(c) for c in cells]
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(sweep_dir / "cells.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)

    row_values = sorted({c.coords[row_key] for c in cells})
    col_values = sorted({c.coords[col_key] for c in cells})
    lookup = {(c.coords[row_key], c.coords[col_key]): c for c in cells}
    for metric in matrix_metrics:
        with open(sweep_dir / f"{metric}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"{row_key}\\{col_key}"] + [str(v) for v in col_values])
            for rv in row_values:
                out_row: list[str] = [str(rv)]
                for cv in col_values:
                    cell = lookup.get((rv, cv))
                    value = ""
                    if cell and cell.status == "ok" and cell.result:
                        for mode in ("defended", "filtered", "plain"):
                            rep = cell.result.metrics.get(mode)
                            if rep is not None and getattr(rep, metric, None) is not None:
                                value = f"{getattr(rep, metric):.4f}"
                                break
                    out_row.append(value)
                writer.writerow(out_row)


def sweep_da_pla(config: ExperimentConfig, da_grid: list[float], pla_grid: list[float],
                 out_root: str | Path | None = None, force: bool = False,
                 deterministic: bool = False, write: bool = True) -> list[SweepCell]:
    """One defended run per (detection accuracy, pseudo-label accuracy) cell,
    sharing the poisoned data; controlled components are implied."""
    if not da_grid or not pla_grid:
        raise ArgumentError("da and pla grids must be non-empty")
    if deterministic:
        set_deterministic()
    sweep_dir = _prepare_run_dir(config, out_root, force, kind="sweep-da-pla") if write else None
    prepared = _prepare(config, sweep_dir)
    cells: list[SweepCell] = []
    for da in da_grid:
        for pla in pla_grid:
            cell_config = copy.deepcopy(config)
            cell_config.defense.enabled = True
            cell_config.defense.detector = {"name": "oracle", "detection_accuracy": da}
            cell_config.defense.relabeler = {"name": "synthetic", "accuracy": pla}
            coords = {"da": da, "pla": pla}
            cell_dir = sweep_dir / f"cell-da{da}-pla{pla}" if sweep_dir else None
            if cell_dir is not None:
                cell_dir.mkdir(parents=True, exist_ok=True)
            try:
                result = _execute(cell_config, prepared, cell_dir)
                cells.append(SweepCell(coords=coords, status="ok", result=result))
            except StageError as exc:
                if isinstance(exc.__cause__, ArgumentError):
                    cells.append(SweepCell(coords=coords, status="infeasible", reason=str(exc)))
                else:
                    raise
    if sweep_dir is not None:
        _write_sweep_outputs(sweep_dir, cells, "da", "pla", ("ca", "ba", "asr", "dsr"))
    return cells


def sweep_mu_lambda(config: ExperimentConfig, mu_grid: list[float], lambda_grid: list[float],
                    out_root: str | Path | None = None, force: bool = False,
                    deterministic: bool = False, write: bool = True) -> list[SweepCell]:
    """One run per (detection rate, poisoning rate) cell using the configured
    real detector; mu = 0 disables the defense."""
    if not mu_grid or not lambda_grid:
        raise ArgumentError("mu and lambda grids must be non-empty")
    if deterministic:
        set_deterministic()
    sweep_dir = _prepare_run_dir(config, out_root, force, kind="sweep-mu-lambda") if write else None
    cells: list[SweepCell] = []
    for lam in lambda_grid:
        lam_config = copy.deepcopy(config)
        lam_config.attack.poison_rate = lam
        prepared = _prepare(lam_config, None)
        for mu in mu_grid:
            cell_config = copy.deepcopy(lam_config)
            if mu == 0.0:
                cell_config.defense.enabled = False
            else:
                cell_config.defense.detection_rate = mu
            coords = {"mu": mu, "lambda": lam}
            cell_dir = sweep_dir / f"cell-mu{mu}-lam{lam}" if sweep_dir else None
            if cell_dir is not None:
                cell_dir.mkdir(parents=True, exist_ok=True)
            try:
                result = _execute(cell_config, prepared, cell_dir)
                cells.append(SweepCell(coords=coords, status="ok", result=result))
            except StageError as exc:
                if isinstance(exc.__cause__, ArgumentError):
                    cells.append(SweepCell(coords=coords, status="infeasible", reason=str(exc)))
                else:
                    raise
    if sweep_dir is not None:
        _write_sweep_outputs(sweep_dir, cells, "mu", "lambda", ("ca", "asr"))
    return cells


# ---------------------------------------------------------------------------
# vaccination
# ---------------------------------------------------------------------------


@dataclass
class VaccinationResult:
    result: RunResult
    bait_ids: frozenset[int]
    processed_ids: frozenset[int]


def vaccinate(config: ExperimentConfig, defender_trigger: dict, target_class: int,
              vaccination_rate: float = 0.1, process_fraction: float = 1.0,
              attacker_enabled: bool = True,
              out_root: str | Path | None = None, force: bool = False,
              deterministic: bool = False, write: bool = True) -> VaccinationResult:
    """Self-poison with a known trigger, stamp-and-relabel part of the bait
    with the known true labels, and train against the (optional) real attack.

    The defender knows its own poisoned ids and their original labels, so no
    detection or relabeling strategy is involved. ``target_class`` must be
    given explicitly.
    """
    if not (0.0 < vaccination_rate < 1.0):
        raise ArgumentError(f"vaccination_rate must be in (0, 1), got {vaccination_rate}")
    if not (0.0 <= process_fraction <= 1.0):
        raise ArgumentError(f"process_fraction must be in [0, 1], got {process_fraction}")
    if deterministic:
        set_deterministic()
    work_config = copy.deepcopy(config)
    if attacker_enabled:
        run_dir = _prepare_run_dir(work_config, out_root, force, kind="vaccinate") if write else None
        prepared = _prepare(work_config, run_dir)
    else:
        run_dir = _prepare_run_dir(work_config, out_root, force, kind="vaccinate") if write else None
        with _stage("load"):
            pair = load_dataset(
                config.dataset.name, config.dataset.root, seed=config.dataset.seed,
                train_size=config.dataset.train_size, test_size=config.dataset.test_size,
                class_count=config.dataset.class_count,
            )
        trigger = build_trigger(config.attack.trigger)
        target_map = build_target_map(config.attack.target)
        base_manifest = PoisonManifest(frozenset(), trigger.name, target_map.name, 0.0, config.seed)
        prepared = PreparedData(pair.train, pair.test, pair.train, base_manifest, trigger, target_map)

    with _stage("vaccinate"):
        from .config import normalize_trigger

        bait_trigger = build_trigger(normalize_trigger(defender_trigger, "defender_trigger"))
        stamp = build_stamp(config.defense.stamp)
        if _stamp_overlaps_trigger(bait_trigger, stamp, prepared.poisoned.image_shape):
            warnings.warn("stamp region overlaps the defender's bait trigger region")
        base = prepared.poisoned
        n = len(base)
        count = round_count(vaccination_rate * n)
        rng = rng_for(config.seed, _STREAM_VACCINE_SELECT)
        positions = rng.choice(n, size=count, replace=False) if count else np.array([], dtype=int)
        process_count = round_count(process_fraction * count)
        process_rng = rng_for(config.seed, _STREAM_VACCINE_PROCESS)
        processed_positions = set(
            int(positions[i]) for i in process_rng.choice(count, size=process_count, replace=False)
        ) if process_count else set()

        next_id = max(base.ids) + 1 if len(base) else 0
        bait_examples: list[LabeledExample] = []
        bait_ids: set[int] = set()
        processed_ids: set[int] = set()
        for pos in positions:
            source = base.examples[int(pos)]
            poisoned_img = apply_trigger(source.image, bait_trigger, per_sample_seed=source.id)
            if int(pos) in processed_positions and source.label != target_class:
                from .stamping import apply_stamp

                bait_examples.append(LabeledExample(
                    id=next_id, image=apply_stamp(poisoned_img, stamp), label=source.label,
                    provenance=Provenance.DEFENDER_STAMPED,
                ))
                processed_ids.add(next_id)
            else:
                bait_examples.append(LabeledExample(
                    id=next_id, image=poisoned_img, label=target_class,
                    provenance=Provenance.ATTACKER_POISONED,
                ))
            bait_ids.add(next_id)
            next_id += 1
        merged = DatasetSplit(
            name=base.name, class_count=base.class_count,
            examples=list(base.examples) + bait_examples,
        )

    with _stage("train"):
        probe = EvalProbe(prepared.test, prepared.trigger, prepared.target_map, None)
        result = train(merged, config.training, probe=probe)
        if run_dir is not None:
            result.classifier.save(run_dir / "model.pt", config_hash(work_config))
            _write_trace_csv(run_dir / "trace.csv", result)

    with _stage("evaluate"):
        metrics = {}
        if attacker_enabled:
            metrics["plain"] = compute_core_metrics(
                result.classifier, prepared.test, prepared.trigger, prepared.target_map, None
            )
        bait_report = compute_core_metrics(
            result.classifier, prepared.test, bait_trigger,
            TargetMap(target_class=target_class), None,
        )
        bait_report.mode = "bait"
        metrics["bait"] = bait_report
        diagnostics = {
            "bait_count": len(bait_ids),
            "processed_count": len(processed_ids),
            "vaccination_rate": vaccination_rate,
        }
        if run_dir is not None:
            _write_run_outputs(run_dir, work_config, metrics, diagnostics, result)

    run_result = RunResult(
        config=work_config, run_dir=run_dir, metrics=metrics, diagnostics=diagnostics,
        train_result=result, manifest=prepared.manifest,
    )
    return VaccinationResult(result=run_result, bait_ids=frozenset(bait_ids),
                             processed_ids=frozenset(processed_ids))


# ---------------------------------------------------------------------------
# dataset materialization
# ---------------------------------------------------------------------------


def make_dataset(config: ExperimentConfig, out_dir: str | Path, force: bool = False) -> dict[str, Path]:
    """Write clean train/test and the poisoned train split as container files."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ArgumentError(f"output directory {out} is not empty; pass force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    prepared = _prepare(config, None)
    paths = {
        "train_clean": out / "train_clean.nabs",
        "test": out / "test.nabs",
        "train_poisoned": out / "train_poisoned.nabs",
    }
    save_split(prepared.train_clean, paths["train_clean"])
    save_split(prepared.test, paths["test"])
    save_split(prepared.poisoned, paths["train_poisoned"], manifest=prepared.manifest)
    return paths
