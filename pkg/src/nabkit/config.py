"""Experiment configuration: strict parsing, rendering, hashing.

Unknown keys are hard errors so typos cannot silently change a run.
Defaults mirror the reference setup: poisoning rate 0.1, detection rate
0.05, target class 0, 2x2 zero stamp in the upper-left corner.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .attacks import (
    BlendParams,
    CleanLabelParams,
    PatchParams,
    TargetMap,
    TargetMode,
    TriggerKind,
    TriggerSpec,
    WarpParams,
)
from .errors import ConfigError
from .stamping import StampSpec
from .training import TrainConfig

_TRIGGER_KEYS = {
    "patch": {"kind", "patch_size", "seed"},
    "blend": {"kind", "alpha", "pattern_path", "seed"},
    "warp": {"kind", "grid_size", "strength", "noise_rate", "seed"},
    "clean_label": {"kind", "epsilon", "steps", "step_size", "patch_size",
                    "surrogate_epochs", "seed"},
}

_TRIGGER_DEFAULTS = {
    "patch": {"patch_size": 3, "seed": 0},
    "blend": {"alpha": 0.2, "pattern_path": None, "seed": 0},
    "warp": {"grid_size": 4, "strength": 0.5, "noise_rate": 0.2, "seed": 0},
    "clean_label": {"epsilon": 32.0 / 255.0, "steps": 20, "step_size": None,
                    "patch_size": 3, "surrogate_epochs": 10, "seed": 0},
}

_DETECTOR_KEYS = {
    "oracle": {"name", "detection_accuracy"},
    "lga": {"name", "gamma", "isolation_epochs"},
    "ln": {"name", "sce_alpha", "sce_beta", "epochs", "clip"},
    "spectre": {"name", "projection_dim", "scoring", "feature_epochs"},
}

# isolation stops after one epoch: at desk scale the low-loss separation
# peaks there and washes out within another epoch or two
_DETECTOR_DEFAULTS = {
    "oracle": {"detection_accuracy": 1.0},
    "lga": {"gamma": 0.5, "isolation_epochs": 1},
    "ln": {"sce_alpha": 0.1, "sce_beta": 1.0, "epochs": 30, "clip": -4.0},
    # spectral scoring inspects representations of a model trained on the
    # poisoned split itself; the signature only fully forms once that model
    # has learned the backdoor, so it trains as long as the main pipeline
    "spectre": {"projection_dim": 16, "scoring": "quadratic", "feature_epochs": 20},
}

_RELABELER_KEYS = {
    "synthetic": {"name", "accuracy"},
    "vd": {"name", "epochs"},
    "nc": {"name", "removal_rate", "recipe", "extractor_epochs"},
}

# verified splits are small, so predictor and extractor training runs much
# longer than the main pipeline to get a comparable step count
_RELABELER_DEFAULTS = {
    "synthetic": {"accuracy": 1.0},
    "vd": {"epochs": 300},
    "nc": {"removal_rate": 0.2, "recipe": "verified-supervised", "extractor_epochs": 300},
}

_EVAL_MODES = ("plain", "defended", "filtered")
_OUTPUT_FORMATS = ("json", "table", "plots")


def _check_keys(section: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {path} (allowed: {sorted(allowed)})")


def _named_section(section: Any, keys: dict, defaults: dict, path: str) -> dict:
    if not isinstance(section, dict) or "name" not in section:
        raise ConfigError(f"{path} must be a mapping with a 'name' key")
    name = section["name"]
    if name not in keys:
        raise ConfigError(f"unknown {path} name '{name}' (expected one of {sorted(keys)})")
    _check_keys(section, keys[name], path)
    out = {"name": name, **defaults[name]}
    out.update(section)
    return out


def normalize_trigger(section: Any, path: str = "attack.trigger") -> dict:
    if not isinstance(section, dict) or "kind" not in section:
        raise ConfigError(f"{path} must be a mapping with a 'kind' key")
    kind = section["kind"]
    if kind not in _TRIGGER_KEYS:
        raise ConfigError(f"unknown trigger kind '{kind}' (expected one of {sorted(_TRIGGER_KEYS)})")
    _check_keys(section, _TRIGGER_KEYS[kind], path)
    out = {"kind": kind, **_TRIGGER_DEFAULTS[kind]}
    out.update(section)
    return out


def build_trigger(trigger: dict, surrogate=None) -> TriggerSpec:
    kind = trigger["kind"]
    seed = trigger.get("seed", 0)
    if kind == "patch":
        return TriggerSpec(TriggerKind.PATCH, PatchParams(size=trigger["patch_size"]), seed=seed)
    if kind == "blend":
        return TriggerSpec(
            TriggerKind.BLEND,
            BlendParams(alpha=trigger["alpha"], pattern_path=trigger["pattern_path"]),
            seed=seed,
        )
    if kind == "warp":
        return TriggerSpec(
            TriggerKind.WARP,
            WarpParams(grid_size=trigger["grid_size"], strength=trigger["strength"],
                       noise_rate=trigger["noise_rate"]),
            seed=seed,
        )
    if kind == "clean_label":
        return TriggerSpec(
            TriggerKind.CLEAN_LABEL,
            CleanLabelParams(
                epsilon=trigger["epsilon"], steps=trigger["steps"], step_size=trigger["step_size"],
                patch=PatchParams(size=trigger["patch_size"]), surrogate=surrogate,
            ),
            seed=seed,
        )
    raise ConfigError(f"unknown trigger kind '{kind}'")


def normalize_target(section: Any, path: str = "attack.target") -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{path} must be a mapping")
    _check_keys(section, {"mode", "target_class"}, path)
    out = {"mode": "all_to_one", "target_class": 0}
    out.update(section)
    if out["mode"] not in (m.value for m in TargetMode):
        raise ConfigError(f"unknown target mode '{out['mode']}'")
    return out


def build_target_map(target: dict) -> TargetMap:
    return TargetMap(mode=TargetMode(target["mode"]), target_class=target["target_class"])


def normalize_stamp(section: Any, path: str = "defense.stamp") -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{path} must be a mapping")
    _check_keys(section, {"height", "width", "row", "col", "value"}, path)
    out = {"height": 2, "width": 2, "row": 0, "col": 0, "value": 0.0}
    out.update(section)
    return out


def build_stamp(stamp: dict) -> StampSpec:
    return StampSpec(**stamp)


def _dataclass_from(section: Any, cls, path: str):
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"{path} must be a mapping")
    allowed = {f.name for f in fields(cls)}
    _check_keys(section, allowed, path)
    return cls(**section)


@dataclass
class DatasetSection:
    name: str = "synthetic"
    root: Optional[str] = None
    train_size: int = 4000
    test_size: int = 1000
    class_count: int = 4
    subsample_fraction: Optional[float] = None
    seed: int = 0


@dataclass
class AttackSection:
    trigger: dict = field(default_factory=lambda: normalize_trigger({"kind": "patch"}))
    target: dict = field(default_factory=lambda: normalize_target({}))
    poison_rate: float = 0.1


@dataclass
class DefenseSection:
    enabled: bool = True
    detection_rate: float = 0.05
    detector: dict = field(default_factory=lambda: {"name": "lga", **_DETECTOR_DEFAULTS["lga"]})
    relabeler: dict = field(default_factory=lambda: {"name": "nc", **_RELABELER_DEFAULTS["nc"]})
    verified_fraction: float = 0.05
    stamp: dict = field(default_factory=lambda: normalize_stamp({}))


@dataclass
class EvaluationSection:
    modes: list = field(default_factory=lambda: ["plain", "defended", "filtered"])


@dataclass
class OutputSection:
    directory: str = "runs"
    formats: list = field(default_factory=lambda: ["json", "table", "plots"])


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    attack: AttackSection = field(default_factory=AttackSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output: OutputSection = field(default_factory=OutputSection)


def parse_config(data: Any) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(data, {"seed", "dataset", "attack", "defense", "training", "evaluation", "output"},
                "config")
    dataset = _dataclass_from(data.get("dataset"), DatasetSection, "dataset")

    attack_raw = data.get("attack") or {}
    if not isinstance(attack_raw, dict):
        raise ConfigError("attack must be a mapping")
    _check_keys(attack_raw, {"trigger", "target", "poison_rate"}, "attack")
    attack = AttackSection(
        trigger=normalize_trigger(attack_raw.get("trigger", {"kind": "patch"})),
        target=normalize_target(attack_raw.get("target", {})),
        poison_rate=attack_raw.get("poison_rate", 0.1),
    )

    defense_raw = data.get("defense") or {}
    if not isinstance(defense_raw, dict):
        raise ConfigError("defense must be a mapping")
    _check_keys(defense_raw, {"enabled", "detection_rate", "detector", "relabeler",
                              "verified_fraction", "stamp"}, "defense")
    defaults = DefenseSection()
    defense = DefenseSection(
        enabled=defense_raw.get("enabled", defaults.enabled),
        detection_rate=defense_raw.get("detection_rate", defaults.detection_rate),
        detector=_named_section(defense_raw.get("detector", dict(defaults.detector)),
                                _DETECTOR_KEYS, _DETECTOR_DEFAULTS, "defense.detector"),
        relabeler=_named_section(defense_raw.get("relabeler", dict(defaults.relabeler)),
                                 _RELABELER_KEYS, _RELABELER_DEFAULTS, "defense.relabeler"),
        verified_fraction=defense_raw.get("verified_fraction", defaults.verified_fraction),
        stamp=normalize_stamp(defense_raw.get("stamp", {})),
    )

    training = _dataclass_from(data.get("training"), TrainConfig, "training")
    evaluation = _dataclass_from(data.get("evaluation"), EvaluationSection, "evaluation")
    for mode in evaluation.modes:
        if mode not in _EVAL_MODES:
            raise ConfigError(f"unknown evaluation mode '{mode}' (expected one of {_EVAL_MODES})")
    output = _dataclass_from(data.get("output"), OutputSection, "output")
    for fmt in output.formats:
        if fmt not in _OUTPUT_FORMATS:
            raise ConfigError(f"unknown output format '{fmt}' (expected one of {_OUTPUT_FORMATS})")
    return ExperimentConfig(
        seed=data.get("seed", 0),
        dataset=dataset, attack=attack, defense=defense,
        training=training, evaluation=evaluation, output=output,
    )


def render_config(config: ExperimentConfig) -> dict:
    return {
        "seed": config.seed,
        "dataset": asdict(config.dataset),
        "attack": asdict(config.attack),
        "defense": asdict(config.defense),
        "training": asdict(config.training),
        "evaluation": asdict(config.evaluation),
        "output": asdict(config.output),
    }


def config_to_yaml(config: ExperimentConfig) -> str:
    return yaml.safe_dump(render_config(config), sort_keys=True)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(yaml.safe_load(f))


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(render_config(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
