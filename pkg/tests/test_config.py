import pytest
import yaml

from nabkit.attacks import TargetMode, TriggerKind
from nabkit.config import (
    ExperimentConfig,
    build_stamp,
    build_target_map,
    build_trigger,
    config_hash,
    config_to_yaml,
    load_config,
    normalize_trigger,
    parse_config,
    render_config,
)
from nabkit.errors import ConfigError


class TestParsing:
    def test_empty_gives_defaults(self):
        config = parse_config({})
        assert config.seed == 0
        assert config.dataset.name == "synthetic"
        assert config.attack.poison_rate == 0.1
        assert config.defense.detection_rate == 0.05
        assert config.attack.target == {"mode": "all_to_one", "target_class": 0}
        assert config.defense.stamp == {"height": 2, "width": 2, "row": 0, "col": 0, "value": 0.0}
        assert config.training.epochs == 20

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config({"datasets": {}})

    def test_unknown_section_key(self):
        with pytest.raises(ConfigError, match="train_szie"):
            parse_config({"dataset": {"train_szie": 100}})

    def test_unknown_trigger_key_for_kind(self):
        with pytest.raises(ConfigError):
            parse_config({"attack": {"trigger": {"kind": "patch", "alpha": 0.2}}})

    def test_unknown_detector(self):
        with pytest.raises(ConfigError, match="magic"):
            parse_config({"defense": {"detector": {"name": "magic"}}})

    def test_unknown_relabeler_key(self):
        with pytest.raises(ConfigError):
            parse_config({"defense": {"relabeler": {"name": "nc", "recipes": "x"}}})

    def test_bad_eval_mode(self):
        with pytest.raises(ConfigError, match="mode"):
            parse_config({"evaluation": {"modes": ["stamped"]}})

    def test_bad_output_format(self):
        with pytest.raises(ConfigError, match="format"):
            parse_config({"output": {"formats": ["xml"]}})

    def test_trigger_defaults_filled(self):
        config = parse_config({"attack": {"trigger": {"kind": "warp"}}})
        assert config.attack.trigger == {
            "kind": "warp", "grid_size": 4, "strength": 0.5, "noise_rate": 0.2, "seed": 0,
        }

    def test_detector_defaults_filled(self):
        config = parse_config({"defense": {"detector": {"name": "oracle"}}})
        assert config.defense.detector == {"name": "oracle", "detection_accuracy": 1.0}


class TestRoundTrip:
    def test_parse_render_identity_defaults(self):
        config = parse_config({})
        assert parse_config(render_config(config)) == config

    def test_parse_render_identity_custom(self):
        config = parse_config({
            "seed": 9,
            "dataset": {"name": "synthetic", "train_size": 100, "class_count": 3},
            "attack": {
                "trigger": {"kind": "blend", "alpha": 0.3},
                "target": {"mode": "all_to_all"},
                "poison_rate": 0.2,
            },
            "defense": {
                "detector": {"name": "spectre"},
                "relabeler": {"name": "vd", "epochs": 5},
                "detection_rate": 0.02,
            },
            "training": {"architecture": "resnet-18", "epochs": 2},
            "evaluation": {"modes": ["plain"]},
            "output": {"directory": "out", "formats": ["json"]},
        })
        assert parse_config(render_config(config)) == config

    def test_yaml_round_trip(self):
        config = parse_config({"seed": 4, "attack": {"poison_rate": 0.05}})
        assert parse_config(yaml.safe_load(config_to_yaml(config))) == config

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(config_to_yaml(parse_config({"seed": 11})))
        assert load_config(path).seed == 11


class TestBuilders:
    def test_build_patch_trigger(self):
        trig = build_trigger(normalize_trigger({"kind": "patch", "patch_size": 5, "seed": 2}))
        assert trig.kind == TriggerKind.PATCH
        assert trig.params.size == 5 and trig.seed == 2

    def test_build_clean_label_trigger(self):
        spec = normalize_trigger({"kind": "clean_label", "epsilon": 0.1})
        trig = build_trigger(spec, surrogate="stub")
        assert trig.kind == TriggerKind.CLEAN_LABEL
        assert trig.params.epsilon == 0.1
        assert trig.params.surrogate == "stub"

    def test_build_target_map(self):
        tm = build_target_map({"mode": "all_to_all", "target_class": 0})
        assert tm.mode == TargetMode.ALL_TO_ALL

    def test_build_stamp(self):
        stamp = build_stamp({"height": 3, "width": 1, "row": 2, "col": 2, "value": 0.5})
        assert stamp.height == 3 and stamp.value == 0.5


class TestHash:
    def test_stable(self):
        assert config_hash(parse_config({})) == config_hash(parse_config({}))

    def test_sensitive_to_changes(self):
        a = parse_config({})
        b = parse_config({"seed": 1})
        c = parse_config({"attack": {"poison_rate": 0.2}})
        assert len({config_hash(a), config_hash(b), config_hash(c)}) == 3
