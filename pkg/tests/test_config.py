from pathlib import Path

import numpy as np
import pytest

from ppfa.xprunner.config import ConfigError, ExperimentConfig, load_config, parse_config
from ppfa.xprunner.data import write_idx

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_empty_config_uses_defaults():
    cfg = parse_config({})
    assert cfg.rounds == 200 and cfg.clients == 4 and cfg.batch_size == 4 and cfg.eta == 0.1
    assert cfg.mechanism is None and cfg.attack_round == 200
    assert {"seed", "rounds", "eta", "attack_round", "model.kind", "learner.M"} <= set(cfg.defaults_applied)
    assert cfg.privacy.attack_rounds == cfg.attack.iterations


def test_explicit_keys_are_not_reported_as_defaults():
    cfg = parse_config({"rounds": 10, "learner": {"M": 3}})
    assert "rounds" not in cfg.defaults_applied and "learner.M" not in cfg.defaults_applied
    assert cfg.attack_round == 10


@pytest.mark.parametrize("raw,fragment", [
    ({"round": 5}, "'round'"),
    ({"learner": {"steps": 5}}, "'learner.steps'"),
    ({"rounds": "ten"}, "rounds"),
    ({"rounds": 2.5}, "rounds"),
    ({"eta": True}, "eta"),
    ({"learner": {"M": 0}}, "learner"),
    ({"mechanism": "PL-Fancy"}, "mechanism"),
    ({"mechanism": "PL-Learn"}, "budgets"),
    ({"mechanism": "PL-Learn", "budget": 0.5, "budgets": [0.5]}, "budget"),
    ({"mechanism": "PL-Learn", "budget": 1.5}, "budgets"),
    ({"variants": ["PL-Learn", "DP-Learn"], "budgets": [0.5]}, "variants"),
    ({"rounds": 10, "attack_round": 11}, "attack_round"),
    ({"clip_norm": -1.0}, "clip_norm"),
    ({"seeds": [1, 2.0]}, "seeds"),
    ({"dataset": {"kind": "imagenet"}}, "dataset.kind"),
    ({"dataset": {"kind": "digits-idx"}}, "dataset.train_images"),
    ({"attack": {"known_label": False}}, "attack"),
])
def test_invalid_configs_name_the_key(raw, fragment):
    with pytest.raises(ConfigError) as e:
        parse_config(raw)
    assert fragment in str(e.value)


def test_budget_and_budgets_forms():
    assert parse_config({"mechanism": "DP-Learn", "budget": 400}).budgets == (400.0,)
    assert parse_config({"mechanism": "DP-Learn", "budgets": [80, 200]}).budgets == (80.0, 200.0)


def test_mechanism_none_and_clip_false():
    cfg = parse_config({"mechanism": "none", "clip_norm": False})
    assert cfg.mechanism is None and cfg.clip_for(None) is None
    dp = parse_config({"mechanism": "DP-Learn", "budget": 80})
    assert dp.clip_for("DP-Learn") == 500.0 and dp.clip_for("PL-Learn") is None
    assert parse_config({"clip_norm": 3}).clip_for("DP-Learn") == 3.0


def test_idx_paths_must_exist(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 4, 4)))
    write_idx(tmp_path / "lab", np.zeros(2))
    table = {"kind": "digits-idx", "train_images": "img", "train_labels": "lab",
             "test_images": "img", "test_labels": "missing"}
    with pytest.raises(ConfigError, match="test_labels"):
        parse_config({"dataset": table}, base_dir=tmp_path)
    table["test_labels"] = "lab"
    assert parse_config({"dataset": table}, base_dir=tmp_path).dataset.kind == "digits-idx"


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("rounds = = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.resolve_path("x").parent == CONFIGS


def test_resolved_json_is_stable():
    a = parse_config({"rounds": 3}).to_json()
    assert a == parse_config({"rounds": 3}).to_json()
    assert '"rounds": 3' in a
