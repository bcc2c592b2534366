import filecmp

import numpy as np
import pytest

from ppfa.metrics import cap
from ppfa.xprunner.config import ConfigError, parse_config
from ppfa.xprunner.csvio import fmt, read_csv, write_csv
from ppfa.xprunner.sweep import run_sweep

RAW = {"rounds": 3, "attack_round": 3, "variants": ["DP-Learn", "DP-Identical"], "budgets": [80, 400],
       "seeds": [1, 2], "dataset": {"per_class": 5, "test_per_class": 5}, "learner": {"M": 2},
       "attack": {"iterations": 10}}


def test_sweep_is_deterministic_and_aggregates(tmp_path):
    cfg = parse_config(RAW)
    a = run_sweep(cfg, tmp_path / "a")
    run_sweep(cfg, tmp_path / "b")
    for name in ("tradeoff.csv", "tradeoff_seeds.csv", "cap.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)
    assert len(a.seed_rows) == 8 and len(a.rows) == 4
    acc = a.seed_matrix("DP-Learn", "accuracy")
    assert acc.shape == (2, 2)
    np.testing.assert_allclose(a.column("DP-Learn", "accuracy"), acc.mean(axis=1), rtol=1e-15)
    assert a.cap["DP-Learn"] == cap(a.points("DP-Learn"))
    assert [r["variant"] for r in read_csv(tmp_path / "a" / "cap.csv")] == ["DP-Learn", "DP-Identical"]


def test_sweep_requires_mechanism_and_budgets(tmp_path):
    with pytest.raises(ConfigError):
        run_sweep(parse_config({"rounds": 2}), tmp_path)


def test_csv_formatting(tmp_path):
    assert fmt(0.1) == "0.1" and fmt(None) == "" and fmt(True) == "true" and fmt(np.float64(1 / 3)) == repr(1 / 3)
    p = write_csv(tmp_path / "x.csv", ("a", "b"), [{"a": 1, "b": 2.5}])
    assert p.read_text() == "a,b\n1,2.5\n"
