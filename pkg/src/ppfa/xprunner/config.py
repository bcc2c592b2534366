"""TOML experiment configuration: parsing, validation and default resolution."""
from __future__ import annotations

import json
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .. import distortion as dist
from ..attack import AttackConfig
from ..distortion import LearnerConfig
from ..federation import LEARNER_ON_CLIENT
from ..numkit import ModelSpec, SOFTMAX_REGRESSION
from ..privacy import DP, PL, PrivacyBudget, PrivacyConstants

BLOBS = "synthetic-blobs"
DIGITS_IDX = "digits-idx"
DP_DEFAULT_CLIP = 500.0


class ConfigError(dist.ConfigError):
    """Invalid configuration; the message names the offending key path."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = BLOBS
    per_class: int = 100
    test_per_class: int = 250
    sigma: float = 0.3
    low: float = 0.05
    high: float = 0.95
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    side: int = 0
    limit: int = 0
    test_limit: int = 0


@dataclass(frozen=True)
class AttackSettings:
    enabled: bool = True
    iterations: int = 1600
    lr: float = 1.0
    tv_coefficient: float = 1e-5
    known_label: bool = True
    init_seed: int = 0
    lr_decay: bool = True
    boxed: bool = True
    fd_step: float = 1e-4
    keep_every: int = 100

    def to_attack_config(self) -> AttackConfig:
        d = asdict(self)
        d.pop("enabled")
        return AttackConfig(**d)


@dataclass(frozen=True)
class TheorySettings:
    region_samples: int = 200
    probe_radius: float = 0.5
    brute_samples: int = 10_000
    refine_steps: int = 30
    identity_instances: int = 1000
    contraction_instances: int = 20


@dataclass(frozen=True)
class ConstantsSettings:
    models: int = 4
    local_steps: int = 20
    attempts: int = 5
    threshold: float = 0.6
    similarity: str = "ssim"
    datums: int = 4


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1
    seeds: tuple[int, ...] = ()
    clients: int = 4
    rounds: int = 200
    batch_size: int = 4
    eta: float = 0.1
    mechanism: str | None = None
    variants: tuple[str, ...] = ()
    budgets: tuple[float, ...] = ()
    clip_norm: float | None = None
    output_dir: str = "out"
    learner_objective: str = LEARNER_ON_CLIENT
    attack_round: int = 0
    model: ModelSpec = field(default_factory=lambda: ModelSpec(SOFTMAX_REGRESSION))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    privacy: PrivacyConstants = field(default_factory=PrivacyConstants)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    attack: AttackSettings = field(default_factory=AttackSettings)
    theory: TheorySettings = field(default_factory=TheorySettings)
    constants: ConstantsSettings = field(default_factory=ConstantsSettings)
    base_dir: str = "."
    defaults_applied: tuple[str, ...] = ()

    @property
    def seed_list(self) -> tuple[int, ...]:
        return self.seeds or (self.seed,)

    @property
    def variant_list(self) -> tuple[str | None, ...]:
        return self.variants or (self.mechanism,)

    def clip_for(self, variant: str | None) -> float | None:
        """Explicit clip norm, else 500 for DP mechanisms and no clipping otherwise."""
        if self.clip_norm is not None:
            return self.clip_norm if self.clip_norm > 0 else None
        if variant is not None and dist.framework_of(variant) == DP:
            return DP_DEFAULT_CLIP
        return None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, seeds=())

    def with_output(self, output_dir: str) -> "ExperimentConfig":
        return replace(self, output_dir=output_dir)

    def resolve_path(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("base_dir")
        d.pop("defaults_applied")
        return json.dumps(d, sort_keys=True, indent=2)


_TOP_LEVEL = {f.name for f in fields(ExperimentConfig)} - {"base_dir", "defaults_applied"} | {"budget"}
_SECTIONS = {"model": ModelSpec, "dataset": DatasetConfig, "privacy": PrivacyConstants,
             "learner": LearnerConfig, "attack": AttackSettings, "theory": TheorySettings,
             "constants": ConstantsSettings}


def _check_type(value: Any, default: Any, key: str) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def _default_of(f) -> Any:
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _section(cls, table: Any, name: str, applied: list[str], extra: dict | None = None):
    if not isinstance(table, dict):
        raise ConfigError(f"{name}: expected a table")
    known = {f.name: f for f in fields(cls)}
    for key in table:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
    kwargs = dict(extra or {})
    for fname, f in known.items():
        if fname in table:
            default = _default_of(f)
            kwargs[fname] = _check_type(table[fname], default, f"{name}.{fname}")
        elif fname not in kwargs:
            applied.append(f"{name}.{fname}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from e


def _number_list(value: Any, key: str) -> tuple:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{key}: expected a non-empty list")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected numbers, got {v!r}")
    return tuple(value)


def parse_config(raw: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Validate a parsed TOML document and fill in defaults."""
    applied: list[str] = []
    for key in raw:
        if key not in _TOP_LEVEL:
            raise ConfigError(f"unknown key '{key}'")
    top = {}
    defaults = ExperimentConfig()
    for key in ("seed", "clients", "rounds", "batch_size", "attack_round"):
        if key in raw:
            top[key] = _check_type(raw[key], 0, key)
    for key in ("eta",):
        if key in raw:
            top[key] = _check_type(raw[key], 0.0, key)
    for key in ("output_dir", "learner_objective"):
        if key in raw:
            top[key] = _check_type(raw[key], "", key)

    if "mechanism" in raw:
        m = _check_type(raw["mechanism"], "", "mechanism")
        top["mechanism"] = None if m == "none" else m
    if "variants" in raw:
        if not isinstance(raw["variants"], list) or not raw["variants"]:
            raise ConfigError("variants: expected a non-empty list")
        top["variants"] = tuple(_check_type(v, "", "variants") for v in raw["variants"])
    for v in (top.get("mechanism"), *top.get("variants", ())):
        if v is not None and v not in dist.VARIANTS:
            raise ConfigError(f"mechanism: unknown variant {v!r} (expected one of {', '.join(dist.VARIANTS)} or 'none')")
    if "seeds" in raw:
        seeds = _number_list(raw["seeds"], "seeds")
        if any(isinstance(s, float) for s in seeds):
            raise ConfigError("seeds: expected integers")
        top["seeds"] = seeds
    if "budget" in raw and "budgets" in raw:
        raise ConfigError("budget: give either 'budget' or 'budgets', not both")
    if "budget" in raw:
        top["budgets"] = (float(_check_type(raw["budget"], 0.0, "budget")),)
    elif "budgets" in raw:
        top["budgets"] = tuple(float(b) for b in _number_list(raw["budgets"], "budgets"))
    if "clip_norm" in raw:
        c = raw["clip_norm"]
        if c is False:
            top["clip_norm"] = 0.0
        else:
            top["clip_norm"] = _check_type(c, 0.0, "clip_norm")
            if not top["clip_norm"] > 0:
                raise ConfigError("clip_norm: must be positive (use false to disable clipping)")

    for key in ("seed", "clients", "rounds", "batch_size", "eta", "mechanism",
                "learner_objective", "output_dir", "clip_norm"):
        if key not in top:
            applied.append(key)
    if top.get("clients", defaults.clients) < 1:
        raise ConfigError("clients: must be >= 1")
    if top.get("rounds", defaults.rounds) < 1:
        raise ConfigError("rounds: must be >= 1")
    if top.get("batch_size", defaults.batch_size) < 1:
        raise ConfigError("batch_size: must be >= 1")
    if not top.get("eta", defaults.eta) > 0:
        raise ConfigError("eta: must be positive")
    if top.get("learner_objective", LEARNER_ON_CLIENT) not in ("batch", "client"):
        raise ConfigError("learner_objective: expected 'batch' or 'client'")
    rounds = top.get("rounds", defaults.rounds)
    if "attack_round" not in top:
        top["attack_round"] = rounds
        applied.append("attack_round")
    elif not 0 <= top["attack_round"] <= rounds:
        raise ConfigError("attack_round: must lie in [0, rounds] (0 disables the attack)")

    sections = {}
    attack_table = raw.get("attack", {})
    sections["attack"] = _section(AttackSettings, attack_table, "attack", applied)
    for name, cls in _SECTIONS.items():
        if name == "attack":
            continue
        extra = None
        if name == "privacy" and "attack_rounds" not in raw.get("privacy", {}):
            extra = {"attack_rounds": sections["attack"].iterations}
        if name == "model" and "kind" not in raw.get("model", {}):
            extra = {"kind": SOFTMAX_REGRESSION}
            applied.append("model.kind")
        sections[name] = _section(cls, raw.get(name, {}), name, applied, extra)
    try:
        sections["attack"].to_attack_config()
    except (ValueError, NotImplementedError) as e:
        raise ConfigError(f"attack: {e}") from e
    if sections["dataset"].kind not in (BLOBS, DIGITS_IDX):
        raise ConfigError(f"dataset.kind: expected '{BLOBS}' or '{DIGITS_IDX}'")
    if sections["constants"].similarity not in ("ssim", "psnr"):
        raise ConfigError("constants.similarity: expected 'ssim' or 'psnr'")

    cfg = ExperimentConfig(**top, **sections, base_dir=str(base_dir), defaults_applied=tuple(applied))
    _check_budgets(cfg)
    _check_files(cfg)
    return cfg


def _check_budgets(cfg: ExperimentConfig) -> None:
    for v in cfg.variant_list:
        if v is None:
            continue
        if not cfg.budgets:
            raise ConfigError(f"budgets: mechanism {v} needs 'budget' or 'budgets'")
        for b in cfg.budgets:
            try:
                PrivacyBudget(b, dist.framework_of(v))
            except ValueError as e:
                raise ConfigError(f"budgets: {e}") from e
    frameworks = {dist.framework_of(v) for v in cfg.variant_list if v is not None}
    if frameworks == {PL, DP}:
        raise ConfigError("variants: PL and DP budgets are not comparable; use one framework per config")


def _check_files(cfg: ExperimentConfig) -> None:
    d = cfg.dataset
    if d.kind != DIGITS_IDX:
        return
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        p = getattr(d, key)
        if not p:
            raise ConfigError(f"dataset.{key}: required for {DIGITS_IDX}")
        if not cfg.resolve_path(p).is_file():
            raise ConfigError(f"dataset.{key}: file {p!r} does not exist")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(raw, base_dir=path.parent)
