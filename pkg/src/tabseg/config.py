"""``key = value`` config files for training runs and experiment plans.

Lines are ``key = value``; ``#`` starts a comment.  Unknown or repeated keys
are errors.  Model keys start from the ``preset`` (``desk`` or ``paper``) and
override individual fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .models import VARIANTS, ModelConfig, desk_config, paper_config

MODEL_KEYS = {
    "input_size": int, "features": int, "token_dim": int, "transformer_layers": int,
    "transformer_heads": int, "ffn_dim": int, "groupnorm_groups": int, "se_reduction": int,
}
TRAIN_KEYS = {
    "preset": str, "variant": str, "learning_rate": float, "weight_decay": float,
    "batch_size": int, "epochs": int, "seed": int, "loss_masking": "bool",
    "data": str, "train": str, "val": str, "test": str, "checkpoint": str, "history": str,
    **MODEL_KEYS,
}
PLAN_KEYS = {
    "kind": str, "source": str, "target": str, "variants": str, "data_root": str,
    "checkpoint_dir": str, "report": str, "preset": str, "learning_rate": float,
    "weight_decay": float, "batch_size": int, "epochs": int, "seed": int,
    "loss_masking": "bool", **MODEL_KEYS,
}

# desk runs use a larger step than the full-scale 1e-5 so that <=200 epochs suffice
DESK_LEARNING_RATE = 2e-2


def parse_kv_text(text: str, allowed: dict, where: str = "<config>") -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigurationError(f"{where}:{lineno}: expected 'key = value'")
        if key not in allowed:
            raise ConfigurationError(f"{where}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigurationError(f"{where}:{lineno}: duplicate key {key!r}")
        out[key] = _convert(value, allowed[key], f"{where}:{lineno}: {key}")
    return out


def _convert(value: str, kind, where: str):
    if kind == "bool":
        low = value.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigurationError(f"{where}: expected a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse {value!r} as {kind.__name__}") from None


def parse_kv_file(path, allowed: dict) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"{path}: config file not found") from None
    return parse_kv_text(text, allowed, str(path))


def model_from_keys(values: dict, variant: str | None = None) -> ModelConfig:
    preset = values.get("preset", "desk")
    if preset not in ("desk", "paper"):
        raise ConfigurationError(f"preset must be 'desk' or 'paper', got {preset!r}")
    overrides = {k: values[k] for k in MODEL_KEYS if k in values}
    overrides["seed"] = values.get("seed", 0)
    factory = desk_config if preset == "desk" else paper_config
    return factory(variant or values.get("variant", "tabs"), **overrides)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    learning_rate: float = 1e-5
    weight_decay: float = 1e-6
    batch_size: int = 3
    epochs: int = 350
    seed: int = 0
    loss_masking: bool = True
    data: str | None = None
    train: str | None = None
    val: str | None = None
    test: str | None = None
    checkpoint: str | None = None
    history: str | None = None

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        self.model.validate()
        return self

    @property
    def history_path(self) -> str | None:
        if self.history:
            return self.history
        return f"{self.checkpoint}.history.csv" if self.checkpoint else None


def desk_train_config(variant: str = "tabs", **overrides) -> TrainConfig:
    model_kw = {k: overrides.pop(k) for k in list(overrides) if k in MODEL_KEYS}
    model = desk_config(variant, seed=overrides.get("seed", 0), **model_kw)
    base = TrainConfig(model, learning_rate=DESK_LEARNING_RATE, epochs=200)
    return replace(base, **overrides).validate()


def _training_defaults(values: dict) -> dict:
    desk = values.get("preset", "desk") == "desk"
    return {
        "learning_rate": values.get("learning_rate", DESK_LEARNING_RATE if desk else 1e-5),
        "weight_decay": values.get("weight_decay", 1e-6),
        "batch_size": values.get("batch_size", 3),
        "epochs": values.get("epochs", 200 if desk else 350),
        "seed": values.get("seed", 0),
        "loss_masking": values.get("loss_masking", True),
    }


def train_config_from_file(path) -> TrainConfig:
    values = parse_kv_file(path, TRAIN_KEYS)
    if values.get("variant", "tabs") not in VARIANTS:
        raise ConfigurationError(f"{path}: variant must be one of {VARIANTS}")
    paths = {k: values.get(k) for k in ("data", "train", "val", "test", "checkpoint", "history")}
    if not paths["data"] and not (paths["train"] and paths["val"]):
        raise ConfigurationError(f"{path}: give 'data' or both 'train' and 'val'")
    if not paths["checkpoint"]:
        raise ConfigurationError(f"{path}: 'checkpoint' is required")
    return TrainConfig(model_from_keys(values), **_training_defaults(values), **paths).validate()


PLAN_KINDS = ("performance", "generality", "reliability")


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str
    source: str
    targets: tuple[str, ...]
    variants: tuple[str, ...]
    data_root: str
    checkpoint_dir: str
    report: str
    training: dict = field(default_factory=dict)
    model_keys: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentPlan":
        if self.kind not in PLAN_KINDS:
            raise ConfigurationError(f"kind must be one of {PLAN_KINDS}, got {self.kind!r}")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise ConfigurationError(f"variants must be drawn from {VARIANTS}, got {list(self.variants)}")
        if not self.targets:
            raise ConfigurationError("plan needs at least one target")
        if self.kind == "generality" and self.source in self.targets:
            raise ConfigurationError("generality plan needs a target site different from the source")
        return self

    def model_config(self, variant: str) -> ModelConfig:
        return model_from_keys({**self.model_keys, "seed": self.training["seed"]}, variant)

    def train_config(self, variant: str, **paths) -> TrainConfig:
        return TrainConfig(self.model_config(variant), **self.training, **paths).validate()

    def checkpoint_path(self, variant: str) -> Path:
        return Path(self.checkpoint_dir) / f"{self.source}__{variant}.ckpt"


def plan_from_values(values: dict, where: str = "<plan>") -> ExperimentPlan:
    for key in ("kind", "source", "data_root", "checkpoint_dir", "report"):
        if key not in values:
            raise ConfigurationError(f"{where}: missing required key {key!r}")
    kind = values["kind"]
    default_variants = "tabs" if kind == "reliability" else ",".join(VARIANTS_TABLE_ORDER)
    variants = tuple(v.strip() for v in values.get("variants", default_variants).split(",") if v.strip())
    targets = tuple(t.strip() for t in values.get("target", values["source"]).split(",") if t.strip())
    model_keys = {k: values[k] for k in ("preset", *MODEL_KEYS) if k in values}
    return ExperimentPlan(kind, values["source"], targets, variants, values["data_root"],
                          values["checkpoint_dir"], values["report"],
                          _training_defaults(values), model_keys).validate()


def plan_from_file(path) -> ExperimentPlan:
    return plan_from_values(parse_kv_file(path, PLAN_KEYS), str(path))


VARIANTS_TABLE_ORDER = ("tabs", "resunet", "unet_se", "unet")
