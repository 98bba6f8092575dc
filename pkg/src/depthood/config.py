"""Flat ``section.key=value`` experiment configuration.

Example::

    # synthetic benchmark
    dataset.n_train=2000
    train.lr=0.0001
    train.decoder.epochs=30     # per-harness override
    eval.methods=ours,post,log,drop

Lines starting with ``#`` are comments.  Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig

METHODS = ("ours", "post", "log", "drop", "sim", "ae")
HARNESSES = ("depth", "decoder", "log", "drop", "sim", "ae")
TRAIN_KEYS = ("lr", "batch_size", "epochs", "seed", "loss", "joint_weight")

DEFAULTS = {
    "dataset.kind": "synthetic",
    "dataset.height": 64,
    "dataset.width": 64,
    "dataset.n_train": 2000,
    "dataset.n_test": 300,
    "dataset.n_ood": 150,
    "dataset.k_min": 2,
    "dataset.k_max": 5,
    "dataset.train_dir": "",
    "dataset.test_dir": "",
    "model.d_max": 10.0,
    "model.dropout": 0.2,
    "model.skips": True,
    "model.channels": "16,32,64,128",
    "model.decoder_channels": "64,32,16,16",
    "model.depth_checkpoint": "",
    "model.decoder_checkpoint": "",
    "train.lr": 1e-4,
    "train.batch_size": 8,
    "train.epochs": 20,
    "train.seed": 0,
    "train.loss": "l1",
    "train.joint_weight": 1.0,
    "eval.methods": "ours,post,log,drop",
    "eval.ood": "palette-shift,texture-noise,shape-family",
    "eval.ood_dirs": "",
    "eval.ood_cap": 300,
    "eval.dropout_passes": 8,
    "eval.samples": 4,
}


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _default_for(key: str):
    if key in DEFAULTS:
        return DEFAULTS[key]
    parts = key.split(".")
    if len(parts) == 3 and parts[0] == "train" and parts[1] in HARNESSES and parts[2] in TRAIN_KEYS:
        return DEFAULTS["train." + parts[2]]
    raise ConfigError(key, "unknown configuration key")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(DEFAULTS)
        for k, v in self.values.items():
            default = _default_for(k)
            merged[k] = _parse_value(k, v, default) if isinstance(v, str) else v
        self.values = merged
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}", f"expected key=value, got {line!r}")
            k, _, v = line.partition("=")
            values[k.strip()] = v.strip()
        return cls(values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_text(path.read_text())

    def with_overrides(self, pairs) -> "ExperimentConfig":
        values = dict(self.values)
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(pair, "override must be key=value")
            k, _, v = pair.partition("=")
            values[k.strip()] = v.strip()
        return ExperimentConfig(values)

    def validate(self) -> None:
        v = self.values
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError("eval.methods", f"unknown method {m!r}; expected a subset of {METHODS}")
        if v["dataset.kind"] not in ("synthetic", "directory"):
            raise ConfigError("dataset.kind", "must be 'synthetic' or 'directory'")
        if v["dataset.kind"] == "directory":
            for key in ("dataset.train_dir", "dataset.test_dir", "eval.ood_dirs"):
                if not v[key]:
                    raise ConfigError(key, "required for directory datasets")
        else:
            from .datasets import OOD_VARIANTS

            for name in self.ood_sets:
                if name not in OOD_VARIANTS:
                    raise ConfigError("eval.ood", f"unknown OOD variant {name!r}")
        for key in ("dataset.n_train", "dataset.n_test", "dataset.n_ood", "eval.ood_cap"):
            if v[key] < 1:
                raise ConfigError(key, "must be >= 1")
        if v["eval.dropout_passes"] < 2:
            raise ConfigError("eval.dropout_passes", "must be >= 2")
        for h in HARNESSES:
            try:
                self.train_config(h)
            except ValueError as e:
                raise ConfigError(f"train.{h}", str(e)) from None

    @property
    def methods(self) -> list:
        return [m.strip() for m in str(self.values["eval.methods"]).split(",") if m.strip()]

    @property
    def ood_sets(self) -> list:
        if self.values["dataset.kind"] == "directory":
            return list(self.ood_dirs)
        return [s.strip() for s in str(self.values["eval.ood"]).split(",") if s.strip()]

    @property
    def ood_dirs(self) -> dict:
        """``name=path;name=path`` -> {name: path}."""
        out = {}
        for item in str(self.values["eval.ood_dirs"]).split(";"):
            if item.strip():
                name, sep, path = item.partition("=")
                if not sep:
                    raise ConfigError("eval.ood_dirs", f"expected name=path, got {item!r}")
                out[name.strip()] = path.strip()
        return out

    @property
    def seed(self) -> int:
        return int(self.values["train.seed"])

    def train_config(self, harness: str) -> TrainConfig:
        kw = {}
        for k in TRAIN_KEYS:
            kw[k] = self.values.get(f"train.{harness}.{k}", self.values[f"train.{k}"])
        return TrainConfig(**kw)

    def model_kwargs(self) -> dict:
        v = self.values
        return {
            "d_max": float(v["model.d_max"]),
            "dropout": float(v["model.dropout"]),
            "skips": bool(v["model.skips"]),
            "channels": tuple(int(c) for c in str(v["model.channels"]).split(",")),
            "decoder_channels": tuple(int(c) for c in str(v["model.decoder_channels"]).split(",")),
        }

    def to_text(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()
