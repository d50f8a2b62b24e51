"""Run configuration: dotted keys in a plain key=value file, overridable by
environment variables (CROSSVIEW_ prefix, '__' for the dot) and --set flags.
Unknown keys are rejected; everything is validated before any work starts."""

from __future__ import annotations

import os
from pathlib import Path

ENV_PREFIX = "CROSSVIEW_"

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "data.drone_dir": "",
    "data.satellite_dir": "",
    "partition.ratio": 0.5,
    "model.gem_p": 3.0,
    "model.gem_p_trainable": False,
    "model.hab_stages": "stage3,stage5",
    "model.input_size": 256,
    "model.descriptor": "joint_bn",
    "model.pretrained": True,
    "loss.w_center": 0.0005,
    "loss.w_ce": 1.0,
    "loss.w_dc": 1.0,
    "loss.lambda_dc": 0.2,
    "loss.aux": "none",
    "optimizer.backbone_lr": 0.01,
    "optimizer.head_lr": 0.1,
    "optimizer.momentum": 0.9,
    "optimizer.weight_decay": 0.0005,
    "optimizer.step_epochs": 30,
    "optimizer.gamma": 0.5,
    "optimizer.center_lr": 0.5,
    "train.epochs": 200,
    "train.batch_size": 32,
    "train.dtype": "float32",
    "train.augment": True,
}

PRESETS: dict[str, dict[str, object]] = {
    # desk-scale run: random-init backbone, small inputs, short schedule;
    # flip/crop augmentation off, 8 views per class carry the variety
    "toy": {
        "model.pretrained": False,
        "model.input_size": 64,
        "train.epochs": 40,
        "train.batch_size": 16,
        "train.augment": False,
        "optimizer.backbone_lr": 0.035,
        "optimizer.head_lr": 0.07,
        "optimizer.step_epochs": 15,
    },
}


class ConfigError(ValueError):
    """Bad configuration or command usage; mapped to exit code 2."""


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw.strip()


class RunConfig:
    def __init__(self, values: dict[str, object] | None = None):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            self.set(key, value)

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key: {key}")
        return self.values[key]

    def set(self, key: str, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = _coerce(key, value)
        self.values[key] = value

    def apply_preset(self, name: str):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset: {name}")
        for key, value in PRESETS[name].items():
            self.set(key, value)

    def apply_file(self, path: str | Path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, raw = stripped.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            self.set(key.strip(), raw.strip())

    def apply_env(self, environ=None):
        environ = os.environ if environ is None else environ
        for name, raw in environ.items():
            if name.startswith(ENV_PREFIX):
                key = name[len(ENV_PREFIX):].lower().replace("__", ".")
                self.set(key, raw)

    def hab_stages(self) -> tuple[str, ...]:
        raw = str(self["model.hab_stages"]).strip()
        if not raw or raw.lower() == "none":
            return ()
        return tuple(s.strip() for s in raw.split(",") if s.strip())

    def validate(self):
        c = self
        checks = [
            (int(c["seed"]) >= 0, "seed must be >= 0"),
            (0.0 < float(c["partition.ratio"]) < 1.0, "partition.ratio must be in (0, 1)"),
            (float(c["model.gem_p"]) >= 1.0, "model.gem_p must be >= 1"),
            (int(c["model.input_size"]) >= 32, "model.input_size must be >= 32"),
            (c["model.descriptor"] in ("joint_bn", "compressed"),
             "model.descriptor must be joint_bn or compressed"),
            (float(c["loss.w_center"]) >= 0, "loss.w_center must be >= 0"),
            (float(c["loss.w_ce"]) >= 0, "loss.w_ce must be >= 0"),
            (float(c["loss.w_dc"]) >= 0, "loss.w_dc must be >= 0"),
            (float(c["loss.lambda_dc"]) >= 0, "loss.lambda_dc must be >= 0"),
            (c["loss.aux"] in ("none", "triplet"), "loss.aux must be none or triplet"),
            (float(c["optimizer.backbone_lr"]) > 0, "optimizer.backbone_lr must be > 0"),
            (float(c["optimizer.head_lr"]) > 0, "optimizer.head_lr must be > 0"),
            (0.0 <= float(c["optimizer.momentum"]) < 1.0, "optimizer.momentum must be in [0, 1)"),
            (float(c["optimizer.weight_decay"]) >= 0, "optimizer.weight_decay must be >= 0"),
            (int(c["optimizer.step_epochs"]) >= 1, "optimizer.step_epochs must be >= 1"),
            (0.0 < float(c["optimizer.gamma"]) <= 1.0, "optimizer.gamma must be in (0, 1]"),
            (float(c["optimizer.center_lr"]) > 0, "optimizer.center_lr must be > 0"),
            (int(c["train.epochs"]) >= 1, "train.epochs must be >= 1"),
            (int(c["train.batch_size"]) >= 1, "train.batch_size must be >= 1"),
            (c["train.dtype"] in ("float32", "float64"),
             "train.dtype must be float32 or float64"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        bad_stages = set(self.hab_stages()) - {"stage3", "stage4", "stage5"}
        if bad_stages:
            raise ConfigError(f"unknown hab stages: {sorted(bad_stages)}")

    def save(self, path: str | Path):
        lines = [f"{k} = {v}" for k, v in sorted(self.values.items())]
        Path(path).write_text("\n".join(lines) + "\n")
