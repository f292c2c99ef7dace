"""Run configuration: INI-style ``key = value`` sections, strictly validated.

Unknown sections or keys are hard errors; a silent hyperparameter typo would
invalidate a reproduction.  The effective configuration (defaults plus file
plus CLI overrides) can be re-rendered to text: feeding that echo back in
reproduces the run bitwise.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

from .training import ConfigError, TrainConfig

DATA_DIR_ENV = "LABELALIGN_DATA_DIR"

DATASETS = ("synthetic", "mnist-usps")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{text}'")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (type tag, default)
_SCHEMA = {
    "train": {
        "lam": ("float", 1e-3),
        "gamma": ("float", 1e-3),
        "beta": ("float", 5.0),
        "alpha": ("float", 1e-3),
        "batch_size": ("int", 128),
        "steps": ("int", 2100),
        "seed": ("int", 0),
        "mode": ("str", "dla"),
        "gradient_mode": ("str", "projected"),
        "alignment_target": ("str", "probabilities"),
        "classification_loss": ("str", "cross_entropy"),
        "optimizer": ("str", "adam"),
        "weight_init": ("str", "he"),
        "dtype": ("str", "float32"),
        "gate": ("str", "learned"),
        "val_every": ("int", 50),
        "timing": ("bool", True),
    },
    "data": {
        "dataset": ("str", "synthetic"),
        "dir": ("str", ""),
        "mnist_train_images": ("str", "mnist/train-images-idx3-ubyte.gz"),
        "mnist_train_labels": ("str", "mnist/train-labels-idx1-ubyte.gz"),
        "mnist_test_images": ("str", "mnist/t10k-images-idx3-ubyte.gz"),
        "mnist_test_labels": ("str", "mnist/t10k-labels-idx1-ubyte.gz"),
        "usps_train": ("str", "usps/usps.bz2"),
        "usps_test": ("str", "usps/usps.t.bz2"),
        "split_seed": ("int", 0),
        "synthetic_source_size": ("int", 512),
        "synthetic_target_size": ("int", 512),
        "synthetic_val_size": ("int", 256),
        "synthetic_test_size": ("int", 256),
        "standardize": ("bool", False),
    },
    "output": {
        "dir": ("str", "runs/latest"),
        "metrics_every": ("int", 1),
        "checkpoint_every": ("int", 0),
    },
}

_PARSERS = {"float": float, "int": int, "str": str, "bool": _parse_bool}


@dataclass
class RunConfig:
    train: TrainConfig
    data: dict
    output: dict

    def echo_text(self) -> str:
        """Canonical INI rendering of the full effective configuration."""
        lines = []
        values = {
            "train": {k: getattr(self.train, k) for k in _SCHEMA["train"]},
            "data": self.data,
            "output": self.output,
        }
        for section in _SCHEMA:
            lines.append(f"[{section}]")
            for key in _SCHEMA[section]:
                lines.append(f"{key} = {_fmt(values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def content_hash(self) -> str:
        return hashlib.sha256(self.echo_text().encode("utf-8")).hexdigest()

    def data_dir(self) -> Path:
        configured = self.data["dir"]
        if configured:
            return Path(configured)
        env = os.environ.get(DATA_DIR_ENV)
        return Path(env) if env else Path("data")

    def data_path(self, key: str) -> Path:
        p = Path(self.data[key])
        return p if p.is_absolute() else self.data_dir() / p

    def to_flat(self) -> dict[str, str]:
        """Flatten to ``section.key -> formatted value`` (checkpoint echo)."""
        flat = {}
        values = {
            "train": {k: getattr(self.train, k) for k in _SCHEMA["train"]},
            "data": self.data,
            "output": self.output,
        }
        for section in _SCHEMA:
            for key in _SCHEMA[section]:
                flat[f"{section}.{key}"] = _fmt(values[section][key])
        return flat


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config file; ``overrides`` maps (section, key) to
    raw string values (used for CLI flags like --seed/--out)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    raw: dict[str, dict[str, str]] = {s: {} for s in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key '{key}' in section [{section}]")
            raw[section][key] = value
    for (section, key), value in (overrides or {}).items():
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key '{key}' in section [{section}]")
        raw[section][key] = value

    parsed: dict[str, dict] = {}
    for section, keys in _SCHEMA.items():
        parsed[section] = {}
        for key, (tag, default) in keys.items():
            if key in raw[section]:
                try:
                    parsed[section][key] = _PARSERS[tag](raw[section][key])
                except ValueError as exc:
                    raise ConfigError(
                        f"invalid value for '{key}' in [{section}]: {exc}"
                    ) from exc
            else:
                parsed[section][key] = default

    if parsed["data"]["dataset"] not in DATASETS:
        raise ConfigError(
            f"dataset must be one of {DATASETS}, got '{parsed['data']['dataset']}'"
        )

    cfg = RunConfig(
        train=TrainConfig(**parsed["train"]).validate(),
        data=parsed["data"],
        output=parsed["output"],
    )
    return cfg


def config_from_flat(flat: dict[str, str]) -> RunConfig:
    """Rebuild a RunConfig from the flattened echo stored in a checkpoint."""
    parsed: dict[str, dict] = {}
    for section, keys in _SCHEMA.items():
        parsed[section] = {}
        for key, (tag, default) in keys.items():
            raw = flat.get(f"{section}.{key}")
            if raw is None:
                parsed[section][key] = default
            else:
                try:
                    parsed[section][key] = _PARSERS[tag](raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"invalid echoed value for '{section}.{key}': {exc}"
                    ) from exc
    return RunConfig(
        train=TrainConfig(**parsed["train"]).validate(),
        data=parsed["data"],
        output=parsed["output"],
    )
