"""Run configuration: defaults, file loading, and strict validation.

Config files are TOML or JSON whose keys mirror the dataclass fields one to
one. Unknown keys anywhere are errors, so a typo fails loudly instead of
silently training with a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ValidationError
from .siamese import ConVarParams
from .synthetic import SynthSpec
from .training import LOSS_NAMES, ModelSpec, TrainConfig
from .walks import WalkParams

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


@dataclass(frozen=True)
class RunConfig:
    """Everything the command-line pipeline needs for one run."""

    seed: int = 0
    out_dir: str = "runs"
    loss: str = "hinge"
    threads: int = 1
    higher_order: bool = True
    knn_fraction: float = 0.10
    train_fraction: float = 0.6
    synth: SynthSpec = field(default_factory=SynthSpec)
    walks: WalkParams = field(default_factory=lambda: WalkParams(num_walks=10, walk_length=60, window=4))
    gcn: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    convar: ConVarParams = field(default_factory=ConVarParams)

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.loss not in LOSS_NAMES:
            raise ConfigError(f"loss must be one of {LOSS_NAMES}, got {self.loss!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not 0.0 < self.knn_fraction < 1.0:
            raise ConfigError(f"knn_fraction must be in (0, 1), got {self.knn_fraction}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")

    def knn_k(self, n_nodes: int) -> int:
        """Neighbour count for an n-node graph: the configured fraction, floor 1."""
        return max(1, round(self.knn_fraction * n_nodes))

    def to_train_config(self) -> TrainConfig:
        """TrainConfig with the run-level seed, loss, and architecture folded in."""
        return dataclasses.replace(
            self.train,
            loss=self.loss,
            seed=self.seed,
            convar=self.convar,
            model=self.gcn,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_INT = "int"
_FLOAT = "float"
_BOOL = "bool"
_STR = "str"
_OPT_INT = "optional int"

_SCHEMA = {
    "seed": _INT,
    "out_dir": _STR,
    "loss": _STR,
    "threads": _INT,
    "higher_order": _BOOL,
    "knn_fraction": _FLOAT,
    "train_fraction": _FLOAT,
    "synth": {
        "n_nodes": _INT,
        "n_communities": _INT,
        "w_in": _FLOAT,
        "w_out": _FLOAT,
        "noise_sd": _FLOAT,
        "subjects_per_class": _INT,
        "class_structure": _STR,
        "seed": _INT,
    },
    "walks": {
        "num_walks": _INT,
        "walk_length": _INT,
        "window": _INT,
    },
    "gcn": {
        "n_layers": _INT,
        "features": _INT,
        "order": _INT,
        "dropout_keep": _FLOAT,
        "relu_last": _BOOL,
    },
    "train": {
        "epochs": _INT,
        "batch_pairs": _INT,
        "l2": _FLOAT,
        "lr": _FLOAT,
        "early_stop_patience": _INT,
        "max_pairs_per_epoch": _OPT_INT,
    },
    "convar": {
        "margin": _FLOAT,
        "variance_threshold": _FLOAT,
    },
}


def _coerce(value, kind, path):
    if kind in (_INT, _OPT_INT):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path} must be an integer, got {value!r}")
        return value
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path} must be a number, got {value!r}")
        return float(value)
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path} must be true or false, got {value!r}")
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise ConfigError(f"config key {path} must be a string, got {value!r}")
        return value
    raise AssertionError(kind)


def _check_section(data, schema, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {prefix or '<top>'} must be a table, got {data!r}")
    out = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key {path!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            out[key] = _check_section(value, expected, prefix=f"{path}.")
        else:
            out[key] = _coerce(value, expected, path)
    return out


def run_config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a nested dict, defaulting unspecified keys."""
    checked = _check_section(data, _SCHEMA)
    try:
        synth = SynthSpec(**checked.pop("synth", {}))
        walks_data = checked.pop("walks", {})
        walks = WalkParams(
            num_walks=walks_data.get("num_walks", 10),
            walk_length=walks_data.get("walk_length", 60),
            window=walks_data.get("window", 4),
        )
        gcn = ModelSpec(**checked.pop("gcn", {}))
        train = TrainConfig(**checked.pop("train", {}))
        convar = ConVarParams(**checked.pop("convar", {}))
        return RunConfig(synth=synth, walks=walks, gcn=gcn, train=train, convar=convar, **checked)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path) -> RunConfig:
    """Load a RunConfig from a .toml or .json file."""
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        elif path.suffix == ".json":
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        else:
            raise ConfigError(f"config file must end in .toml or .json, got {path.name!r}")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table or object")
    return run_config_from_dict(data)


def apply_overrides(
    config: RunConfig,
    seed: int | None = None,
    out_dir: str | None = None,
    loss: str | None = None,
    threads: int | None = None,
    higher_order: bool | None = None,
    epochs: int | None = None,
) -> RunConfig:
    """Fold command-line overrides into a loaded config."""
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["out_dir"] = out_dir
    if loss is not None:
        updates["loss"] = loss
    if threads is not None:
        updates["threads"] = threads
    if higher_order is not None:
        updates["higher_order"] = higher_order
    if epochs is not None:
        try:
            updates["train"] = dataclasses.replace(config.train, epochs=epochs)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None
    if not updates:
        return config
    return dataclasses.replace(config, **updates)
