"""Pipeline configuration: a strict-schema JSON file plus defaults.

Schema (all keys optional; unknown keys are rejected):

    {
      "seed": 0,                  // default seed for gen/split/train
      "gen":    {"families": 8 | ["cuboid", ...], "per_class": 40, "seed": 0},
      "render": {"resolution": 256, "fill": 0.9},
      "split":  {"train_fraction": 0.8, "seed": 0},
      "arch":   {"input_size": 256, "stem_filters": 32, ...},   // ArchSpec fields
      "train":  {"epochs": 100, "batch_size": 20, "lr": 0.001,
                 "class_weighting": true, "seed": 0},
      "boost":  {"rounds": 100, "learning_rate": 0.1, "max_depth": 4,
                 "min_child_weight": 1.0, "reg_lambda": 1.0, "gamma": 0.0}
    }

The config file path comes from an explicit flag, else the LFDNET_CONFIG
environment variable, else built-in defaults.  "arch" entries override
ArchSpec defaults; input size and class count are filled from the dataset
at training time when not given explicitly.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .boost import BoostConfig
from .errors import ConfigError
from .model import ArchSpec
from .render import RenderConfig
from .synth import FAMILIES, family_names
from .training import TrainConfig

CONFIG_ENV_VAR = "LFDNET_CONFIG"

_ARCH_FIELDS = {f.name for f in dataclasses.fields(ArchSpec)}


@dataclass(frozen=True)
class PipelineConfig:
    families: tuple = tuple(family_names())
    per_class: int = 40
    gen_seed: int = 0
    render: RenderConfig = RenderConfig()
    train_fraction: float = 0.8
    split_seed: int = 0
    arch_overrides: dict = field(default_factory=dict)
    train: TrainConfig = TrainConfig()
    boost: BoostConfig = BoostConfig()


def _typed(section: str, key: str, value, kinds, predicate=None):
    allowed = kinds if isinstance(kinds, tuple) else (kinds,)
    # JSON booleans are ints to isinstance; only accept them when asked for
    if isinstance(value, bool) and bool not in allowed or not isinstance(value, allowed):
        raise ConfigError(f"{section}.{key}: unexpected type {type(value).__name__}")
    if predicate is not None and not predicate(value):
        raise ConfigError(f"{section}.{key}: invalid value {value!r}")
    return value


class _Section:
    """One config object; tracks consumed keys so leftovers can be rejected."""

    def __init__(self, name: str, data: dict):
        if not isinstance(data, dict):
            raise ConfigError(f"{name}: expected an object")
        self.name = name
        self.data = dict(data)

    def take(self, key, default, kinds, predicate=None):
        if key not in self.data:
            return default
        return _typed(self.name, key, self.data.pop(key), kinds, predicate)

    def finish(self):
        if self.data:
            extra = ", ".join(sorted(self.data))
            raise ConfigError(f"{self.name}: unknown keys: {extra}")


def resolve_families(value):
    """A count selects the first N families; a list names them outright."""
    if isinstance(value, bool):
        raise ConfigError("families: unexpected type bool")
    if isinstance(value, str) and value.strip().isdigit():
        value = int(value)
    if isinstance(value, int):
        return tuple(family_names(value))
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        names = []
        for name in value:
            if name not in FAMILIES:
                raise ConfigError(f"unknown family {name!r}; known: {', '.join(FAMILIES)}")
            if name in names:
                raise ConfigError(f"duplicate family {name!r}")
            names.append(name)
        if not names:
            raise ConfigError("families: need at least one family")
        return tuple(names)
    raise ConfigError(f"families: expected a count or name list, got {value!r}")


def parse_config(data: dict) -> PipelineConfig:
    try:
        top = _Section("config", data)
        seed = top.take("seed", 0, int, lambda v: v >= 0)

        gen = _Section("gen", top.take("gen", {}, dict))
        families = resolve_families(gen.take("families", list(FAMILIES), (int, str, list)))
        per_class = gen.take("per_class", 40, int, lambda v: v >= 2)
        gen_seed = gen.take("seed", seed, int, lambda v: v >= 0)
        gen.finish()

        render = _Section("render", top.take("render", {}, dict))
        render_cfg = RenderConfig(
            resolution=render.take("resolution", 256, int),
            fill_fraction=render.take("fill", 0.9, (int, float)),
        )
        render.finish()

        split = _Section("split", top.take("split", {}, dict))
        train_fraction = split.take(
            "train_fraction", 0.8, (int, float), lambda v: 0.0 < v < 1.0
        )
        split_seed = split.take("seed", seed, int, lambda v: v >= 0)
        split.finish()

        arch = top.take("arch", {}, dict)
        if not isinstance(arch, dict):
            raise ConfigError("arch: expected an object")
        unknown = set(arch) - _ARCH_FIELDS
        if unknown:
            raise ConfigError(f"arch: unknown keys: {', '.join(sorted(unknown))}")
        arch_overrides = {
            k: tuple(v) if isinstance(v, list) else v for k, v in arch.items()
        }

        train = _Section("train", top.take("train", {}, dict))
        train_cfg = TrainConfig(
            epochs=train.take("epochs", 100, int),
            batch_size=train.take("batch_size", 20, int),
            lr=train.take("lr", 0.001, (int, float)),
            seed=train.take("seed", seed, int, lambda v: v >= 0),
            class_weighting=train.take("class_weighting", True, bool),
        )
        train.finish()

        boost = _Section("boost", top.take("boost", {}, dict))
        boost_cfg = BoostConfig(
            rounds=boost.take("rounds", 100, int),
            learning_rate=boost.take("learning_rate", 0.1, (int, float)),
            max_depth=boost.take("max_depth", 4, int),
            min_child_weight=boost.take("min_child_weight", 1.0, (int, float)),
            reg_lambda=boost.take("reg_lambda", 1.0, (int, float)),
            gamma=boost.take("gamma", 0.0, (int, float)),
        )
        boost.finish()
        top.finish()
    except ConfigError:
        raise
    except ValueError as exc:  # dataclass validators
        raise ConfigError(str(exc)) from exc
    return PipelineConfig(
        families=families,
        per_class=per_class,
        gen_seed=gen_seed,
        render=render_cfg,
        train_fraction=train_fraction,
        split_seed=split_seed,
        arch_overrides=arch_overrides,
        train=train_cfg,
        boost=boost_cfg,
    )


def load_config(path=None) -> PipelineConfig:
    """Load the config file, honoring the environment override; {} if absent."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return parse_config({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)
