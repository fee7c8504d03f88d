"""Run configuration: every tunable of a pipeline run in one JSON document.

User documents are merged over the defaults; unknown keys are rejected at
every nesting level. The resolved document and its hash are archived with
each run.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError
from .generator import GeneratorConfig
from .lstm import TrainConfig
from .storage import digest
from .synth import SynthSpec

DEFAULTS = {
    "synth": {"seed": 7, "spec": SynthSpec().to_dict()},
    "corpus": {
        "profile": "synthetic",
        "min_depth": 0,
        # "ratio": first n_train cascades by root time, then the next n_test;
        # "time": root timestamp < boundary; "group": seeded group assignment
        "split": {"rule": "ratio", "n_train": 1333, "n_test": 667, "seed": 0,
                  "boundary": None, "group_key": "community", "group_ratio": [2, 1]},
        "max_malformed_fraction": 0.1,
        "malformed_allowance": 2,
    },
    "model": {"hidden_sizes": [32, 8], "init_seed": 0},
    "train": {"epochs": 5, "bptt_cap": 500, "shuffle_seed": 0, "learning_rate": 0.001, "patience": 0},
    "baseline": {"seed": 0},
    "generator": {"max_depth": 160, "max_size": 10000, "trials_per_seed": 1, "rng_seed": 11},
    "pool": {"size": 200, "n_seeds": 500, "score_task": "branch"},
    "metrics": {"virality_bins": 50, "power_law_xmin": 6},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "spec":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


class RunConfig:
    def __init__(self, overrides=None):
        overrides = overrides or {}
        if not isinstance(overrides, dict):
            raise ConfigError("config document must be a JSON object")
        merged = _merge(DEFAULTS, overrides)
        if "spec" in overrides.get("synth", {}):
            merged["synth"]["spec"] = _merge(DEFAULTS["synth"]["spec"], overrides["synth"]["spec"], "synth.spec")
        self.data = merged
        self._validate()

    def _validate(self):
        try:
            self.synth_spec()
            self.train_config()
            self.generator_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        split = self.data["corpus"]["split"]
        if split["rule"] not in ("ratio", "time", "group"):
            raise ConfigError(f"unknown split rule {split['rule']!r}")
        if self.data["pool"]["score_task"] not in ("branch", "speed", "both"):
            raise ConfigError("pool.score_task must be branch, speed or both")
        if self.data["pool"]["size"] < 1 or self.data["pool"]["n_seeds"] < 1:
            raise ConfigError("pool size and seed count must be positive")

    @classmethod
    def load(cls, path=None):
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls(doc)

    def __getitem__(self, key):
        return self.data[key]

    def set(self, dotted, value):
        node = self.data
        *head, last = dotted.split(".")
        for k in head:
            node = node[k]
        if last not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[last] = value
        self._validate()

    def to_dict(self):
        return copy.deepcopy(self.data)

    def hash(self) -> str:
        return digest(self.data)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec.from_dict(self.data["synth"]["spec"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.data["train"])

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(**self.data["generator"])
