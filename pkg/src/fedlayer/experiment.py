"""Experiment documents: JSON config files plus dotted-path overrides.

Schema (all sections optional, unknown keys are rejected)::

    {
      "output_dir": "runs/example",           # str
      "seeds": [0, 1, 2],                     # list of int, one run per seed
      "federation": {...},                    # FederationConfig fields except seed/selector
      "selector": {...},                      # SolverConfig fields except seed
      "compare": {"selectors": ["nsga", "lntk_only"], "baselines": false}
    }

Overrides use the same paths, e.g. ``federation.rounds=3`` or
``selector.algorithm=abc``. Values are parsed as JSON when possible and kept
as strings otherwise.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .fedsim import FederationConfig
from .selector import ALGORITHMS, SolverConfig

TOP_KEYS = ("output_dir", "seeds", "federation", "selector", "compare")
COMPARE_KEYS = ("selectors", "baselines")
FEDERATION_KEYS = tuple(f.name for f in fields(FederationConfig) if f.name not in ("seed", "selector"))
SELECTOR_KEYS = tuple(f.name for f in fields(SolverConfig) if f.name != "seed")


def schema_keys():
    """Every valid dotted override path."""
    keys = ["output_dir", "seeds"]
    keys += [f"federation.{k}" for k in FEDERATION_KEYS]
    keys += [f"selector.{k}" for k in SELECTOR_KEYS]
    keys += [f"compare.{k}" for k in COMPARE_KEYS]
    return keys


def _parse_value(raw):
    if not isinstance(raw, str):
        return raw
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(doc, path, value):
    valid = schema_keys()
    if path not in valid:
        raise ConfigError(f"unknown config key {path!r}")
    parts = path.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config section {part!r} must be an object")
    node[parts[-1]] = _parse_value(value)
    return doc


@dataclass
class ExperimentConfig:
    output_dir: str = "runs/default"
    seeds: list = field(default_factory=lambda: [0])
    federation: FederationConfig = field(default_factory=FederationConfig)
    selectors: list = field(default_factory=list)
    baselines: bool = False

    def federation_for(self, seed, algorithm=None):
        cfg = copy.deepcopy(self.federation)
        cfg.seed = int(seed)
        if algorithm is not None:
            cfg.selector = SolverConfig.from_dict({**cfg.selector.to_dict(), "algorithm": algorithm})
        cfg.validate()
        return cfg

    def to_dict(self):
        fed = self.federation.to_dict()
        sel = fed.pop("selector")
        fed.pop("seed")
        sel.pop("seed")
        return {
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
            "federation": fed,
            "selector": sel,
            "compare": {"selectors": list(self.selectors), "baselines": self.baselines},
        }

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(doc) - set(TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        fed = dict(doc.get("federation") or {})
        sel = dict(doc.get("selector") or {})
        cmp_ = dict(doc.get("compare") or {})
        for name, section, allowed in (
            ("federation", fed, FEDERATION_KEYS),
            ("selector", sel, SELECTOR_KEYS),
            ("compare", cmp_, COMPARE_KEYS),
        ):
            bad = set(section) - set(allowed)
            if bad:
                raise ConfigError(f"unknown {name} keys: {sorted(bad)}")
        seeds = doc.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        selectors = cmp_.get("selectors", [])
        if isinstance(selectors, str):
            selectors = [s for s in selectors.split(",") if s]
        for s in selectors:
            if s not in ALGORITHMS:
                raise ConfigError(f"unknown selector {s!r}; expected one of {ALGORITHMS}")
        try:
            federation = FederationConfig(selector=SolverConfig.from_dict(sel), seed=seeds[0], **fed)
        except (TypeError, AttributeError) as exc:
            raise ConfigError(str(exc)) from exc
        out = doc.get("output_dir", "runs/default")
        if not isinstance(out, str) or not out:
            raise ConfigError("output_dir must be a non-empty string")
        return cls(out, seeds, federation, list(selectors), bool(cmp_.get("baselines", False)))


def load_experiment(path, overrides=()):
    """Read ``path`` (JSON), apply ``(dotted_key, value)`` overrides and validate."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for key, value in overrides:
        apply_override(doc, key, value)
    return ExperimentConfig.from_dict(doc)
