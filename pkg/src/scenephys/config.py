"""Run configuration: defaults, then a TOML file, then ``SCENEPHYS_*``
environment variables, then ``--set`` overrides, resolved into the module
config dataclasses.

Keys mirror the dataclass fields. Sections: ``run``, ``evaluator`` (with
``evaluator.sim`` and ``evaluator.reach``), ``tto``, ``corpus``, ``grpo``
(with ``grpo.perturbation``). An environment variable
``SCENEPHYS_EVALUATOR__SIM__DT=0.005`` sets ``evaluator.sim.dt``; values are
parsed as TOML literals and fall back to plain strings.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import CorpusConfig
from .dynamics import SimConfig
from .evaluator import CONSTRAINTS, EvaluatorConfig
from .grpo.core import GRPO_REWARD_CONFIG, GrpoConfig, Perturbation
from .navigation import ReachConfig
from .tto import TtoConfig

ENV_PREFIX = "SCENEPHYS_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSettings:
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class GrpoRun:
    """The GRPO training command: template, pretraining, and training knobs."""

    template: str = "toy-bedroom"
    dataset_size: int = 2000
    pretrain_steps: int = 20000
    validation_groups: int = 100
    validation_reference_samples: int = 1024
    reward_enabled: tuple[str, ...] = GRPO_REWARD_CONFIG.enabled
    reward_surface_samples: int = GRPO_REWARD_CONFIG.surface_samples
    train: GrpoConfig = GrpoConfig(checkpoint_every=100)

    def __post_init__(self):
        if self.dataset_size < 1 or self.pretrain_steps < 0 or self.validation_groups < 0:
            raise ValueError("dataset_size must be positive; pretrain_steps and validation_groups non-negative")
        if self.validation_reference_samples < 1:
            raise ValueError("validation_reference_samples must be positive")
        unknown = set(self.reward_enabled) - set(CONSTRAINTS)
        if unknown:
            raise ValueError(f"unknown constraints {sorted(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = RunSettings()
    evaluator: EvaluatorConfig = EvaluatorConfig()
    tto: TtoConfig = TtoConfig()
    corpus: CorpusConfig = CorpusConfig()
    grpo: GrpoRun = GrpoRun()

    def grpo_config(self) -> GrpoConfig:
        """Training config with the reward built from the evaluator section."""
        reward_cfg = dataclasses.replace(self.evaluator, enabled=self.grpo.reward_enabled,
                                         surface_samples=self.grpo.reward_surface_samples)
        return dataclasses.replace(self.grpo.train, reward_config=reward_cfg)

    def to_dict(self) -> dict[str, Any]:
        return to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# The training config nests the reward and perturbation; in files the reward
# comes from the evaluator section and the perturbation is ``grpo.perturbation``.
_GRPO_HIDDEN = {"reward_config"}


def to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        out = {}
        for f in dataclasses.fields(obj):
            if isinstance(obj, GrpoConfig) and f.name in _GRPO_HIDDEN:
                continue
            out[f.name] = to_plain(getattr(obj, f.name))
        if isinstance(obj, GrpoRun):
            train = out.pop("train")
            out.update(train)
        return out
    if isinstance(obj, Mapping):
        return {str(k): to_plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def defaults() -> dict[str, Any]:
    return RunConfig().to_dict()


def _merge(base: dict, override: Mapping, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[k], dict) and not _is_free_map(where):
            if not isinstance(v, Mapping):
                raise ConfigError(f"config key {where!r} must be a table")
            out[k] = _merge(out[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v) if not isinstance(v, Mapping) else dict(v)
    return out


# tables whose keys are data (constraint or violation names), not fields
_FREE_MAPS = {"evaluator.weights", "corpus.violation_mix", "corpus.ranges"}


def _is_free_map(path: str) -> bool:
    return path in _FREE_MAPS


def _literal(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _nested(path: list[str], value: Any) -> dict:
    d: dict = {}
    cur = d
    for p in path[:-1]:
        cur = cur.setdefault(p, {})
    cur[path[-1]] = value
    return d


def env_overrides(environ: Mapping[str, str] | None = None) -> list[dict]:
    environ = os.environ if environ is None else environ
    out = []
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if len(parts) < 2:
            continue
        out.append(_nested(parts, _literal(environ[name])))
    return out


def set_overrides(items: list[str]) -> list[dict]:
    out = []
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.append(_nested([p.strip() for p in key.split(".")], _literal(value.strip())))
    return out


def _build(cls, data: Mapping[str, Any], where: str):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        sub = f"{where}.{f.name}" if where else f.name
        default = getattr(cls(), f.name) if f.default is dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            v = _build(type(default), v, sub)
        elif isinstance(default, tuple):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        elif isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        elif default is None and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        kwargs[f.name] = v
    if cls is CorpusConfig and "ranges" in kwargs:
        kwargs["ranges"] = {k: tuple(v) for k, v in kwargs["ranges"].items()}
    return cls(**kwargs)


def from_dict(data: Mapping[str, Any]) -> RunConfig:
    """Build and validate a RunConfig from a complete plain mapping."""
    try:
        g = dict(data["grpo"])
        train_keys = {f.name for f in dataclasses.fields(GrpoConfig)} - _GRPO_HIDDEN
        train = {k: g.pop(k) for k in list(g) if k in train_keys}
        grpo = _build(GrpoRun, g, "grpo")
        grpo = dataclasses.replace(grpo, train=_build(GrpoConfig, train, "grpo"))
        return RunConfig(
            run=_build(RunSettings, data["run"], "run"),
            evaluator=_build(EvaluatorConfig, data["evaluator"], "evaluator"),
            tto=_build(TtoConfig, data["tto"], "tto"),
            corpus=_build(CorpusConfig, data["corpus"], "corpus"),
            grpo=grpo,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def resolve(config_file: str | Path | None = None, sets: list[str] | None = None,
            environ: Mapping[str, str] | None = None) -> RunConfig:
    merged = defaults()
    layers: list[Mapping] = []
    if config_file is not None:
        try:
            with open(config_file, "rb") as fh:
                layers.append(tomllib.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {config_file}: {exc}") from exc
    layers += env_overrides(environ)
    layers += set_overrides(sets or [])
    for layer in layers:
        merged = _merge(merged, layer)
    return from_dict(merged)


__all__ = ["ConfigError", "RunConfig", "RunSettings", "GrpoRun", "resolve", "from_dict", "defaults", "to_plain",
           "env_overrides", "set_overrides", "SimConfig", "ReachConfig", "Perturbation"]
