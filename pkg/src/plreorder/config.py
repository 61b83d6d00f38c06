"""Run configuration: YAML parsing, validation, canonical serialization.

A run file has three sections.  ``task`` picks the objective
(``synthetic-mallows``, ``synthetic-bimodal``, or ``icl``); ``optimizer``
holds the search settings; ``scoring`` holds data paths, the answer metric,
the split policy, and (for ``icl``) the endpoint and prompt template.
Every optimizer default equals the reference operating point, so a minimal
file only needs the task, the item count, and for ``icl`` the data paths.

``config_hash`` digests the canonical JSON form, letting result files state
exactly which configuration produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .fitting import EMAConfig, GradientFitConfig
from .llm_client import EndpointConfig
from .optimizer import UPDATE_KINDS, OptimizerConfig
from .scoring import DEFAULT_TEMPLATE, METRICS, PromptTemplate

TASKS = ("synthetic-mallows", "synthetic-bimodal", "icl")


class ConfigError(ValueError):
    """The configuration file is missing, malformed, or inconsistent."""


@dataclass
class ScoringSettings:
    """Objective settings: data, metric, splits, endpoint."""

    metric: str = "exact-match"
    demonstrations: str | None = None
    dataset: str | None = None
    validation_budget: int = 1000
    split_fraction: float = 0.8
    target: list[int] | None = None
    target_b: list[int] | None = None
    endpoint: EndpointConfig | None = None
    template: PromptTemplate = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {sorted(METRICS)}")
        if self.validation_budget < 2:
            raise ConfigError("validation_budget must be >= 2")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie strictly between 0 and 1")


@dataclass
class RunConfig:
    """Everything needed to reproduce a run."""

    task: str
    optimizer: OptimizerConfig
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_dir: str = "runs"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for name in ("target", "target_b"):
            value = getattr(self.scoring, name)
            if value is not None and sorted(value) != list(range(self.optimizer.n_items)):
                raise ConfigError(
                    f"scoring.{name} must be a permutation of 0..{self.optimizer.n_items - 1}"
                )
        if self.task == "icl":
            if not self.scoring.demonstrations or not self.scoring.dataset:
                raise ConfigError("icl task needs scoring.demonstrations and scoring.dataset")
            if self.scoring.endpoint is None:
                raise ConfigError("icl task needs a scoring.endpoint section with a model")


# Config keys for the optimizer section, named after the quantities they set.
_OPTIMIZER_KEYS = {
    "items": "n_items",
    "update": "update",
    "iterations": "iterations",
    "samples_per_iteration": "batch_size",
    "elite_fraction": "elite_fraction",
    "final_draws": "final_draws",
    "mixture_components": "mixture_components",
    "em_rounds": "em_rounds",
    "min_component_weight": "min_component_weight",
    "weighted_elites": "weighted_elites",
    "train_minibatch": "train_minibatch",
    "ema_smoothing": ("ema", "alpha"),
    "rank_temperature": ("ema", "tau"),
    "adam_steps": ("grad", "steps"),
    "learning_rate": ("grad", "learning_rate"),
    "l2_penalty": ("grad", "l2_penalty"),
    "logit_clip": None,  # applied to both the EMA and gradient configs
}

_SCORING_KEYS = (
    "metric",
    "demonstrations",
    "dataset",
    "validation_budget",
    "split_fraction",
    "target",
    "target_b",
    "endpoint",
    "template",
)

_ENDPOINT_KEYS = (
    "model",
    "base_url",
    "api_key",
    "max_tokens",
    "parallelism",
    "retries",
    "backoff",
    "timeout",
    "system_preamble",
)

_TEMPLATE_KEYS = ("prefix", "example_format", "separator", "query_format")


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def _optimizer_from_dict(data: dict) -> OptimizerConfig:
    _check_keys(data, _OPTIMIZER_KEYS, "optimizer")
    if "items" not in data:
        raise ConfigError("optimizer.items is required")
    ema_kwargs: dict[str, Any] = {}
    grad_kwargs: dict[str, Any] = {}
    top_kwargs: dict[str, Any] = {}
    for key, value in data.items():
        destination = _OPTIMIZER_KEYS[key]
        if key == "logit_clip":
            ema_kwargs["clip"] = float(value)
            grad_kwargs["clip"] = float(value)
        elif isinstance(destination, tuple):
            group, name = destination
            (ema_kwargs if group == "ema" else grad_kwargs)[name] = value
        else:
            top_kwargs[destination] = value
    try:
        return OptimizerConfig(
            ema=EMAConfig(**ema_kwargs),
            grad=GradientFitConfig(**grad_kwargs),
            **top_kwargs,
        )
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid optimizer settings: {err}") from err


def _optimizer_to_dict(config: OptimizerConfig) -> dict:
    if config.ema.clip != config.grad.clip:
        raise ConfigError("EMA and gradient clip bounds must agree in a run file")
    return {
        "items": config.n_items,
        "update": config.update,
        "iterations": config.iterations,
        "samples_per_iteration": config.batch_size,
        "elite_fraction": config.elite_fraction,
        "final_draws": config.final_draws,
        "mixture_components": config.mixture_components,
        "em_rounds": config.em_rounds,
        "min_component_weight": config.min_component_weight,
        "weighted_elites": config.weighted_elites,
        "train_minibatch": config.train_minibatch,
        "ema_smoothing": config.ema.alpha,
        "rank_temperature": config.ema.tau,
        "adam_steps": config.grad.steps,
        "learning_rate": config.grad.learning_rate,
        "l2_penalty": config.grad.l2_penalty,
        "logit_clip": config.grad.clip,
    }


def _scoring_from_dict(data: dict) -> ScoringSettings:
    _check_keys(data, _SCORING_KEYS, "scoring")
    kwargs: dict[str, Any] = {k: v for k, v in data.items() if k not in ("endpoint", "template")}
    if "target" in kwargs and kwargs["target"] is not None:
        kwargs["target"] = [int(i) for i in kwargs["target"]]
    if "target_b" in kwargs and kwargs["target_b"] is not None:
        kwargs["target_b"] = [int(i) for i in kwargs["target_b"]]
    if data.get("endpoint") is not None:
        endpoint = data["endpoint"]
        _check_keys(endpoint, _ENDPOINT_KEYS, "scoring.endpoint")
        try:
            kwargs["endpoint"] = EndpointConfig(**endpoint)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid endpoint settings: {err}") from err
    if data.get("template") is not None:
        template = data["template"]
        _check_keys(template, _TEMPLATE_KEYS, "scoring.template")
        try:
            kwargs["template"] = PromptTemplate(**template)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid template settings: {err}") from err
    try:
        return ScoringSettings(**kwargs)
    except TypeError as err:
        raise ConfigError(f"invalid scoring settings: {err}") from err


def _scoring_to_dict(settings: ScoringSettings) -> dict:
    out: dict[str, Any] = {
        "metric": settings.metric,
        "demonstrations": settings.demonstrations,
        "dataset": settings.dataset,
        "validation_budget": settings.validation_budget,
        "split_fraction": settings.split_fraction,
        "target": settings.target,
        "target_b": settings.target_b,
        "endpoint": None,
        "template": {
            "prefix": settings.template.prefix,
            "example_format": settings.template.example_format,
            "separator": settings.template.separator,
            "query_format": settings.template.query_format,
        },
    }
    if settings.endpoint is not None:
        out["endpoint"] = {key: getattr(settings.endpoint, key) for key in _ENDPOINT_KEYS}
    return out


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run file must contain a mapping at the top level")
    _check_keys(data, ("task", "optimizer", "scoring", "seeds", "output_dir"), "top-level")
    if "task" not in data:
        raise ConfigError("task is required")
    if "optimizer" not in data or not isinstance(data["optimizer"], dict):
        raise ConfigError("an optimizer section is required")
    scoring_section = data.get("scoring") or {}
    if not isinstance(scoring_section, dict):
        raise ConfigError("scoring section must be a mapping")
    kwargs: dict[str, Any] = {
        "task": data["task"],
        "optimizer": _optimizer_from_dict(data["optimizer"]),
        "scoring": _scoring_from_dict(scoring_section),
    }
    if "seeds" in data:
        kwargs["seeds"] = [int(s) for s in data["seeds"]]
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    return RunConfig(**kwargs)


def config_to_dict(config: RunConfig) -> dict:
    return {
        "task": config.task,
        "optimizer": _optimizer_to_dict(config.optimizer),
        "scoring": _scoring_to_dict(config.scoring),
        "seeds": list(config.seeds),
        "output_dir": config.output_dir,
    }


def load_config(path: Path | str) -> RunConfig:
    """Parse and validate a run file; every failure raises ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from err
    config = config_from_dict(data)
    # Referenced data files must exist at load time so failures are early.
    base = path.parent
    for name in ("demonstrations", "dataset"):
        value = getattr(config.scoring, name)
        if value is not None:
            resolved = Path(value)
            if not resolved.is_absolute():
                resolved = base / resolved
            if not resolved.exists():
                raise ConfigError(f"scoring.{name} not found: {resolved}")
            setattr(config.scoring, name, str(resolved))
    return config


def save_config(config: RunConfig, path: Path | str) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=True), encoding="utf-8")


def config_hash(config: RunConfig) -> str:
    """Stable digest of the canonical JSON form of the configuration.

    The output directory is excluded: it states where results land, not
    what was run, so moving a run must not change its identity.
    """
    data = config_to_dict(config)
    data.pop("output_dir", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def with_seed(config: OptimizerConfig, seed: int) -> OptimizerConfig:
    return replace(config, seed=int(seed))
