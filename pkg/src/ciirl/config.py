# src/ciirl/config.py

import dataclasses
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

from .core.features import NetworkConfig
from .core.maxent import TrainConfig
from .core.mdp import ADD_OBSTACLES, CHANGE_SLIP, SHIFT_INITIAL, GridworldSpec, Perturbation
from .core.trajectories import (BODY_TEXT_SIZES, CAPTION_SIZES, PreferenceIntervention,
                                horizontal_band_interventions, three_corridor_interventions)
from .exceptions import CiIrlError, ConfigError

CONFIG_VERSION = 1
FMIRL = "fmirl"
AIRL_TOY = "airl-toy"
PIPELINES = (FMIRL, AIRL_TOY)

THREE_CORRIDOR = "three-corridor"
THREE_CORRIDOR_CAPTION = "three-corridor-caption"
HORIZONTAL_BANDS = "horizontal-bands"


@dataclass(frozen=True)
class Panel:
    """One trained configuration shown in the reproduction figure."""
    lambda_ci: float = 0.0
    lambda_l2: float = 0.0
    lambda_lip: float = 0.0

    def apply(self, train):
        return replace(train, lambda_ci=self.lambda_ci, lambda_l2=self.lambda_l2, lambda_lip=self.lambda_lip)


@dataclass(frozen=True)
class EvalConfig:
    n_seeds: int = 5
    n_rollouts: int = 10
    standardized: bool = True
    checkpoints: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(self.checkpoints))
        if self.n_seeds < 1 or self.n_rollouts < 1:
            raise ConfigError("eval.n_seeds and eval.n_rollouts must be >= 1.")

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def to_dict(self):
        return {"n_seeds": self.n_seeds, "n_rollouts": self.n_rollouts,
                "standardized": self.standardized, "checkpoints": list(self.checkpoints)}


@dataclass(frozen=True)
class ExperimentConfig:
    gridworld: GridworldSpec = field(default_factory=GridworldSpec)
    interventions: Tuple[PreferenceIntervention, ...] = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    perturbations: Tuple[Perturbation, ...] = ()
    output_dir: str = "ciirl-out"
    pipeline: str = FMIRL
    seed: int = 0
    temperature: float = 0.05
    eval: EvalConfig = field(default_factory=EvalConfig)
    panels: Tuple[Panel, ...] = ()
    preset: Optional[str] = None

    def __post_init__(self):
        for name in ("interventions", "perturbations", "panels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def validate(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got '{self.pipeline}'.")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}.")
        self.gridworld.validate()
        if not self.interventions:
            raise ConfigError("At least one intervention is required.")
        for intervention in self.interventions:
            intervention.validate(self.gridworld)
        return self

    def with_overrides(self, seed=None, output_dir=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=output_dir)
        return cfg

    @classmethod
    def from_dict(cls, data):
        _check_keys(data, {"version"} | set(_field_names(cls)), "")
        if data.get("version") != CONFIG_VERSION:
            raise ConfigError(f"version: expected {CONFIG_VERSION}, got {data.get('version')!r}.")
        kwargs = {}
        try:
            base = preset_config(data["preset"]) if data.get("preset") is not None else cls()
            if "gridworld" in data:
                _check_keys(data["gridworld"], _field_names(GridworldSpec), "gridworld")
                kwargs["gridworld"] = GridworldSpec.from_dict(data["gridworld"])
            if "interventions" in data:
                kwargs["interventions"] = [
                    PreferenceIntervention.from_dict(_checked(item, PreferenceIntervention, f"interventions[{i}]"))
                    for i, item in enumerate(_as_list(data["interventions"], "interventions"))]
            if "train" in data:
                _check_keys(data["train"], _field_names(TrainConfig), "train")
                if "network" in data["train"]:
                    _check_keys(data["train"]["network"], _field_names(NetworkConfig), "train.network")
                kwargs["train"] = TrainConfig.from_dict({**base.train.to_dict(), **data["train"]})
            if "perturbations" in data:
                kwargs["perturbations"] = [
                    Perturbation.from_dict(_checked(item, Perturbation, f"perturbations[{i}]"))
                    for i, item in enumerate(_as_list(data["perturbations"], "perturbations"))]
            if "eval" in data:
                kwargs["eval"] = EvalConfig.from_dict(_checked(data["eval"], EvalConfig, "eval"))
            if "panels" in data:
                kwargs["panels"] = [Panel(**_checked(item, Panel, f"panels[{i}]"))
                                    for i, item in enumerate(_as_list(data["panels"], "panels"))]
            for name in ("output_dir", "pipeline", "seed", "temperature", "preset"):
                if name in data:
                    kwargs[name] = data[name]
            cfg = replace(base, **kwargs)
            if "train" not in data or "seed" not in data["train"]:
                cfg = replace(cfg, train=replace(cfg.train, seed=cfg.seed))
            return cfg.validate()
        except ConfigError:
            raise
        except (CiIrlError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

    def to_dict(self):
        data = {
            "version": CONFIG_VERSION,
            "gridworld": self.gridworld.to_dict(),
            "interventions": [iv.to_dict() for iv in self.interventions],
            "train": self.train.to_dict(),
            "perturbations": [p.to_dict() for p in self.perturbations],
            "output_dir": self.output_dir,
            "pipeline": self.pipeline,
            "seed": self.seed,
            "temperature": self.temperature,
            "eval": self.eval.to_dict(),
            "panels": [dataclasses.asdict(p) for p in self.panels],
        }
        if self.preset is not None:
            data["preset"] = self.preset
        return data


def _field_names(cls):
    return [f.name for f in dataclasses.fields(cls)]


def _check_keys(data, allowed, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}.")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"Unknown configuration key '{f'{path}.{key}' if path else key}'.")


def _checked(data, cls, path):
    _check_keys(data, _field_names(cls), path)
    return data


def _as_list(data, path):
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a list, got {type(data).__name__}.")
    return data


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(data)


def _corridor_perturbations(spec):
    wall = tuple((x, spec.height // 2) for x in range(spec.width - 3))
    return (
        Perturbation(ADD_OBSTACLES, cells=wall),
        Perturbation(CHANGE_SLIP, slip_prob=0.3),
        Perturbation(SHIFT_INITIAL, cells=((0, spec.height - 1),)),
    )


def _three_corridor(sizes, name):
    spec = GridworldSpec()
    return ExperimentConfig(
        gridworld=spec,
        interventions=three_corridor_interventions(spec, sizes),
        perturbations=_corridor_perturbations(spec),
        panels=(Panel(), Panel(lambda_l2=1e-3), Panel(lambda_ci=0.01), Panel(lambda_ci=0.05)),
        train=TrainConfig(lr=2e-2),
        preset=name,
    )


def _horizontal_bands():
    h = 16
    spec = GridworldSpec(width=16, height=h, start_cells=tuple((0, y) for y in range(h)),
                         goal_cells=tuple((15, y) for y in range(h)))
    wall = tuple((spec.width // 2, y) for y in range(h - 3))
    return ExperimentConfig(
        gridworld=spec,
        interventions=horizontal_band_interventions(spec),
        perturbations=(Perturbation(ADD_OBSTACLES, cells=wall), Perturbation(CHANGE_SLIP, slip_prob=0.3)),
        panels=(Panel(), Panel(lambda_l2=1e-3), Panel(lambda_lip=1.0), Panel(lambda_ci=0.1), Panel(lambda_ci=0.5)),
        preset=HORIZONTAL_BANDS,
    )


def preset_config(name=THREE_CORRIDOR):
    builders = {
        THREE_CORRIDOR: lambda: _three_corridor(BODY_TEXT_SIZES, THREE_CORRIDOR),
        THREE_CORRIDOR_CAPTION: lambda: _three_corridor(CAPTION_SIZES, THREE_CORRIDOR_CAPTION),
        HORIZONTAL_BANDS: _horizontal_bands,
    }
    if name not in builders:
        raise ConfigError(f"Unknown preset '{name}'. Choose from {sorted(builders)}.")
    return builders[name]().validate()
