"""Experiment configuration: TOML loading, validation and variant switches."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .env import ConfigError, GameConfig
from .learner import LearnerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

VARIANTS = ("full", "no_EO", "no_EO_no_CE", "single_gamma")
MODES = ("belief", "recurrent")
DEFAULT_GAMMAS = (0.9, 0.99, 0.997, 0.9995)


def _check_keys(cls, data: dict, section: str) -> None:
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")


@dataclass(frozen=True)
class EnsembleConfig:
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    epochs: int = 200
    episodes_per_epoch: int = 20
    grad_steps: int = 64
    evo_population: int = 8
    evo_sigma: float = 0.05
    evo_episodes: int = 3
    evo_margin: float = 0.5
    running_avg_rate: float = 0.1
    distill_cadence: int = 10
    distill_steps: int = 5000
    distill_batch: int = 256
    distill_lr: float = 1e-3
    distill_holdout: float = 0.1
    distill_min_samples: int = 1000
    eo_start: int = 20
    eo_interval: int = 5

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if not self.gammas:
            raise ConfigError("ensemble.gammas must not be empty")
        for g in self.gammas:
            if not 0.0 < g < 1.0:
                raise ConfigError(f"ensemble.gammas entries must lie in (0, 1), got {g!r}")
        if len(set(self.gammas)) != len(self.gammas):
            raise ConfigError("ensemble.gammas must be distinct")
        for key in ("epochs", "episodes_per_epoch", "evo_episodes", "distill_batch",
                    "distill_min_samples", "eo_interval"):
            if getattr(self, key) < 1:
                raise ConfigError(f"ensemble.{key} must be at least 1")
        for key in ("grad_steps", "evo_population", "distill_cadence", "distill_steps", "eo_start"):
            if getattr(self, key) < 0:
                raise ConfigError(f"ensemble.{key} must be non-negative")
        if self.evo_sigma < 0:
            raise ConfigError("ensemble.evo_sigma must be non-negative")
        if not 0.0 < self.running_avg_rate <= 1.0:
            raise ConfigError("ensemble.running_avg_rate must lie in (0, 1]")
        if not 0.0 < self.distill_holdout < 1.0:
            raise ConfigError("ensemble.distill_holdout must lie in (0, 1)")
        if self.distill_lr <= 0:
            raise ConfigError("ensemble.distill_lr must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleConfig":
        _check_keys(cls, data, "ensemble")
        return cls(**data)


@dataclass(frozen=True)
class MetaConfig:
    lambda1: float = 0.1
    lambda2: float = 1.0
    T0: float = 30.0
    T_min: float = 0.2
    decay: float = 0.975
    proposals: int = 20
    eval_train_steps: int = 20_000
    eval_episodes: int = 200
    eval_gamma: float = 0.99

    def __post_init__(self):
        if not self.T0 > self.T_min > 0:
            raise ConfigError("meta.T0 must exceed meta.T_min, which must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("meta.decay must lie in (0, 1)")
        if self.proposals < 0:
            raise ConfigError("meta.proposals must be non-negative")
        if self.eval_train_steps < 0:
            raise ConfigError("meta.eval_train_steps must be non-negative")
        if self.eval_episodes < 1:
            raise ConfigError("meta.eval_episodes must be at least 1")
        if not 0.0 < self.eval_gamma < 1.0:
            raise ConfigError("meta.eval_gamma must lie in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "MetaConfig":
        _check_keys(cls, data, "meta")
        return cls(**data)


@dataclass(frozen=True)
class VariantSwitches:
    """What a variant turns on: member discounts, evolution, ensemble optimization."""

    gammas: tuple[float, ...]
    evolution: bool
    ensemble_optimization: bool


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    mode: str = "belief"
    variant: str = "full"
    single_gamma: float = 0.99
    output_dir: str = "runs/default"
    env: GameConfig = field(default_factory=GameConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.single_gamma < 1.0:
            raise ConfigError("single_gamma must lie in (0, 1)")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")

    # -- loading --------------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        sections = {"env": GameConfig, "learner": LearnerConfig,
                    "ensemble": EnsembleConfig, "meta": MetaConfig}
        top = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in top:
                raise ConfigError(f"unknown key {key}")
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be a table")
                kwargs[key] = sections[key].from_dict(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "mode": self.mode, "variant": self.variant,
             "single_gamma": self.single_gamma, "output_dir": self.output_dir,
             "env": self.env.to_dict(), "learner": self.learner.to_dict(),
             "ensemble": asdict(self.ensemble), "meta": asdict(self.meta)}
        d["ensemble"]["gammas"] = list(self.ensemble.gammas)
        return d

    # -- variants -------------------------------------------------------------
    def switches(self) -> VariantSwitches:
        gammas = self.ensemble.gammas
        if self.variant == "full":
            return VariantSwitches(gammas, True, True)
        if self.variant == "no_EO":
            return VariantSwitches(gammas, True, False)
        if self.variant == "single_gamma":
            return VariantSwitches((self.single_gamma,), False, False)
        # no_EO_no_CE: one plain learner whose discount is drawn from the ensemble list by seed
        return VariantSwitches((gammas[int(self.seed) % len(gammas)],), False, False)


def resolve_output_dir(cli_out: Optional[str], env_out: Optional[str], config_out: str) -> Path:
    """``--out`` beats the ``AIIG_OUT`` environment variable, which beats the config file."""
    return Path(cli_out or env_out or config_out)


def dump_toml(data: dict) -> str:
    """Minimal TOML writer for the config echo (scalars, lists and one level of tables)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        raise TypeError(f"cannot encode {type(v).__name__}")

    lines = [f"{k} = {fmt(v)}" for k, v in data.items() if not isinstance(v, dict)]
    for k, v in data.items():
        if isinstance(v, dict):
            lines += ["", f"[{k}]"]
            lines += [f"{kk} = {fmt(vv)}" for kk, vv in v.items() if vv is not None]
    return "\n".join(lines) + "\n"
