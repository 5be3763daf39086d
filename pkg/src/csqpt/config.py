"""YAML pipeline configuration with a versioned schema."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .metrics import WorstCaseConfig
from .mle import IterationConfig
from .process import ProcessModel
from .simulator import PhaseDistribution, ProbeSpec, probe_grid

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    pass


@dataclass
class ProbeConfig:
    """Either an explicit list of amplitudes or an evenly spaced grid on [0, alpha_max]."""

    alpha_max: float = 0.9375
    count: int = 4
    alphas: list[list[float]] | None = None  # [re, im] pairs; overrides the grid

    def probes(self) -> list[ProbeSpec]:
        if self.alphas is not None:
            return [ProbeSpec(complex(re, im), i) for i, (re, im) in enumerate(self.alphas)]
        return probe_grid(self.alpha_max, self.count)

    def validate(self):
        if self.alphas is None and (self.count < 1 or self.alpha_max < 0):
            raise ConfigError("probe grid needs count >= 1 and alpha_max >= 0")
        if self.alphas is not None and not self.alphas:
            raise ConfigError("explicit probe list is empty")


@dataclass
class BinConfig:
    dtheta: float = float(2 * np.pi / 64)
    dx: float = 12 / 128
    x_min: float = -6.0

    def validate(self):
        if self.dtheta <= 0 or self.dx <= 0:
            raise ConfigError("bin widths must be positive")


@dataclass
class SweepConfig:
    n_max_values: list[int] = field(default_factory=lambda: [3, 4, 5, 6, 7, 8])
    n_prime_values: list[int] = field(default_factory=lambda: [5])


@dataclass
class PipelineConfig:
    process: str = "identity"
    process_param: float = 0.0
    probes: ProbeConfig = field(default_factory=ProbeConfig)
    n_per_probe: int = 100_000
    eta: float = 1.0
    n_max: int = 7
    n_prime_max: int | None = None
    rescale_g: float = 1.0
    exact: bool = False
    phase: dict = field(default_factory=lambda: {"kind": "uniform", "count": 0, "offset": 0.0})
    bins: BinConfig = field(default_factory=BinConfig)
    iteration: IterationConfig = field(default_factory=IterationConfig)
    worst_case: WorstCaseConfig = field(default_factory=WorstCaseConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: str = "out"
    seed: int = 0
    schema_version: int = CONFIG_SCHEMA

    def model(self) -> ProcessModel:
        if self.process == "identity":
            return ProcessModel.identity()
        return ProcessModel(self.process, self.process_param)

    def phase_distribution(self) -> PhaseDistribution:
        return PhaseDistribution(**self.phase)

    def validate(self) -> "PipelineConfig":
        if self.schema_version != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema version {self.schema_version}")
        if self.n_per_probe < 1 or self.n_max < 0:
            raise ConfigError("n_per_probe must be >= 1 and n_max >= 0")
        if self.n_prime_max is not None and not 0 <= self.n_prime_max <= self.n_max:
            raise ConfigError(f"n_prime_max={self.n_prime_max} outside [0, n_max]")
        if self.rescale_g <= 0:
            raise ConfigError("rescale_g must be positive")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        try:
            self.model()
            self.phase_distribution()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.probes.validate()
        self.bins.validate()
        return self


_NESTED = {"probes": ProbeConfig, "bins": BinConfig, "iteration": IterationConfig,
           "worst_case": WorstCaseConfig, "sweep": SweepConfig}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: dict) -> PipelineConfig:
    data = dict(data or {})
    for key, cls in _NESTED.items():
        if key in data:
            data[key] = _build(cls, data[key], key)
    return _build(PipelineConfig, data, "config").validate()


def to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def load(path) -> PipelineConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data or {})


def dump(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)
