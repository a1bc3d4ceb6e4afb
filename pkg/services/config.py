from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import pydantic
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

from services.errors import ConfigError
from services.gate_synthesis import Axis, GateSpec
from services.noise_robustness import CouplingModel, NoiseModel, Scheme
from services.transmon_circuit import LatticeConfig

load_dotenv()

Experiment = Literal["synthesize", "evolve", "sweep", "decoherence", "circuit", "preset"]
PresetName = Literal["fig2", "fig3", "fig4", "fig5", "table-accel"]


@dataclass(frozen=True)
class Settings:
    threads: int
    out_dir: str
    log_level: str

    @classmethod
    def from_env(cls) -> "Settings":
        raw = os.getenv("HOLONOMY_THREADS", "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"HOLONOMY_THREADS must be an integer, got '{raw}'") from None
        if threads < 1:
            raise ConfigError(f"HOLONOMY_THREADS must be at least 1, got {threads}")
        return cls(
            threads=threads,
            out_dir=os.getenv("HOLONOMY_OUT_DIR", "results"),
            log_level=os.getenv("HOLONOMY_LOG_LEVEL", "INFO").upper(),
        )


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GateConfig(_Strict):
    """Either a preset rotation (axis + angle) or an explicit (gamma, theta, phi)."""

    axis: Optional[Axis] = None
    angle: Optional[float] = None
    gamma: Optional[float] = None
    theta: Optional[float] = None
    phi: Optional[float] = None

    @model_validator(mode="after")
    def _one_form(self) -> "GateConfig":
        preset = self.axis is not None or self.angle is not None
        explicit = any(v is not None for v in (self.gamma, self.theta, self.phi))
        if preset == explicit:
            raise ValueError("give either axis and angle, or gamma, theta and phi")
        if preset and (self.axis is None or self.angle is None):
            raise ValueError("a preset gate needs both axis and angle")
        if explicit and None in (self.gamma, self.theta, self.phi):
            raise ValueError("an explicit gate needs gamma, theta and phi")
        return self

    def spec(self) -> GateSpec:
        if self.axis is not None:
            return GateSpec.preset(self.axis, self.angle)
        return GateSpec(gamma=self.gamma, theta=self.theta, phi=self.phi)


class GridConfig(_Strict):
    start: float
    stop: float
    points: int = Field(ge=1)

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


class NoiseConfig(_Strict):
    """Rates in units of Omega; ``kappa`` sets decay and dephasing together."""

    decay: float = Field(0.0, ge=0)
    dephasing: float = Field(0.0, ge=0)
    kappa: Optional[float] = Field(None, ge=0)

    def model(self) -> NoiseModel:
        if self.kappa is not None:
            return NoiseModel.kappa(self.kappa)
        return NoiseModel(decay=self.decay, dephasing=self.dephasing)


class CircuitConfig(_Strict):
    lattice: LatticeConfig = Field(default_factory=LatticeConfig.default)
    omega_ghz: float = Field(0.015, gt=0)
    samples: int = Field(41, ge=2)
    two_qubit: bool = True
    gamma_prime: float = math.pi
    delta3_ghz: float = 0.0
    beta3: float = Field(1.8, gt=0)

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.omega_ghz


class ExperimentConfig(_Strict):
    experiment: Experiment
    preset: Optional[PresetName] = None
    gate: GateConfig = GateConfig(axis="x", angle=math.pi / 2)
    scheme: Scheme = "ours"
    detuning: float = -0.5
    omega: float = Field(1.0, gt=0)
    delta_grid: GridConfig = GridConfig(start=-0.1, stop=0.1, points=41)
    epsilon_grid: GridConfig = GridConfig(start=-0.1, stop=0.1, points=41)
    kappa_grid: GridConfig = GridConfig(start=0.0, stop=1e-3, points=11)
    coupling_model: CouplingModel = "bright"
    noise: NoiseConfig = NoiseConfig()
    samples: int = Field(101, ge=2)
    circuit: CircuitConfig = CircuitConfig()
    output: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _preset_named(self) -> "ExperimentConfig":
        if (self.experiment == "preset") != (self.preset is not None):
            raise ValueError("'preset' must be set exactly when experiment is 'preset'")
        return self


def canonical_json(value: object) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: Union[ExperimentConfig, dict]) -> str:
    payload = config.model_dump(mode="json") if isinstance(config, BaseModel) else config
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _describe(exc: pydantic.ValidationError) -> str:
    parts = []
    for item in exc.errors():
        where = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{where}: {item['msg']}")
    return "; ".join(parts)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")
    try:
        return ExperimentConfig.model_validate(raw)
    except pydantic.ValidationError as exc:
        raise ConfigError(f"{source}: {_describe(exc)}") from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))
