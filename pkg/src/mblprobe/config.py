"""Run configuration: YAML file, validated schema, canonical hash.

The hash covers every field that can change a numerical result.  The output
section and the worker count are excluded, so moving a run to a different
directory or machine keeps its identity.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import units
from .hamiltonian import DEFAULT_J2, DEFAULT_U, ModelSpec
from .propagator import NoiseSpec
from .protocol import DEFAULT_EQ_TIMES, DEVICE_STATES, RunPlan, half_filled_states

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unreadable or schema-invalid configuration files."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Grid(_Section):
    start: float
    stop: float
    points: int = Field(ge=1)

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


class ModelSection(_Section):
    n_sites: int = Field(12, ge=2)
    n_max: int = Field(3, ge=1)
    units: Literal["J1", "MHz"] = "J1"
    j1: float | list[float] = 1.0
    j2: float | list[float] = DEFAULT_J2
    u: float = DEFAULT_U
    omega: float = 0.0
    disorder: Grid | list[float] = Grid(start=1.0, stop=7.0, points=13)

    def _to_j1(self, x):
        x = np.asarray(x, dtype=float)
        return x / units.J1_MHZ if self.units == "MHz" else x

    def spec(self) -> ModelSpec:
        n = self.n_sites
        j1 = np.broadcast_to(self._to_j1(self.j1), (n - 1,)) if np.ndim(self.j1) == 0 \
            else self._to_j1(self.j1)
        j2 = np.broadcast_to(self._to_j1(self.j2), (max(n - 2, 0),)) if np.ndim(self.j2) == 0 \
            else self._to_j1(self.j2)
        return ModelSpec(n, j1, j2, u=float(self._to_j1(self.u)),
                         omega=float(self._to_j1(self.omega)), n_max=self.n_max)

    def disorder_grid(self) -> np.ndarray:
        grid = self.disorder.values() if isinstance(self.disorder, Grid) \
            else np.asarray(self.disorder, dtype=float)
        return self._to_j1(grid)


class RandomStates(_Section):
    count: int = Field(ge=1)
    seed: int = 0


class PlanSection(_Section):
    states: Literal["device"] | RandomStates | list[list[int]] = "device"
    realizations: int = Field(60, ge=1)
    shots: int = Field(3000, ge=1)
    mode: Literal["exact", "shots"] = "exact"
    eq_window: Grid = Grid(start=float(DEFAULT_EQ_TIMES[0]), stop=float(DEFAULT_EQ_TIMES[-1]),
                           points=DEFAULT_EQ_TIMES.size)
    extra_times: list[float] = []
    entropy_blocks: list[int] = []
    master_seed: int = Field(2021, ge=0)


class NoiseSection(_Section):
    enabled: bool = False
    rates: Literal["device"] | dict[str, list[float]] = "device"
    rate_scale: float = Field(1.0, ge=0)
    readout: Literal["device", "ideal"] | dict[str, list[float]] = "ideal"
    method: Literal["trajectories", "dense"] = "trajectories"
    trajectories: int = Field(200, ge=1)

    @field_validator("rates", "readout")
    @classmethod
    def _keys(cls, v, info):
        if isinstance(v, dict):
            want = {"t1_us", "t2star_us"} if info.field_name == "rates" else {"f00", "f11"}
            if set(v) != want:
                raise ValueError(f"expected keys {sorted(want)}, got {sorted(v)}")
        return v


class SolverSection(_Section):
    method: Literal["chebyshev", "krylov", "dense"] = "chebyshev"
    tol: float = Field(1e-9, gt=0)
    jobs: int = Field(1, ge=1)


class OutputSection(_Section):
    directory: str = "results"
    formats: list[Literal["csv", "json"]] = ["csv", "json"]


class AnalysisSection(_Section):
    min_realizations: int = Field(10, ge=2)
    distribution_h: list[float] | None = None
    kde_points: int = Field(512, ge=16)


class EstimateSection(_Section):
    chains: int = Field(3, ge=1)
    iterations: int = Field(1_000_000, ge=2)
    burn_in: int = Field(800_000, ge=0)
    thin: int = Field(10, ge=1)
    seed: int = 2021
    tau_cap: float = Field(50.0, gt=0)

    @model_validator(mode="after")
    def _schedule(self):
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if (self.iterations - self.burn_in) % self.thin:
            raise ValueError("iterations - burn_in must be a multiple of thin")
        return self


class CalibrationSection(_Section):
    n_sites: int = Field(12, ge=2)
    step_mhz: float = Field(5.0, gt=0)
    times: Grid = Grid(start=0.0, stop=10.0, points=40)
    offsets_mhz: list[float] | None = None
    max_offset_mhz: float = Field(15.4, ge=0)
    trace_noise: float = Field(0.0, ge=0)
    rounds: int = Field(1, ge=1)
    correction_error: float = Field(0.3, ge=0, le=1)
    seed: int = 7

    @model_validator(mode="after")
    def _length(self):
        if self.offsets_mhz is not None and len(self.offsets_mhz) != self.n_sites:
            raise ValueError("offsets_mhz needs one entry per calibration site")
        return self


class RunConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    model: ModelSection = ModelSection()
    plan: PlanSection = PlanSection()
    noise: NoiseSection = NoiseSection()
    solver: SolverSection = SolverSection()
    output: OutputSection = OutputSection()
    analysis: AnalysisSection = AnalysisSection()
    estimate: EstimateSection = EstimateSection()
    calibration: CalibrationSection = CalibrationSection()

    @model_validator(mode="after")
    def _consistent(self):
        n = self.model.n_sites
        if self.plan.states == "device" and n != DEVICE_STATES.shape[1]:
            raise ValueError(f"device initial states are {DEVICE_STATES.shape[1]}-site; "
                             f"use random or explicit states for n_sites={n}")
        if isinstance(self.plan.states, list) and any(len(s) != n for s in self.plan.states):
            raise ValueError("every explicit initial state needs n_sites entries")
        if self.noise.enabled and (self.noise.rates == "device" or self.noise.readout == "device") \
                and n > len(units.T1_US):
            raise ValueError("device noise tables cover at most 12 sites")
        return self

    # -- derived objects ---------------------------------------------------

    def spec(self) -> ModelSpec:
        return self.model.spec()

    def initial_states(self) -> np.ndarray:
        states = self.plan.states
        if states == "device":
            return DEVICE_STATES.copy()
        if isinstance(states, RandomStates):
            return half_filled_states(self.model.n_sites, states.count, states.seed)
        return np.asarray(states, dtype=np.int64)

    def readout(self):
        r = self.noise.readout
        if r == "ideal":
            return None
        if r == "device":
            return units.device_readout(self.model.n_sites)
        return np.asarray(r["f00"], float), np.asarray(r["f11"], float)

    def noise_spec(self) -> NoiseSpec | None:
        if not self.noise.enabled:
            return None
        n = self.model.n_sites
        if self.noise.rates == "device":
            decay, dephasing = units.device_noise_rates(n, self.noise.rate_scale)
        else:
            decay = self.noise.rate_scale * units.rate_from_time_us(self.noise.rates["t1_us"])
            dephasing = self.noise.rate_scale * units.rate_from_time_us(
                self.noise.rates["t2star_us"])
        return NoiseSpec(decay, dephasing)

    def run_plan(self, seed: int | None = None) -> RunPlan:
        p = self.plan
        return RunPlan(
            initial_states=self.initial_states(),
            disorder_grid=self.model.disorder_grid(),
            realizations=p.realizations,
            eq_times=p.eq_window.values(),
            shots=p.shots,
            readout=self.readout(),
            master_seed=p.master_seed if seed is None else seed,
            extra_times=p.extra_times,
            entropy_blocks=tuple(p.entropy_blocks),
        )

    def config_hash(self) -> str:
        data = self.model_dump(mode="json", exclude={"output": True, "solver": {"jobs"}})
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path, seed: int | None = None) -> RunConfig:
    """Read and validate a YAML config; ``seed`` overrides plan.master_seed."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if seed is not None:
        raw.setdefault("plan", {})
        if not isinstance(raw["plan"], dict):
            raise ConfigError(f"{path}: plan must be a mapping")
        raw["plan"]["master_seed"] = seed
    try:
        cfg = RunConfig.model_validate(raw)
        cfg.spec()
        cfg.run_plan()
    except ValidationError as exc:
        raise ConfigError(f"{path}: invalid configuration\n{exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


def default_config() -> RunConfig:
    return RunConfig()

