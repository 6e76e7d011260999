"""Run configuration: a YAML file with unit-suffixed keys.

Example::

    seed: 7
    output_dir: out
    emitter: {gamma_total_per_ns: 4.364, beta: 1.0, gamma_deph_per_ns: 0.0}
    pulse: {sigma_over_tau: [0.44, 1.0, 1.5, 2.0], mean_photons: 0.01}
    map: {d_t_ns: 0.02, channels: [tt]}
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .emitter import Channel, EmitterParams, PulseSpec, parse_channel_pair
from .errors import ConfigError
from .timetags import AcquisitionConfig
from .units import mhz_to_rad_ns


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EmitterSection(_Section):
    gamma_total_per_ns: float = Field(4.364, gt=0)
    beta: float = Field(1.0, ge=0, le=1)
    gamma_deph_per_ns: float = Field(0.0, ge=0)
    delta_e_MHz: float = 0.0

    def build(self) -> EmitterParams:
        return EmitterParams(self.gamma_total_per_ns, self.beta, self.gamma_deph_per_ns, mhz_to_rad_ns(self.delta_e_MHz))


class PulseSection(_Section):
    shape: Literal["gaussian", "cw"] = "gaussian"
    sigma_ns: Optional[float] = Field(None, gt=0)
    sigma_over_tau: Optional[Union[float, list[float]]] = None
    center_ns: float = 0.0
    mean_photons: float = Field(0.01, ge=0)
    detuning_MHz: float = 0.0

    @model_validator(mode="after")
    def _one_duration(self):
        if self.shape == "gaussian" and (self.sigma_ns is None) == (self.sigma_over_tau is None):
            raise ValueError("give exactly one of sigma_ns or sigma_over_tau for a gaussian pulse")
        ratios = self.ratios() or []
        if any(not r > 0 for r in ratios):
            raise ValueError("sigma_over_tau values must be > 0")
        return self

    def ratios(self) -> Optional[list[float]]:
        if self.sigma_over_tau is None:
            return None
        r = self.sigma_over_tau
        return [float(r)] if isinstance(r, (int, float)) else [float(x) for x in r]

    def build_all(self, emitter: EmitterParams) -> list[PulseSpec]:
        det = mhz_to_rad_ns(self.detuning_MHz)
        if self.shape == "cw":
            return [PulseSpec("cw", 1.0, self.center_ns, self.mean_photons, det)]
        sigmas = [self.sigma_ns] if self.sigma_ns is not None else [r * emitter.lifetime for r in self.ratios()]
        return [PulseSpec("gaussian", s, self.center_ns, self.mean_photons, det) for s in sigmas]


class MapSection(_Section):
    d_t_ns: float = Field(0.02, gt=0)
    window_ns: Optional[tuple[float, float]] = None
    channels: list[str] = ["tt"]
    payload: Literal["bin", "csv"] = "bin"
    integration_dt_ns: Optional[float] = Field(None, gt=0)

    @field_validator("channels")
    @classmethod
    def _channels(cls, v):
        for c in v:
            parse_channel_pair(c)
        return v

    @field_validator("window_ns")
    @classmethod
    def _window(cls, v):
        if v is not None and not v[1] > v[0]:
            raise ValueError("window_ns must be increasing")
        return v


class PipelineSection(_Section):
    adaptive_bin: bool = True
    rebin_factor: Optional[int] = Field(None, ge=1)
    monte_carlo_n: int = Field(200, ge=0)
    jitter_fwhm_ns: dict[str, float] = {"t": 0.030, "r": 0.150}
    apply_jitter: bool = False
    linecut_width_bins: int = Field(10, ge=1)

    @field_validator("monte_carlo_n")
    @classmethod
    def _mc(cls, v):
        if 0 < v < 100:
            raise ValueError("monte_carlo_n must be 0 (off) or >= 100")
        return v

    @field_validator("jitter_fwhm_ns")
    @classmethod
    def _jitter(cls, v):
        for k, x in v.items():
            Channel.parse(k)
            if x < 0:
                raise ValueError("jitter FWHM must be >= 0")
        return v

    def jitter(self) -> dict:
        return {Channel.parse(k): v for k, v in self.jitter_fwhm_ns.items()}


class AcquisitionSection(_Section):
    rep_period_ns: float = Field(1000.0 / 33.0, gt=0)
    pulse_separation_ns: float = Field(30.0, gt=0)
    gate_width_ns: Optional[float] = Field(None, gt=0)
    gate_offset_ns: float = Field(0.0, ge=0)
    clock_channel: int = Field(0, ge=0, le=255)
    channel_map: dict[int, str] = {1: "t", 2: "t", 3: "r", 4: "r"}

    def build(self) -> AcquisitionConfig:
        return AcquisitionConfig(
            self.rep_period_ns,
            self.pulse_separation_ns,
            dict(self.channel_map),
            self.clock_channel,
            self.gate_width_ns,
            self.gate_offset_ns,
        )


class SynthesisSection(_Section):
    n_pulses: int = Field(1_000_000, ge=1)
    mean_photons: Optional[float] = Field(None, gt=0)
    clock_period_jitter: float = Field(0.0, ge=0, lt=0.05)
    chunk_pulses: int = Field(1_000_000, ge=1)


class CalibrationSection(_Section):
    gamma_total_per_ns: Optional[float] = Field(None, gt=0)
    beta: Optional[float] = Field(None, gt=0, le=1)
    control_detuning_MHz: Optional[float] = None
    control_detuning_gamma: Optional[float] = None
    target: Optional[float] = -1.0
    n_mc: int = Field(2000, ge=100)

    @model_validator(mode="after")
    def _detuning_units(self):
        if self.control_detuning_MHz is not None and self.control_detuning_gamma is not None:
            raise ValueError("give control detuning in MHz or in units of gamma, not both")
        return self

    def control_detuning(self, gamma_total: float) -> Optional[float]:
        if self.control_detuning_MHz is not None:
            return mhz_to_rad_ns(self.control_detuning_MHz)
        if self.control_detuning_gamma is not None:
            return self.control_detuning_gamma * gamma_total
        return None


class RunConfig(_Section):
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "out"
    emitter: EmitterSection = EmitterSection()
    pulse: PulseSection = PulseSection(sigma_ns=0.34)
    map: MapSection = MapSection()
    pipeline: PipelineSection = PipelineSection()
    acquisition: AcquisitionSection = AcquisitionSection()
    synthesis: SynthesisSection = SynthesisSection()
    calibration: CalibrationSection = CalibrationSection()

    @model_validator(mode="after")
    def _cross_checks(self):
        # sub-configs must satisfy the domain invariants too
        try:
            em = self.emitter.build()
            self.pulse.build_all(em)
            self.acquisition.build()
        except ConfigError as exc:
            raise ValueError(str(exc)) from exc
        return self

    def emitter_params(self) -> EmitterParams:
        return self.emitter.build()

    def pulses(self) -> list[PulseSpec]:
        return self.pulse.build_all(self.emitter_params())

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: Optional[dict]) -> RunConfig:
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_errors(exc)}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such config file") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data)

