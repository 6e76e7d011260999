"""Pulsed two-photon scattering off a waveguide-coupled two-level emitter."""

from .calibration import (
    CalibrationParams,
    SpectrumScan,
    extract_shift,
    fit_drift,
    fit_lorentzian,
    fit_saturation,
    flux_constants,
    saturation_model,
    simulate_two_color,
)
from .emitter import (
    Channel,
    DriveField,
    EmitterParams,
    PulseSpec,
    SystemState,
    TimeGrid,
    build_drive,
    propagate,
    steady_state,
    two_time_correlator,
)
from .errors import ConfigError, DataError, NumericalError, WQEDError
from .observables import (
    CorrelationMap,
    apply_jitter,
    g2_map,
    intensity_traces,
    linecuts,
    reference_map,
    transfer_function,
)
from .schmidt import SchmidtResult, adaptive_bin, monte_carlo_tc, schmidt_decompose
from .timetags import AcquisitionConfig, PulseSource, build_g2, ingest, synthesize_tags

__all__ = [
    "AcquisitionConfig",
    "CalibrationParams",
    "Channel",
    "ConfigError",
    "CorrelationMap",
    "DataError",
    "DriveField",
    "EmitterParams",
    "NumericalError",
    "PulseSource",
    "PulseSpec",
    "SchmidtResult",
    "SpectrumScan",
    "SystemState",
    "TimeGrid",
    "WQEDError",
    "adaptive_bin",
    "apply_jitter",
    "build_drive",
    "build_g2",
    "extract_shift",
    "fit_drift",
    "fit_lorentzian",
    "fit_saturation",
    "flux_constants",
    "g2_map",
    "ingest",
    "intensity_traces",
    "linecuts",
    "monte_carlo_tc",
    "propagate",
    "reference_map",
    "saturation_model",
    "schmidt_decompose",
    "simulate_two_color",
    "steady_state",
    "synthesize_tags",
    "transfer_function",
    "two_time_correlator",
]
