"""Scattering observables: transfer functions, pulsed correlation maps,
reference (subsequent-pulse) maps, cw limits, jitter and line cuts."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import expm
from scipy.ndimage import gaussian_filter1d

from .emitter import (
    Channel,
    EmitterParams,
    MasterEquation,
    PulseSpec,
    SystemState,
    TimeGrid,
    _spre_post,
    build_drive,
    default_dt,
    drive_frame_generator,
    output_operator,
    parse_channel_pair,
    steady_state,
    warn_flux,
)
from .errors import ConfigError, TruncationError

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
DEFAULT_MAP_DT = 0.02
KINDS = ("probability_density", "counts")
JITTER_TRUNCATE = 6.0


@dataclass(frozen=True)
class CorrelationMap:
    """Uniformly binned two-time map; ``values[j, l]`` sits at
    ``(t_origin + j d_t, t_origin + l d_t)`` (bin centres)."""

    d_t: float
    t_origin: float
    values: np.ndarray
    channels: tuple = (Channel.TRANSMISSION, Channel.TRANSMISSION)
    kind: str = "probability_density"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise ConfigError(f"correlation map must be 2-D, got shape {vals.shape}")
        if not self.d_t > 0:
            raise ConfigError(f"d_t must be > 0, got {self.d_t}")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("correlation map contains non-finite values")
        if vals.size and vals.min() < 0:
            raise ConfigError("correlation map has negative entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "channels", parse_channel_pair(self.channels))

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def times1(self) -> np.ndarray:
        return self.t_origin + self.d_t * np.arange(self.shape[0])

    @property
    def times2(self) -> np.ndarray:
        return self.t_origin + self.d_t * np.arange(self.shape[1])

    @property
    def label(self) -> str:
        return self.channels[0].short + self.channels[1].short

    def total(self) -> float:
        """Sum of counts, or integrated probability for density maps."""
        s = float(self.values.sum())
        return s if self.kind == "counts" else s * self.d_t**2

    def with_values(self, values, **changes) -> "CorrelationMap":
        return replace(self, values=values, **changes)

    def rebin(self, factor: int) -> "CorrelationMap":
        """Merge ``factor x factor`` superbins; incomplete edge bins are dropped.

        Counts are summed, densities averaged.
        """
        factor = int(factor)
        if factor < 1:
            raise ConfigError("rebin factor must be >= 1")
        if factor == 1:
            return self
        n1, n2 = (s // factor for s in self.shape)
        if n1 == 0 or n2 == 0:
            raise ConfigError(f"rebin factor {factor} exceeds map shape {self.shape}")
        v = self.values[: n1 * factor, : n2 * factor].reshape(n1, factor, n2, factor).sum(axis=(1, 3))
        if self.kind == "probability_density":
            v = v / factor**2
        origin = self.t_origin + 0.5 * (factor - 1) * self.d_t
        meta = dict(self.meta, rebin_factor=factor * self.meta.get("rebin_factor", 1))
        return replace(self, values=v, d_t=self.d_t * factor, t_origin=origin, meta=meta)

    def symmetrized(self) -> "CorrelationMap":
        if self.shape[0] != self.shape[1]:
            raise ConfigError("only square maps can be symmetrized")
        return self.with_values(0.5 * (self.values + self.values.T))


# ---------------------------------------------------------------------------
# Transfer functions and cw limits


def transfer_function(params: EmitterParams, detuning) -> tuple:
    """Linear transmission and reflection amplitudes at carrier detuning."""
    delta = np.asarray(detuning, dtype=float) - params.delta_e
    r = -params.gamma_r / (params.gamma_2 - 1j * delta)
    return 1.0 + r, r


def cw_correlation(
    params: EmitterParams,
    cw_amplitude: complex,
    ch1,
    ch2,
    delay: float = 0.0,
    detuning: float = 0.0,
) -> float:
    """Stationary ``G2_{ch1,ch2}(tau)`` for a cw drive (steady state + regression).

    Works in the frame rotating with the drive, so the generator is constant
    and the delay evolution is a matrix exponential.
    """
    ch1, ch2 = Channel.parse(ch1), Channel.parse(ch2)
    if delay < 0:
        ch1, ch2, delay = ch2, ch1, -delay
    rho = steady_state(params, cw_amplitude, detuning).rho
    o1 = output_operator(params, ch1, cw_amplitude)
    o2 = output_operator(params, ch2, cw_amplitude)
    lam = (o1 @ rho @ o1.conj().T).reshape(4)
    if delay > 0:
        lam = expm(drive_frame_generator(params, cw_amplitude, detuning) * delay) @ lam
    return float(np.real(np.trace((o2.conj().T @ o2) @ lam.reshape(2, 2))))


def cw_intensity(params: EmitterParams, cw_amplitude: complex, ch, detuning: float = 0.0) -> float:
    rho = steady_state(params, cw_amplitude, detuning).rho
    op = output_operator(params, Channel.parse(ch), cw_amplitude)
    return float(np.real(np.trace(op.conj().T @ op @ rho)))


def cw_g2(params: EmitterParams, cw_amplitude: complex, channels="tt", delay: float = 0.0, detuning: float = 0.0) -> float:
    """Normalised stationary ``g2(tau)`` for a channel or channel pair."""
    ch1, ch2 = _pair(channels)
    norm = cw_intensity(params, cw_amplitude, ch1, detuning) * cw_intensity(params, cw_amplitude, ch2, detuning)
    return cw_correlation(params, cw_amplitude, ch1, ch2, delay, detuning) / norm


def _pair(channels):
    if isinstance(channels, Channel) or channels in ("t", "r", "transmission", "reflection"):
        ch = Channel.parse(channels)
        return ch, ch
    return parse_channel_pair(channels)


# ---------------------------------------------------------------------------
# Pulsed maps


def default_window(params: EmitterParams, pulse: PulseSpec) -> tuple[float, float]:
    tau = params.lifetime
    return pulse.center - 4.0 * pulse.sigma - 5.0 * tau, pulse.center + 4.0 * pulse.sigma + 5.0 * tau


@dataclass(frozen=True)
class _MapGrid:
    grid: TimeGrid
    nodes: np.ndarray
    centers: np.ndarray
    d_t: float


def _map_grid(params, pulse, window, map_d_t, dt) -> _MapGrid:
    if pulse.shape != "gaussian":
        raise ConfigError("pulsed maps need a gaussian pulse")
    w0, w1 = window if window is not None else default_window(params, pulse)
    s0, s1 = pulse.support()
    if w0 > s0 or w1 < s1:
        raise TruncationError(
            f"window [{w0:.4g}, {w1:.4g}] shorter than pulse support [{s0:.4g}, {s1:.4g}]"
        )
    n_bins = int(round((w1 - w0) / map_d_t))
    if n_bins < 2:
        raise ConfigError("map window must hold at least 2 bins")
    dt = dt or default_dt(params, pulse.sigma)
    sub = 2 * max(1, math.ceil(map_d_t / (2.0 * dt)))
    h = map_d_t / sub
    lead = max(0, math.ceil((w0 - (pulse.center - 6.0 * pulse.sigma)) / map_d_t - 1e-9))
    t_start = w0 - lead * map_d_t
    t_end = w0 + n_bins * map_d_t
    grid = TimeGrid(t_start, t_end, h)
    nodes = (lead + np.arange(n_bins)) * sub + sub // 2
    centers = w0 + (np.arange(n_bins) + 0.5) * map_d_t
    return _MapGrid(grid, nodes, centers, map_d_t)


def _meta(params, pulse, h, **extra) -> dict:
    meta = {
        "source": "simulation",
        "emitter": asdict(params),
        "pulse": asdict(pulse),
        "sigma_over_tau": pulse.sigma * params.gamma_total,
        "integration_dt": h,
    }
    meta.update(extra)
    return meta


def g2_map(
    params: EmitterParams,
    pulse: PulseSpec,
    channels=("t", "t"),
    window: Optional[tuple] = None,
    map_d_t: float = DEFAULT_MAP_DT,
    dt: Optional[float] = None,
    initial: Optional[SystemState] = None,
) -> CorrelationMap:
    """Same-pulse coincidence density ``G2_{mu,nu}(t1, t2)`` in photons^2/ns^2.

    All rows (t1 values) are propagated together, so the whole map costs one
    vectorised regression sweep per channel ordering.
    """
    warn_flux(pulse.mean_photons)
    ch1, ch2 = parse_channel_pair(channels)
    mg = _map_grid(params, pulse, window, map_d_t, dt)
    eq = MasterEquation(params, build_drive(pulse, mg.grid))
    rho0 = (initial or SystemState.ground()).rho
    upper = eq.correlation_sweep(ch1, ch2, mg.nodes, rho0)
    if ch1 is ch2:
        lower = upper
    else:
        lower = eq.correlation_sweep(ch2, ch1, mg.nodes, rho0)
    j, l = np.indices(upper.shape)
    values = np.where(j <= l, upper, lower.T)
    return CorrelationMap(
        map_d_t,
        float(mg.centers[0]),
        values,
        (ch1, ch2),
        "probability_density",
        _meta(params, pulse, mg.grid.step, selection="same_pulse"),
    )


def intensity_traces(
    params: EmitterParams,
    pulse: PulseSpec,
    window: Optional[tuple] = None,
    map_d_t: float = DEFAULT_MAP_DT,
    dt: Optional[float] = None,
) -> tuple[np.ndarray, dict]:
    """Bin-centre times and ``G1`` per channel (photons/ns)."""
    mg = _map_grid(params, pulse, window, map_d_t, dt)
    eq = MasterEquation(params, build_drive(pulse, mg.grid))
    vecs = eq.trajectory_vectors(SystemState.ground().rho)
    traces = {ch: eq.intensity_trace(ch, vecs)[mg.nodes] for ch in Channel}
    return mg.centers, traces


def reference_map(
    params: EmitterParams,
    pulse: PulseSpec,
    channels=("t", "t"),
    window: Optional[tuple] = None,
    map_d_t: float = DEFAULT_MAP_DT,
    dt: Optional[float] = None,
) -> CorrelationMap:
    """Subsequent-pulse expectation ``G1_mu(t1) G1_nu(t2)`` (rank one)."""
    warn_flux(pulse.mean_photons)
    ch1, ch2 = parse_channel_pair(channels)
    centers, traces = intensity_traces(params, pulse, window, map_d_t, dt)
    values = np.outer(traces[ch1], traces[ch2])
    mg_step = (dt or default_dt(params, pulse.sigma))
    return CorrelationMap(
        map_d_t,
        float(centers[0]),
        values,
        (ch1, ch2),
        "probability_density",
        _meta(params, pulse, mg_step, selection="subsequent_pulse"),
    )


def pulse_center_g2(params: EmitterParams, pulse: PulseSpec, channels="tt", dt: Optional[float] = None) -> float:
    """``G2(t0, t0) / (G1(t0) G1'(t0))`` at the pulse centre."""
    ch1, ch2 = _pair(channels)
    window = default_window(params, pulse)
    d_t = dt or default_dt(params, pulse.sigma)
    lead = math.ceil((pulse.center - min(window[0], pulse.center - 6 * pulse.sigma)) / d_t)
    tail = math.ceil((window[1] - pulse.center) / d_t)
    # whole number of steps on both sides keeps node `lead` exactly at the centre
    grid = TimeGrid(pulse.center - lead * d_t, pulse.center + tail * d_t, d_t)
    eq = MasterEquation(params, build_drive(pulse, grid))
    node = lead
    vecs = eq.trajectory_vectors(SystemState.ground().rho)
    norm = eq.intensity_trace(ch1, vecs)[node] * eq.intensity_trace(ch2, vecs)[node]
    g2 = eq.correlation_sweep(ch1, ch2, np.array([node]), SystemState.ground().rho)[0, 0]
    return float(g2 / norm)


# ---------------------------------------------------------------------------
# Post-processing


def apply_jitter(cmap: CorrelationMap, fwhm1: float, fwhm2: float) -> CorrelationMap:
    """Convolve each time axis with a gaussian detector response.

    Mass that spreads beyond the map edge is lost (zero padding).
    """
    if fwhm1 < 0 or fwhm2 < 0:
        raise ConfigError("jitter FWHM must be >= 0")
    values = cmap.values
    for axis, fwhm in ((0, fwhm1), (1, fwhm2)):
        sigma_bins = fwhm / FWHM_PER_SIGMA / cmap.d_t
        # a kernel narrower than the truncation radius rounds to identity
        if JITTER_TRUNCATE * sigma_bins >= 0.5:
            values = gaussian_filter1d(values, sigma_bins, axis=axis, mode="constant", cval=0.0, truncate=JITTER_TRUNCATE)
    if values is cmap.values:
        return cmap
    meta = dict(cmap.meta, jitter_fwhm=[fwhm1, fwhm2])
    return cmap.with_values(np.maximum(values, 0.0), meta=meta)


@dataclass(frozen=True)
class LineCuts:
    sum_times: np.ndarray  # t1 + t2
    diag: np.ndarray
    diag_partial: np.ndarray
    delays: np.ndarray  # t1 - t2
    antidiag: np.ndarray
    antidiag_partial: np.ndarray
    width: int
    center: float


def _band_weights(width: int) -> dict:
    w = {d: 1.0 for d in range(-width + 1, width)}
    w[width] = w[-width] = 0.5
    return w


def map_center(cmap: CorrelationMap) -> float:
    pulse = cmap.meta.get("pulse") if isinstance(cmap.meta, dict) else None
    if pulse and "center" in pulse:
        return float(pulse["center"])
    marg = cmap.values.sum(axis=1) + cmap.values.sum(axis=0)[: cmap.shape[0]] if cmap.shape[0] == cmap.shape[1] else cmap.values.sum(axis=1)
    if marg.sum() == 0:
        return float(cmap.times1.mean())
    return float(np.average(cmap.times1, weights=marg))


def linecuts(cmap: CorrelationMap, width: int = 10, center: Optional[float] = None) -> LineCuts:
    """Band-integrated cuts along ``t1 = t2`` and across it.

    ``diag`` sums each anti-diagonal (fixed ``t1 + t2``) over the ``width``
    bins nearest the diagonal; ``antidiag`` sums each diagonal (fixed
    ``t1 - t2``) over ``width`` bins around the line ``t1 + t2 = 2 center``.
    The band is ``|offset| <= width`` in index units with half weight at the
    edges, so a constant map ``c`` gives ``width * c`` in the interior.
    """
    width = int(width)
    n1, n2 = cmap.shape
    if width < 1:
        raise ConfigError("line-cut width must be >= 1 bin")
    if min(n1, n2) < width:
        raise ConfigError(f"map {cmap.shape} narrower than the {width}-bin band")
    v = cmap.values
    weights = _band_weights(width)

    n_sum = n1 + n2 - 1
    diag = np.zeros(n_sum)
    diag_partial = np.zeros(n_sum, dtype=bool)
    s = np.arange(n_sum)
    for d, w in weights.items():
        par = (s - d) % 2 == 0
        j = (s + d) // 2
        l = (s - d) // 2
        inside = par & (j >= 0) & (j < n1) & (l >= 0) & (l < n2)
        diag[inside] += w * v[j[inside], l[inside]]
        diag_partial |= par & ~inside

    if center is None:
        center = map_center(cmap)
    # index-space line j + l = s0 through (center, center)
    s0 = int(round((2.0 * center - cmap.t_origin * 2.0) / cmap.d_t))
    dvals = np.arange(-(n2 - 1), n1)
    anti = np.zeros(len(dvals))
    anti_partial = np.zeros(len(dvals), dtype=bool)
    for off, w in weights.items():
        ss = s0 + off
        par = (ss - dvals) % 2 == 0
        j = (ss + dvals) // 2
        l = (ss - dvals) // 2
        inside = par & (j >= 0) & (j < n1) & (l >= 0) & (l < n2)
        anti[inside] += w * v[j[inside], l[inside]]
        anti_partial |= par & ~inside

    return LineCuts(
        sum_times=2.0 * cmap.t_origin + cmap.d_t * s,
        diag=diag,
        diag_partial=diag_partial,
        delays=cmap.d_t * dvals,
        antidiag=anti,
        antidiag_partial=anti_partial,
        width=width,
        center=float(center),
    )


def band_fraction(cmap: CorrelationMap, max_delay: float) -> float:
    """Share of the map's mass with ``|t1 - t2| < max_delay``."""
    dt = cmap.times1[:, None] - cmap.times2[None, :]
    total = cmap.values.sum()
    if total == 0:
        return 0.0
    return float(cmap.values[np.abs(dt) < max_delay].sum() / total)


def band_mass_ratio(g2: CorrelationMap, reference: CorrelationMap, max_delay: float) -> float:
    """Diagonal-band fraction of a same-pulse map relative to its reference."""
    return band_fraction(g2, max_delay) / band_fraction(reference, max_delay)
