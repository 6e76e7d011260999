"""Saturation and flux calibration, Lorentzian probe fits, drift correction
and extraction of the control-induced resonance shift."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .emitter import (
    Channel,
    DriveField,
    EmitterParams,
    MasterEquation,
    TimeGrid,
    steady_state,
)
from .errors import (
    ConfigError,
    ExtrapolationError,
    FitError,
    IdentifiabilityError,
    IntegrationError,
    NumericalError,
)
from .observables import transfer_function

log = logging.getLogger(__name__)

ROLES = ("reflection_fluorescence", "probe_transmission")
PARAM_NAMES = ("beta", "gamma_deph", "alpha_cal", "a_scale", "background", "t_scale")
FIT_FTOL = 1e-10
FIT_MAX_ITER = 200
FIT_DIFF_STEP = 1e-6


@dataclass(frozen=True)
class CalibrationParams:
    """Emitter-side and detection-side constants of the saturation model.

    ``alpha_cal`` converts power to squared Rabi frequency (ns^-2/uW);
    ``a_scale`` is fluorescence counts per unit of emitted flux;
    ``t_scale`` is transmitted counts per uW of probe power.
    """

    beta: float
    gamma_deph: float
    alpha_cal: float
    a_scale: float = 1.0
    background: float = 0.0
    t_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.gamma_deph < 0:
            raise ConfigError(f"gamma_deph must be >= 0, got {self.gamma_deph}")
        if not self.alpha_cal > 0:
            raise ConfigError(f"alpha_cal must be > 0, got {self.alpha_cal}")
        if not self.a_scale > 0:
            raise ConfigError(f"a_scale must be > 0, got {self.a_scale}")
        if not self.t_scale > 0:
            raise ConfigError(f"t_scale must be > 0, got {self.t_scale}")

    def emitter(self, gamma_total: float, delta_e: float = 0.0) -> EmitterParams:
        return EmitterParams(gamma_total, self.beta, self.gamma_deph, delta_e)


@dataclass(frozen=True)
class SpectrumScan:
    power: float
    detunings: np.ndarray
    intensities: np.ndarray
    role: str = "reflection_fluorescence"

    def __post_init__(self):
        d = np.asarray(self.detunings, dtype=float)
        c = np.asarray(self.intensities, dtype=float)
        if d.ndim != 1 or d.shape != c.shape:
            raise ConfigError("detunings and intensities must be 1-D arrays of equal length")
        if d.size < 5:
            raise ConfigError(f"a scan needs at least 5 points, got {d.size}")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ConfigError("counts must be finite and >= 0")
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.power < 0:
            raise ConfigError("power must be >= 0")
        object.__setattr__(self, "detunings", d)
        object.__setattr__(self, "intensities", c)


# ---------------------------------------------------------------------------
# Flux constants and model curves


@dataclass(frozen=True)
class FluxConstants:
    n_c: float
    gamma_total: float
    gamma_deph: float
    alpha_cal: float

    def saturation(self, power):
        """S(P) = 8 alpha P / (G (G + 2 G0))."""
        g = self.gamma_total
        return 8.0 * self.alpha_cal * np.asarray(power, dtype=float) / (g * (g + 2.0 * self.gamma_deph))

    def n_tau(self, power):
        return self.saturation(power) * self.n_c

    def power_for_n_tau(self, n_tau):
        return np.asarray(n_tau, dtype=float) / self.n_c / self.saturation(1.0)


def critical_photon_number(beta: float, gamma_total: float, gamma_deph: float) -> float:
    if beta == 0:
        raise NumericalError("beta = 0: no waveguide coupling, n_c diverges")
    return (1.0 + 2.0 * gamma_deph / gamma_total) ** 2 / (4.0 * beta**2)


def flux_constants(cal: CalibrationParams, gamma_total: float) -> FluxConstants:
    if not gamma_total > 0:
        raise ConfigError("gamma_total must be > 0")
    n_c = critical_photon_number(cal.beta, gamma_total, cal.gamma_deph)
    return FluxConstants(n_c, gamma_total, cal.gamma_deph, cal.alpha_cal)


def excited_population(detuning, s, gamma_2: float):
    """Steady-state ``rho_ee`` of the power-broadened two-level line."""
    x = np.asarray(detuning, dtype=float) / gamma_2
    return 0.5 * s / (1.0 + s + x**2)


def _fluorescence(beta, gamma_deph, alpha_cal, a_scale, background, gamma_total, detuning, power):
    g2 = 0.5 * gamma_total + gamma_deph
    s = 8.0 * alpha_cal * np.asarray(power, dtype=float) / (gamma_total * 2.0 * g2)
    return background + a_scale * 0.5 * beta * gamma_total * excited_population(detuning, s, g2)


def _transmitted(beta, gamma_deph, alpha_cal, t_scale, gamma_total, detuning, power):
    s = 8.0 * alpha_cal * np.asarray(power, dtype=float) / (gamma_total * (gamma_total + 2.0 * gamma_deph))
    emitter = _LooseEmitter(gamma_total, beta, gamma_deph)
    return t_scale * np.asarray(power, dtype=float) * normalized_transmission(emitter, detuning, s)


@dataclass(frozen=True)
class _LooseEmitter:
    # unvalidated stand-in so the optimiser may step outside the physical box
    gamma_total: float
    beta: float
    gamma_deph: float
    delta_e: float = 0.0

    @property
    def gamma_2(self):
        return 0.5 * self.gamma_total + self.gamma_deph

    @property
    def gamma_r(self):
        return 0.5 * self.beta * self.gamma_total


def saturation_model(cal: CalibrationParams, gamma_total: float, detuning, power):
    """Expected fluorescence counts: ``bg + a (beta G / 2) rho_ee``."""
    return _fluorescence(cal.beta, cal.gamma_deph, cal.alpha_cal, cal.a_scale, cal.background, gamma_total, detuning, power)


def normalized_transmission(emitter, detuning, s):
    """Transmitted flux over input flux for a cw drive of saturation ``s``.

    Coherent part ``1 + 2 G_R G2 <sz> / (G2^2 + d^2)`` plus the incoherent
    emission ``G_R rho_ee / |a|^2`` with ``|a|^2 = s G G2 / (4 G_R)``.
    """
    d = np.asarray(detuning, dtype=float) - emitter.delta_e
    g2 = emitter.gamma_2
    gr = emitter.gamma_r
    s = np.asarray(s, dtype=float)
    x2 = (d / g2) ** 2
    # rho_ee / s written without the 0/0 at s = 0
    rho_over_s = 0.5 / (1.0 + s + x2)
    sz = 2.0 * s * rho_over_s - 1.0
    coherent = 1.0 + 2.0 * gr * g2 * sz / (g2**2 + d**2)
    return coherent + 4.0 * gr**2 * rho_over_s / (emitter.gamma_total * g2)


def transmission_model(cal: CalibrationParams, gamma_total: float, detuning, power):
    """Transmitted counts of a single saturating beam: ``t_scale P T``."""
    return _transmitted(cal.beta, cal.gamma_deph, cal.alpha_cal, cal.t_scale, gamma_total, detuning, power)


def on_resonance_comparator(cal: CalibrationParams, gamma_total: float, s) -> np.ndarray:
    """Closed form ``a beta^2 G^2 / (8 S)`` kept as a diagnostic.

    It falls with S and so does not describe the saturation curve; reported
    next to :func:`saturation_model` for comparison only.
    """
    s = np.asarray(s, dtype=float)
    return cal.a_scale * cal.beta**2 * gamma_total**2 / (8.0 * s)


def model_counts(cal, gamma_total: float, scan: SpectrumScan) -> np.ndarray:
    """Model counts for a scan; ``cal`` may be a CalibrationParams or a dict."""
    v = cal if isinstance(cal, dict) else {k: getattr(cal, k) for k in PARAM_NAMES}
    if scan.role == "probe_transmission":
        return _transmitted(v["beta"], v["gamma_deph"], v["alpha_cal"], v["t_scale"], gamma_total, scan.detunings, scan.power)
    return _fluorescence(
        v["beta"], v["gamma_deph"], v["alpha_cal"], v["a_scale"], v["background"], gamma_total, scan.detunings, scan.power
    )


# ---------------------------------------------------------------------------
# Least squares


@dataclass(frozen=True)
class FitReport:
    names: tuple
    values: np.ndarray
    covariance: np.ndarray
    cost: float
    nfev: int
    dof: int

    @property
    def stderr(self) -> dict:
        return {n: float(math.sqrt(max(v, 0.0))) for n, v in zip(self.names, np.diag(self.covariance))}

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "values": dict(zip(self.names, map(float, self.values))),
            "stderr": self.stderr,
            "covariance": self.covariance.tolist(),
            "cost": self.cost,
            "nfev": self.nfev,
            "dof": self.dof,
        }


def _least_squares(residual, x0, names, scale=None) -> FitReport:
    x0 = np.asarray(x0, dtype=float)
    x_scale = np.asarray(scale, dtype=float) if scale is not None else np.maximum(np.abs(x0), 1e-3)
    try:
        res = least_squares(
            residual,
            x0,
            method="lm",
            ftol=FIT_FTOL,
            xtol=1e-12,
            gtol=1e-12,
            diff_step=FIT_DIFF_STEP,
            x_scale=x_scale,
            max_nfev=FIT_MAX_ITER * (len(x0) + 1),
        )
    except (ValueError, ConfigError, FloatingPointError) as exc:
        raise FitError(f"fit evaluation failed: {exc}", diagnostics={"x0": x0.tolist()}) from exc
    diagnostics = {"status": int(res.status), "message": res.message, "nfev": int(res.nfev), "x": res.x.tolist()}
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"fit did not converge: {res.message}", diagnostics=diagnostics)
    m, n = res.fun.size, res.x.size
    dof = max(m - n, 1)
    s2 = 2.0 * res.cost / dof
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj) * s2
    except np.linalg.LinAlgError as exc:
        raise IdentifiabilityError("singular Jacobian at the optimum", diagnostics=diagnostics) from exc
    # conditioning in units of each parameter's characteristic scale
    d = np.maximum(np.abs(res.x), x_scale)
    if np.linalg.cond(jtj * np.outer(d, d)) > 1e14:
        raise IdentifiabilityError("parameters are not identifiable from these data", diagnostics=diagnostics)
    return FitReport(tuple(names), res.x, cov, float(res.cost), int(res.nfev), dof)


# ---------------------------------------------------------------------------
# Lorentzian


@dataclass(frozen=True)
class LorentzianFit:
    center: float
    width: float  # FWHM
    amplitude: float  # negative for dips
    offset: float
    errors: dict
    report: FitReport
    flagged: bool = False

    def __call__(self, x):
        return lorentzian(x, self.center, self.width, self.amplitude, self.offset)


def lorentzian(x, center, width, amplitude, offset):
    u = 2.0 * (np.asarray(x, dtype=float) - center) / width
    return offset + amplitude / (1.0 + u**2)


def _lorentz_guess(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    k = max(1, len(y) // 10)
    offset = 0.5 * (np.mean(y[:k]) + np.mean(y[-k:]))
    dev = y - offset
    i = int(np.argmax(np.abs(dev)))
    amp = dev[i]
    half = np.abs(dev) >= 0.5 * abs(amp)
    # walk outwards from the extremum to the half-maximum crossings
    lo = i
    while lo > 0 and half[lo - 1]:
        lo -= 1
    hi = i
    while hi < len(x) - 1 and half[hi + 1]:
        hi += 1
    width = max(x[hi] - x[lo], np.min(np.diff(x)) if len(x) > 1 else 1.0)
    return np.array([x[i], width, amp, offset])


def fit_lorentzian(scan: SpectrumScan) -> LorentzianFit:
    """Least-squares Lorentzian (peak or dip) through one scan."""
    x, y = scan.detunings, scan.intensities
    if x.size < 5:
        raise ConfigError("need at least 5 points")
    p0 = _lorentz_guess(x, y)
    yscale = max(float(np.ptp(y)), float(np.abs(y).max()), 1e-300)

    def resid(p):
        return (lorentzian(x, *p) - y) / yscale

    span = float(np.ptp(x))
    scale = np.array([span / 10, span / 10, abs(p0[2]) or 1.0, abs(p0[3]) or 1.0])
    rep = _least_squares(resid, p0, ("center", "width", "amplitude", "offset"), scale)
    c, w, a, o = rep.values
    w = abs(w)
    flagged = bool(w > span or c < x.min() or c > x.max())
    return LorentzianFit(float(c), float(w), float(a), float(o), rep.stderr, rep, flagged)


# ---------------------------------------------------------------------------
# Drift polynomial


@dataclass(frozen=True)
class DriftFit:
    coeffs: np.ndarray  # c0, c1, c2
    covariance: np.ndarray
    rms: float

    def __call__(self, power):
        p = np.asarray(power, dtype=float)
        c0, c1, c2 = self.coeffs
        return c0 + c1 * p + c2 * p**2

    def to_dict(self) -> dict:
        return {"coeffs": self.coeffs.tolist(), "covariance": self.covariance.tolist(), "rms": self.rms}


def fit_drift(powers, centers) -> DriftFit:
    """Quadratic ``center(P)`` from the power-dependent resonance drift."""
    p = np.asarray(powers, dtype=float)
    y = np.asarray(centers, dtype=float)
    if p.shape != y.shape or p.ndim != 1:
        raise ConfigError("powers and centers must be 1-D arrays of equal length")
    if np.unique(p).size < 4:
        raise IdentifiabilityError("drift fit needs at least 4 distinct powers")
    A = np.vander(p, 3, increasing=True)
    coef, _, rank, sv = np.linalg.lstsq(A, y, rcond=None)
    if rank < 3 or sv[-1] < 1e-12 * sv[0]:
        raise IdentifiabilityError("rank-deficient drift design")
    resid = y - A @ coef
    dof = max(len(y) - 3, 1)
    s2 = float(resid @ resid) / dof
    cov = np.linalg.inv(A.T @ A) * s2
    return DriftFit(coef, cov, float(math.sqrt(np.mean(resid**2))))


# ---------------------------------------------------------------------------
# Saturation fit


@dataclass(frozen=True)
class SaturationFit:
    params: CalibrationParams
    report: FitReport
    gamma_total: float
    beta_fixed: bool
    beta_at_bound: bool = False

    @property
    def flux(self) -> FluxConstants:
        return flux_constants(self.params, self.gamma_total)

    def covariance_of(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.report.names.index(n) for n in names]
        return self.report.covariance[np.ix_(idx, idx)]

    def to_dict(self) -> dict:
        out = {
            "params": {k: getattr(self.params, k) for k in PARAM_NAMES},
            "fit": self.report.to_dict(),
            "gamma_total": self.gamma_total,
            "gamma_total_provenance": "external",
            "beta_fixed": self.beta_fixed,
            "beta_at_bound": self.beta_at_bound,
            "n_c": self.flux.n_c,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SaturationFit":
        try:
            fit = d["fit"]
            names = tuple(fit["names"])
            report = FitReport(
                names,
                np.array([fit["values"][n] for n in names], dtype=float),
                np.array(fit["covariance"], dtype=float).reshape(len(names), len(names)),
                float(fit["cost"]),
                int(fit["nfev"]),
                int(fit["dof"]),
            )
            params = CalibrationParams(**{k: float(v) for k, v in d["params"].items()})
            return cls(params, report, float(d["gamma_total"]), bool(d["beta_fixed"]), bool(d.get("beta_at_bound", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed saturation calibration: {exc}") from exc


def _fluorescence_guess(scans, gamma_total):
    widths, heights, powers, offsets = [], [], [], []
    for sc in scans:
        try:
            lf = fit_lorentzian(sc)
        except FitError:
            continue
        widths.append(lf.width)
        heights.append(lf.amplitude)
        powers.append(sc.power)
        offsets.append(lf.offset)
    if len(widths) < 2:
        raise FitError("could not initialise the saturation fit", diagnostics={"usable_scans": len(widths)})
    # FWHM^2 = 4 G2^2 (1 + k P)
    w2 = np.asarray(widths) ** 2
    slope, intercept = np.polyfit(powers, w2, 1)
    if intercept > 0:
        g2, k = math.sqrt(intercept / 4.0), max(slope / intercept, 1e-6)
    else:
        g2, k = 0.5 * gamma_total + 0.1, 1e-3
    gamma_deph = max(g2 - 0.5 * gamma_total, 0.01)
    alpha = k * gamma_total * (gamma_total + 2.0 * gamma_deph) / 8.0
    s = k * np.asarray(powers)
    # height = a G_R S / (2 (1 + S))
    a_gr = float(np.median(np.asarray(heights) * 2.0 * (1.0 + s) / s))
    return gamma_deph, alpha, a_gr, float(np.median(offsets))


def fit_saturation(
    scans: Sequence[SpectrumScan],
    gamma_total: float,
    beta: Optional[float] = None,
    initial: Optional[CalibrationParams] = None,
) -> SaturationFit:
    """Joint least-squares fit of the saturation model across scans.

    Fluorescence alone only fixes the product ``a_scale * beta``; ``beta`` is
    fitted when at least one ``probe_transmission`` scan is present, otherwise
    it must be supplied and is held fixed.
    """
    scans = list(scans)
    fluo = [s for s in scans if s.role == "reflection_fluorescence"]
    trans = [s for s in scans if s.role == "probe_transmission"]
    if len({s.power for s in fluo}) < 3:
        raise IdentifiabilityError("need fluorescence scans at >= 3 distinct powers")
    fit_beta = beta is None
    if fit_beta and not trans:
        raise IdentifiabilityError("beta is degenerate with a_scale without a transmission scan; pass beta")

    if initial is None:
        g0, alpha, a_gr, bg = _fluorescence_guess(fluo, gamma_total)
        b0 = beta if beta is not None else 0.8
        if trans and fit_beta:
            # match the dip-to-wing ratio of the weakest transmission scan on a beta grid
            sc = min(trans, key=lambda s: s.power)
            wing = np.argsort(np.abs(sc.detunings))[-3:]
            centre = np.argmin(np.abs(sc.detunings))
            ratio = sc.intensities[centre] / max(np.median(sc.intensities[wing]), 1e-300)
            # stop short of 1: the transmission is stationary in beta there
            grid = np.linspace(0.02, 0.98, 97)
            model = [
                _transmitted(b, g0, alpha, 1.0, gamma_total, sc.detunings[centre], sc.power)
                / np.median(_transmitted(b, g0, alpha, 1.0, gamma_total, sc.detunings[wing], sc.power))
                for b in grid
            ]
            b0 = float(grid[np.argmin(np.abs(np.asarray(model) - ratio))])
        a0 = a_gr / (0.5 * b0 * gamma_total)
        t_scale = 1.0
        if trans:
            sc = trans[0]
            far = np.median(sc.intensities[np.argsort(np.abs(sc.detunings))[-3:]])
            t_scale = max(far / max(sc.power, 1e-12), 1e-12)
        initial = CalibrationParams(b0, g0, alpha, max(a0, 1e-12), bg, t_scale)

    names = ["beta", "gamma_deph", "alpha_cal", "a_scale", "background"]
    if trans:
        names.append("t_scale")
    free = [n for n in names if fit_beta or n != "beta"]
    x0 = np.array([getattr(initial, n) for n in free], dtype=float)
    # transmission depends on beta only through beta (2 - beta); fitting
    # u with beta = 1 - u^2 removes the mirror solution beyond beta = 1
    if fit_beta:
        x0[0] = math.sqrt(max(1.0 - initial.beta, 1e-6))
    scales = [max(float(np.max(s.intensities)), 1e-12) for s in scans]

    def unpack(x):
        vals = {n: getattr(initial, n) for n in PARAM_NAMES}
        vals.update(zip(free, x))
        vals["beta"] = 1.0 - x[0] ** 2 if fit_beta else beta
        return vals

    def resid(x):
        v = unpack(x)
        r = np.concatenate([(model_counts(v, gamma_total, sc) - sc.intensities) / ys for sc, ys in zip(scans, scales)])
        return np.where(np.isfinite(r), r, 1e6)

    x_scale = np.maximum(np.abs(x0), 1e-3)
    try:
        rep = _least_squares(resid, x0, free, x_scale)
    except IdentifiabilityError as exc:
        u = exc.diagnostics.get("x", [1.0])[0] if fit_beta else 1.0
        if not fit_beta or abs(u) > 0.05:
            raise
        # optimum sits on beta = 1 where d(model)/du vanishes; pin it there
        log.warning("beta fit converged to the boundary beta = 1; refitting with beta fixed")
        start = replace(initial, beta=1.0)
        pinned = fit_saturation(scans, gamma_total, beta=1.0, initial=start)
        return replace(pinned, beta_at_bound=True)
    vals = unpack(rep.values)
    if fit_beta:
        jac = np.eye(len(free))
        jac[0, 0] = -2.0 * rep.values[0]
        values = rep.values.copy()
        values[0] = vals["beta"]
        rep = replace(rep, values=values, covariance=jac @ rep.covariance @ jac.T)
    try:
        cal = CalibrationParams(
            float(vals["beta"]),
            float(vals["gamma_deph"]),
            float(vals["alpha_cal"]),
            float(vals["a_scale"]),
            float(vals["background"]),
            float(vals.get("t_scale", initial.t_scale)),
        )
    except ConfigError as exc:
        raise FitError(f"fit left the physical domain: {exc}", diagnostics={"values": vals}) from exc
    return SaturationFit(cal, rep, gamma_total, not fit_beta)


# ---------------------------------------------------------------------------
# Synthetic data


def synthesize_saturation_scans(
    cal: CalibrationParams,
    gamma_total: float,
    powers: Sequence[float],
    detunings: np.ndarray,
    noise: float = 0.01,
    rng: Optional[np.random.Generator] = None,
    transmission_powers: Sequence[float] = (),
) -> list[SpectrumScan]:
    """Model scans with multiplicative gaussian noise of relative size ``noise``."""
    rng = rng or np.random.default_rng(0)
    out = []
    for p in powers:
        y = saturation_model(cal, gamma_total, detunings, p)
        y = np.maximum(y * (1.0 + noise * rng.standard_normal(y.shape)), 0.0)
        out.append(SpectrumScan(float(p), detunings, y, "reflection_fluorescence"))
    for p in transmission_powers:
        y = transmission_model(cal, gamma_total, detunings, p)
        y = np.maximum(y * (1.0 + noise * rng.standard_normal(y.shape)), 0.0)
        out.append(SpectrumScan(float(p), detunings, y, "probe_transmission"))
    return out


# ---------------------------------------------------------------------------
# Shift extraction


@dataclass(frozen=True)
class ShiftCurve:
    n_tau: np.ndarray
    shift_over_gamma: np.ndarray
    shift_err: np.ndarray
    poly2: np.ndarray
    n_tau_full_linewidth: float
    n_tau_full_linewidth_err: float
    n_tau_full_linewidth_std: float
    target: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.n_tau) != len(self.shift_over_gamma):
            raise ConfigError("n_tau and shift arrays differ in length")
        if self.n_tau_full_linewidth_err < 0:
            raise ConfigError("error must be >= 0")

    def to_dict(self) -> dict:
        return {
            "n_tau": list(map(float, self.n_tau)),
            "shift_over_gamma": list(map(float, self.shift_over_gamma)),
            "shift_err": list(map(float, self.shift_err)),
            "poly2": list(map(float, self.poly2)),
            "n_tau_full_linewidth": self.n_tau_full_linewidth,
            "n_tau_full_linewidth_err": self.n_tau_full_linewidth_err,
            "n_tau_full_linewidth_std": self.n_tau_full_linewidth_std,
            "target": self.target,
            "meta": self.meta,
        }


def _poly2_fit(x, y, w=None):
    A = np.vander(x, 3, increasing=True)
    if w is not None:
        A = A * w[:, None]
        y = y * w
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def crossing(poly2, target: float, upper: float) -> float:
    """Smallest root of ``c0 + c1 n + c2 n^2 = target`` in ``[0, upper]``."""
    c0, c1, c2 = poly2
    roots = np.roots([c2, c1, c0 - target]) if abs(c2) > 1e-300 else np.roots([c1, c0 - target])
    real = sorted(r.real for r in roots if abs(r.imag) < 1e-12 * max(1.0, abs(r.real)) and 0.0 <= r.real <= upper)
    if not real:
        raise ExtrapolationError(f"fitted shift never reaches {target} for n_tau in [0, {upper:.3g}]")
    return float(real[0])


def _batched_crossings(polys: np.ndarray, target: float, upper: float) -> np.ndarray:
    c0, c1, c2 = polys[:, 0] - target, polys[:, 1], polys[:, 2]
    out = np.full(len(polys), np.nan)
    disc = c1**2 - 4.0 * c2 * c0
    quad = np.abs(c2) > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        r1 = (-c1 - sq) / (2.0 * c2)
        r2 = (-c1 + sq) / (2.0 * c2)
        lin = -c0 / c1
    for cand in (r1, r2):
        ok = quad & np.isfinite(cand) & (cand >= 0) & (cand <= upper)
        out = np.where(ok & (np.isnan(out) | (cand < out)), cand, out)
    ok = ~quad & np.isfinite(lin) & (lin >= 0) & (lin <= upper)
    out = np.where(ok, lin, out)
    return out


def extract_shift(
    scans: Sequence[SpectrumScan],
    saturation: SaturationFit,
    drift: DriftFit,
    control_detuning: float,
    target: Optional[float] = -1.0,
    n_mc: int = 2000,
    seed: int = 0,
) -> ShiftCurve:
    """Control-induced shift of the probe resonance versus scaled control flux.

    Each scan is the probe transmission recorded with the control at the
    scan's ``power``.  The Lorentzian centre minus the drift polynomial at that
    power, over ``gamma_total``, is the shift.  A quadratic in ``n_tau`` is
    fitted and solved for ``target`` (``None`` picks -1 or +1 from the sign of
    the mean shift).  The uncertainty propagates centre, drift and flux
    calibration covariances by Monte Carlo; the reported error is the
    half-width of the central 95% interval, the standard deviation is kept
    alongside.
    """
    scans = sorted(scans, key=lambda s: s.power)
    if len(scans) < 3:
        raise IdentifiabilityError("shift extraction needs scans at >= 3 powers")
    gamma = saturation.gamma_total
    fits = []
    for sc in scans:
        lf = fit_lorentzian(sc)
        if lf.flagged:
            raise FitError(f"probe fit at P={sc.power} is not a resolved resonance", diagnostics={"width": lf.width})
        fits.append(lf)
    powers = np.array([s.power for s in scans])
    centers = np.array([f.center for f in fits])
    center_err = np.array([f.errors["center"] for f in fits])
    shift = (centers - drift(powers)) / gamma
    drift_var = np.einsum("ij,jk,ik->i", np.vander(powers, 3, increasing=True), drift.covariance, np.vander(powers, 3, increasing=True))
    shift_err = np.sqrt(center_err**2 + drift_var) / gamma
    flux = saturation.flux
    n_tau = flux.n_tau(powers)
    poly = _poly2_fit(n_tau, shift)
    if target is None:
        target = -1.0 if np.mean(shift) < 0 else 1.0
    upper = 2.0 * float(n_tau.max())
    n_cross = crossing(poly, target, upper)

    # Monte Carlo over centres, drift coefficients and flux calibration
    rng = np.random.default_rng(seed)
    c_draw = centers + center_err * rng.standard_normal((n_mc, len(centers)))
    d_draw = rng.multivariate_normal(drift.coeffs, drift.covariance, size=n_mc, method="eigh")
    drift_draw = d_draw @ np.vander(powers, 3, increasing=True).T
    names = [n for n in ("beta", "gamma_deph", "alpha_cal") if n in saturation.report.names]
    base = np.array([getattr(saturation.params, n) for n in names])
    cal_draw = rng.multivariate_normal(base, saturation.covariance_of(names), size=n_mc, method="eigh")
    vals = {n: cal_draw[:, i] for i, n in enumerate(names)}
    beta = np.clip(vals.get("beta", np.full(n_mc, saturation.params.beta)), 1e-6, 1.0)
    g0 = np.maximum(vals.get("gamma_deph", np.full(n_mc, saturation.params.gamma_deph)), 0.0)
    alpha = np.maximum(vals.get("alpha_cal", np.full(n_mc, saturation.params.alpha_cal)), 1e-300)
    n_c = (1.0 + 2.0 * g0 / gamma) ** 2 / (4.0 * beta**2)
    s_per_p = 8.0 * alpha / (gamma * (gamma + 2.0 * g0))
    n_draw = (n_c * s_per_p)[:, None] * powers[None, :]
    y_draw = (c_draw - drift_draw) / gamma
    # batched quadratic fits
    A = np.stack([np.ones_like(n_draw), n_draw, n_draw**2], axis=-1)
    polys = np.linalg.solve(np.einsum("mki,mkj->mij", A, A), np.einsum("mki,mk->mi", A, y_draw)[..., None])[..., 0]
    mc = _batched_crossings(polys, target, upper)
    good = mc[np.isfinite(mc)]
    refused = 1.0 - good.size / n_mc
    if good.size < 0.5 * n_mc:
        raise ExtrapolationError(f"{refused:.0%} of Monte Carlo draws never reach the target shift")
    lo, hi = np.percentile(good, [2.5, 97.5])
    err = 0.5 * (hi - lo)
    meta = {
        "control_detuning": control_detuning,
        "powers": powers.tolist(),
        "centers": centers.tolist(),
        "n_mc": n_mc,
        "seed": seed,
        "mc_refused_fraction": refused,
        "interval_95": [float(lo), float(hi)],
    }
    return ShiftCurve(n_tau, shift, shift_err, poly, n_cross, float(err), float(np.std(good, ddof=1)), float(target), meta)


def synthesize_shift_data(
    cal: CalibrationParams,
    gamma_total: float,
    shift_curve,
    powers: Sequence[float],
    drift_coeffs: Sequence[float],
    detunings: np.ndarray,
    dip_width: Optional[float] = None,
    dip_depth: float = 0.8,
    noise: float = 0.02,
    drift_noise: float = 0.0,
    drift_powers: Optional[Sequence[float]] = None,
    rng: Optional[np.random.Generator] = None,
    track_drift: bool = True,
) -> tuple[list[SpectrumScan], np.ndarray, np.ndarray]:
    """Synthetic probe scans whose dip centre follows ``drift + G f(n_tau)``.

    With ``track_drift`` the probe detunings are offsets from the drifted
    resonance, as when the scan window follows the line.  Returns
    ``(scans, drift_powers, drift_centers)``; the drift centres are noisy
    samples of the polynomial for :func:`fit_drift`.
    """
    rng = rng or np.random.default_rng(0)
    flux = flux_constants(cal, gamma_total)
    width = dip_width or (gamma_total + 2.0 * cal.gamma_deph)
    c = np.asarray(drift_coeffs, dtype=float)
    drift = lambda p: c[0] + c[1] * p + c[2] * p**2  # noqa: E731
    scans = []
    for p in powers:
        center = drift(p) + gamma_total * float(shift_curve(flux.n_tau(p)))
        x = np.asarray(detunings, dtype=float) + (drift(p) if track_drift else 0.0)
        y = lorentzian(x, center, width, -dip_depth, 1.0)
        y = np.maximum(y * (1.0 + noise * rng.standard_normal(y.shape)), 0.0)
        scans.append(SpectrumScan(float(p), x, y, "probe_transmission"))
    dp = np.asarray(drift_powers if drift_powers is not None else powers, dtype=float)
    dc = drift(dp) + drift_noise * rng.standard_normal(dp.shape)
    return scans, dp, dc


# ---------------------------------------------------------------------------
# Two-tone simulation


def _probe_response(params, a_c, a_p, nu, emitter_detuning, settle, periods, dt):
    frame = replace(params, delta_e=emitter_detuning)
    rho0 = steady_state(frame, a_c, 0.0).rho
    period = 2.0 * math.pi / abs(nu)
    per = int(math.ceil(period / dt))
    if per < 8:
        raise IntegrationError(f"beat period {period:.3g} ns unresolved by dt {dt:.3g} ns")
    # whole periods everywhere so the demodulation window starts on a node
    n_settle = int(math.ceil(settle / period))
    h = period / per
    grid = TimeGrid(0.0, (n_settle + periods) * period, h)

    def env(t):
        return a_c + a_p * np.exp(-1j * nu * np.asarray(t, dtype=float))

    drive = DriveField(grid, env(grid.times), env)
    eq = MasterEquation(frame, drive)
    vecs = eq.trajectory_vectors(rho0)
    t = grid.times
    field_out = drive.amplitude + math.sqrt(params.gamma_r) * vecs[:, 2]
    k0 = n_settle * per
    ts, fs = t[k0:], field_out[k0:]
    # periodic trapezoid: endpoints share a phase, so the plain mean of all
    # but the last sample is exact for harmonics below the Nyquist limit
    comp = np.mean(fs[:-1] * np.exp(1j * nu * ts[:-1]))
    return comp / a_p


def simulate_two_color(
    params: EmitterParams,
    control_detuning: float,
    control_n_tau: float,
    probe_detunings,
    probe_amplitude: Optional[float] = None,
    periods: int = 4,
    dt: Optional[float] = None,
) -> np.ndarray:
    """Probe power transmission ``|t_p|^2`` under a cw control tone.

    Integrates the master equation in the control frame with drive
    ``a_c + a_p exp(-i nu t)``, ``nu = delta_p - delta_c``, starting from the
    control-only steady state, waits ``10/gamma_2`` and demodulates the
    transmitted amplitude at ``nu`` over whole beat periods.  Points with the
    probe on the control frequency are NaN.
    """
    detunings = np.atleast_1d(np.asarray(probe_detunings, dtype=float))
    a_c = math.sqrt(control_n_tau * params.gamma_total) if control_n_tau > 0 else 0.0
    if probe_amplitude is None:
        probe_amplitude = 0.01 * a_c if a_c > 0 else 1e-3
    if a_c > 0 and probe_amplitude > 0.1 * a_c:
        raise ConfigError("probe amplitude must be <= 0.1 of the control amplitude")
    if probe_amplitude <= 0:
        raise ConfigError("probe amplitude must be > 0")
    dt_user = dt
    dt = dt or min(0.05 / params.gamma_total, 0.05 / max(params.gamma_r, 1e-12) ** 0.5 / max(a_c, 1.0))
    settle = 10.0 / params.gamma_2
    out = np.empty(detunings.size)
    for i, dp in enumerate(detunings):
        if a_c == 0:
            # probe alone: work in its own frame, no beat to demodulate
            frame = replace(params, delta_e=params.delta_e - dp)
            rho = steady_state(frame, probe_amplitude, 0.0).rho
            amp = probe_amplitude + math.sqrt(params.gamma_r) * rho[1, 0]
            out[i] = abs(amp / probe_amplitude) ** 2
            continue
        nu = dp - control_detuning
        if abs(nu) < 1e-9 * params.gamma_total:
            out[i] = np.nan
            continue
        step = min(dt, 2.0 * math.pi / abs(nu) / 50.0) if dt_user is None else dt_user
        resp = _probe_response(params, a_c, probe_amplitude, nu, params.delta_e - control_detuning, settle, periods, step)
        out[i] = abs(resp) ** 2
    return out


def linear_probe_response(
    params: EmitterParams,
    control_detuning: float,
    control_n_tau: float,
    probe_detunings,
) -> np.ndarray:
    """Frequency-domain first-order probe transmission (independent check).

    Expands ``rho = rho_ss + rho_+ e^{-i nu t} + rho_- e^{i nu t}`` to first
    order in the probe and solves the resulting linear system.
    """
    from .emitter import liouvillian_parts

    detunings = np.atleast_1d(np.asarray(probe_detunings, dtype=float))
    a_c = math.sqrt(control_n_tau * params.gamma_total)
    frame = replace(params, delta_e=params.delta_e - control_detuning)
    L0, Lp, Lm = liouvillian_parts(frame)
    L = L0 + a_c * Lp + a_c * Lm
    rho_ss = steady_state(frame, a_c, 0.0).rho.reshape(4)
    out = np.empty(detunings.size)
    for i, dp in enumerate(detunings):
        nu = dp - control_detuning
        # d/dt rho_+ e^{-i nu t}: (L + i nu) rho_+ = -Lp rho_ss   (unit probe)
        rho_plus = np.linalg.solve(L + 1j * nu * np.eye(4), -(Lp @ rho_ss))
        amp = 1.0 + math.sqrt(params.gamma_r) * rho_plus[2]
        out[i] = abs(amp) ** 2
    return out


def probe_spectrum_transfer(params: EmitterParams, probe_detunings) -> np.ndarray:
    t, _ = transfer_function(params, probe_detunings)
    return np.abs(t) ** 2
