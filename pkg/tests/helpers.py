"""Shared test scaffolding."""
import numpy as np

from pulsed_wqed.collision import coarse_oracle_map
from pulsed_wqed.emitter import Channel, MasterEquation, PulseSpec, SystemState, TimeGrid, build_drive

# oracle comparison grid: 24 bins of 0.2 ns around a sigma = 0.34 ns pulse
ORACLE_WINDOW = (-2.04, 2.76)
ORACLE_BINS = 24


def regression_coarse(params, pulse, channels, window=ORACLE_WINDOW, n_bins=ORACLE_BINS, step=0.00125):
    """Regression G2 averaged over coarse bins from a fine midpoint grid."""
    t0, t1 = window
    ch1, ch2 = (Channel.parse(c) for c in channels)
    n_fine = int(round((t1 - t0) / (2 * step)))
    f = n_fine // n_bins
    eq = MasterEquation(params, build_drive(pulse, TimeGrid(t0, t1, step)))
    nodes = 2 * np.arange(n_fine) + 1
    rho0 = SystemState.ground().rho
    up = eq.correlation_sweep(ch1, ch2, nodes, rho0)
    lo = up if ch1 is ch2 else eq.correlation_sweep(ch2, ch1, nodes, rho0)
    j, l = np.indices(up.shape)
    full = np.where(j <= l, up, lo.T)
    return full.reshape(n_bins, f, n_bins, f).mean(axis=(1, 3))


def oracle_deviation(params, mean_photons, channels="tt", step=0.01):
    """Max relative deviation between oracle and regression on significant bins."""
    pulse = PulseSpec(sigma=0.34, mean_photons=mean_photons)
    g = regression_coarse(params, pulse, channels)
    key = tuple(Channel.parse(c) for c in channels)
    b = coarse_oracle_map(params, pulse, *ORACLE_WINDOW, ORACLE_BINS, step).density[key]
    mask = g > 1e-6 * g.max()
    rel = np.abs(b[mask] - g[mask]) / g[mask]
    return float(rel.max()), int(mask.sum())


# -- calibration round-trip truth ---------------------------------------------
import math  # noqa: E402

from pulsed_wqed.calibration import (  # noqa: E402
    CalibrationParams,
    extract_shift,
    fit_drift,
    fit_saturation,
    synthesize_saturation_scans,
    synthesize_shift_data,
)

GAMMA = 4.364
TRUTH = CalibrationParams(beta=0.9, gamma_deph=0.3, alpha_cal=0.3, a_scale=1000.0, background=50.0, t_scale=200.0)
SAT_DETUNINGS = np.linspace(-15, 15, 41)
SAT_POWERS = (0.5, 1.0, 2.0, 5.0, 10.0)
TRANS_POWERS = (0.1, 0.5, 2.0, 5.0, 10.0)
SHIFT_POWERS = np.linspace(2, 27, 8)
DRIFT = (0.0, -0.1, -0.01)


def injected_shift(n):
    return -0.9 * n - 0.1 * n**2


def injected_crossing(target=-1.0):
    # root of 0.1 n^2 + 0.9 n + target = 0
    return (-0.9 + math.sqrt(0.81 - 0.4 * target)) / 0.2


def saturation_trial(rng, noise=0.01):
    scans = synthesize_saturation_scans(
        TRUTH, GAMMA, SAT_POWERS, SAT_DETUNINGS, noise, rng, transmission_powers=TRANS_POWERS
    )
    return fit_saturation(scans, GAMMA)


def shift_trial(rng, saturation, n_mc=400, seed=0):
    scans, dp, dc = synthesize_shift_data(
        TRUTH,
        GAMMA,
        injected_shift,
        SHIFT_POWERS,
        DRIFT,
        np.linspace(-3 * GAMMA, 3 * GAMMA, 41),
        noise=0.02,
        drift_noise=0.02,
        drift_powers=np.linspace(0, 30, 13),
        rng=rng,
    )
    return extract_shift(scans, saturation, fit_drift(dp, dc), 0.3 * GAMMA, -1.0, n_mc, seed)
