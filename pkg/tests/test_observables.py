import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsed_wqed.emitter import EmitterParams, PulseSpec, amplitude_for_saturation, steady_state
from pulsed_wqed.errors import ConfigError, TruncationError
from pulsed_wqed.observables import (
    CorrelationMap,
    apply_jitter,
    band_fraction,
    band_mass_ratio,
    cw_g2,
    g2_map,
    linecuts,
    pulse_center_g2,
    reference_map,
    transfer_function,
)
from pulsed_wqed.schmidt import schmidt_decompose

from conftest import GAMMA

TAU = 1 / GAMMA


def _pulse(ratio, n=0.01):
    return PulseSpec(sigma=ratio * TAU, mean_photons=n)


# -- transfer function ------------------------------------------------------


def test_transfer_ideal_resonance(ideal):
    t, r = transfer_function(ideal, 0.0)
    assert abs(t) < 1e-15
    assert r == pytest.approx(-1.0)


def test_transfer_half_linewidth(ideal):
    t, r = transfer_function(ideal, GAMMA / 2)
    assert abs(t) ** 2 == pytest.approx(0.5)
    assert abs(r) ** 2 == pytest.approx(0.5)


def test_transfer_partial_coupling():
    t, _ = transfer_function(EmitterParams(GAMMA, 0.9, 0.0), 0.0)
    assert t == pytest.approx(0.1)
    assert abs(t) ** 2 == pytest.approx(0.01)


@pytest.mark.parametrize("det", [-3.0, 0.0, 0.8, 5.0])
def test_transfer_matches_weak_cw_dynamics(lossy, det):
    a = amplitude_for_saturation(lossy, 1e-6)
    rho = steady_state(lossy, a, det).rho
    # rotating frame of the carrier: field = a + sqrt(Gamma_R) <sigma>
    t_num = (a + math.sqrt(lossy.gamma_r) * rho[1, 0]) / a
    r_num = math.sqrt(lossy.gamma_r) * rho[1, 0] / a
    t, r = transfer_function(lossy, det)
    assert abs(t_num - t) < 1e-6
    assert abs(r_num - r) < 1e-6


# -- CorrelationMap ---------------------------------------------------------


def test_map_validation():
    with pytest.raises(ConfigError):
        CorrelationMap(0.02, 0.0, -np.ones((3, 3)))
    with pytest.raises(ConfigError):
        CorrelationMap(0.0, 0.0, np.ones((3, 3)))
    with pytest.raises(ConfigError):
        CorrelationMap(0.02, 0.0, np.ones(3))
    with pytest.raises(ConfigError):
        CorrelationMap(0.02, 0.0, np.ones((3, 3)), kind="mystery")


def test_rebin_drops_incomplete_edges():
    m = CorrelationMap(1.0, 0.5, np.ones((7, 5)), kind="counts")
    r = m.rebin(2)
    assert r.shape == (3, 2)
    assert np.all(r.values == 4)
    assert r.t_origin == pytest.approx(1.0)
    d = CorrelationMap(1.0, 0.5, np.ones((4, 4))).rebin(2)
    assert np.all(d.values == 1)


# -- pulsed maps ------------------------------------------------------------


def test_truncated_window_rejected(ideal):
    with pytest.raises(TruncationError):
        g2_map(ideal, _pulse(1.0), window=(-0.1, 2.0))


def test_same_channel_maps_symmetric(lossy):
    for ch in ("tt", "rr"):
        m = g2_map(lossy, _pulse(1.0), ch)
        assert np.abs(m.values - m.values.T).max() <= 1e-9 * m.values.max()


def test_cross_channel_map_uses_both_orderings(lossy):
    tr = g2_map(lossy, _pulse(1.0), "tr")
    rt = g2_map(lossy, _pulse(1.0), "rt")
    assert np.allclose(tr.values, rt.values.T, rtol=1e-10, atol=1e-14)


def test_rr_diagonal_vanishes(lossy):
    m = g2_map(lossy, _pulse(1.5, 0.1), "rr")
    assert np.abs(np.diag(m.values)).max() == 0.0
    # finite bins: the diagonal dip deepens with resolution
    offdiag = np.diag(m.values, 1).max()
    assert offdiag > 0


def test_tt_bunching_at_long_pulse(ideal):
    p = _pulse(1.5)
    g = g2_map(ideal, p)
    ref = reference_map(ideal, p)
    assert band_fraction(g, TAU) > band_fraction(ref, TAU)


def test_short_pulse_close_to_reference(ideal):
    # weak-interaction example: short pulse map within 10% of the uncorrelated one
    p = _pulse(0.44)
    g = g2_map(ideal, p)
    ref = reference_map(ideal, p)
    dev = np.abs(g.values - ref.values).max() / ref.values.max()
    print(f"max |G2 - ref| / max ref at 0.44: {dev:.3f}")
    assert dev <= 0.10


def test_band_mass_ratio_monotone(ideal):
    ratios = []
    for r in (0.44, 1.0, 1.5, 2.0):
        p = _pulse(r)
        ratios.append(band_mass_ratio(g2_map(ideal, p), reference_map(ideal, p), TAU))
    assert np.all(np.diff(ratios) >= 0), ratios


def test_reference_map_rank_one(lossy):
    ref = reference_map(lossy, _pulse(1.0), "tr")
    assert schmidt_decompose(ref).t_c < 1e-6


def test_long_pulse_extinction(ideal):
    short = reference_map(ideal, _pulse(0.44)).total()
    long_ = reference_map(ideal, _pulse(5.0)).total()
    assert long_ < short
    assert long_ / 0.01**2 < 0.05


def test_zero_drive_zero_map(lossy):
    p = PulseSpec(sigma=0.34, mean_photons=0.0)
    assert reference_map(lossy, p).values.max() == 0.0
    assert g2_map(lossy, p).values.max() == 0.0


def test_flux_warning(ideal):
    with pytest.warns(UserWarning):
        g2_map(ideal, _pulse(1.0, 0.3), map_d_t=0.1)
    with pytest.raises(ConfigError):
        g2_map(ideal, _pulse(1.0, 0.8), map_d_t=0.1)


def test_cw_limit_pulse_center(lossy):
    p = PulseSpec(sigma=10 * TAU, mean_photons=0.5)
    a = math.sqrt(p.mean_photons) * (2 * math.pi * p.sigma**2) ** -0.25
    for ch in ("tt", "rr", "tr"):
        pulsed = pulse_center_g2(lossy, p, ch)
        cw = cw_g2(lossy, a, ch)
        print(ch, pulsed, cw)
        if ch == "tt":
            assert pulsed == pytest.approx(cw, rel=0.05)


# -- jitter -----------------------------------------------------------------


def test_jitter_zero_is_identity():
    m = CorrelationMap(0.02, 0.0, np.arange(16.0).reshape(4, 4))
    assert apply_jitter(m, 0, 0) is m


def test_jitter_delta_profile():
    v = np.zeros((201, 201))
    v[100, 100] = 1.0
    m = apply_jitter(CorrelationMap(0.01, 0.0, v), 0.2, 0.0)
    row = m.values[:, 100]
    x = m.times1 - m.times1[100]
    sigma = math.sqrt(np.sum(row * x**2) / row.sum())
    assert sigma == pytest.approx(0.2 / 2.355, rel=0.02)


def test_jitter_mass_conservation(lossy):
    g = g2_map(lossy, _pulse(1.0))
    j = apply_jitter(g, 0.03, 0.15)
    assert j.values.sum() == pytest.approx(g.values.sum(), rel=1e-3)


@given(st.floats(0.0, 0.3), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_jitter_commutes_with_symmetrization(fwhm, seed):
    v = np.random.default_rng(seed).random((40, 40))
    m = CorrelationMap(0.02, 0.0, v)
    a = apply_jitter(m.symmetrized(), fwhm, fwhm).values
    b = apply_jitter(m, fwhm, fwhm).symmetrized().values
    assert np.abs(a - b).max() < 1e-9


# -- line cuts --------------------------------------------------------------


def test_linecuts_constant_map():
    m = CorrelationMap(0.02, 0.0, np.full((60, 60), 2.5))
    cuts = linecuts(m, 10)
    interior = ~cuts.diag_partial
    assert interior.any()
    assert np.allclose(cuts.diag[interior], 25.0)
    assert cuts.diag_partial[0] and cuts.diag_partial[-1]


def test_linecuts_symmetric_antidiag(lossy):
    g = g2_map(lossy, _pulse(1.0))
    cuts = linecuts(g, 10)
    mid = len(cuts.delays) // 2
    assert cuts.delays[mid] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(cuts.antidiag, cuts.antidiag[::-1], atol=1e-9 * cuts.antidiag.max())


def test_rr_antidiag_dip(ideal):
    g = g2_map(ideal, _pulse(1.5), "rr")
    cuts = linecuts(g, 10)
    mid = int(np.argmin(np.abs(cuts.delays)))
    assert cuts.antidiag[mid] < cuts.antidiag[mid - 1]
    assert cuts.antidiag[mid] < cuts.antidiag[mid + 1]


def test_linecuts_narrow_map_rejected():
    with pytest.raises(ConfigError):
        linecuts(CorrelationMap(0.02, 0.0, np.ones((5, 5))), 10)
