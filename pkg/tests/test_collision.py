import numpy as np
import pytest

from pulsed_wqed.collision import coarse_oracle_map, collision_two_photon
from pulsed_wqed.emitter import Channel, EmitterParams, PulseSpec
from pulsed_wqed.errors import ConfigError

from helpers import oracle_deviation


@pytest.mark.parametrize("channels", ["tt", "rr", "tr"])
def test_oracle_matches_regression_at_weak_drive(ideal, channels):
    dev, n = oracle_deviation(ideal, 1e-4, channels)
    assert n > 300
    assert dev < 0.02, dev


def test_oracle_rr_at_criterion_flux(ideal):
    dev, _ = oracle_deviation(ideal, 0.01, "rr")
    assert dev < 0.02


def test_oracle_gap_closes_with_flux(ideal):
    strong, _ = oracle_deviation(ideal, 0.01, "tt")
    weak, _ = oracle_deviation(ideal, 1e-4, "tt")
    # truncation error is relative O(|alpha|^2) on the tt map
    assert weak < strong / 10


def test_partial_coupling_supported():
    dev, _ = oracle_deviation(EmitterParams(4.364, 0.8, 0.0), 1e-4, "tr")
    assert dev < 0.02


def test_oracle_reflection_antibunched(ideal):
    res = collision_two_photon(ideal, PulseSpec(sigma=0.34, mean_photons=0.01), -2.0, 2.8, 0.01)
    rr = res.density[(Channel.REFLECTION, Channel.REFLECTION)]
    assert np.abs(np.diag(rr)).max() < 1e-3 * rr.max()
    assert np.allclose(rr, rr.T)


def test_oracle_preconditions(ideal):
    with pytest.raises(ConfigError):
        collision_two_photon(EmitterParams(4.364, 1.0, 0.2), PulseSpec(sigma=0.34), -2, 2.8, 0.01)
    with pytest.raises(ConfigError):
        coarse_oracle_map(ideal, PulseSpec(sigma=0.34), -2.0, 2.8, 24, 0.03)
