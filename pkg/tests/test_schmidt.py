import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pulsed_wqed.emitter import EmitterParams, PulseSpec
from pulsed_wqed.errors import ConfigError, DecompositionError
from pulsed_wqed.observables import CorrelationMap, g2_map
from pulsed_wqed.schmidt import SchmidtResult, adaptive_bin, monte_carlo_tc, schmidt_decompose

from conftest import GAMMA

maps = arrays(
    float,
    st.tuples(st.integers(2, 12), st.integers(2, 12)),
    elements=st.floats(0, 1e3, allow_subnormal=False),
).filter(lambda v: v.max() > 1e-3)


def _counts(v):
    return CorrelationMap(0.02, 0.0, v, kind="counts")


def test_rank_one():
    v = np.outer([1.0, 4.0, 9.0, 0.5], [2.0, 0.1, 3.0])
    assert abs(schmidt_decompose(CorrelationMap(0.02, 0.0, v)).t_c) < 1e-12


def test_uniform_diagonal():
    r = schmidt_decompose(CorrelationMap(0.02, 0.0, np.eye(4) * 7.0))
    assert np.allclose(r.singular_values, 0.5)
    assert r.t_c == 0.75


def test_all_zero_map():
    with pytest.raises(DecompositionError):
        schmidt_decompose(CorrelationMap(0.02, 0.0, np.zeros((3, 3))))
    with pytest.raises(ConfigError):
        schmidt_decompose(CorrelationMap(0.02, 0.0, np.ones((1, 5))))


@given(maps)
@settings(max_examples=100, deadline=None)
def test_result_invariants(v):
    r = schmidt_decompose(CorrelationMap(0.02, 0.0, v))
    lam = r.singular_values
    assert abs(np.sum(lam**2) - 1) < 1e-9
    assert np.all(np.diff(lam) <= 0) and lam.min() >= 0
    assert abs(r.t_c - (1 - np.sum(lam**4))) < 1e-12
    assert -1e-12 <= r.t_c <= 1 - 1 / min(v.shape) + 1e-12


@given(maps, st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_permutation_invariance(v, random):
    n = min(v.shape)
    v = v[:n, :n]
    if v.max() <= 1e-3:
        return
    perm = list(range(n))
    random.shuffle(perm)
    a = schmidt_decompose(CorrelationMap(0.02, 0.0, v)).t_c
    b = schmidt_decompose(CorrelationMap(0.02, 0.0, v[np.ix_(perm, perm)])).t_c
    assert abs(a - b) < 1e-12


@given(maps, st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_scale_invariance(v, k):
    a = schmidt_decompose(CorrelationMap(0.02, 0.0, v)).t_c
    b = schmidt_decompose(CorrelationMap(0.02, 0.0, k * v)).t_c
    assert abs(a - b) < 1e-10


def test_serialisation_roundtrip():
    r = schmidt_decompose(CorrelationMap(0.02, 0.0, np.eye(3) + 0.1))
    back = SchmidtResult.from_dict(r.to_dict())
    assert np.array_equal(back.singular_values, r.singular_values)
    assert back.t_c == r.t_c


def test_noise_bias_decreases_with_counts():
    rng = np.random.default_rng(5)
    x = np.exp(-0.5 * ((np.arange(30) - 15) / 5.0) ** 2)
    dens = np.outer(x, x)
    dens /= dens.sum()
    means = []
    for total in (1e2, 1e3, 1e4, 1e5, 1e6):
        tcs = [schmidt_decompose(_counts(rng.poisson(total * dens).astype(float))).t_c for _ in range(20)]
        means.append(np.mean(tcs))
    assert np.all(np.diff(means) < 0), means


def test_longer_pulse_more_correlated(ideal):
    tc = {}
    for r in (0.44, 2.0):
        m = g2_map(ideal, PulseSpec(sigma=r / GAMMA, mean_photons=0.01))
        tc[r] = schmidt_decompose(m).t_c
    assert tc[2.0] > tc[0.44]


# -- adaptive binning -------------------------------------------------------


def test_adaptive_single_map():
    rng = np.random.default_rng(1)
    m = _counts(rng.poisson(5.0, (40, 40)).astype(float))
    res = adaptive_bin([m])
    assert res.factors == [1] and res.maps[0] is m and res.capped == [False]


def test_adaptive_two_maps():
    rng = np.random.default_rng(2)
    a = rng.poisson(20.0, (60, 60)).astype(float)
    a[10, 10] = 100
    b = rng.poisson(20.0, (60, 60)).astype(float)
    b[30, 30] = 400
    res = adaptive_bin([_counts(a), _counts(b)])
    assert res.target == 250
    assert res.factors[1] == 1
    f = res.factors[0]
    assert res.maps[0].values.max() >= 250
    assert _counts(a).rebin(f - 1).values.max() < 250
    assert res.d_t[0] == pytest.approx(0.02 * f)


def test_adaptive_cap_flag():
    v = np.zeros((40, 40))
    v[3, 3] = 1
    res = adaptive_bin([_counts(v)], target=10)
    assert res.capped == [True]
    assert res.factors == [10]


def test_adaptive_rejects_density_maps():
    with pytest.raises(ConfigError):
        adaptive_bin([CorrelationMap(0.02, 0.0, np.ones((4, 4)))])


# -- Monte Carlo ------------------------------------------------------------


def test_mc_high_count_rank_one():
    x = np.exp(-0.5 * ((np.arange(30) - 15) / 5.0) ** 2)
    m = _counts(1e4 * np.outer(x, x))
    r = monte_carlo_tc(m, 200, seed=3)
    assert r.t_c_err < 0.02
    assert r.t_c < 1e-9


def test_mc_rejects_too_few_resamples():
    with pytest.raises(ConfigError):
        monte_carlo_tc(_counts(np.ones((4, 4))), 1)


def test_mc_deterministic():
    rng = np.random.default_rng(4)
    m = _counts(rng.poisson(3.0, (20, 20)).astype(float))
    a = monte_carlo_tc(m, 100, seed=9)
    b = monte_carlo_tc(m, 100, seed=9)
    assert a.t_c_err == b.t_c_err
    assert monte_carlo_tc(m, 100, seed=10).t_c_err != a.t_c_err


def test_mc_zero_map():
    with pytest.raises(DecompositionError):
        monte_carlo_tc(_counts(np.zeros((4, 4))), 100)
