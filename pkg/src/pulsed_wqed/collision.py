"""Brute-force two-photon scattering by a time-bin collision model.

This is an independent check of the regression engine.  The waveguide is cut
into time bins of width ``h``; every bin carries a right-moving and a
left-moving bosonic mode, plus a loss mode when ``beta < 1``.  The input pulse
is kept as photons in the right-moving modes (no displacement to a classical
drive) and the coherent state is truncated to its two-photon term,
``(alpha^2 / 2) A^dag^2 |0>``.  The interaction conserves excitation number, so
the two-excitation sector evolves exactly within the bin model:

* ``phi[x, y]`` two photons in modes x, y with the emitter in ``|g>``
  (symmetric; ``G2(x, y) = 2 |phi[x, y]|^2``),
* ``chi[x]`` one photon in mode x with the emitter in ``|e>``.

At step k the emitter exchanges excitations with the three modes of bin k via
``U = exp(-i h H_k)``, ``H_k = delta_e s^dag s + i sum_mu sqrt(g_mu/h)(b_mu^dag s - s^dag b_mu)``.
Branches with a photon in a loss mode are orthogonal to everything that is
detected and are dropped.  Pure dephasing has no pure-state description here
and is rejected.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .emitter import Channel, EmitterParams, PulseSpec
from .errors import ConfigError


def _local_unitaries(params: EmitterParams, h: float):
    """Blocks of the bin unitary in the one- and two-excitation sectors.

    Modes are ordered (R, L, X).  One-excitation basis: ``[e, R, L, X]``.
    Two-excitation basis: ``[eR, eL, eX, RR, RL, RX, LL, LX, XX]``.
    """
    gammas = (params.gamma_r, params.gamma_l, (1.0 - params.beta) * params.gamma_total)
    couplings = [math.sqrt(g / h) for g in gammas]
    # Full local Fock space: emitter (0/1) x three modes with n <= 2.
    states = [(s, n) for s in (0, 1) for n in itertools.product(range(3), repeat=3)]
    index = {st: i for i, st in enumerate(states)}
    dim = len(states)
    H = np.zeros((dim, dim), dtype=complex)
    for (s, n), i in index.items():
        if s == 1:
            H[i, i] += params.delta_e
            for mu in range(3):
                if n[mu] < 2:
                    m = list(n)
                    m[mu] += 1
                    j = index[(0, tuple(m))]
                    amp = 1j * couplings[mu] * math.sqrt(n[mu] + 1)
                    H[j, i] += amp
                    H[i, j] += np.conj(amp)
    U = expm(-1j * h * H)

    def ket(s, *photons):
        n = [0, 0, 0]
        for p in photons:
            n[p] += 1
        return index[(s, tuple(n))]

    one = [ket(1), ket(0, 0), ket(0, 1), ket(0, 2)]
    two = [ket(1, 0), ket(1, 1), ket(1, 2), ket(0, 0, 0), ket(0, 0, 1), ket(0, 0, 2),
           ket(0, 1, 1), ket(0, 1, 2), ket(0, 2, 2)]
    return U[np.ix_(one, one)], U[np.ix_(two, two)]


@dataclass(frozen=True)
class CollisionResult:
    """Two-photon output of the bin model.

    ``times`` are bin midpoints; ``density[(mu, nu)]`` is the coincidence
    density ``G2`` in photons^2/ns^2 on the full bin grid.
    """

    times: np.ndarray
    step: float
    density: dict

    def sample(self, channels, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
        """G2 at bin midpoints nearest to the requested times."""
        mu, nu = (Channel.parse(c) for c in channels)
        i = np.rint((np.asarray(t1) - self.times[0]) / self.step).astype(int)
        j = np.rint((np.asarray(t2) - self.times[0]) / self.step).astype(int)
        return self.density[(mu, nu)][np.ix_(i, j)]


def collision_two_photon(
    params: EmitterParams,
    pulse: PulseSpec,
    t_start: float,
    t_end: float,
    step: float,
) -> CollisionResult:
    """Run the two-excitation collision model on bins ``[t_start, t_end)``.

    Cost is O(N^2) memory and time for N = (t_end - t_start)/step bins, so keep
    N below a couple of thousand.
    """
    if params.gamma_deph != 0:
        raise ConfigError("the collision-model oracle needs gamma_deph = 0")
    if pulse.shape != "gaussian":
        raise ConfigError("the collision-model oracle needs a gaussian pulse")
    n = int(round((t_end - t_start) / step))
    h = (t_end - t_start) / n
    mids = t_start + h * (np.arange(n) + 0.5)
    u = math.sqrt(h) * pulse.envelope()(mids) / math.sqrt(pulse.mean_photons or 1.0)
    alpha2 = pulse.mean_photons

    U1, U2 = _local_unitaries(params, h)
    # Mode index: R_k -> k, L_k -> n + k.
    phi = np.zeros((2 * n, 2 * n), dtype=complex)
    phi[:n, :n] = alpha2 * np.outer(u, u) / math.sqrt(2.0)
    chi = np.zeros(2 * n, dtype=complex)
    rt2 = math.sqrt(2.0)
    mask = np.ones(2 * n, dtype=bool)

    for k in range(n):
        r, l = k, n + k
        mask[r] = mask[l] = False
        z = mask
        # One local excitation, one photon elsewhere.
        local = np.stack([chi[z], rt2 * phi[z, r], rt2 * phi[z, l], np.zeros(z.sum(), complex)])
        local = U1 @ local
        chi[z] = local[0]
        phi[z, r] = phi[r, z] = local[1] / rt2
        phi[z, l] = phi[l, z] = local[2] / rt2
        # Both excitations local.
        v = np.zeros(9, dtype=complex)
        v[0], v[1] = chi[r], chi[l]
        v[3], v[4], v[6] = phi[r, r], rt2 * phi[r, l], phi[l, l]
        v = U2 @ v
        chi[r], chi[l] = v[0], v[1]
        phi[r, r] = v[3]
        phi[r, l] = phi[l, r] = v[4] / rt2
        phi[l, l] = v[6]
        mask[r] = mask[l] = True

    dens = 2.0 * np.abs(phi) ** 2 / h**2
    t, rr = Channel.TRANSMISSION, Channel.REFLECTION
    density = {
        (t, t): dens[:n, :n],
        (t, rr): dens[:n, n:],
        (rr, t): dens[n:, :n],
        (rr, rr): dens[n:, n:],
    }
    return CollisionResult(mids, h, density)


@dataclass(frozen=True)
class CoarseOracleMap:
    """Coarse-bin averages of the bin-model densities.

    ``density[(mu, nu)][j, l]`` is the mean of ``G2`` over coarse bin
    ``[edges[j], edges[j+1]) x [edges[l], edges[l+1])``.
    """

    edges: np.ndarray
    density: dict
    steps: tuple
    extrapolated: bool

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def _block_mean(a: np.ndarray, f: int) -> np.ndarray:
    n1, n2 = a.shape[0] // f, a.shape[1] // f
    return a[: n1 * f, : n2 * f].reshape(n1, f, n2, f).mean(axis=(1, 3))


def coarse_oracle_map(
    params: EmitterParams,
    pulse: PulseSpec,
    t_start: float,
    t_end: float,
    n_bins: int = 24,
    step: float = 0.01,
    richardson: bool = True,
) -> CoarseOracleMap:
    """Bin-model ``G2`` averaged onto ``n_bins`` coarse bins.

    The bin model is first order in ``step``; with ``richardson`` the runs at
    ``step`` and ``step/2`` are combined as ``2 B(step/2) - B(step)``.
    """
    if n_bins < 2:
        raise ConfigError("need at least 2 coarse bins")
    width = (t_end - t_start) / n_bins
    per_bin = int(round(width / step))
    if per_bin < 1 or not math.isclose(per_bin * step, width, rel_tol=1e-9):
        raise ConfigError(f"step {step} does not divide the coarse bin width {width}")
    steps = (step, step / 2) if richardson else (step,)
    runs = []
    for k, h in enumerate(steps):
        res = collision_two_photon(params, pulse, t_start, t_end, h)
        f = per_bin * (2**k)
        runs.append({key: _block_mean(val, f) for key, val in res.density.items()})
    if richardson:
        density = {key: 2.0 * runs[1][key] - runs[0][key] for key in runs[0]}
    else:
        density = runs[0]
    edges = t_start + width * np.arange(n_bins + 1)
    return CoarseOracleMap(edges, density, steps, richardson)
