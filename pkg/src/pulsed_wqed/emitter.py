"""Driven two-level emitter in a bidirectional waveguide.

The coherent input is displaced into a classical drive on the emitter, so the
whole scattering problem reduces to a 2x2 density matrix.  Output fields are
reconstructed by input-output relations::

    O_t(t) = a_in(t) + sqrt(G_R) sigma      (transmission, interfering)
    O_r(t) =           sqrt(G_L) sigma      (reflection)

with ``G_R = G_L = beta * gamma_total / 2``.  Two-time correlators follow from
the quantum regression theorem with the same (time dependent) generator.

Conventions: times in ns, rates in 1/ns, detunings in rad/ns.  Basis order is
``(|g>, |e>)`` and ``sigma = |g><e|``.  Density matrices are vectorised
row-major, so ``vec(A rho B) = kron(A, B.T) @ vec(rho)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.special import erf

from .errors import ConfigError, IntegrationError, RangeError, TruncationError

SIGMA = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
SIGMA_DAG = SIGMA.conj().T
SIGMA_Z = np.diag([-1.0, 1.0]).astype(complex)
PROJ_E = SIGMA_DAG @ SIGMA
EYE2 = np.eye(2, dtype=complex)
EYE4 = np.eye(4, dtype=complex)
TRACE_VEC = EYE2.reshape(4)  # <TRACE_VEC, vec(rho)> = Tr rho

# Fraction of a gaussian pulse's photon number that a window must hold.
PULSE_NORM_TOL = 0.999
# Half-width (in sigma) of the central interval holding PULSE_NORM_TOL of |xi|^2.
PULSE_SUPPORT_SIGMAS = 3.2905267314918945


class Channel(str, Enum):
    TRANSMISSION = "transmission"
    REFLECTION = "reflection"

    @property
    def short(self) -> str:
        return self.value[0]

    @classmethod
    def parse(cls, value) -> "Channel":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if text in (member.value, member.short):
                return member
        raise ConfigError(f"unknown channel {value!r}; expected transmission/t or reflection/r")


def parse_channel_pair(value) -> tuple[Channel, Channel]:
    """Accept ``"tt"``, ``("t", "r")`` or ``[Channel, Channel]``."""
    if isinstance(value, str) and len(value) == 2:
        value = (value[0], value[1])
    first, second = value
    return Channel.parse(first), Channel.parse(second)


@dataclass(frozen=True)
class EmitterParams:
    gamma_total: float = 4.364
    beta: float = 1.0
    gamma_deph: float = 0.0
    delta_e: float = 0.0

    def __post_init__(self):
        if not self.gamma_total > 0:
            raise ConfigError(f"gamma_total must be > 0, got {self.gamma_total}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.gamma_deph >= 0:
            raise ConfigError(f"gamma_deph must be >= 0, got {self.gamma_deph}")
        if not math.isfinite(self.delta_e):
            raise ConfigError("delta_e must be finite")

    @property
    def gamma_2(self) -> float:
        """Coherence decay rate gamma_total/2 + gamma_deph."""
        return 0.5 * self.gamma_total + self.gamma_deph

    @property
    def gamma_r(self) -> float:
        return 0.5 * self.beta * self.gamma_total

    gamma_l = gamma_r

    @property
    def lifetime(self) -> float:
        return 1.0 / self.gamma_total


@dataclass(frozen=True)
class PulseSpec:
    shape: str = "gaussian"
    sigma: float = 0.34
    center: float = 0.0
    mean_photons: float = 0.01
    detuning: float = 0.0

    def __post_init__(self):
        if self.shape not in ("gaussian", "cw"):
            raise ConfigError(f"pulse shape must be 'gaussian' or 'cw', got {self.shape!r}")
        if self.shape == "gaussian" and not self.sigma > 0:
            raise ConfigError(f"gaussian pulse needs sigma > 0, got {self.sigma}")
        if not self.mean_photons >= 0:
            raise ConfigError(f"mean_photons must be >= 0, got {self.mean_photons}")

    def envelope(self, gamma_total: Optional[float] = None) -> Callable[[np.ndarray], np.ndarray]:
        """Return ``t -> a_in(t)`` in units of ns^-1/2."""
        alpha = math.sqrt(self.mean_photons)
        delta = self.detuning
        if self.shape == "cw":
            if gamma_total is None:
                raise ConfigError("a cw drive needs gamma_total to convert photons per lifetime to flux")
            amp = math.sqrt(self.mean_photons * gamma_total)

            def cw(t):
                t = np.asarray(t, dtype=float)
                return amp * np.exp(-1j * delta * t)

            return cw

        norm = (2.0 * math.pi * self.sigma**2) ** -0.25
        sigma, t0 = self.sigma, self.center

        def gaussian(t):
            t = np.asarray(t, dtype=float)
            return alpha * norm * np.exp(-((t - t0) ** 2) / (4.0 * sigma**2) - 1j * delta * t)

        return gaussian

    def contained_fraction(self, t_start: float, t_end: float) -> float:
        """Fraction of the photon number inside ``[t_start, t_end]``."""
        if self.shape == "cw":
            return 1.0
        s = math.sqrt(2.0) * self.sigma
        return 0.5 * (erf((t_end - self.center) / s) - erf((t_start - self.center) / s))

    def support(self) -> tuple[float, float]:
        """Central interval holding PULSE_NORM_TOL of the photon number."""
        half = PULSE_SUPPORT_SIGMAS * self.sigma
        return self.center - half, self.center + half


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ConfigError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 2:
            raise ConfigError("time grid needs at least 2 steps")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def step(self) -> float:
        """Actual step; ``dt`` is rounded so the grid ends exactly at t_end."""
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.step * np.arange(self.n_steps + 1)

    def contains(self, t: float) -> bool:
        tol = 1e-9 * self.step
        return self.t_start - tol <= t <= self.t_end + tol


@dataclass(frozen=True)
class DriveField:
    grid: TimeGrid
    amplitude: np.ndarray
    envelope: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=complex)
        if amp.shape != (self.grid.n_steps + 1,):
            raise ConfigError(
                f"drive has {amp.shape} samples, grid expects {self.grid.n_steps + 1}"
            )
        if not np.all(np.isfinite(amp)):
            raise ConfigError("drive amplitude contains non-finite values")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)

    def at(self, t) -> np.ndarray:
        """Amplitude at arbitrary times (analytic when available)."""
        if self.envelope is not None:
            return np.asarray(self.envelope(t), dtype=complex)
        times = self.grid.times
        return np.interp(t, times, self.amplitude.real) + 1j * np.interp(t, times, self.amplitude.imag)

    def photon_number(self) -> float:
        return float(np.trapezoid(np.abs(self.amplitude) ** 2, self.grid.times))

    @classmethod
    def zero(cls, grid: TimeGrid) -> "DriveField":
        return cls(grid, np.zeros(grid.n_steps + 1, dtype=complex), lambda t: np.zeros_like(np.asarray(t, float), dtype=complex))


@dataclass(frozen=True)
class SystemState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (2, 2):
            raise ConfigError(f"state must be 2x2, got {rho.shape}")
        check_density_matrix(rho)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def ground(cls) -> "SystemState":
        return cls(np.diag([1.0, 0.0]))

    @classmethod
    def excited(cls) -> "SystemState":
        return cls(np.diag([0.0, 1.0]))

    @property
    def excited_population(self) -> float:
        return float(self.rho[1, 1].real)

    @property
    def coherence(self) -> complex:
        """<sigma> = Tr[sigma rho] = rho_eg."""
        return complex(self.rho[1, 0])


def check_density_matrix(rho: np.ndarray, trace_tol: float = 1e-9) -> None:
    if not np.allclose(rho, rho.conj().T, atol=1e-12, rtol=0):
        raise ConfigError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        raise ConfigError(f"density matrix trace {tr} differs from 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -1e-9:
        raise ConfigError("density matrix has a negative eigenvalue")


def build_drive(spec: PulseSpec, grid: TimeGrid, gamma_total: Optional[float] = None) -> DriveField:
    """Sample the coherent input ``a_in(t)`` on ``grid``.

    Gaussian pulses use ``xi(t) = (2 pi sigma^2)^(-1/4) exp(-(t-t0)^2/(4 sigma^2))``
    scaled by ``sqrt(mean_photons)``; cw drives have constant flux
    ``mean_photons * gamma_total`` (``mean_photons`` read as photons per lifetime).
    """
    if spec.shape == "gaussian":
        frac = spec.contained_fraction(grid.t_start, grid.t_end)
        if frac < PULSE_NORM_TOL:
            raise TruncationError(
                f"grid [{grid.t_start}, {grid.t_end}] holds only {frac:.5f} of the pulse"
            )
    env = spec.envelope(gamma_total)
    return DriveField(grid, env(grid.times), env)


# ---------------------------------------------------------------------------
# Liouvillian pieces


def _spre_post(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(a, b.T)


def _dissipator(op: np.ndarray) -> np.ndarray:
    opdo = op.conj().T @ op
    return _spre_post(op, op.conj().T) - 0.5 * _spre_post(opdo, EYE2) - 0.5 * _spre_post(EYE2, opdo)


def _commutator(h: np.ndarray) -> np.ndarray:
    return -1j * (_spre_post(h, EYE2) - _spre_post(EYE2, h))


def liouvillian_parts(params: EmitterParams, frame_detuning: float = 0.0):
    """Return ``(L0, Lp, Lm)`` with ``L(t) = L0 + a(t) Lp + conj(a(t)) Lm``.

    The drive Hamiltonian is ``i sqrt(G_R) (a* sigma - a sigma^dag)``; its sign
    makes the reconstructed cw transmission ``1 - G_R/(gamma_2 - i delta)``.
    ``frame_detuning`` shifts the emitter energy, used for drive-frame generators.
    """
    c = math.sqrt(params.gamma_r)
    h0 = (params.delta_e - frame_detuning) * PROJ_E
    L0 = _commutator(h0) + params.gamma_total * _dissipator(SIGMA)
    if params.gamma_deph > 0:
        L0 = L0 + 0.5 * params.gamma_deph * _dissipator(SIGMA_Z)
    Lp = _commutator(-1j * c * SIGMA_DAG)
    Lm = _commutator(1j * c * SIGMA)
    return L0, Lp, Lm


def output_operator(params: EmitterParams, channel: Channel, a_in: complex) -> np.ndarray:
    channel = Channel.parse(channel)
    c = math.sqrt(params.gamma_r)
    if channel is Channel.TRANSMISSION:
        return a_in * EYE2 + c * SIGMA
    return c * SIGMA + 0 * a_in


def _rk4_matrices(L_a: np.ndarray, L_b: np.ndarray, L_c: np.ndarray, h) -> np.ndarray:
    """Linear RK4 step propagators from generators at t, t+h/2, t+h (batched)."""
    h = np.asarray(h, dtype=float)[..., None, None]
    k1 = L_a
    k2 = L_b + 0.5 * h * (L_b @ k1)
    k3 = L_b + 0.5 * h * (L_b @ k2)
    k4 = L_c + h * (L_c @ k3)
    return EYE4 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_RK4_MAX_HZ = 2.5


class MasterEquation:
    """Precomputed fixed-step RK4 propagation for one (params, drive) pair.

    Instances are immutable once built; every public method is a pure
    function of its arguments, so one instance can be shared across threads.
    """

    def __init__(self, params: EmitterParams, drive: DriveField):
        self.params = params
        self.drive = drive
        self.grid = drive.grid
        self.times = drive.grid.times
        self.h = drive.grid.step
        self._L0, self._Lp, self._Lm = liouvillian_parts(params)
        mid = self.times[:-1] + 0.5 * self.h
        a_nodes = drive.amplitude
        a_mid = drive.at(mid)
        L_nodes = self.generator(a_nodes)
        L_mid = self.generator(a_mid)
        self._check_step(L_nodes)
        props = _rk4_matrices(L_nodes[:-1], L_mid, L_nodes[1:], self.h)
        props.setflags(write=False)
        self.propagators = props

    def generator(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=complex)[..., None, None]
        return self._L0 + a * self._Lp + np.conj(a) * self._Lm

    def _check_step(self, L_nodes: np.ndarray) -> None:
        # Sampling every node is cheap for a 4x4 generator.
        radius = np.abs(np.linalg.eigvals(L_nodes)).max()
        if radius * self.h > _RK4_MAX_HZ:
            raise IntegrationError(
                f"step {self.h:.3g} ns too large for generator spectral radius {radius:.3g}/ns"
            )

    # -- single-time evolution ------------------------------------------------

    def node_index(self, t: float) -> tuple[int, float]:
        """Index of the last node <= t and the remaining partial step."""
        if not self.grid.contains(t):
            raise RangeError(f"t={t} outside grid [{self.grid.t_start}, {self.grid.t_end}]")
        x = (t - self.grid.t_start) / self.h
        k = int(math.floor(x + 1e-9))
        k = min(max(k, 0), self.grid.n_steps)
        rest = (x - k) * self.h
        if abs(rest) < 1e-9 * self.h:
            rest = 0.0
        return k, max(rest, 0.0)

    def _partial(self, vec: np.ndarray, t: float, h: float) -> np.ndarray:
        if h <= 0:
            return vec
        La, Lb, Lc = self.generator(self.drive.at(np.array([t, t + 0.5 * h, t + h])))
        return _rk4_matrices(La, Lb, Lc, h) @ vec

    def trajectory_vectors(self, rho0: np.ndarray) -> np.ndarray:
        vecs = np.empty((len(self.times), 4), dtype=complex)
        vecs[0] = np.asarray(rho0, dtype=complex).reshape(4)
        for k, prop in enumerate(self.propagators):
            vecs[k + 1] = prop @ vecs[k]
        return vecs

    def evolve(self, vec: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
        """Propagate a (possibly non-physical) vectorised operator."""
        if t_to < t_from:
            raise RangeError("cannot propagate backwards in time")
        k0, r0 = self.node_index(t_from)
        k1, r1 = self.node_index(t_to)
        if k0 == k1:
            # both inside the same step: integrate directly
            return self._partial(vec, t_from, t_to - t_from)
        if r0 > 0:
            vec = self._partial(vec, t_from, self.times[k0 + 1] - t_from)
            k0 += 1
        for prop in self.propagators[k0:k1]:
            vec = prop @ vec
        return self._partial(vec, self.times[k1], r1)

    def state_at(self, t: float, rho0: np.ndarray) -> np.ndarray:
        vec = self.evolve(np.asarray(rho0, dtype=complex).reshape(4), self.grid.t_start, t)
        return vec.reshape(2, 2)

    # -- observables ------------------------------------------------------------

    def expectation(self, channel: Channel, t: float, vec: np.ndarray) -> float:
        op = output_operator(self.params, channel, complex(self.drive.at(t)))
        return float(np.real((op.conj().T @ op).T.reshape(4) @ vec))

    def correlator(self, ch1: Channel, ch2: Channel, t1: float, t2: float, rho0: np.ndarray) -> float:
        if t2 < t1:
            ch1, ch2, t1, t2 = ch2, ch1, t2, t1
        rho1 = self.state_at(t1, rho0)
        o1 = output_operator(self.params, ch1, complex(self.drive.at(t1)))
        lam = (o1 @ rho1 @ o1.conj().T).reshape(4)
        lam = self.evolve(lam, t1, t2)
        return max(self.expectation(ch2, t2, lam), 0.0)

    def intensity_trace(self, channel: Channel, vecs: np.ndarray) -> np.ndarray:
        """G1 on every node from a trajectory of vectorised states."""
        channel = Channel.parse(channel)
        c2 = self.params.gamma_r
        rho_ee = vecs[:, 3].real
        if channel is Channel.REFLECTION:
            return c2 * rho_ee
        a = self.drive.amplitude
        coh = vecs[:, 2]  # rho_eg = <sigma>
        c = math.sqrt(c2)
        return np.maximum(np.abs(a) ** 2 + 2.0 * c * np.real(np.conj(a) * coh) + c2 * rho_ee, 0.0)

    def correlation_sweep(self, ch1: Channel, ch2: Channel, nodes: np.ndarray, rho0: np.ndarray) -> np.ndarray:
        """Regression sweep ``G2(t_j, t_l)`` for node indices with ``l >= j``.

        Returns an (M, M) array whose strict lower triangle is NaN.
        """
        nodes = np.asarray(nodes, dtype=int)
        if np.any(np.diff(nodes) <= 0):
            raise ConfigError("sample nodes must be strictly increasing")
        vecs = self.trajectory_vectors(rho0)
        amps = self.drive.amplitude
        m = len(nodes)
        out = np.full((m, m), np.nan)
        lam = np.zeros((m, 4), dtype=complex)
        active = 0
        start = nodes[0]
        for k in range(start, nodes[-1] + 1):
            if active < m and k == nodes[active]:
                o1 = output_operator(self.params, ch1, amps[k])
                lam[active] = _spre_post(o1, o1.conj().T) @ vecs[k]
                o2 = output_operator(self.params, ch2, amps[k])
                probe = (o2.conj().T @ o2).T.reshape(4)
                active += 1
                out[:active, active - 1] = np.real(lam[:active] @ probe)
            if k < nodes[-1]:
                lam[:active] = lam[:active] @ self.propagators[k].T
        return np.maximum(out, 0.0, where=~np.isnan(out), out=out)


def default_dt(params: EmitterParams, sigma: Optional[float] = None) -> float:
    dt = 1.0 / (20.0 * params.gamma_total)
    if sigma is not None:
        dt = min(dt, sigma / 50.0)
    return dt


def _initial(initial: Optional[SystemState]) -> np.ndarray:
    return (initial or SystemState.ground()).rho


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    rho: np.ndarray  # (N, 2, 2)

    @property
    def excited_population(self) -> np.ndarray:
        return self.rho[:, 1, 1].real

    def state(self, k: int) -> SystemState:
        return SystemState(self.rho[k])


def propagate(params: EmitterParams, drive: DriveField, initial: Optional[SystemState] = None) -> Trajectory:
    """Integrate the master equation on the drive's grid.

    Raises IntegrationError when the step is outside the RK4 stability region
    or the trace drifts by more than 1e-6.
    """
    eq = MasterEquation(params, drive)
    vecs = eq.trajectory_vectors(_initial(initial))
    rho = vecs.reshape(-1, 2, 2)
    drift = np.abs(np.trace(rho, axis1=1, axis2=2) - 1.0).max()
    if drift > 1e-6:
        raise IntegrationError(f"trace drift {drift:.3g} exceeds 1e-6; reduce dt")
    herm = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    if np.linalg.eigvalsh(herm).min() < -1e-9:
        raise IntegrationError("density matrix lost positivity; reduce dt")
    return Trajectory(eq.times.copy(), rho)


def steady_state(params: EmitterParams, cw_amplitude: complex = 0.0, detuning: float = 0.0) -> SystemState:
    """Fixed point of the master equation in the frame rotating with the drive.

    ``cw_amplitude`` is the flux amplitude (ns^-1/2); ``detuning`` is the carrier
    detuning from the rotating-frame reference.
    """
    L = drive_frame_generator(params, cw_amplitude, detuning)
    A = L.copy()
    A[0] = TRACE_VEC
    b = np.zeros(4, dtype=complex)
    b[0] = 1.0
    vec = np.linalg.solve(A, b)
    rho = vec.reshape(2, 2)
    rho = 0.5 * (rho + rho.conj().T)
    return SystemState(rho / np.trace(rho).real)


def drive_frame_generator(params: EmitterParams, cw_amplitude: complex, detuning: float) -> np.ndarray:
    L0, Lp, Lm = liouvillian_parts(params, frame_detuning=detuning)
    a = complex(cw_amplitude)
    return L0 + a * Lp + np.conj(a) * Lm


def saturation_parameter(params: EmitterParams, cw_amplitude: complex) -> float:
    """``S = 8 Omega^2 / (gamma_total (gamma_total + 2 gamma_deph))`` with ``Omega^2 = G_R |a|^2``."""
    omega2 = params.gamma_r * abs(cw_amplitude) ** 2
    return 8.0 * omega2 / (params.gamma_total * (params.gamma_total + 2.0 * params.gamma_deph))


def amplitude_for_saturation(params: EmitterParams, s: float) -> float:
    """Inverse of :func:`saturation_parameter` (real, non-negative amplitude)."""
    if params.gamma_r == 0:
        raise ConfigError("beta = 0: the waveguide drive cannot saturate the emitter")
    omega2 = s * params.gamma_total * (params.gamma_total + 2.0 * params.gamma_deph) / 8.0
    return math.sqrt(omega2 / params.gamma_r)


def two_time_correlator(
    params: EmitterParams,
    drive: DriveField,
    ch1,
    ch2,
    t1: float,
    t2: float,
    initial: Optional[SystemState] = None,
) -> float:
    """Normally ordered ``G2_{ch1,ch2}(t1, t2)`` by quantum regression."""
    eq = MasterEquation(params, drive)
    return eq.correlator(Channel.parse(ch1), Channel.parse(ch2), t1, t2, _initial(initial))


def intensity(params: EmitterParams, drive: DriveField, ch, t: float, initial: Optional[SystemState] = None) -> float:
    """``G1_ch(t) = <O^dag O>``."""
    eq = MasterEquation(params, drive)
    vec = eq.evolve(_initial(initial).reshape(4), drive.grid.t_start, t)
    return max(eq.expectation(Channel.parse(ch), t, vec), 0.0)


def warn_flux(mean_photons: float) -> None:
    if mean_photons > 0.5:
        raise ConfigError(f"mean photon number {mean_photons} exceeds 0.5")
    if mean_photons > 0.1:
        warnings.warn(
            f"mean photon number {mean_photons} above 0.1; the weak-pulse picture degrades",
            stacklevel=3,
        )
