"""Unit conversions used at the I/O boundary.

Internally times are ns, rates ns^-1 and detunings rad/ns.
"""
from __future__ import annotations

import math

import numpy as np

RAD_NS_PER_MHZ = 2.0 * math.pi * 1e-3

# FWHM of |L|^2 vs |L| for a Lorentzian amplitude L = 1/(g - i d)
_FIELD_OVER_INTENSITY = math.sqrt(3.0)


def mhz_to_rad_ns(f_mhz):
    return np.asarray(f_mhz, dtype=float) * RAD_NS_PER_MHZ if np.ndim(f_mhz) else float(f_mhz) * RAD_NS_PER_MHZ


def rad_ns_to_mhz(w):
    return np.asarray(w, dtype=float) / RAD_NS_PER_MHZ if np.ndim(w) else float(w) / RAD_NS_PER_MHZ


def linewidth_mhz(gamma_total: float, gamma_deph: float = 0.0, spectrum: str = "intensity") -> float:
    """FWHM in MHz of the emitter line for the given rates.

    ``spectrum="intensity"`` is the power spectrum (angular FWHM
    ``gamma_total + 2 gamma_deph``); ``"field"`` is the FWHM of the field
    modulus, wider by sqrt(3).
    """
    fwhm = gamma_total + 2.0 * gamma_deph
    if spectrum == "field":
        fwhm *= _FIELD_OVER_INTENSITY
    elif spectrum != "intensity":
        raise ValueError(f"spectrum must be 'intensity' or 'field', got {spectrum!r}")
    return rad_ns_to_mhz(fwhm)


def coherence_rate_from_linewidth(fwhm_mhz: float, spectrum: str = "intensity") -> float:
    """Invert :func:`linewidth_mhz` for the coherence decay rate (ns^-1)."""
    fwhm = mhz_to_rad_ns(fwhm_mhz)
    if spectrum == "field":
        fwhm /= _FIELD_OVER_INTENSITY
    elif spectrum != "intensity":
        raise ValueError(f"spectrum must be 'intensity' or 'field', got {spectrum!r}")
    return fwhm / 2.0


def detuning_in_linewidths(detuning: float, gamma_total: float) -> float:
    return detuning / gamma_total
