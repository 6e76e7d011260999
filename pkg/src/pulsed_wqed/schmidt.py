"""Temporal-correlation analysis of two-time maps.

The square root of a coincidence map is treated as a joint temporal amplitude;
its singular values give the Schmidt coefficients and the degree of temporal
correlation ``T_c = 1 - sum(lambda^4)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DecompositionError
from .observables import CorrelationMap

SVD_RTOL = 1e-12
MIN_RESAMPLES = 100


@dataclass(frozen=True)
class SchmidtResult:
    singular_values: np.ndarray
    t_c: float
    t_c_err: float = 0.0
    d_t_used: float = float("nan")
    pipeline_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lam = np.asarray(self.singular_values, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise DecompositionError("singular values must be a non-empty 1-D array")
        if np.any(lam < 0) or np.any(np.diff(lam) > 0):
            raise DecompositionError("singular values must be nonnegative and nonincreasing")
        if abs(float(np.sum(lam**2)) - 1.0) > 1e-9:
            raise DecompositionError("singular values are not normalised")
        if self.t_c_err < 0:
            raise DecompositionError("t_c_err must be >= 0")
        lam.setflags(write=False)
        object.__setattr__(self, "singular_values", lam)

    @property
    def schmidt_number(self) -> float:
        """Effective number of modes, ``1 / sum(lambda^4)``."""
        return 1.0 / float(np.sum(self.singular_values**4))

    def to_dict(self) -> dict:
        return {
            "singular_values": self.singular_values.tolist(),
            "t_c": self.t_c,
            "t_c_err": self.t_c_err,
            "d_t_used": self.d_t_used,
            "pipeline_meta": self.pipeline_meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SchmidtResult":
        return cls(
            np.asarray(data["singular_values"], dtype=float),
            float(data["t_c"]),
            float(data.get("t_c_err", 0.0)),
            float(data.get("d_t_used", float("nan"))),
            dict(data.get("pipeline_meta", {})),
        )


def _tc_from_values(values: np.ndarray) -> tuple[np.ndarray, float]:
    if values.ndim != 2 or min(values.shape) < 2:
        raise ConfigError(f"Schmidt decomposition needs a map of at least 2x2, got {values.shape}")
    if np.any(values < 0):
        raise ConfigError("map has negative entries")
    lam = np.linalg.svd(np.sqrt(values), compute_uv=False)
    if lam.size == 0 or lam[0] <= 0:
        raise DecompositionError("all-zero map has no Schmidt decomposition")
    lam = np.where(lam < SVD_RTOL * lam[0], 0.0, lam)
    lam = lam / math.sqrt(float(np.sum(lam**2)))
    return lam, float(1.0 - np.sum(lam**4))


def schmidt_decompose(cmap: CorrelationMap) -> SchmidtResult:
    """Schmidt coefficients of ``sqrt(values)`` and the resulting ``T_c``."""
    lam, tc = _tc_from_values(cmap.values)
    return SchmidtResult(lam, tc, 0.0, cmap.d_t, {"kind": cmap.kind, "shape": list(cmap.shape)})


@dataclass(frozen=True)
class BinningResult:
    maps: list
    factors: list
    d_t: list
    target: float
    capped: list


def _superbin_max(values: np.ndarray, factor: int) -> float:
    n1, n2 = values.shape[0] // factor, values.shape[1] // factor
    if n1 == 0 or n2 == 0:
        return 0.0
    v = values[: n1 * factor, : n2 * factor].reshape(n1, factor, n2, factor).sum(axis=(1, 3))
    return float(v.max())


def adaptive_bin(maps: Sequence[CorrelationMap], target: Optional[float] = None) -> BinningResult:
    """Coarsen each counts map until one superbin reaches the mean of the maxima.

    The target defaults to the mean over data sets of each map's maximum bin
    count.  Factors are capped at a quarter of the smaller map dimension; a map
    that hits the cap without reaching the target is flagged.
    """
    maps = list(maps)
    if not maps:
        raise ConfigError("adaptive_bin needs at least one map")
    for m in maps:
        if m.kind != "counts":
            raise ConfigError("adaptive_bin works on counts maps only")
    d0 = maps[0].d_t
    if any(not math.isclose(m.d_t, d0, rel_tol=1e-9) for m in maps):
        raise ConfigError("maps must share a native bin width")
    if target is None:
        target = float(np.mean([m.values.max() for m in maps]))
    out, factors, capped = [], [], []
    for m in maps:
        cap = max(1, min(m.shape) // 4)
        factor = 1
        while _superbin_max(m.values, factor) < target and factor < cap:
            factor += 1
        hit_cap = _superbin_max(m.values, factor) < target
        factors.append(factor)
        capped.append(hit_cap)
        out.append(m.rebin(factor))
    return BinningResult(out, factors, [m.d_t for m in out], float(target), capped)


def monte_carlo_tc(
    cmap: CorrelationMap,
    n_resamples: int = 200,
    seed: int = 0,
    factor: int = 1,
) -> SchmidtResult:
    """Poisson-resampled uncertainty of ``T_c`` for a counts map.

    Each resample redraws every native bin from ``Poisson(observed)`` using its
    own generator seeded with ``seed + index``, then reapplies the fixed
    rebinning ``factor`` and the decomposition.  The returned ``t_c`` is the
    point estimate of the unresampled map; ``t_c_err`` is the standard deviation
    over resamples.
    """
    if cmap.kind != "counts":
        raise ConfigError("Monte Carlo resampling needs a counts map")
    if n_resamples < MIN_RESAMPLES:
        raise ConfigError(f"n_resamples must be >= {MIN_RESAMPLES}, got {n_resamples}")
    point = schmidt_decompose(cmap.rebin(factor))
    samples = np.empty(n_resamples)
    for i in range(n_resamples):
        rng = np.random.default_rng(seed + i)
        draw = rng.poisson(cmap.values).astype(float)
        binned = cmap.with_values(draw).rebin(factor)
        try:
            samples[i] = _tc_from_values(binned.values)[1]
        except DecompositionError:
            samples[i] = np.nan
    if np.all(np.isnan(samples)):
        raise DecompositionError("every resample was an all-zero map")
    meta = dict(
        point.pipeline_meta,
        n_resamples=n_resamples,
        seed=seed,
        rebin_factor=factor,
        t_c_mean=float(np.nanmean(samples)),
        total_counts=float(cmap.values.sum()),
    )
    return SchmidtResult(point.singular_values, point.t_c, float(np.nanstd(samples, ddof=1)), point.d_t_used, meta)
