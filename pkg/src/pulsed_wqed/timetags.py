"""Time-tag streams: clock referencing, coincidence histograms and synthesis.

Timestamps are integer picoseconds.  A stream is a numpy structured array of
:data:`TAG_DTYPE` records (9 bytes each, little endian) and may be processed
in arbitrary chunks.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .emitter import Channel, parse_channel_pair
from .errors import ClockGapError, ConfigError, DataError, StreamCorruptionError
from .observables import FWHM_PER_SIGMA, CorrelationMap

TAG_DTYPE = np.dtype([("channel", "u1"), ("timestamp", "<u8")])
PS_PER_NS = 1000
MAX_GAP_PERIODS = 10
CLOCK_TOLERANCE = 0.01
SYNTH_CLIP_TOL = 1e-2
SELECTIONS = ("same_pulse", "subsequent_pulse")
DEFAULT_JITTER_FWHM = {Channel.TRANSMISSION: 0.030, Channel.REFLECTION: 0.150}


def _default_channel_map():
    t, r = Channel.TRANSMISSION, Channel.REFLECTION
    return {1: t, 2: t, 3: r, 4: r}


@dataclass(frozen=True)
class AcquisitionConfig:
    """Clock and detector layout of one acquisition (times in ns)."""

    rep_period: float = 1000.0 / 33.0
    pulse_separation: float = 30.0
    channel_map: dict = field(default_factory=_default_channel_map)
    clock_channel: int = 0
    gate_width: Optional[float] = None
    gate_offset: float = 0.0

    def __post_init__(self):
        if not self.rep_period > 0:
            raise ConfigError("rep_period must be > 0")
        if self.gate_width is None:
            object.__setattr__(self, "gate_width", self.rep_period / 2.0)
        if not 0 < self.gate_width <= self.rep_period:
            raise ConfigError(f"gate_width must lie in (0, rep_period], got {self.gate_width}")
        if self.gate_offset < 0 or self.gate_offset + self.gate_width > self.rep_period:
            raise ConfigError("gate must fit inside one repetition period")
        if abs(self.pulse_separation - self.rep_period) > 0.02 * self.rep_period:
            raise ConfigError(
                f"pulse_separation {self.pulse_separation} ns inconsistent with rep_period {self.rep_period:.4g} ns"
            )
        cmap = {int(k): Channel.parse(v) for k, v in self.channel_map.items()}
        if self.clock_channel in cmap:
            raise ConfigError("clock channel doubles as a detector")
        if any(not 0 <= k < 256 for k in cmap) or not 0 <= self.clock_channel < 256:
            raise ConfigError("channel ids must fit in one byte")
        object.__setattr__(self, "channel_map", cmap)

    @property
    def rep_ps(self) -> float:
        return self.rep_period * PS_PER_NS

    def detectors(self, channel) -> list[int]:
        ch = Channel.parse(channel)
        return sorted(k for k, v in self.channel_map.items() if v is ch)

    def to_dict(self) -> dict:
        return {
            "rep_period_ns": self.rep_period,
            "pulse_separation_ns": self.pulse_separation,
            "channel_map": {str(k): v.value for k, v in self.channel_map.items()},
            "clock_channel": self.clock_channel,
            "gate_width_ns": self.gate_width,
            "gate_offset_ns": self.gate_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcquisitionConfig":
        return cls(
            rep_period=float(d.get("rep_period_ns", 1000.0 / 33.0)),
            pulse_separation=float(d.get("pulse_separation_ns", 30.0)),
            channel_map={int(k): v for k, v in d.get("channel_map", {"1": "t", "2": "t", "3": "r", "4": "r"}).items()},
            clock_channel=int(d.get("clock_channel", 0)),
            gate_width=d.get("gate_width_ns"),
            gate_offset=float(d.get("gate_offset_ns", 0.0)),
        )


def as_records(channel, timestamp) -> np.ndarray:
    rec = np.empty(len(channel), dtype=TAG_DTYPE)
    rec["channel"] = channel
    rec["timestamp"] = timestamp
    return rec


# ---------------------------------------------------------------------------
# Ingestion


@dataclass(frozen=True)
class ClockedEvents:
    """Detector events referenced to the excitation clock."""

    pulse: np.ndarray  # int64 pulse index
    time_ps: np.ndarray  # int64 time since the pulse's clock tick
    detector: np.ndarray  # uint8
    n_pulses: int
    stats: dict
    config: AcquisitionConfig

    def __len__(self) -> int:
        return len(self.pulse)

    @property
    def channel(self) -> np.ndarray:
        """Channel code per event: 0 transmission, 1 reflection."""
        lut = np.full(256, 255, dtype=np.uint8)
        for k, v in self.config.channel_map.items():
            lut[k] = 0 if v is Channel.TRANSMISSION else 1
        return lut[self.detector]

    def select(self, mask) -> "ClockedEvents":
        return ClockedEvents(self.pulse[mask], self.time_ps[mask], self.detector[mask], self.n_pulses, self.stats, self.config)


class Ingestor:
    """Incremental clock referencing of a (possibly chunked) tag stream.

    Events wait in a buffer until a later clock tick fixes their pulse, so the
    result does not depend on how the stream is cut into chunks.
    """

    HISTORY = 64

    def __init__(self, config: AcquisitionConfig):
        self.config = config
        self._ticks = np.empty(0, dtype=np.int64)  # recent tick timestamps
        self._tick_index = np.empty(0, dtype=np.int64)
        self._next_index = 0
        self._last_seen: dict[int, int] = {}
        self._buf_ts = np.empty(0, dtype=np.int64)
        self._buf_det = np.empty(0, dtype=np.uint8)
        self._out: list[tuple] = []
        self._intervals: list[np.ndarray] = []
        self.stats = {
            "events": 0,
            "clock_ticks": 0,
            "interpolated_ticks": 0,
            "dropped_gate": 0,
            "dropped_before_clock": 0,
            "dropped_after_clock": 0,
        }
        self._finished = False

    def _check_order(self, ch: np.ndarray, ts: np.ndarray) -> None:
        for c in np.unique(ch):
            t = ts[ch == c]
            prev = self._last_seen.get(int(c))
            if np.any(np.diff(t) < 0) or (prev is not None and t[0] < prev):
                raise StreamCorruptionError(f"timestamps decrease on channel {int(c)}")
            self._last_seen[int(c)] = int(t[-1])

    def _add_clock(self, clk: np.ndarray) -> None:
        if clk.size == 0:
            return
        rep = self.config.rep_ps
        prev = self._ticks[-1:] if self._ticks.size else np.empty(0, dtype=np.int64)
        seq = np.concatenate([prev, clk])
        gaps = np.diff(seq)
        n = np.rint(gaps / rep).astype(np.int64) if gaps.size else np.empty(0, dtype=np.int64)
        if np.any(n < 1):
            raise StreamCorruptionError("clock ticks closer than half a repetition period")
        if np.any(n - 1 > MAX_GAP_PERIODS):
            k = int((n - 1).max())
            raise ClockGapError(f"{k} consecutive clock ticks missing (limit {MAX_GAP_PERIODS})")
        regular = gaps[n == 1]
        if regular.size:
            self._intervals.append(regular[:1000])
        # missing ticks are spread evenly over each gap
        which = np.repeat(np.arange(gaps.size), n)
        m = np.arange(which.size) - np.repeat(np.cumsum(n) - n, n) + 1
        new = seq[which] + np.rint(gaps[which] * m / n[which]).astype(np.int64)
        self.stats["interpolated_ticks"] += int((n - 1).sum())
        if not prev.size:
            new = np.concatenate([seq[:1], new])
        idx = self._next_index + np.arange(new.size)
        self._next_index += new.size
        self.stats["clock_ticks"] += int(clk.size)
        self._ticks = np.concatenate([self._ticks, new])[-self.HISTORY - new.size :]
        self._tick_index = np.concatenate([self._tick_index, idx])[-self.HISTORY - new.size :]

    def _assign(self, ts: np.ndarray, det: np.ndarray) -> None:
        if ts.size == 0:
            return
        k = np.searchsorted(self._ticks, ts, side="right") - 1
        if np.any(k < 0):
            if self.stats["clock_ticks"] > len(self._ticks):
                raise StreamCorruptionError("event older than the retained clock history")
            self.stats["dropped_before_clock"] += int(np.sum(k < 0))
            ts, det, k = ts[k >= 0], det[k >= 0], k[k >= 0]
        dt = ts - self._ticks[k]
        g0 = int(round(self.config.gate_offset * PS_PER_NS))
        g1 = g0 + int(round(self.config.gate_width * PS_PER_NS))
        keep = (dt >= g0) & (dt < g1)
        self.stats["dropped_gate"] += int(np.sum(~keep))
        self._out.append((self._tick_index[k[keep]], dt[keep], det[keep]))

    def feed(self, records: np.ndarray) -> None:
        if self._finished:
            raise DataError("ingestor already finished")
        records = np.asarray(records)
        if records.size == 0:
            return
        ch = records["channel"].astype(np.int64)
        ts = records["timestamp"].astype(np.int64)
        self._check_order(ch, ts)
        known = set(self.config.channel_map) | {self.config.clock_channel}
        unknown = np.setdiff1d(np.unique(ch), np.fromiter(known, dtype=np.int64))
        if unknown.size:
            raise DataError(f"undeclared channel ids {unknown.tolist()}")
        clk = ts[ch == self.config.clock_channel]
        is_det = ch != self.config.clock_channel
        self.stats["events"] += int(is_det.sum())
        self._buf_ts = np.concatenate([self._buf_ts, ts[is_det]])
        self._buf_det = np.concatenate([self._buf_det, ch[is_det].astype(np.uint8)])
        self._add_clock(clk)
        if self._ticks.size:
            ready = self._buf_ts < self._ticks[-1]
            if ready.any():
                order = np.argsort(self._buf_ts[ready], kind="stable")
                self._assign(self._buf_ts[ready][order], self._buf_det[ready][order])
                self._buf_ts = self._buf_ts[~ready]
                self._buf_det = self._buf_det[~ready]

    def finish(self) -> ClockedEvents:
        if not self._finished:
            self._finished = True
            if self.stats["clock_ticks"] == 0:
                raise DataError("no clock events in stream")
            if self._buf_ts.size:
                rest = self._buf_ts - self._ticks[-1]
                late = rest >= self.config.rep_ps
                self.stats["dropped_after_clock"] += int(late.sum())
                order = np.argsort(self._buf_ts[~late], kind="stable")
                self._assign(self._buf_ts[~late][order], self._buf_det[~late][order])
            if self._intervals:
                iv = np.concatenate(self._intervals)
                med = float(np.median(iv))
                if abs(med - self.config.rep_ps) > CLOCK_TOLERANCE * self.config.rep_ps:
                    raise DataError(
                        f"clock period {med / PS_PER_NS:.4g} ns differs from rep_period {self.config.rep_period:.4g} ns by > 1%"
                    )
                self.stats["clock_period_ns"] = med / PS_PER_NS
        if self._out:
            pulse = np.concatenate([o[0] for o in self._out])
            tps = np.concatenate([o[1] for o in self._out])
            det = np.concatenate([o[2] for o in self._out])
        else:
            pulse = np.empty(0, np.int64)
            tps = np.empty(0, np.int64)
            det = np.empty(0, np.uint8)
        order = np.lexsort((tps, pulse))
        stats = dict(self.stats, kept=int(pulse.size))
        return ClockedEvents(pulse[order], tps[order], det[order], int(self._next_index), stats, self.config)


def ingest(stream, config: AcquisitionConfig) -> ClockedEvents:
    """Clock-reference a record array or an iterable of record chunks."""
    ing = Ingestor(config)
    if isinstance(stream, np.ndarray):
        stream = [stream]
    for chunk in stream:
        ing.feed(chunk)
    return ing.finish()


# ---------------------------------------------------------------------------
# Coincidences


def _join(a_pulse, b_pulse, shift):
    """Index pairs (i, j) with ``b_pulse[j] == a_pulse[i] + shift``.

    Both inputs must be sorted.
    """
    lo = np.searchsorted(b_pulse, a_pulse + shift, side="left")
    hi = np.searchsorted(b_pulse, a_pulse + shift, side="right")
    n = hi - lo
    i = np.repeat(np.arange(a_pulse.size), n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    j = np.repeat(lo, n) + offs
    return i, j


def _detector_roles(config: AcquisitionConfig, ch1: Channel, ch2: Channel, selection: str):
    d1, d2 = config.detectors(ch1), config.detectors(ch2)
    if not d1 or not d2:
        raise ConfigError(f"no detectors mapped for channels {ch1.short}{ch2.short}")
    if ch1 is ch2:
        if len(d1) >= 2:
            # start/stop split of the channel's detectors
            half = len(d1) // 2
            return d1[:half], d1[half:]
        if selection == "same_pulse":
            raise ConfigError(f"same-pulse {ch1.short}{ch1.short} coincidences need two detectors")
    return d1, d2


def build_g2(
    events: ClockedEvents,
    channels=("t", "t"),
    selection: str = "same_pulse",
    d_t: float = 0.02,
    window: Optional[tuple] = None,
) -> CorrelationMap:
    """Histogram of detection-time pairs into a counts map.

    ``t1`` comes from the first channel's start detectors and ``t2`` from the
    second channel's stop detectors (for a single channel the detectors are
    split into start and stop halves).  ``same_pulse`` pairs share a pulse
    index; ``subsequent_pulse`` pairs have ``t2`` one pulse later.  Three or
    more clicks in a pulse contribute every start/stop combination.
    """
    if selection not in SELECTIONS:
        raise ConfigError(f"selection must be one of {SELECTIONS}")
    cfg = events.config
    ch1, ch2 = parse_channel_pair(channels)
    dps = int(round(d_t * PS_PER_NS))
    if dps <= 0 or not math.isclose(dps, d_t * PS_PER_NS, abs_tol=1e-6):
        raise ConfigError("d_t must be a positive whole number of picoseconds")
    if window is None:
        w0 = int(round(cfg.gate_offset * PS_PER_NS))
        span = int(round(cfg.gate_width * PS_PER_NS))
    else:
        w0 = int(round(window[0] * PS_PER_NS))
        span = int(round((window[1] - window[0]) * PS_PER_NS))
    if span <= 0 or span % dps:
        raise ConfigError(f"d_t = {d_t} ns does not divide the {span / PS_PER_NS} ns histogram window")
    n = span // dps
    starts, stops = _detector_roles(cfg, ch1, ch2, selection)
    a = np.isin(events.detector, starts)
    b = np.isin(events.detector, stops)
    pa, ta, da = events.pulse[a], events.time_ps[a], events.detector[a]
    pb, tb, db = events.pulse[b], events.time_ps[b], events.detector[b]
    shift = 0 if selection == "same_pulse" else 1
    i, j = _join(pa, pb, shift)
    if ch1 is ch2 and set(starts) == set(stops):
        # one detector for both roles: each pair once, earlier click first
        keep = (ta[i] < tb[j]) | ((ta[i] == tb[j]) & (i < j)) if shift == 0 else np.ones(i.size, bool)
        i, j = i[keep], j[keep]
    j1 = (ta[i] - w0) // dps
    j2 = (tb[j] - w0) // dps
    inside = (j1 >= 0) & (j1 < n) & (j2 >= 0) & (j2 < n)
    counts = np.zeros((n, n), dtype=float)
    np.add.at(counts, (j1[inside], j2[inside]), 1.0)
    if i.size == 0:
        warnings.warn(f"empty {selection} selection for {ch1.short}{ch2.short}", RuntimeWarning, stacklevel=2)
    meta = {
        "source": "timetags",
        "selection": selection,
        "n_pulses": events.n_pulses,
        "pairs_total": int(i.size),
        "pairs_in_window": int(inside.sum()),
        "pairs_outside_window": int((~inside).sum()),
        "start_detectors": list(starts),
        "stop_detectors": list(stops),
        "gate_width_ns": cfg.gate_width,
        "window_ns": [w0 / PS_PER_NS, (w0 + span) / PS_PER_NS],
        "ingest": dict(events.stats),
    }
    origin = (w0 + 0.5 * dps) / PS_PER_NS
    return CorrelationMap(dps / PS_PER_NS, origin, counts, (ch1, ch2), "counts", meta)


def pair_accounting(events: ClockedEvents) -> dict:
    """Classify every unordered pair of events in the same or adjacent pulses."""
    p = events.pulse
    uniq, counts = np.unique(p, return_counts=True)
    within = int(np.sum(counts * (counts - 1) // 2))
    # adjacent pulses
    nxt = np.searchsorted(uniq, uniq + 1)
    has = (nxt < uniq.size) & (uniq[np.minimum(nxt, uniq.size - 1)] == uniq + 1)
    across = int(np.sum(counts[has] * counts[nxt[has]]))
    return {
        "pulses_with_events": int(uniq.size),
        "singles_only_pulses": int(np.sum(counts == 1)),
        "multi_event_pulses": int(np.sum(counts > 1)),
        "same_pulse_pairs": within,
        "cross_pulse_pairs": across,
        "events": int(p.size),
    }


# ---------------------------------------------------------------------------
# Synthesis


@dataclass(frozen=True)
class PulseSource:
    """Per-pulse photon statistics on a common time grid (ns, bin centres).

    ``singles[ch]`` is ``G1`` (photons/ns); ``pairs[(mu, nu)]`` is the ordered
    ``G2`` density (photons^2/ns^2) for every channel pair.
    """

    times: np.ndarray
    d_t: float
    singles: dict
    pairs: dict

    def __post_init__(self):
        n = len(self.times)
        for ch, g1 in self.singles.items():
            if np.shape(g1) != (n,) or np.any(np.asarray(g1) < 0):
                raise ConfigError(f"singles for {ch} must be a nonnegative array of length {n}")
        for key, g2 in self.pairs.items():
            if np.shape(g2) != (n, n) or np.any(np.asarray(g2) < 0):
                raise ConfigError(f"pair density {key} must be a nonnegative {n}x{n} array")

    @property
    def mean_photons(self) -> float:
        return float(sum(np.sum(g) for g in self.singles.values()) * self.d_t)

    @classmethod
    def from_maps(cls, maps, singles: dict) -> "PulseSource":
        maps = list(maps)
        base = maps[0]
        for m in maps:
            if m.kind != "probability_density":
                raise ConfigError("synthesis needs probability-density maps")
            if m.shape != base.shape or not math.isclose(m.d_t, base.d_t) or not math.isclose(m.t_origin, base.t_origin):
                raise ConfigError("maps must share one grid")
        pairs = {}
        for m in maps:
            pairs[m.channels] = m.values
            pairs.setdefault((m.channels[1], m.channels[0]), m.values.T)
        return cls(base.times1, base.d_t, {Channel.parse(k): np.asarray(v, float) for k, v in singles.items()}, pairs)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))


def synthesize_tags(
    source: PulseSource,
    n_pulses: int,
    config: AcquisitionConfig,
    seed: int = 0,
    mean_photons: Optional[float] = None,
    jitter_fwhm: Optional[dict] = None,
    pulse_offset: Optional[float] = None,
    clock_period_jitter: float = 0.0,
    chunk_pulses: int = 1_000_000,
) -> Iterator[np.ndarray]:
    """Yield time-ordered record chunks of a synthetic acquisition.

    Each pulse carries 0, 1 or 2 photons: pairs with probability
    ``k^2/2 sum G2``, singles from the exclusive density ``k G1 - k^2 int G2``,
    with ``k`` scaling the source to ``mean_photons``.  Photons pick a
    detector of their channel uniformly, get gaussian timing jitter and are
    placed ``pulse_offset`` ns after their clock tick.  ``clock_period_jitter``
    is the relative rms spread of individual clock periods.
    """
    if n_pulses < 1:
        raise ConfigError("n_pulses must be >= 1")
    chans = [Channel.TRANSMISSION, Channel.REFLECTION]
    dt = source.d_t
    nbin = len(source.times)
    sim_mean = source.mean_photons
    if mean_photons is None:
        mean_photons = sim_mean
    k = mean_photons / sim_mean if sim_mean > 0 else 0.0
    jitter_fwhm = DEFAULT_JITTER_FWHM if jitter_fwhm is None else {Channel.parse(c): v for c, v in jitter_fwhm.items()}
    sig_ps = np.array([jitter_fwhm.get(c, 0.0) / FWHM_PER_SIGMA * PS_PER_NS for c in chans])

    # exclusive singles and pair weights
    single_w = []
    for a, ca in enumerate(chans):
        g1 = np.asarray(source.singles.get(ca, np.zeros(nbin)), float)
        g2sum = sum(np.asarray(source.pairs.get((ca, cb), np.zeros((nbin, nbin)))).sum(axis=1) for cb in chans) * dt
        single_w.append((k * g1 - k**2 * g2sum) * dt)
    single_w = np.concatenate(single_w)
    # third-order terms can push the exclusive density slightly negative
    deficit = -single_w[single_w < 0].sum()
    if deficit > SYNTH_CLIP_TOL * max(single_w.clip(min=0).sum(), 1e-300):
        raise ConfigError("pair density exceeds singles: flux too high for second-order synthesis")
    single_w = single_w.clip(min=0.0)
    pair_keys = [(a, b) for a in range(2) for b in range(2)]
    pair_w = np.concatenate(
        [np.asarray(source.pairs.get((chans[a], chans[b]), np.zeros((nbin, nbin))), float).ravel() for a, b in pair_keys]
    ) * (k**2 * dt**2)
    p1 = float(single_w.sum())
    p2 = 0.5 * float(pair_w.sum())
    if p1 + p2 > 1:
        raise ConfigError("photon probabilities exceed one per pulse")
    c_single = np.cumsum(single_w) / p1 if p1 > 0 else None
    c_pair = np.cumsum(pair_w) / pair_w.sum() if p2 > 0 else None

    if pulse_offset is None:
        pulse_offset = 1.0 - (source.times[0] - 0.5 * dt)
    off_ps = pulse_offset * PS_PER_NS
    lo = off_ps + (source.times[0] - 0.5 * dt) * PS_PER_NS - 6 * sig_ps.max()
    hi = off_ps + (source.times[-1] + 0.5 * dt) * PS_PER_NS + 6 * sig_ps.max()
    if lo < 0 or hi >= config.rep_ps * (1 - 3 * clock_period_jitter) - 1:
        raise ConfigError("pulse window plus jitter does not fit inside one repetition period")
    dets = [np.array(config.detectors(c), dtype=np.uint8) for c in chans]
    for a, d in enumerate(dets):
        if d.size == 0 and (np.any(single_w[a * nbin : (a + 1) * nbin] > 0)):
            raise ConfigError(f"no detector for channel {chans[a].value}")
    t_lo_ps = (source.times - 0.5 * dt) * PS_PER_NS

    clock = config.clock_channel
    last_tick = 0.0
    for c_idx, start in enumerate(range(0, n_pulses, chunk_pulses)):
        m = min(chunk_pulses, n_pulses - start)
        rng = _rng(seed, 1, c_idx)
        if clock_period_jitter > 0:
            periods = config.rep_ps * (1.0 + clock_period_jitter * rng.standard_normal(m))
        else:
            periods = np.full(m, config.rep_ps)
        if start == 0:
            ticks_f = np.concatenate([[0.0], np.cumsum(periods[:-1])])
        else:
            ticks_f = last_tick + np.cumsum(periods)
        last_tick = float(ticks_f[-1])
        ticks = np.rint(ticks_f).astype(np.int64)
        u = rng.random(m)
        one = np.flatnonzero(u < p1)
        two = np.flatnonzero((u >= p1) & (u < p1 + p2))
        ev_pulse, ev_bin, ev_ch = [], [], []
        if one.size:
            idx = np.searchsorted(c_single, rng.random(one.size), side="right").clip(max=single_w.size - 1)
            ev_pulse.append(one)
            ev_ch.append(idx // nbin)
            ev_bin.append(idx % nbin)
        if two.size:
            idx = np.searchsorted(c_pair, rng.random(two.size), side="right").clip(max=pair_w.size - 1)
            key, rest = idx // (nbin * nbin), idx % (nbin * nbin)
            a = np.array([pk[0] for pk in pair_keys])[key]
            b = np.array([pk[1] for pk in pair_keys])[key]
            ev_pulse += [two, two]
            ev_ch += [a, b]
            ev_bin += [rest // nbin, rest % nbin]
        if ev_pulse:
            pulse = np.concatenate(ev_pulse)
            ch = np.concatenate(ev_ch)
            b = np.concatenate(ev_bin)
            t = t_lo_ps[b] + dt * PS_PER_NS * rng.random(pulse.size)
            t = t + sig_ps[ch] * rng.standard_normal(pulse.size)
            det = np.empty(pulse.size, dtype=np.uint8)
            for a in range(2):
                sel = ch == a
                if sel.any():
                    det[sel] = dets[a][rng.integers(0, dets[a].size, sel.sum())]
            stamp = ticks[pulse] + np.rint(off_ps + t).astype(np.int64)
        else:
            det = np.empty(0, np.uint8)
            stamp = np.empty(0, np.int64)
        all_ch = np.concatenate([np.full(m, clock, dtype=np.uint8), det])
        all_ts = np.concatenate([ticks, stamp])
        order = np.lexsort((all_ch, all_ts))
        yield as_records(all_ch[order], all_ts[order].astype(np.uint64))


def synthesize_tag_array(*args, **kwargs) -> np.ndarray:
    chunks = list(synthesize_tags(*args, **kwargs))
    return np.concatenate(chunks) if chunks else np.empty(0, dtype=TAG_DTYPE)
