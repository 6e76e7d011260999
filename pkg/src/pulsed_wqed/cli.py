"""Command-line entry point: ``pulsed-wqed <command> [options]``.

Commands: simulate, analyze, calibrate, ingest, synth-tags.  Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
import warnings
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import io
from .calibration import (
    SaturationFit,
    extract_shift,
    fit_drift,
    fit_saturation,
)
from .config import RunConfig, load_config, parse_config
from .emitter import EmitterParams, PulseSpec
from .errors import ConfigError, DataError, WQEDError
from .observables import (
    apply_jitter,
    g2_map,
    intensity_traces,
    linecuts,
    reference_map,
)
from .schmidt import adaptive_bin, monte_carlo_tc, schmidt_decompose
from .timetags import AcquisitionConfig, PulseSource, build_g2, ingest, synthesize_tags
from .units import mhz_to_rad_ns

log = logging.getLogger("pulsed_wqed")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _component_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable ({exc})") from exc
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(out: Path, command: str, cfg: RunConfig, files: list, extra: Optional[dict] = None) -> Path:
    files = sorted({Path(f) for f in files})
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.canonical(),
        "seed": cfg.seed,
        "versions": {
            "artifact": _version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "outputs": {str(f.relative_to(out)) if f.is_relative_to(out) else str(f): _sha256(f) for f in files},
    }
    if extra:
        manifest.update(extra)
    return io.write_json(out / f"manifest_{command}.json", manifest)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config({})
    if getattr(args, "seed", None) is not None:
        cfg = parse_config(dict(cfg.canonical(), seed=args.seed))
    return cfg


def _tag(cfg: RunConfig, pulse: PulseSpec, params: EmitterParams) -> str:
    if cfg.pulse.sigma_over_tau is not None:
        tag = f"s{pulse.sigma * params.gamma_total:.4g}"
    else:
        tag = f"sigma{pulse.sigma:.4g}ns"
    return tag.replace(".", "p")


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    params = cfg.emitter_params()
    m = cfg.map
    files = []
    for pulse in cfg.pulses():
        if pulse.shape != "gaussian":
            raise ConfigError("simulate needs gaussian pulses")
        tag = _tag(cfg, pulse, params)
        jit = cfg.pipeline.jitter()
        for label in m.channels:
            g2 = g2_map(params, pulse, label, m.window_ns, m.d_t_ns, m.integration_dt_ns)
            ref = reference_map(params, pulse, label, m.window_ns, m.d_t_ns, m.integration_dt_ns)
            if cfg.pipeline.apply_jitter:
                f1, f2 = (jit.get(c, 0.0) for c in g2.channels)
                g2, ref = apply_jitter(g2, f1, f2), apply_jitter(ref, f1, f2)
            for name, cm in ((f"g2_{g2.label}_{tag}", g2), (f"ref_{g2.label}_{tag}", ref)):
                files.append(io.write_map(out / name, cm, m.payload))
                files.append(out / f"{name}.{m.payload}")
            cuts = linecuts(g2, cfg.pipeline.linecut_width_bins)
            files.append(io.write_linecuts(out / f"linecuts_{g2.label}_{tag}.csv", cuts))
        times, traces = intensity_traces(params, pulse, m.window_ns, m.d_t_ns, m.integration_dt_ns)
        chans = list(traces)
        rows = [(float(t), *(float(traces[c][i]) for c in chans)) for i, t in enumerate(times)]
        names = [c.value for c in chans]
        files.append(io.write_table(out / f"g1_{tag}.csv", ["time_ns"] + [f"g1_{n}_per_ns" for n in names], rows))
    _manifest(out, "simulate", cfg, files)
    print(f"simulate: wrote {sum(1 for f in files if str(f).endswith('.json'))} maps to {out}")
    return 0


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    pipe = cfg.pipeline
    n_mc = pipe.monte_carlo_n if args.monte_carlo is None else args.monte_carlo
    if 0 < n_mc < 100:
        raise ConfigError("--monte-carlo must be 0 or >= 100")
    rebin = args.rebin or pipe.rebin_factor
    loaded, failures = [], {}
    for path in args.maps:
        try:
            loaded.append((Path(path), io.read_map(path)))
        except WQEDError as exc:
            failures[str(path)] = str(exc)
            print(f"analyze: {path}: {exc}", file=sys.stderr)
    if not loaded:
        raise DataError("no readable maps")
    kinds = {cm.kind for _, cm in loaded}
    if len(kinds) > 1:
        raise ConfigError(f"refusing to analyze mixed map kinds {sorted(kinds)}")
    kind = kinds.pop()
    if kind == "counts":
        if rebin:
            factors = [rebin] * len(loaded)
            capped = [False] * len(loaded)
        elif pipe.adaptive_bin and not args.no_adaptive:
            res = adaptive_bin([cm for _, cm in loaded])
            factors, capped = res.factors, res.capped
        else:
            factors, capped = [1] * len(loaded), [False] * len(loaded)
    else:
        factors, capped = [rebin or 1] * len(loaded), [False] * len(loaded)

    files, rows = [], []
    for i, ((path, cm), f, cap) in enumerate(zip(loaded, factors, capped)):
        name = path.name.removesuffix(".json")
        try:
            if kind == "counts" and n_mc:
                result = monte_carlo_tc(cm, n_mc, _component_seed(cfg.seed, 2, i), f)
            else:
                result = schmidt_decompose(cm.rebin(f))
        except WQEDError as exc:
            failures[str(path)] = str(exc)
            print(f"analyze: {path}: {exc}", file=sys.stderr)
            continue
        meta = dict(result.pipeline_meta, source_file=path.name, rebin_factor=f, binning_capped=cap)
        doc = dict(result.to_dict(), pipeline_meta=meta)
        files.append(io.write_json(out / f"schmidt_{name}.json", doc))
        files.append(io.write_linecuts(out / f"linecuts_{name}.csv", linecuts(cm, pipe.linecut_width_bins)))
        s_tau = cm.meta.get("sigma_over_tau", float("nan"))
        rows.append((name, float(s_tau), cm.label, cm.meta.get("selection", ""), cm.kind, float(result.d_t_used), float(result.t_c), float(result.t_c_err)))
    rows.sort(key=lambda r: (r[1] if r[1] == r[1] else np.inf, r[0]))
    header = ["file", "sigma_over_tau", "channels", "selection", "kind", "d_t_used_ns", "t_c", "t_c_err"]
    files.append(io.write_table(out / "tc_table.csv", header, rows))
    _manifest(out, "analyze", cfg, files, {"failures": failures})
    for r in rows:
        print(f"{r[0]}: T_c = {r[6]:.4f} +- {r[7]:.4f}")
    return DataError.exit_code if failures else 0


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    cal = cfg.calibration
    files = []
    if args.mode == "saturation":
        gamma = args.gamma_total or cal.gamma_total_per_ns or cfg.emitter.gamma_total_per_ns
        scans = []
        for path in args.scans:
            scans += io.read_scans(path)
        fit = fit_saturation(scans, gamma, beta=cal.beta)
        flux = fit.flux
        powers = sorted({s.power for s in scans})
        report = dict(fit.to_dict(), saturation_table=[
            {"power_uW": p, "S": float(flux.saturation(p)), "n_tau": float(flux.n_tau(p))} for p in powers
        ])
        files.append(io.write_json(out / "saturation.json", report))
        print(f"calibrate: n_c = {flux.n_c:.4f}, beta = {fit.params.beta:.4f}, gamma_deph = {fit.params.gamma_deph:.4f}")
    else:
        if not args.saturation:
            raise ConfigError("shift mode needs --saturation (a saturation report) to convert power to n_tau")
        if not args.drift:
            raise ConfigError("shift mode needs --drift (power_uW,center_MHz)")
        sat = SaturationFit.from_dict(io.read_json(args.saturation))
        delta_c = cal.control_detuning(sat.gamma_total)
        if args.control_detuning_mhz is not None:
            delta_c = mhz_to_rad_ns(args.control_detuning_mhz)
        if delta_c is None:
            raise ConfigError("shift mode needs a control detuning (config or --control-detuning-MHz)")
        scans = []
        for path in args.scans:
            scans += io.read_scans(path, default_role="probe_transmission")
        dp, dc = io.read_drift(args.drift)
        curve = extract_shift(scans, sat, fit_drift(dp, dc), delta_c, cal.target, cal.n_mc, _component_seed(cfg.seed, 3))
        files.append(io.write_json(out / "shift.json", curve.to_dict()))
        print(f"calibrate: n_tau(full linewidth) = {curve.n_tau_full_linewidth:.3f} +- {curve.n_tau_full_linewidth_err:.3f}")
    _manifest(out, f"calibrate_{args.mode}", cfg, files)
    return 0


# ---------------------------------------------------------------------------
# synth-tags and ingest


def _source(cfg: RunConfig, index: int):
    params = cfg.emitter_params()
    pulses = cfg.pulses()
    if not 0 <= index < len(pulses):
        raise ConfigError(f"--pulse-index {index} outside the {len(pulses)} configured pulses")
    pulse = pulses[index]
    m = cfg.map
    maps = [g2_map(params, pulse, c, m.window_ns, m.d_t_ns, m.integration_dt_ns) for c in ("tt", "tr", "rr")]
    _, traces = intensity_traces(params, pulse, m.window_ns, m.d_t_ns, m.integration_dt_ns)
    return PulseSource.from_maps(maps, traces), pulse


def cmd_synth_tags(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    src, pulse = _source(cfg, args.pulse_index)
    acq = cfg.acquisition.build()
    syn = cfg.synthesis
    n_pulses = args.n_pulses or syn.n_pulses
    dt = src.d_t
    # first bin edge one nanosecond after the clock, on the ps grid
    offset = round((1.0 - (src.times[0] - 0.5 * dt)) * 1000) / 1000
    chunks = synthesize_tags(
        src,
        n_pulses,
        acq,
        seed=_component_seed(cfg.seed, 4),
        mean_photons=syn.mean_photons,
        jitter_fwhm=cfg.pipeline.jitter_fwhm_ns,
        pulse_offset=offset,
        clock_period_jitter=syn.clock_period_jitter,
        chunk_pulses=syn.chunk_pulses,
    )
    path = out / (args.name or "tags.bin")
    extra = {
        "n_pulses": n_pulses,
        "pulse_offset_ns": offset,
        "window_ns": [round(offset + src.times[0] - 0.5 * dt, 3), round(offset + src.times[-1] + 0.5 * dt, 3)],
        "d_t_ns": dt,
        "source_mean_photons": src.mean_photons,
        "mean_photons": syn.mean_photons or src.mean_photons,
        "sigma_over_tau": pulse.sigma * cfg.emitter.gamma_total_per_ns,
    }
    io.write_tags(path, chunks, acq, extra)
    files = [path, path.with_name(path.name + ".json")]
    _manifest(out, "synth-tags", cfg, files)
    print(f"synth-tags: {n_pulses} pulses -> {path}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    header = None
    if not str(args.tags).endswith(".csv"):
        header = io.read_tag_header(args.tags)
    acq = AcquisitionConfig.from_dict(header["acquisition"]) if header else cfg.acquisition.build()
    events = ingest(io.iter_tags(args.tags, args.chunk_records), acq)
    d_t = args.d_t or cfg.map.d_t_ns
    window = None
    synth = (header or {}).get("synthesis")
    if args.window:
        window = tuple(args.window)
    elif synth:
        window = tuple(synth["window_ns"])
    files = []
    for label in args.channels or cfg.map.channels:
        for sel in ("same_pulse", "subsequent_pulse"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                cm = build_g2(events, label, sel, d_t, window)
            if synth:
                cm = cm.with_values(cm.values, meta=dict(cm.meta, sigma_over_tau=synth.get("sigma_over_tau")))
            name = f"counts_{cm.label}_{sel}"
            files.append(io.write_map(out / name, cm, cfg.map.payload))
            files.append(out / f"{name}.{cfg.map.payload}")
            print(f"ingest: {name}: {int(cm.values.sum())} pairs in window")
    files.append(io.write_json(out / "ingest_stats.json", dict(events.stats, n_pulses=events.n_pulses)))
    _manifest(out, "ingest", cfg, files)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulsed-wqed", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("simulate", help="simulate correlation maps, line cuts and intensities")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="Schmidt analysis of map files")
    common(sp)
    sp.add_argument("maps", nargs="+", help="map header files (.json)")
    sp.add_argument("--monte-carlo", type=int, help="number of Poisson resamples (0 disables)")
    sp.add_argument("--rebin", type=int, help="fixed rebin factor instead of adaptive binning")
    sp.add_argument("--no-adaptive", action="store_true", help="disable adaptive binning")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("calibrate", help="saturation or shift calibration from scan CSVs")
    common(sp)
    sp.add_argument("--mode", choices=("saturation", "shift"), required=True)
    sp.add_argument("--scans", nargs="+", required=True, help="CSV files power_uW,detuning_MHz,counts[,role]")
    sp.add_argument("--gamma-total", type=float, help="externally measured decay rate, ns^-1")
    sp.add_argument("--saturation", help="saturation report JSON (shift mode)")
    sp.add_argument("--drift", help="drift CSV power_uW,center_MHz (shift mode)")
    sp.add_argument("--control-detuning-MHz", dest="control_detuning_mhz", type=float)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("synth-tags", help="synthesize a time-tag stream from simulated maps")
    common(sp)
    sp.add_argument("--n-pulses", type=int)
    sp.add_argument("--pulse-index", type=int, default=0, help="which configured pulse to use")
    sp.add_argument("--name", help="output file name (default tags.bin)")
    sp.set_defaults(func=cmd_synth_tags)

    sp = sub.add_parser("ingest", help="clock-reference tags and build coincidence maps")
    common(sp)
    sp.add_argument("tags", help="binary tag file (with .json sidecar) or CSV")
    sp.add_argument("--channels", nargs="+")
    sp.add_argument("--d-t", type=float, help="histogram bin width, ns")
    sp.add_argument("--window", type=float, nargs=2, metavar=("START_NS", "STOP_NS"))
    sp.add_argument("--chunk-records", type=int, default=1_000_000)
    sp.set_defaults(func=cmd_ingest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except WQEDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
