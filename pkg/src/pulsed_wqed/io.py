"""File formats.

Correlation maps: ``<name>.json`` header ``{format, version, d_t_ns, t_origin_ns,
channels, kind, shape, payload, meta}`` next to a row-major payload, either
``<name>.bin`` (little-endian float64) or ``<name>.csv`` (9 significant
digits).  Time tags: ``<name>.tags`` binary records with a ``<name>.tags.json``
sidecar, or a ``channel,timestamp_ps`` CSV for debugging.  Scans: CSV with
``power_uW,detuning_MHz,counts[,role]``.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .calibration import ROLES, SpectrumScan
from .errors import ConfigError, DataError
from .observables import CorrelationMap, LineCuts
from .timetags import TAG_DTYPE, AcquisitionConfig
from .units import mhz_to_rad_ns, rad_ns_to_mhz

PathLike = Union[str, Path]
MAP_FORMAT = "pulsed-wqed-map"
TAG_FORMAT = "pulsed-wqed-timetags"
FORMAT_VERSION = 1
CSV_DIGITS = 9


def fmt(x: float) -> str:
    return f"{float(x):.{CSV_DIGITS}g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: PathLike, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path: PathLike) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Correlation maps


def _stem(path: PathLike) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".bin", ".csv") else p


def _with(stem: Path, ext: str) -> Path:
    return stem.with_name(stem.name + ext)


def write_map(path: PathLike, cmap: CorrelationMap, payload: str = "bin") -> Path:
    """Write header and payload; returns the header path."""
    if payload not in ("bin", "csv"):
        raise ConfigError("payload must be 'bin' or 'csv'")
    stem = _stem(path)
    header = {
        "format": MAP_FORMAT,
        "version": FORMAT_VERSION,
        "d_t_ns": cmap.d_t,
        "t_origin_ns": cmap.t_origin,
        "channels": cmap.label,
        "kind": cmap.kind,
        "shape": list(cmap.shape),
        "payload": stem.name + "." + payload,
        "meta": cmap.meta,
    }
    data = np.ascontiguousarray(cmap.values, dtype="<f8")
    if payload == "bin":
        _with(stem, ".bin").write_bytes(data.tobytes())
    else:
        lines = (",".join(fmt(v) for v in row) for row in data)
        _with(stem, ".csv").write_text("\n".join(lines) + "\n")
    return write_json(_with(stem, ".json"), header)


def read_map(path: PathLike) -> CorrelationMap:
    stem = _stem(path)
    header = read_json(_with(stem, ".json"))
    if header.get("format") != MAP_FORMAT:
        raise DataError(f"{stem}: not a correlation-map header")
    try:
        shape = tuple(int(s) for s in header["shape"])
        payload = stem.parent / header["payload"]
        if payload.suffix == ".bin":
            values = np.fromfile(payload, dtype="<f8")
        else:
            values = np.loadtxt(payload, delimiter=",", ndmin=2)
        values = values.reshape(shape)
        return CorrelationMap(
            float(header["d_t_ns"]),
            float(header["t_origin_ns"]),
            values,
            header["channels"],
            header["kind"],
            header.get("meta", {}),
        )
    except FileNotFoundError as exc:
        raise DataError(f"{stem}: payload missing") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"{stem}: malformed map ({exc})") from exc


def write_linecuts(path: PathLike, cuts: LineCuts) -> Path:
    path = Path(path)
    rows = ["cut,coordinate_ns,value,partial"]
    rows += [f"diagonal,{fmt(c)},{fmt(v)},{int(f)}" for c, v, f in zip(cuts.sum_times, cuts.diag, cuts.diag_partial)]
    rows += [f"antidiagonal,{fmt(c)},{fmt(v)},{int(f)}" for c, v, f in zip(cuts.delays, cuts.antidiag, cuts.antidiag_partial)]
    path.write_text("\n".join(rows) + "\n")
    return path


def write_table(path: PathLike, header: list, rows: list) -> Path:
    path = Path(path)
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    path.write_text("\n".join(out) + "\n")
    return path


# ---------------------------------------------------------------------------
# Time tags


def write_tags(path: PathLike, chunks, config: AcquisitionConfig, extra: dict = None) -> Path:
    """Stream record chunks to ``path`` (binary) and its JSON sidecar."""
    path = Path(path)
    n = 0
    with open(path, "wb") as fh:
        for chunk in ([chunks] if isinstance(chunks, np.ndarray) else chunks):
            chunk = np.asarray(chunk, dtype=TAG_DTYPE)
            fh.write(chunk.tobytes())
            n += chunk.size
    header = {
        "format": TAG_FORMAT,
        "version": FORMAT_VERSION,
        "record": {"channel": "u1", "timestamp_ps": "<u8"},
        "records": n,
        "acquisition": config.to_dict(),
        "channels": sorted([config.clock_channel, *config.channel_map]),
    }
    if extra:
        header["synthesis"] = extra
    write_json(path.with_name(path.name + ".json"), header)
    return path


def read_tag_header(path: PathLike) -> dict:
    path = Path(path)
    header = read_json(path.with_name(path.name + ".json"))
    if header.get("format") != TAG_FORMAT:
        raise DataError(f"{path}: not a time-tag sidecar")
    return header


def iter_tags(path: PathLike, chunk_records: int = 1_000_000) -> Iterator[np.ndarray]:
    """Yield record chunks from a binary tag file or a CSV debug file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if path.suffix == ".csv":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.uint64, ndmin=2)
        rec = np.empty(len(data), dtype=TAG_DTYPE)
        rec["channel"] = data[:, 0]
        rec["timestamp"] = data[:, 1]
        yield rec
        return
    size = path.stat().st_size
    if size % TAG_DTYPE.itemsize:
        raise DataError(f"{path}: size is not a whole number of records")
    with open(path, "rb") as fh:
        while True:
            rec = np.fromfile(fh, dtype=TAG_DTYPE, count=chunk_records)
            if rec.size == 0:
                break
            yield rec


def write_tags_csv(path: PathLike, records: np.ndarray) -> Path:
    path = Path(path)
    lines = ["channel,timestamp_ps"]
    lines += [f"{int(c)},{int(t)}" for c, t in zip(records["channel"], records["timestamp"])]
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# Spectral scans


def read_scans(path: PathLike, default_role: str = "reflection_fluorescence") -> list[SpectrumScan]:
    """Group CSV rows by (power, role) into scans; detunings converted to rad/ns."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"power_uW", "detuning_MHz", "counts"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {sorted(need)}")
        for i, row in enumerate(reader, start=2):
            try:
                key = (float(row["power_uW"]), row.get("role") or default_role)
                groups.setdefault(key, []).append((float(row["detuning_MHz"]), float(row["counts"])))
            except ValueError as exc:
                raise DataError(f"{path}:{i}: {exc}") from exc
    scans = []
    for (power, role), pts in sorted(groups.items()):
        if role not in ROLES:
            raise DataError(f"{path}: unknown role {role!r}")
        pts = sorted(pts)
        d = mhz_to_rad_ns(np.array([p[0] for p in pts]))
        scans.append(SpectrumScan(power, d, np.array([p[1] for p in pts]), role))
    return scans


def write_scans(path: PathLike, scans) -> Path:
    path = Path(path)
    lines = ["power_uW,detuning_MHz,counts,role"]
    for sc in scans:
        for d, c in zip(rad_ns_to_mhz(sc.detunings), sc.intensities):
            lines.append(f"{fmt(sc.power)},{fmt(d)},{fmt(c)},{sc.role}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_drift(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    """``power_uW,center_MHz`` rows; centres returned in rad/ns."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"power_uW", "center_MHz"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain power_uW,center_MHz")
        rows = [(float(r["power_uW"]), float(r["center_MHz"])) for r in reader]
    p = np.array([r[0] for r in rows])
    return p, mhz_to_rad_ns(np.array([r[1] for r in rows]))


def write_drift(path: PathLike, powers, centers_rad_ns) -> Path:
    path = Path(path)
    lines = ["power_uW,center_MHz"]
    lines += [f"{fmt(p)},{fmt(c)}" for p, c in zip(powers, rad_ns_to_mhz(np.asarray(centers_rad_ns)))]
    path.write_text("\n".join(lines) + "\n")
    return path
