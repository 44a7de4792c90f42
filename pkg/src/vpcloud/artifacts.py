"""Artifact formats: series CSV, binary snapshots, JSON reports, SVG plots.

Every artifact embeds the producing config and a format-version string.
Nothing here depends on wall-clock time or dict iteration order, so repeated
runs of the same config produce byte-identical files.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from pathlib import Path

import numpy as np

from .config import FORMAT_VERSION, RunConfig, from_ini
from .core import Ensemble, SimulationError
from .dynamics import RunResult

CSV_COLUMNS = (
    "t",
    "M0",
    "M2",
    "Mn",
    "sup_E",
    "pe",
    "ke",
    "R_max",
    "rho_sup",
    "escaped_frac",
    "scatter_resid",
)

SNAPSHOT_MAGIC = b"VPCSNP01"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIIQdd")


class ArtifactError(SimulationError):
    pass


def _g17(x: float) -> str:
    return f"{x:.17g}"


def _config_comment(cfg: RunConfig | None) -> list[str]:
    lines = [f"# format = {FORMAT_VERSION}"]
    if cfg is not None:
        for ln in cfg.canonical_text().splitlines():
            lines.append(f"# {ln}" if ln else "#")
    return lines


def series_csv_text(result: RunResult) -> str:
    """One row per record, columns in the documented order, 17 significant digits."""
    orders = result.config.moment_orders if result.config else (0.0, 2.0, None)
    lines = _config_comment(result.config)
    lines.append(",".join(CSV_COLUMNS))
    for rec in result.records:
        m0 = rec.moments[orders[0]]
        m2 = rec.moments[orders[1]]
        mn = rec.moments[orders[2]] if orders[2] is not None else math.nan
        row = (
            rec.t,
            m0,
            m2,
            mn,
            rec.sup_e,
            rec.pe,
            rec.ke,
            rec.r_max,
            rec.rho_sup,
            rec.escaped_frac,
            rec.scatter_resid,
        )
        lines.append(",".join(_g17(v) for v in row))
    return "\n".join(lines) + "\n"


def write_series_csv(path: str | Path, result: RunResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(series_csv_text(result))
    return path


def read_series_csv(path: str | Path) -> tuple[RunConfig | None, dict[str, np.ndarray]]:
    """Columns by name plus the embedded config, when present."""
    text = Path(path).read_text()
    comment_lines = []
    data_lines = []
    header = None
    for ln in text.splitlines():
        if ln.startswith("#"):
            comment_lines.append(ln[1:].strip() if ln != "#" else "")
        elif header is None:
            header = ln.strip().split(",")
        elif ln.strip():
            data_lines.append(ln)
    if header is None:
        raise ArtifactError(f"{path}: missing header row")
    cfg = None
    cfg_text = "\n".join(c for c in comment_lines if not c.startswith("format ="))
    if cfg_text.strip():
        cfg = from_ini(cfg_text)
    rows = np.array([[float(v) for v in ln.split(",")] for ln in data_lines])
    if rows.size and rows.shape[1] != len(header):
        raise ArtifactError(f"{path}: ragged rows")
    cols = {name: (rows[:, i] if rows.size else np.array([])) for i, name in enumerate(header)}
    return cfg, cols


def write_snapshot(path: str | Path, ens: Ensemble) -> Path:
    """Little-endian binary state: header then w[N], x[N*d], v[N*d] as f8."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, ens.d, ens.n, ens.t, ens.alpha
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ens.w.astype("<f8").tobytes())
        fh.write(ens.x.astype("<f8").tobytes())
        fh.write(ens.v.astype("<f8").tobytes())
    return path


def read_snapshot(path: str | Path) -> Ensemble:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ArtifactError(f"{path}: truncated snapshot")
    magic, version, d, n, t, alpha = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ArtifactError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ArtifactError(f"{path}: unsupported version {version}")
    need = _HEADER.size + 8 * (n + 2 * n * d)
    if len(raw) != need:
        raise ArtifactError(f"{path}: expected {need} bytes, got {len(raw)}")
    off = _HEADER.size
    w = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
    off += 8 * n
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    off += 8 * n * d
    v = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    return Ensemble(d=d, alpha=alpha, t=t, x=x, v=v, w=w)


def jsonable(obj):
    """Recursively convert dataclasses/arrays to plain JSON-safe values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)


def write_report_json(path: str | Path, name: str, payload, cfg: RunConfig | None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": FORMAT_VERSION,
        "report": name,
        "config": cfg.canonical_text() if cfg is not None else None,
        "payload": jsonable(payload),
    }
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def write_run_summary(path: str | Path, result: RunResult, extra: dict | None = None) -> Path:
    payload = {
        "softening_epsilon": result.softening.epsilon,
        "n_records": len(result.records),
        "t_final": result.records[-1].t,
        "total_charge": float(np.sum(result.w)),
        "schedule_mode": result.schedule.mode,
    }
    if extra:
        payload.update(extra)
    return write_report_json(path, "run_summary", payload, result.config)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_loglog(
    ts: np.ndarray,
    columns: dict[str, np.ndarray],
    alpha: float,
    guides: tuple[float, ...] = (),
    title: str = "",
    config_text: str | None = None,
    width: int = 720,
    height: int = 520,
) -> str:
    """Log-log line plot as standalone SVG text; no renderer dependencies.

    Nonpositive values are dropped from the polylines and flagged with a
    warning annotation.  Guide lines with the requested slopes are anchored
    at the median of the first plotted series.
    """
    if not columns:
        raise ValueError("no columns selected")
    ml, mr, mt, mb = 64, 16, 28, 44
    pw, ph = width - ml - mr, height - mt - mb
    tau = np.asarray(ts, dtype=np.float64) + alpha

    pts = {}
    masked = 0
    for name, vals in columns.items():
        vals = np.asarray(vals, dtype=np.float64)
        keep = (vals > 0) & np.isfinite(vals) & (tau > 0)
        masked += int((~keep).sum())
        pts[name] = (np.log10(tau[keep]), np.log10(vals[keep]))
    xs = np.concatenate([p[0] for p in pts.values() if p[0].size])
    ys = np.concatenate([p[1] for p in pts.values() if p[1].size])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 0.5, y1 + 0.5
    padx, pady = 0.04 * (x1 - x0), 0.06 * (y1 - y0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    if config_text:
        safe = config_text.replace("--", "- -")
        out.append(f"<!-- {FORMAT_VERSION}\n{safe}\n-->")
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    out.append(
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>'
    )
    if title:
        out.append(
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
            f'font-size="13" font-family="sans-serif">{title}</text>'
        )
    for dec in range(math.ceil(x0), math.floor(x1) + 1):
        px = sx(dec)
        out.append(
            f'<line x1="{px:.2f}" y1="{mt}" x2="{px:.2f}" y2="{mt + ph}" '
            f'stroke="#ddd" stroke-width="0.7"/>'
        )
        out.append(
            f'<text x="{px:.2f}" y="{mt + ph + 16}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">1e{dec}</text>'
        )
    for dec in range(math.ceil(y0), math.floor(y1) + 1):
        py = sy(dec)
        out.append(
            f'<line x1="{ml}" y1="{py:.2f}" x2="{ml + pw}" y2="{py:.2f}" '
            f'stroke="#ddd" stroke-width="0.7"/>'
        )
        out.append(
            f'<text x="{ml - 6}" y="{py + 4:.2f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">1e{dec}</text>'
        )
    out.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif">t + alpha (log)</text>'
    )

    ref = next(iter(pts.values()))
    for slope in guides:
        if ref[0].size == 0:
            break
        xa = float(np.median(ref[0]))
        ya = float(np.median(ref[1]))
        ga0, ga1 = x0 + padx, x1 - padx
        p1 = (sx(ga0), sy(ya + slope * (ga0 - xa)))
        p2 = (sx(ga1), sy(ya + slope * (ga1 - xa)))
        out.append(
            f'<line x1="{p1[0]:.2f}" y1="{p1[1]:.2f}" x2="{p2[0]:.2f}" y2="{p2[1]:.2f}" '
            f'stroke="#888" stroke-dasharray="6,4" stroke-width="1.2"/>'
        )
        out.append(
            f'<text x="{p2[0] - 4:.2f}" y="{p2[1] - 4:.2f}" text-anchor="end" '
            f'font-size="10" fill="#666" font-family="sans-serif">slope {slope:g}</text>'
        )

    for i, (name, (px, py)) in enumerate(pts.items()):
        color = _PALETTE[i % len(_PALETTE)]
        if px.size:
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(px, py))
            out.append(
                f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.6"/>'
            )
        out.append(
            f'<text x="{ml + 10}" y="{mt + 16 + 14 * i}" font-size="11" '
            f'fill="{color}" font-family="sans-serif">{name}</text>'
        )
    if masked:
        out.append(
            f'<text x="{ml + pw - 6}" y="{mt + 14}" text-anchor="end" font-size="10" '
            f'fill="#b00" font-family="sans-serif">warning: {masked} nonpositive '
            f"point(s) masked</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
