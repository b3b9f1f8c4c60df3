"""Run-log CSV files, golden targets, summaries and quantile-band plots."""
from __future__ import annotations

import io
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .deployment import Engine, IncidentKind, RunLog, ScenarioConfig
from .errors import FeedbackUrnError, SchemaMismatch
from .limits import DeterministicMatrix2, MixedParams, PointMass, mixed_limit, renlund_limit

logger = logging.getLogger(__name__)

SCHEMA_LINE = "# feedback-urn v1"
DEFAULT_TOLERANCE = {Engine.URN: 0.02, Engine.SEPP: 0.03}
RUNAWAY_TOLERANCE = 0.05


def columns(n_regions: int) -> list[str]:
    cols = ["rep", "day", "deployed", "frac_or_prob"]
    for prefix in ("rate", "disc", "rep"):
        cols += [f"{prefix}_{i}" for i in range(n_regions)]
    return cols + ["accepted"]


def _num(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else "nan"


def write_runlog_csv(log: RunLog, path: str | Path, target: float | None = None) -> Path:
    """Write one row per rep x day, ordered by rep then day."""
    path = Path(path)
    R = log.n_regions
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    meta = f"# scenario={log.scenario} engine={log.engine.value}"
    if target is not None:
        meta += f" target={target!r}"
    buf.write(meta + "\n")
    buf.write(",".join(columns(R)) + "\n")
    days = np.arange(1, log.n_days + 1)
    for b in range(log.n_reps):
        rep = int(log.reps[b])
        frac = log.frac_or_prob[b]
        rates = log.rates[b]
        disc = log.discovered[b]
        reported = log.reported[b]
        dep = log.deployed[b]
        acc = log.accepted[b]
        for t in range(log.n_days):
            row = [str(rep), str(int(days[t])), str(int(dep[t])), _num(frac[t])]
            row += [_num(v) for v in rates[t]]
            row += [f"{v:g}" for v in disc[t]]
            row += [f"{v:g}" for v in reported[t]]
            row.append(str(int(acc[t])))
            buf.write(",".join(row) + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


@dataclass
class LoadedLog:
    scenario: str
    target: float | None
    data: dict[str, np.ndarray]

    @property
    def days(self) -> np.ndarray:
        return np.unique(self.data["day"]).astype(int)

    def fraction_matrix(self) -> np.ndarray:
        """``frac_or_prob`` reshaped to (reps, days)."""
        reps = self.data["rep"].astype(int)
        days = self.data["day"].astype(int)
        rep_ids, r_idx = np.unique(reps, return_inverse=True)
        day_ids, d_idx = np.unique(days, return_inverse=True)
        out = np.full((rep_ids.size, day_ids.size), np.nan)
        out[r_idx, d_idx] = self.data["frac_or_prob"]
        return out


def read_runlog_csv(path: str | Path) -> LoadedLog:
    path = Path(path)
    meta: dict[str, str] = {}
    skip = 0
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise SchemaMismatch(f"{path}: first line must be {SCHEMA_LINE!r}, got {first!r}")
        skip = 1
        line = fh.readline()
        while line.startswith("#"):
            for token in line[1:].split():
                key, _, value = token.partition("=")
                meta[key] = value
            skip += 1
            line = fh.readline()
        header = line.strip().split(",")
        skip += 1
        has_rows = any(row.strip() for row in fh)
    n_regions = sum(1 for h in header if h.startswith("rate_"))
    expected = columns(n_regions)
    for i, want in enumerate(expected):
        got = header[i] if i < len(header) else None
        if got != want:
            raise SchemaMismatch(f"{path}: column {i} should be {want!r}, got {got!r}")
    if len(header) != len(expected):
        raise SchemaMismatch(f"{path}: unexpected column {header[len(expected)]!r}")
    if has_rows:
        body = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    else:
        body = np.empty((0, len(header)))
    data = {name: body[:, i] for i, name in enumerate(header)}
    target = meta.get("target")
    return LoadedLog(meta.get("scenario", path.stem), float(target) if target else None, data)


def quantile_bands(frac: np.ndarray) -> np.ndarray:
    """(days, 3) array of the 25th, 50th and 75th percentile across reps."""
    return np.nanpercentile(frac, [25, 50, 75], axis=0).T


def write_bands_csv(days: np.ndarray, bands: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    lines = ["day,q25,median,q75"]
    lines += [f"{int(d)},{_num(a)},{_num(m)},{_num(b)}" for d, (a, m, b) in zip(days, bands)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def render_svg(days, bands, target: float | None, title: str, width: int = 640, height: int = 360) -> str:
    """Median line, interquartile band and optional target line; y axis fixed to [0, 1]."""
    days = np.asarray(days, dtype=float)
    left, right, top, bottom = 56, 16, 32, 40
    pw, ph = width - left - right, height - top - bottom
    d0, d1 = float(days.min()), float(days.max())
    span = d1 - d0 or 1.0

    def px(d, y):
        return left + (d - d0) / span * pw, top + (1 - y) * ph

    step = max(1, days.size // 800)
    sel = slice(None, None, step)
    upper = [px(d, y) for d, y in zip(days[sel], bands[sel, 2])]
    lower = [px(d, y) for d, y in zip(days[sel], bands[sel, 0])]
    median = [px(d, y) for d, y in zip(days[sel], bands[sel, 1])]
    pts = lambda seq: " ".join(f"{x:.1f},{y:.1f}" for x, y in seq if math.isfinite(y))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{_esc(title)}</text>',
        f'<polygon points="{pts(upper + lower[::-1])}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>',
        f'<polyline points="{pts(median)}" fill="none" stroke="#08519c" stroke-width="1.5"/>',
    ]
    if target is not None and math.isfinite(target):
        _, ty = px(d0, target)
        out.append(f'<line x1="{left}" y1="{ty:.1f}" x2="{left + pw}" y2="{ty:.1f}" stroke="#cb181d" stroke-dasharray="6,4"/>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for y in (0, 0.25, 0.5, 0.75, 1.0):
        _, yy = px(d0, y)
        out.append(f'<text x="{left - 6}" y="{yy + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11">{y:.2f}</text>')
    for d in np.linspace(d0, d1, 5):
        xx, _ = px(d, 0)
        out.append(f'<text x="{xx:.1f}" y="{top + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{int(round(d))}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle" font-family="sans-serif" font-size="12">day</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def report_one(log: LoadedLog, out_dir: str | Path, target: float | None = None, plot: bool = True) -> dict:
    """Band CSV (and SVG unless ``plot`` is false) for one run log."""
    out_dir = Path(out_dir)
    frac = log.fraction_matrix()
    bands = quantile_bands(frac)
    days = log.days
    target = log.target if target is None else target
    written = {"bands": str(write_bands_csv(days, bands, out_dir / f"{log.scenario}.bands.csv"))}
    if plot:
        try:
            svg = render_svg(days, bands, target, log.scenario)
            p = out_dir / f"{log.scenario}.svg"
            p.write_text(svg, encoding="utf-8")
            written["plot"] = str(p)
        except Exception as exc:  # plots are a convenience
            logger.warning("plot for %s failed: %s", log.scenario, exc)
    return written


def default_target(cfg: ScenarioConfig) -> tuple[float | None, float | None]:
    """Golden value for the median terminal fraction and its tolerance.

    Explicit config values win. Otherwise corrected runs aim at the true rate
    share; uncorrected two-region urns at the limit of their replacement
    matrix; uncorrected point-process runs have no target.
    """
    tol = cfg.tolerance
    if cfg.target is not None:
        return cfg.target, DEFAULT_TOLERANCE[cfg.engine] if tol is None else tol
    if cfg.corrected:
        return cfg.true_fraction, DEFAULT_TOLERANCE[cfg.engine] if tol is None else tol
    if cfg.engine is Engine.SEPP or cfg.n_regions != 2:
        return None, None
    la, lb = cfg.rates
    try:
        if cfg.incident_mode.kind is IncidentKind.MIXED:
            im = cfg.incident_mode
            x = mixed_limit(MixedParams(im.w_d, im.w_r, la, lb, la, lb))
            return x, DEFAULT_TOLERANCE[Engine.URN] if tol is None else tol
        res = renlund_limit(DeterministicMatrix2(la, 0.0, 0.0, lb))
    except FeedbackUrnError:
        return None, None
    if not isinstance(res, PointMass):
        return None, None
    return res.x_star, RUNAWAY_TOLERANCE if tol is None else tol


@dataclass
class ScenarioSummary:
    scenario: str
    reps: int
    days: int
    median: float
    iqr: float
    target: float | None
    tolerance: float | None
    passed: bool | None
    runtime_s: float | None = None
    fallbacks: int = 0
    error: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        if self.error:
            return f"{self.scenario:<44} ERROR {self.error}"
        verdict = "n/a " if self.passed is None else ("PASS" if self.passed else "FAIL")
        tgt = "-" if self.target is None else f"{self.target:.4f}+-{self.tolerance:g}"
        rt = "" if self.runtime_s is None else f" {self.runtime_s:7.1f}s"
        return f"{self.scenario:<44} median={self.median:.4f} iqr={self.iqr:.4f} target={tgt:<16} {verdict}{rt}"


def summarize(name: str, terminal: np.ndarray, n_days: int, target, tolerance, runtime_s=None, fallbacks=0) -> ScenarioSummary:
    """Pass/fail of the median terminal fraction against ``target``."""
    terminal = np.asarray(terminal, dtype=float)
    q25, med, q75 = np.nanpercentile(terminal, [25, 50, 75])
    passed = None if target is None else bool(abs(med - target) <= tolerance)
    return ScenarioSummary(name, int(terminal.size), int(n_days), float(med), float(q75 - q25),
                           target, tolerance, passed, runtime_s, int(fallbacks))
