"""Static report rendering: SVG artifacts with CSV twins and an HTML index.

SVGs are built by hand from pure inputs (no clock, no randomness, no plotting
library), so identical inputs produce byte-identical files. Every SVG gets a
sibling CSV holding the exact plotted numbers; plots are never the only
record.
"""

from __future__ import annotations

import html
import re
from dataclasses import dataclass, field
from pathlib import Path

from repro_harness.errors import EmptySeriesError, NoRunsFoundError
from repro_harness.events import (
    CONFUSION,
    EVENTS_FILENAME,
    GRID,
    HISTOGRAM,
    AggregateSeries,
    ConfusionMatrix,
    accumulate_confusion,
    aggregate,
    read_events,
    series_to_csv,
)

BAND_STD1 = "std1"
BAND_NONE = "none"

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 64, 16, 36, 48


def _fmt(v):
    return f"{v:.2f}"


def _tick_label(v):
    return format(v, ".6g")


def _nice_range(lo, hi):
    if hi - lo < 1e-12:
        pad = 0.5 if lo == 0 else abs(lo) * 0.1 + 1e-12
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


class _Svg:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def add(self, element):
        self.parts.append(element)

    def text(self, x, y, s, size=12, anchor="middle", fill="#333333", rotate=None):
        transform = f' transform="rotate(-90 {_fmt(x)} {_fmt(y)})"' if rotate else ""
        self.add(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
                 f'font-size="{size}" text-anchor="{anchor}" fill="{fill}"{transform}>'
                 f"{html.escape(s)}</text>")

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _axes(svg, x_lo, x_hi, y_lo, y_hi, x_label, y_label, title):
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return _MT + (y_hi - y) / (y_hi - y_lo) * plot_h

    svg.add(f'<rect x="{_ML}" y="{_MT}" width="{plot_w}" height="{plot_h}" '
            f'fill="none" stroke="#888888"/>')
    for i in range(5):
        xv = x_lo + (x_hi - x_lo) * i / 4
        yv = y_lo + (y_hi - y_lo) * i / 4
        xq, yq = px(xv), py(yv)
        svg.add(f'<line x1="{_fmt(xq)}" y1="{_H - _MB}" x2="{_fmt(xq)}" '
                f'y2="{_H - _MB + 4}" stroke="#888888"/>')
        svg.text(xq, _H - _MB + 18, _tick_label(xv), size=10)
        svg.add(f'<line x1="{_ML - 4}" y1="{_fmt(yq)}" x2="{_ML}" '
                f'y2="{_fmt(yq)}" stroke="#888888"/>')
        svg.text(_ML - 8, yq + 3, _tick_label(yv), size=10, anchor="end")
    svg.text(_W / 2, _H - 12, x_label)
    svg.text(16, _H / 2, y_label, rotate=True)
    svg.text(_W / 2, 20, title, size=14)
    return px, py


def render_series(series_list, band=BAND_STD1):
    """Mean lines with optional +/-1 sample-std shaded bands.

    Returns (svg_text, {tag: csv_text}); the CSVs are the aggregation module's
    export, byte for byte.
    """
    if isinstance(series_list, AggregateSeries):
        series_list = [series_list]
    if not series_list or any(not s.points for s in series_list):
        raise EmptySeriesError("every series must contain at least one point")
    if band not in (BAND_STD1, BAND_NONE):
        raise ValueError(f"unknown band mode {band!r}")

    xs = [p.step for s in series_list for p in s.points]
    if band == BAND_STD1:
        ys = [v for s in series_list for p in s.points
              for v in (p.mean - p.std, p.mean + p.std)]
    else:
        ys = [p.mean for s in series_list for p in s.points]
    x_lo, x_hi = _nice_range(min(xs), max(xs))
    y_lo, y_hi = _nice_range(min(ys), max(ys))

    svg = _Svg(_W, _H)
    title = " / ".join(s.tag for s in series_list)
    px, py = _axes(svg, x_lo, x_hi, y_lo, y_hi, "step", title, title)

    for idx, series in enumerate(series_list):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = series.points
        if band == BAND_STD1 and len(pts) > 1:
            upper = " ".join(f"{_fmt(px(p.step))},{_fmt(py(p.mean + p.std))}" for p in pts)
            lower = " ".join(f"{_fmt(px(p.step))},{_fmt(py(p.mean - p.std))}"
                             for p in reversed(pts))
            svg.add(f'<polygon points="{upper} {lower}" fill="{color}" '
                    f'fill-opacity="0.25" stroke="none"/>')
        line = " ".join(f"{_fmt(px(p.step))},{_fmt(py(p.mean))}" for p in pts)
        if len(pts) == 1:
            p = pts[0]
            svg.add(f'<circle cx="{_fmt(px(p.step))}" cy="{_fmt(py(p.mean))}" '
                    f'r="3" fill="{color}"/>')
        else:
            svg.add(f'<polyline points="{line}" fill="none" stroke="{color}" '
                    f'stroke-width="1.5"/>')
        if len(series_list) > 1:
            ly = _MT + 14 + idx * 16
            svg.add(f'<rect x="{_ML + 8}" y="{ly - 9}" width="10" height="10" '
                    f'fill="{color}"/>')
            svg.text(_ML + 24, ly, series.tag, size=11, anchor="start")

    return svg.render(), {s.tag: series_to_csv(s) for s in series_list}


def _shade(fraction, dark=(8, 48, 107)):
    r = round(255 + (dark[0] - 255) * fraction)
    g = round(255 + (dark[1] - 255) * fraction)
    b = round(255 + (dark[2] - 255) * fraction)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_confusion(cm: ConfusionMatrix):
    """Count-shaded KxK heatmap (rows = true class) plus the raw-matrix CSV."""
    k = len(cm.labels)
    cell = max(36, min(72, 360 // k))
    width = _ML + k * cell + _MR
    height = _MT + k * cell + _MB
    svg = _Svg(width, height)
    max_count = max((c for row in cm.counts for c in row), default=0)
    acc = cm.accuracy()
    title = "confusion" if acc is None else f"confusion (accuracy {acc:.4f})"
    svg.text(width / 2, 20, title, size=14)
    for i, true_label in enumerate(cm.labels):
        for j, _ in enumerate(cm.labels):
            count = cm.counts[i][j]
            frac = count / max_count if max_count else 0.0
            x = _ML + j * cell
            y = _MT + i * cell
            svg.add(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                    f'fill="{_shade(frac)}" stroke="#888888"/>')
            text_fill = "#ffffff" if frac > 0.5 else "#333333"
            svg.text(x + cell / 2, y + cell / 2 + 4, str(count), size=11, fill=text_fill)
        svg.text(_ML - 8, _MT + i * cell + cell / 2 + 4, true_label,
                 size=11, anchor="end")
    for j, pred_label in enumerate(cm.labels):
        svg.text(_ML + j * cell + cell / 2, _MT + k * cell + 16, pred_label, size=11)
    svg.text(width / 2, height - 10, "predicted")
    svg.text(14, height / 2, "true", rotate=True)

    lines = ["label," + ",".join(cm.labels)]
    for label, row in zip(cm.labels, cm.counts):
        lines.append(label + "," + ",".join(str(c) for c in row))
    return svg.render(), "\n".join(lines) + "\n"


def parse_confusion_csv(text) -> ConfusionMatrix:
    rows = [line.split(",") for line in text.strip().split("\n")]
    labels = tuple(rows[0][1:])
    counts = tuple(tuple(int(c) for c in row[1:]) for row in rows[1:])
    return ConfusionMatrix(labels=labels, counts=counts)


def _diverging(v, lo=(49, 54, 149), hi=(165, 0, 38)):
    """0 -> blue, 0.5 -> white (neutral midpoint), 1 -> red."""
    if v <= 0.5:
        f = v / 0.5
        a, b = lo, (255, 255, 255)
    else:
        f = (v - 0.5) / 0.5
        a, b = (255, 255, 255), hi
    return "#{:02x}{:02x}{:02x}".format(
        round(a[0] + (b[0] - a[0]) * f),
        round(a[1] + (b[1] - a[1]) * f),
        round(a[2] + (b[2] - a[2]) * f),
    )


def render_grid(payload, points=None, tag="decision_grid"):
    """Heatmap of confidence values over the recorded bounding box, with an
    optional overlay of dataset points."""
    rows, cols = payload["rows"], payload["cols"]
    values = payload["values"]
    svg = _Svg(_W, _H)
    plot_w = _W - _ML - _MR
    plot_h = _H - _MT - _MB
    svg.text(_W / 2, 20, tag, size=14)
    cell_w = plot_w / cols
    cell_h = plot_h / rows
    for r in range(rows):
        for c in range(cols):
            x = _ML + c * cell_w
            # row 0 holds y_min, drawn at the bottom (SVG y grows downward)
            y = _MT + plot_h - (r + 1) * cell_h
            svg.add(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cell_w + 0.5)}" '
                    f'height="{_fmt(cell_h + 0.5)}" fill="{_diverging(values[r][c])}"/>')
    svg.add(f'<rect x="{_ML}" y="{_MT}" width="{plot_w}" height="{plot_h}" '
            f'fill="none" stroke="#888888"/>')
    x_min, x_max = payload["x_min"], payload["x_max"]
    y_min, y_max = payload["y_min"], payload["y_max"]
    if points:
        x_span = (x_max - x_min) or 1.0
        y_span = (y_max - y_min) or 1.0
        for x, y, label in points:
            cx = _ML + (x - x_min) / x_span * plot_w
            cy = _MT + plot_h - (y - y_min) / y_span * plot_h
            color = "#08306b" if label == 0 else "#7f0000"
            svg.add(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="2.5" fill="none" '
                    f'stroke="{color}" stroke-width="1"/>')
    svg.text(_ML, _H - 12, _tick_label(x_min), size=10, anchor="start")
    svg.text(_W - _MR, _H - 12, _tick_label(x_max), size=10, anchor="end")
    svg.text(_ML - 8, _H - _MB, _tick_label(y_min), size=10, anchor="end")
    svg.text(_ML - 8, _MT + 10, _tick_label(y_max), size=10, anchor="end")
    return svg.render()


def grid_to_csv(payload) -> str:
    lines = [",".join(repr(v) for v in row) for row in payload["values"]]
    return "\n".join(lines) + "\n"


def render_histogram(payload, tag="histogram"):
    """Bar chart of one histogram event."""
    edges, counts = payload["edges"], payload["counts"]
    svg = _Svg(_W, _H)
    x_lo, x_hi = edges[0], edges[-1]
    y_hi = max(max(counts), 1)
    px, py = _axes(svg, x_lo, x_hi, 0, y_hi * 1.05, "value", "count", tag)
    for i, count in enumerate(counts):
        x0, x1 = px(edges[i]), px(edges[i + 1])
        y0, y1 = py(count), py(0)
        svg.add(f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" '
                f'height="{_fmt(y1 - y0)}" fill="#1f77b4" fill-opacity="0.8" '
                f'stroke="#888888"/>')
    return svg.render()


def histogram_to_csv(payload) -> str:
    lines = ["bin_lo,bin_hi,count"]
    for i, count in enumerate(payload["counts"]):
        lines.append(f"{payload['edges'][i]!r},{payload['edges'][i + 1]!r},{count}")
    return "\n".join(lines) + "\n"


# --- report bundle -------------------------------------------------------------

@dataclass
class ReportBundle:
    output_dir: Path
    index_path: Path
    artifacts: list = field(default_factory=list)  # (svg_name, csv_name or None)


def _safe_name(tag):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", tag)


def _run_sort_key(path: Path):
    m = re.fullmatch(r"run-(\d+)", path.name)
    return (0, int(m.group(1)), "") if m else (1, 0, path.name)


def discover_run_dirs(batch_dir) -> list:
    batch_dir = Path(batch_dir)
    if not batch_dir.is_dir():
        raise NoRunsFoundError(f"{batch_dir} is not a directory")
    runs = [d for d in batch_dir.iterdir()
            if d.is_dir() and (d / "manifest.json").is_file()]
    if not runs:
        raise NoRunsFoundError(f"no run directories with manifests under {batch_dir}")
    return sorted(runs, key=_run_sort_key)


def build_report(batch_dir, out_dir=None) -> ReportBundle:
    """Aggregate every scalar tag across the batch's runs and render the full
    artifact set: series plots, summed confusion, latest histogram and grid
    per tag, and an index.html linking everything."""
    batch_dir = Path(batch_dir)
    run_dirs = discover_run_dirs(batch_dir)
    out_dir = Path(out_dir) if out_dir else batch_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    run_logs = []
    for rd in run_dirs:
        events_path = rd / EVENTS_FILENAME
        records = read_events(events_path)[0] if events_path.exists() else []
        run_logs.append(records)

    bundle = ReportBundle(output_dir=out_dir, index_path=out_dir / "index.html")
    sections = []

    scalar_tags = sorted({r.tag for log in run_logs for r in log if r.kind == "scalar"})
    for tag in scalar_tags:
        series = aggregate(run_logs, tag)
        svg_text, csvs = render_series([series], band=BAND_STD1)
        base = f"series_{_safe_name(tag)}"
        (out_dir / f"{base}.svg").write_text(svg_text, encoding="utf-8")
        (out_dir / f"{base}.csv").write_text(csvs[tag], encoding="utf-8")
        bundle.artifacts.append((f"{base}.svg", f"{base}.csv"))
        sections.append((f"series: {tag}", f"{base}.svg", f"{base}.csv"))

    confusion_records = [r for log in run_logs for r in log if r.kind == CONFUSION]
    if confusion_records:
        cm = accumulate_confusion(confusion_records)
        svg_text, csv_text = render_confusion(cm)
        (out_dir / "confusion.svg").write_text(svg_text, encoding="utf-8")
        (out_dir / "confusion.csv").write_text(csv_text, encoding="utf-8")
        bundle.artifacts.append(("confusion.svg", "confusion.csv"))
        sections.append(("confusion (all runs)", "confusion.svg", "confusion.csv"))

    for kind, render_one, to_csv, prefix in (
        (HISTOGRAM, render_histogram, histogram_to_csv, "histogram"),
        (GRID, render_grid, grid_to_csv, "grid"),
    ):
        tags = sorted({r.tag for log in run_logs for r in log if r.kind == kind})
        for tag in tags:
            latest = None
            for log in run_logs:
                matching = [r for r in log if r.kind == kind and r.tag == tag]
                if matching:
                    latest = max(matching, key=lambda r: r.step)
                    break
            if latest is None:
                continue
            base = f"{prefix}_{_safe_name(tag)}"
            svg_text = render_one(latest.payload, tag=tag)
            (out_dir / f"{base}.svg").write_text(svg_text, encoding="utf-8")
            (out_dir / f"{base}.csv").write_text(to_csv(latest.payload), encoding="utf-8")
            bundle.artifacts.append((f"{base}.svg", f"{base}.csv"))
            sections.append((f"{prefix}: {tag}", f"{base}.svg", f"{base}.csv"))

    _write_index(bundle.index_path, batch_dir, run_dirs, sections)
    return bundle


def _write_index(index_path: Path, batch_dir: Path, run_dirs, sections):
    lines = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\"><title>experiment report</title>",
        "<style>body{font-family:sans-serif;margin:2em}img{border:1px solid #ccc}"
        "li{margin:0.2em 0}</style></head><body>",
        f"<h1>{html.escape(batch_dir.name)}</h1>",
        "<h2>runs</h2><ul>",
    ]
    for rd in run_dirs:
        rel = f"../{rd.name}/manifest.json"
        lines.append(f'<li><a href="{html.escape(rel)}">{html.escape(rd.name)}</a></li>')
    lines.append("</ul>")
    for title, svg_name, csv_name in sections:
        lines.append(f"<h2>{html.escape(title)}</h2>")
        lines.append(f'<img src="{html.escape(svg_name)}" alt="{html.escape(title)}">')
        if csv_name:
            lines.append(f'<p><a href="{html.escape(csv_name)}">data ({html.escape(csv_name)})</a></p>')
    lines.append("</body></html>")
    index_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
