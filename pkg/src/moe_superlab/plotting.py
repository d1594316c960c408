"""Dependency-free SVG charts.

Output is deterministic: fixed number formatting, stable element order and
ids, so identical input gives byte-identical files.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PLOT_KINDS = ("heatmap", "bars", "lines", "grid-partition")

MONO_RGB = (106, 61, 196)   # blue-purple
SUPER_RGB = (214, 39, 40)   # red
WHITE = (255, 255, 255)
CLASS_COLORS = {"monosemantic": "#7b3fbf", "superposed": "#2ca02c", "ignored": "#c7c7c7"}
SERIES_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
EXPERT_COLORS = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#ff9da7",
                 "#9c755f", "#bab0ac")


@dataclass(frozen=True)
class PlotSpec:
    kind: str = "lines"
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    x_ticks: tuple = ()
    y_ticks: tuple = ()
    norm_threshold: float = 0.1
    log_x: bool = False
    log_y: bool = False
    width: int = 480
    height: int = 360
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}; expected one of {PLOT_KINDS}")


def _f(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def _hex(rgb) -> str:
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c)) for c in rgb))


def phase_color(norm: float, interference: float, norm_threshold: float = 0.1) -> str:
    """White below the norm threshold, else blue-purple to red by clamped interference."""
    if not (math.isfinite(norm) and math.isfinite(interference)):
        return "#000000"
    if norm < norm_threshold:
        return _hex(WHITE)
    t = min(max(interference, 0.0), 1.0)
    return _hex(tuple(a + (b - a) * t for a, b in zip(MONO_RGB, SUPER_RGB)))


def diverging_color(value: float, limit: float = 1.0) -> str:
    """Blue (negative) through white to red (positive)."""
    if not math.isfinite(value):
        return "#000000"
    t = min(max(value / limit, -1.0), 1.0)
    target = SUPER_RGB if t > 0 else (33, 102, 172)
    return _hex(tuple(255 + (c - 255) * abs(t) for c in target))


class _Svg:
    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.parts: list[str] = []

    def add(self, s: str) -> None:
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="middle", rotate=None) -> None:
        tr = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}"{tr}>{escape(str(s))}</text>')

    def rect(self, x, y, w, h, fill, id_=None, stroke=None) -> None:
        i = f' id="{id_}"' if id_ else ""
        st = f' stroke="{stroke}" stroke-width="0.5"' if stroke else ""
        self.add(f'<rect{i} x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"{st}/>')

    def line(self, x1, y1, x2, y2, stroke="#000000") -> None:
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" stroke="{stroke}" stroke-width="1"/>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        return "\n".join([head, f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>',
                          *self.parts, "</svg>", ""])


def _write(svg: _Svg, path) -> Path:
    path = Path(path)
    path.write_text(svg.render(), encoding="utf-8")
    return path


def _frame(svg: _Svg, spec: PlotSpec, left: float, top: float, right: float, bottom: float) -> None:
    if spec.title:
        svg.text(svg.width / 2, 18, spec.title, size=13)
    if spec.x_label:
        svg.text((left + right) / 2, svg.height - 8, spec.x_label)
    if spec.y_label:
        svg.text(14, (top + bottom) / 2, spec.y_label, rotate=-90)


def render_heatmap(norm, interference, spec: PlotSpec, path) -> Path:
    """Phase-style heatmap; row 0 of the arrays is drawn at the bottom."""
    norm = np.asarray(norm, dtype=np.float64)
    interference = np.asarray(interference, dtype=np.float64)
    if norm.ndim != 2 or norm.shape != interference.shape:
        raise ValueError(f"heatmap needs matching 2-d grids, got {norm.shape} and {interference.shape}")
    rows, cols = norm.shape
    svg = _Svg(spec.width, spec.height)
    left, top, right, bottom = 60.0, 30.0, spec.width - 80.0, spec.height - 45.0
    cw, ch = (right - left) / cols, (bottom - top) / rows
    _frame(svg, spec, left, top, right, bottom)
    for i in range(rows):
        for j in range(cols):
            y = bottom - (i + 1) * ch
            svg.rect(left + j * cw, y, cw, ch, phase_color(norm[i, j], interference[i, j], spec.norm_threshold),
                     id_=f"cell-{i}-{j}", stroke="#dddddd")
    for j, t in enumerate(spec.x_ticks):
        svg.text(left + (j + 0.5) * cw, bottom + 14, t, size=9)
    for i, t in enumerate(spec.y_ticks):
        svg.text(left - 4, bottom - (i + 0.5) * ch + 3, t, size=9, anchor="end")
    # legend: white swatch, then the blend
    lx = right + 20
    svg.rect(lx, top, 14, 14, _hex(WHITE), id_="legend-ignored", stroke="#888888")
    svg.text(lx + 18, top + 11, "ignored", size=8, anchor="start")
    steps = 10
    for s in range(steps + 1):
        t = s / steps
        svg.rect(lx, top + 30 + (steps - s) * 8, 14, 8, phase_color(1.0, t), id_=f"legend-{s}")
    svg.text(lx + 18, top + 38, "1", size=8, anchor="start")
    svg.text(lx + 18, top + 30 + steps * 8 + 6, "0", size=8, anchor="start")
    return _write(svg, path)


def render_matrix(values, spec: PlotSpec, path, limit: float = 1.0) -> Path:
    """Diverging heatmap of a square matrix such as ``Ŵ_i . W_j`` (row 0 at the top)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"matrix heatmap needs a 2-d array, got {values.shape}")
    rows, cols = values.shape
    svg = _Svg(spec.width, spec.height)
    left, top, right, bottom = 40.0, 30.0, spec.width - 20.0, spec.height - 30.0
    cw, ch = (right - left) / cols, (bottom - top) / rows
    _frame(svg, spec, left, top, right, bottom)
    for i in range(rows):
        for j in range(cols):
            svg.rect(left + j * cw, top + i * ch, cw, ch, diverging_color(values[i, j], limit), id_=f"cell-{i}-{j}")
    return _write(svg, path)


def render_bars(values, spec: PlotSpec, path, classes=None, labels=None) -> Path:
    """Bar chart; ``classes`` (monosemantic / superposed / ignored) pick bar colours."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("bar chart needs at least one value")
    finite = values[np.isfinite(values)]
    if finite.size < values.size:
        warnings.warn("non-finite bar values are drawn as gaps", RuntimeWarning, stacklevel=2)
    svg = _Svg(spec.width, spec.height)
    left, top, right, bottom = 50.0, 30.0, spec.width - 15.0, spec.height - 40.0
    _frame(svg, spec, left, top, right, bottom)
    vmax = max(float(finite.max()) if finite.size else 1.0, 1e-12)
    bw = (right - left) / values.size
    svg.line(left, bottom, right, bottom)
    svg.line(left, top, left, bottom)
    for t in (0.0, vmax / 2, vmax):
        y = bottom - (bottom - top) * t / vmax
        svg.text(left - 4, y + 3, f"{t:.2f}", size=9, anchor="end")
    for i, v in enumerate(values):
        label = labels[i] if labels is not None else str(i)
        svg.text(left + (i + 0.5) * bw, bottom + 12, label, size=8)
        if not math.isfinite(v):
            continue
        h = (bottom - top) * max(v, 0.0) / vmax
        color = CLASS_COLORS.get(str(classes[i]), SERIES_COLORS[0]) if classes is not None else SERIES_COLORS[0]
        svg.rect(left + i * bw + 0.1 * bw, bottom - h, 0.8 * bw, h, color, id_=f"bar-{i}")
    return _write(svg, path)


def _axis_map(lo: float, hi: float, a: float, b: float, log: bool):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
    if hi == lo:
        hi = lo + 1.0

    def f(v: float) -> float:
        v = math.log10(v) if log else v
        return a + (b - a) * (v - lo) / (hi - lo)
    return f


def render_lines(series: dict, spec: PlotSpec, path, reference: float | None = None) -> Path:
    """Line plot of ``{label: [(x, y), ...]}``; non-finite points break the line."""
    if not series or not any(len(p) for p in series.values()):
        raise ValueError("line plot needs at least one nonempty series")
    pts = [(x, y) for p in series.values() for x, y in p]
    usable = [(x, y) for x, y in pts if math.isfinite(x) and math.isfinite(y)
              and (not spec.log_x or x > 0) and (not spec.log_y or y > 0)]
    if len(usable) < len(pts):
        warnings.warn("non-finite or non-positive (log axis) points are drawn as gaps", RuntimeWarning,
                      stacklevel=2)
    if not usable:
        raise ValueError("line plot has no finite points")
    xs, ys = [p[0] for p in usable], [p[1] for p in usable]
    if reference is not None:
        ys.append(reference)
    svg = _Svg(spec.width, spec.height)
    left, top, right, bottom = 60.0, 30.0, spec.width - 130.0, spec.height - 45.0
    _frame(svg, spec, left, top, right, bottom)
    fx = _axis_map(min(xs), max(xs), left, right, spec.log_x)
    fy = _axis_map(min(ys), max(ys), bottom, top, spec.log_y)
    svg.line(left, bottom, right, bottom)
    svg.line(left, top, left, bottom)
    for v in sorted(set(xs)):
        svg.text(fx(v), bottom + 14, f"{v:.3g}", size=9)
    for v in (min(ys), max(ys)):
        svg.text(left - 4, fy(v) + 3, f"{v:.3g}", size=9, anchor="end")
    if reference is not None:
        y = fy(reference)
        svg.add(f'<line id="reference" x1="{_f(left)}" y1="{_f(y)}" x2="{_f(right)}" y2="{_f(y)}" '
                f'stroke="#555555" stroke-dasharray="4 3"/>')
    for s_i, (label, points) in enumerate(series.items()):
        color = SERIES_COLORS[s_i % len(SERIES_COLORS)]
        segments: list[list[str]] = [[]]
        for x, y in points:
            ok = math.isfinite(x) and math.isfinite(y) and (not spec.log_x or x > 0) and (not spec.log_y or y > 0)
            if ok:
                segments[-1].append(f"{_f(fx(x))},{_f(fy(y))}")
            elif segments[-1]:
                segments.append([])
        for g_i, seg in enumerate(s for s in segments if s):
            svg.add(f'<polyline id="series-{s_i}-{g_i}" fill="none" stroke="{color}" stroke-width="1.5" '
                    f'points="{" ".join(seg)}"/>')
        ly = top + 12 + 14 * s_i
        svg.line(right + 10, ly - 3, right + 24, ly - 3, stroke=color)
        svg.text(right + 28, ly, label, size=9, anchor="start")
    return _write(svg, path)


def render_partition(grid, spec: PlotSpec, path) -> Path:
    """Categorical map of expert indices; ``grid[0]`` is the bottom row (x1 = 0)."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"partition needs a 2-d grid, got {grid.shape}")
    rows, cols = grid.shape
    svg = _Svg(spec.width, spec.height)
    left, top, right, bottom = 50.0, 30.0, spec.width - 90.0, spec.height - 40.0
    cw, ch = (right - left) / cols, (bottom - top) / rows
    _frame(svg, spec, left, top, right, bottom)
    for i in range(rows):
        # merge horizontal runs of equal experts to keep the file small
        j = 0
        while j < cols:
            e = int(grid[i, j])
            j2 = j
            while j2 + 1 < cols and int(grid[i, j2 + 1]) == e:
                j2 += 1
            svg.rect(left + j * cw, bottom - (i + 1) * ch, (j2 - j + 1) * cw, ch,
                     EXPERT_COLORS[e % len(EXPERT_COLORS)], id_=f"run-{i}-{j}")
            j = j2 + 1
    for e in sorted({int(v) for v in np.unique(grid)}):
        ly = top + 14 * e
        svg.rect(right + 10, ly, 10, 10, EXPERT_COLORS[e % len(EXPERT_COLORS)], id_=f"legend-{e}")
        svg.text(right + 24, ly + 9, f"expert {e}", size=9, anchor="start")
    svg.text(left, bottom + 14, "0", size=9)
    svg.text(right, bottom + 14, "1", size=9)
    svg.text(left - 4, top + 4, "1", size=9, anchor="end")
    return _write(svg, path)
