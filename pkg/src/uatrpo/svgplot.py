"""Minimal deterministic SVG plotting.

Byte-identical output for identical input: no timestamps, no random ids,
fixed float formatting. Enough for the harness figures: multi-series line
plots with optional shaded bands, and grouped bar charts.
"""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640.0, 420.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72.0, 16.0, 40.0, 52.0
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(x: float) -> str:
    return "%.2f" % x


def _fmt_tick(x: float) -> str:
    return "%.4g" % x


def _axis_range(lo: float, hi: float) -> tuple[float, float]:
    if not np.isfinite(lo) or not np.isfinite(hi):
        return 0.0, 1.0
    if hi <= lo:
        pad = 1.0 if lo == 0 else abs(lo) * 0.1
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Canvas:
    def __init__(self, title, xlabel, ylabel, x_range, y_range, x_ticks=True):
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(WIDTH)}" '
            f'height="{int(HEIGHT)}" viewBox="0 0 {int(WIDTH)} {int(HEIGHT)}">\n',
            f'<!-- x-range {x_range[0]!r} {x_range[1]!r} -->\n',
            f'<!-- y-range {y_range[0]!r} {y_range[1]!r} -->\n',
            f'<rect width="{int(WIDTH)}" height="{int(HEIGHT)}" fill="white"/>\n',
        ]
        self.x_lo, self.x_hi = x_range
        self.y_lo, self.y_hi = y_range
        self._chrome(title, xlabel, ylabel, x_ticks)

    def x_px(self, x: float) -> float:
        span = self.x_hi - self.x_lo
        frac = (x - self.x_lo) / span if span else 0.5
        return MARGIN_L + frac * (WIDTH - MARGIN_L - MARGIN_R)

    def y_px(self, y: float) -> float:
        span = self.y_hi - self.y_lo
        frac = (y - self.y_lo) / span if span else 0.5
        return HEIGHT - MARGIN_B - frac * (HEIGHT - MARGIN_T - MARGIN_B)

    def _chrome(self, title, xlabel, ylabel, x_ticks):
        x0, x1 = MARGIN_L, WIDTH - MARGIN_R
        y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
        self.parts.append(
            f'<text x="{_fmt(WIDTH / 2)}" y="22" font-family="sans-serif" font-size="15" '
            f'text-anchor="middle">{title}</text>\n')
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            xv = self.x_lo + frac * (self.x_hi - self.x_lo)
            yv = self.y_lo + frac * (self.y_hi - self.y_lo)
            xp = self.x_px(xv)
            yp = self.y_px(yv)
            self.parts.append(
                f'<line x1="{_fmt(xp)}" y1="{_fmt(y0)}" x2="{_fmt(xp)}" y2="{_fmt(y1)}" '
                f'stroke="#dddddd" stroke-width="1"/>\n')
            self.parts.append(
                f'<line x1="{_fmt(x0)}" y1="{_fmt(yp)}" x2="{_fmt(x1)}" y2="{_fmt(yp)}" '
                f'stroke="#dddddd" stroke-width="1"/>\n')
            if x_ticks:
                self.parts.append(
                    f'<text x="{_fmt(xp)}" y="{_fmt(y0 + 18)}" font-family="sans-serif" '
                    f'font-size="11" text-anchor="middle">{_fmt_tick(xv)}</text>\n')
            self.parts.append(
                f'<text x="{_fmt(x0 - 6)}" y="{_fmt(yp + 4)}" font-family="sans-serif" '
                f'font-size="11" text-anchor="end">{_fmt_tick(yv)}</text>\n')
        self.parts.append(
            f'<rect x="{_fmt(x0)}" y="{_fmt(y1)}" width="{_fmt(x1 - x0)}" '
            f'height="{_fmt(y0 - y1)}" fill="none" stroke="black" stroke-width="1"/>\n')
        self.parts.append(
            f'<text x="{_fmt((x0 + x1) / 2)}" y="{_fmt(HEIGHT - 10)}" font-family="sans-serif" '
            f'font-size="13" text-anchor="middle">{xlabel}</text>\n')
        self.parts.append(
            f'<text x="16" y="{_fmt((y0 + y1) / 2)}" font-family="sans-serif" font-size="13" '
            f'text-anchor="middle" transform="rotate(-90 16 {_fmt((y0 + y1) / 2)})">'
            f'{ylabel}</text>\n')

    def legend(self, labels):
        x = MARGIN_L + 10
        y = MARGIN_T + 16
        for i, label in enumerate(labels):
            color = PALETTE[i % len(PALETTE)]
            self.parts.append(
                f'<line x1="{_fmt(x)}" y1="{_fmt(y - 4)}" x2="{_fmt(x + 22)}" '
                f'y2="{_fmt(y - 4)}" stroke="{color}" stroke-width="2"/>\n')
            self.parts.append(
                f'<text x="{_fmt(x + 28)}" y="{_fmt(y)}" font-family="sans-serif" '
                f'font-size="12">{label}</text>\n')
            y += 16

    def save(self, path):
        self.parts.append("</svg>\n")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("".join(self.parts))


def line_plot(path, series, title="", xlabel="", ylabel=""):
    """Write a multi-series line plot.

    ``series`` is a list of (label, xs, ys) or (label, xs, ys, band_lo,
    band_hi) tuples; bands render as translucent fills around the line.
    """
    if not series:
        raise ValueError("no series to plot")
    all_x = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = [np.asarray(s[2], dtype=float) for s in series]
    all_y = np.concatenate(
        ys + [np.asarray(s[k], dtype=float) for s in series for k in (3, 4) if len(s) > 4])
    x_range = _axis_range(float(np.min(all_x)), float(np.max(all_x)))
    y_range = _axis_range(float(np.min(all_y)), float(np.max(all_y)))
    canvas = _Canvas(title, xlabel, ylabel, x_range, y_range)
    for i, entry in enumerate(series):
        label, xs, ys = entry[0], np.asarray(entry[1], float), np.asarray(entry[2], float)
        color = PALETTE[i % len(PALETTE)]
        if len(entry) > 4:
            lo, hi = np.asarray(entry[3], float), np.asarray(entry[4], float)
            pts = [f"{_fmt(canvas.x_px(x))},{_fmt(canvas.y_px(y))}" for x, y in zip(xs, hi)]
            pts += [f"{_fmt(canvas.x_px(x))},{_fmt(canvas.y_px(y))}"
                    for x, y in zip(xs[::-1], lo[::-1])]
            canvas.parts.append(
                f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.2" '
                f'stroke="none"/>\n')
        pts = " ".join(f"{_fmt(canvas.x_px(x))},{_fmt(canvas.y_px(y))}"
                       for x, y in zip(xs, ys))
        canvas.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>\n')
    canvas.legend([s[0] for s in series])
    canvas.save(path)
    return path


def bar_plot(path, bin_labels, groups, title="", xlabel="", ylabel=""):
    """Grouped bar chart: one cluster per bin, one bar per group."""
    if not groups or not bin_labels:
        raise ValueError("nothing to plot")
    n_bins = len(bin_labels)
    n_groups = len(groups)
    top = max(max(values) for _, values in groups)
    y_range = _axis_range(0.0, float(top) if top > 0 else 1.0)
    canvas = _Canvas(title, xlabel, ylabel, (0.0, float(n_bins)), y_range, x_ticks=False)
    cluster_w = (WIDTH - MARGIN_L - MARGIN_R) / n_bins
    bar_w = 0.8 * cluster_w / n_groups
    y0 = canvas.y_px(0.0)
    for b in range(n_bins):
        for g, (_, values) in enumerate(groups):
            x = MARGIN_L + b * cluster_w + 0.1 * cluster_w + g * bar_w
            y = canvas.y_px(float(values[b]))
            canvas.parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(max(y0 - y, 0.0))}" fill="{PALETTE[g % len(PALETTE)]}"/>\n')
        canvas.parts.append(
            f'<text x="{_fmt(MARGIN_L + (b + 0.5) * cluster_w)}" y="{_fmt(y0 + 18)}" '
            f'font-family="sans-serif" font-size="11" text-anchor="middle">'
            f'{bin_labels[b]}</text>\n')
    canvas.legend([name for name, _ in groups])
    canvas.save(path)
    return path
