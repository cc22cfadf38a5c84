"""CSV artifacts and dependency-free SVG plots.

CSVs are the source of truth; the SVGs are derived line/bar charts written
by hand so reports stay diffable and byte-stable under a fixed seed (no
timestamps, no library version strings).
"""

import numpy as np

PALETTE = ("#1f6fb2", "#d1495b", "#3a7d44", "#8a5a2b", "#6d5ba3", "#444444")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _fmt(x):
    return f"{x:.2f}"


class SvgCanvas:
    def __init__(self, width=720, height=400, margin=(55, 15, 30, 45)):
        self.w = width
        self.h = height
        self.ml, self.mr, self.mt, self.mb = margin
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, color="#999999", width=1):
        self.parts.append(f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
                          f'y2="{_fmt(y2)}" stroke="{color}" stroke-width="{width}"/>')

    def polyline(self, points, color, width=1.5):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}"/>')

    def rect(self, x, y, w, h, color):
        self.parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
                          f'height="{_fmt(h)}" fill="{color}"/>')

    def text(self, x, y, s, size=11, anchor="start", color="#222222"):
        self.parts.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                          f'font-family="sans-serif" text-anchor="{anchor}" '
                          f'fill="{color}">{s}</text>')

    def save(self, path):
        self.parts.append("</svg>")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.parts) + "\n")


def _axes(canvas, x_range, y_range, title, x_label, y_label):
    c = canvas
    x0, x1 = x_range
    y0, y1 = y_range
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    plot_w = c.w - c.ml - c.mr
    plot_h = c.h - c.mt - c.mb

    def px(x):
        return c.ml + (x - x0) / span_x * plot_w

    def py(y):
        return c.h - c.mb - (y - y0) / span_y * plot_h

    c.line(c.ml, c.h - c.mb, c.w - c.mr, c.h - c.mb, "#222222")
    c.line(c.ml, c.mt, c.ml, c.h - c.mb, "#222222")
    for i in range(5):
        xv = x0 + span_x * i / 4
        yv = y0 + span_y * i / 4
        c.text(px(xv), c.h - c.mb + 16, f"{xv:.4g}", size=10, anchor="middle")
        c.text(c.ml - 6, py(yv) + 4, f"{yv:.4g}", size=10, anchor="end")
        if i:
            c.line(c.ml, py(yv), c.w - c.mr, py(yv), "#dddddd")
    c.text(c.w / 2, c.mt - 2 + 12, title, size=13, anchor="middle")
    c.text(c.w / 2, c.h - 6, x_label, size=11, anchor="middle")
    c.text(14, c.mt - 4, y_label, size=11)
    return px, py


def plot_lines(path, series, title="", x_label="", y_label=""):
    """series: list of (name, xs, ys); one polyline per entry plus legend."""
    xs_all = np.concatenate([np.asarray(xs, dtype=float) for _, xs, _ in series])
    ys_all = np.concatenate([np.asarray(ys, dtype=float) for _, _, ys in series])
    c = SvgCanvas()
    px, py = _axes(c, (xs_all.min(), xs_all.max()), (ys_all.min(), ys_all.max()),
                   title, x_label, y_label)
    for i, (name, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        c.polyline([(px(x), py(y)) for x, y in zip(xs, ys)], color)
        c.text(c.w - c.mr - 150, c.mt + 16 + 14 * i, name, size=10, color=color)
    c.save(path)


def plot_bars(path, categories, groups, title="", y_label=""):
    """groups: list of (name, values aligned with categories)."""
    c = SvgCanvas()
    values = np.array([vals for _, vals in groups], dtype=float)
    top = float(values.max()) * 1.15 or 1.0
    px, py = _axes(c, (0, len(categories)), (0, top), title, "", y_label)
    n_groups = len(groups)
    slot = (c.w - c.ml - c.mr) / len(categories)
    bar_w = slot * 0.8 / n_groups
    for gi, (name, vals) in enumerate(groups):
        color = PALETTE[gi % len(PALETTE)]
        for ci, v in enumerate(vals):
            x = c.ml + ci * slot + slot * 0.1 + gi * bar_w
            y = py(v)
            c.rect(x, y, bar_w, c.h - c.mb - y, color)
            c.text(x + bar_w / 2, y - 3, f"{v:.3f}", size=8, anchor="middle")
        c.text(c.w - c.mr - 150, c.mt + 16 + 14 * gi, name, size=10, color=color)
    for ci, cat in enumerate(categories):
        c.text(c.ml + ci * slot + slot / 2, c.h - c.mb + 16, str(cat), size=10,
               anchor="middle")
    c.save(path)
