"""Minimal self-contained SVG line charts."""

from html import escape

import numpy as np

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_chart(series, title="", xlabel="", ylabel="", log_y=False, width=640, height=400):
    """SVG document for ``series = [(label, x, y), ...]``.

    With ``log_y`` the values are plotted as ``log10`` and nonpositive points
    are dropped.
    """
    pad_l, pad_r, pad_t, pad_b = 70, 20, 30, 50
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b
    prepared = []
    for label, x, y in series:
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(y) & np.isfinite(x)
        if log_y:
            keep &= y > 0
            y = np.where(keep, np.log10(np.where(keep, y, 1.0)), 0.0)
        prepared.append((label, x[keep], y[keep]))
    xs = np.concatenate([p[1] for p in prepared]) if prepared else np.zeros(0)
    ys = np.concatenate([p[2] for p in prepared]) if prepared else np.zeros(0)
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return pad_l + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return pad_t + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1):
        out.append(f'<text x="{sx(v):.1f}" y="{pad_t + ph + 18}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        text = f"1e{v:.1f}" if log_y else f"{v:.3g}"
        out.append(f'<text x="{pad_l - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{text}</text>')
        out.append(f'<line x1="{pad_l}" x2="{pad_l + pw}" y1="{sy(v):.1f}" y2="{sy(v):.1f}" stroke="#ddd"/>')
    for k, (label, x, y) in enumerate(prepared):
        colour = _COLOURS[k % len(_COLOURS)]
        if x.size:
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{pts}"/>')
        out.append(f'<text x="{pad_l + 8}" y="{pad_t + 16 + 14 * k}" fill="{colour}">{escape(label)}</text>')
    out.append(f'<text x="{width / 2:.0f}" y="18" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{pad_l + pw / 2:.0f}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{pad_t + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {pad_t + ph / 2:.0f})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, series, **kwargs):
    with open(path, "w") as fh:
        fh.write(line_chart(series, **kwargs))
