"""Minimal standalone SVG line/scatter plots; no plotting dependency."""

from __future__ import annotations

import math
from html import escape

import numpy as np

PALETTE = ("#2ca02c", "#1f77b4", "#ff7f0e", "#d62728", "#9467bd", "#8c564b", "#17becf")


def _ticks(lo, hi, count=6):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [round(start + i * step, 12) for i in range(int((hi - start) / step + 1e-9) + 1)]


class Figure:
    """Single axes with data-space drawing primitives."""

    def __init__(self, xlim, ylim, width=520, height=360, title="", xlabel="", ylabel="",
                 reverse_x=False):
        self.xlim, self.ylim = xlim, ylim
        self.w, self.h = width, height
        self.margin = (60, 20, 36, 48)  # left, right, top, bottom
        self.reverse_x = reverse_x
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.items = []
        self.legend = []

    def _px(self, x, y):
        l, r, t, b = self.margin
        fx = (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0])
        if self.reverse_x:
            fx = 1.0 - fx
        fy = (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0])
        return l + fx * (self.w - l - r), self.h - b - fy * (self.h - t - b)

    def _points(self, xs, ys):
        pts = []
        for x, y in zip(xs, ys):
            if np.isfinite(x) and np.isfinite(y):
                px, py = self._px(x, y)
                pts.append(f"{px:.2f},{py:.2f}")
        return " ".join(pts)

    def line(self, xs, ys, color="#000", width=1.5, label=None, dash=None, opacity=1.0):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{self._points(xs, ys)}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}" stroke-opacity="{opacity}"{d}/>')
        if label:
            self.legend.append((label, color))

    def scatter(self, xs, ys, color="#000", r=2.0, label=None):
        for x, y in zip(xs, ys):
            if np.isfinite(x) and np.isfinite(y):
                px, py = self._px(x, y)
                self.items.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r}" fill="{color}"/>')
        if label:
            self.legend.append((label, color))

    def band(self, xs, lo, hi, color="#000", opacity=0.2):
        pts = self._points(list(xs) + list(xs)[::-1], list(lo) + list(hi)[::-1])
        self.items.append(f'<polygon points="{pts}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>')

    def rect(self, x0, y0, x1, y1, color="red", opacity=0.1):
        (ax, ay), (bx, by) = self._px(x0, y0), self._px(x1, y1)
        self.items.append(f'<rect x="{min(ax, bx):.2f}" y="{min(ay, by):.2f}" '
                          f'width="{abs(bx - ax):.2f}" height="{abs(by - ay):.2f}" '
                          f'fill="{color}" fill-opacity="{opacity}"/>')

    def ellipse(self, mean, cov, radius, color="#000", width=1.0):
        w, v = np.linalg.eigh(np.asarray(cov))
        th = np.linspace(0.0, 2.0 * np.pi, 64)
        circ = np.vstack([np.cos(th), np.sin(th)]) * radius
        pts = (v * np.sqrt(np.clip(w, 0, None))) @ circ + np.asarray(mean)[:, None]
        self.line(pts[0], pts[1], color=color, width=width, opacity=0.6)

    def notice(self, text):
        self.legend.append((text, None))

    def render(self):
        l, r, t, b = self.margin
        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
               f'viewBox="0 0 {self.w} {self.h}" font-family="sans-serif" font-size="11">',
               f'<rect width="{self.w}" height="{self.h}" fill="white"/>',
               f'<clipPath id="ax"><rect x="{l}" y="{t}" width="{self.w - l - r}" '
               f'height="{self.h - t - b}"/></clipPath>']
        for xt in _ticks(*self.xlim):
            px, _ = self._px(xt, self.ylim[0])
            out.append(f'<line x1="{px:.2f}" y1="{t}" x2="{px:.2f}" y2="{self.h - b}" stroke="#ddd"/>')
            out.append(f'<text x="{px:.2f}" y="{self.h - b + 14}" text-anchor="middle">{xt:g}</text>')
        for yt in _ticks(*self.ylim):
            _, py = self._px(self.xlim[0], yt)
            out.append(f'<line x1="{l}" y1="{py:.2f}" x2="{self.w - r}" y2="{py:.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{l - 6}" y="{py + 4:.2f}" text-anchor="end">{yt:g}</text>')
        out.append('<g clip-path="url(#ax)">')
        out.extend(self.items)
        out.append('</g>')
        out.append(f'<rect x="{l}" y="{t}" width="{self.w - l - r}" height="{self.h - t - b}" '
                   f'fill="none" stroke="#000"/>')
        out.append(f'<text x="{self.w / 2:.1f}" y="{t - 12}" text-anchor="middle" '
                   f'font-size="13">{escape(self.title)}</text>')
        out.append(f'<text x="{(l + self.w - r) / 2:.1f}" y="{self.h - 8}" '
                   f'text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text transform="translate(14,{(t + self.h - b) / 2:.1f}) rotate(-90)" '
                   f'text-anchor="middle">{escape(self.ylabel)}</text>')
        for i, (label, color) in enumerate(self.legend):
            y = t + 14 + 14 * i
            if color:
                out.append(f'<line x1="{self.w - r - 150}" y1="{y - 4}" x2="{self.w - r - 130}" '
                           f'y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{self.w - r - 125}" y="{y}">{escape(label)}</text>')
        out.append('</svg>')
        return "\n".join(out) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())
