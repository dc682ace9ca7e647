"""Standalone SVG rendering of two-group Kaplan-Meier curves."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .metrics import KMCurve

WIDTH, HEIGHT = 640, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 120
COLORS = {"high": "#c0392b", "low": "#2471a3"}


def _step_points(times: np.ndarray, values: np.ndarray, t_end: float) -> list[tuple[float, float]]:
    pts = [(0.0, 1.0)]
    prev = 1.0
    for t, v in zip(times, values):
        pts.append((float(t), prev))
        pts.append((float(t), float(v)))
        prev = float(v)
    pts.append((t_end, prev))
    return pts


def _fmt_p(p: float | None) -> str:
    if p is None or not np.isfinite(p):
        return "log-rank p = n/a"
    if p < 1e-4:
        return f"log-rank p = {p:.2e}"
    return f"log-rank p = {p:.4f}"


def render_km_svg(curves: dict[str, KMCurve], p_value: float | None, title: str = "") -> str:
    """SVG text with one step curve, shaded band and at-risk row per group."""
    if not curves or any(c.times.size == 0 for c in curves.values()):
        raise ValueError("render_km_svg: curves must be non-empty")
    t_end = max(float(c.times.max()) for c in curves.values())
    t_end = t_end if t_end > 0 else 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(t):
        return LEFT + pw * t / t_end

    def sy(s):
        return TOP + ph * (1.0 - s)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" '
                   f'font-size="14">{escape(title)}</text>')

    # axes and ticks
    out.append(f'<g class="axes" stroke="black" fill="none">'
               f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}"/>'
               f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}"/></g>')
    ticks = np.linspace(0.0, t_end, 6)
    for s in np.linspace(0.0, 1.0, 6):
        out.append(f'<text x="{LEFT - 8}" y="{sy(s) + 4:.1f}" text-anchor="end">{s:.1f}</text>')
    for t in ticks:
        out.append(f'<text x="{sx(t):.1f}" y="{TOP + ph + 16}" text-anchor="middle">{t:.0f}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{TOP + ph + 32}" text-anchor="middle">'
               f'Time (months)</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.1f})">Survival probability</text>')

    for name, curve in curves.items():
        color = COLORS.get(name, "#555555")
        upper = _step_points(curve.times, curve.ci_high, t_end)
        lower = _step_points(curve.times, curve.ci_low, t_end)
        ring = upper + lower[::-1]
        d = " ".join(f"{sx(t):.2f},{sy(s):.2f}" for t, s in ring)
        out.append(f'<polygon class="band" points="{d}" fill="{color}" '
                   f'fill-opacity="0.18" stroke="none"/>')
    for name, curve in curves.items():
        color = COLORS.get(name, "#555555")
        pts = _step_points(curve.times, curve.survival, t_end)
        d = " ".join(f"{sx(t):.2f},{sy(s):.2f}" for t, s in pts)
        out.append(f'<polyline class="km-{escape(name)}" points="{d}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')

    # legend, p-value, at-risk table
    for i, name in enumerate(curves):
        color = COLORS.get(name, "#555555")
        y = TOP + 14 + 18 * i
        out.append(f'<line x1="{LEFT + pw - 130}" y1="{y}" x2="{LEFT + pw - 110}" y2="{y}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw - 104}" y="{y + 4}">{escape(name)}-risk</text>')
    out.append(f'<text class="p-value" x="{LEFT + 10}" y="{TOP + ph - 10}">'
               f'{escape(_fmt_p(p_value))}</text>')
    base = TOP + ph + 58
    out.append(f'<text x="{LEFT - 60}" y="{base - 4}" font-weight="bold">Number at risk</text>')
    for i, (name, curve) in enumerate(curves.items()):
        y = base + 16 * (i + 1)
        out.append(f'<text x="{LEFT - 60}" y="{y}" fill="{COLORS.get(name, "#555555")}">'
                   f'{escape(name)}</text>')
        for t in ticks:
            later = curve.n_at_risk[curve.times >= t]
            n = int(later[0]) if later.size else 0
            out.append(f'<text class="at-risk" x="{sx(t):.1f}" y="{y}" '
                       f'text-anchor="middle">{n}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_km_svg(curves: dict[str, KMCurve], p_value: float | None, out_path: str | Path,
                title: str = "") -> Path:
    out_path = Path(out_path)
    out_path.write_text(render_km_svg(curves, p_value, title), encoding="utf-8")
    return out_path
