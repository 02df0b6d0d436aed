"""Static SVG rendering of caption documents as temporal lanes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional
from xml.sax.saxutils import escape

from .supervision import CaptionDocument

TAG_COLORS = {
    "music": "#1f77b4",
    "sfx": "#d62728",
    "speech": "#2ca02c",
    "background": "#9467bd",
}


@dataclass(frozen=True)
class Layout:
    width: int = 900
    margin_left: int = 20
    margin_right: int = 20
    margin_top: int = 20
    lane_height: int = 34
    bar_height: int = 14
    axis_height: int = 30

    @property
    def plot_width(self) -> int:
        return self.width - self.margin_left - self.margin_right


def _tick_step(duration_s: float) -> float:
    for step in (0.5, 1, 2, 5, 10, 20, 30, 60, 120, 300, 600):
        if duration_s / step <= 12:
            return float(step)
    return 10.0 ** math.ceil(math.log10(duration_s / 10))


def render_timeline(
    doc: CaptionDocument, duration_s: Optional[float] = None, layout: Layout = Layout()
) -> str:
    """One lane per event: a label line above rectangles spanning each segment."""
    end = max((s.end_s for e in doc.events for s in e.segments), default=0.0)
    duration = duration_s or doc.duration_s or end or 10.0
    duration = max(duration, end)
    scale = layout.plot_width / duration

    def x(t: float) -> float:
        return layout.margin_left + t * scale

    n = len(doc.events)
    axis_y = layout.margin_top + n * layout.lane_height
    height = axis_y + layout.axis_height
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{layout.width}" height="{height}" '
        f'viewBox="0 0 {layout.width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{layout.width}" height="{height}" fill="white"/>',
    ]
    for i, event in enumerate(doc.events):
        top = layout.margin_top + i * layout.lane_height
        color = TAG_COLORS.get(event.type_tag, "#7f7f7f")
        out.append(f'<g class="lane" data-index="{i}" data-tag="{escape(event.type_tag)}">')
        out.append(
            f'<text x="{layout.margin_left}" y="{top + 11}">'
            f"[{escape(event.type_tag)}] {escape(event.description)}</text>"
        )
        for seg in event.segments:
            out.append(
                f'<rect x="{x(seg.start_s):.3f}" y="{top + 15}" width="{(seg.end_s - seg.start_s) * scale:.3f}" '
                f'height="{layout.bar_height}" fill="{color}" data-start="{seg.start_s:g}" data-end="{seg.end_s:g}"/>'
            )
        out.append("</g>")

    out.append('<g class="axis">')
    out.append(f'<line x1="{x(0):.3f}" y1="{axis_y}" x2="{x(duration):.3f}" y2="{axis_y}" stroke="black"/>')
    step = _tick_step(duration)
    for k in range(int(math.floor(duration / step + 1e-9)) + 1):
        t = k * step
        out.append(f'<line x1="{x(t):.3f}" y1="{axis_y}" x2="{x(t):.3f}" y2="{axis_y + 5}" stroke="black"/>')
        out.append(f'<text x="{x(t):.3f}" y="{axis_y + 17}" text-anchor="middle">{t:g}s</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
