"""Rendering: candidate layouts to stimulus images, and scanpath overlays to
SVG (green-to-blue gradient polyline, fixation circles with radius
proportional to duration). SVG output uses fixed-precision coordinates so
artifacts are byte-stable and diffable.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .core import Scanpath, StimulusImage
from .layout import LayoutSpec, OrderRequirement

CANVAS_GRAY = 180
GRADIENT_START = (46, 204, 64)  # green
GRADIENT_END = (31, 97, 214)  # blue
RADIUS_PER_SECOND = 40.0  # px of circle radius per second of dwell
RADIUS_MIN = 2.0


def stable_color(element_id: str) -> tuple[int, int, int]:
    """Deterministic, visually distinct placeholder color for an element."""
    digest = hashlib.sha256(element_id.encode("utf-8")).digest()
    return (60 + digest[0] % 160, 60 + digest[1] % 160, 60 + digest[2] % 160)


def render_layout(spec: LayoutSpec) -> StimulusImage:
    """Composite element crops (or colored placeholder blocks) on a neutral
    canvas at the candidate positions."""
    canvas = np.full((spec.canvas_h, spec.canvas_w, 3), CANVAS_GRAY, dtype=np.uint8)
    for e in spec.elements:
        x, y, w, h = e.rect
        x0, y0 = int(round(x * spec.canvas_w)), int(round(y * spec.canvas_h))
        x1, y1 = int(round((x + w) * spec.canvas_w)), int(round((y + h) * spec.canvas_h))
        x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
        if e.image is not None:
            crop = Image.fromarray(e.image).resize((x1 - x0, y1 - y0), Image.BILINEAR)
            canvas[y0:y1, x0:x1] = np.asarray(crop, dtype=np.uint8)
        else:
            canvas[y0:y1, x0:x1] = e.color or stable_color(e.id)
    return StimulusImage("layout", canvas)


def _lerp_color(frac: float) -> str:
    rgb = [round(a + (b - a) * frac) for a, b in zip(GRADIENT_START, GRADIENT_END)]
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def scanpath_svg(
    scanpath: Scanpath,
    width: int,
    height: int,
    background_href: Optional[str] = None,
    radius_per_second: float = RADIUS_PER_SECOND,
) -> str:
    """Standalone SVG overlay of one scanpath.

    Temporal progression runs green to blue; circle radii grow linearly with
    fixation duration.
    """
    n = len(scanpath.fixations)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    ]
    if background_href:
        parts.append(f'<image href="{background_href}" width="{width}" height="{height}"/>')
    points = [(f.x * width, f.y * height) for f in scanpath.fixations]
    for i in range(n - 1):
        frac = i / max(n - 2, 1)
        (x0, y0), (x1, y1) = points[i], points[i + 1]
        parts.append(
            f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" '
            f'stroke="{_lerp_color(frac)}" stroke-width="2"/>'
        )
    for i, ((x, y), f) in enumerate(zip(points, scanpath.fixations)):
        frac = i / max(n - 1, 1)
        radius = max(RADIUS_MIN, radius_per_second * f.t)
        parts.append(
            f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(radius)}" '
            f'fill="{_lerp_color(frac)}" fill-opacity="0.55" stroke="{_lerp_color(frac)}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def layout_svg(
    spec: LayoutSpec,
    scanpath: Optional[Scanpath] = None,
    req: Optional[OrderRequirement] = None,
    objective: Optional[float] = None,
) -> str:
    """Layout rectangles with the predicted scanpath drawn on top."""
    w, h = spec.canvas_w, spec.canvas_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="rgb({CANVAS_GRAY},{CANVAS_GRAY},{CANVAS_GRAY})"/>',
    ]
    prioritized = set(req.element_ids) if req else set()
    for e in spec.elements:
        x, y, ew, eh = e.rect
        color = e.color or stable_color(e.id)
        stroke = "#d4a017" if e.id in prioritized else "#555555"
        parts.append(
            f'<rect x="{_fmt(x * w)}" y="{_fmt(y * h)}" width="{_fmt(ew * w)}" height="{_fmt(eh * h)}" '
            f'fill="rgb({color[0]},{color[1]},{color[2]})" stroke="{stroke}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{_fmt((x + ew / 2) * w)}" y="{_fmt((y + eh / 2) * h)}" font-size="12" '
            f'text-anchor="middle" fill="#111111">{e.id}</text>'
        )
    if scanpath is not None:
        inner = scanpath_svg(scanpath, w, h)
        body = inner.split("\n")[1:-1]  # strip the outer svg element
        parts.extend(body)
    if objective is not None:
        parts.append(
            f'<text x="6" y="{h - 8}" font-size="12" fill="#111111">duration {objective:.3f} s</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def write_svg(path: Path | str, svg: str) -> None:
    Path(path).write_text(svg, encoding="utf-8")
