"""Reward environment: saliency grids, inhibition-of-return geometry, and
episode reward assembly.

The environment is stateless between episodes: saliency maps are immutable
and masking returns a new map, so batch episodes evaluate in parallel safely.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DisplayConfig, Scanpath, StimulusImage
from .metrics import dtwd

SALIENCY_MAGIC = b"SALG"


@dataclass(frozen=True)
class SaliencyMap:
    """Non-negative grid over the model input resolution, max value 1."""

    values: np.ndarray  # (input_h, input_w) float64

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"saliency grid must be 2-D, got shape {v.shape}")
        if np.any(v < 0):
            raise ValueError("saliency values must be non-negative")

    @property
    def input_w(self) -> int:
        return int(self.values.shape[1])

    @property
    def input_h(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class IorGeometry:
    """Inhibition ellipse derived from display, image, and input resolutions.

    ``image_diameter`` is the inhibition diameter transferred from display
    pixels to original-image pixels; ``radius_x``/``radius_y`` are the ellipse
    semi-axes after resizing the image to the model input resolution.
    """

    image_diameter: float
    radius_x: float
    radius_y: float
    input_w: int
    input_h: int

    def __post_init__(self) -> None:
        for name in ("image_diameter", "radius_x", "radius_y"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def ior_geometry(display: DisplayConfig, image: StimulusImage, input_w: int, input_h: int) -> IorGeometry:
    """Transfer the display inhibition diameter onto the input grid.

    The image is assumed fitted to the display (scale = min of the per-axis
    display/image ratios), then stretched to the square input resolution,
    which turns inhibition circles into ellipses.
    """
    if input_w <= 0 or input_h <= 0:
        raise ValueError("input resolution must be positive")
    scale = min(display.width / image.width, display.height / image.height)
    image_diameter = display.inhibition_diameter_px / scale
    return IorGeometry(
        image_diameter=image_diameter,
        radius_x=(input_w / image.width) * image_diameter,
        radius_y=(input_h / image.height) * image_diameter,
        input_w=input_w,
        input_h=input_h,
    )


def _grid_centers(n: int) -> np.ndarray:
    # cell i spans [i, i+1) in input units; its sample point is the center
    return np.arange(n, dtype=np.float64) + 0.5


def build_empirical_saliency(
    fixations: Sequence[tuple[float, float]] | np.ndarray,
    input_w: int,
    input_h: int,
    sigma: float,
) -> SaliencyMap:
    """Sum an isotropic Gaussian splat per fixation, normalized to max 1.

    ``fixations`` are normalized (x, y) pairs; ``sigma`` is the blur radius in
    input-resolution pixels.
    """
    pts = np.asarray(fixations, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("need at least one fixation to build a saliency map")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    xs = _grid_centers(input_w)[None, :]  # (1, w)
    ys = _grid_centers(input_h)[:, None]  # (h, 1)
    field = np.zeros((input_h, input_w), dtype=np.float64)
    inv = 1.0 / (2.0 * sigma * sigma)
    # chunked so n up to ~1e5 fixations stays within memory
    for start in range(0, len(pts), 512):
        chunk = pts[start : start + 512]
        px = chunk[:, 0] * input_w
        py = chunk[:, 1] * input_h
        dx2 = (xs - px[:, None]) ** 2  # (chunk, w)
        dy2 = (ys.T - py[:, None]) ** 2  # (chunk, h)
        field += np.einsum("kh,kw->hw", np.exp(-dy2 * inv), np.exp(-dx2 * inv))
    peak = field.max()
    if peak > 0:
        field = field / peak
    return SaliencyMap(values=field)


def apply_ior(saliency: SaliencyMap, prior_fixations: Iterable[tuple[float, float]], geom: IorGeometry) -> SaliencyMap:
    """Zero every grid cell inside any prior fixation's inhibition ellipse.

    The boundary (equality) is inhibited. Returns a new map.
    """
    priors = list(prior_fixations)
    if not priors:
        return saliency
    xs = _grid_centers(geom.input_w)[None, :]
    ys = _grid_centers(geom.input_h)[:, None]
    mask = np.zeros((geom.input_h, geom.input_w), dtype=bool)
    rx2 = geom.radius_x * geom.radius_x
    ry2 = geom.radius_y * geom.radius_y
    for fx, fy in priors:
        cx = fx * geom.input_w
        cy = fy * geom.input_h
        mask |= ((xs - cx) ** 2 / rx2 + (ys - cy) ** 2 / ry2) <= 1.0
    values = saliency.values.copy()
    values[mask] = 0.0
    return SaliencyMap(values=values)


def salient_value(saliency: SaliencyMap, x: float, y: float) -> float:
    """Bilinear sample of the grid at a normalized point; 0 outside [0,1]^2."""
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        return 0.0
    v = saliency.values
    h, w = v.shape
    # continuous position in cell-center coordinates, edge-clamped
    gx = min(max(x * w - 0.5, 0.0), w - 1.0)
    gy = min(max(y * h - 0.5, 0.0), h - 1.0)
    x0, y0 = int(gx), int(gy)
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = gx - x0, gy - y0
    top = v[y0, x0] * (1 - fx) + v[y0, x1] * fx
    bot = v[y1, x0] * (1 - fx) + v[y1, x1] * fx
    return float(top * (1 - fy) + bot * fy)


@dataclass(frozen=True)
class RewardFlags:
    """Ablation toggles for the episode reward."""

    use_salient: bool = True
    use_dtwd: bool = True
    use_ior: bool = True
    salient_weight: float = 1.0
    dtwd_weight: float = 1.0


@dataclass(frozen=True)
class RewardBreakdown:
    dtwd_cost: float
    salient_values: tuple[float, ...]

    @property
    def total(self) -> float:
        return -self.dtwd_cost + sum(self.salient_values)


def episode_reward(
    predicted: Scanpath,
    ground_truth: Scanpath,
    saliency: SaliencyMap,
    geom: IorGeometry,
    flags: RewardFlags = RewardFlags(),
) -> RewardBreakdown:
    """Score one predicted scanpath.

    The salient value at step i is read from the map masked by the agent's
    own fixations 1..i-1 (cumulative inhibition); the trajectory term is the
    duration-aware alignment cost against the ground truth.
    """
    dtwd_cost = 0.0
    if flags.use_dtwd:
        dtwd_cost = flags.dtwd_weight * dtwd(predicted, ground_truth)

    salient_values: list[float] = []
    if flags.use_salient:
        current = saliency
        for fx in predicted.fixations:
            salient_values.append(flags.salient_weight * salient_value(current, fx.x, fx.y))
            if flags.use_ior:
                current = apply_ior(current, [(fx.x, fx.y)], geom)
    else:
        salient_values = [0.0] * len(predicted)

    return RewardBreakdown(dtwd_cost=dtwd_cost, salient_values=tuple(salient_values))


# ---------------------------------------------------------------------------
# Saliency grid file: magic "SALG", u32 width, u32 height (little-endian),
# then row-major float32 little-endian values.
# ---------------------------------------------------------------------------


def write_saliency_grid(path: Path | str, saliency: SaliencyMap) -> None:
    with open(path, "wb") as fh:
        fh.write(SALIENCY_MAGIC)
        fh.write(struct.pack("<II", saliency.input_w, saliency.input_h))
        fh.write(saliency.values.astype("<f4").tobytes(order="C"))


def read_saliency_grid(path: Path | str) -> SaliencyMap:
    raw = Path(path).read_bytes()
    if raw[:4] != SALIENCY_MAGIC:
        raise ValueError(f"not a saliency grid file (magic {raw[:4]!r})")
    width, height = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * width * height
    if len(raw) != expected:
        raise ValueError(f"saliency grid truncated: {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw[12:], dtype="<f4").reshape(height, width).astype(np.float64)
    return SaliencyMap(values=values)
