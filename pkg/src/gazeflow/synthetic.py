"""Synthetic stimuli and scripted scanpaths for desk-scale experiments.

Two corpus families:

* L-corpus: every viewer traces an L (across the top, then down the right
  edge); images carry bright blobs at the scripted fixations, so the path is
  predictable from pixels alone.
* Archetype corpus: images carry random blobs; the path depends on the
  viewer archetype (left-to-right sweep vs top-to-bottom sweep), so only
  viewer conditioning explains the variance.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .core import Dataset, DisplayConfig, Fixation, Scanpath, StimulusImage
from .reward import IorGeometry, SaliencyMap

DEFAULT_DISPLAY = DisplayConfig.from_visual_angle(width=1024, height=768)

CENTER = (0.5, 0.5)


def blob_image(
    stimulus_id: str,
    blobs: list[tuple[float, float]],
    width: int = 96,
    height: int = 96,
    sigma_frac: float = 0.06,
    seed: int = 0,
) -> StimulusImage:
    """Dark canvas with one bright Gaussian blob per normalized position."""
    rng = np.random.default_rng(seed)
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    gx, gy = np.meshgrid(xs, ys)
    field = np.zeros((height, width, 3), dtype=np.float64)
    for bx, by in blobs:
        color = 0.55 + 0.45 * rng.random(3)
        bump = np.exp(-((gx - bx) ** 2 + (gy - by) ** 2) / (2 * sigma_frac**2))
        field += bump[:, :, None] * color[None, None, :]
    field = np.clip(field / max(field.max(), 1e-9), 0.0, 1.0)
    pixels = (20 + 235 * field).astype(np.uint8)
    return StimulusImage(stimulus_id, pixels)


def _polyline_points(corners: list[tuple[float, float]], n: int) -> list[tuple[float, float]]:
    """n points at equal arc length along a polyline."""
    segs = [(np.array(a), np.array(b)) for a, b in zip(corners, corners[1:])]
    lengths = [float(np.linalg.norm(b - a)) for a, b in segs]
    total = sum(lengths)
    points = []
    for i in range(n):
        target = total * i / max(n - 1, 1)
        for k, ((a, b), seg_len) in enumerate(zip(segs, lengths)):
            if target <= seg_len or k == len(segs) - 1:
                frac = 0.0 if seg_len == 0 else min(target / seg_len, 1.0)
                points.append(tuple(a + frac * (b - a)))
                break
            target -= seg_len
    return points


def _jittered_path(
    stimulus_id: str,
    viewer_id: Optional[str],
    route: list[tuple[float, float]],
    length: int,
    rng: np.random.Generator,
    jitter: float,
) -> Scanpath:
    waypoints = _polyline_points(route, length - 1)
    fixes = [Fixation(*CENTER, 0.25)]
    for i, (x, y) in enumerate(waypoints):
        jx = float(np.clip(x + rng.normal(0, jitter), 0.02, 0.98))
        jy = float(np.clip(y + rng.normal(0, jitter), 0.02, 0.98))
        duration = 0.20 + 0.08 * math.sin(1.7 * i) + float(rng.normal(0, 0.01))
        fixes.append(Fixation(jx, jy, max(duration, 0.05)))
    return Scanpath(stimulus_id, tuple(fixes), viewer_id)


L_ROUTE = [(0.1, 0.15), (0.9, 0.15), (0.9, 0.9)]
LTR_ROUTE = [(0.1, 0.25), (0.9, 0.25)]
TTB_ROUTE = [(0.25, 0.1), (0.25, 0.9)]

ARCHETYPE_ROUTES = {"ltr": LTR_ROUTE, "ttb": TTB_ROUTE}


def make_l_corpus(
    n_train: int = 20,
    n_test: int = 5,
    path_length: int = 8,
    seed: int = 0,
    image_size: int = 96,
) -> tuple[Dataset, DisplayConfig]:
    """Stimuli whose blobs sit on the scripted L path of their single viewer."""
    rng = np.random.default_rng(seed)
    stimuli: dict[str, StimulusImage] = {}
    scanpaths: list[Scanpath] = []
    image_split: dict[str, str] = {}
    for i in range(n_train + n_test):
        sid = f"l{i:03d}"
        path = _jittered_path(sid, "v0", L_ROUTE, path_length, rng, jitter=0.015)
        blobs = [(f.x, f.y) for f in path.fixations[1:]]
        stimuli[sid] = blob_image(sid, blobs, width=image_size, height=image_size, seed=seed + i)
        scanpaths.append(path)
        image_split[sid] = "train" if i < n_train else "test"
    ds = Dataset(stimuli=stimuli, scanpaths=scanpaths, image_split=image_split, viewer_split={"v0": "train"})
    ds.validate()
    return ds, DEFAULT_DISPLAY


def make_archetype_corpus(
    n_train: int = 16,
    n_test: int = 20,
    viewers_per_archetype: int = 2,
    path_length: int = 8,
    seed: int = 0,
    image_size: int = 96,
) -> tuple[Dataset, DisplayConfig]:
    """Random-blob images viewed by left-to-right and top-to-bottom scanners.

    Train viewers (``ltr0``.. / ``ttb0``..) view the train images; held-out
    viewers ``ltr_new`` and ``ttb_new`` view everything, so their train-image
    paths can drive personalization and their test-image paths remain unseen.
    """
    rng = np.random.default_rng(seed)
    stimuli: dict[str, StimulusImage] = {}
    image_split: dict[str, str] = {}
    for i in range(n_train + n_test):
        sid = f"a{i:03d}"
        blobs = [(float(rng.uniform(0.15, 0.85)), float(rng.uniform(0.15, 0.85))) for _ in range(4)]
        stimuli[sid] = blob_image(sid, blobs, width=image_size, height=image_size, seed=seed + 1000 + i)
        image_split[sid] = "train" if i < n_train else "test"

    viewer_split: dict[str, str] = {}
    scanpaths: list[Scanpath] = []
    for kind in ("ltr", "ttb"):
        for v in range(viewers_per_archetype):
            vid = f"{kind}{v}"
            viewer_split[vid] = "train"
            for sid, label in image_split.items():
                if label == "train":
                    scanpaths.append(_jittered_path(sid, vid, ARCHETYPE_ROUTES[kind], path_length, rng, jitter=0.02))
        vid = f"{kind}_new"
        viewer_split[vid] = "test"
        for sid in stimuli:
            scanpaths.append(_jittered_path(sid, vid, ARCHETYPE_ROUTES[kind], path_length, rng, jitter=0.02))

    ds = Dataset(stimuli=stimuli, scanpaths=scanpaths, image_split=image_split, viewer_split=viewer_split)
    ds.validate()
    return ds, DEFAULT_DISPLAY


class StaticEnvProvider:
    """Fixed saliency + geometry for every stimulus (toy environments)."""

    def __init__(self, saliency: SaliencyMap, geom: IorGeometry):
        self.saliency = saliency
        self.geom = geom

    def env_for(self, stimulus_id: str) -> tuple[SaliencyMap, IorGeometry]:
        return self.saliency, self.geom
