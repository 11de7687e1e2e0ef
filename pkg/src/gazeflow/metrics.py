"""Scanpath similarity and quality metrics.

Distance metrics (dtw, dtwd, tde, eyenalysis) operate on normalized
coordinates and return non-negative costs, zero on identical inputs.
MultiMatch components are similarities in [0, 1]. All functions are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import Dataset, Scanpath

DEFAULT_TDE_LENGTH = 3
DEFAULT_LAMINARITY_RADIUS = 0.05

METRIC_COLUMNS = (
    "dtw",
    "tde",
    "eyenalysis",
    "dtwd",
    "mm_shape",
    "mm_direction",
    "mm_length",
    "mm_position",
    "mm_duration",
    "mm_mean",
)


def _positions(path: Scanpath | np.ndarray) -> np.ndarray:
    if isinstance(path, Scanpath):
        return path.positions()
    arr = np.asarray(path, dtype=np.float64)
    return arr[:, :2]


def _xyt(path: Scanpath | np.ndarray) -> np.ndarray:
    if isinstance(path, Scanpath):
        return path.as_array()
    return np.asarray(path, dtype=np.float64)


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _accumulate(cost: np.ndarray) -> np.ndarray:
    """Cumulative alignment cost with steps (+1,0), (0,+1), (+1,+1)."""
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(n):
        for j in range(m):
            acc[i + 1, j + 1] = cost[i, j] + min(acc[i, j], acc[i, j + 1], acc[i + 1, j])
    return acc


def _traceback(acc: np.ndarray) -> list[tuple[int, int]]:
    """Optimal alignment path, deterministic (diagonal preferred on ties)."""
    i, j = acc.shape[0] - 2, acc.shape[1] - 2
    pairs = [(i, j)]
    while i > 0 or j > 0:
        options = (acc[i, j], acc[i, j + 1], acc[i + 1, j])
        move = int(np.argmin(options))
        if move == 0:
            i, j = i - 1, j - 1
        elif move == 1:
            i -= 1
        else:
            j -= 1
        pairs.append((i, j))
    pairs.reverse()
    return pairs


def dtw_alignment(a: np.ndarray, b: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum summed-distance monotone alignment of two point sequences."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("scanpaths must be non-empty")
    cost = _pairwise_distances(a, b)
    acc = _accumulate(cost)
    return float(acc[-1, -1]), _traceback(acc)


def dtw(a: Scanpath | np.ndarray, b: Scanpath | np.ndarray) -> float:
    """Dynamic time warping distance on fixation positions."""
    total, _ = dtw_alignment(_positions(a), _positions(b))
    return total


def dtwd(a: Scanpath | np.ndarray, b: Scanpath | np.ndarray) -> float:
    """Duration-aware DTW: align spatially, cost the aligned (x, y, t) vectors."""
    pa, pb = _xyt(a), _xyt(b)
    if pa.shape[1] < 3 or pb.shape[1] < 3:
        raise ValueError("dtwd requires durations")
    _, pairs = dtw_alignment(pa[:, :2], pb[:, :2])
    total = 0.0
    for i, j in pairs:
        total += float(np.linalg.norm(pa[i] - pb[j]))
    return total


def tde(a: Scanpath | np.ndarray, b: Scanpath | np.ndarray, k: int = DEFAULT_TDE_LENGTH) -> float:
    """Time-delay-embedding distance over length-k subscanpaths, symmetric."""
    if k < 1:
        raise ValueError(f"embedding length must be >= 1, got {k}")
    pa, pb = _positions(a), _positions(b)
    if len(pa) < k or len(pb) < k:
        raise ValueError(f"both paths need >= {k} fixations for embedding length {k}")
    return 0.5 * (_tde_directed(pa, pb, k) + _tde_directed(pb, pa, k))


def _tde_directed(a: np.ndarray, b: np.ndarray, k: int) -> float:
    sub_a = np.stack([a[i : i + k] for i in range(len(a) - k + 1)])
    sub_b = np.stack([b[j : j + k] for j in range(len(b) - k + 1)])
    # mean point-wise distance between every subsequence pair
    diff = sub_a[:, None, :, :] - sub_b[None, :, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=3)).mean(axis=2)
    return float(dist.min(axis=1).mean())


def eyenalysis(a: Scanpath | np.ndarray, b: Scanpath | np.ndarray) -> float:
    """Symmetric nearest-fixation mapping distance."""
    pa, pb = _positions(a), _positions(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("scanpaths must be non-empty")
    dist = _pairwise_distances(pa, pb)
    return float((dist.min(axis=1).sum() + dist.min(axis=0).sum()) / (len(pa) + len(pb)))


# ---------------------------------------------------------------------------
# MultiMatch (Dewhurst et al. style): saccade-vector alignment, then five
# normalized similarity components.
# ---------------------------------------------------------------------------

_DIAG = math.sqrt(2.0)  # max point distance in the unit square


@dataclass(frozen=True)
class MultiMatchScore:
    shape: float
    direction: float
    length: float
    position: float
    duration: float

    @property
    def mean(self) -> float:
        return (self.shape + self.direction + self.length + self.position + self.duration) / 5.0

    def as_dict(self) -> dict[str, float]:
        return {
            "shape": self.shape,
            "direction": self.direction,
            "length": self.length,
            "position": self.position,
            "duration": self.duration,
            "mean": self.mean,
        }


def _saccade_vectors(p: np.ndarray) -> np.ndarray:
    return p[1:, :2] - p[:-1, :2]


def _vector_angle(v: np.ndarray) -> float:
    # zero-length saccades get angle 0 by convention (no orientation)
    return math.atan2(v[1], v[0]) if (v[0] != 0.0 or v[1] != 0.0) else 0.0


def simplify_path(p: np.ndarray, amplitude_threshold: float = 0.1, angle_threshold: float = 0.5) -> np.ndarray:
    """Iteratively merge small or same-direction consecutive saccades.

    Off by default in :func:`multimatch`; provided for parity with the
    original comparison pipeline.
    """
    path = p.copy()
    changed = True
    while changed and len(path) > 2:
        changed = False
        vecs = _saccade_vectors(path)
        for i in range(len(vecs) - 1):
            amp_ok = np.linalg.norm(vecs[i]) < amplitude_threshold and np.linalg.norm(vecs[i + 1]) < amplitude_threshold
            ang = abs(_wrap_angle(_vector_angle(vecs[i]) - _vector_angle(vecs[i + 1])))
            if amp_ok or ang < angle_threshold:
                # drop the middle fixation; its dwell time moves to the successor
                if path.shape[1] > 2:
                    path[i + 2, 2] += path[i + 1, 2]
                path = np.delete(path, i + 1, axis=0)
                changed = True
                break
    return path


def _wrap_angle(a: float) -> float:
    while a > math.pi:
        a -= 2 * math.pi
    while a < -math.pi:
        a += 2 * math.pi
    return a


def multimatch(a: Scanpath | np.ndarray, b: Scanpath | np.ndarray, simplify: bool = False) -> MultiMatchScore:
    """Five-component scanpath similarity, each in [0, 1]."""
    pa, pb = _xyt(a), _xyt(b)
    if len(pa) < 2 or len(pb) < 2:
        raise ValueError("multimatch needs >= 2 fixations per path")
    if simplify:
        pa, pb = simplify_path(pa), simplify_path(pb)
        if len(pa) < 2 or len(pb) < 2:
            raise ValueError("simplification collapsed a path below 2 fixations")

    va, vb = _saccade_vectors(pa), _saccade_vectors(pb)
    vec_diff = _pairwise_distances(va, vb)
    _, pairs = dtw_alignment_from_cost(vec_diff)

    shape_d, dir_d, len_d, pos_d, dur_d = [], [], [], [], []
    for i, j in pairs:
        shape_d.append(vec_diff[i, j] / (2.0 * _DIAG))
        dir_d.append(abs(_wrap_angle(_vector_angle(va[i]) - _vector_angle(vb[j]))) / math.pi)
        len_d.append(abs(np.linalg.norm(va[i]) - np.linalg.norm(vb[j])) / _DIAG)
        pos_d.append(float(np.linalg.norm(pa[i, :2] - pb[j, :2])) / _DIAG)
        dur_d.append(abs(pa[i, 2] - pb[j, 2]) / max(pa[i, 2], pb[j, 2]))

    def sim(vals: list[float]) -> float:
        return float(np.clip(1.0 - np.mean(vals), 0.0, 1.0))

    return MultiMatchScore(
        shape=sim(shape_d),
        direction=sim(dir_d),
        length=sim(len_d),
        position=sim(pos_d),
        duration=sim(dur_d),
    )


def dtw_alignment_from_cost(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Alignment over an externally supplied cost matrix."""
    acc = _accumulate(cost)
    return float(acc[-1, -1]), _traceback(acc)


# ---------------------------------------------------------------------------
# Laminarity: recurrence-quantification clustering tendency.
# ---------------------------------------------------------------------------


def laminarity_single(path: Scanpath | np.ndarray, radius: float = DEFAULT_LAMINARITY_RADIUS) -> float:
    """Percentage of recurrent fixation pairs lying in horizontal or vertical
    line structures (run length >= 2) of the recurrence matrix."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    p = _positions(path)
    n = len(p)
    if n < 2:
        return 0.0
    rec = _pairwise_distances(p, p) <= radius
    np.fill_diagonal(rec, False)
    total = int(rec.sum())
    if total == 0:
        return 0.0
    in_lines = _run_membership(rec) | _run_membership(rec.T).T
    return 100.0 * float(in_lines.sum()) / float(total)


def _run_membership(rec: np.ndarray) -> np.ndarray:
    """Marks recurrence points belonging to a horizontal run of length >= 2."""
    out = np.zeros_like(rec)
    for i in range(rec.shape[0]):
        j = 0
        row = rec[i]
        while j < len(row):
            if row[j]:
                start = j
                while j < len(row) and row[j]:
                    j += 1
                if j - start >= 2:
                    out[i, start:j] = True
            else:
                j += 1
    return out


def laminarity(paths: Iterable[Scanpath | np.ndarray], radius: float = DEFAULT_LAMINARITY_RADIUS) -> float:
    values = [laminarity_single(p, radius) for p in paths]
    if not values:
        raise ValueError("laminarity needs at least one scanpath")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Report aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricStat:
    mean: float
    sd: float
    n: int


@dataclass
class MetricReport:
    """Mean +- SD per metric over all evaluated (prediction, truth) pairs."""

    stats: dict[str, MetricStat]
    pairing: str = "pooled"

    def to_json(self) -> str:
        payload = {
            "pairing": self.pairing,
            "metrics": {k: {"mean": v.mean, "sd": v.sd, "n": v.n} for k, v in self.stats.items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_table(self) -> str:
        headers = {
            "dtw": "DTW",
            "tde": "TDE",
            "eyenalysis": "Eyenalysis",
            "dtwd": "DTWD",
            "mm_shape": "Shape",
            "mm_direction": "Direction",
            "mm_length": "Length",
            "mm_position": "Position",
            "mm_duration": "Duration",
            "mm_mean": "Mean",
        }
        cols = [headers[c] for c in METRIC_COLUMNS]
        cells = []
        for c in METRIC_COLUMNS:
            st = self.stats.get(c)
            cells.append(f"{st.mean:.3f} +- {st.sd:.3f}" if st else "---")
        widths = [max(len(h), len(v)) for h, v in zip(cols, cells)]
        head = "  ".join(h.rjust(w) for h, w in zip(cols, widths))
        body = "  ".join(v.rjust(w) for v, w in zip(cells, widths))
        return head + "\n" + body + "\n"

    def write(self, json_path: Path | str, table_path: Optional[Path | str] = None) -> None:
        Path(json_path).write_text(self.to_json(), encoding="utf-8")
        if table_path is not None:
            Path(table_path).write_text(self.to_table(), encoding="utf-8")


def pair_metrics(prediction: Scanpath, truth: Scanpath, tde_length: int = DEFAULT_TDE_LENGTH) -> dict[str, float]:
    """All metric columns for one (prediction, ground-truth) pair.

    tde is omitted when either path is shorter than the embedding length;
    MultiMatch when either has a single fixation.
    """
    out: dict[str, float] = {
        "dtw": dtw(prediction, truth),
        "eyenalysis": eyenalysis(prediction, truth),
        "dtwd": dtwd(prediction, truth),
    }
    if len(prediction) >= tde_length and len(truth) >= tde_length:
        out["tde"] = tde(prediction, truth, tde_length)
    if len(prediction) >= 2 and len(truth) >= 2:
        mm = multimatch(prediction, truth)
        out.update({f"mm_{k}": v for k, v in mm.as_dict().items()})
    return out


def evaluate(
    predictions: dict[str, Scanpath],
    ground_truths: Dataset,
    pairing: str = "pooled",
    tde_length: int = DEFAULT_TDE_LENGTH,
    viewers: Optional[set[str]] = None,
) -> MetricReport:
    """Score per-stimulus predictions against every ground-truth scanpath.

    Default pairing pools all (prediction, per-viewer truth) pairs before
    aggregating mean +- SD.
    """
    if not predictions:
        raise ValueError("no predictions to evaluate")
    samples: dict[str, list[float]] = {c: [] for c in METRIC_COLUMNS}
    for stimulus_id, pred in predictions.items():
        if stimulus_id not in ground_truths.stimuli:
            raise ValueError(f"prediction for unknown stimulus {stimulus_id!r}")
        for truth in ground_truths.scanpaths_for(stimulus_id, viewers):
            for key, value in pair_metrics(pred, truth, tde_length).items():
                samples[key].append(value)
    stats = {
        key: MetricStat(mean=float(np.mean(vals)), sd=float(np.std(vals)), n=len(vals))
        for key, vals in samples.items()
        if vals
    }
    return MetricReport(stats=stats, pairing=pairing)
