"""Canonical data model for stimuli, scanpaths, and display geometry.

Coordinates are stored normalized to [0, 1] (fraction of image width/height)
and durations in seconds. Ingest converts from pixel space and milliseconds
when the record declares them.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

# Eye trackers jitter at image borders; overshoot up to this fraction of the
# image dimension is clamped, anything beyond rejects the record.
OVERSHOOT_TOLERANCE = 0.02

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


class RecordError(ValueError):
    """A scanpath record violates the data model and was rejected."""


@dataclass(frozen=True)
class Fixation:
    """One gaze pause: normalized position plus duration in seconds."""

    x: float
    y: float
    t: float

    def validate(self) -> None:
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise RecordError(f"fixation position out of range: ({self.x}, {self.y})")
        if not (math.isfinite(self.t) and self.t > 0.0):
            raise RecordError(f"fixation duration must be finite and > 0, got {self.t}")


@dataclass(frozen=True)
class Scanpath:
    """Ordered fixation sequence of one viewer over one stimulus."""

    stimulus_id: str
    fixations: tuple[Fixation, ...]
    viewer_id: Optional[str] = None

    def __post_init__(self) -> None:
        if len(self.fixations) == 0:
            raise RecordError("scanpath must contain at least one fixation")

    def __len__(self) -> int:
        return len(self.fixations)

    def validate(self) -> None:
        for fx in self.fixations:
            fx.validate()

    def positions(self) -> np.ndarray:
        """(n, 2) array of x, y."""
        return np.array([(f.x, f.y) for f in self.fixations], dtype=np.float64)

    def as_array(self) -> np.ndarray:
        """(n, 3) array of x, y, t."""
        return np.array([(f.x, f.y, f.t) for f in self.fixations], dtype=np.float64)

    @staticmethod
    def from_array(stimulus_id: str, arr: np.ndarray, viewer_id: Optional[str] = None) -> "Scanpath":
        fixes = tuple(Fixation(float(r[0]), float(r[1]), float(r[2])) for r in np.asarray(arr))
        return Scanpath(stimulus_id, fixes, viewer_id)


@dataclass(frozen=True)
class StimulusImage:
    """An RGB stimulus with its native pixel dimensions."""

    id: str
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (h, w, 3), got shape {px.shape}")
        if px.shape[0] <= 0 or px.shape[1] <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @staticmethod
    def load(path: Path | str, stimulus_id: Optional[str] = None) -> "StimulusImage":
        path = Path(path)
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return StimulusImage(stimulus_id or path.stem, pixels)

    def resized(self, width: int, height: int) -> np.ndarray:
        """Bilinear resize to (height, width, 3) uint8."""
        im = Image.fromarray(self.pixels).resize((width, height), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8)


@dataclass(frozen=True)
class DisplayConfig:
    """Display geometry and the inhibition diameter it implies.

    ``inhibition_diameter_px`` is the diameter of the re-fixation suppression
    area on the display, sized to a human visual angle. When the optical
    provenance (viewing distance, pixel density) is given it must agree with
    the stored diameter to within half a pixel.
    """

    width: int
    height: int
    inhibition_diameter_px: float
    visual_angle_deg: float = 2.0
    viewing_distance_cm: Optional[float] = None
    px_per_cm: Optional[float] = None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("display dimensions must be positive")
        if self.inhibition_diameter_px <= 0:
            raise ValueError("inhibition diameter must be positive")
        if self.viewing_distance_cm is not None and self.px_per_cm is not None:
            expected = _angle_to_px(self.visual_angle_deg, self.viewing_distance_cm, self.px_per_cm)
            if abs(expected - self.inhibition_diameter_px) > 0.5:
                raise ValueError(
                    f"inhibition diameter {self.inhibition_diameter_px:.3f} px disagrees with "
                    f"{self.visual_angle_deg} deg at {self.viewing_distance_cm} cm "
                    f"({expected:.3f} px expected)"
                )

    @staticmethod
    def from_visual_angle(
        width: int,
        height: int,
        visual_angle_deg: float = 2.0,
        viewing_distance_cm: float = 60.0,
        px_per_cm: float = 38.0,
    ) -> "DisplayConfig":
        diameter = _angle_to_px(visual_angle_deg, viewing_distance_cm, px_per_cm)
        return DisplayConfig(
            width=width,
            height=height,
            inhibition_diameter_px=diameter,
            visual_angle_deg=visual_angle_deg,
            viewing_distance_cm=viewing_distance_cm,
            px_per_cm=px_per_cm,
        )


def _angle_to_px(angle_deg: float, distance_cm: float, px_per_cm: float) -> float:
    return 2.0 * distance_cm * math.tan(math.radians(angle_deg) / 2.0) * px_per_cm


@dataclass
class Dataset:
    """Immutable-after-load collection of stimuli and scanpaths with splits."""

    stimuli: dict[str, StimulusImage] = field(default_factory=dict)
    scanpaths: list[Scanpath] = field(default_factory=list)
    image_split: dict[str, str] = field(default_factory=dict)  # stimulus_id -> "train"|"test"
    viewer_split: dict[str, str] = field(default_factory=dict)  # viewer_id -> "train"|"test"

    def validate(self) -> None:
        for sp in self.scanpaths:
            if sp.stimulus_id not in self.stimuli:
                raise ValueError(f"scanpath references unknown stimulus {sp.stimulus_id!r}")
        for split in (self.image_split, self.viewer_split):
            bad = {k: v for k, v in split.items() if v not in ("train", "test")}
            if bad:
                raise ValueError(f"split labels must be 'train' or 'test', got {bad}")

    @property
    def viewers(self) -> list[str]:
        seen: dict[str, None] = {}
        for sp in self.scanpaths:
            if sp.viewer_id is not None:
                seen.setdefault(sp.viewer_id, None)
        return list(seen)

    def split_images(self, label: str) -> list[str]:
        return [sid for sid in self.stimuli if self.image_split.get(sid, "train") == label]

    def split_viewers(self, label: str) -> list[str]:
        return [vid for vid in self.viewers if self.viewer_split.get(vid, "train") == label]

    def scanpaths_for(self, stimulus_id: str, viewers: Optional[set[str]] = None) -> list[Scanpath]:
        out = [sp for sp in self.scanpaths if sp.stimulus_id == stimulus_id]
        if viewers is not None:
            out = [sp for sp in out if sp.viewer_id in viewers]
        return out

    def training_examples(self, path_length: int) -> list[Scanpath]:
        """Scanpaths eligible for fixed-length training.

        Train-split image and viewer, truncated to ``path_length``; shorter
        paths are excluded (not padded) so the fixed-length likelihood
        factorization stays valid.
        """
        train_images = set(self.split_images("train"))
        train_viewers = set(self.split_viewers("train"))
        out = []
        for sp in self.scanpaths:
            if sp.stimulus_id not in train_images:
                continue
            if sp.viewer_id is not None and sp.viewer_id not in train_viewers:
                continue
            kept = truncate_or_reject(sp, path_length)
            if kept is not None:
                out.append(kept)
        return out


def normalize_scanpath(raw: Scanpath, image: StimulusImage) -> Scanpath:
    """Convert a pixel-space scanpath to normalized [0, 1] coordinates.

    Overshoot beyond the image border of at most ``OVERSHOOT_TOLERANCE`` is
    clamped; larger overshoot rejects the record.
    """
    fixes = []
    for fx in raw.fixations:
        x = fx.x / image.width
        y = fx.y / image.height
        fixes.append(Fixation(_clamp_unit(x, "x"), _clamp_unit(y, "y"), fx.t))
    out = Scanpath(raw.stimulus_id, tuple(fixes), raw.viewer_id)
    out.validate()
    return out


def _clamp_unit(v: float, axis: str) -> float:
    if v < -OVERSHOOT_TOLERANCE or v > 1.0 + OVERSHOOT_TOLERANCE:
        overshoot = max(-v, v - 1.0)
        raise RecordError(f"{axis} coordinate overshoots image by {overshoot:.1%} (> {OVERSHOOT_TOLERANCE:.0%})")
    return min(1.0, max(0.0, v))


def truncate_or_reject(path: Scanpath, length: int) -> Optional[Scanpath]:
    """First ``length`` fixations, or None when the path is too short to train on."""
    if length < 1:
        raise ValueError(f"target length must be >= 1, got {length}")
    if len(path) < length:
        return None
    if len(path) == length:
        return path
    return Scanpath(path.stimulus_id, path.fixations[:length], path.viewer_id)


# ---------------------------------------------------------------------------
# Record file format: UTF-8 JSON lines, one object per scanpath with fields
# {stimulus, viewer, unit: "s"|"ms", fixations: [[x, y, t], ...],
#  space: "pixel"|"normalized"}.
# ---------------------------------------------------------------------------


def parse_record(line: str) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(f"malformed JSON: {exc}") from exc
    if not isinstance(rec, dict):
        raise RecordError("record must be a JSON object")
    for key in ("stimulus", "fixations"):
        if key not in rec:
            raise RecordError(f"record missing field {key!r}")
    rec.setdefault("viewer", None)
    rec.setdefault("unit", "s")
    rec.setdefault("space", "normalized")
    if rec["unit"] not in ("s", "ms"):
        raise RecordError(f"unit must be 's' or 'ms', got {rec['unit']!r}")
    if rec["space"] not in ("pixel", "normalized"):
        raise RecordError(f"space must be 'pixel' or 'normalized', got {rec['space']!r}")
    return rec


def record_to_scanpath(rec: dict, image: StimulusImage) -> Scanpath:
    """Validate and normalize one parsed record against its stimulus."""
    scale = 1e-3 if rec["unit"] == "ms" else 1.0
    try:
        fixes = tuple(Fixation(float(x), float(y), float(t) * scale) for x, y, t in rec["fixations"])
    except (TypeError, ValueError) as exc:
        raise RecordError(f"fixations must be [x, y, t] triples: {exc}") from exc
    path = Scanpath(str(rec["stimulus"]), fixes, None if rec["viewer"] is None else str(rec["viewer"]))
    if rec["space"] == "pixel":
        return normalize_scanpath(path, image)
    clamped = tuple(
        Fixation(_clamp_unit(f.x, "x"), _clamp_unit(f.y, "y"), f.t) for f in path.fixations
    )
    path = Scanpath(path.stimulus_id, clamped, path.viewer_id)
    path.validate()
    return path


def scanpath_to_record(path: Scanpath) -> dict:
    return {
        "stimulus": path.stimulus_id,
        "viewer": path.viewer_id,
        "unit": "s",
        "fixations": [[f.x, f.y, f.t] for f in path.fixations],
        "space": "normalized",
    }


def write_scanpaths(path: Path | str, scanpaths: Iterable[Scanpath]) -> None:
    """Write the canonical record file: normalized coordinates, seconds."""
    with open(path, "w", encoding="utf-8") as fh:
        for sp in scanpaths:
            fh.write(json.dumps(scanpath_to_record(sp), sort_keys=True))
            fh.write("\n")


def read_scanpaths(path: Path | str, stimuli: dict[str, StimulusImage]) -> Iterator[Scanpath]:
    """Parse a record file, skipping (and logging) rejected records."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = parse_record(line)
                sid = str(rec["stimulus"])
                if sid not in stimuli:
                    raise RecordError(f"no image for stimulus {sid!r}")
                yield record_to_scanpath(rec, stimuli[sid])
            except RecordError as exc:
                log.warning("rejected record at %s:%d: %s", path, lineno, exc)


def load_split_manifest(path: Path | str) -> tuple[dict[str, str], dict[str, str]]:
    """Read a split manifest: JSON with train/test image and viewer lists."""
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    image_split: dict[str, str] = {}
    viewer_split: dict[str, str] = {}
    for key, target, label in (
        ("train_images", image_split, "train"),
        ("test_images", image_split, "test"),
        ("train_viewers", viewer_split, "train"),
        ("test_viewers", viewer_split, "test"),
    ):
        for item in manifest.get(key, []):
            item = str(item)
            if item in target:
                raise ValueError(f"{item!r} appears in both train and test {key.split('_')[1]} sets")
            target[item] = label
    return image_split, viewer_split


def save_dataset(dataset: Dataset, root_path: Path | str) -> Path:
    """Write a dataset directory in the canonical on-disk layout."""
    root = Path(root_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for sid, image in dataset.stimuli.items():
        Image.fromarray(image.pixels).save(root / "images" / f"{sid}.png")
    write_scanpaths(root / "scanpaths.jsonl", dataset.scanpaths)
    manifest = {
        "train_images": dataset.split_images("train"),
        "test_images": dataset.split_images("test"),
        "train_viewers": dataset.split_viewers("train"),
        "test_viewers": dataset.split_viewers("test"),
    }
    (root / "split.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return root


def load_dataset(root_path: Path | str) -> Dataset:
    """Load a dataset directory.

    Expected layout: image files (``images/`` subdirectory or the root),
    ``scanpaths.jsonl``, and an optional ``split.json`` manifest. Rejected
    records are logged and skipped; loading continues.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")

    image_dir = root / "images" if (root / "images").is_dir() else root
    stimuli: dict[str, StimulusImage] = {}
    for p in sorted(image_dir.iterdir()):
        if p.suffix.lower() in IMAGE_EXTENSIONS:
            stimuli[p.stem] = StimulusImage.load(p)
    if not stimuli:
        raise FileNotFoundError(f"no images found under {image_dir}")

    record_file = root / "scanpaths.jsonl"
    if not record_file.is_file():
        raise FileNotFoundError(f"missing scanpath record file {record_file}")
    scanpaths = list(read_scanpaths(record_file, stimuli))

    image_split: dict[str, str] = {}
    viewer_split: dict[str, str] = {}
    manifest = root / "split.json"
    if manifest.is_file():
        image_split, viewer_split = load_split_manifest(manifest)

    ds = Dataset(stimuli=stimuli, scanpaths=scanpaths, image_split=image_split, viewer_split=viewer_split)
    ds.validate()
    log.info(
        "loaded %d stimuli, %d scanpaths (%d train / %d test images; %d train / %d test viewers)",
        len(ds.stimuli),
        len(ds.scanpaths),
        len(ds.split_images("train")),
        len(ds.split_images("test")),
        len(ds.split_viewers("train")),
        len(ds.split_viewers("test")),
    )
    return ds
