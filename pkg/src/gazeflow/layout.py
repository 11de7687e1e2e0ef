"""Order-constrained, duration-maximizing layout search.

Candidate layouts are grid placements of movable elements; each candidate is
rendered, a scanpath is predicted on it, the designer's fixation-order
constraint is checked, and the winner maximizes dwell time on the prioritized
elements. The search is exhaustive enumeration under a candidate cap, which
keeps it oracle-checkable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np

from .core import Fixation, Scanpath, StimulusImage
from .model import PolicyModel


class InvalidLayoutError(ValueError):
    """Layout violates its invariants (overlap, off-grid, unknown ids)."""


class CandidateCapExceeded(RuntimeError):
    """Enumeration would produce more candidates than the configured cap."""


@dataclass(frozen=True)
class LayoutElement:
    """One GUI element: its current normalized rect and the grid spans it may
    occupy when moved."""

    id: str
    rect: tuple[float, float, float, float]  # (x, y, w, h), normalized
    size_classes: tuple[tuple[int, int], ...] = ()  # allowed (row_span, col_span)
    fixed: bool = False
    color: Optional[tuple[int, int, int]] = None
    image: Optional[np.ndarray] = None  # content crop pasted into the rect

    def __post_init__(self) -> None:
        x, y, w, h = self.rect
        if w <= 0 or h <= 0:
            raise InvalidLayoutError(f"element {self.id!r} has non-positive size")
        if x < -1e-9 or y < -1e-9 or x + w > 1 + 1e-9 or y + h > 1 + 1e-9:
            raise InvalidLayoutError(f"element {self.id!r} rect {self.rect} leaves the canvas")

    def contains(self, x: float, y: float) -> bool:
        ex, ey, ew, eh = self.rect
        return ex <= x <= ex + ew and ey <= y <= ey + eh


@dataclass(frozen=True)
class LayoutSpec:
    canvas_w: int
    canvas_h: int
    rows: int
    cols: int
    elements: tuple[LayoutElement, ...]

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise InvalidLayoutError("grid must have at least one row and column")
        ids = [e.id for e in self.elements]
        if len(set(ids)) != len(ids):
            raise InvalidLayoutError(f"duplicate element ids: {ids}")

    def element(self, element_id: str) -> LayoutElement:
        for e in self.elements:
            if e.id == element_id:
                return e
        raise InvalidLayoutError(f"unknown element id {element_id!r}")

    def cell_rect(self, row: int, col: int, row_span: int = 1, col_span: int = 1) -> tuple[float, float, float, float]:
        return (col / self.cols, row / self.rows, col_span / self.cols, row_span / self.rows)

    def snap(self, element: LayoutElement) -> tuple[int, int, int, int]:
        """Grid placement (row, col, row_span, col_span) nearest the rect."""
        x, y, w, h = element.rect
        col = int(round(x * self.cols))
        row = int(round(y * self.rows))
        col_span = max(1, int(round(w * self.cols)))
        row_span = max(1, int(round(h * self.rows)))
        if row + row_span > self.rows or col + col_span > self.cols:
            raise InvalidLayoutError(f"element {element.id!r} does not fit the grid")
        return row, col, row_span, col_span

    def validate_no_overlap(self) -> None:
        for i, a in enumerate(self.elements):
            for b in self.elements[i + 1 :]:
                if _interiors_overlap(a.rect, b.rect):
                    raise InvalidLayoutError(f"elements {a.id!r} and {b.id!r} overlap")


def _interiors_overlap(r1: tuple[float, float, float, float], r2: tuple[float, float, float, float]) -> bool:
    x1, y1, w1, h1 = r1
    x2, y2, w2, h2 = r2
    return x1 < x2 + w2 - 1e-9 and x2 < x1 + w1 - 1e-9 and y1 < y2 + h2 - 1e-9 and y2 < y1 + h1 - 1e-9


@dataclass(frozen=True)
class OrderRequirement:
    """Designer-specified viewing order of prioritized elements."""

    element_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.element_ids) < 1:
            raise InvalidLayoutError("order requirement must name at least one element")
        if len(set(self.element_ids)) != len(self.element_ids):
            raise InvalidLayoutError(f"order requirement repeats ids: {self.element_ids}")

    def validate_against(self, spec: LayoutSpec) -> None:
        known = {e.id for e in spec.elements}
        missing = [i for i in self.element_ids if i not in known]
        if missing:
            raise InvalidLayoutError(f"order requirement names unknown elements: {missing}")


def element_hit_test(fixation: Fixation, layout: LayoutSpec) -> Optional[str]:
    """Id of the element under the fixation, None for background.

    A fixation on a shared edge resolves to the lower element id.
    """
    hits = [e for e in layout.elements if e.contains(fixation.x, fixation.y)]
    if len(hits) > 1:
        for i, a in enumerate(hits):
            for b in hits[i + 1 :]:
                if _interiors_overlap(a.rect, b.rect):
                    raise InvalidLayoutError(f"elements {a.id!r} and {b.id!r} overlap")
    return min(h.id for h in hits) if hits else None


@dataclass(frozen=True)
class OrderCheck:
    satisfied: bool
    prefix_end: int  # 1-based index of the last fixation in the qualifying run, 0 if none
    run_start: int  # 1-based index of the first fixation in the run, 0 if none
    matched: int  # how many required elements were reached in order


def order_prefix(scanpath: Scanpath, layout: LayoutSpec, req: OrderRequirement) -> OrderCheck:
    """Walk the fixation sequence against the required element order.

    Background fixations before the first prioritized hit are skipped; once
    the run has started, a background hit or any element outside the current/
    next required one ends it. The requirement is satisfied when the run's
    deduplicated hit sequence begins with the full requirement.
    """
    req.validate_against(layout)
    position = -1  # index into req of the element currently being fixated
    run_start = 0
    prefix_end = 0
    for idx, fx in enumerate(scanpath.fixations, start=1):
        hit = element_hit_test(fx, layout)
        if position == -1:
            if hit is None:
                continue  # leading background
            if hit != req.element_ids[0]:
                break
            position = 0
            run_start = idx
            prefix_end = idx
            continue
        if hit == req.element_ids[position]:
            prefix_end = idx  # repeated fixation on the current element
        elif position + 1 < len(req.element_ids) and hit == req.element_ids[position + 1]:
            position += 1
            prefix_end = idx
        else:
            break  # background or out-of-order element ends the prefix
    matched = position + 1
    satisfied = matched == len(req.element_ids)
    return OrderCheck(satisfied=satisfied, prefix_end=prefix_end, run_start=run_start, matched=matched)


def check_order_constraint(scanpath: Scanpath, layout: LayoutSpec, req: OrderRequirement) -> tuple[bool, int]:
    check = order_prefix(scanpath, layout, req)
    return check.satisfied, check.prefix_end


def duration_objective(scanpath: Scanpath, layout: LayoutSpec, req: OrderRequirement) -> float:
    """Total dwell time on the qualifying run of prioritized fixations."""
    check = order_prefix(scanpath, layout, req)
    if not check.satisfied:
        raise InvalidLayoutError("order constraint not satisfied; no objective defined")
    return _run_duration(scanpath, check)


def _run_duration(scanpath: Scanpath, check: OrderCheck) -> float:
    if check.run_start == 0:
        return 0.0
    return float(sum(f.t for f in scanpath.fixations[check.run_start - 1 : check.prefix_end]))


# ---------------------------------------------------------------------------
# Candidate enumeration
# ---------------------------------------------------------------------------


def enumerate_layouts(spec: LayoutSpec, cap: int = 10_000):
    """Yield every non-overlapping grid placement of the movable elements.

    Deterministic order: elements in declaration order, size classes as
    listed, positions row-major. Raises :class:`CandidateCapExceeded` beyond
    ``cap`` candidates.
    """
    movable = [e for e in spec.elements if not e.fixed]
    occupancy = np.zeros((spec.rows, spec.cols), dtype=bool)
    placements: dict[str, tuple[int, int, int, int]] = {}
    for e in spec.elements:
        if e.fixed:
            row, col, rs, cs = spec.snap(e)
            if occupancy[row : row + rs, col : col + cs].any():
                raise InvalidLayoutError(f"fixed element {e.id!r} overlaps another fixed element")
            occupancy[row : row + rs, col : col + cs] = True
            placements[e.id] = (row, col, rs, cs)

    produced = 0

    def emit() -> LayoutSpec:
        elements = []
        for e in spec.elements:
            row, col, rs, cs = placements[e.id]
            elements.append(replace(e, rect=spec.cell_rect(row, col, rs, cs)))
        return replace(spec, elements=tuple(elements))

    def spans(e: LayoutElement) -> tuple[tuple[int, int], ...]:
        return e.size_classes if e.size_classes else (spec.snap(e)[2:],)

    def search(i: int):
        nonlocal produced
        if i == len(movable):
            produced += 1
            if produced > cap:
                raise CandidateCapExceeded(f"more than {cap} candidate layouts; tighten constraints")
            yield emit()
            return
        e = movable[i]
        for rs, cs in spans(e):
            for row in range(spec.rows - rs + 1):
                for col in range(spec.cols - cs + 1):
                    region = occupancy[row : row + rs, col : col + cs]
                    if region.any():
                        continue
                    region[:] = True
                    placements[e.id] = (row, col, rs, cs)
                    yield from search(i + 1)
                    occupancy[row : row + rs, col : col + cs] = False
        placements.pop(e.id, None)

    yield from search(0)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


class Predictor(Protocol):
    def predict(self, image: StimulusImage) -> Scanpath: ...


@dataclass
class GreedyPredictor:
    model: PolicyModel
    viewer: Optional[str] = None

    def predict(self, image: StimulusImage) -> Scanpath:
        return self.model.rollout(image, self.viewer, mode="greedy").scanpath


@dataclass
class SampledEnsemblePredictor:
    """Stochastic predictions with majority constraint voting."""

    model: PolicyModel
    samples: int = 8
    seed: int = 0
    viewer: Optional[str] = None

    def predict_all(self, image: StimulusImage) -> list[Scanpath]:
        return [
            self.model.rollout(image, self.viewer, mode="sample", seed=self.seed + i).scanpath
            for i in range(self.samples)
        ]

    def predict(self, image: StimulusImage) -> Scanpath:
        return self.predict_all(image)[0]


@dataclass
class CandidateScore:
    layout: LayoutSpec
    scanpath: Scanpath
    satisfied: bool
    objective: float
    matched: int
    prefix_end: int


@dataclass
class OptimizationResult:
    layout: LayoutSpec
    scanpath: Scanpath
    satisfied: bool
    objective: float
    prefix_end: int
    candidates: int
    scope: str
    per_viewer: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "scope": self.scope,
            "satisfied": self.satisfied,
            "objective": self.objective,
            "prefix_end": self.prefix_end,
            "candidates": self.candidates,
            "layout": layout_to_dict(self.layout),
            "scanpath": [[f.x, f.y, f.t] for f in self.scanpath.fixations],
            "per_viewer": self.per_viewer,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def score_candidate(
    layout: LayoutSpec,
    req: OrderRequirement,
    predictor: Predictor,
    renderer: Callable[[LayoutSpec], StimulusImage],
    vote_threshold: float = 0.5,
) -> CandidateScore:
    image = renderer(layout)
    if isinstance(predictor, SampledEnsemblePredictor):
        paths = predictor.predict_all(image)
        checks = [order_prefix(p, layout, req) for p in paths]
        passing = [(p, c) for p, c in zip(paths, checks) if c.satisfied]
        if len(passing) / len(paths) >= vote_threshold and passing:
            objective = float(np.mean([_run_duration(p, c) for p, c in passing]))
            best = passing[0]
            return CandidateScore(layout, best[0], True, objective, len(req.element_ids), best[1].prefix_end)
        best_idx = int(np.argmax([c.matched for c in checks]))
        c = checks[best_idx]
        return CandidateScore(layout, paths[best_idx], False, _run_duration(paths[best_idx], c), c.matched, c.prefix_end)
    path = predictor.predict(image)
    check = order_prefix(path, layout, req)
    return CandidateScore(
        layout, path, check.satisfied, _run_duration(path, check), check.matched, check.prefix_end
    )


def optimize(
    spec: LayoutSpec,
    req: OrderRequirement,
    model: PolicyModel | Predictor,
    scope: str = "population",
    rollout_policy: str = "greedy",
    seed: int = 0,
    samples: int = 8,
    vote_threshold: float = 0.5,
    cap: int = 10_000,
    renderer: Optional[Callable[[LayoutSpec], StimulusImage]] = None,
) -> OptimizationResult:
    """Search all candidate layouts for the best order-satisfying one.

    ``scope`` is "population" or a viewer id (requires a personalized
    embedding on the model). Population scope additionally reports how each
    registered viewer behaves on the winning layout.
    """
    req.validate_against(spec)
    if renderer is None:
        from .render import render_layout

        renderer = render_layout

    if isinstance(model, PolicyModel):
        viewer = None if scope == "population" else scope
        if viewer is not None and viewer not in model.viewer_embeddings:
            raise KeyError(f"no personalized embedding for viewer {viewer!r}")
        if rollout_policy == "greedy":
            predictor: Predictor = GreedyPredictor(model, viewer)
        elif rollout_policy == "sample":
            predictor = SampledEnsemblePredictor(model, samples=samples, seed=seed, viewer=viewer)
        else:
            raise ValueError(f"rollout policy must be 'greedy' or 'sample', got {rollout_policy!r}")
    else:
        predictor = model

    best: Optional[CandidateScore] = None
    count = 0
    for candidate in enumerate_layouts(spec, cap=cap):
        count += 1
        score = score_candidate(candidate, req, predictor, renderer, vote_threshold)
        if best is None or _better(score, best):
            best = score
    if best is None:
        raise InvalidLayoutError("no candidate layouts (all cells blocked?)")

    result = OptimizationResult(
        layout=best.layout,
        scanpath=best.scanpath,
        satisfied=best.satisfied,
        objective=best.objective,
        prefix_end=best.prefix_end,
        candidates=count,
        scope=scope,
    )
    if scope == "population" and isinstance(model, PolicyModel) and model.viewer_embeddings:
        image = renderer(best.layout)
        for vid in sorted(model.viewer_embeddings):
            path = model.rollout(image, vid, mode="greedy").scanpath
            check = order_prefix(path, best.layout, req)
            result.per_viewer.append(
                {"viewer": vid, "satisfied": check.satisfied, "objective": _run_duration(path, check)}
            )
    return result


def _better(a: CandidateScore, b: CandidateScore) -> bool:
    """Strict improvement; equal keys keep the earlier (deterministic) one."""
    return (a.satisfied, a.matched, a.objective) > (b.satisfied, b.matched, b.objective)


# ---------------------------------------------------------------------------
# LayoutSpec JSON format
# ---------------------------------------------------------------------------


def layout_from_dict(payload: dict, base_dir: Optional[Path] = None) -> tuple[LayoutSpec, Optional[OrderRequirement]]:
    try:
        canvas = payload["canvas"]
        grid = payload["grid"]
        elements = []
        for entry in payload["elements"]:
            image = None
            if entry.get("image") and base_dir is not None:
                image = np.asarray(StimulusImage.load(base_dir / entry["image"]).pixels)
            elements.append(
                LayoutElement(
                    id=str(entry["id"]),
                    rect=tuple(float(v) for v in entry["rect"]),
                    size_classes=tuple(tuple(int(v) for v in sc) for sc in entry.get("size_class", [])),
                    fixed=bool(entry.get("fixed", False)),
                    color=tuple(entry["color"]) if entry.get("color") else None,
                    image=image,
                )
            )
        spec = LayoutSpec(
            canvas_w=int(canvas["w"]),
            canvas_h=int(canvas["h"]),
            rows=int(grid["rows"]),
            cols=int(grid["cols"]),
            elements=tuple(elements),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidLayoutError(f"bad layout spec: {exc}") from exc
    spec.validate_no_overlap()
    order = payload.get("order")
    req = OrderRequirement(tuple(str(i) for i in order)) if order else None
    if req is not None:
        req.validate_against(spec)
    return spec, req


def layout_to_dict(spec: LayoutSpec, req: Optional[OrderRequirement] = None) -> dict:
    payload = {
        "canvas": {"w": spec.canvas_w, "h": spec.canvas_h},
        "grid": {"rows": spec.rows, "cols": spec.cols},
        "elements": [
            {
                "id": e.id,
                "rect": list(e.rect),
                "size_class": [list(sc) for sc in e.size_classes],
                "fixed": e.fixed,
                **({"color": list(e.color)} if e.color else {}),
            }
            for e in spec.elements
        ],
    }
    if req is not None:
        payload["order"] = list(req.element_ids)
    return payload


def load_layout(path: Path | str) -> tuple[LayoutSpec, Optional[OrderRequirement]]:
    p = Path(path)
    return layout_from_dict(json.loads(p.read_text(encoding="utf-8")), base_dir=p.parent)
