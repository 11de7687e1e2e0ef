import json

import numpy as np
import pytest

from gazeflow.core import Fixation, Scanpath, StimulusImage
from gazeflow.layout import (
    CandidateCapExceeded,
    InvalidLayoutError,
    LayoutElement,
    LayoutSpec,
    OrderRequirement,
    check_order_constraint,
    duration_objective,
    element_hit_test,
    enumerate_layouts,
    layout_from_dict,
    layout_to_dict,
    optimize,
    order_prefix,
)
from gazeflow.render import layout_svg, render_layout, scanpath_svg, stable_color


def grid_spec(rows=2, cols=2, n_elements=3, fixed=()):
    """n 1x1 elements initially placed row-major on the grid."""
    elements = []
    for i in range(n_elements):
        r, c = divmod(i, cols)
        elements.append(
            LayoutElement(
                id=f"e{i + 1}",
                rect=(c / cols, r / rows, 1 / cols, 1 / rows),
                size_classes=((1, 1),),
                fixed=f"e{i + 1}" in fixed,
            )
        )
    return LayoutSpec(canvas_w=64, canvas_h=64, rows=rows, cols=cols, elements=tuple(elements))


def path_hitting(spec, cells, durations=None, t=0.2):
    """Scanpath whose fixations land at the centers of the given (row, col)
    cells; None means background (requires a free cell, uses (rows-1, cols-1))."""
    fixes = []
    durations = durations or [t] * len(cells)
    for (cell, dur) in zip(cells, durations):
        if cell is None:
            fixes.append(Fixation(0.999, 0.999, dur))
        else:
            r, c = cell
            fixes.append(Fixation((c + 0.5) / spec.cols, (r + 0.5) / spec.rows, dur))
    return Scanpath("layout", tuple(fixes))


class TestHitTest:
    def test_center_hit(self):
        spec = grid_spec()
        fx = Fixation(0.25, 0.25, 0.2)
        assert element_hit_test(fx, spec) == "e1"

    def test_background(self):
        spec = grid_spec(n_elements=3)  # cell (1, 1) is empty
        assert element_hit_test(Fixation(0.9, 0.9, 0.2), spec) is None

    def test_shared_edge_lower_id_wins(self):
        spec = grid_spec()
        # x = 0.5 is the shared edge between e1 (left) and e2 (right)
        assert element_hit_test(Fixation(0.5, 0.25, 0.2), spec) == "e1"

    def test_overlapping_elements_rejected(self):
        a = LayoutElement("a", (0.0, 0.0, 0.6, 0.6))
        b = LayoutElement("b", (0.3, 0.3, 0.6, 0.6))
        spec = LayoutSpec(canvas_w=64, canvas_h=64, rows=2, cols=2, elements=(a, b))
        with pytest.raises(InvalidLayoutError):
            element_hit_test(Fixation(0.45, 0.45, 0.2), spec)


class TestOrderConstraint:
    def req(self):
        return OrderRequirement(("e1", "e2", "e3"))

    def test_worked_example(self):
        spec = grid_spec(rows=2, cols=2, n_elements=4)
        # hits [e1, e1, e2, e3, e4] -> satisfied, M = 4
        path = path_hitting(spec, [(0, 0), (0, 0), (0, 1), (1, 0), (1, 1)])
        satisfied, m = check_order_constraint(path, spec, self.req())
        assert satisfied and m == 4

    def test_wrong_first_element(self):
        spec = grid_spec()
        path = path_hitting(spec, [(0, 1), (0, 0), (1, 0)])  # e2, e1, e3
        satisfied, _ = check_order_constraint(path, spec, self.req())
        assert not satisfied

    def test_incomplete_prefix(self):
        spec = grid_spec()
        path = path_hitting(spec, [(0, 0), (0, 1)])  # e1, e2 only
        satisfied, _ = check_order_constraint(path, spec, self.req())
        assert not satisfied

    def test_leading_background_skipped(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3)
        path = path_hitting(spec, [None, (0, 0), (0, 1), (1, 0)])
        satisfied, m = check_order_constraint(path, spec, self.req())
        assert satisfied and m == 4

    def test_background_after_start_ends_prefix(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3)
        path = path_hitting(spec, [(0, 0), None, (0, 1), (1, 0)])
        satisfied, _ = check_order_constraint(path, spec, self.req())
        assert not satisfied

    def test_satisfied_implies_dedup_prefix(self, rng):
        """Whenever the check passes, the deduplicated hit sequence of the
        run literally begins with the requirement."""
        spec = grid_spec(rows=2, cols=2, n_elements=4)
        req = self.req()
        cells = [(0, 0), (0, 1), (1, 0), (1, 1), None]
        for _ in range(300):
            seq = [cells[i] for i in rng.integers(0, len(cells), size=6)]
            path = path_hitting(spec, seq)
            check = order_prefix(path, spec, req)
            if check.satisfied:
                hits = [element_hit_test(f, spec) for f in path.fixations]
                run = hits[check.run_start - 1 : check.prefix_end]
                dedup = [run[0]] + [h for a, h in zip(run, run[1:]) if h != a]
                assert dedup[: len(req.element_ids)] == list(req.element_ids)

    def test_unknown_id_rejected(self):
        spec = grid_spec()
        with pytest.raises(InvalidLayoutError):
            check_order_constraint(path_hitting(spec, [(0, 0)]), spec, OrderRequirement(("nope",)))


class TestDurationObjective:
    def test_summation(self):
        spec = grid_spec(rows=2, cols=2, n_elements=4)
        path = path_hitting(spec, [(0, 0), (0, 0), (0, 1), (1, 0), (1, 1)],
                            durations=[0.4, 0.3, 0.5, 0.2, 9.0])
        value = duration_objective(path, spec, OrderRequirement(("e1", "e2", "e3")))
        assert value == pytest.approx(1.4)

    def test_invariant_to_later_fixations(self):
        spec = grid_spec(rows=2, cols=2, n_elements=4)
        base = [(0, 0), (0, 1), (1, 0)]
        short = path_hitting(spec, base, durations=[0.3, 0.3, 0.3])
        longer = path_hitting(spec, base + [(1, 1), (1, 1)], durations=[0.3, 0.3, 0.3, 5.0, 5.0])
        req = OrderRequirement(("e1", "e2", "e3"))
        assert duration_objective(short, spec, req) == duration_objective(longer, spec, req)

    def test_unsatisfied_rejected(self):
        spec = grid_spec()
        path = path_hitting(spec, [(0, 1)])
        with pytest.raises(InvalidLayoutError):
            duration_objective(path, spec, OrderRequirement(("e1", "e2", "e3")))

    def test_satisfied_implies_prefix_at_least_req_length(self, rng):
        spec = grid_spec(rows=2, cols=2, n_elements=4)
        req = OrderRequirement(("e1", "e2", "e3"))
        cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
        for _ in range(200):
            seq = [cells[i] for i in rng.integers(0, len(cells), size=6)]
            path = path_hitting(spec, seq)
            satisfied, m = check_order_constraint(path, spec, req)
            if satisfied:
                assert m >= len(req.element_ids)


class TestEnumerate:
    def test_single_movable_on_free_cells(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3, fixed=("e2", "e3"))
        candidates = list(enumerate_layouts(spec))
        assert len(candidates) == 2  # 4 cells minus 2 occupied

    def test_all_fixed_single_candidate(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3, fixed=("e1", "e2", "e3"))
        assert len(list(enumerate_layouts(spec))) == 1

    def test_permutation_count(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3)
        assert len(list(enumerate_layouts(spec))) == 24  # 4 * 3 * 2

    def test_deterministic_order(self):
        spec = grid_spec(rows=2, cols=2, n_elements=2)
        first = [layout_to_dict(c) for c in enumerate_layouts(spec)]
        second = [layout_to_dict(c) for c in enumerate_layouts(spec)]
        assert first == second

    def test_no_overlaps_in_candidates(self):
        spec = grid_spec(rows=2, cols=3, n_elements=3)
        for candidate in enumerate_layouts(spec):
            candidate.validate_no_overlap()

    def test_cap_exceeded(self):
        spec = grid_spec(rows=3, cols=3, n_elements=4)
        with pytest.raises(CandidateCapExceeded):
            list(enumerate_layouts(spec, cap=10))

    def test_span_classes_respected(self):
        wide = LayoutElement("w", (0.0, 0.0, 0.5, 0.5), size_classes=((1, 2),))
        spec = LayoutSpec(canvas_w=64, canvas_h=64, rows=2, cols=2, elements=(wide,))
        candidates = list(enumerate_layouts(spec))
        assert len(candidates) == 2  # 1x2 span fits in two row positions
        for c in candidates:
            x, y, w, h = c.elements[0].rect
            assert w == pytest.approx(1.0)


class ScriptedPredictor:
    """Deterministic reading-order scanner: fixates cell centers
    left-to-right, top-to-bottom, with durations favoring early cells."""

    def __init__(self, rows=2, cols=2, dwell=0.5):
        self.rows, self.cols, self.dwell = rows, cols, dwell

    def predict(self, image: StimulusImage) -> Scanpath:
        fixes = []
        i = 0
        for r in range(self.rows):
            for c in range(self.cols):
                t = self.dwell / (1 + 0.3 * i)
                fixes.append(Fixation((c + 0.5) / self.cols, (r + 0.5) / self.rows, t))
                i += 1
        return Scanpath("scripted", tuple(fixes))


class TestOptimize:
    def test_matches_exhaustive_oracle(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3)
        req = OrderRequirement(("e1", "e2", "e3"))
        predictor = ScriptedPredictor()
        result = optimize(spec, req, predictor)

        # brute force outside the optimizer
        best_obj, best_layout = -1.0, None
        count = 0
        for candidate in enumerate_layouts(spec):
            count += 1
            path = predictor.predict(render_layout(candidate))
            satisfied, _ = check_order_constraint(path, candidate, req)
            if satisfied:
                obj = duration_objective(path, candidate, req)
                if obj > best_obj:
                    best_obj, best_layout = obj, candidate
        assert count == 24
        assert result.satisfied
        assert result.objective == pytest.approx(best_obj)
        assert layout_to_dict(result.layout) == layout_to_dict(best_layout)

    def test_unknown_req_id_rejected(self):
        spec = grid_spec()
        with pytest.raises(InvalidLayoutError):
            optimize(spec, OrderRequirement(("e1", "ghost", "e3")), ScriptedPredictor())

    def test_no_satisfying_candidate_best_effort(self):
        class BackwardScanner(ScriptedPredictor):
            def predict(self, image):
                path = super().predict(image)
                return Scanpath(path.stimulus_id, tuple(reversed(path.fixations)))

        spec = grid_spec(rows=1, cols=2, n_elements=2, fixed=("e1", "e2"))
        req = OrderRequirement(("e1", "e2"))
        result = optimize(spec, req, BackwardScanner(rows=1, cols=2))
        assert not result.satisfied
        assert result.candidates == 1

    def test_result_json_shape(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3)
        req = OrderRequirement(("e1", "e2", "e3"))
        result = optimize(spec, req, ScriptedPredictor())
        payload = json.loads(result.to_json())
        assert set(payload) >= {"scope", "satisfied", "objective", "layout", "scanpath", "candidates"}


class TestLayoutJson:
    def test_roundtrip(self):
        spec = grid_spec(rows=2, cols=3, n_elements=3)
        req = OrderRequirement(("e1", "e2", "e3"))
        payload = layout_to_dict(spec, req)
        spec2, req2 = layout_from_dict(payload)
        assert layout_to_dict(spec2, req2) == payload

    def test_bad_payload_rejected(self):
        with pytest.raises(InvalidLayoutError):
            layout_from_dict({"canvas": {"w": 10}})

    def test_order_with_unknown_element_rejected(self):
        payload = layout_to_dict(grid_spec())
        payload["order"] = ["e1", "zzz"]
        with pytest.raises(InvalidLayoutError):
            layout_from_dict(payload)


class TestRendering:
    def test_render_layout_paints_elements(self):
        spec = grid_spec(rows=2, cols=2, n_elements=2)
        image = render_layout(spec)
        assert (image.width, image.height) == (64, 64)
        e1_color = stable_color("e1")
        assert tuple(image.pixels[16, 16]) == e1_color
        assert tuple(image.pixels[48, 48]) == (180, 180, 180)  # background

    def test_render_with_crop(self):
        crop = np.full((8, 8, 3), 200, dtype=np.uint8)
        e = LayoutElement("img", (0.0, 0.0, 0.5, 0.5), image=crop)
        spec = LayoutSpec(canvas_w=64, canvas_h=64, rows=2, cols=2, elements=(e,))
        image = render_layout(spec)
        assert tuple(image.pixels[10, 10]) == (200, 200, 200)

    def test_scanpath_svg_structure(self):
        path = Scanpath("s", (Fixation(0.1, 0.1, 0.2), Fixation(0.9, 0.5, 0.4), Fixation(0.5, 0.9, 0.1)))
        svg = scanpath_svg(path, 100, 100)
        assert svg.count("<circle") == 3
        assert svg.count("<line") == 2
        assert svg.startswith("<svg") and svg.endswith("</svg>")

    def test_svg_radius_monotone_in_duration(self):
        import re

        path = Scanpath("s", (Fixation(0.2, 0.2, 0.1), Fixation(0.5, 0.5, 0.3), Fixation(0.8, 0.8, 0.6)))
        svg = scanpath_svg(path, 100, 100)
        radii = [float(m) for m in re.findall(r'r="([0-9.]+)"', svg)]
        assert radii == sorted(radii)

    def test_svg_gradient_green_to_blue(self):
        path = Scanpath("s", tuple(Fixation(0.1 * i + 0.1, 0.5, 0.2) for i in range(5)))
        svg = scanpath_svg(path, 100, 100)
        assert "#2ecc40" in svg  # first stroke: green end of the ramp
        assert "#1f61d6" in svg  # last circle: blue end

    def test_svg_deterministic(self):
        path = Scanpath("s", (Fixation(0.25, 0.75, 0.33), Fixation(0.5, 0.5, 0.21)))
        assert scanpath_svg(path, 64, 64) == scanpath_svg(path, 64, 64)

    def test_layout_svg_contains_elements_and_path(self):
        spec = grid_spec(rows=2, cols=2, n_elements=3)
        path = ScriptedPredictor().predict(render_layout(spec))
        svg = layout_svg(spec, path, OrderRequirement(("e1", "e2", "e3")), objective=1.25)
        assert svg.count("<rect") == 4  # canvas + 3 elements
        assert "duration 1.250 s" in svg
