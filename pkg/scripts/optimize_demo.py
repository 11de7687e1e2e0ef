#!/usr/bin/env python3
"""Layout optimization demo: build a 3x3 grid with three prioritized
elements, search placements with a trained checkpoint, and write the winning
layout JSON + SVG overlay."""

import argparse
import json
from pathlib import Path

from gazeflow.checkpoint import load_checkpoint
from gazeflow.layout import LayoutElement, LayoutSpec, OrderRequirement, layout_to_dict, optimize
from gazeflow.render import layout_svg, write_svg


def demo_spec(rows: int = 3, cols: int = 3, canvas: int = 96) -> LayoutSpec:
    elements = []
    for i in range(3):
        r, c = divmod(i, cols)
        elements.append(LayoutElement(id=f"e{i + 1}", rect=(c / cols, r / rows, 1 / cols, 1 / rows),
                                      size_classes=((1, 1),)))
    return LayoutSpec(canvas_w=canvas, canvas_h=canvas, rows=rows, cols=cols, elements=tuple(elements))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("checkpoint", type=Path)
    parser.add_argument("--scope", default="population", help="'population' or a viewer id")
    parser.add_argument("--out", type=Path, default=Path("optimize-demo"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    model = load_checkpoint(args.checkpoint)
    spec = demo_spec()
    req = OrderRequirement(("e1", "e2", "e3"))
    result = optimize(spec, req, model, scope=args.scope, seed=args.seed, cap=1000)

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "result.json").write_text(result.to_json(), encoding="utf-8")
    write_svg(args.out / "result.svg",
              layout_svg(result.layout, result.scanpath, req,
                         objective=result.objective if result.satisfied else None))
    (args.out / "input.json").write_text(json.dumps(layout_to_dict(spec, req), indent=2))
    print(f"satisfied={result.satisfied} objective={result.objective:.3f}s "
          f"candidates={result.candidates}")
    if result.per_viewer:
        for entry in result.per_viewer:
            print(f"  viewer {entry['viewer']}: satisfied={entry['satisfied']} "
                  f"objective={entry['objective']:.3f}s")
    print(f"artifacts in {args.out}")


if __name__ == "__main__":
    main()
