import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  gradientColor,
  layoutSvg,
  overlayGeometry,
  renderResultSvg,
  resultBadges,
} from "../src/overlay.js";
import type { OptimizeResult } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixture = (name: string) => JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8"));

const population: OptimizeResult = fixture("optimize_population.json");
const personalized: OptimizeResult = fixture("optimize_personalized.json");

describe("overlay geometry", () => {
  it("has one polyline point per fixation", () => {
    const geo = overlayGeometry(population.scanpath, 96, 96);
    expect(geo.points.length).toBe(population.scanpath.length);
    expect(geo.circles.length).toBe(population.scanpath.length);
    expect(geo.segments.length).toBe(population.scanpath.length - 1);
  });

  it("circle radii are monotone in duration", () => {
    const geo = overlayGeometry(population.scanpath, 96, 96);
    const byDuration = [...population.scanpath.keys()].sort(
      (a, b) => population.scanpath[a][2] - population.scanpath[b][2],
    );
    for (let i = 1; i < byDuration.length; i++) {
      const prev = geo.circles[byDuration[i - 1]].r;
      const next = geo.circles[byDuration[i]].r;
      expect(next).toBeGreaterThanOrEqual(prev);
    }
  });

  it("runs green to blue over the path", () => {
    expect(gradientColor(0)).toBe("#2ecc40");
    expect(gradientColor(1)).toBe("#1f61d6");
    const geo = overlayGeometry(population.scanpath, 96, 96);
    expect(geo.segments[0].color).toBe("#2ecc40");
    expect(geo.circles[geo.circles.length - 1].color).toBe("#1f61d6");
  });

  it("is a pure function of the scanpath", () => {
    const once = renderResultSvg(population);
    const twice = renderResultSvg(JSON.parse(JSON.stringify(population)));
    expect(twice).toBe(once);
    // unrelated response fields do not affect the drawing
    const reshaped = { ...population, candidates: 9999, objective: 123.4 };
    expect(renderResultSvg(reshaped)).toBe(once);
  });

  it("matches the golden snapshot for the recorded population result", async () => {
    await expect(renderResultSvg(population)).toMatchFileSnapshot("__snapshots__/population_overlay.svg");
  });

  it("matches the golden snapshot for the recorded personalized result", async () => {
    await expect(renderResultSvg(personalized)).toMatchFileSnapshot("__snapshots__/personalized_overlay.svg");
  });

  it("matches the golden snapshot for a bare layout (no scanpath)", async () => {
    const svg = layoutSvg(fixture("layout_spec.json"), null, ["e1", "e2", "e3"]);
    await expect(svg).toMatchFileSnapshot("__snapshots__/input_layout.svg");
  });
});

describe("badges", () => {
  it("maps every displayed number to a response field", () => {
    const badges = resultBadges(population);
    expect(badges.objective).toBe(`duration: ${population.objective.toFixed(3)} s`);
    expect(badges.satisfied).toBe(`order satisfied: ${population.satisfied ? "yes" : "no"}`);
    expect(badges.candidates).toBe(`${population.candidates} candidates searched`);
    const passing = population.per_viewer.filter((v) => v.satisfied).length;
    expect(badges.passRate).toBe(`viewers following order: ${passing}/${population.per_viewer.length}`);
  });

  it("omits the pass-rate badge without per-viewer data", () => {
    const badges = resultBadges({ ...personalized, per_viewer: [] });
    expect(badges.passRate).toBeUndefined();
  });

  it("snapshot of the full badge set on the recorded response", () => {
    expect(resultBadges(population)).toMatchSnapshot();
  });
});
