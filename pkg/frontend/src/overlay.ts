/** Scanpath overlay rendering.
 *
 * Everything here is a pure function of service response data: geometry
 * derives only from the scanpath array, badges only from result fields. The
 * UI never computes model quantities itself.
 */

import type { LayoutSpecJson, OptimizeResult, Fixation } from "./types.js";

export const GRADIENT_START: [number, number, number] = [46, 204, 64]; // green
export const GRADIENT_END: [number, number, number] = [31, 97, 214]; // blue
export const RADIUS_PER_SECOND = 40;
export const RADIUS_MIN = 2;
export const CANVAS_GRAY = 180;

export interface OverlaySegment {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  color: string;
}

export interface OverlayCircle {
  cx: number;
  cy: number;
  r: number;
  color: string;
}

export interface OverlayGeometry {
  points: { x: number; y: number }[]; // one per fixation
  segments: OverlaySegment[]; // one per saccade
  circles: OverlayCircle[]; // one per fixation, radius grows with duration
}

export function gradientColor(frac: number): string {
  const mix = (a: number, b: number) => Math.round(a + (b - a) * frac);
  const rgb = GRADIENT_START.map((a, i) => mix(a, GRADIENT_END[i]));
  return `#${rgb.map((v) => v.toString(16).padStart(2, "0")).join("")}`;
}

const fmt = (v: number) => v.toFixed(2);

export function overlayGeometry(scanpath: Fixation[], width: number, height: number): OverlayGeometry {
  const n = scanpath.length;
  const points = scanpath.map(([x, y]) => ({ x: x * width, y: y * height }));
  const segments: OverlaySegment[] = [];
  for (let i = 0; i < n - 1; i++) {
    segments.push({
      x1: points[i].x,
      y1: points[i].y,
      x2: points[i + 1].x,
      y2: points[i + 1].y,
      color: gradientColor(n > 2 ? i / (n - 2) : 0),
    });
  }
  const circles = scanpath.map(([, , t], i) => ({
    cx: points[i].x,
    cy: points[i].y,
    r: Math.max(RADIUS_MIN, RADIUS_PER_SECOND * t),
    color: gradientColor(n > 1 ? i / (n - 1) : 0),
  }));
  return { points, segments, circles };
}

export function scanpathSvgBody(scanpath: Fixation[], width: number, height: number): string[] {
  const geo = overlayGeometry(scanpath, width, height);
  const parts: string[] = [];
  for (const s of geo.segments) {
    parts.push(
      `<line x1="${fmt(s.x1)}" y1="${fmt(s.y1)}" x2="${fmt(s.x2)}" y2="${fmt(s.y2)}" ` +
        `stroke="${s.color}" stroke-width="2"/>`,
    );
  }
  for (const c of geo.circles) {
    parts.push(
      `<circle cx="${fmt(c.cx)}" cy="${fmt(c.cy)}" r="${fmt(c.r)}" ` +
        `fill="${c.color}" fill-opacity="0.55" stroke="${c.color}"/>`,
    );
  }
  return parts;
}

/** Deterministic placeholder color for elements without one (display only). */
export function placeholderColor(id: string): [number, number, number] {
  let h = 2166136261;
  for (const ch of id) {
    h = (h ^ ch.charCodeAt(0)) >>> 0;
    h = (h * 16777619) >>> 0;
  }
  return [60 + (h & 0xff) % 160, 60 + ((h >> 8) & 0xff) % 160, 60 + ((h >> 16) & 0xff) % 160];
}

export function layoutSvg(
  layout: LayoutSpecJson,
  scanpath: Fixation[] | null,
  order: string[] = [],
): string {
  const w = layout.canvas.w;
  const h = layout.canvas.h;
  const prioritized = new Set(order);
  const parts = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${w}" height="${h}" viewBox="0 0 ${w} ${h}">`,
    `<rect width="${w}" height="${h}" fill="rgb(${CANVAS_GRAY},${CANVAS_GRAY},${CANVAS_GRAY})"/>`,
  ];
  for (const e of layout.elements) {
    const [x, y, ew, eh] = e.rect;
    const color = e.color ?? placeholderColor(e.id);
    const stroke = prioritized.has(e.id) ? "#d4a017" : "#555555";
    parts.push(
      `<rect x="${fmt(x * w)}" y="${fmt(y * h)}" width="${fmt(ew * w)}" height="${fmt(eh * h)}" ` +
        `fill="rgb(${color[0]},${color[1]},${color[2]})" stroke="${stroke}" stroke-width="2"/>`,
    );
    parts.push(
      `<text x="${fmt((x + ew / 2) * w)}" y="${fmt((y + eh / 2) * h)}" font-size="12" ` +
        `text-anchor="middle" fill="#111111">${e.id}</text>`,
    );
  }
  if (scanpath !== null) {
    parts.push(...scanpathSvgBody(scanpath, w, h));
  }
  parts.push("</svg>");
  return parts.join("\n");
}

export interface Badges {
  satisfied: string;
  objective: string;
  candidates: string;
  passRate?: string;
}

/** Badge strings, each traceable to one response field. */
export function resultBadges(result: OptimizeResult): Badges {
  const badges: Badges = {
    satisfied: `order satisfied: ${result.satisfied ? "yes" : "no"}`,
    objective: `duration: ${result.objective.toFixed(3)} s`,
    candidates: `${result.candidates} candidates searched`,
  };
  if (result.per_viewer.length > 0) {
    const passing = result.per_viewer.filter((v) => v.satisfied).length;
    badges.passRate = `viewers following order: ${passing}/${result.per_viewer.length}`;
  }
  return badges;
}

export function renderResultSvg(result: OptimizeResult): string {
  return layoutSvg(result.layout, result.scanpath, result.layout.order ?? []);
}
