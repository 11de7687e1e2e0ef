/** Design-session state: grid-snap layout editing with undo, order
 * selection, result tagging, and localStorage persistence.
 *
 * All transitions are pure functions returning a new session; the DOM layer
 * never mutates state directly.
 */

import type { LayoutSpecJson, OptimizeResult } from "./types.js";

export const HISTORY_LIMIT = 20;
export const MIN_ORDER_LENGTH = 3;

export class EditRejected extends Error {}

export interface TaggedResult {
  scope: string;
  order: string[];
  layoutRevision: number;
  result: OptimizeResult;
}

export interface DesignSession {
  layout: LayoutSpecJson;
  revision: number; // bumps on every accepted edit
  order: string[];
  scope: string; // "population" or a viewer id
  results: Record<string, TaggedResult>;
  history: TaggedResult[];
  past: LayoutSpecJson[]; // undo stack
  inFlight: Record<string, string>; // scope -> job id
}

const clone = <T>(v: T): T => JSON.parse(JSON.stringify(v));

export function newSession(layout: LayoutSpecJson): DesignSession {
  return {
    layout: clone(layout),
    revision: 0,
    order: layout.order ? [...layout.order] : [],
    scope: "population",
    results: {},
    history: [],
    past: [],
    inFlight: {},
  };
}

function cellRect(layout: LayoutSpecJson, row: number, col: number, rowSpan: number, colSpan: number):
    [number, number, number, number] {
  const { rows, cols } = layout.grid;
  return [col / cols, row / rows, colSpan / cols, rowSpan / rows];
}

function spanOf(layout: LayoutSpecJson, elementId: string): [number, number] {
  const e = layout.elements.find((el) => el.id === elementId);
  if (!e) throw new EditRejected(`unknown element ${elementId}`);
  const { rows, cols } = layout.grid;
  return [Math.max(1, Math.round(e.rect[3] * rows)), Math.max(1, Math.round(e.rect[2] * cols))];
}

function interiorsOverlap(a: [number, number, number, number], b: [number, number, number, number]): boolean {
  const eps = 1e-9;
  return a[0] < b[0] + b[2] - eps && b[0] < a[0] + a[2] - eps &&
         a[1] < b[1] + b[3] - eps && b[1] < a[1] + a[3] - eps;
}

/** Move an element's top-left cell; rejects off-grid targets and overlaps. */
export function moveElement(session: DesignSession, elementId: string, row: number, col: number): DesignSession {
  const layout = session.layout;
  const element = layout.elements.find((e) => e.id === elementId);
  if (!element) throw new EditRejected(`unknown element ${elementId}`);
  if (element.fixed) throw new EditRejected(`element ${elementId} is pinned`);
  const [rowSpan, colSpan] = spanOf(layout, elementId);
  if (row < 0 || col < 0 || row + rowSpan > layout.grid.rows || col + colSpan > layout.grid.cols) {
    throw new EditRejected(`placement leaves the grid`);
  }
  const target = cellRect(layout, row, col, rowSpan, colSpan);
  for (const other of layout.elements) {
    if (other.id !== elementId && interiorsOverlap(target, other.rect)) {
      throw new EditRejected(`overlaps ${other.id}`);
    }
  }
  const next = clone(layout);
  next.elements.find((e) => e.id === elementId)!.rect = target;
  return {
    ...session,
    layout: next,
    revision: session.revision + 1,
    past: [...session.past, clone(layout)],
  };
}

export function undo(session: DesignSession): DesignSession {
  if (session.past.length === 0) return session;
  const past = [...session.past];
  const layout = past.pop()!;
  return { ...session, layout, past, revision: session.revision + 1 };
}

export function setOrder(session: DesignSession, ids: string[]): DesignSession {
  const known = new Set(session.layout.elements.map((e) => e.id));
  if (new Set(ids).size !== ids.length) throw new EditRejected("order repeats an element");
  for (const id of ids) {
    if (!known.has(id)) throw new EditRejected(`order names unknown element ${id}`);
  }
  return { ...session, order: [...ids] };
}

export function setScope(session: DesignSession, scope: string): DesignSession {
  return { ...session, scope };
}

/** The run button is enabled only with three or more ordered elements and no
 * job already in flight for this scope. */
export function canRun(session: DesignSession, scope?: string): boolean {
  const s = scope ?? session.scope;
  return session.order.length >= MIN_ORDER_LENGTH && !(s in session.inFlight);
}

export function runDisabledReason(session: DesignSession): string | null {
  if (session.order.length < MIN_ORDER_LENGTH) {
    return `select at least ${MIN_ORDER_LENGTH} elements in order (${session.order.length} chosen)`;
  }
  if (session.scope in session.inFlight) {
    return `a job is already running for ${session.scope}`;
  }
  return null;
}

export function markInFlight(session: DesignSession, scope: string, jobId: string): DesignSession {
  return { ...session, inFlight: { ...session.inFlight, [scope]: jobId } };
}

export function clearInFlight(session: DesignSession, scope: string): DesignSession {
  const inFlight = { ...session.inFlight };
  delete inFlight[scope];
  return { ...session, inFlight };
}

/** Store a finished result, tagged with the exact config that produced it;
 * the previous result for the scope moves into the bounded history strip. */
export function recordResult(session: DesignSession, scope: string, result: OptimizeResult): DesignSession {
  const tagged: TaggedResult = {
    scope,
    order: [...session.order],
    layoutRevision: session.revision,
    result,
  };
  const history = [...session.history];
  const previous = session.results[scope];
  if (previous) history.unshift(previous);
  return {
    ...session,
    results: { ...session.results, [scope]: tagged },
    history: history.slice(0, HISTORY_LIMIT),
  };
}

/** A result is stale when the layout or order changed after it was made. */
export function isStale(session: DesignSession, scope: string): boolean {
  const tagged = session.results[scope];
  if (!tagged) return false;
  return tagged.layoutRevision !== session.revision ||
         JSON.stringify(tagged.order) !== JSON.stringify(session.order);
}

// -- persistence (browser local storage only) --------------------------------

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const STORAGE_KEY = "gazeflow-designer-session";

export function saveSession(session: DesignSession, storage: StorageLike): void {
  const { inFlight: _discard, ...persisted } = session; // jobs do not survive reloads
  storage.setItem(STORAGE_KEY, JSON.stringify(persisted));
}

export function loadSession(storage: StorageLike): DesignSession | null {
  const raw = storage.getItem(STORAGE_KEY);
  if (!raw) return null;
  try {
    const parsed = JSON.parse(raw);
    return { ...parsed, inFlight: {} } as DesignSession;
  } catch {
    return null;
  }
}

/** Layout export is the service LayoutSpec JSON verbatim (plus the order). */
export function exportLayout(session: DesignSession): LayoutSpecJson {
  return { ...clone(session.layout), order: [...session.order] };
}
