/** DOM wiring for the designer console. State lives in a DesignSession (see
 * session.ts); this module only reflects it into the page and calls the
 * service. One optimization job may be in flight per scope.
 */

import { ApiClient, ApiError } from "./api.js";
import { layoutSvg, renderResultSvg, resultBadges } from "./overlay.js";
import {
  DesignSession,
  EditRejected,
  exportLayout,
  canRun,
  clearInFlight,
  isStale,
  loadSession,
  markInFlight,
  moveElement,
  newSession,
  recordResult,
  runDisabledReason,
  saveSession,
  setOrder,
  setScope,
  undo,
} from "./session.js";
import type { LayoutSpecJson } from "./types.js";

const api = new ApiClient("");

let session: DesignSession;
let selectedElement: string | null = null;
let viewers: string[] = [];

function defaultLayout(): LayoutSpecJson {
  const elements = ["e1", "e2", "e3"].map((id, i) => ({
    id,
    rect: [(i % 3) / 3, Math.floor(i / 3) / 3, 1 / 3, 1 / 3] as [number, number, number, number],
    size_class: [[1, 1]],
    fixed: false,
  }));
  return { canvas: { w: 96, h: 96 }, grid: { rows: 3, cols: 3 }, elements };
}

const $ = (id: string) => document.getElementById(id)!;

function setStatus(message: string, isError = false): void {
  const el = $("status");
  el.textContent = message;
  el.className = isError ? "status error" : "status";
}

function persist(): void {
  saveSession(session, window.localStorage);
}

// -- grid editor --------------------------------------------------------------

function renderEditor(): void {
  const { rows, cols } = session.layout.grid;
  const size = 360;
  const cellW = size / cols;
  const cellH = size / rows;
  const parts = [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${size}" height="${size}" viewBox="0 0 ${size} ${size}">`,
    `<rect width="${size}" height="${size}" fill="#f2f2f2"/>`,
  ];
  for (let r = 0; r <= rows; r++) {
    parts.push(`<line x1="0" y1="${r * cellH}" x2="${size}" y2="${r * cellH}" stroke="#ccc"/>`);
  }
  for (let c = 0; c <= cols; c++) {
    parts.push(`<line x1="${c * cellW}" y1="0" x2="${c * cellW}" y2="${size}" stroke="#ccc"/>`);
  }
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      parts.push(
        `<rect class="cell" data-row="${r}" data-col="${c}" x="${c * cellW}" y="${r * cellH}" ` +
          `width="${cellW}" height="${cellH}" fill="transparent"/>`,
      );
    }
  }
  for (const e of session.layout.elements) {
    const [x, y, w, h] = e.rect;
    const inOrder = session.order.indexOf(e.id);
    const selected = e.id === selectedElement;
    parts.push(
      `<rect class="element" data-id="${e.id}" x="${x * size}" y="${y * size}" ` +
        `width="${w * size}" height="${h * size}" fill="#9db8d2" ` +
        `stroke="${selected ? "#d22" : inOrder >= 0 ? "#d4a017" : "#456"}" stroke-width="${selected ? 3 : 2}"/>`,
    );
    const label = inOrder >= 0 ? `${e.id} (#${inOrder + 1})` : e.id;
    parts.push(
      `<text x="${(x + w / 2) * size}" y="${(y + h / 2) * size}" text-anchor="middle" ` +
        `font-size="13" pointer-events="none">${label}</text>`,
    );
  }
  parts.push("</svg>");
  $("editor").innerHTML = parts.join("");

  $("editor").querySelectorAll<SVGRectElement>("rect.element").forEach((rect) => {
    rect.addEventListener("click", () => {
      const id = rect.dataset.id!;
      if (selectedElement === id) {
        toggleOrder(id);
      } else {
        selectedElement = id;
        setStatus(`selected ${id}: click a free cell to move it, click again to toggle its order slot`);
      }
      render();
    });
  });
  $("editor").querySelectorAll<SVGRectElement>("rect.cell").forEach((cell) => {
    cell.addEventListener("click", () => {
      if (!selectedElement) return;
      try {
        session = moveElement(session, selectedElement, Number(cell.dataset.row), Number(cell.dataset.col));
        setStatus(`moved ${selectedElement}; results are stale until re-run`);
        persist();
      } catch (err) {
        if (err instanceof EditRejected) {
          setStatus(`edit rejected: ${err.message}`, true);
        } else {
          throw err;
        }
      }
      render();
    });
  });
}

function toggleOrder(id: string): void {
  const order = session.order.includes(id)
    ? session.order.filter((o) => o !== id)
    : [...session.order, id];
  session = setOrder(session, order);
  persist();
}

// -- results ------------------------------------------------------------------

function resultPanel(scope: string): string {
  const tagged = session.results[scope];
  if (!tagged) return "";
  const badges = resultBadges(tagged.result);
  const stale = isStale(session, scope) ? `<span class="badge stale">stale: layout or order changed</span>` : "";
  const chips = [badges.satisfied, badges.objective, badges.candidates, badges.passRate]
    .filter(Boolean)
    .map((b) => `<span class="badge">${b}</span>`)
    .join(" ");
  return `
    <div class="panel">
      <h3>${scope === "population" ? "population-optimized" : `personalized (${scope})`}</h3>
      <div>${chips} ${stale}</div>
      <div class="overlay">${renderResultSvg(tagged.result)}</div>
      <div class="order-note">order: ${tagged.order.join(" → ")}</div>
    </div>`;
}

function renderResults(): void {
  const input = `
    <div class="panel">
      <h3>input design</h3>
      <div class="overlay">${layoutSvg(exportLayout(session), null, session.order)}</div>
    </div>`;
  const panels = Object.keys(session.results).sort().map(resultPanel).join("");
  $("results").innerHTML = input + panels;

  const historyEntries = session.history
    .map(
      (t, i) =>
        `<div class="history-entry">#${i + 1} ${t.scope} [${t.order.join(",")}] ` +
        `${t.result.satisfied ? "ok" : "unsatisfied"} ${t.result.objective.toFixed(3)}s</div>`,
    )
    .join("");
  $("history").innerHTML = historyEntries || "<em>no previous results</em>";
}

// -- runs ---------------------------------------------------------------------

async function runOptimization(): Promise<void> {
  const scope = session.scope;
  if (!canRun(session)) {
    setStatus(runDisabledReason(session) ?? "cannot run", true);
    return;
  }
  try {
    const body = {
      layout_spec: exportLayout(session),
      order: [...session.order],
      scope,
      seed: 0,
    };
    const { job } = await api.optimize(body);
    session = markInFlight(session, scope, job);
    render();
    setStatus(`job ${job} running for ${scope}...`);
    await api.pollJob(job);
    const result = await api.result(job);
    session = clearInFlight(session, scope);
    session = recordResult(session, scope, result);
    persist();
    setStatus(`job ${job} done`);
  } catch (err) {
    session = clearInFlight(session, scope);
    const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    setStatus(`optimization failed — ${message}`, true);
  }
  render();
}

// -- top-level rendering --------------------------------------------------------

function renderControls(): void {
  const scopeSelect = $("scope") as HTMLSelectElement;
  const options = ["population", ...viewers];
  scopeSelect.innerHTML = options
    .map((v) => `<option value="${v}" ${v === session.scope ? "selected" : ""}>${v}</option>`)
    .join("");

  const runButton = $("run") as HTMLButtonElement;
  runButton.disabled = !canRun(session);
  const reason = runDisabledReason(session);
  $("run-hint").textContent = reason ?? "";

  $("order-list").textContent = session.order.length
    ? session.order.join(" → ")
    : "click an element twice to add it to the order";
}

function render(): void {
  renderEditor();
  renderControls();
  renderResults();
}

async function init(): Promise<void> {
  session = loadSession(window.localStorage) ?? newSession(defaultLayout());
  try {
    const info = await api.model();
    viewers = info.viewers;
    setStatus(`connected: ${info.mode} model, path length ${info.path_length}`);
  } catch (err) {
    setStatus(`service unreachable — ${String(err)}`, true);
  }

  ($("scope") as HTMLSelectElement).addEventListener("change", (ev) => {
    session = setScope(session, (ev.target as HTMLSelectElement).value);
    persist();
    render();
  });
  $("run").addEventListener("click", () => void runOptimization());
  $("undo").addEventListener("click", () => {
    session = undo(session);
    persist();
    render();
  });
  $("clear-order").addEventListener("click", () => {
    session = setOrder(session, []);
    persist();
    render();
  });
  $("export").addEventListener("click", () => {
    ($("io") as HTMLTextAreaElement).value = JSON.stringify(exportLayout(session), null, 2);
  });
  $("import").addEventListener("click", () => {
    try {
      const layout = JSON.parse(($("io") as HTMLTextAreaElement).value) as LayoutSpecJson;
      session = newSession(layout);
      persist();
      setStatus("layout imported");
    } catch (err) {
      setStatus(`import failed: ${String(err)}`, true);
    }
    render();
  });

  render();
}

if (typeof document !== "undefined") {
  void init();
}
