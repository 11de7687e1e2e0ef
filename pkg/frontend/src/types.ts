/** Wire types mirroring the service JSON verbatim. */

export interface LayoutElementJson {
  id: string;
  rect: [number, number, number, number]; // x, y, w, h normalized
  size_class: number[][];
  fixed: boolean;
  color?: number[];
}

export interface LayoutSpecJson {
  canvas: { w: number; h: number };
  grid: { rows: number; cols: number };
  elements: LayoutElementJson[];
  order?: string[];
}

/** One fixation as [x, y, duration_seconds]. */
export type Fixation = number[];

export interface PerViewerEntry {
  viewer: string;
  satisfied: boolean;
  objective: number;
}

export interface OptimizeResult {
  scope: string;
  satisfied: boolean;
  objective: number;
  prefix_end: number;
  candidates: number;
  layout: LayoutSpecJson;
  scanpath: Fixation[];
  per_viewer: PerViewerEntry[];
  svg?: string;
}

export interface JobRecord {
  id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  result_path: string | null;
  error: string | null;
}

export interface ModelInfo {
  config: Record<string, unknown>;
  mode: string;
  viewers: string[];
  path_length: number;
}

export interface PredictResponse {
  stimulus: string;
  viewer: string | null;
  mode: string;
  seed: number;
  log_prob: number;
  scanpath: Fixation[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field?: string;
}
