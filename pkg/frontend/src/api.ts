/** Thin client for the prediction/optimization service. */

import type {
  ApiErrorBody,
  JobRecord,
  LayoutSpecJson,
  ModelInfo,
  OptimizeResult,
  PredictResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public field?: string,
    public status?: number,
  ) {
    super(message);
  }
}

export interface PollOptions {
  initialMs?: number;
  maxMs?: number;
  factor?: number;
  timeoutMs?: number;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class ApiClient {
  constructor(
    private base: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.base}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    const body = await response.json();
    if (!response.ok) {
      const err = body as ApiErrorBody;
      throw new ApiError(err.code ?? "error", err.message ?? response.statusText, err.field, response.status);
    }
    return body as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/health");
  }

  model(): Promise<ModelInfo> {
    return this.request("/model");
  }

  predict(body: {
    image?: string;
    layout?: LayoutSpecJson;
    viewer?: string;
    mode?: string;
    seed?: number;
  }): Promise<PredictResponse> {
    return this.request("/predict", { method: "POST", body: JSON.stringify(body) });
  }

  optimize(body: {
    layout_spec: LayoutSpecJson;
    order: string[];
    scope?: string;
    seed?: number;
    cap?: number;
  }): Promise<{ job: string }> {
    return this.request("/optimize", { method: "POST", body: JSON.stringify(body) });
  }

  personalize(body: { viewer: string; scanpaths: unknown[] }): Promise<{ job: string }> {
    return this.request("/personalize", { method: "POST", body: JSON.stringify(body) });
  }

  job(id: string): Promise<JobRecord> {
    return this.request(`/jobs/${id}`);
  }

  result(id: string): Promise<OptimizeResult> {
    return this.request(`/results/${id}`);
  }

  /** Poll a job with exponential backoff until it terminates. Resolves on
   * "done", rejects with the job error on "failed". */
  async pollJob(id: string, options: PollOptions = {}): Promise<JobRecord> {
    const { initialMs = 250, maxMs = 3000, factor = 1.6, timeoutMs = 300_000 } = options;
    const deadline = Date.now() + timeoutMs;
    let delay = initialMs;
    for (;;) {
      const record = await this.job(id);
      if (record.state === "done") return record;
      if (record.state === "failed") {
        throw new ApiError("job_failed", record.error ?? "job failed");
      }
      if (Date.now() > deadline) {
        throw new ApiError("timeout", `job ${id} still ${record.state} after ${timeoutMs} ms`);
      }
      await sleep(delay);
      delay = Math.min(delay * factor, maxMs);
    }
  }
}
