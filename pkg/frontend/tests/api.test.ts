import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

const here = dirname(fileURLToPath(import.meta.url));
const jobFixture = JSON.parse(readFileSync(join(here, "fixtures", "job_record.json"), "utf-8"));

function jsonResponse(body: unknown, status = 200) {
  return {
    ok: status < 400,
    status,
    statusText: String(status),
    json: async () => body,
  } as Response;
}

describe("request handling", () => {
  it("parses structured error bodies into ApiError", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse({ code: "unknown_viewer", message: "no embedding", field: "viewer" }, 404),
    );
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    const err = await client.predict({ image: "x", viewer: "ghost" }).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("unknown_viewer");
    expect(err.field).toBe("viewer");
    expect(err.status).toBe(404);
  });

  it("posts the layout spec verbatim", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ job: "abc" }));
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    const layout = JSON.parse(readFileSync(join(here, "fixtures", "layout_spec.json"), "utf-8"));
    await client.optimize({ layout_spec: layout, order: ["e1", "e2", "e3"] });
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("http://svc/optimize");
    expect(JSON.parse((init as RequestInit).body as string).layout_spec).toEqual(layout);
  });
});

describe("job polling", () => {
  it("polls through queued and running to done", async () => {
    const states = ["queued", "running", "running", "done"];
    let call = 0;
    const fetchMock = vi.fn(async () => jsonResponse({ ...jobFixture, state: states[call++] }));
    const client = new ApiClient("", fetchMock as unknown as typeof fetch);
    const record = await client.pollJob("j1", { initialMs: 1, maxMs: 4 });
    expect(record.state).toBe("done");
    expect(fetchMock).toHaveBeenCalledTimes(4);
  });

  it("rejects with the job error on failure", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse({ ...jobFixture, state: "failed", error: "boom" }),
    );
    const client = new ApiClient("", fetchMock as unknown as typeof fetch);
    const err = await client.pollJob("j1", { initialMs: 1 }).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("job_failed");
    expect(err.message).toBe("boom");
  });

  it("backs off exponentially up to the ceiling", async () => {
    vi.useFakeTimers();
    try {
      const fetchMock = vi.fn(async () => jsonResponse({ ...jobFixture, state: "running" }));
      const client = new ApiClient("", fetchMock as unknown as typeof fetch);
      const pending = client.pollJob("j1", { initialMs: 100, factor: 2, maxMs: 400, timeoutMs: 10_000 });
      pending.catch(() => undefined); // resolved later by the timeout path
      await vi.advanceTimersByTimeAsync(0);
      expect(fetchMock).toHaveBeenCalledTimes(1);
      await vi.advanceTimersByTimeAsync(100); // 1st delay
      expect(fetchMock).toHaveBeenCalledTimes(2);
      await vi.advanceTimersByTimeAsync(200); // doubled
      expect(fetchMock).toHaveBeenCalledTimes(3);
      await vi.advanceTimersByTimeAsync(400); // clamped at maxMs
      expect(fetchMock).toHaveBeenCalledTimes(4);
      await vi.advanceTimersByTimeAsync(400);
      expect(fetchMock).toHaveBeenCalledTimes(5);
    } finally {
      vi.useRealTimers();
    }
  });

  it("times out politely", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ ...jobFixture, state: "running" }));
    const client = new ApiClient("", fetchMock as unknown as typeof fetch);
    const err = await client.pollJob("j1", { initialMs: 1, timeoutMs: 5 }).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("timeout");
  });
});
