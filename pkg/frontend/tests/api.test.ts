import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, fetchQueue, fetchRuns, fetchTask, resolveTask } from "../src/api.js";
import error409Fixture from "./fixtures/error_409.json";
import queueFixture from "./fixtures/queue.json";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("api client", () => {
  it("fetches and parses the queue", async () => {
    const mock = vi.fn().mockResolvedValue(jsonResponse(queueFixture));
    vi.stubGlobal("fetch", mock);
    const queue = await fetchQueue("demo1");
    expect(mock).toHaveBeenCalledWith("/api/runs/demo1/queue", undefined);
    expect(queue.tasks).toHaveLength(3);
    expect(queue.tasks[0]?.aggregate.sigma).toBe(1.0);
  });

  it("asks for resolved tasks only when told to", async () => {
    const mock = vi.fn().mockResolvedValue(jsonResponse(queueFixture));
    vi.stubGlobal("fetch", mock);
    await fetchQueue("demo1", true);
    expect(mock).toHaveBeenCalledWith("/api/runs/demo1/queue?include_resolved=true", undefined);
  });

  it("escapes identifiers that would break the path", async () => {
    const mock = vi.fn().mockResolvedValue(jsonResponse([]));
    vi.stubGlobal("fetch", mock);
    await fetchTask("a/b c");
    expect(mock).toHaveBeenCalledWith("/api/tasks/a%2Fb%20c", undefined);
  });

  it("posts a resolve as JSON", async () => {
    const mock = vi.fn().mockResolvedValue(jsonResponse({ task_id: "t" }));
    vi.stubGlobal("fetch", mock);
    await resolveTask("f77b42c543cd9041", "1", "casey", "double-checked");
    const [path, init] = mock.mock.calls[0] as [string, RequestInit];
    expect(path).toBe("/api/tasks/f77b42c543cd9041/resolve");
    expect(init.method).toBe("POST");
    expect(init.headers).toEqual({ "Content-Type": "application/json" });
    expect(JSON.parse(init.body as string)).toEqual({
      points: "1",
      reviewer: "casey",
      note: "double-checked",
    });
  });

  it("turns the recorded 409 body into a typed error", async () => {
    vi.stubGlobal("fetch", vi.fn().mockResolvedValue(jsonResponse(error409Fixture, 409)));
    const failure = await fetchRuns().catch((error: unknown) => error);
    expect(failure).toBeInstanceOf(ApiError);
    const apiError = failure as ApiError;
    expect(apiError.status).toBe(409);
    expect(apiError.code).toBe("already_resolved");
    expect(apiError.message).toContain("already resolved by casey");
  });

  it("still raises a usable error when the body is not JSON", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn().mockResolvedValue(new Response("<h1>gateway</h1>", { status: 502 })),
    );
    const failure = (await fetchRuns().catch((error: unknown) => error)) as ApiError;
    expect(failure.status).toBe(502);
    expect(failure.code).toBe("http_error");
    expect(failure.message).toContain("502");
  });

  it("reports an unreachable service as a network error", async () => {
    vi.stubGlobal("fetch", vi.fn().mockRejectedValue(new TypeError("fetch failed")));
    const failure = (await fetchRuns().catch((error: unknown) => error)) as ApiError;
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.status).toBe(0);
    expect(failure.code).toBe("network");
    expect(failure.message).toContain("cannot reach the review service");
  });
});
