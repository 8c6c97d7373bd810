// Thin fetch wrappers around the review service. Every endpoint the
// console touches lives here; resolve is the only write.

import type {
  ApiErrorBody,
  QueueView,
  RunReport,
  RunView,
  TaskDetail,
  TaskView,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(path, init);
  } catch (error) {
    throw new ApiError(0, "network", `cannot reach the review service: ${String(error)}`);
  }
  const text = await response.text();
  let body: unknown = null;
  if (text) {
    try {
      body = JSON.parse(text);
    } catch {
      body = null;
    }
  }
  if (!response.ok) {
    const error = (body ?? {}) as Partial<ApiErrorBody>;
    throw new ApiError(
      response.status,
      error.code ?? "http_error",
      error.message ?? `request failed with status ${response.status}`,
    );
  }
  return body as T;
}

export function fetchRuns(): Promise<RunView[]> {
  return request("/api/runs");
}

export function fetchQueue(runId: string, includeResolved = false): Promise<QueueView> {
  const suffix = includeResolved ? "?include_resolved=true" : "";
  return request(`/api/runs/${encodeURIComponent(runId)}/queue${suffix}`);
}

export function fetchTask(taskId: string): Promise<TaskDetail> {
  return request(`/api/tasks/${encodeURIComponent(taskId)}`);
}

export function resolveTask(
  taskId: string,
  points: string,
  reviewer: string,
  note = "",
): Promise<TaskView> {
  return request(`/api/tasks/${encodeURIComponent(taskId)}/resolve`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ points, reviewer, note }),
  });
}

export function fetchReport(runId: string): Promise<RunReport> {
  return request(`/api/runs/${encodeURIComponent(runId)}/report`);
}
