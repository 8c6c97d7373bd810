import { describe, expect, it } from "vitest";

import { QueueState } from "../src/state.js";
import type { QueueView, TaskView } from "../src/types.js";
import queueFixture from "./fixtures/queue.json";
import resolvedFixture from "./fixtures/resolved_task.json";

const queue = queueFixture as unknown as QueueView;
const serverResolved = resolvedFixture as unknown as TaskView;

function freshState(): QueueState {
  return new QueueState(queue.tasks);
}

describe("QueueState", () => {
  it("starts with every recorded task open", () => {
    const state = freshState();
    expect(state.allTasks()).toHaveLength(3);
    expect(state.openTasks()).toHaveLength(3);
  });

  it("removes a task from the open list as soon as a resolve begins", () => {
    const state = freshState();
    state.beginResolve("e5e539c416a905fe", "1.5", "casey");
    expect(state.openTasks().map((task) => task.task_id)).toEqual([
      "f77b42c543cd9041",
      "7b098d80cf9d634c",
    ]);
    const pending = state.task("e5e539c416a905fe");
    expect(pending?.status).toBe("resolved");
    expect(pending?.resolution?.reviewer).toBe("casey");
  });

  it("restores the original task when the server rejects the resolve", () => {
    const state = freshState();
    state.beginResolve("e5e539c416a905fe", "1.5", "casey");
    state.rollback("e5e539c416a905fe");
    expect(state.openTasks()).toHaveLength(3);
    const restored = state.task("e5e539c416a905fe");
    expect(restored?.status).toBe("open");
    expect(restored?.resolution).toBeUndefined();
  });

  it("keeps the server's copy once the resolve is confirmed", () => {
    const state = freshState();
    state.beginResolve("e5e539c416a905fe", "1.5", "casey");
    state.commitResolve(serverResolved);
    expect(state.openTasks()).toHaveLength(2);
    const committed = state.task("e5e539c416a905fe");
    expect(committed?.resolution?.note).toBe("matches the worked integral");
    expect(committed?.resolution?.resolved_at).not.toBe("");
    state.rollback("e5e539c416a905fe");
    expect(state.task("e5e539c416a905fe")?.status).toBe("resolved");
  });

  it("ignores a begin for an unknown task or one already in flight", () => {
    const state = freshState();
    state.beginResolve("not-a-task", "1", "casey");
    expect(state.openTasks()).toHaveLength(3);
    state.beginResolve("f77b42c543cd9041", "1", "casey");
    state.beginResolve("f77b42c543cd9041", "2", "robin");
    state.rollback("f77b42c543cd9041");
    const restored = state.task("f77b42c543cd9041");
    expect(restored?.status).toBe("open");
    expect(restored?.final_points).toBeNull();
  });
});
