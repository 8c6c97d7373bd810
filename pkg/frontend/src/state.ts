// Client-side queue state with optimistic resolution.
//
// A resolve is applied to the local list before the POST returns, so the
// task leaves the open queue immediately; the server reply then replaces
// the optimistic copy, and a failure rolls the original back.

import type { TaskView } from "./types.js";

export class QueueState {
  private tasks: TaskView[];
  private snapshots = new Map<string, TaskView>();

  constructor(tasks: TaskView[]) {
    this.tasks = tasks.slice();
  }

  allTasks(): TaskView[] {
    return this.tasks.slice();
  }

  openTasks(): TaskView[] {
    return this.tasks.filter((task) => task.status === "open");
  }

  task(taskId: string): TaskView | undefined {
    return this.tasks.find((task) => task.task_id === taskId);
  }

  /** Mark a task resolved locally before the server confirms. */
  beginResolve(taskId: string, points: string, reviewer: string): void {
    const index = this.tasks.findIndex((task) => task.task_id === taskId);
    if (index < 0 || this.snapshots.has(taskId)) {
      return;
    }
    const current = this.tasks[index];
    this.snapshots.set(taskId, current);
    this.tasks[index] = {
      ...current,
      status: "resolved",
      final_points: points,
      resolution: {
        final_points: points,
        reviewer,
        note: "",
        resolved_at: "",
      },
    };
  }

  /** Replace the optimistic copy with what the server stored. */
  commitResolve(serverTask: TaskView): void {
    this.snapshots.delete(serverTask.task_id);
    const index = this.tasks.findIndex((task) => task.task_id === serverTask.task_id);
    if (index < 0) {
      this.tasks.push(serverTask);
    } else {
      this.tasks[index] = serverTask;
    }
  }

  /** Undo an optimistic resolve that the server rejected. */
  rollback(taskId: string): void {
    const snapshot = this.snapshots.get(taskId);
    if (!snapshot) {
      return;
    }
    this.snapshots.delete(taskId);
    const index = this.tasks.findIndex((task) => task.task_id === taskId);
    if (index >= 0) {
      this.tasks[index] = snapshot;
    }
  }
}
