// Hash-routed single page application for the review console.
//
// All rendering logic lives in the pure view modules; this file only
// routes, fetches, and wires DOM events. Event listeners are delegated
// from the root node once, so re-rendering never re-attaches anything.

import {
  ApiError,
  fetchQueue,
  fetchReport,
  fetchRuns,
  fetchTask,
  resolveTask,
} from "./api.js";
import { QueueState } from "./state.js";
import type { TaskDetail } from "./types.js";
import {
  DetailUiState,
  QueueFilters,
  renderErrorBanner,
  renderLoading,
  renderQueue,
  renderReport,
  renderRunList,
  renderTaskDetail,
} from "./views.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}
const app: HTMLElement = root;

const queueCache = new Map<string, QueueState>();
let filters: QueueFilters = { problem: "", reason: "" };
let currentRunId: string | null = null;
let currentDetail: TaskDetail | null = null;
let detailUi: DetailUiState = { rawMath: false, banner: null, busy: false };
let retry: (() => void) | null = null;

function showError(error: unknown, reload: () => void): void {
  retry = reload;
  const message = error instanceof Error ? error.message : String(error);
  app.innerHTML = renderErrorBanner(message, true);
}

async function showRuns(): Promise<void> {
  app.innerHTML = renderLoading("runs");
  try {
    const runs = await fetchRuns();
    app.innerHTML = renderRunList(runs);
  } catch (error) {
    showError(error, () => void showRuns());
  }
}

function renderQueuePage(runId: string, state: QueueState): void {
  app.innerHTML =
    renderQueue(runId, state.openTasks(), filters) +
    '<p class="queue-actions"><button data-action="refresh-queue">refresh</button></p>';
}

async function showQueue(runId: string, forceReload = false): Promise<void> {
  currentRunId = runId;
  const cached = queueCache.get(runId);
  if (cached && !forceReload) {
    renderQueuePage(runId, cached);
    return;
  }
  app.innerHTML = renderLoading(`queue for ${runId}`);
  try {
    const queue = await fetchQueue(runId);
    const state = new QueueState(queue.tasks);
    queueCache.set(runId, state);
    renderQueuePage(runId, state);
  } catch (error) {
    showError(error, () => void showQueue(runId, true));
  }
}

function rerenderDetail(): void {
  if (currentDetail) {
    app.innerHTML = renderTaskDetail(currentDetail, detailUi);
  }
}

async function showTask(taskId: string): Promise<void> {
  app.innerHTML = renderLoading("task");
  try {
    currentDetail = await fetchTask(taskId);
    currentRunId = currentDetail.run_id;
    detailUi = { rawMath: false, banner: null, busy: false };
    rerenderDetail();
  } catch (error) {
    showError(error, () => void showTask(taskId));
  }
}

async function showReport(runId: string): Promise<void> {
  app.innerHTML = renderLoading("report");
  try {
    app.innerHTML = renderReport(await fetchReport(runId));
  } catch (error) {
    showError(error, () => void showReport(runId));
  }
}

function route(): void {
  const hash = window.location.hash || "#/";
  const report = hash.match(/^#\/runs\/([^/]+)\/report$/);
  if (report) {
    void showReport(decodeURIComponent(report[1]));
    return;
  }
  const queue = hash.match(/^#\/runs\/([^/]+)$/);
  if (queue) {
    void showQueue(decodeURIComponent(queue[1]));
    return;
  }
  const task = hash.match(/^#\/tasks\/([^/]+)$/);
  if (task) {
    void showTask(decodeURIComponent(task[1]));
    return;
  }
  void showRuns();
}

function formValues(form: HTMLFormElement): { points: string; reviewer: string; note: string } {
  const points = (form.elements.namedItem("points") as HTMLSelectElement | null)?.value ?? "";
  const reviewer =
    (form.elements.namedItem("reviewer") as HTMLInputElement | null)?.value.trim() ?? "";
  const note = (form.elements.namedItem("note") as HTMLTextAreaElement | null)?.value ?? "";
  return { points, reviewer, note };
}

function syncSubmitState(form: HTMLFormElement): void {
  const { points, reviewer } = formValues(form);
  const submit = form.querySelector<HTMLButtonElement>(".resolve-submit");
  if (submit) {
    submit.disabled = detailUi.busy || !points || !reviewer;
  }
}

function restoreFormValues(values: { points: string; reviewer: string; note: string }): void {
  const form = app.querySelector<HTMLFormElement>("form[data-action='resolve']");
  if (!form) {
    return;
  }
  (form.elements.namedItem("points") as HTMLSelectElement | null)?.setAttribute("value", "");
  const points = form.elements.namedItem("points") as HTMLSelectElement | null;
  if (points) {
    points.value = values.points;
  }
  const reviewer = form.elements.namedItem("reviewer") as HTMLInputElement | null;
  if (reviewer) {
    reviewer.value = values.reviewer;
  }
  const note = form.elements.namedItem("note") as HTMLTextAreaElement | null;
  if (note) {
    note.value = values.note;
  }
  syncSubmitState(form);
}

async function handleResolve(form: HTMLFormElement): Promise<void> {
  if (!currentDetail || detailUi.busy) {
    return;
  }
  const values = formValues(form);
  if (!values.points || !values.reviewer) {
    return;
  }
  const taskId = currentDetail.task_id;
  const state = currentRunId ? queueCache.get(currentRunId) : undefined;
  state?.beginResolve(taskId, values.points, values.reviewer);
  detailUi = { ...detailUi, busy: true, banner: null };
  syncSubmitState(form);
  try {
    const serverView = await resolveTask(taskId, values.points, values.reviewer, values.note);
    state?.commitResolve(serverView);
    currentDetail = { ...currentDetail, ...serverView };
    detailUi = { ...detailUi, busy: false };
    rerenderDetail();
  } catch (error) {
    state?.rollback(taskId);
    detailUi = { ...detailUi, busy: false };
    if (error instanceof ApiError && error.status === 409) {
      try {
        const fresh = await fetchTask(taskId);
        currentDetail = fresh;
        state?.commitResolve(fresh);
        const reviewer = fresh.resolution?.reviewer ?? "another reviewer";
        detailUi = { ...detailUi, banner: `already resolved by ${reviewer}` };
        rerenderDetail();
        return;
      } catch {
        // fall through to the generic banner
      }
    }
    detailUi = {
      ...detailUi,
      banner: error instanceof Error ? error.message : String(error),
    };
    rerenderDetail();
    restoreFormValues(values);
  }
}

app.addEventListener("click", (event) => {
  const target = event.target as HTMLElement | null;
  const button = target?.closest<HTMLElement>("[data-action]");
  if (!button) {
    return;
  }
  const action = button.dataset.action;
  if (action === "toggle-raw") {
    detailUi = { ...detailUi, rawMath: !detailUi.rawMath };
    rerenderDetail();
  } else if (action === "retry") {
    retry?.();
  } else if (action === "refresh-queue" && currentRunId) {
    void showQueue(currentRunId, true);
  }
});

app.addEventListener("input", (event) => {
  const form = (event.target as HTMLElement | null)?.closest<HTMLFormElement>(
    "form[data-action='resolve']",
  );
  if (form) {
    syncSubmitState(form);
  }
});

app.addEventListener("change", (event) => {
  const target = event.target as HTMLElement | null;
  const filter = target?.closest<HTMLSelectElement>("select[data-filter]");
  if (filter && currentRunId) {
    filters = { ...filters, [filter.dataset.filter as keyof QueueFilters]: filter.value };
    const state = queueCache.get(currentRunId);
    if (state) {
      renderQueuePage(currentRunId, state);
    }
    return;
  }
  const form = target?.closest<HTMLFormElement>("form[data-action='resolve']");
  if (form) {
    syncSubmitState(form);
  }
});

app.addEventListener("submit", (event) => {
  const form = (event.target as HTMLElement | null)?.closest<HTMLFormElement>(
    "form[data-action='resolve']",
  );
  if (form) {
    event.preventDefault();
    void handleResolve(form);
  }
});

window.addEventListener("hashchange", route);
route();
