// HTML renderers for every console screen. Views are pure functions from
// API payloads to markup strings: no fetching, no grading arithmetic, so
// tests can assert on the exact output without a browser.

import { renderHistogram } from "./histogram.js";
import { escapeHtml, typesetMath } from "./latex.js";
import type {
  AggregateView,
  ProblemReport,
  QueueView,
  RunReport,
  RunView,
  TaskDetail,
  TaskView,
} from "./types.js";

export interface QueueFilters {
  problem: string;
  reason: string;
}

export interface DetailUiState {
  rawMath: boolean;
  banner: string | null;
  busy: boolean;
}

export function formatNumber(value: number | null | undefined): string {
  if (value === null || value === undefined) {
    return "n/a";
  }
  const fixed = value.toFixed(2);
  return fixed.replace(/\.?0+$/, "") || "0";
}

export function formatPercent(value: number | null | undefined): string {
  if (value === null || value === undefined) {
    return "n/a";
  }
  return `${Math.round(value * 100)}%`;
}

function spreadText(aggregate: Partial<AggregateView>): string {
  if (aggregate.mean === null || aggregate.mean === undefined) {
    return "n/a";
  }
  return `${formatNumber(aggregate.mean)} &plusmn; ${formatNumber(aggregate.sigma)}`;
}

export function renderRunList(runs: RunView[]): string {
  if (runs.length === 0) {
    return '<p class="empty">no runs recorded yet</p>';
  }
  const rows = runs
    .map(
      (run) => `
  <tr class="run-row" data-run-id="${escapeHtml(run.run_id)}">
    <td><a href="#/runs/${encodeURIComponent(run.run_id)}">${escapeHtml(run.run_id)}</a></td>
    <td>${escapeHtml(run.created_at ?? "")}</td>
    <td class="num">${run.n_items}</td>
    <td class="num">${run.n_deferred}</td>
    <td class="num">${run.n_open_tasks}</td>
    <td><a href="#/runs/${encodeURIComponent(run.run_id)}/report">report</a></td>
  </tr>`,
    )
    .join("");
  return `
<section class="runs">
  <h2>Runs</h2>
  <table>
    <thead><tr><th>run</th><th>created</th><th>items</th><th>deferred</th><th>open tasks</th><th></th></tr></thead>
    <tbody>${rows}</tbody>
  </table>
</section>`;
}

function filterSelect(name: keyof QueueFilters, values: string[], selected: string): string {
  const options = ['<option value="">all</option>']
    .concat(
      values.map((value) => {
        const chosen = value === selected ? " selected" : "";
        return `<option value="${escapeHtml(value)}"${chosen}>${escapeHtml(value)}</option>`;
      }),
    )
    .join("");
  return `<label>${name} <select data-filter="${name}">${options}</select></label>`;
}

function taskRow(task: TaskView): string {
  const aggregate = task.aggregate;
  return `
  <tr class="task-row" data-task-id="${escapeHtml(task.task_id)}"
      data-problem="${escapeHtml(task.problem_id)}" data-reason="${escapeHtml(task.reason)}">
    <td>${escapeHtml(task.student_id)}</td>
    <td>${escapeHtml(task.problem_id)}</td>
    <td><span class="reason">${escapeHtml(task.reason)}</span></td>
    <td class="num">${spreadText(aggregate)}</td>
    <td class="num">${escapeHtml(aggregate.snapped ?? "n/a")}</td>
    <td><a class="open-task" href="#/tasks/${encodeURIComponent(task.task_id)}">review</a></td>
  </tr>`;
}

export function renderQueue(runId: string, tasks: TaskView[], filters: QueueFilters): string {
  const ordered = tasks
    .slice()
    .sort((a, b) => (a.created_at < b.created_at ? 1 : a.created_at > b.created_at ? -1 : 0));
  const problems = Array.from(new Set(ordered.map((task) => task.problem_id))).sort();
  const reasons = Array.from(new Set(ordered.map((task) => task.reason))).sort();
  const visible = ordered.filter(
    (task) =>
      (!filters.problem || task.problem_id === filters.problem) &&
      (!filters.reason || task.reason === filters.reason),
  );
  const body =
    visible.length === 0
      ? '<p class="empty">no open tasks match the filters</p>'
      : `<table>
    <thead><tr><th>student</th><th>problem</th><th>reason</th><th>mean &plusmn; &sigma;</th><th>snapped</th><th></th></tr></thead>
    <tbody>${visible.map(taskRow).join("")}</tbody>
  </table>`;
  return `
<section class="queue" data-run-id="${escapeHtml(runId)}">
  <h2>Review queue for ${escapeHtml(runId)}</h2>
  <p class="queue-count">${visible.length} open task${visible.length === 1 ? "" : "s"}</p>
  <div class="filters">
    ${filterSelect("problem", problems, filters.problem)}
    ${filterSelect("reason", reasons, filters.reason)}
  </div>
  ${body}
</section>`;
}

function transcriptBlock(
  variantIndex: number,
  text: string,
  empty: boolean,
  rawMath: boolean,
): string {
  const body = empty
    ? '<p class="empty">no answer recognized</p>'
    : rawMath
      ? `<pre class="raw">${escapeHtml(text)}</pre>`
      : `<div class="math">${typesetMath(text)}</div>`;
  return `
  <section class="transcript" data-variant="${variantIndex}">
    <h4>transcription variant ${variantIndex}</h4>
    ${body}
  </section>`;
}

function resolutionBadge(task: TaskView): string {
  const resolution = task.resolution;
  if (!resolution) {
    return "";
  }
  const note = resolution.note
    ? `<p class="resolution-note">${escapeHtml(resolution.note)}</p>`
    : "";
  return `
  <div class="resolved-box">
    <span class="badge resolved">resolved by ${escapeHtml(resolution.reviewer)}:
      ${escapeHtml(resolution.final_points)} points</span>
    ${note}
  </div>`;
}

function resolveForm(task: TaskDetail, busy: boolean): string {
  const options = ['<option value="">choose points</option>']
    .concat(
      task.assignable.map(
        (value) => `<option value="${escapeHtml(value)}">${escapeHtml(value)}</option>`,
      ),
    )
    .join("");
  const disabled = busy ? " disabled" : "";
  return `
  <form class="resolve-form" data-action="resolve" data-task-id="${escapeHtml(task.task_id)}">
    <label>final points
      <select name="points" required${disabled}>${options}</select>
    </label>
    <label>reviewer
      <input name="reviewer" type="text" autocomplete="off" required${disabled}>
    </label>
    <label>note
      <textarea name="note" rows="2"${disabled}></textarea>
    </label>
    <button type="submit" class="resolve-submit" disabled>resolve</button>
  </form>`;
}

function samplesTable(task: TaskDetail): string {
  if (task.samples.length === 0) {
    return '<p class="empty">no grading samples recorded</p>';
  }
  const rows = task.samples
    .map((sample) => {
      const judgements = sample.judgements
        .map(
          (judgement) => `
      <li class="judgement" data-rule-id="${escapeHtml(judgement.rule_id)}">
        <span class="verdict verdict-${escapeHtml(judgement.verdict)}">${escapeHtml(judgement.verdict)}</span>
        <span class="rule-text">${escapeHtml(judgement.rule_text)}</span>
        <span class="explanation">${escapeHtml(judgement.explanation)}</span>
      </li>`,
        )
        .join("");
      const explanation = sample.explanation
        ? `<div class="explanation">${escapeHtml(sample.explanation)}</div>`
        : "";
      return `
    <tr class="sample-row" data-variant="${sample.ocr_variant}" data-run="${sample.run}">
      <td class="num">${sample.ocr_variant}</td>
      <td class="num">${sample.run}</td>
      <td class="num">${escapeHtml(sample.points)}</td>
      <td><ul class="judgements">${judgements}</ul>${explanation}</td>
    </tr>`;
    })
    .join("");
  return `<table class="samples">
    <thead><tr><th>variant</th><th>run</th><th>points</th><th>judgements</th></tr></thead>
    <tbody>${rows}</tbody>
  </table>`;
}

function rulesList(task: TaskDetail): string {
  if (task.rules.length === 0) {
    return "";
  }
  const items = task.rules
    .map(
      (rule) => `
    <li data-rule-id="${escapeHtml(rule.rule_id)}">
      <span class="rule-points">${escapeHtml(rule.points)} pt</span>
      ${escapeHtml(rule.text)}
    </li>`,
    )
    .join("");
  return `<section class="rules"><h3>Rubric rules</h3><ul>${items}</ul></section>`;
}

export function renderTaskDetail(task: TaskDetail, ui: DetailUiState): string {
  const aggregate = task.aggregate;
  const banner = ui.banner ? renderErrorBanner(ui.banner, false) : "";
  const toggleLabel = ui.rawMath ? "typeset math" : "raw text";
  const action = task.status === "open" ? resolveForm(task, ui.busy) : resolutionBadge(task);
  const decisionKind = aggregate.decision?.kind ?? "unknown";
  return `
<article class="task-detail" data-task-id="${escapeHtml(task.task_id)}" data-status="${task.status}">
  ${banner}
  <header>
    <h2>student ${escapeHtml(task.student_id)}, problem ${escapeHtml(task.problem_id)}</h2>
    <p class="meta">
      <span class="reason">${escapeHtml(task.reason)}</span>
      <span class="status status-${task.status}">${task.status}</span>
      <span class="max">max ${escapeHtml(task.max_points)} points</span>
    </p>
  </header>
  <section class="question">
    <h3>Question</h3>
    <div class="math">${typesetMath(task.question_text)}</div>
  </section>
  <section class="transcripts">
    <h3>Transcriptions</h3>
    <button data-action="toggle-raw" aria-pressed="${ui.rawMath}">${toggleLabel}</button>
    ${task.transcripts
      .map((t) => transcriptBlock(t.variant_index, t.text, t.empty, ui.rawMath))
      .join("")}
  </section>
  <section class="aggregate">
    <h3>Sampled grades</h3>
    <p class="aggregate-line">
      mean ${spreadText(aggregate)},
      snapped to <strong>${escapeHtml(aggregate.snapped ?? "n/a")}</strong>,
      decision <span class="decision">${escapeHtml(decisionKind)}</span>
      (${aggregate.n_samples ?? 0} samples, ${aggregate.dropped ?? 0} dropped)
    </p>
    ${renderHistogram(task.samples.map((sample) => sample.points))}
  </section>
  ${rulesList(task)}
  <section class="sample-log">
    <h3>Individual samples</h3>
    ${samplesTable(task)}
  </section>
  <section class="resolve">
    <h3>Final grade</h3>
    ${action}
  </section>
</article>`;
}

export function renderErrorBanner(message: string, withRetry = true): string {
  const retry = withRetry ? '<button data-action="retry">retry</button>' : "";
  return `<div class="banner error" role="alert"><span>${escapeHtml(message)}</span>${retry}</div>`;
}

function reportRow(row: ProblemReport): string {
  const confidence = row.confidence;
  return `
  <tr class="report-row" data-problem="${escapeHtml(row.problem_id)}">
    <td>${escapeHtml(row.problem_id)}</td>
    <td class="num">${row.n_graded}</td>
    <td class="num">${row.n_unanswered}</td>
    <td class="num">${formatNumber(row.accuracy)}</td>
    <td class="num">${formatNumber(row.alpha)}</td>
    <td class="num">${formatNumber(confidence?.accuracy ?? null)}</td>
    <td class="num">${formatNumber(confidence?.precision ?? null)}</td>
    <td class="num">${formatNumber(confidence?.recall ?? null)}</td>
    <td class="num">${formatNumber(confidence?.f1 ?? null)}</td>
    <td class="num">${formatNumber(confidence?.fp_rate ?? null)}</td>
    <td class="num">${formatPercent(confidence?.positive_rate ?? null)}</td>
  </tr>`;
}

export function renderReport(report: RunReport): string {
  const warnings = report.truth_warnings.length
    ? `<ul class="warnings">${report.truth_warnings
        .map((warning) => `<li>${escapeHtml(warning)}</li>`)
        .join("")}</ul>`
    : "";
  return `
<section class="report" data-run-id="${escapeHtml(report.run_id)}">
  <h2>Evaluation of ${escapeHtml(report.run_id)}</h2>
  <p class="meta">agreement scale: ${escapeHtml(report.alpha_scale)}</p>
  <table>
    <thead><tr>
      <th>problem</th><th>graded</th><th>blank</th><th>accuracy</th><th>agreement</th>
      <th>decision acc</th><th>precision</th><th>recall</th><th>f1</th><th>fp rate</th><th>committed</th>
    </tr></thead>
    <tbody>
      ${report.problems.map(reportRow).join("")}
      ${reportRow(report.overall)}
    </tbody>
  </table>
  ${warnings}
</section>`;
}

export function renderLoading(label: string): string {
  return `<p class="loading">loading ${escapeHtml(label)}&hellip;</p>`;
}
