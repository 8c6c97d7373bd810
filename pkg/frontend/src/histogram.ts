// SVG histogram of the point values the grading samples awarded.
// Counting occurrences for display is the only arithmetic performed;
// the values themselves are API strings and stay untouched.

import { escapeHtml } from "./latex.js";

export interface HistogramBar {
  label: string;
  count: number;
}

function numericOrder(label: string): number {
  const slash = label.indexOf("/");
  if (slash > 0) {
    const numerator = Number(label.slice(0, slash));
    const denominator = Number(label.slice(slash + 1));
    if (Number.isFinite(numerator) && denominator) {
      return numerator / denominator;
    }
  }
  const value = Number(label);
  return Number.isFinite(value) ? value : Number.POSITIVE_INFINITY;
}

export function histogramBars(pointValues: string[]): HistogramBar[] {
  const counts = new Map<string, number>();
  for (const value of pointValues) {
    counts.set(value, (counts.get(value) ?? 0) + 1);
  }
  return Array.from(counts, ([label, count]) => ({ label, count })).sort(
    (a, b) => numericOrder(a.label) - numericOrder(b.label),
  );
}

const WIDTH = 320;
const BAR_AREA_HEIGHT = 96;
const LABEL_HEIGHT = 18;
const COUNT_HEIGHT = 14;

export function renderHistogram(pointValues: string[]): string {
  const bars = histogramBars(pointValues);
  if (bars.length === 0) {
    return '<p class="histogram-empty">no samples</p>';
  }
  const peak = Math.max(...bars.map((bar) => bar.count));
  const slot = WIDTH / bars.length;
  const barWidth = Math.min(48, slot * 0.7);
  const height = COUNT_HEIGHT + BAR_AREA_HEIGHT + LABEL_HEIGHT;
  const parts: string[] = [];
  bars.forEach((bar, index) => {
    const barHeight = Math.max(2, Math.round((bar.count / peak) * BAR_AREA_HEIGHT));
    const x = index * slot + (slot - barWidth) / 2;
    const y = COUNT_HEIGHT + (BAR_AREA_HEIGHT - barHeight);
    const center = index * slot + slot / 2;
    const label = escapeHtml(bar.label);
    parts.push(
      `<rect class="bar" data-value="${label}" data-count="${bar.count}" ` +
        `x="${x.toFixed(1)}" y="${y}" width="${barWidth.toFixed(1)}" height="${barHeight}"></rect>`,
      `<text class="bar-count" x="${center.toFixed(1)}" y="${y - 3}" text-anchor="middle">${bar.count}</text>`,
      `<text class="bar-label" x="${center.toFixed(1)}" y="${height - 4}" text-anchor="middle">${label}</text>`,
    );
  });
  return (
    `<svg class="histogram" role="img" viewBox="0 0 ${WIDTH} ${height}" ` +
    `aria-label="distribution of sampled point values">${parts.join("")}</svg>`
  );
}
