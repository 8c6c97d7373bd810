import { describe, expect, it } from "vitest";

import { histogramBars, renderHistogram } from "../src/histogram.js";

describe("histogramBars", () => {
  it("collapses repeated point values into counted bars", () => {
    expect(histogramBars(["1", "1", "1.5", "1", "1"])).toEqual([
      { label: "1", count: 4 },
      { label: "1.5", count: 1 },
    ]);
  });

  it("orders bars numerically, understanding fraction labels", () => {
    const bars = histogramBars(["1", "0", "1/2", "1/2"]);
    expect(bars.map((b) => b.label)).toEqual(["0", "1/2", "1"]);
    expect(bars.map((b) => b.count)).toEqual([1, 2, 1]);
  });
});

describe("renderHistogram", () => {
  it("draws one bar per distinct value with its count", () => {
    const svg = renderHistogram(["1", "1", "1.5", "1", "1"]);
    expect(svg.match(/<rect class="bar"/g)).toHaveLength(2);
    expect(svg).toContain('data-value="1" data-count="4"');
    expect(svg).toContain('data-value="1.5" data-count="1"');
  });

  it("labels each bar with its value and count", () => {
    const svg = renderHistogram(["0", "2", "2"]);
    expect(svg).toMatch(/class="bar-label"[^>]*>0</);
    expect(svg).toMatch(/class="bar-label"[^>]*>2</);
    expect(svg).toMatch(/class="bar-count"[^>]*>2</);
  });

  it("shows a placeholder when there are no samples", () => {
    expect(renderHistogram([])).toContain("no samples");
    expect(renderHistogram([])).not.toContain("<svg");
  });

  it("escapes labels before embedding them", () => {
    const svg = renderHistogram(["<b>"]);
    expect(svg).not.toContain("<b>");
    expect(svg).toContain("&lt;b&gt;");
  });
});
