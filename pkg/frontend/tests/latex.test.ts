import { describe, expect, it } from "vitest";

import { escapeHtml, typesetMath } from "../src/latex.js";

describe("escapeHtml", () => {
  it("neutralizes markup characters", () => {
    expect(escapeHtml('<script>alert("x")</script>')).toBe(
      "&lt;script&gt;alert(&quot;x&quot;)&lt;/script&gt;",
    );
  });

  it("escapes ampersands first", () => {
    expect(escapeHtml("a & b < c")).toBe("a &amp; b &lt; c");
  });
});

describe("typesetMath", () => {
  it("renders superscripts and subscripts", () => {
    const html = typesetMath("x^2 + y^{10} - a_1 - b_{cd}");
    expect(html).toContain("x<sup>2</sup>");
    expect(html).toContain("y<sup>10</sup>");
    expect(html).toContain("a<sub>1</sub>");
    expect(html).toContain("b<sub>cd</sub>");
  });

  it("renders fractions, including nested ones", () => {
    const html = typesetMath("\\frac{\\frac{1}{2}}{3}");
    expect(html.match(/class="frac"/g)).toHaveLength(2);
    expect(html).toContain('<span class="frac-num">1</span>');
    expect(html).toContain('<span class="frac-den">3</span>');
  });

  it("renders square roots and common symbols", () => {
    const html = typesetMath("\\sqrt{2} \\cdot \\pi \\le \\infty");
    expect(html).toContain("&radic;");
    expect(html).toContain('<span class="sqrt-body">2</span>');
    expect(html).toContain("&middot;");
    expect(html).toContain("&pi;");
    expect(html).toContain("&le;");
    expect(html).toContain("&infin;");
  });

  it("drops math delimiters and turns newlines into breaks", () => {
    expect(typesetMath("$x = 1$\n$y = 2$")).toBe("x = 1<br>y = 2");
  });

  it("never lets transcript content inject markup", () => {
    const html = typesetMath('<img src=x onerror="steal()">^2');
    expect(html).not.toContain("<img");
    expect(html).toContain("&lt;img");
    expect(html).toContain("<sup>2</sup>");
  });

  it("leaves unknown or broken constructs visible instead of hiding them", () => {
    const broken = typesetMath("\\frac{1}{ and \\mystery{x}");
    expect(broken).toContain("\\frac{1}{");
    expect(broken).toContain("\\mystery");
    expect(typeof typesetMath("}}}{{{")).toBe("string");
  });
});
