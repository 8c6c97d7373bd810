// Best-effort display of LaTeX-flavoured transcript text as HTML.
//
// Transcripts come from a vision model and are LaTeX-ish at best, so this
// is a readability aid, not a typesetter: a small set of constructs is
// rendered, everything else stays visible as escaped text, and any failure
// falls back to the raw string. The views always offer the raw text in a
// toggle, so nothing here can hide content.

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const GROUP = "\\{([^{}]*)\\}";
const FRAC_RE = new RegExp("\\\\[dt]?frac\\s*" + GROUP + "\\s*" + GROUP, "g");
const SQRT_RE = new RegExp("\\\\sqrt\\s*" + GROUP, "g");
const SUP_GROUP_RE = new RegExp("\\^" + GROUP, "g");
const SUB_GROUP_RE = new RegExp("_" + GROUP, "g");

const SYMBOLS: Array<[RegExp, string]> = [
  [/\\cdot\b/g, "&middot;"],
  [/\\times\b/g, "&times;"],
  [/\\pm\b/g, "&plusmn;"],
  [/\\leq?\b/g, "&le;"],
  [/\\geq?\b/g, "&ge;"],
  [/\\neq?\b/g, "&ne;"],
  [/\\approx\b/g, "&asymp;"],
  [/\\infty\b/g, "&infin;"],
  [/\\pi\b/g, "&pi;"],
  [/\\alpha\b/g, "&alpha;"],
  [/\\beta\b/g, "&beta;"],
  [/\\lambda\b/g, "&lambda;"],
  [/\\sigma\b/g, "&sigma;"],
  [/\\sum\b/g, "&sum;"],
  [/\\int\b/g, "&int;"],
  [/\\to\b/g, "&rarr;"],
  [/\\rightarrow\b/g, "&rarr;"],
  [/\\in\b/g, "&isin;"],
  [/\\left\b/g, ""],
  [/\\right\b/g, ""],
];

function render(source: string): string {
  let html = escapeHtml(source);
  html = html.replace(/\$\$?/g, "");
  // Innermost groups carry no braces after replacement, so repeated
  // passes resolve nesting; the bound guards against pathological input.
  for (let pass = 0; pass < 12; pass++) {
    const before = html;
    html = html
      .replace(
        FRAC_RE,
        '<span class="frac"><span class="frac-num">$1</span><span class="frac-den">$2</span></span>',
      )
      .replace(SQRT_RE, '<span class="sqrt">&radic;<span class="sqrt-body">$1</span></span>')
      .replace(SUP_GROUP_RE, "<sup>$1</sup>")
      .replace(SUB_GROUP_RE, "<sub>$1</sub>");
    if (html === before) {
      break;
    }
  }
  html = html.replace(/\^([A-Za-z0-9])/g, "<sup>$1</sup>");
  html = html.replace(/_([A-Za-z0-9])/g, "<sub>$1</sub>");
  for (const [pattern, replacement] of SYMBOLS) {
    html = html.replace(pattern, replacement);
  }
  return html.replace(/\n/g, "<br>");
}

export function typesetMath(source: string): string {
  try {
    return render(source);
  } catch {
    return escapeHtml(source);
  }
}
