"""Regenerate the bundled offline demo under fixtures/mock_exam.

Writes one scanned-page stand-in per student plus the scripted mock
responses for the whole pipeline: page transcriptions carrying the
printed markers, and per-rule judgement patterns that exercise every
decision path (confident grades, deferrals for spread, one blank
answer).  Rerun after changing the demo exam or the scripted verdicts:

    python3 scripts/make_mock_fixtures.py
"""
from __future__ import annotations

import io
from pathlib import Path

from PIL import Image

from rubricon.fixtures import FixtureSet, judgement_reply

ROOT = Path(__file__).resolve().parent.parent / "fixtures" / "mock_exam"

RULES = {
    "p1-root2": "States that x = 2 solves the equation.",
    "p1-root3": "States that x = 3 solves the equation.",
    "p2-derivative": "Computes the derivative f'(x) = 3x^2 - 2.",
    "p2-value": "Evaluates the derivative at x = 1 to get 1.",
    "p3-antiderivative": "Finds the antiderivative x^2.",
    "p3-value": "States that the value of the integral is 1.",
}

PAGE_HEADERS = {
    "1": "Problem 1 (2 points): Solve x^2 - 5x + 6 = 0.",
    "2": "Problem 2 (2 points): Compute the derivative of f(x) = x^3 - 2x at x = 1.",
    "3": "Problem 3 (2 points): Evaluate the integral of 2x from x = 0 to x = 1.",
}

ANSWERS = {
    ("s01", "1"): "x = 2 and x = 3 both solve the equation.",
    ("s01", "2"): "f'(x) = 3x^2 - 2, so f'(1) = 3 - 2 = 1.",
    ("s01", "3"): "\\int_0^1 2x\\,dx = [x^2]_0^1 = 1.",
    ("s02", "1"): "x = 2 is a solution.",
    ("s02", "2"): "f'(1) = 1 by the power rule.",
    ("s02", "3"): "The antiderivative is x^2, maybe the value is 1.",
    ("s03", "1"): "x = 2, x = 3, and x = 6 all solve it.",
    ("s03", "2"): "The derivative is 3x^2 and its value is 3.",
    ("s03", "3"): "",
}

YES = judgement_reply("Yes", "The answer satisfies the rule.")
NO = judgement_reply("No", "The answer does not satisfy the rule.")

# One verdict list per (student, problem, rule).  A single entry replays
# for every sample; a five-entry list cycles per grading run, so every
# transcript variant sees the same run pattern.
VERDICTS = {
    ("s01", "1", "p1-root2"): [YES],
    ("s01", "1", "p1-root3"): [YES],
    ("s01", "2", "p2-derivative"): [YES],
    ("s01", "2", "p2-value"): [YES],
    ("s01", "3", "p3-antiderivative"): [YES],
    ("s01", "3", "p3-value"): [YES],
    ("s02", "1", "p1-root2"): [YES],
    ("s02", "1", "p1-root3"): [NO],
    ("s02", "2", "p2-derivative"): [YES, YES, NO, NO, NO],
    ("s02", "2", "p2-value"): [YES, YES, NO, NO, NO],
    ("s02", "3", "p3-antiderivative"): [YES],
    ("s02", "3", "p3-value"): [NO, NO, NO, NO, YES],
    ("s03", "1", "p1-root2"): [YES],
    ("s03", "1", "p1-root3"): [YES],
    ("s03", "2", "p2-derivative"): [NO],
    ("s03", "2", "p2-value"): [NO],
}

PAGE_COLORS = {"s01": (235, 235, 235), "s02": (210, 210, 210), "s03": (185, 185, 185)}


def page_text(student_id: str) -> str:
    blocks = []
    for problem_id, header in PAGE_HEADERS.items():
        answer = ANSWERS[(student_id, problem_id)]
        marker = (
            f"Solution Problem {problem_id}:"
            if problem_id == "3"
            else f"Solution of Problem {problem_id}:"
        )
        blocks.append(f"{header}\n{marker}\n{answer}")
    return "\n\n".join(blocks)


def page_png(student_id: str) -> bytes:
    image = Image.new("RGB", (64, 96), PAGE_COLORS[student_id])
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def main() -> None:
    fixtures = FixtureSet()
    for student_id in ("s01", "s02", "s03"):
        png = page_png(student_id)
        page_dir = ROOT / "pages" / student_id
        page_dir.mkdir(parents=True, exist_ok=True)
        (page_dir / "page1.png").write_bytes(png)
        fixtures.script_transcription(png, [page_text(student_id)])

    for (student_id, problem_id, rule_id), replies in VERDICTS.items():
        fixtures.script_judgement(RULES[rule_id], ANSWERS[(student_id, problem_id)], replies)

    path = fixtures.write(ROOT / "responses")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
