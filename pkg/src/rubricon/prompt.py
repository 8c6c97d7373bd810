"""Prompt templates and model-reply parsers.

The template strings below are the contract with the model: rendering is
pure string substitution, and the golden files under tests/golden pin
every byte.  Change them only together with those files.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConfigError, ParseError

FORMAT_VERBALIZED = "verbalized"
FORMAT_MCQ = "mcq"
JUDGEMENT_FORMATS = (FORMAT_VERBALIZED, FORMAT_MCQ)

VERDICT_YES = "yes"
VERDICT_NO = "no"
VERDICT_UNSURE = "unsure"

TRANSCRIPTION_SYSTEM = (
    "Extract the text from the image in LaTeX. "
    "The output should only contain the text in LaTeX. "
    "If no text is identified in the image, return Empty."
)

QUESTION_CONTEXT_TEMPLATE = "Question: {question}"

IGNORE_SENTENCE = (
    "Ignore the additional information in the student answer "
    "that is irrelevant to the grading rule."
)

_JUDGEMENT_LEAD = "Determine whether the student answer includes the solution in the grading rule."

_VERBALIZED_TAIL = (
    "Provide a short explanation of your decision.\n"
    "\n"
    "The output should strictly use the following template:\n"
    "\n"
    "Judgement: [Yes/No]\n"
    "\n"
    "Explanation: [Explanation]"
)

_MCQ_TAIL = (
    "Choose from: (A) Yes (B) No (C) I am not sure.\n"
    "\n"
    "Provide a short explanation of your decision.\n"
    "\n"
    "The output should strictly use the following template:\n"
    "\n"
    "Judgement: [A/B/C]\n"
    "\n"
    "Explanation: [Explanation]"
)

RULE_USER_TEMPLATE = "Grading rule: {rule}\nStudent answer: {answer}"

FREE_SYSTEM = (
    "Based on the question and the maximum number of points, determine the "
    "number of points to be awarded to the student answer. The number must "
    "be an integer. Provide an explanation for your decision.\n"
    "\n"
    "The output should strictly use the following template:\n"
    "\n"
    "Points: [Number of points]\n"
    "\n"
    "Explanation: [Explanation]"
)

FREE_USER_TEMPLATE = "Question: {question}\nMaximum points: {max_points}\nStudent answer: {answer}"

PARAPHRASE_INSTRUCTION = (
    "generate a variation of the following instruction "
    "while keeping the semantic meaning."
)


def render_transcription_prompt(
    question_text: str | None = None,
) -> tuple[str, str | None]:
    """System prompt for image transcription, plus an optional context line.

    When question_text is given, the returned second element is a text
    block to place before the image so the reader knows what was asked.
    """
    if question_text is None:
        return TRANSCRIPTION_SYSTEM, None
    if not question_text.strip():
        raise ConfigError("question context requested but question text is empty")
    return TRANSCRIPTION_SYSTEM, QUESTION_CONTEXT_TEMPLATE.format(question=question_text)


def judgement_system(format: str, ignore_statement: bool) -> str:
    """The instruction block for a single-rule judgement request."""
    if format not in JUDGEMENT_FORMATS:
        raise ConfigError(f"unknown judgement format: {format!r}")
    lead = _JUDGEMENT_LEAD
    if ignore_statement:
        lead = f"{lead} {IGNORE_SENTENCE}"
    tail = _VERBALIZED_TAIL if format == FORMAT_VERBALIZED else _MCQ_TAIL
    return f"{lead}\n\n{tail}"


def render_rule_prompt(
    rule_text: str,
    answer_text: str,
    format: str = FORMAT_VERBALIZED,
    ignore_statement: bool = True,
) -> tuple[str, str]:
    """Render one grading-rule judgement request as (system, user)."""
    if not rule_text.strip():
        raise ConfigError("rule text must not be empty")
    system = judgement_system(format, ignore_statement)
    user = RULE_USER_TEMPLATE.format(rule=rule_text, answer=answer_text)
    return system, user


def render_free_prompt(
    question_text: str,
    max_points: int,
    answer_text: str,
) -> tuple[str, str]:
    """Render a whole-problem point award request as (system, user)."""
    if not question_text.strip():
        raise ConfigError("question text must not be empty")
    if not isinstance(max_points, int) or isinstance(max_points, bool) or max_points < 1:
        raise ConfigError(f"max_points must be a positive integer, got {max_points!r}")
    user = FREE_USER_TEMPLATE.format(
        question=question_text, max_points=max_points, answer=answer_text
    )
    return FREE_SYSTEM, user


def render_paraphrase_prompt(rule_text: str) -> str:
    """Render a rule-rewording request as one user message."""
    if not rule_text.strip():
        raise ConfigError("rule text must not be empty")
    return f"{PARAPHRASE_INSTRUCTION}\n\n{rule_text}"


@dataclass(frozen=True)
class JudgementOutcome:
    """Parsed verdict plus the model's free-text explanation."""

    verdict: str
    explanation: str


@dataclass(frozen=True)
class PointsOutcome:
    """Parsed integer point award plus the model's explanation."""

    points: int
    explanation: str


_LABEL_LINE = re.compile(
    r"^[ \t]*[*_#>\-]*[ \t]*(?:\*\*|__)?(?P<label>judgement|judgment|points)"
    r"(?:\*\*|__)?[ \t]*:[ \t]*(?P<rest>.*)$",
    re.IGNORECASE | re.MULTILINE,
)

_EXPLANATION_LINE = re.compile(
    r"^[ \t]*[*_#>\-]*[ \t]*(?:\*\*|__)?explanation(?:\*\*|__)?[ \t]*:[ \t]*",
    re.IGNORECASE | re.MULTILINE,
)


def _strip_token(raw: str) -> str:
    token = raw.strip()
    token = token.strip("*_`")
    token = token.strip()
    if token.startswith("[") and token.endswith("]") and len(token) > 2:
        token = token[1:-1].strip()
    if token.startswith("(") and token.endswith(")") and len(token) > 2:
        token = token[1:-1].strip()
    return token


def _find_label(text: str, wanted: tuple[str, ...]) -> str | None:
    for match in _LABEL_LINE.finditer(text):
        if match.group("label").casefold() in wanted:
            return match.group("rest")
    return None


def _extract_explanation(text: str) -> str:
    match = _EXPLANATION_LINE.search(text)
    if match is None:
        return ""
    return text[match.end():].strip()


_YES_TOKENS = {"yes"}
_NO_TOKENS = {"no"}
_MCQ_MAP = {"a": VERDICT_YES, "b": VERDICT_NO, "c": VERDICT_UNSURE}


def parse_judgement(text: str, format: str = FORMAT_VERBALIZED) -> JudgementOutcome:
    """Read the first judgement line out of a model reply.

    Accepts markdown emphasis and flexible spacing around the label.
    In multiple-choice format the letters A/B/C map to yes/no/unsure;
    an unsure verdict is only possible there.
    """
    if format not in JUDGEMENT_FORMATS:
        raise ConfigError(f"unknown judgement format: {format!r}")
    rest = _find_label(text, ("judgement", "judgment"))
    if rest is None:
        raise ParseError("no judgement line found in reply")
    token = _strip_token(rest.split("\n", 1)[0])
    # A trailing sentence after the verdict token should not defeat parsing.
    first_word = _strip_token(token.split()[0]) if token.split() else ""
    candidates = {token.casefold(), first_word.casefold()}
    explanation = _extract_explanation(text)

    for candidate in candidates:
        bare = candidate.rstrip(".,;:!")
        if bare in _YES_TOKENS:
            return JudgementOutcome(VERDICT_YES, explanation)
        if bare in _NO_TOKENS:
            return JudgementOutcome(VERDICT_NO, explanation)
    if format == FORMAT_MCQ:
        for candidate in candidates:
            bare = candidate.rstrip(".,;:!")
            if bare in _MCQ_MAP:
                return JudgementOutcome(_MCQ_MAP[bare], explanation)
        if "i am not sure" in text.casefold():
            return JudgementOutcome(VERDICT_UNSURE, explanation)
    raise ParseError(f"unrecognized judgement token: {token!r}")


def parse_points(text: str) -> PointsOutcome:
    """Read the first points line out of a model reply.

    Only a bare non-negative integer is accepted; anything else is a
    parse error so the caller can retry or drop the sample explicitly.
    """
    rest = _find_label(text, ("points",))
    if rest is None:
        raise ParseError("no points line found in reply")
    token = _strip_token(rest.split("\n", 1)[0])
    if token.split():
        token = _strip_token(token.split()[0])
    token = token.rstrip(".,;:!")
    if not re.fullmatch(r"[+-]?\d+", token):
        raise ParseError(f"points value is not an integer: {token!r}")
    points = int(token)
    if points < 0:
        raise ParseError(f"points value is negative: {points}")
    return PointsOutcome(points, _extract_explanation(text))
