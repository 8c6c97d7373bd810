"""Turning scanned pages into per-problem answer texts.

Two routes exist: cropping answer boxes out of a page by fractional
coordinates, and splitting a whole-page transcript along printed problem
and solution markers.
"""
from __future__ import annotations

import io
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml
from PIL import Image

from .errors import DuplicateMarkerError, LayoutError, ParseError, ValidationError
from .model import ExamSpec, PageImage

logger = logging.getLogger(__name__)

EMPTY_SENTINEL = "Empty"


def detect_empty(text: str) -> bool:
    """True when a transcript is the empty-page sentinel or blank."""
    trimmed = text.strip()
    return trimmed == "" or trimmed.casefold() == EMPTY_SENTINEL.casefold()


@dataclass(frozen=True)
class Region:
    """An axis-aligned rectangle in page fractions: origin plus extent."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise LayoutError(f"region.{name}: must be a finite number")
            if value < 0:
                raise LayoutError(f"region.{name}: must be non-negative")
        if self.w <= 0 or self.h <= 0:
            raise LayoutError("region: extent must be positive")
        if self.x + self.w > 1 or self.y + self.h > 1:
            raise LayoutError(
                f"region ({self.x}, {self.y}, {self.w}, {self.h}) extends beyond the page"
            )


@dataclass(frozen=True)
class BoxLayout:
    """Maps (page_index, problem_id) to the answer box on that page."""

    entries: tuple[tuple[int, str, Region], ...]

    def __post_init__(self) -> None:
        seen: set[tuple[int, str]] = set()
        for page_index, problem_id, _region in self.entries:
            key = (page_index, problem_id)
            if key in seen:
                raise LayoutError(
                    f"layout: duplicate box for problem {problem_id} on page {page_index}"
                )
            seen.add(key)

    def for_page(self, page_index: int) -> list[tuple[str, Region]]:
        return [
            (problem_id, region)
            for idx, problem_id, region in self.entries
            if idx == page_index
        ]


def load_box_layout(path: str | Path) -> BoxLayout:
    """Read a box layout file: a list of {page, problem_id, x, y, w, h}."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read layout {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed layout {path}: {exc}") from exc
    if not isinstance(raw, Mapping) or "boxes" not in raw:
        raise ParseError(f"layout {path}: expected a mapping with a 'boxes' list")
    boxes = raw["boxes"]
    if not isinstance(boxes, Sequence) or isinstance(boxes, (str, bytes)):
        raise ParseError(f"layout {path}: 'boxes' must be a list")
    entries = []
    for i, box in enumerate(boxes):
        if not isinstance(box, Mapping):
            raise ParseError(f"layout {path}: boxes[{i}] must be a mapping")
        try:
            entries.append(
                (
                    int(box["page"]),
                    str(box["problem_id"]),
                    Region(
                        x=float(box["x"]),
                        y=float(box["y"]),
                        w=float(box["w"]),
                        h=float(box["h"]),
                    ),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"layout boxes[{i}]: missing field {exc.args[0]!r}") from None
    return BoxLayout(entries=tuple(entries))


def crop_regions(page: PageImage, layout: BoxLayout) -> list[tuple[str, PageImage]]:
    """Cut each layout box for this page out of the image.

    Pixel origin is floored and the extent ceiled, so a box never loses
    pixels to rounding.  Crops are re-encoded in the source format.
    """
    boxes = layout.for_page(page.index)
    if not boxes:
        return []
    image = Image.open(io.BytesIO(page.data))
    width, height = image.size
    fmt = image.format or "PNG"
    results: list[tuple[str, PageImage]] = []
    for problem_id, region in boxes:
        left = math.floor(region.x * width)
        top = math.floor(region.y * height)
        extent_w = math.ceil(region.w * width)
        extent_h = math.ceil(region.h * height)
        crop = image.crop((left, top, left + extent_w, top + extent_h))
        buffer = io.BytesIO()
        crop.save(buffer, format=fmt)
        results.append(
            (problem_id, PageImage(index=page.index, data=buffer.getvalue(), media_type=page.media_type))
        )
    return results


DEFAULT_PROBLEM_PATTERN = (
    r"^[ \t]*(?:\*\*)?Problem[ \t]+(?P<pid>\d+(?:\.\w+)*)[ \t]*"
    r"\([ \t]*(?P<points>\d+(?:\.\d+)?)[ \t]*points?[ \t]*\)[ \t]*:?"
)
DEFAULT_SOLUTION_PATTERN = (
    r"^[ \t]*(?:\*\*)?Solution[ \t]+(?:of[ \t]+)?(?:the[ \t]+)?"
    r"Problem[ \t]+(?P<pid>\d+(?:\.\w+)*)[ \t]*:?"
)


@dataclass(frozen=True)
class MarkerGrammar:
    """Regexes locating printed problem and solution markers on a page.

    Both patterns must anchor at a line start and expose a 'pid' group;
    matching is case-insensitive so transcription noise in casing does
    not break dissection.
    """

    problem_pattern: str = DEFAULT_PROBLEM_PATTERN
    solution_pattern: str = DEFAULT_SOLUTION_PATTERN

    def __post_init__(self) -> None:
        for name, pattern in (
            ("problem_pattern", self.problem_pattern),
            ("solution_pattern", self.solution_pattern),
        ):
            if not pattern.startswith("^"):
                raise ValidationError(f"marker grammar {name}: must anchor at line start with '^'")
            try:
                compiled = re.compile(pattern, re.IGNORECASE | re.MULTILINE)
            except re.error as exc:
                raise ValidationError(f"marker grammar {name}: invalid regex: {exc}") from exc
            if "pid" not in compiled.groupindex:
                raise ValidationError(f"marker grammar {name}: needs a named group 'pid'")


DEFAULT_MARKER_GRAMMAR = MarkerGrammar()


@dataclass(frozen=True)
class DissectionResult:
    """Per-problem answer texts plus problems whose marker never appeared."""

    answers: Mapping[str, str]
    missing: tuple[str, ...]


def dissect_transcript(
    page_text: str,
    exam: ExamSpec,
    grammar: MarkerGrammar = DEFAULT_MARKER_GRAMMAR,
) -> DissectionResult:
    """Split a whole-page transcript into per-problem answers.

    The answer to problem N is everything strictly between its solution
    marker and the next marker of either kind (or end of page), trimmed.
    Text between a problem marker and its solution marker is the printed
    question and is discarded.  A problem id mentioned mid-line never
    starts a new segment because markers only match at line starts.
    """
    problem_re = re.compile(grammar.problem_pattern, re.IGNORECASE | re.MULTILINE)
    solution_re = re.compile(grammar.solution_pattern, re.IGNORECASE | re.MULTILINE)

    markers: list[tuple[int, int, str, str]] = []
    for match in problem_re.finditer(page_text):
        markers.append((match.start(), match.end(), "problem", match.group("pid")))
    for match in solution_re.finditer(page_text):
        markers.append((match.start(), match.end(), "solution", match.group("pid")))
    markers.sort(key=lambda m: m[0])

    known = {pid.casefold(): pid for pid in exam.problem_ids()}
    answers: dict[str, str] = {}
    seen_solutions: set[str] = set()
    for i, (_start, end, kind, raw_pid) in enumerate(markers):
        if kind != "solution":
            continue
        pid = known.get(raw_pid.casefold())
        if pid is None:
            logger.warning("ignoring solution marker for unknown problem %r", raw_pid)
            continue
        if pid in seen_solutions:
            raise DuplicateMarkerError(pid)
        seen_solutions.add(pid)
        boundary = markers[i + 1][0] if i + 1 < len(markers) else len(page_text)
        answers[pid] = page_text[end:boundary].strip()

    missing = tuple(pid for pid in exam.problem_ids() if pid not in answers)
    return DissectionResult(answers=answers, missing=missing)
