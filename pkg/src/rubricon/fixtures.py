"""Authoring helpers for scripted mock-backend response sets.

A fixture set maps request fingerprints to ordered response lists.  The
helpers here build requests through the same renderers the pipeline
uses, so a scripted response is found by exactly the request the
pipeline will make.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from . import prompt
from .backend import ImagePart, MockBackend, ModelRequest, TextPart, prompt_fingerprint
from .errors import ConfigError


class FixtureSet:
    """Collects scripted responses and writes them as one fixtures file."""

    def __init__(self) -> None:
        self._responses: dict[str, list[str]] = {}

    def script(self, request: ModelRequest, responses: Sequence[str]) -> str:
        """Register responses for a request; returns the fingerprint."""
        if not responses:
            raise ConfigError("a scripted request needs at least one response")
        key = prompt_fingerprint(request)
        existing = self._responses.get(key)
        if existing is not None and existing != list(responses):
            raise ConfigError(
                f"fingerprint {key} already scripted with different responses"
            )
        self._responses[key] = list(responses)
        return key

    def script_transcription(
        self,
        image_data: bytes,
        responses: Sequence[str],
        media_type: str = "image/png",
        temperature: float = 0.7,
        question_text: str | None = None,
    ) -> str:
        system, context = prompt.render_transcription_prompt(question_text)
        parts: list[TextPart | ImagePart] = []
        if context is not None:
            parts.append(TextPart(context))
        parts.append(ImagePart(data=image_data, media_type=media_type))
        request = ModelRequest(
            backend_name="mock",
            system_prompt=system,
            user_parts=tuple(parts),
            temperature=temperature,
            request_tag="ocr",
        )
        return self.script(request, responses)

    def script_judgement(
        self,
        rule_text: str,
        answer_text: str,
        responses: Sequence[str],
        format: str = prompt.FORMAT_VERBALIZED,
        ignore_statement: bool = True,
        temperature: float = 0.7,
    ) -> str:
        system, user = prompt.render_rule_prompt(rule_text, answer_text, format, ignore_statement)
        request = ModelRequest(
            backend_name="mock",
            system_prompt=system,
            user_parts=(TextPart(user),),
            temperature=temperature,
            request_tag="judgement",
        )
        return self.script(request, responses)

    def script_free(
        self,
        question_text: str,
        max_points: int,
        answer_text: str,
        responses: Sequence[str],
        temperature: float = 0.7,
    ) -> str:
        system, user = prompt.render_free_prompt(question_text, max_points, answer_text)
        request = ModelRequest(
            backend_name="mock",
            system_prompt=system,
            user_parts=(TextPart(user),),
            temperature=temperature,
            request_tag="free-points",
        )
        return self.script(request, responses)

    def script_paraphrase(
        self,
        rule_text: str,
        responses: Sequence[str],
        temperature: float = 0.7,
    ) -> str:
        request = ModelRequest(
            backend_name="mock",
            system_prompt="",
            user_parts=(TextPart(prompt.render_paraphrase_prompt(rule_text)),),
            temperature=temperature,
            request_tag="paraphrase",
        )
        return self.script(request, responses)

    def as_mapping(self) -> dict[str, list[str]]:
        return {key: list(responses) for key, responses in self._responses.items()}

    def write(self, directory: str | Path, name: str = "fixtures.json") -> Path:
        """Write the set as one JSON file inside a fixtures directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / name
        path.write_text(
            json.dumps(self.as_mapping(), sort_keys=True, indent=1) + "\n",
            encoding="utf-8",
        )
        return path

    def backend(self, name: str = "mock") -> MockBackend:
        return MockBackend(name, self.as_mapping())


def judgement_reply(verdict: str, explanation: str = "") -> str:
    """A well-formed judgement reply for scripting."""
    body = f"Judgement: {verdict}"
    if explanation:
        body += f"\n\nExplanation: {explanation}"
    return body


def points_reply(points: int, explanation: str = "") -> str:
    """A well-formed point-award reply for scripting."""
    body = f"Points: {points}"
    if explanation:
        body += f"\n\nExplanation: {explanation}"
    return body
