"""Generation backends: one interface for seed completion and mask infilling.

Requests are plain data with a stable digest, so any backend can be swapped
in: the HTTP backend speaks a small JSON protocol to a model server, the
mock backend replays canned responses keyed by digest and never blocks an
offline run.

Also home to the shared postprocessing pipeline that turns raw model output
into a candidate program (trim to parseable prefix, drop prints, eliminate
dead code, require a target call).
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import requests

from .corpus import ApiTarget
from .pyast import eliminate_dead_code, strip_prints, trim_to_parse, calls_target

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 0.95
    max_tokens: int = 256
    num_samples: int = 1

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1 or self.num_samples < 1:
            raise ValueError("max_tokens and num_samples must be positive")


# Defaults tuned for the two request kinds: conservative sampling for seeds,
# hot sampling for mask infilling.
SEED_SAMPLING = SamplingParams(temperature=0.4, top_p=0.95, max_tokens=256, num_samples=25)
INFILL_SAMPLING = SamplingParams(temperature=1.0, top_p=0.95, max_tokens=256, num_samples=5)


def _digest(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    params: SamplingParams = SEED_SAMPLING

    @property
    def digest(self) -> str:
        # num_samples deliberately excluded: one fixture serves any n.
        return _digest(
            {
                "kind": "complete",
                "prompt": self.prompt,
                "temperature": self.params.temperature,
                "top_p": self.params.top_p,
                "max_tokens": self.params.max_tokens,
            }
        )

    def wire(self) -> dict:
        return {
            "kind": "complete",
            "prompt": self.prompt,
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_tokens,
            "n": self.params.num_samples,
        }


@dataclass(frozen=True)
class InfillRequest:
    """Literal segments around the placeholders; k+1 segments mean k holes."""

    segments: tuple[str, ...]
    params: SamplingParams = INFILL_SAMPLING

    def __post_init__(self) -> None:
        if len(self.segments) < 2:
            raise ValueError("an infill request needs at least one placeholder")

    @property
    def placeholder_count(self) -> int:
        return len(self.segments) - 1

    @property
    def digest(self) -> str:
        return _digest(
            {
                "kind": "infill",
                "segments": list(self.segments),
                "temperature": self.params.temperature,
                "top_p": self.params.top_p,
                "max_tokens": self.params.max_tokens,
            }
        )

    def wire(self) -> dict:
        return {
            "kind": "infill",
            "segments": list(self.segments),
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_tokens,
            "n": self.params.num_samples,
        }


class BackendError(Exception):
    pass


class TransportError(BackendError):
    """Network-level failure after retries were exhausted."""


class BackendRejection(BackendError):
    """The backend understood the request and refused it; retrying is useless."""


class GenerationBackend(ABC):
    @abstractmethod
    def complete(self, request: CompletionRequest) -> list[str]:
        """Completion texts, at most num_samples of them."""

    @abstractmethod
    def infill(self, request: InfillRequest) -> list[list[str]]:
        """Fill lists, one per sample; each has one fill per placeholder."""


class HttpBackend(GenerationBackend):
    """JSON-over-HTTP backend; POSTs the wire form of each request."""

    def __init__(
        self,
        endpoint: str,
        timeout: float = 120.0,
        retries: int = 3,
        backoff: float = 1.0,
        sleeper: Callable[[float], None] = time.sleep,
    ) -> None:
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleeper

    def _post(self, payload: dict) -> dict:
        delay = self.backoff
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            try:
                response = requests.post(self.endpoint, json=payload, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = exc
                continue
            if response.status_code >= 500:
                last = TransportError(f"server error {response.status_code}")
                continue
            if response.status_code >= 400:
                raise BackendRejection(
                    f"backend rejected request: {response.status_code} {response.text[:200]}"
                )
            try:
                body = response.json()
            except ValueError as exc:
                raise BackendRejection(f"backend returned non-JSON body: {exc}") from exc
            if not isinstance(body, dict) or "samples" not in body:
                raise BackendRejection("backend response missing 'samples'")
            return body
        raise TransportError(f"request failed after {self.retries} retries: {last}")

    def complete(self, request: CompletionRequest) -> list[str]:
        body = self._post(request.wire())
        samples = [s for s in body["samples"] if isinstance(s, str)]
        return samples[: request.params.num_samples]

    def infill(self, request: InfillRequest) -> list[list[str]]:
        body = self._post(request.wire())
        out: list[list[str]] = []
        for sample in body["samples"]:
            if (
                isinstance(sample, list)
                and len(sample) == request.placeholder_count
                and all(isinstance(f, str) for f in sample)
            ):
                out.append(list(sample))
            else:
                log.warning("dropping infill sample with wrong fill count: %r", sample)
        return out[: request.params.num_samples]


class MockBackend(GenerationBackend):
    """Deterministic canned backend for offline runs and tests.

    Responses live in a fixture directory as <request-digest>.json files
    holding {"samples": [...]}. Unmatched requests fall back to the default
    fill so campaigns never stall: completions return the fill text itself
    (politely rejected downstream), infills return all-default fills.
    """

    def __init__(self, fixture_dir: Path | None = None, default_fill: str = "None") -> None:
        self.default_fill = default_fill
        self._canned: dict[str, list] = {}
        if fixture_dir is not None:
            for path in sorted(Path(fixture_dir).glob("*.json")):
                data = json.loads(path.read_text(encoding="utf-8"))
                self._canned[path.stem] = data["samples"]

    def add_response(self, request: CompletionRequest | InfillRequest, samples: Sequence) -> None:
        self._canned[request.digest] = list(samples)

    @staticmethod
    def write_fixture(
        directory: Path, request: CompletionRequest | InfillRequest, samples: Sequence
    ) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{request.digest}.json"
        path.write_text(json.dumps({"samples": list(samples)}, indent=1), encoding="utf-8")
        return path

    def complete(self, request: CompletionRequest) -> list[str]:
        samples = self._canned.get(request.digest)
        if samples is None:
            return [self.default_fill] * request.params.num_samples
        return [s for s in samples if isinstance(s, str)][: request.params.num_samples]

    def infill(self, request: InfillRequest) -> list[list[str]]:
        samples = self._canned.get(request.digest)
        if samples is None:
            fills = [self.default_fill] * request.placeholder_count
            return [list(fills) for _ in range(request.params.num_samples)]
        out: list[list[str]] = []
        for sample in samples:
            if isinstance(sample, list) and len(sample) == request.placeholder_count:
                out.append([str(f) for f in sample])
            else:
                log.warning("fixture sample has wrong fill count: %r", sample)
        return out[: request.params.num_samples]


def splice(masked_source: str, fills: Sequence[str], marker: str = "<SPAN>") -> str:
    """Substitute fills into the placeholder markers, left to right."""
    segments = masked_source.split(marker)
    if len(fills) != len(segments) - 1:
        raise ValueError(f"need {len(segments) - 1} fills, got {len(fills)}")
    parts = []
    for segment, fill in zip(segments, fills):
        parts.append(segment)
        parts.append(fill)
    parts.append(segments[-1])
    return "".join(parts)


class RejectReason(Enum):
    UNPARSEABLE = "unparseable"
    EMPTY_AFTER_TRIM = "empty-after-trim"
    NO_TARGET_CALL = "no-target-call"


@dataclass(frozen=True)
class PostprocessResult:
    source: str | None
    reject_reason: RejectReason | None

    @property
    def ok(self) -> bool:
        return self.source is not None


def postprocess(
    raw: str,
    mode: str,
    target: ApiTarget,
    prompt_text: str | None = None,
    kickoff: str | None = None,
) -> PostprocessResult:
    """Raw model output -> candidate program, or a reject reason.

    Seed mode tolerates backends that echo the prompt, and re-attaches the
    kickoff import line so the completion is a runnable module. Mutant mode
    takes the spliced text as-is.
    """
    if mode not in ("seed", "mutant"):
        raise ValueError(f"unknown postprocess mode: {mode!r}")
    text = raw
    if mode == "seed":
        if prompt_text and text.startswith(prompt_text):
            text = text[len(prompt_text) :]
        if kickoff:
            text = kickoff.rstrip("\n") + "\n" + text
    if not text.strip():
        return PostprocessResult(None, RejectReason.EMPTY_AFTER_TRIM)
    trimmed = trim_to_parse(text)
    if not trimmed.strip():
        return PostprocessResult(None, RejectReason.UNPARSEABLE)
    cleaned = eliminate_dead_code(strip_prints(trimmed), target)
    if not calls_target(cleaned, target):
        return PostprocessResult(None, RejectReason.NO_TARGET_CALL)
    return PostprocessResult(cleaned, None)
