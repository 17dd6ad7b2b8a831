"""Prompted seed synthesis.

One prompt per target API: a docstring naming the library and the API's
signature plus three numbered tasks, followed by the library's import line
as the kickoff. The completion model continues from the import, so the
kickoff line is glued back onto every sample during postprocessing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import ApiTarget, Library, Provenance, TestProgram
from .genbackend import (
    SEED_SAMPLING,
    CompletionRequest,
    GenerationBackend,
    SamplingParams,
    postprocess,
)


@dataclass(frozen=True)
class Prompt:
    text: str
    kickoff: str


@dataclass(frozen=True)
class PromptTemplate:
    library_name: str
    import_line: str
    task_lines: tuple[str, str, str] = (
        "Task 1: Import the {library} library.",
        "Task 2: Generate input data for the API.",
        "Task 3: Call the API {api}.",
    )
    docstring_delim: str = '"""'

    def render(self, target: ApiTarget) -> Prompt:
        api = target.display_name()
        lines = [self.docstring_delim]
        lines.append(f"{self.library_name} program that calls the API {api}.")
        for task in self.task_lines:
            lines.append(task.replace("{library}", self.library_name).replace("{api}", api))
        lines.append(self.docstring_delim)
        lines.append(self.import_line)
        return Prompt(text="\n".join(lines) + "\n", kickoff=self.import_line)


_TEMPLATES: dict[Library, PromptTemplate] = {
    Library.TORCH_LIKE: PromptTemplate("PyTorch", "import torch"),
    Library.TENSORFLOW_LIKE: PromptTemplate("TensorFlow", "import tensorflow as tf"),
}


def default_template(target: ApiTarget) -> PromptTemplate:
    template = _TEMPLATES.get(target.library)
    if template is not None:
        return template
    return PromptTemplate(target.root, f"import {target.root}")


def build_prompt(target: ApiTarget, template: PromptTemplate | None = None) -> Prompt:
    return (template or default_template(target)).render(target)


def generate_seeds(
    target: ApiTarget,
    backend: GenerationBackend,
    params: SamplingParams = SEED_SAMPLING,
    template: PromptTemplate | None = None,
) -> list[TestProgram]:
    """Sample completions and keep the deduplicated survivors.

    Every returned program parses and calls the target API; validity beyond
    that (does it run?) is the campaign's business. Backend errors propagate.
    """
    prompt = build_prompt(target, template)
    raws = backend.complete(CompletionRequest(prompt.text, params))
    seeds: list[TestProgram] = []
    seen: set[str] = set()
    for raw in raws:
        result = postprocess(
            raw, "seed", target, prompt_text=prompt.text, kickoff=prompt.kickoff
        )
        if not result.ok:
            continue
        program = TestProgram.from_source(
            result.source, target, provenance=Provenance.seed()
        )
        if program.norm_hash in seen:
            continue
        seen.add(program.norm_hash)
        seeds.append(program)
    return seeds


# --- API catalog -------------------------------------------------------------

_LIBRARY_ALIASES = {
    "torch": Library.TORCH_LIKE,
    "pytorch": Library.TORCH_LIKE,
    "tf": Library.TENSORFLOW_LIKE,
    "tensorflow": Library.TENSORFLOW_LIKE,
}


def infer_library(qualified_name: str) -> Library:
    root = qualified_name.split(".", 1)[0]
    return _LIBRARY_ALIASES.get(root, Library.GENERIC)


def parse_library(value: str | None, qualified_name: str) -> Library:
    if value is None or value == "":
        return infer_library(qualified_name)
    try:
        return Library(value)
    except ValueError:
        pass
    try:
        return _LIBRARY_ALIASES[value.lower()]
    except KeyError:
        raise ValueError(f"unknown library kind: {value!r}") from None


def load_api_catalog(path: Path) -> list[ApiTarget]:
    """Read a JSONL catalog of {name, signature, library} records."""
    targets: list[ApiTarget] = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            name = record["name"]
            target = ApiTarget(
                qualified_name=name,
                library=parse_library(record.get("library"), name),
                signature=record.get("signature", "") or "",
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad catalog record: {exc}") from exc
        targets.append(target)
    return targets
