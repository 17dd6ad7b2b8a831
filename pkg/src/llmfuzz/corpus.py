"""Program records, textual normalization, and the fitness-indexed seed bank.

Everything the campaign produces funnels through this module: a generated
snippet becomes a TestProgram keyed by the hash of its normalized text, the
SeedBank deduplicates on that key, and seed selection draws from the bank's
valid entries weighted by fitness.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from random import Random
from typing import Iterator, Sequence


class Library(Enum):
    """Family of library an API belongs to; picks prompt style and aliases."""

    TORCH_LIKE = "torch-like"
    TENSORFLOW_LIKE = "tensorflow-like"
    GENERIC = "generic"


# Alternate spellings of the same import root. "tf" and "tensorflow" name the
# same library, so call-site matching treats them as interchangeable.
_ROOT_ALIASES: dict[Library, frozenset[str]] = {
    Library.TORCH_LIKE: frozenset({"torch"}),
    Library.TENSORFLOW_LIKE: frozenset({"tf", "tensorflow"}),
    Library.GENERIC: frozenset(),
}


class Validity(Enum):
    UNKNOWN = "unknown"
    PARSE_ERROR = "parse-error"
    RUNTIME_ERROR = "runtime-error"
    VALID_NO_TARGET_CALL = "valid-no-target-call"
    VALID = "valid"


@dataclass(frozen=True)
class ApiTarget:
    """One library API that a fuzzing campaign centers on.

    qualified_name is the dotted path as a user would call it ("torch.mm",
    "tf.nn.conv2d"). signature, when present, is the full textual signature
    and must start with the API's name.
    """

    qualified_name: str
    library: Library = Library.GENERIC
    signature: str = ""

    def __post_init__(self) -> None:
        name = self.qualified_name
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"bad qualified name: {name!r}")
        if self.signature:
            head = self.signature.split("(", 1)[0].strip()
            last = name.rsplit(".", 1)[-1]
            if head not in (name, last):
                raise ValueError(
                    f"signature {self.signature!r} does not match {name!r}"
                )

    @property
    def root(self) -> str:
        return self.qualified_name.split(".", 1)[0]

    def library_roots(self) -> frozenset[str]:
        """Every import-root spelling that counts as this API's library."""
        return _ROOT_ALIASES[self.library] | {self.root}

    def matches_call(self, callee: str) -> bool:
        """True when a resolved dotted callee denotes this exact API."""
        head, _, rest = callee.partition(".")
        if head not in self.library_roots():
            return False
        _, _, want = self.qualified_name.partition(".")
        return rest == want

    def display_name(self) -> str:
        """Fully qualified call form; bare signatures get the module path back."""
        if not self.signature:
            return self.qualified_name
        if self.signature.startswith(self.qualified_name):
            return self.signature
        prefix, _, _ = self.qualified_name.rpartition(".")
        return f"{prefix}.{self.signature}" if prefix else self.signature


@dataclass(frozen=True)
class FitnessScore:
    """Dataflow-based fitness: deeper chains and API variety score higher,
    repeated identical calls score lower."""

    depth: int
    unique_calls: int
    repeats: int

    @property
    def total(self) -> int:
        return self.depth + self.unique_calls - self.repeats

    def as_dict(self) -> dict[str, int]:
        return {
            "depth": self.depth,
            "unique_calls": self.unique_calls,
            "repeats": self.repeats,
            "total": self.total,
        }


ZERO_FITNESS = FitnessScore(0, 0, 0)


@dataclass(frozen=True)
class Provenance:
    """Where a program came from: a fresh seed, or a mutation of a parent."""

    kind: str  # "seed" | "mutant"
    operator_id: int | None = None
    parent_hash: str | None = None

    def __post_init__(self) -> None:
        if self.kind == "seed":
            if self.operator_id is not None or self.parent_hash is not None:
                raise ValueError("seed provenance carries no parent")
        elif self.kind == "mutant":
            if self.operator_id is None or not self.parent_hash:
                raise ValueError("mutant provenance needs operator and parent")
        else:
            raise ValueError(f"unknown provenance kind: {self.kind!r}")

    @classmethod
    def seed(cls) -> "Provenance":
        return cls("seed")

    @classmethod
    def mutant(cls, operator_id: int, parent_hash: str) -> "Provenance":
        return cls("mutant", operator_id, parent_hash)


def _strip_comments(text: str) -> tuple[str, list[bool], list[bool]]:
    """Remove # comments outside strings.

    Returns the stripped text plus, per output line, whether the line starts
    and ends inside a string literal. Lines inside triple-quoted strings must
    survive later whitespace cleanup untouched.
    """
    out: list[str] = []
    starts: list[bool] = []
    ends: list[bool] = []
    quote = ""
    line_start_in_string = False
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if quote:
            if ch == "\\" and i + 1 < n:
                out.append(text[i : i + 2])
                i += 2
                continue
            if text.startswith(quote, i):
                out.append(quote)
                i += len(quote)
                quote = ""
                continue
            if ch == "\n":
                starts.append(line_start_in_string)
                ends.append(True)
                line_start_in_string = True
            out.append(ch)
            i += 1
            continue
        if ch in "'\"":
            for q in (ch * 3, ch):
                if text.startswith(q, i):
                    quote = q
                    out.append(q)
                    i += len(q)
                    break
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            starts.append(line_start_in_string)
            ends.append(False)
            line_start_in_string = False
        out.append(ch)
        i += 1
    starts.append(line_start_in_string)
    ends.append(bool(quote))
    return "".join(out), starts, ends


def normalize(source: str) -> str:
    """Strip comments, trailing whitespace, and blank lines, textually.

    Works on unparseable snippets too. Text inside string literals is left
    alone so the token sequence of the remaining code never changes.
    """
    stripped, starts, ends = _strip_comments(source)
    lines = stripped.split("\n")
    kept: list[str] = []
    for line, in_str_start, in_str_end in zip(lines, starts, ends):
        if in_str_start or in_str_end:
            kept.append(line)
            continue
        line = line.rstrip()
        if line:
            kept.append(line)
    return "\n".join(kept)


def norm_hash(source: str) -> str:
    return hashlib.sha256(normalize(source).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TestProgram:
    """A generated program plus everything the campaign knows about it."""

    source: str
    target: ApiTarget
    norm_hash: str
    fitness: FitnessScore = ZERO_FITNESS
    validity: Validity = Validity.UNKNOWN
    provenance: Provenance = field(default_factory=Provenance.seed)

    @classmethod
    def from_source(
        cls,
        source: str,
        target: ApiTarget,
        fitness: FitnessScore = ZERO_FITNESS,
        validity: Validity = Validity.UNKNOWN,
        provenance: Provenance | None = None,
    ) -> "TestProgram":
        return cls(
            source=source,
            target=target,
            norm_hash=norm_hash(source),
            fitness=fitness,
            validity=validity,
            provenance=provenance or Provenance.seed(),
        )

    def with_validity(self, validity: Validity) -> "TestProgram":
        return replace(self, validity=validity)

    def with_fitness(self, fitness: FitnessScore) -> "TestProgram":
        return replace(self, fitness=fitness)


class EmptyBankError(Exception):
    """Raised when seed selection finds no valid programs to pick from."""


class SeedBank:
    """Deduplicated store of every program a campaign has produced.

    All programs are recorded (so duplicates are recognizable regardless of
    validity), but only valid ones are eligible seeds. The fitness index
    orders valid entries by fitness total, most recent first among ties.
    """

    def __init__(self) -> None:
        self._entries: dict[str, TestProgram] = {}
        self._valid_order: list[str] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __iter__(self) -> Iterator[TestProgram]:
        return iter(self._entries.values())

    def get(self, key: str) -> TestProgram | None:
        return self._entries.get(key)

    @property
    def valid_count(self) -> int:
        return len(self._valid_order)

    def insert(self, program: TestProgram) -> bool:
        """Add a program; False if an entry with the same hash exists."""
        if program.norm_hash in self._entries:
            return False
        self._entries[program.norm_hash] = program
        if program.validity is Validity.VALID:
            self._valid_order.append(program.norm_hash)
        return True

    def valid_programs(self) -> list[TestProgram]:
        """Valid entries in fitness-index order (total desc, newest first)."""
        indexed = list(enumerate(self._valid_order))
        indexed.sort(key=lambda t: (-self._entries[t[1]].fitness.total, -t[0]))
        return [self._entries[h] for _, h in indexed]

    def programs(self) -> list[TestProgram]:
        """All entries in insertion order."""
        return list(self._entries.values())


def select_seed(bank: SeedBank, top_n: int, rng: Random) -> TestProgram:
    """Softmax draw over the fitness totals of the top-N valid programs."""
    if top_n < 1:
        raise ValueError("top_n must be at least 1")
    pool = bank.valid_programs()[:top_n]
    if not pool:
        raise EmptyBankError("no valid programs in the bank")
    peak = max(p.fitness.total for p in pool)
    weights = [math.exp(p.fitness.total - peak) for p in pool]
    return rng.choices(pool, weights=weights, k=1)[0]


# --- corpus persistence ----------------------------------------------------

MANIFEST_NAME = "manifest.jsonl"


def _manifest_record(program: TestProgram) -> dict:
    return {
        "hash": program.norm_hash,
        "validity": program.validity.value,
        "depth": program.fitness.depth,
        "unique_calls": program.fitness.unique_calls,
        "repeats": program.fitness.repeats,
        "total": program.fitness.total,
        "provenance": program.provenance.kind,
        "parent_hash": program.provenance.parent_hash,
        "operator_id": program.provenance.operator_id,
    }


def save_corpus(bank: SeedBank, directory: Path) -> Path:
    """Write one .py file per program plus a manifest; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for program in bank.programs():
        (directory / f"{program.norm_hash}.py").write_text(
            program.source, encoding="utf-8"
        )
        lines.append(json.dumps(_manifest_record(program), sort_keys=True))
    manifest = directory / MANIFEST_NAME
    manifest.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return manifest


def load_corpus(directory: Path, target: ApiTarget) -> SeedBank:
    """Rebuild a SeedBank from save_corpus output."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    bank = SeedBank()
    if not manifest.exists():
        return bank
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        source_path = directory / f"{rec['hash']}.py"
        source = source_path.read_text(encoding="utf-8")
        if rec["provenance"] == "mutant":
            prov = Provenance.mutant(rec["operator_id"], rec["parent_hash"])
        else:
            prov = Provenance.seed()
        program = TestProgram(
            source=source,
            target=target,
            norm_hash=rec["hash"],
            fitness=FitnessScore(rec["depth"], rec["unique_calls"], rec["repeats"]),
            validity=Validity(rec["validity"]),
            provenance=prov,
        )
        bank.insert(program)
    return bank
