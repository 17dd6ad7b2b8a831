"""Masked-span mutation operators.

Each operator cuts a hole in a parent program and marks it with a
placeholder for the infilling model. A MaskedProgram remembers exactly which
byte regions changed and what they used to say, so the parent can always be
reconstructed byte-for-byte and the placeholder positions are known without
re-scanning.

Operators never execute anything; when the requested mask cannot apply to
the given program they raise a MaskError subclass and the caller moves on.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from random import Random
from typing import Sequence

from .corpus import ApiTarget, TestProgram
from .pyast import CallSite, Span, _Offsets, top_level_statements

SPAN_MARKER = "<SPAN>"
_MARKER_BYTES = SPAN_MARKER.encode("ascii")


class OperatorId(IntEnum):
    """Stable operator codes used in manifests and reports."""

    ARGUMENT = 0
    KEYWORD = 1
    PREFIX = 2
    SUFFIX = 3
    PREFIX_ARGUMENT = 4
    SUFFIX_ARGUMENT = 5
    METHOD = 6


class MaskError(Exception):
    """An operator could not apply to this program."""


class NoCallSiteError(MaskError):
    pass


class StaleCallSiteError(MaskError):
    pass


class NothingBeforeTargetError(MaskError):
    pass


@dataclass(frozen=True)
class MaskEdit:
    """One edited region: this span of the masked source replaced `original`."""

    masked_span: Span
    original: str


@dataclass(frozen=True)
class MaskedProgram:
    masked_source: str
    operator: OperatorId
    spans: tuple[int, ...]  # byte offsets of each placeholder, in order
    edits: tuple[MaskEdit, ...]
    parent_hash: str
    target: ApiTarget

    @property
    def placeholder_count(self) -> int:
        return len(self.spans)

    def segments(self) -> list[str]:
        """Literal text around the placeholders; len == placeholders + 1."""
        return self.masked_source.split(SPAN_MARKER)

    def unmask(self) -> str:
        """Reconstruct the parent source exactly."""
        data = self.masked_source.encode("utf-8")
        pieces: list[bytes] = []
        cursor = 0
        for edit in self.edits:
            pieces.append(data[cursor : edit.masked_span.start])
            pieces.append(edit.original.encode("utf-8"))
            cursor = edit.masked_span.end
        pieces.append(data[cursor:])
        return b"".join(pieces).decode("utf-8")


def _build(
    program: TestProgram,
    operator: OperatorId,
    raw_edits: Sequence[tuple[int, int, str]],
) -> MaskedProgram:
    data = program.source.encode("utf-8")
    pieces: list[bytes] = []
    edits: list[MaskEdit] = []
    spans: list[int] = []
    cursor = 0
    produced = 0
    for start, end, replacement in sorted(raw_edits, key=lambda e: (e[0], e[1])):
        if start < cursor:
            raise MaskError("mask edits overlap")
        pieces.append(data[cursor:start])
        produced += start - cursor
        rep = replacement.encode("utf-8")
        at = rep.find(_MARKER_BYTES)
        while at != -1:
            spans.append(produced + at)
            at = rep.find(_MARKER_BYTES, at + len(_MARKER_BYTES))
        edits.append(
            MaskEdit(Span(produced, produced + len(rep)), data[start:end].decode("utf-8"))
        )
        pieces.append(rep)
        produced += len(rep)
        cursor = end
    pieces.append(data[cursor:])
    return MaskedProgram(
        masked_source=b"".join(pieces).decode("utf-8"),
        operator=operator,
        spans=tuple(spans),
        edits=tuple(edits),
        parent_hash=program.norm_hash,
        target=program.target,
    )


def _checked_data(program: TestProgram, site: CallSite) -> bytes:
    if SPAN_MARKER in program.source:
        raise MaskError("program already contains a placeholder marker")
    data = program.source.encode("utf-8")
    if site.call_span.end > len(data):
        raise StaleCallSiteError("call site lies outside the program")
    if site.callee_span.slice(data).decode("utf-8", "replace") != site.callee_text:
        raise StaleCallSiteError("call site text does not match the program")
    return data


def mask_argument(program: TestProgram, site: CallSite) -> MaskedProgram:
    """Replace the whole argument list of one call with a placeholder."""
    _checked_data(program, site)
    edit = (site.arg_span.start, site.arg_span.end, SPAN_MARKER)
    return _build(program, OperatorId.ARGUMENT, [edit])


def mask_keyword(program: TestProgram, site: CallSite) -> MaskedProgram:
    """Append a masked keyword argument; the equals sign steers the model
    toward producing a name=value pair."""
    data = _checked_data(program, site)
    args = site.arg_span.slice(data).decode("utf-8").strip()
    if not args:
        glue = f"{SPAN_MARKER}={SPAN_MARKER}"
    elif args.endswith(","):
        glue = f" {SPAN_MARKER}={SPAN_MARKER}"
    else:
        glue = f", {SPAN_MARKER}={SPAN_MARKER}"
    edit = (site.arg_span.end, site.arg_span.end, glue)
    return _build(program, OperatorId.KEYWORD, [edit])


def _statement_blocks(source: str) -> list[tuple[int, int]]:
    try:
        return top_level_statements(source)
    except SyntaxError as exc:
        raise MaskError(f"parent does not parse: {exc}") from exc


def _enclosing_block(blocks: Sequence[tuple[int, int]], line: int) -> int:
    for idx, (first, last) in enumerate(blocks):
        if first <= line <= last:
            return idx
    raise StaleCallSiteError(f"no top-level statement covers line {line}")


def _prefix_edit(
    program: TestProgram, site: CallSite, rng: Random
) -> tuple[int, int, str]:
    blocks = _statement_blocks(program.source)
    here = _enclosing_block(blocks, site.line_range[0])
    prior = [b for b in blocks[:here] if b[1] < blocks[here][0]]
    if not prior:
        raise NothingBeforeTargetError("no whole statement before the target call")
    count = rng.randint(1, len(prior))
    start = rng.randint(0, len(prior) - count)
    offsets = _Offsets(program.source)
    begin = offsets.line_start(prior[start][0])
    end = offsets.line_start(prior[start + count - 1][1] + 1)
    return (begin, end, SPAN_MARKER + "\n")


def _suffix_edit(program: TestProgram, site: CallSite) -> tuple[int, int, str]:
    blocks = _statement_blocks(program.source)
    here = _enclosing_block(blocks, site.line_range[0])
    offsets = _Offsets(program.source)
    pos = offsets.line_start(blocks[here][1] + 1)
    if pos >= len(offsets.data):
        pos = len(offsets.data)
        if offsets.data.endswith(b"\n") or not offsets.data:
            return (pos, pos, SPAN_MARKER)
        return (pos, pos, "\n" + SPAN_MARKER)
    return (pos, pos, SPAN_MARKER + "\n")


def mask_prefix(program: TestProgram, site: CallSite, rng: Random) -> MaskedProgram:
    """Collapse a random run of whole statements before the target call."""
    _checked_data(program, site)
    return _build(program, OperatorId.PREFIX, [_prefix_edit(program, site, rng)])


def mask_suffix(program: TestProgram, site: CallSite) -> MaskedProgram:
    """Open a hole on a fresh line after the target call's statement."""
    _checked_data(program, site)
    return _build(program, OperatorId.SUFFIX, [_suffix_edit(program, site)])


def mask_prefix_argument(
    program: TestProgram, site: CallSite, rng: Random
) -> MaskedProgram:
    """Prefix mask plus an argument mask on the target call."""
    _checked_data(program, site)
    edits = [
        _prefix_edit(program, site, rng),
        (site.arg_span.start, site.arg_span.end, SPAN_MARKER),
    ]
    return _build(program, OperatorId.PREFIX_ARGUMENT, edits)


def mask_suffix_argument(program: TestProgram, site: CallSite) -> MaskedProgram:
    """Argument mask on the target call plus a hole after its statement."""
    _checked_data(program, site)
    edits = [
        (site.arg_span.start, site.arg_span.end, SPAN_MARKER),
        _suffix_edit(program, site),
    ]
    return _build(program, OperatorId.SUFFIX_ARGUMENT, edits)


def mask_method(
    program: TestProgram, sites: Sequence[CallSite], rng: Random
) -> MaskedProgram:
    """Mask the API name of a random library call, keeping its arguments."""
    if not sites:
        raise NoCallSiteError("no library call to mask")
    site = sites[rng.randrange(len(sites))]
    data = _checked_data(program, site)
    dot = site.callee_text.find(".")
    if dot < 0:
        start = site.callee_span.start
    else:
        start = site.callee_span.start + len(site.callee_text[: dot + 1].encode("utf-8"))
    edit = (start, site.callee_span.end, SPAN_MARKER)
    return _build(program, OperatorId.METHOD, [edit])


# Parse-safe stand-ins per placeholder, used to check that a masked program
# is structurally sound before spending model calls on it.
NEUTRAL_FILLS: dict[OperatorId, tuple[str, ...]] = {
    OperatorId.ARGUMENT: ("None",),
    OperatorId.KEYWORD: ("extra_kw", "None"),
    OperatorId.PREFIX: ("pass",),
    OperatorId.SUFFIX: ("pass",),
    OperatorId.PREFIX_ARGUMENT: ("pass", "None"),
    OperatorId.SUFFIX_ARGUMENT: ("None", "pass"),
    OperatorId.METHOD: ("x",),
}


def neutral_fills(masked: MaskedProgram) -> tuple[str, ...]:
    fills = NEUTRAL_FILLS[masked.operator]
    if len(fills) != masked.placeholder_count:
        raise MaskError(
            f"operator {masked.operator.name} produced {masked.placeholder_count} "
            f"placeholders, expected {len(fills)}"
        )
    return fills


def apply_operator(
    operator: OperatorId,
    program: TestProgram,
    sites: Sequence[CallSite],
    rng: Random,
) -> MaskedProgram:
    """Dispatch one operator against a parent, choosing the site with rng."""
    if operator is OperatorId.METHOD:
        return mask_method(program, sites, rng)
    target_sites = [s for s in sites if program.target.matches_call(s.callee)]
    if not target_sites:
        raise NoCallSiteError(f"no call to {program.target.qualified_name}")
    site = target_sites[rng.randrange(len(target_sites))]
    if operator is OperatorId.ARGUMENT:
        return mask_argument(program, site)
    if operator is OperatorId.KEYWORD:
        return mask_keyword(program, site)
    if operator is OperatorId.PREFIX:
        return mask_prefix(program, site, rng)
    if operator is OperatorId.SUFFIX:
        return mask_suffix(program, site)
    if operator is OperatorId.PREFIX_ARGUMENT:
        return mask_prefix_argument(program, site, rng)
    if operator is OperatorId.SUFFIX_ARGUMENT:
        return mask_suffix_argument(program, site)
    raise MaskError(f"unknown operator: {operator!r}")
