"""Dataflow fitness for generated programs.

A program scores higher when its library calls chain into deep dataflow
(depth: longest path in the def-use graph over library call sites) and when
it touches more distinct APIs (unique callee names); repeating the same call
with the same normalized arguments is discounted.
"""

from __future__ import annotations

from typing import Iterable

from .corpus import FitnessScore
from .pyast import build_dataflow


def score(source: str, roots: Iterable[str]) -> FitnessScore:
    """Score a parseable program; raises SyntaxError otherwise."""
    graph = build_dataflow(source, roots)
    unique_calls = len({site.callee for site in graph.sites})
    seen: set[tuple[str, str]] = set()
    repeats = 0
    for site in graph.sites:
        key = (site.callee, site.normalized_args)
        if key in seen:
            repeats += 1
        else:
            seen.add(key)
    return FitnessScore(depth=graph.depth, unique_calls=unique_calls, repeats=repeats)


def compare(a: FitnessScore, b: FitnessScore) -> int:
    """Sort comparator: negative when `a` ranks first (higher total)."""
    return b.total - a.total
