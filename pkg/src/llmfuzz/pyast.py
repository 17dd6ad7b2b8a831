"""Static analysis of generated programs via the CPython parser.

Provides exact byte spans for call sites (the mutator cuts masks out of
these), resolves import aliases so "t.mm" and "torch.mm" name the same API,
builds a def-use dataflow graph over library call sites, and implements the
source repairs the generation pipeline needs: trim-to-parse, print removal,
and dead-code elimination.

All spans are byte offsets into the UTF-8 encoding of the source, matching
the parser's column semantics.
"""

from __future__ import annotations

import ast
import io
import tokenize
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import ApiTarget


@dataclass(frozen=True)
class Span:
    """Half-open byte range [start, end)."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad span: {self.start}..{self.end}")

    def slice(self, data: bytes) -> bytes:
        return data[self.start : self.end]

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SyntaxIssue:
    line: int
    column: int
    message: str


def parse_check(source: str) -> SyntaxIssue | None:
    """None when the source parses as a module, else the failure location."""
    try:
        ast.parse(source)
    except SyntaxError as exc:
        return SyntaxIssue(exc.lineno or 1, exc.offset or 0, exc.msg or "invalid syntax")
    except (ValueError, MemoryError, RecursionError) as exc:
        return SyntaxIssue(1, 0, str(exc))
    return None


def parses(source: str) -> bool:
    return parse_check(source) is None


def trim_to_parse(source: str) -> str:
    """Longest line-prefix of the source that parses; "" if none does.

    Generated completions routinely stop mid-statement; dropping lines from
    the end until the parser accepts the rest recovers the usable prefix.
    """
    lines = source.splitlines(keepends=True)
    for count in range(len(lines), 0, -1):
        prefix = "".join(lines[:count])
        if parse_check(prefix) is None:
            return prefix
    return ""


class _Offsets:
    """Maps the parser's (line, byte-column) positions to absolute bytes."""

    def __init__(self, source: str) -> None:
        self.data = source.encode("utf-8")
        self.line_starts = [0]
        for idx, byte in enumerate(self.data):
            if byte == 0x0A:
                self.line_starts.append(idx + 1)

    def offset(self, lineno: int, col: int) -> int:
        return self.line_starts[lineno - 1] + col

    def line_start(self, lineno: int) -> int:
        if lineno - 1 >= len(self.line_starts):
            return len(self.data)
        return self.line_starts[lineno - 1]

    def node_span(self, node: ast.AST) -> Span:
        return Span(
            self.offset(node.lineno, node.col_offset),
            self.offset(node.end_lineno, node.end_col_offset),
        )


@dataclass(frozen=True)
class CallSite:
    """One call into the library under test.

    callee is the alias-resolved dotted name ("torch.mm" even when written
    "t.mm"); method calls on library-derived values get the wildcard form
    "torch.*.abs". callee_text is the exact source slice, so
    source[callee_span] == callee_text always holds.
    """

    callee: str
    callee_text: str
    callee_span: Span
    arg_span: Span
    call_span: Span
    line_range: tuple[int, int]
    normalized_args: str


_TOKEN_JUNK = {
    tokenize.NEWLINE,
    tokenize.NL,
    tokenize.INDENT,
    tokenize.DEDENT,
    tokenize.COMMENT,
    tokenize.ENDMARKER,
    tokenize.ENCODING,
}


def normalize_args(arg_text: str) -> str:
    """Whitespace- and comment-insensitive canonical form of an arg list."""
    try:
        tokens = list(tokenize.generate_tokens(io.StringIO("(" + arg_text + ")").readline))
        parts = [t.string for t in tokens if t.type not in _TOKEN_JUNK]
        if parts and parts[0] == "(" and parts[-1] == ")":
            return " ".join(parts[1:-1])
    except (tokenize.TokenError, IndentationError, SyntaxError):
        pass
    return " ".join(arg_text.split())


def _import_aliases(tree: ast.Module) -> dict[str, str]:
    aliases: dict[str, str] = {}
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            for name in node.names:
                if name.asname:
                    aliases[name.asname] = name.name
                else:
                    root = name.name.split(".", 1)[0]
                    aliases[root] = root
        elif isinstance(node, ast.ImportFrom):
            if node.level or not node.module:
                continue
            for name in node.names:
                if name.name == "*":
                    continue
                bound = name.asname or name.name
                aliases[bound] = f"{node.module}.{name.name}"
    return aliases


def _dotted_name(node: ast.expr) -> list[str] | None:
    parts: list[str] = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if isinstance(node, ast.Name):
        parts.append(node.id)
        parts.reverse()
        return parts
    return None


class _Env:
    """Name -> producing call-site ids, for the straight-line dataflow walk."""

    def __init__(self, bindings: dict[str, frozenset[int]] | None = None) -> None:
        self.bindings = dict(bindings or {})

    def lookup(self, name: str) -> frozenset[int]:
        return self.bindings.get(name, frozenset())

    def bind(self, name: str, producers: frozenset[int]) -> None:
        self.bindings[name] = producers

    def augment(self, name: str, producers: frozenset[int]) -> None:
        self.bindings[name] = self.lookup(name) | producers

    def kill(self, name: str) -> None:
        self.bindings.pop(name, None)

    def child(self) -> "_Env":
        return _Env(self.bindings)


class _Analysis(ast.NodeVisitor):
    """Single pass that discovers library call sites and dataflow edges.

    Statements are processed in document order; assignment kills previous
    definitions; branches and loop bodies are treated as straight-line code.
    Call sites register in evaluation order (arguments before the enclosing
    call), so producer indices always precede consumer indices.
    """

    def __init__(self, source: str, roots: frozenset[str]) -> None:
        self.offsets = _Offsets(source)
        self.roots = roots
        self.tree = ast.parse(source)
        self.aliases = _import_aliases(self.tree)
        self.sites: list[CallSite] = []
        self.site_roots: list[str] = []
        self.edges: set[tuple[int, int]] = set()
        self.env = _Env()
        self._walk_body(self.tree.body, self.env)

    # -- statements --

    def _walk_body(self, body: Sequence[ast.stmt], env: _Env) -> None:
        previous, self.env = self.env, env
        try:
            for stmt in body:
                self._stmt(stmt)
        finally:
            self.env = previous

    def _stmt(self, stmt: ast.stmt) -> None:
        env = self.env
        if isinstance(stmt, ast.Assign):
            producers = self._eval(stmt.value)
            for target in stmt.targets:
                self._assign_target(target, producers)
        elif isinstance(stmt, ast.AnnAssign):
            if stmt.value is not None:
                self._assign_target(stmt.target, self._eval(stmt.value))
        elif isinstance(stmt, ast.AugAssign):
            producers = self._eval(stmt.value)
            if isinstance(stmt.target, ast.Name):
                env.augment(stmt.target.id, producers)
            else:
                self._assign_target(stmt.target, producers)
        elif isinstance(stmt, ast.Expr):
            self._eval(stmt.value)
        elif isinstance(stmt, (ast.If, ast.While)):
            self._eval(stmt.test)
            self._walk_body(stmt.body, env)
            self._walk_body(stmt.orelse, env)
        elif isinstance(stmt, (ast.For, ast.AsyncFor)):
            iter_producers = self._eval(stmt.iter)
            self._assign_target(stmt.target, iter_producers, kill_tuples=False)
            self._walk_body(stmt.body, env)
            self._walk_body(stmt.orelse, env)
        elif isinstance(stmt, (ast.With, ast.AsyncWith)):
            for item in stmt.items:
                producers = self._eval(item.context_expr)
                if item.optional_vars is not None:
                    self._assign_target(item.optional_vars, producers)
            self._walk_body(stmt.body, env)
        elif isinstance(stmt, ast.Try):
            self._walk_body(stmt.body, env)
            for handler in stmt.handlers:
                self._walk_body(handler.body, env)
            self._walk_body(stmt.orelse, env)
            self._walk_body(stmt.finalbody, env)
        elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            # Bodies run at some later time; record their sites but keep any
            # local rebinding out of the top-level environment.
            self._walk_body(stmt.body, env.child())
        elif isinstance(stmt, ast.Delete):
            for target in stmt.targets:
                if isinstance(target, ast.Name):
                    env.kill(target.id)
        elif isinstance(stmt, (ast.Return, ast.Raise)):
            value = stmt.value if isinstance(stmt, ast.Return) else stmt.exc
            if value is not None:
                self._eval(value)
        elif isinstance(stmt, ast.Assert):
            self._eval(stmt.test)
            if stmt.msg is not None:
                self._eval(stmt.msg)
        elif isinstance(stmt, (ast.Import, ast.ImportFrom, ast.Pass, ast.Break,
                               ast.Continue, ast.Global, ast.Nonlocal)):
            pass
        else:
            for child in ast.iter_child_nodes(stmt):
                if isinstance(child, ast.expr):
                    self._eval(child)

    def _assign_target(
        self, target: ast.expr, producers: frozenset[int], kill_tuples: bool = True
    ) -> None:
        env = self.env
        if isinstance(target, ast.Name):
            env.bind(target.id, producers)
        elif isinstance(target, (ast.Tuple, ast.List)):
            # Unpacking loses element identity; kill the names rather than
            # guess which producer feeds which slot.
            for elt in target.elts:
                if kill_tuples:
                    self._assign_target(elt, frozenset())
                else:
                    self._assign_target(elt, producers, kill_tuples=False)
        elif isinstance(target, ast.Starred):
            self._assign_target(target.value, producers, kill_tuples)
        elif isinstance(target, (ast.Attribute, ast.Subscript)):
            if isinstance(target, ast.Subscript):
                self._eval(target.slice)
            base = target.value
            while isinstance(base, (ast.Attribute, ast.Subscript)):
                base = base.value
            if isinstance(base, ast.Name):
                env.augment(base.id, producers)

    # -- expressions --

    def _eval(self, node: ast.expr) -> frozenset[int]:
        if isinstance(node, ast.Name):
            return self.env.lookup(node.id)
        if isinstance(node, ast.Call):
            return self._eval_call(node)
        if isinstance(node, ast.Attribute):
            return self._eval(node.value)
        if isinstance(node, ast.Constant):
            return frozenset()
        if isinstance(node, ast.Lambda):
            return self._eval(node.body)
        if isinstance(node, (ast.ListComp, ast.SetComp, ast.GeneratorExp, ast.DictComp)):
            return self._eval_comprehension(node)
        producers: frozenset[int] = frozenset()
        for child in ast.iter_child_nodes(node):
            if isinstance(child, ast.expr):
                producers |= self._eval(child)
            elif isinstance(child, ast.comprehension):
                producers |= self._eval(child.iter)
                for cond in child.ifs:
                    self._eval(cond)
            elif isinstance(child, ast.keyword):
                producers |= self._eval(child.value)
        return producers

    def _eval_comprehension(self, node: ast.expr) -> frozenset[int]:
        saved = self.env
        self.env = saved.child()
        try:
            for gen in node.generators:
                iter_producers = self._eval(gen.iter)
                self._assign_target(gen.target, iter_producers, kill_tuples=False)
                for cond in gen.ifs:
                    self._eval(cond)
            if isinstance(node, ast.DictComp):
                return self._eval(node.key) | self._eval(node.value)
            return self._eval(node.elt)
        finally:
            self.env = saved

    def _eval_call(self, node: ast.Call) -> frozenset[int]:
        dotted = _dotted_name(node.func)
        resolved: str | None = None
        object_producers: frozenset[int] = frozenset()
        if dotted is not None:
            expanded = self.aliases.get(dotted[0], dotted[0])
            full = ".".join([expanded] + dotted[1:])
            if full.split(".", 1)[0] in self.roots:
                resolved = full
        if resolved is None and isinstance(node.func, ast.Attribute):
            object_producers = self._eval(node.func.value)
            if object_producers:
                root = self.site_roots[min(object_producers)]
                resolved = f"{root}.*.{node.func.attr}"

        arg_producers: frozenset[int] = frozenset()
        for arg in node.args:
            arg_producers |= self._eval(arg)
        for kw in node.keywords:
            arg_producers |= self._eval(kw.value)

        if resolved is None:
            # Unknown callable: taint passes through from the arguments.
            if dotted is None and not isinstance(node.func, ast.Attribute):
                arg_producers |= self._eval(node.func)
            return arg_producers

        site_id = self._register(node, resolved)
        for producer in arg_producers | object_producers:
            self.edges.add((producer, site_id))
        return frozenset({site_id})

    def _register(self, node: ast.Call, callee: str) -> int:
        call_span = self.offsets.node_span(node)
        callee_span = self.offsets.node_span(node.func)
        data = self.offsets.data
        open_paren = data.index(b"(", callee_span.end, call_span.end)
        arg_span = Span(open_paren + 1, call_span.end - 1)
        site = CallSite(
            callee=callee,
            callee_text=callee_span.slice(data).decode("utf-8"),
            callee_span=callee_span,
            arg_span=arg_span,
            call_span=call_span,
            line_range=(node.lineno, node.end_lineno),
            normalized_args=normalize_args(arg_span.slice(data).decode("utf-8")),
        )
        self.sites.append(site)
        self.site_roots.append(callee.split(".", 1)[0])
        return len(self.sites) - 1


@dataclass
class DataflowGraph:
    """Directed def-use graph whose nodes are library call sites."""

    sites: list[CallSite]
    edges: set[tuple[int, int]]

    @property
    def depth(self) -> int:
        """Edge count of the longest path; 0 when there are no edges."""
        longest = [0] * len(self.sites)
        for producer, consumer in sorted(self.edges):
            if longest[producer] + 1 > longest[consumer]:
                longest[consumer] = longest[producer] + 1
        return max(longest, default=0)


def analyze(source: str, roots: Iterable[str]) -> DataflowGraph:
    """Parse and analyze; raises SyntaxError when the source does not parse."""
    analysis = _Analysis(source, frozenset(roots))
    return DataflowGraph(analysis.sites, analysis.edges)


def find_calls(source: str, roots: Iterable[str]) -> list[CallSite]:
    """Library call sites in evaluation order (inner calls before outer)."""
    return analyze(source, roots).sites


def build_dataflow(source: str, roots: Iterable[str]) -> DataflowGraph:
    return analyze(source, roots)


# --- source rebuilding ------------------------------------------------------


def _stmt_span(offsets: _Offsets, stmt: ast.stmt) -> Span:
    """Statement span, widened to cover its decorators."""
    span = offsets.node_span(stmt)
    decorators = getattr(stmt, "decorator_list", None)
    if decorators:
        start = offsets.line_start(decorators[0].lineno)
        return Span(min(span.start, start), span.end)
    return span


def first_lineno(stmt: ast.stmt) -> int:
    decorators = getattr(stmt, "decorator_list", None)
    if decorators:
        return min(stmt.lineno, decorators[0].lineno)
    return stmt.lineno


def top_level_statements(source: str) -> list[tuple[int, int]]:
    """(first_line, last_line) per top-level statement, decorators included."""
    tree = ast.parse(source)
    return [(first_lineno(stmt), stmt.end_lineno) for stmt in tree.body]


def _rebuild(source: str, kept: Sequence[ast.stmt]) -> str:
    """Reassemble a module from the original text of the kept statements."""
    offsets = _Offsets(source)
    segments = [
        _stmt_span(offsets, stmt).slice(offsets.data).decode("utf-8") for stmt in kept
    ]
    return "\n".join(segments)


def _is_print(stmt: ast.stmt) -> bool:
    return (
        isinstance(stmt, ast.Expr)
        and isinstance(stmt.value, ast.Call)
        and isinstance(stmt.value.func, ast.Name)
        and stmt.value.func.id == "print"
    )


def strip_prints(source: str) -> str:
    """Drop top-level print statements; logging noise never carries dataflow."""
    tree = ast.parse(source)
    kept = [stmt for stmt in tree.body if not _is_print(stmt)]
    if len(kept) == len(tree.body):
        return source
    return _rebuild(source, kept)


@dataclass
class _StmtFacts:
    defs: set[str]
    uses: set[str]
    simple: bool  # plain name assignment whose defs fully replace old values
    has_library_call: bool
    has_target_call: bool


def _name_facts(stmt: ast.stmt) -> tuple[set[str], set[str], bool]:
    defs: set[str] = set()
    uses: set[str] = set()
    if isinstance(stmt, ast.Import):
        for name in stmt.names:
            defs.add(name.asname or name.name.split(".", 1)[0])
        return defs, uses, False
    if isinstance(stmt, ast.ImportFrom):
        for name in stmt.names:
            if name.name != "*":
                defs.add(name.asname or name.name)
        return defs, uses, False
    simple = isinstance(stmt, ast.Assign) and all(
        isinstance(t, ast.Name) for t in stmt.targets
    )
    for node in ast.walk(stmt):
        if isinstance(node, ast.Name):
            if isinstance(node.ctx, ast.Load):
                uses.add(node.id)
            else:
                defs.add(node.id)
        elif isinstance(node, (ast.Attribute, ast.Subscript)) and isinstance(
            node.ctx, (ast.Store, ast.Del)
        ):
            # Mutating x.attr or x[i] both defines and uses x.
            base = node.value
            while isinstance(base, (ast.Attribute, ast.Subscript)):
                base = base.value
            if isinstance(base, ast.Name):
                uses.add(base.id)
                defs.add(base.id)
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            defs.add(node.name)
    return defs, uses, simple


def eliminate_dead_code(source: str, target: ApiTarget) -> str:
    """Remove top-level statements that feed neither the target nor any
    library call.

    Backward liveness pass: a statement survives when it contains a library
    call, or defines a name some later surviving statement uses. Statements
    on a dataflow path into the target call survive by construction, since
    the target call statement itself always survives and its uses propagate.
    """
    roots = target.library_roots()
    tree = ast.parse(source)
    aliases = _import_aliases(tree)

    facts: list[_StmtFacts] = []
    for stmt in tree.body:
        defs, uses, simple = _name_facts(stmt)
        has_lib = False
        has_tgt = False
        for node in ast.walk(stmt):
            if not isinstance(node, ast.Call):
                continue
            dotted = _dotted_name(node.func)
            if dotted is None:
                continue
            expanded = aliases.get(dotted[0], dotted[0])
            full = ".".join([expanded] + dotted[1:])
            if full.split(".", 1)[0] in roots:
                has_lib = True
                if target.matches_call(full):
                    has_tgt = True
        facts.append(_StmtFacts(defs, uses, simple, has_lib, has_tgt))

    needed: set[str] = set()
    kept_flags = [False] * len(tree.body)
    for idx in range(len(tree.body) - 1, -1, -1):
        info = facts[idx]
        keep = info.has_library_call or info.has_target_call or bool(info.defs & needed)
        if not keep:
            continue
        kept_flags[idx] = True
        if info.simple:
            needed -= info.defs
        needed |= info.uses

    kept = [stmt for stmt, flag in zip(tree.body, kept_flags) if flag]
    if len(kept) == len(tree.body):
        return source
    return _rebuild(source, kept)


def calls_target(source: str, target: ApiTarget) -> bool:
    """True when a parse of the source contains a call to the target API."""
    try:
        sites = find_calls(source, target.library_roots())
    except SyntaxError:
        return False
    return any(target.matches_call(site.callee) for site in sites)
