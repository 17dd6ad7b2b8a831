"""Parsing utilities, call discovery, dataflow, and source repairs."""

from __future__ import annotations

import ast

import pytest

from llmfuzz.corpus import ApiTarget, Library
from llmfuzz.pyast import (
    build_dataflow,
    calls_target,
    eliminate_dead_code,
    find_calls,
    normalize_args,
    parse_check,
    parses,
    strip_prints,
    top_level_statements,
    trim_to_parse,
)

TORCH = {"torch"}
MM = ApiTarget("torch.mm", Library.TORCH_LIKE)


class TestParseCheck:
    def test_ok(self):
        assert parse_check("x = 1\n") is None

    def test_error_location(self):
        issue = parse_check("x = 1\ny = (\n")
        assert issue is not None
        assert issue.line >= 2

    def test_parses_helper(self):
        assert parses("pass")
        assert not parses("def (")


class TestTrimToParse:
    def test_drops_dangling_tail(self):
        assert trim_to_parse("a = 1\nb = (2,\n") == "a = 1\n"

    def test_keeps_parseable_input_byte_identical(self):
        src = "x = 1\nif x:\n    x += 1\n"
        assert trim_to_parse(src) == src

    def test_totally_broken_input_gives_empty(self):
        assert trim_to_parse(")))\n(((") == ""

    def test_recovers_past_unclosed_string(self):
        src = 'a = 1\ns = """open\nnever closed'
        assert trim_to_parse(src) == "a = 1\n"

    def test_result_is_always_a_prefix(self):
        src = "a = 1\nb = 2\nc = (\n"
        out = trim_to_parse(src)
        assert src.startswith(out)


class TestFindCalls:
    def test_spans_slice_back_to_text(self):
        src = "import torch\nt = torch.mm(a, b)\n"
        (site,) = find_calls(src, TORCH)
        data = src.encode()
        assert site.callee == "torch.mm"
        assert site.callee_span.slice(data).decode() == site.callee_text == "torch.mm"
        assert site.call_span.slice(data).decode() == "torch.mm(a, b)"
        assert site.arg_span.slice(data).decode() == "a, b"

    def test_alias_resolution(self):
        src = "import torch as t\nx = t.mm(a, b)\n"
        (site,) = find_calls(src, TORCH)
        assert site.callee == "torch.mm"
        assert site.callee_text == "t.mm"

    def test_from_import_resolution(self):
        src = "from torch import mm\nx = mm(a, b)\n"
        (site,) = find_calls(src, TORCH)
        assert site.callee == "torch.mm"

    def test_submodule_alias(self):
        src = "import torch.nn.functional as F\ny = F.relu(x)\n"
        (site,) = find_calls(src, TORCH)
        assert site.callee == "torch.nn.functional.relu"

    def test_method_call_on_library_value(self):
        src = "import torch\na = torch.rand(3)\nb = a.abs()\n"
        sites = find_calls(src, TORCH)
        assert [s.callee for s in sites] == ["torch.rand", "torch.*.abs"]

    def test_method_call_on_plain_value_is_not_a_site(self):
        src = "import torch\nname = 'x'\nup = name.upper()\n"
        assert find_calls(src, TORCH) == []

    def test_inner_call_registers_before_outer(self):
        src = "import torch\nt = torch.mm(torch.rand(2, 2), b)\n"
        sites = find_calls(src, TORCH)
        assert [s.callee for s in sites] == ["torch.rand", "torch.mm"]

    def test_unparseable_source_raises(self):
        with pytest.raises(SyntaxError):
            find_calls("x = (", TORCH)

    def test_multiline_call_span(self):
        src = "import torch\nt = torch.mm(\n    a,\n    b,\n)\n"
        (site,) = find_calls(src, TORCH)
        assert site.line_range == (2, 5)
        assert site.normalized_args == "a , b ,"


class TestNormalizeArgs:
    def test_whitespace_insensitive(self):
        assert normalize_args("a,b") == normalize_args("a,  b") == "a , b"

    def test_comments_dropped(self):
        assert normalize_args("a,  # first\n b") == "a , b"

    def test_keyword_form(self):
        assert normalize_args("x, dim=1") == "x , dim = 1"

    def test_strings_kept_verbatim(self):
        assert normalize_args("'a  b'") == "'a  b'"

    def test_empty(self):
        assert normalize_args("") == ""


class TestDataflow:
    def test_chain_depth(self):
        src = (
            "import torch\n"
            "a = torch.rand(3)\n"
            "b = torch.log(a)\n"
            "c = torch.matrix_exp(b)\n"
        )
        graph = build_dataflow(src, TORCH)
        assert graph.depth == 2
        assert graph.edges == {(0, 1), (1, 2)}

    def test_fanout_depth_is_one(self):
        src = (
            "import torch\n"
            "x = torch.rand(4)\n"
            "y = torch.abs(x)\n"
            "z = torch.abs(x)\n"
        )
        graph = build_dataflow(src, TORCH)
        assert graph.depth == 1
        assert graph.edges == {(0, 1), (0, 2)}

    def test_no_edges_means_depth_zero(self):
        src = "import torch\na = torch.rand(2)\nb = torch.rand(2)\n"
        graph = build_dataflow(src, TORCH)
        assert graph.depth == 0
        assert graph.edges == set()

    def test_reassignment_kills_dataflow(self):
        src = (
            "import torch\n"
            "a = torch.rand(2)\n"
            "a = 5\n"
            "b = torch.log(a)\n"
        )
        graph = build_dataflow(src, TORCH)
        assert graph.edges == set()

    def test_taint_passes_through_arithmetic(self):
        src = (
            "import torch\n"
            "a = torch.rand(2)\n"
            "b = a + 1\n"
            "c = torch.log(b)\n"
        )
        graph = build_dataflow(src, TORCH)
        assert graph.edges == {(0, 1)}

    def test_taint_passes_through_containers(self):
        src = (
            "import torch\n"
            "a = torch.rand(2)\n"
            "b = torch.rand(2)\n"
            "c = torch.cat([a, b])\n"
        )
        graph = build_dataflow(src, TORCH)
        assert graph.edges == {(0, 2), (1, 2)}

    def test_tuple_unpacking_kills_rather_than_guesses(self):
        src = (
            "import torch\n"
            "a = torch.rand(2)\n"
            "x, y = a, 1\n"
            "z = torch.log(x)\n"
        )
        graph = build_dataflow(src, TORCH)
        assert graph.edges == set()

    def test_augmented_assignment_unions(self):
        src = (
            "import torch\n"
            "a = torch.rand(2)\n"
            "b = torch.rand(2)\n"
            "a += b\n"
            "c = torch.log(a)\n"
        )
        graph = build_dataflow(src, TORCH)
        assert graph.edges == {(0, 2), (1, 2)}

    def test_method_chain_grows_depth(self):
        src = (
            "import tensorflow as tf\n"
            "ds = tf.data.Dataset.from_tensor_slices([1, 2])\n"
            "ds = ds.batch(2)\n"
            "ds = ds.repeat(3)\n"
        )
        graph = build_dataflow(src, {"tf", "tensorflow"})
        assert [s.callee for s in graph.sites] == [
            "tensorflow.data.Dataset.from_tensor_slices",
            "tensorflow.*.batch",
            "tensorflow.*.repeat",
        ]
        assert graph.depth == 2

    def test_for_loop_target_inherits_iter_taint(self):
        src = (
            "import torch\n"
            "batches = torch.chunk(t, 2)\n"
            "for part in batches:\n"
            "    s = torch.sum(part)\n"
        )
        graph = build_dataflow(src, TORCH)
        assert (0, 1) in graph.edges


class TestStripPrints:
    def test_removes_top_level_prints_only(self):
        src = "import torch\nprint('hi')\nx = torch.rand(2)\nprint(x)\n"
        out = strip_prints(src)
        assert "print" not in out
        assert "x = torch.rand(2)" in out
        assert parses(out)

    def test_keeps_print_results_that_are_consumed(self):
        src = "y = print('x')\n"
        assert strip_prints(src) == src

    def test_semicolon_separated_statements(self):
        src = "x = 1; print(x)\n"
        out = strip_prints(src)
        assert parses(out)
        assert "print" not in out
        assert "x = 1" in out


class TestEliminateDeadCode:
    def test_spec_shaped_example(self):
        src = "import torch\nx = 1\ny = torch.abs(torch.rand(2))\n"
        out = eliminate_dead_code(src, MM)
        assert "x = 1" not in out
        assert "torch.abs" in out
        assert parses(out)

    def test_keeps_defs_feeding_target(self):
        src = (
            "import torch\n"
            "a = torch.rand(2, 2)\n"
            "scale = 3\n"
            "b = a * scale\n"
            "t = torch.mm(b, b)\n"
        )
        out = eliminate_dead_code(src, MM)
        for needed in ("import torch", "a = torch.rand", "scale = 3", "b = a * scale"):
            assert needed in out

    def test_drops_unused_import(self):
        src = "import os\nimport torch\nt = torch.mm(a, b)\n"
        out = eliminate_dead_code(src, MM)
        assert "import os" not in out
        assert "import torch" in out

    def test_keeps_attribute_mutations_on_needed_names(self):
        src = (
            "import torch\n"
            "cfg = {}\n"
            "cfg['dim'] = 2\n"
            "t = torch.rand(cfg['dim'])\n"
        )
        out = eliminate_dead_code(src, MM)
        assert "cfg = {}" in out
        assert "cfg['dim'] = 2" in out

    def test_result_parses_and_is_stable(self):
        src = "import torch\nunused = 41\nt = torch.mm(a, b)\n"
        once = eliminate_dead_code(src, MM)
        assert parses(once)
        assert eliminate_dead_code(once, MM) == once


class TestCallsTarget:
    def test_positive_and_negative(self):
        assert calls_target("import torch\nt = torch.mm(a, b)\n", MM)
        assert not calls_target("import torch\nt = torch.abs(a)\n", MM)
        assert not calls_target("t = torch.mm(", MM)

    def test_via_alias(self):
        assert calls_target("import torch as th\nt = th.mm(a, b)\n", MM)


class TestTopLevelStatements:
    def test_line_blocks(self):
        src = "import torch\nif x:\n    y = 1\n    z = 2\nw = 3\n"
        assert top_level_statements(src) == [(1, 1), (2, 4), (5, 5)]

    def test_decorated_function_includes_decorator_line(self):
        src = "@deco\ndef f():\n    pass\n"
        assert top_level_statements(src) == [(1, 3)]
