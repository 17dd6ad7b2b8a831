"""Normalization, program records, and the seed bank."""

from __future__ import annotations

import math
from collections import Counter
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llmfuzz.corpus import (
    ApiTarget,
    EmptyBankError,
    FitnessScore,
    Library,
    Provenance,
    SeedBank,
    Validity,
    load_corpus,
    norm_hash,
    normalize,
    save_corpus,
    select_seed,
)
from llmfuzz.corpus import TestProgram as Program

TARGET = ApiTarget("torch.mm", Library.TORCH_LIKE, "mm(input, mat2)")


def make_program(source: str, total: int, valid: bool = True) -> Program:
    return Program.from_source(
        source,
        TARGET,
        fitness=FitnessScore(depth=total, unique_calls=0, repeats=0),
        validity=Validity.VALID if valid else Validity.RUNTIME_ERROR,
    )


class TestNormalize:
    def test_strips_comment_and_blank_line(self):
        assert normalize("x = 1  # c\n\n") == "x = 1"

    def test_strips_trailing_whitespace(self):
        assert normalize("a = 2   \nb = 3\t\n") == "a = 2\nb = 3"

    def test_keeps_hash_inside_strings(self):
        assert normalize("s = 'a # b'\n") == "s = 'a # b'"

    def test_keeps_blank_lines_inside_triple_quotes(self):
        src = 'doc = """a\n\nb"""\nx = 1\n'
        assert normalize(src) == 'doc = """a\n\nb"""\nx = 1'

    def test_unparseable_input_is_fine(self):
        assert normalize("def broken(  # hm\n\n") == "def broken("

    @given(st.text(alphabet=st.characters(codec="utf-8"), max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_idempotent(self, text):
        once = normalize(text)
        assert normalize(once) == once

    def test_hash_ignores_formatting_noise(self):
        a = norm_hash("x = torch.mm(a, b)  # call\n")
        b = norm_hash("x = torch.mm(a, b)\n\n")
        assert a == b
        assert len(a) == 64

    def test_hash_distinguishes_code(self):
        assert norm_hash("x = 1") != norm_hash("x = 2")


class TestApiTarget:
    def test_rejects_whitespace_names(self):
        with pytest.raises(ValueError):
            ApiTarget("torch .mm")
        with pytest.raises(ValueError):
            ApiTarget("")

    def test_rejects_foreign_signature(self):
        with pytest.raises(ValueError):
            ApiTarget("torch.mm", Library.TORCH_LIKE, "conv2d(x)")

    def test_signature_may_use_last_component_or_full_path(self):
        ApiTarget("torch.mm", Library.TORCH_LIKE, "mm(input, mat2)")
        ApiTarget("torch.mm", Library.TORCH_LIKE, "torch.mm(input, mat2)")

    def test_matches_call_through_root_aliases(self):
        conv = ApiTarget("tf.nn.conv2d", Library.TENSORFLOW_LIKE)
        assert conv.matches_call("tf.nn.conv2d")
        assert conv.matches_call("tensorflow.nn.conv2d")
        assert not conv.matches_call("tf.nn.conv3d")
        assert not conv.matches_call("numpy.nn.conv2d")

    def test_generic_library_matches_own_root_only(self):
        target = ApiTarget("mylib.op")
        assert target.matches_call("mylib.op")
        assert not target.matches_call("torch.op")


class TestProvenance:
    def test_seed_carries_no_parent(self):
        with pytest.raises(ValueError):
            Provenance("seed", operator_id=1)

    def test_mutant_needs_parent(self):
        with pytest.raises(ValueError):
            Provenance("mutant", operator_id=1, parent_hash=None)
        Provenance.mutant(3, "abc")


class TestSeedBank:
    def test_insert_dedups_on_normalized_hash(self):
        bank = SeedBank()
        assert bank.insert(make_program("x = 1\n", 1))
        assert not bank.insert(make_program("x = 1  # same\n", 5))
        assert len(bank) == 1

    def test_only_valid_programs_are_seed_candidates(self):
        bank = SeedBank()
        bank.insert(make_program("a = 1", 9, valid=False))
        bank.insert(make_program("b = 2", 1))
        assert [p.source for p in bank.valid_programs()] == ["b = 2"]
        assert bank.valid_count == 1
        assert len(bank) == 2

    def test_fitness_index_orders_by_total_then_recency(self):
        bank = SeedBank()
        bank.insert(make_program("a = 1", 2))
        bank.insert(make_program("b = 2", 5))
        bank.insert(make_program("c = 3", 2))
        ordered = [p.source for p in bank.valid_programs()]
        assert ordered == ["b = 2", "c = 3", "a = 1"]

    def test_select_seed_requires_candidates(self):
        with pytest.raises(EmptyBankError):
            select_seed(SeedBank(), 10, Random(0))


class TestSelectSeed:
    def test_softmax_ratio_matches_analytic_value(self):
        # Two candidates, totals 5 and 2: expected pick ratio e^5 : e^2.
        bank = SeedBank()
        bank.insert(make_program("a = 1", 5))
        bank.insert(make_program("b = 2", 2))
        rng = Random(1234)
        draws = 100_000
        hits = sum(
            1 for _ in range(draws) if select_seed(bank, 10, rng).source == "a = 1"
        )
        expected = math.exp(5) / (math.exp(5) + math.exp(2))
        assert abs(hits / draws - expected) < 0.01

    def test_equal_fitness_is_near_uniform(self):
        bank = SeedBank()
        for name in ("a", "b", "c"):
            bank.insert(make_program(f"{name} = 1", 3))
        rng = Random(99)
        counts = Counter(select_seed(bank, 10, rng).source for _ in range(30_000))
        for share in counts.values():
            assert abs(share / 30_000 - 1 / 3) < 0.02

    def test_top_n_window_excludes_the_rest(self):
        bank = SeedBank()
        bank.insert(make_program("low = 0", 0))
        bank.insert(make_program("high = 1", 10))
        rng = Random(5)
        picks = {select_seed(bank, 1, rng).source for _ in range(200)}
        assert picks == {"high = 1"}


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        bank = SeedBank()
        seed = make_program("import torch\nt = torch.mm(a, b)\n", 3)
        bank.insert(seed)
        mutant = Program.from_source(
            "import torch\nt = torch.mm(None)\n",
            TARGET,
            fitness=FitnessScore(0, 1, 0),
            validity=Validity.RUNTIME_ERROR,
            provenance=Provenance.mutant(0, seed.norm_hash),
        )
        bank.insert(mutant)
        manifest = save_corpus(bank, tmp_path)
        assert manifest.exists()
        assert (tmp_path / f"{seed.norm_hash}.py").read_text() == seed.source

        loaded = load_corpus(tmp_path, TARGET)
        assert len(loaded) == 2
        again = loaded.get(mutant.norm_hash)
        assert again is not None
        assert again.provenance == mutant.provenance
        assert again.fitness == mutant.fitness
        assert again.validity is Validity.RUNTIME_ERROR
        assert loaded.get(seed.norm_hash).validity is Validity.VALID

    def test_save_is_deterministic(self, tmp_path):
        bank = SeedBank()
        bank.insert(make_program("a = 1", 1))
        bank.insert(make_program("b = 2", 2))
        first = save_corpus(bank, tmp_path / "one").read_text()
        second = save_corpus(bank, tmp_path / "two").read_text()
        assert first == second
