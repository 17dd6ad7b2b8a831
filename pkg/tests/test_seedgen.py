"""Seed prompts, seed sampling, and the API catalog loader."""

from __future__ import annotations

import pytest

from llmfuzz.corpus import ApiTarget, Library
from llmfuzz.genbackend import CompletionRequest, MockBackend, SamplingParams
from llmfuzz.seedgen import (
    build_prompt,
    generate_seeds,
    infer_library,
    load_api_catalog,
    parse_library,
)

MM = ApiTarget("torch.mm", Library.TORCH_LIKE, signature="mm(input, mat2)")


class TestPrompt:
    def test_torch_prompt_text(self):
        prompt = build_prompt(MM)
        assert prompt.text == (
            '"""\n'
            "PyTorch program that calls the API torch.mm(input, mat2).\n"
            "Task 1: Import the PyTorch library.\n"
            "Task 2: Generate input data for the API.\n"
            "Task 3: Call the API torch.mm(input, mat2).\n"
            '"""\n'
            "import torch\n"
        )
        assert prompt.kickoff == "import torch"

    def test_tensorflow_prompt_uses_tf_alias(self):
        target = ApiTarget("tf.nn.conv2d", Library.TENSORFLOW_LIKE)
        prompt = build_prompt(target)
        assert "TensorFlow program that calls the API tf.nn.conv2d." in prompt.text
        assert prompt.kickoff == "import tensorflow as tf"

    def test_generic_library_derives_import_from_root(self):
        target = ApiTarget("numpy.linalg.svd", Library.GENERIC)
        prompt = build_prompt(target)
        assert prompt.kickoff == "import numpy"
        assert "numpy program that calls the API numpy.linalg.svd." in prompt.text

    def test_signature_free_target_uses_bare_name(self):
        target = ApiTarget("torch.rand", Library.TORCH_LIKE)
        assert "calls the API torch.rand.\n" in build_prompt(target).text


class TestGenerateSeeds:
    def make_backend(self, samples):
        backend = MockBackend()
        prompt = build_prompt(MM)
        req = CompletionRequest(prompt.text, SamplingParams(num_samples=len(samples)))
        backend.add_response(req, samples)
        return backend

    def test_keeps_programs_that_call_the_target(self):
        backend = self.make_backend(
            [
                "a = torch.rand(2, 2)\nb = torch.mm(a, a)\n",
                "x = torch.rand(3)\n",  # no target call
            ]
        )
        seeds = generate_seeds(MM, backend, SamplingParams(num_samples=2))
        assert len(seeds) == 1
        assert seeds[0].source.startswith("import torch\n")
        assert seeds[0].provenance.kind == "seed"

    def test_deduplicates_by_normalized_hash(self):
        body = "a = torch.rand(2, 2)\nb = torch.mm(a, a)\n"
        commented = "a = torch.rand(2, 2)  # data\nb = torch.mm(a, a)\n"
        backend = self.make_backend([body, commented, body])
        seeds = generate_seeds(MM, backend, SamplingParams(num_samples=3))
        assert len(seeds) == 1

    def test_unmatched_backend_yields_nothing_useful(self):
        # Default mock fill is "None", which never calls the target.
        seeds = generate_seeds(MM, MockBackend(), SamplingParams(num_samples=4))
        assert seeds == []

    def test_seed_programs_record_zero_fitness_until_scored(self):
        backend = self.make_backend(["b = torch.mm(torch.rand(2, 2), torch.rand(2, 2))\n"])
        seeds = generate_seeds(MM, backend, SamplingParams(num_samples=1))
        assert seeds[0].fitness.total == 0


class TestLibraryInference:
    def test_known_roots(self):
        assert infer_library("torch.mm") is Library.TORCH_LIKE
        assert infer_library("tf.add") is Library.TENSORFLOW_LIKE
        assert infer_library("tensorflow.add") is Library.TENSORFLOW_LIKE
        assert infer_library("numpy.dot") is Library.GENERIC

    def test_parse_library_accepts_enum_values_and_aliases(self):
        assert parse_library("torch-like", "x.y") is Library.TORCH_LIKE
        assert parse_library("pytorch", "x.y") is Library.TORCH_LIKE
        assert parse_library(None, "torch.mm") is Library.TORCH_LIKE
        with pytest.raises(ValueError):
            parse_library("fortran", "x.y")


class TestCatalog:
    def test_loads_jsonl_records(self, tmp_path):
        path = tmp_path / "apis.jsonl"
        path.write_text(
            '{"name": "torch.mm", "signature": "mm(a, b)", "library": "torch-like"}\n'
            "\n"
            '{"name": "tf.add"}\n'
        )
        targets = load_api_catalog(path)
        assert [t.qualified_name for t in targets] == ["torch.mm", "tf.add"]
        assert targets[0].signature == "mm(a, b)"
        assert targets[1].library is Library.TENSORFLOW_LIKE

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "apis.jsonl"
        path.write_text('{"name": "ok.fn"}\n{"signature": "missing name"}\n')
        with pytest.raises(ValueError, match=r"apis\.jsonl:2"):
            load_api_catalog(path)
