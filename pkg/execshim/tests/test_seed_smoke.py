"""Seed-mode smoke test against an installed DL library through the shim.

Uses recorded completions so no live model is needed; the programs still
execute for real, so a working torch install is required (skipped
otherwise). Checks that prompted seed synthesis plus out-of-process
execution yields at least one valid program per API.
"""

from __future__ import annotations

import sys

import pytest

pytest.importorskip("llmfuzz")
pytest.importorskip("torch")

from llmfuzz.corpus import ApiTarget, Validity
from llmfuzz.engine import CampaignConfig, Mode, ShimExecutor, run_campaign
from llmfuzz.genbackend import SEED_SAMPLING, CompletionRequest, MockBackend
from llmfuzz.seedgen import build_prompt, infer_library

# Recorded model output per API: program bodies without the import line,
# which the seed pipeline prepends itself.
SEED_COMPLETIONS = {
    "torch.abs": "t = torch.rand(2, 3)\nu = torch.abs(t)\n",
    "torch.log": "t = torch.rand(3, 3)\nu = torch.log(t)\n",
    "torch.mm": "a = torch.rand(2, 2)\nb = torch.rand(2, 2)\nc = torch.mm(a, b)\n",
}


_CAPTURE = None


@pytest.fixture(autouse=True)
def _expose_capture(capsys):
    global _CAPTURE
    _CAPTURE = capsys
    yield
    _CAPTURE = None


def record(name: str, passed: bool, detail: str) -> None:
    line = f"[acceptance] {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    if _CAPTURE is not None:
        with _CAPTURE.disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)
    assert passed, line


def seeded_backend():
    backend = MockBackend()
    for api, body in SEED_COMPLETIONS.items():
        target = ApiTarget(api, library=infer_library(api))
        request = CompletionRequest(build_prompt(target).text, SEED_SAMPLING)
        backend.add_response(request, [body])
    return backend


def test_seed_smoke_on_installed_library():
    backend = seeded_backend()
    executor = ShimExecutor((sys.executable, "-m", "execshim"), timeout=60.0)
    config = CampaignConfig(budget_per_api=120.0, mode=Mode.SEED_ONLY, rng_seed=0)

    outcomes = {}
    for api in sorted(SEED_COMPLETIONS):
        target = ApiTarget(api, library=infer_library(api))
        result = run_campaign(target, config, backend, executor=executor)
        valid = [
            p for p in result.bank.programs() if p.validity is Validity.VALID
        ]
        assert result.report.mode == "seed-only"
        assert result.report.counts.iterations == 0
        outcomes[api] = (result.report.counts.seeds_kept, len(valid))

    ok = all(seeds >= 1 and valid >= 1 for seeds, valid in outcomes.values())
    detail = ", ".join(
        f"{api} seeds={s} valid={v}" for api, (s, v) in sorted(outcomes.items())
    )
    record("seed-smoke-on-installed-library", ok, detail)
