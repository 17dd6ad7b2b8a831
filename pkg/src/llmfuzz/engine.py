"""Campaign orchestration.

One campaign fuzzes one API: synthesize seeds, then loop under a time budget
picking a parent (softmax over fitness), an operator (Thompson sampling),
infilling the masked parent, and scoring the survivors. Full mode executes
programs through an out-of-process shim for validity and runs every unique
valid program on both backends for the differential verdict.

Time is injectable: the wall clock for real runs, a stepped clock that
advances a fixed cost per backend call for reproducible offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import subprocess
import tempfile
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from random import Random
from typing import Callable, Sequence

from .bandit import OperatorStats, init_prior, select_operator, update_posterior
from .corpus import (
    ApiTarget,
    Provenance,
    SeedBank,
    TestProgram,
    Validity,
    save_corpus,
    select_seed,
)
from .fitness import score
from .genbackend import (
    BackendError,
    GenerationBackend,
    InfillRequest,
    postprocess,
    splice,
)
from .mutator import MaskError, apply_operator
from .oracle import (
    DiffVerdict,
    ExecStatus,
    ExecutionReport,
    ProcessOutcome,
    StatusKind,
    ToleranceSpec,
    VerdictKind,
    apply_allowlist,
    classify_crash,
    compare,
    parse_report,
)
from .pyast import find_calls
from .seedgen import generate_seeds
from . import genbackend

log = logging.getLogger(__name__)


class Mode(Enum):
    FULL = "full"
    SEED_ONLY = "seed-only"
    STATIC_ONLY = "static-only"


class Clock(ABC):
    @abstractmethod
    def now(self) -> float: ...

    def charge(self, event: str) -> None:
        """Hint that a costed event happened; only stepped clocks care."""


class WallClock(Clock):
    def now(self) -> float:
        return time.monotonic()


class SteppedClock(Clock):
    """Virtual time that advances a fixed amount per charged event.

    With the mock backend a campaign performs no real waiting, so budgets
    are meaningless on the wall clock; charging one second per backend round
    trip makes "10 seconds of budget" mean a fixed number of iterations.
    """

    DEFAULT_COSTS = {"backend": 1.0, "execution": 0.1, "iteration": 0.01}

    def __init__(self, costs: dict[str, float] | None = None) -> None:
        self.costs = dict(self.DEFAULT_COSTS if costs is None else costs)
        self._elapsed = 0.0

    def now(self) -> float:
        return self._elapsed

    def charge(self, event: str) -> None:
        self._elapsed += self.costs.get(event, 0.0)


class InfrastructureError(Exception):
    """The harness itself failed (missing backend, broken shim), not the program."""


class ProgramExecutor(ABC):
    """Runs one generated program on one backend, out of process."""

    @abstractmethod
    def run(
        self, source: str, target: ApiTarget, backend_id: str, rng_seed: int
    ) -> ExecutionReport: ...


# Shim process exit codes (see the execution shim's CLI contract).
SHIM_EXIT_OK = 0
SHIM_EXIT_PROGRAM_ERROR = 1
SHIM_EXIT_INFRASTRUCTURE = 2


class ShimExecutor(ProgramExecutor):
    """Invokes an execution shim command for each run.

    The shim receives the program path plus --backend, --rng-seed,
    --target-api, --report, and --snapshot-cap flags, writes line-delimited
    JSON to the report path, and exits 0/1/2 for ok/program error/harness
    error; signal deaths pass through as negative return codes.
    """

    def __init__(
        self, shim_cmd: Sequence[str], timeout: float = 10.0, snapshot_cap: int = 4096
    ) -> None:
        if not shim_cmd:
            raise ValueError("shim command must not be empty")
        self.shim_cmd = list(shim_cmd)
        self.timeout = timeout
        self.snapshot_cap = snapshot_cap

    def run(
        self, source: str, target: ApiTarget, backend_id: str, rng_seed: int
    ) -> ExecutionReport:
        with tempfile.TemporaryDirectory(prefix="llmfuzz-exec-") as workdir:
            program_path = Path(workdir) / "program.py"
            report_path = Path(workdir) / "report.jsonl"
            program_path.write_text(source, encoding="utf-8")
            cmd = self.shim_cmd + [
                str(program_path),
                "--backend",
                backend_id,
                "--rng-seed",
                str(rng_seed),
                "--target-api",
                target.qualified_name,
                "--report",
                str(report_path),
                "--snapshot-cap",
                str(self.snapshot_cap),
            ]
            timed_out = False
            stdout = stderr = ""
            exit_code: int | None = None
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, text=True, timeout=self.timeout
                )
                exit_code, stdout, stderr = proc.returncode, proc.stdout, proc.stderr
            except subprocess.TimeoutExpired as exc:
                timed_out = True
                stdout = (exc.stdout or b"").decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
                stderr = (exc.stderr or b"").decode("utf-8", "replace") if isinstance(exc.stderr, bytes) else (exc.stderr or "")
            except OSError as exc:
                raise InfrastructureError(f"cannot invoke shim: {exc}") from exc

            text = report_path.read_text(encoding="utf-8") if report_path.exists() else ""
            parsed = parse_report(text)
            outcome = ProcessOutcome(exit_code, stdout, stderr, timed_out)
            crash = classify_crash(outcome)
            if timed_out:
                status = ExecStatus(StatusKind.TIMEOUT, detail="wall-clock")
            elif crash is not None:
                status = ExecStatus(StatusKind.CRASH, detail=crash, message=stderr[-500:])
            elif exit_code == SHIM_EXIT_INFRASTRUCTURE:
                raise InfrastructureError(stderr.strip() or "shim infrastructure error")
            elif parsed.status is not None:
                status = parsed.status
            elif exit_code == SHIM_EXIT_PROGRAM_ERROR:
                status = ExecStatus(StatusKind.EXCEPTION, detail="unknown")
            else:
                raise InfrastructureError(
                    f"shim exited {exit_code} without a status record"
                )
            return ExecutionReport(
                backend=backend_id,
                status=status,
                snapshots=tuple(parsed.snapshots),
                duration=parsed.duration,
                target_invoked=parsed.target_invoked,
            )


@dataclass(frozen=True)
class CampaignConfig:
    budget_per_api: float = 60.0
    top_n: int = 10
    infill_samples: int = 5
    seed_sampling: genbackend.SamplingParams = genbackend.SEED_SAMPLING
    mutant_sampling: genbackend.SamplingParams = genbackend.INFILL_SAMPLING
    exec_timeout: float = 10.0
    tolerance: ToleranceSpec = ToleranceSpec()
    rng_seed: int = 0
    mode: Mode = Mode.FULL
    dedup_aware_reward: bool = True
    allowlist: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.budget_per_api <= 0 or self.exec_timeout <= 0:
            raise ValueError("budgets and timeouts must be positive")
        if self.top_n < 1 or self.infill_samples < 1:
            raise ValueError("top_n and infill_samples must be at least 1")
        if self.mutant_sampling.num_samples != self.infill_samples:
            object.__setattr__(
                self,
                "mutant_sampling",
                replace(self.mutant_sampling, num_samples=self.infill_samples),
            )


@dataclass
class CampaignCounts:
    seeds_kept: int = 0
    iterations: int = 0
    samples_generated: int = 0
    valid_unique: int = 0
    invalid: int = 0
    duplicates: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "seeds_kept": self.seeds_kept,
            "iterations": self.iterations,
            "samples_generated": self.samples_generated,
            "valid_unique": self.valid_unique,
            "invalid": self.invalid,
            "duplicates": self.duplicates,
        }


@dataclass
class CampaignReport:
    api: str
    mode: str
    rng_seed: int
    counts: CampaignCounts
    operator_stats: dict[str, dict[str, int]]
    findings: list[dict]
    notes: list[str]
    timing: dict[str, float]

    def to_json(self) -> dict:
        return {
            "api": self.api,
            "mode": self.mode,
            "rng_seed": self.rng_seed,
            "counts": self.counts.as_dict(),
            "operator_stats": self.operator_stats,
            "findings": self.findings,
            "notes": self.notes,
            "timing": self.timing,
        }


@dataclass
class CampaignResult:
    report: CampaignReport
    bank: SeedBank


def derive_seed(base_seed: int, name: str) -> int:
    """Stable per-API seed so suite results ignore scheduling order."""
    digest = hashlib.sha256(f"{base_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def exec_seed(base_seed: int, program_hash: str) -> int:
    """Per-program RNG seed, identical for both backends of a pair."""
    return derive_seed(base_seed, program_hash)


class _Campaign:
    def __init__(
        self,
        target: ApiTarget,
        config: CampaignConfig,
        backend: GenerationBackend,
        executor: ProgramExecutor | None,
        clock: Clock,
    ) -> None:
        self.target = target
        self.config = config
        self.backend = backend
        self.executor = executor if config.mode is not Mode.STATIC_ONLY else None
        self.clock = clock
        self.rng = Random(config.rng_seed)
        self.roots = target.library_roots()
        self.bank = SeedBank()
        self.stats = init_prior()
        self.counts = CampaignCounts()
        self.findings: list[dict] = []
        self.notes: list[str] = []
        self.timing: dict[str, float] = {"backend": 0.0, "execution": 0.0, "analysis": 0.0}
        self.cpu_reports: dict[str, ExecutionReport] = {}
        self.accelerator_ok = True

    def _timed(self, key: str, fn, *args):
        begin = time.monotonic()
        try:
            return fn(*args)
        finally:
            self.timing[key] += time.monotonic() - begin

    def _exec_seed_for(self, program_hash: str) -> int:
        return exec_seed(self.config.rng_seed, program_hash)

    def _evaluate(self, program: TestProgram) -> TestProgram:
        """Fitness plus validity; records crash findings seen during the run."""
        fitness = self._timed("analysis", score, program.source, self.roots)
        program = program.with_fitness(fitness)
        if self.executor is None:
            # No execution available: parseable with a target call is as
            # valid as we can know.
            return program.with_validity(Validity.VALID)
        self.clock.charge("execution")
        report = self._timed(
            "execution",
            self.executor.run,
            program.source,
            self.target,
            "cpu",
            self._exec_seed_for(program.norm_hash),
        )
        self.cpu_reports[program.norm_hash] = report
        if report.status.kind is StatusKind.CRASH:
            self.findings.append(
                {
                    "phase": "validity",
                    "program": program.norm_hash,
                    "verdict": DiffVerdict(
                        VerdictKind.CRASH,
                        detail=report.status.detail,
                        backend=report.backend,
                    ).as_dict(),
                }
            )
            return program.with_validity(Validity.RUNTIME_ERROR)
        if report.status.kind is not StatusKind.OK:
            return program.with_validity(Validity.RUNTIME_ERROR)
        if report.target_invoked is False:
            return program.with_validity(Validity.VALID_NO_TARGET_CALL)
        return program.with_validity(Validity.VALID)

    def _seed_phase(self) -> None:
        self.clock.charge("backend")
        try:
            seeds = self._timed(
                "backend",
                generate_seeds,
                self.target,
                self.backend,
                self.config.seed_sampling,
            )
        except BackendError as exc:
            self.notes.append(f"seed generation failed: {exc}")
            return
        for program in seeds:
            program = self._evaluate(program)
            if self.bank.insert(program):
                self.counts.seeds_kept += 1

    def _mutation_round(self) -> None:
        self.clock.charge("iteration")
        parent = select_seed(self.bank, self.config.top_n, self.rng)
        operator = select_operator(self.stats, self.rng)
        try:
            sites = self._timed("analysis", find_calls, parent.source, self.roots)
            masked = apply_operator(operator, parent, sites, self.rng)
        except (MaskError, SyntaxError):
            update_posterior(self.stats, operator, 0, 1)
            return
        request = InfillRequest(tuple(masked.segments()), self.config.mutant_sampling)
        self.clock.charge("backend")
        try:
            samples = self._timed("backend", self.backend.infill, request)
        except BackendError as exc:
            log.warning("infill request failed: %s", exc)
            update_posterior(self.stats, operator, 0, 1)
            return
        valid_new = 0
        invalid = 0
        for fills in samples:
            self.counts.samples_generated += 1
            candidate = splice(masked.masked_source, fills)
            result = self._timed("analysis", postprocess, candidate, "mutant", self.target)
            if not result.ok:
                invalid += 1
                self.counts.invalid += 1
                continue
            program = TestProgram.from_source(
                result.source,
                self.target,
                provenance=Provenance.mutant(int(operator), parent.norm_hash),
            )
            existing = self.bank.get(program.norm_hash)
            if existing is not None:
                self.counts.duplicates += 1
                if self.config.dedup_aware_reward:
                    invalid += 1
                elif existing.validity is Validity.VALID:
                    valid_new += 1
                else:
                    invalid += 1
                continue
            program = self._evaluate(program)
            self.bank.insert(program)
            if program.validity is Validity.VALID:
                valid_new += 1
                self.counts.valid_unique += 1
            else:
                invalid += 1
                self.counts.invalid += 1
        update_posterior(self.stats, operator, valid_new, invalid)

    def _differential_phase(self) -> None:
        if self.executor is None or self.config.mode is not Mode.FULL:
            return
        for program in self.bank.programs():
            if program.validity is not Validity.VALID:
                continue
            exec_seed = self._exec_seed_for(program.norm_hash)
            cpu = self.cpu_reports.get(program.norm_hash)
            try:
                if cpu is None:
                    self.clock.charge("execution")
                    cpu = self._timed(
                        "execution",
                        self.executor.run,
                        program.source,
                        self.target,
                        "cpu",
                        exec_seed,
                    )
                self.clock.charge("execution")
                accel = self._timed(
                    "execution",
                    self.executor.run,
                    program.source,
                    self.target,
                    "accelerator",
                    exec_seed,
                )
            except InfrastructureError as exc:
                self.notes.append(f"accelerator unavailable, cpu-only validity: {exc}")
                self.accelerator_ok = False
                return
            verdict = compare(cpu, accel, self.config.tolerance)
            verdict = apply_allowlist(
                verdict, self.target.qualified_name, self.config.allowlist
            )
            if verdict.kind is not VerdictKind.CONSISTENT:
                self.findings.append(
                    {
                        "phase": "differential",
                        "program": program.norm_hash,
                        "verdict": verdict.as_dict(),
                    }
                )

    def run(self) -> CampaignResult:
        wall_begin = time.monotonic()
        begin = self.clock.now()
        self._seed_phase()
        if self.config.mode is not Mode.SEED_ONLY:
            if self.bank.valid_count == 0:
                self.notes.append("no valid seeds; mutation loop skipped")
            else:
                while self.clock.now() - begin <= self.config.budget_per_api:
                    self._mutation_round()
                    self.counts.iterations += 1
        self._differential_phase()
        self.timing["total"] = time.monotonic() - wall_begin
        report = CampaignReport(
            api=self.target.qualified_name,
            mode=self.config.mode.value,
            rng_seed=self.config.rng_seed,
            counts=self.counts,
            operator_stats=self.stats.snapshot(),
            findings=self.findings,
            notes=self.notes,
            timing={k: round(v, 6) for k, v in self.timing.items()},
        )
        return CampaignResult(report=report, bank=self.bank)


def run_campaign(
    target: ApiTarget,
    config: CampaignConfig,
    backend: GenerationBackend,
    executor: ProgramExecutor | None = None,
    clock: Clock | None = None,
) -> CampaignResult:
    """Fuzz one API under one budget."""
    campaign = _Campaign(target, config, backend, executor, clock or WallClock())
    return campaign.run()


@dataclass
class SuiteResult:
    reports: list[CampaignReport]
    results: dict[str, CampaignResult]

    @property
    def has_findings(self) -> bool:
        return any(
            finding["verdict"].get("informational") is not True
            for report in self.reports
            for finding in report.findings
        )


def run_suite(
    targets: Sequence[ApiTarget],
    config: CampaignConfig,
    backend: GenerationBackend,
    executor: ProgramExecutor | None = None,
    parallelism: int = 1,
    clock_factory: Callable[[], Clock] | None = None,
) -> SuiteResult:
    """Independent campaigns per API; results do not depend on parallelism.

    Each campaign gets an rng seed derived from the base seed and the API
    name, so scheduling order cannot leak into any output. Duplicate target
    names are dropped with a warning.
    """
    unique: list[ApiTarget] = []
    seen: set[str] = set()
    for target in targets:
        if target.qualified_name in seen:
            log.warning("duplicate target %s dropped", target.qualified_name)
            continue
        seen.add(target.qualified_name)
        unique.append(target)

    factory = clock_factory or WallClock

    def one(target: ApiTarget) -> tuple[str, CampaignResult]:
        campaign_config = replace(
            config, rng_seed=derive_seed(config.rng_seed, target.qualified_name)
        )
        result = run_campaign(
            target, campaign_config, backend, executor, clock=factory()
        )
        return target.qualified_name, result

    results: dict[str, CampaignResult] = {}
    if parallelism <= 1 or len(unique) <= 1:
        for target in unique:
            name, result = one(target)
            results[name] = result
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for name, result in pool.map(one, unique):
                results[name] = result

    reports = [results[name].report for name in sorted(results)]
    return SuiteResult(reports=reports, results=results)


# --- persistence --------------------------------------------------------------


def _safe_dirname(api: str) -> str:
    return re.sub(r"[^\w.-]", "_", api)


def persist_suite(suite: SuiteResult, out_dir: Path) -> None:
    """Write per-API corpora and reports plus suite-level rollups."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(suite.results):
        result = suite.results[name]
        api_dir = out_dir / _safe_dirname(name)
        save_corpus(result.bank, api_dir / "corpus")
        (api_dir / "report.json").write_text(
            json.dumps(result.report.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    lines = [json.dumps(r.to_json(), sort_keys=True) for r in suite.reports]
    (out_dir / "suite_report.jsonl").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    (out_dir / "summary.txt").write_text(summarize_suite(suite), encoding="utf-8")


def summarize_suite(suite: SuiteResult) -> str:
    lines = []
    for report in suite.reports:
        counts = report.counts
        lines.append(
            f"{report.api}: seeds={counts.seeds_kept} "
            f"iterations={counts.iterations} valid={counts.valid_unique} "
            f"duplicates={counts.duplicates} findings={len(report.findings)}"
        )
    total_findings = sum(len(r.findings) for r in suite.reports)
    lines.append(f"total findings: {total_findings}")
    return "\n".join(lines) + "\n"
