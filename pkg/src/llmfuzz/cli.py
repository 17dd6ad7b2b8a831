"""Command line interface.

Subcommands: seed (generation only), fuzz (full campaigns), oracle (re-run
differential checks over a saved corpus), report (summarize suite output).
Exit codes: 0 ran clean, 1 configuration error, 2 bug findings.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from dataclasses import replace
from pathlib import Path

from .corpus import ApiTarget, Validity, load_corpus
from .engine import (
    CampaignConfig,
    Mode,
    ProgramExecutor,
    ShimExecutor,
    SteppedClock,
    WallClock,
    exec_seed,
    persist_suite,
    run_suite,
    summarize_suite,
)
from .genbackend import SEED_SAMPLING, HttpBackend, MockBackend
from .oracle import ToleranceSpec, apply_allowlist, compare, load_allowlist
from .seedgen import infer_library, load_api_catalog

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FINDINGS = 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--api-catalog", type=Path, default=None,
                     help="JSONL file of {name, signature, library} records")
    sub.add_argument("--apis", default=None,
                     help="comma-separated API names, or a file with one per line")
    sub.add_argument("--backend", choices=("mock", "http"), default="mock")
    sub.add_argument("--endpoint", default=None, help="HTTP backend URL")
    sub.add_argument("--fixtures", type=Path, default=None,
                     help="fixture directory for the mock backend")
    sub.add_argument("--rng-seed", type=int, default=0)
    sub.add_argument("--out", type=Path, required=True, help="output directory")
    sub.add_argument("--seeds-per-api", type=int, default=SEED_SAMPLING.num_samples)
    sub.add_argument("--parallelism", type=int, default=1)
    sub.add_argument("--exec-timeout", type=float, default=10.0)
    sub.add_argument("--rtol", type=float, default=ToleranceSpec().rtol)
    sub.add_argument("--atol", type=float, default=ToleranceSpec().atol)
    sub.add_argument("--allowlist", type=Path, default=None,
                     help="file of known-bug APIs whose findings are informational")
    sub.add_argument("--shim-cmd", default=None,
                     help="command invoking the execution shim, e.g. 'python -m execshim'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="llmfuzz", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    seed = commands.add_parser("seed", help="generate seed programs only")
    _add_common(seed)
    seed.add_argument("--mode", choices=[m.value for m in Mode], default="seed-only")

    fuzz = commands.add_parser("fuzz", help="run full fuzzing campaigns")
    _add_common(fuzz)
    fuzz.add_argument("--mode", choices=[m.value for m in Mode], default="full")
    fuzz.add_argument("--budget-per-api", type=float, default=60.0)
    fuzz.add_argument("--top-n", type=int, default=10)
    fuzz.add_argument("--infill-samples", type=int, default=5)

    oracle_cmd = commands.add_parser(
        "oracle", help="re-run differential checks over a saved corpus"
    )
    oracle_cmd.add_argument("--corpus", type=Path, required=True,
                            help="output directory of a previous run")
    oracle_cmd.add_argument("--api-catalog", type=Path, default=None)
    oracle_cmd.add_argument("--shim-cmd", required=True)
    oracle_cmd.add_argument("--rng-seed", type=int, default=0)
    oracle_cmd.add_argument("--exec-timeout", type=float, default=10.0)
    oracle_cmd.add_argument("--rtol", type=float, default=ToleranceSpec().rtol)
    oracle_cmd.add_argument("--atol", type=float, default=ToleranceSpec().atol)
    oracle_cmd.add_argument("--allowlist", type=Path, default=None)

    report = commands.add_parser("report", help="summarize a suite report")
    report.add_argument("--in", dest="infile", type=Path, required=True,
                        help="suite_report.jsonl from a previous run")
    return parser


def _resolve_targets(args: argparse.Namespace) -> list[ApiTarget]:
    catalog: dict[str, ApiTarget] = {}
    if args.api_catalog is not None:
        if not args.api_catalog.exists():
            raise CliError(f"api catalog not found: {args.api_catalog}")
        catalog = {t.qualified_name: t for t in load_api_catalog(args.api_catalog)}
    if args.apis:
        maybe_file = Path(args.apis)
        if maybe_file.exists():
            names = [
                line.strip()
                for line in maybe_file.read_text(encoding="utf-8").splitlines()
                if line.strip() and not line.lstrip().startswith("#")
            ]
        else:
            names = [part.strip() for part in args.apis.split(",") if part.strip()]
    else:
        names = list(catalog)
    if not names:
        raise CliError("no APIs selected; pass --apis or --api-catalog")
    targets = []
    for name in names:
        known = catalog.get(name)
        targets.append(known or ApiTarget(name, infer_library(name)))
    return targets


def _make_backend(args: argparse.Namespace):
    if args.backend == "http":
        if not args.endpoint:
            raise CliError("--backend http requires --endpoint")
        return HttpBackend(args.endpoint)
    return MockBackend(fixture_dir=args.fixtures)


def _make_executor(args: argparse.Namespace) -> ProgramExecutor | None:
    if not args.shim_cmd:
        return None
    return ShimExecutor(shlex.split(args.shim_cmd), timeout=args.exec_timeout)


def _make_config(args: argparse.Namespace, mode: Mode) -> CampaignConfig:
    allowlist = (
        load_allowlist(args.allowlist) if args.allowlist is not None else frozenset()
    )
    return CampaignConfig(
        budget_per_api=getattr(args, "budget_per_api", 60.0),
        top_n=getattr(args, "top_n", 10),
        infill_samples=getattr(args, "infill_samples", 5),
        seed_sampling=replace(SEED_SAMPLING, num_samples=args.seeds_per_api),
        exec_timeout=args.exec_timeout,
        tolerance=ToleranceSpec(rtol=args.rtol, atol=args.atol),
        rng_seed=args.rng_seed,
        mode=mode,
        allowlist=allowlist,
    )


def _run_campaigns(args: argparse.Namespace) -> int:
    mode = Mode(args.mode)
    targets = _resolve_targets(args)
    backend = _make_backend(args)
    executor = _make_executor(args)
    config = _make_config(args, mode)
    # Mock offline runs wait on nothing, so budgets run on virtual time.
    if args.backend == "mock" and mode is not Mode.FULL:
        clock_factory = SteppedClock
    else:
        clock_factory = WallClock
    suite = run_suite(
        targets,
        config,
        backend,
        executor=executor,
        parallelism=args.parallelism,
        clock_factory=clock_factory,
    )
    persist_suite(suite, args.out)
    sys.stdout.write(summarize_suite(suite))
    return EXIT_FINDINGS if suite.has_findings else EXIT_OK


def _run_oracle(args: argparse.Namespace) -> int:
    corpus_root = args.corpus
    if not corpus_root.is_dir():
        raise CliError(f"corpus directory not found: {corpus_root}")
    catalog: dict[str, ApiTarget] = {}
    if args.api_catalog is not None:
        catalog = {t.qualified_name: t for t in load_api_catalog(args.api_catalog)}
    executor = ShimExecutor(shlex.split(args.shim_cmd), timeout=args.exec_timeout)
    tolerance = ToleranceSpec(rtol=args.rtol, atol=args.atol)
    allowlist = (
        load_allowlist(args.allowlist) if args.allowlist is not None else frozenset()
    )
    found = False
    for manifest in sorted(corpus_root.glob("*/corpus/manifest.jsonl")):
        api_dir = manifest.parent.parent
        api_name = api_dir.name
        target = catalog.get(api_name) or ApiTarget(api_name, infer_library(api_name))
        bank = load_corpus(manifest.parent, target)
        verdict_lines = []
        for program in bank.programs():
            if program.validity is not Validity.VALID:
                continue
            seed = exec_seed(args.rng_seed, program.norm_hash)
            cpu = executor.run(program.source, target, "cpu", seed)
            accel = executor.run(program.source, target, "accelerator", seed)
            verdict = apply_allowlist(
                compare(cpu, accel, tolerance), target.qualified_name, allowlist
            )
            record = {"program": program.norm_hash, "verdict": verdict.as_dict()}
            verdict_lines.append(json.dumps(record, sort_keys=True))
            if verdict.is_finding:
                found = True
                sys.stdout.write(
                    f"{api_name} {program.norm_hash[:12]}: "
                    f"{verdict.kind.value} {verdict.detail}\n"
                )
        (api_dir / "verdicts.jsonl").write_text(
            "".join(line + "\n" for line in verdict_lines), encoding="utf-8"
        )
    return EXIT_FINDINGS if found else EXIT_OK


def _run_report(args: argparse.Namespace) -> int:
    if not args.infile.exists():
        raise CliError(f"report file not found: {args.infile}")
    for line in args.infile.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        counts = record.get("counts", {})
        sys.stdout.write(
            f"{record.get('api', '?')}: "
            f"seeds={counts.get('seeds_kept', 0)} "
            f"iterations={counts.get('iterations', 0)} "
            f"valid={counts.get('valid_unique', 0)} "
            f"findings={len(record.get('findings', []))}\n"
        )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("seed", "fuzz"):
            return _run_campaigns(args)
        if args.command == "oracle":
            return _run_oracle(args)
        return _run_report(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
