"""Out-of-process instrumented executor for generated test programs.

Runs a program statement by statement in one namespace on a named backend
(cpu or accelerator), snapshots every numeric variable after each
statement, detects whether the target API was actually invoked, and writes
line-delimited JSON records to a report file. One process per program; the
invoking harness owns the timeout and reads signal deaths off the exit
code.

Exit codes: 0 the program ran to completion, 1 the program raised,
2 the harness itself failed (library missing, backend unavailable,
unwritable report). Argument errors also exit 2.
"""

from __future__ import annotations

import argparse
import ast
import importlib
import json
import math
import random
import subprocess
import sys
import tempfile
import time
import types
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

EXIT_OK = 0
EXIT_PROGRAM_ERROR = 1
EXIT_INFRASTRUCTURE = 2

DEFAULT_SNAPSHOT_CAP = 4096
TEXT_CAP = 4096

# Import names that differ from the conventional alias used in API names.
_ROOT_MODULES = {"tf": "tensorflow"}


class InfrastructureError(Exception):
    """The harness failed, not the program under test."""


# --- value snapshots -----------------------------------------------------------


def _safe_float(value) -> float:
    try:
        return float(value)
    except OverflowError:
        return math.inf if value > 0 else -math.inf


def _flatten(value, out: list[float]) -> None:
    if isinstance(value, (list, tuple)):
        for item in value:
            _flatten(item, out)
    else:
        out.append(_safe_float(value))


def _stats(values: Sequence[float]) -> dict:
    nan_count = inf_count = 0
    finite: list[float] = []
    for v in values:
        if math.isnan(v):
            nan_count += 1
        elif math.isinf(v):
            inf_count += 1
        else:
            finite.append(v)
    return {
        "count": len(values),
        "nan_count": nan_count,
        "inf_count": inf_count,
        "min": min(finite) if finite else None,
        "max": max(finite) if finite else None,
        "mean": math.fsum(finite) / len(finite) if finite else None,
    }


def _numeric_record(
    var: str, stmt: int, kind: str, dtype: str, shape, values: list[float], cap: int
) -> dict:
    record = {
        "record": "snapshot",
        "var": var,
        "stmt": stmt,
        "kind": kind,
        "dtype": dtype,
        "shape": [int(d) for d in shape],
    }
    if len(values) > cap:
        record["stats"] = _stats(values)
    else:
        record["payload"] = values
    return record


def _to_host(value):
    """Copy an accelerator value back to host memory when the type allows."""
    for name in ("detach", "cpu"):
        method = getattr(value, name, None)
        if callable(method):
            try:
                value = method()
            except Exception:
                return value
    return value


def _is_tensor_like(value) -> bool:
    return (
        not isinstance(value, type)
        and callable(getattr(value, "tolist", None))
        and hasattr(value, "shape")
    )


def snapshot_record(var: str, stmt: int, value, cap: int) -> dict | None:
    """Wire record for one variable, or None when it is not worth recording."""
    if value is None or isinstance(value, (types.ModuleType, type)):
        return None
    if isinstance(value, bool):
        return _numeric_record(var, stmt, "bool", "bool", (), [1.0 if value else 0.0], cap)
    if isinstance(value, (int, float)):
        dtype = "int" if isinstance(value, int) else "float"
        return _numeric_record(var, stmt, "scalar", dtype, (), [_safe_float(value)], cap)
    if isinstance(value, str):
        return {
            "record": "snapshot",
            "var": var,
            "stmt": stmt,
            "kind": "string",
            "dtype": "str",
            "shape": [],
            "text": value[:TEXT_CAP],
        }
    if _is_tensor_like(value):
        try:
            host = _to_host(value)
            nested = host.tolist()
            values: list[float] = []
            _flatten(nested, values)
            shape = tuple(getattr(host, "shape", ()) or ())
            dtype = str(getattr(host, "dtype", "")).rsplit(".", 1)[-1]
            return _numeric_record(var, stmt, "tensor", dtype, shape, values, cap)
        except (TypeError, ValueError, RuntimeError):
            pass  # fall through to opaque
    if isinstance(value, (list, tuple)) and value and all(
        isinstance(item, (int, float)) and not isinstance(item, bool) for item in value
    ):
        values = [_safe_float(item) for item in value]
        return _numeric_record(var, stmt, "tensor", "list", (len(values),), values, cap)
    if callable(value):
        return None
    return {
        "record": "snapshot",
        "var": var,
        "stmt": stmt,
        "kind": "opaque",
        "dtype": type(value).__name__,
        "shape": [],
    }


# --- backend setup and rng pinning ----------------------------------------------


def _import_root(api_name: str):
    root = api_name.split(".", 1)[0]
    module_name = _ROOT_MODULES.get(root, root)
    try:
        return importlib.import_module(module_name)
    except ImportError as exc:
        raise InfrastructureError(
            f"cannot import target library {module_name!r}: {exc}"
        ) from exc


def setup_backend(root_module, backend: str) -> None:
    """Arrange placement; raise InfrastructureError if the backend is absent."""
    if backend not in ("cpu", "accelerator"):
        raise InfrastructureError(f"unknown backend {backend!r}")
    setter = getattr(root_module, "set_backend", None)
    if callable(setter):
        setter(backend)
        return
    name = root_module.__name__
    if name == "torch":
        if backend == "accelerator":
            if not root_module.cuda.is_available():
                raise InfrastructureError("torch accelerator requested but cuda is unavailable")
            root_module.set_default_device("cuda")
        return
    if name == "tensorflow":
        gpus = root_module.config.list_physical_devices("GPU")
        if backend == "accelerator":
            if not gpus:
                raise InfrastructureError("tensorflow accelerator requested but no GPU present")
        else:
            root_module.config.set_visible_devices([], "GPU")
        return
    if backend == "accelerator":
        raise InfrastructureError(f"library {name!r} has no accelerator backend here")


def pin_rngs(seed: int, root_module) -> None:
    """Same seed on both sides makes stochastic inputs comparable."""
    random.seed(seed)
    try:
        import numpy

        numpy.random.seed(seed % 2**32)
    except ImportError:
        pass
    name = root_module.__name__
    if name == "torch":
        root_module.manual_seed(seed % 2**63)
    elif name == "tensorflow":
        root_module.random.set_seed(seed % 2**31 or 1)


def _statement_sync(root_module, backend: str):
    """Per-statement barrier so async accelerator work lands before snapshots."""
    if root_module.__name__ == "torch" and backend == "accelerator":
        return root_module.cuda.synchronize
    return lambda: None


# --- target-call interception ----------------------------------------------------


class TargetInterceptor:
    """Wraps the target API's module attribute to count invocations.

    Resolution failures (attribute path missing, target not callable) leave
    the interceptor unavailable: the report then carries target_invoked =
    null rather than a guess.
    """

    def __init__(self, root_module, api_name: str) -> None:
        self.count = 0
        self._parent = None
        self._attr = ""
        self._original = None
        parts = api_name.split(".")
        obj = root_module
        for part in parts[1:-1]:
            obj = getattr(obj, part, None)
            if obj is None:
                return
        if len(parts) < 2:
            return
        original = getattr(obj, parts[-1], None)
        if not callable(original):
            return
        self._parent = obj
        self._attr = parts[-1]
        self._original = original

    @property
    def available(self) -> bool:
        return self._parent is not None

    @property
    def invoked(self) -> bool:
        return self.count > 0

    def install(self) -> None:
        if not self.available:
            return
        original = self._original

        def counting_wrapper(*args, **kwargs):
            self.count += 1
            return original(*args, **kwargs)

        try:
            counting_wrapper.__name__ = getattr(original, "__name__", self._attr)
        except (AttributeError, TypeError):
            pass
        setattr(self._parent, self._attr, counting_wrapper)

    def restore(self) -> None:
        if self.available:
            setattr(self._parent, self._attr, self._original)


# --- execution --------------------------------------------------------------------


def _write(report: IO[str], record: dict) -> None:
    report.write(json.dumps(record) + "\n")
    report.flush()


def execute_source(
    source: str,
    *,
    backend: str,
    rng_seed: int,
    target_api: str,
    snapshot_cap: int = DEFAULT_SNAPSHOT_CAP,
    report: IO[str],
) -> int:
    """Run one program; stream records to `report`; return the exit code."""
    begin = time.monotonic()
    root_module = _import_root(target_api)
    setup_backend(root_module, backend)
    pin_rngs(rng_seed, root_module)
    sync = _statement_sync(root_module, backend)
    interceptor = TargetInterceptor(root_module, target_api)

    status = {
        "record": "status",
        "backend": backend,
        "status": "ok",
        "detail": "",
        "message": "",
        "duration": 0.0,
        "target_invoked": None,
    }

    def finish(exit_code: int) -> int:
        if interceptor.available:
            status["target_invoked"] = interceptor.invoked
        status["duration"] = round(time.monotonic() - begin, 6)
        _write(report, status)
        return exit_code

    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        status.update(status="python-exception", detail="SyntaxError", message=str(exc)[:500])
        return finish(EXIT_PROGRAM_ERROR)

    namespace: dict = {"__name__": "__main__"}
    interceptor.install()
    try:
        for index, stmt in enumerate(tree.body):
            code = compile(ast.Module(body=[stmt], type_ignores=[]), "<program>", "exec")
            try:
                exec(code, namespace)
                sync()
            except (Exception, SystemExit) as exc:
                status.update(
                    status="python-exception",
                    detail=type(exc).__name__,
                    message=str(exc)[:500],
                )
                return finish(EXIT_PROGRAM_ERROR)
            for var in sorted(namespace):
                if var.startswith("_"):
                    continue
                record = snapshot_record(var, index, namespace[var], snapshot_cap)
                if record is not None:
                    _write(report, record)
    finally:
        interceptor.restore()
    return finish(EXIT_OK)


# --- CLI ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="execshim", description=__doc__)
    parser.add_argument("program", type=Path, help="program file to execute")
    parser.add_argument("--backend", required=True, choices=("cpu", "accelerator"))
    parser.add_argument("--rng-seed", type=int, default=0)
    parser.add_argument("--target-api", required=True,
                        help="dotted API name whose invocation is tracked")
    parser.add_argument("--report", type=Path, required=True,
                        help="where the JSONL report is written")
    parser.add_argument("--snapshot-cap", type=int, default=DEFAULT_SNAPSHOT_CAP,
                        help="max payload elements before falling back to stats")
    args = parser.parse_args(argv)

    try:
        source = args.program.read_text(encoding="utf-8")
    except OSError as exc:
        sys.stderr.write(f"execshim: cannot read program: {exc}\n")
        return EXIT_INFRASTRUCTURE
    try:
        with args.report.open("w", encoding="utf-8") as fp:
            return execute_source(
                source,
                backend=args.backend,
                rng_seed=args.rng_seed,
                target_api=args.target_api,
                snapshot_cap=args.snapshot_cap,
                report=fp,
            )
    except InfrastructureError as exc:
        sys.stderr.write(f"execshim: {exc}\n")
        return EXIT_INFRASTRUCTURE
    except OSError as exc:
        sys.stderr.write(f"execshim: {exc}\n")
        return EXIT_INFRASTRUCTURE


def cli() -> None:
    sys.exit(main())


# --- pair running ------------------------------------------------------------------


@dataclass(frozen=True)
class RunOutcome:
    """One shim process as seen from the outside."""

    backend: str
    exit_code: int | None
    report_text: str
    stdout: str
    stderr: str
    timed_out: bool


def run_one(
    program_path: Path,
    backend: str,
    *,
    target_api: str,
    rng_seed: int = 0,
    timeout: float = 10.0,
    snapshot_cap: int = DEFAULT_SNAPSHOT_CAP,
    python: str | None = None,
) -> RunOutcome:
    """Execute one program on one backend in a fresh process."""
    with tempfile.TemporaryDirectory(prefix="execshim-") as workdir:
        report_path = Path(workdir) / "report.jsonl"
        cmd = [
            python or sys.executable,
            "-m",
            "execshim",
            str(program_path),
            "--backend",
            backend,
            "--rng-seed",
            str(rng_seed),
            "--target-api",
            target_api,
            "--report",
            str(report_path),
            "--snapshot-cap",
            str(snapshot_cap),
        ]
        timed_out = False
        exit_code: int | None = None
        stdout = stderr = ""
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
            exit_code, stdout, stderr = proc.returncode, proc.stdout, proc.stderr
        except subprocess.TimeoutExpired as exc:
            timed_out = True
            stdout = exc.stdout.decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
            stderr = exc.stderr.decode("utf-8", "replace") if isinstance(exc.stderr, bytes) else (exc.stderr or "")
        report_text = (
            report_path.read_text(encoding="utf-8") if report_path.exists() else ""
        )
        return RunOutcome(backend, exit_code, report_text, stdout, stderr, timed_out)


def run_pair(
    program_path: Path,
    *,
    target_api: str,
    rng_seed: int = 0,
    timeout: float = 10.0,
    snapshot_cap: int = DEFAULT_SNAPSHOT_CAP,
    python: str | None = None,
) -> tuple[RunOutcome, RunOutcome]:
    """Run the same program on cpu and accelerator with identical rng seeding."""
    cpu = run_one(
        program_path, "cpu", target_api=target_api, rng_seed=rng_seed,
        timeout=timeout, snapshot_cap=snapshot_cap, python=python,
    )
    accelerator = run_one(
        program_path, "accelerator", target_api=target_api, rng_seed=rng_seed,
        timeout=timeout, snapshot_cap=snapshot_cap, python=python,
    )
    return cpu, accelerator
