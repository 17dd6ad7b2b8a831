"""Differential-testing oracle.

Two execution reports for the same program (CPU and accelerator) come in;
one verdict comes out. Crashes dominate everything, status disagreements are
findings on their own, and when both runs finish, snapshots are compared
variable by variable under an absolute-plus-relative tolerance. NaN and Inf
never go through the tolerance formula: NaN only matches NaN, Inf only
matches Inf of the same sign.

The module also owns the report wire format (line-delimited JSON) shared
with the execution shim, and crash classification for dead processes.
"""

from __future__ import annotations

import json
import math
import signal
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Sequence

PAYLOAD_CAP = 4096


class StatusKind(Enum):
    OK = "ok"
    EXCEPTION = "python-exception"
    CRASH = "crash"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExecStatus:
    kind: StatusKind
    detail: str = ""  # exception type, crash classification, ...
    message: str = ""

    @classmethod
    def ok(cls) -> "ExecStatus":
        return cls(StatusKind.OK)


class SnapshotKind(Enum):
    TENSOR = "tensor"
    SCALAR = "scalar"
    BOOL = "bool"
    STRING = "string"
    OPAQUE = "opaque"


@dataclass(frozen=True)
class SummaryStats:
    count: int
    nan_count: int
    inf_count: int
    finite_min: float | None
    finite_max: float | None
    finite_mean: float | None


def summarize(values: Sequence[float]) -> SummaryStats:
    nan_count = inf_count = 0
    finite: list[float] = []
    for v in values:
        if math.isnan(v):
            nan_count += 1
        elif math.isinf(v):
            inf_count += 1
        else:
            finite.append(v)
    if finite:
        return SummaryStats(
            count=len(values),
            nan_count=nan_count,
            inf_count=inf_count,
            finite_min=min(finite),
            finite_max=max(finite),
            finite_mean=math.fsum(finite) / len(finite),
        )
    return SummaryStats(len(values), nan_count, inf_count, None, None, None)


@dataclass(frozen=True)
class ValueSnapshot:
    """One variable's value after one statement."""

    var: str
    statement_index: int
    kind: SnapshotKind
    dtype: str = ""
    shape: tuple[int, ...] = ()
    payload: tuple[float, ...] | None = None
    stats: SummaryStats | None = None
    text: str | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.var, self.statement_index)


def make_snapshot(
    var: str,
    statement_index: int,
    kind: SnapshotKind,
    dtype: str,
    shape: Sequence[int],
    values: Sequence[float],
) -> ValueSnapshot:
    """Numeric snapshot; falls back to summary stats past the payload cap."""
    if len(values) > PAYLOAD_CAP:
        return ValueSnapshot(
            var, statement_index, kind, dtype, tuple(shape), stats=summarize(values)
        )
    return ValueSnapshot(
        var, statement_index, kind, dtype, tuple(shape), payload=tuple(float(v) for v in values)
    )


@dataclass(frozen=True)
class ExecutionReport:
    backend: str  # "cpu" | "accelerator"
    status: ExecStatus
    snapshots: tuple[ValueSnapshot, ...] = ()
    duration: float = 0.0
    target_invoked: bool | None = None


@dataclass(frozen=True)
class ToleranceSpec:
    rtol: float = 1e-3
    atol: float = 1e-6

    def __post_init__(self) -> None:
        if self.rtol < 0 or self.atol < 0:
            raise ValueError("tolerances must be non-negative")


class VerdictKind(Enum):
    CONSISTENT = "consistent"
    WRONG_COMPUTATION = "wrong-computation"
    CRASH = "crash"
    STATUS_DIVERGENCE = "status-divergence"


@dataclass(frozen=True)
class DiffVerdict:
    kind: VerdictKind
    detail: str = ""
    variable: str | None = None
    max_abs_diff: float | None = None
    max_rel_diff: float | None = None
    nan_mismatch: bool = False
    backend: str | None = None
    informational: bool = False

    @property
    def is_finding(self) -> bool:
        return self.kind is not VerdictKind.CONSISTENT and not self.informational

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "detail": self.detail,
            "variable": self.variable,
            "max_abs_diff": self.max_abs_diff,
            "max_rel_diff": self.max_rel_diff,
            "nan_mismatch": self.nan_mismatch,
            "backend": self.backend,
            "informational": self.informational,
        }


CONSISTENT = DiffVerdict(VerdictKind.CONSISTENT)


def _match_values(
    x: float, y: float, tol: ToleranceSpec
) -> tuple[bool, float, float, bool]:
    """(matches, abs_diff, rel_diff, nonfinite_mismatch) for one element."""
    x_nan, y_nan = math.isnan(x), math.isnan(y)
    if x_nan or y_nan:
        return (x_nan and y_nan, 0.0, 0.0, not (x_nan and y_nan))
    if math.isinf(x) or math.isinf(y):
        # Same infinity matches exactly; no tolerance can excuse the rest.
        return (x == y, 0.0, 0.0, x != y)
    diff = abs(x - y)
    scale = max(abs(x), abs(y))
    rel = diff / scale if scale > 0 else 0.0
    return (diff <= tol.atol + tol.rtol * scale, diff, rel, False)


def _wrong(var: str, detail: str, **kw) -> DiffVerdict:
    return DiffVerdict(VerdictKind.WRONG_COMPUTATION, detail=detail, variable=var, **kw)


def _compare_payloads(
    var: str, xs: Sequence[float], ys: Sequence[float], tol: ToleranceSpec
) -> DiffVerdict | None:
    if len(xs) != len(ys):
        return _wrong(var, f"payload length {len(xs)} vs {len(ys)}")
    worst_abs = 0.0
    worst_rel = 0.0
    nan_flag = False
    mismatched = False
    for x, y in zip(xs, ys):
        ok, diff, rel, nonfinite = _match_values(x, y, tol)
        worst_abs = max(worst_abs, diff)
        worst_rel = max(worst_rel, rel)
        if not ok:
            mismatched = True
            nan_flag = nan_flag or nonfinite
    if mismatched:
        return _wrong(
            var,
            "element values diverge",
            max_abs_diff=worst_abs,
            max_rel_diff=worst_rel,
            nan_mismatch=nan_flag,
        )
    return None


def _compare_stats(
    var: str, xs: SummaryStats, ys: SummaryStats, tol: ToleranceSpec
) -> DiffVerdict | None:
    if xs.count != ys.count:
        return _wrong(var, f"element count {xs.count} vs {ys.count}")
    if xs.nan_count != ys.nan_count or xs.inf_count != ys.inf_count:
        return _wrong(var, "nan/inf census diverges", nan_mismatch=True)
    for name, x, y in (
        ("min", xs.finite_min, ys.finite_min),
        ("max", xs.finite_max, ys.finite_max),
        ("mean", xs.finite_mean, ys.finite_mean),
    ):
        if x is None and y is None:
            continue
        if x is None or y is None:
            return _wrong(var, f"finite {name} present on one side only")
        ok, diff, rel, _ = _match_values(x, y, tol)
        if not ok:
            return _wrong(
                var, f"summary {name} diverges", max_abs_diff=diff, max_rel_diff=rel
            )
    return None


def _compare_snapshot(
    x: ValueSnapshot, y: ValueSnapshot, tol: ToleranceSpec
) -> DiffVerdict | None:
    if x.kind is not y.kind:
        return _wrong(x.var, f"value kind {x.kind.value} vs {y.kind.value}")
    if x.dtype != y.dtype:
        return _wrong(x.var, f"dtype {x.dtype or '?'} vs {y.dtype or '?'}")
    if x.shape != y.shape:
        return _wrong(x.var, f"shape {list(x.shape)} vs {list(y.shape)}")
    if x.kind is SnapshotKind.STRING:
        if x.text != y.text:
            return _wrong(x.var, "string value diverges")
        return None
    if x.kind is SnapshotKind.OPAQUE:
        return None
    if x.payload is not None and y.payload is not None:
        return _compare_payloads(x.var, x.payload, y.payload, tol)
    xs = x.stats if x.stats is not None else summarize(x.payload or ())
    ys = y.stats if y.stats is not None else summarize(y.payload or ())
    return _compare_stats(x.var, xs, ys, tol)


def compare(
    a: ExecutionReport, b: ExecutionReport, tol: ToleranceSpec = ToleranceSpec()
) -> DiffVerdict:
    """Verdict for one program run on two backends."""
    for report in (a, b):
        if report.status.kind is StatusKind.CRASH:
            return DiffVerdict(
                VerdictKind.CRASH,
                detail=report.status.detail or "crash",
                backend=report.backend,
            )
    if a.status.kind is not b.status.kind:
        return DiffVerdict(
            VerdictKind.STATUS_DIVERGENCE,
            detail=(
                f"{a.backend}: {a.status.kind.value} vs "
                f"{b.backend}: {b.status.kind.value}"
            ),
        )
    if a.status.kind is StatusKind.EXCEPTION and a.status.detail != b.status.detail:
        return DiffVerdict(
            VerdictKind.STATUS_DIVERGENCE,
            detail=f"exception {a.status.detail or '?'} vs {b.status.detail or '?'}",
        )

    lookup_a = {snap.key: snap for snap in a.snapshots}
    lookup_b = {snap.key: snap for snap in b.snapshots}
    if a.status.kind is StatusKind.OK and set(lookup_a) != set(lookup_b):
        return DiffVerdict(
            VerdictKind.WRONG_COMPUTATION, detail="snapshot variable sets diverge"
        )
    for key, snap in lookup_a.items():
        other = lookup_b.get(key)
        if other is None:
            continue
        verdict = _compare_snapshot(snap, other, tol)
        if verdict is not None:
            return verdict
    return CONSISTENT


# --- crash classification ----------------------------------------------------


@dataclass(frozen=True)
class ProcessOutcome:
    """How a shim process ended; negative exit codes are -signal."""

    exit_code: int | None
    stdout: str = ""
    stderr: str = ""
    timed_out: bool = False


_CRASH_SIGNALS = {
    signal.SIGSEGV: "segfault",
    signal.SIGABRT: "abort",
    signal.SIGILL: "illegal-instruction",
    signal.SIGBUS: "bus-error",
    signal.SIGFPE: "floating-point-exception",
}

ASSERT_MARKERS = ("INTERNAL_ASSERT_FAILED", "Check failed")


def classify_crash(outcome: ProcessOutcome) -> str | None:
    """Crash detail, or None when the outcome looks like ordinary failure."""
    code = outcome.exit_code
    signum: int | None = None
    if code is not None and code < 0:
        signum = -code
    elif code is not None and 128 < code < 160:
        signum = code - 128
    if signum is not None:
        try:
            name = _CRASH_SIGNALS.get(signal.Signals(signum))
        except ValueError:
            name = None
        return name or f"signal-{signum}"
    text = outcome.stdout + "\n" + outcome.stderr
    for marker in ASSERT_MARKERS:
        if marker in text:
            return f"assert:{marker}"
    return None


# --- allowlist ----------------------------------------------------------------


def load_allowlist(path: Path) -> frozenset[str]:
    """Known-bug APIs, one per line; # starts a comment."""
    entries = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.add(line)
    return frozenset(entries)


def apply_allowlist(
    verdict: DiffVerdict, api: str, allowlist: frozenset[str]
) -> DiffVerdict:
    if verdict.kind is VerdictKind.CONSISTENT or api not in allowlist:
        return verdict
    return replace(verdict, informational=True)


# --- wire format ---------------------------------------------------------------


def snapshot_record(snap: ValueSnapshot) -> dict:
    record: dict = {
        "record": "snapshot",
        "var": snap.var,
        "stmt": snap.statement_index,
        "kind": snap.kind.value,
        "dtype": snap.dtype,
        "shape": list(snap.shape),
    }
    if snap.payload is not None:
        record["payload"] = list(snap.payload)
    elif snap.stats is not None:
        record["stats"] = {
            "count": snap.stats.count,
            "nan_count": snap.stats.nan_count,
            "inf_count": snap.stats.inf_count,
            "min": snap.stats.finite_min,
            "max": snap.stats.finite_max,
            "mean": snap.stats.finite_mean,
        }
    elif snap.text is not None:
        record["text"] = snap.text
    return record


def status_record(report: ExecutionReport) -> dict:
    return {
        "record": "status",
        "backend": report.backend,
        "status": report.status.kind.value,
        "detail": report.status.detail,
        "message": report.status.message,
        "duration": report.duration,
        "target_invoked": report.target_invoked,
    }


def validate_record(record: dict) -> None:
    """Schema check for one wire record; raises ValueError on violations."""
    if not isinstance(record, dict):
        raise ValueError("record must be an object")
    tag = record.get("record")
    if tag == "snapshot":
        if not isinstance(record.get("var"), str) or not record["var"]:
            raise ValueError("snapshot needs a non-empty 'var'")
        if not isinstance(record.get("stmt"), int):
            raise ValueError("snapshot needs an integer 'stmt'")
        if record.get("kind") not in {k.value for k in SnapshotKind}:
            raise ValueError(f"bad snapshot kind: {record.get('kind')!r}")
        if not isinstance(record.get("shape"), list):
            raise ValueError("snapshot needs a 'shape' list")
        carriers = [k for k in ("payload", "stats", "text") if k in record]
        if len(carriers) > 1:
            raise ValueError(f"snapshot carries multiple value fields: {carriers}")
        if "payload" in record and not isinstance(record["payload"], list):
            raise ValueError("'payload' must be a list")
        if "stats" in record:
            stats = record["stats"]
            if not isinstance(stats, dict):
                raise ValueError("'stats' must be an object")
            for field_name in ("count", "nan_count", "inf_count", "min", "max", "mean"):
                if field_name not in stats:
                    raise ValueError(f"stats missing '{field_name}'")
    elif tag == "status":
        if record.get("status") not in {k.value for k in StatusKind}:
            raise ValueError(f"bad status: {record.get('status')!r}")
        if not isinstance(record.get("backend"), str):
            raise ValueError("status needs a 'backend'")
        if record.get("target_invoked") not in (True, False, None):
            raise ValueError("'target_invoked' must be a bool or null")
    else:
        raise ValueError(f"unknown record tag: {tag!r}")


def _snapshot_from_record(record: dict) -> ValueSnapshot:
    stats = None
    payload = None
    if "stats" in record:
        s = record["stats"]
        stats = SummaryStats(
            count=s["count"],
            nan_count=s["nan_count"],
            inf_count=s["inf_count"],
            finite_min=s["min"],
            finite_max=s["max"],
            finite_mean=s["mean"],
        )
    elif "payload" in record:
        payload = tuple(float(v) for v in record["payload"])
    return ValueSnapshot(
        var=record["var"],
        statement_index=record["stmt"],
        kind=SnapshotKind(record["kind"]),
        dtype=record.get("dtype", ""),
        shape=tuple(record.get("shape", ())),
        payload=payload,
        stats=stats,
        text=record.get("text"),
    )


def write_report(report: ExecutionReport, fp: IO[str]) -> None:
    for snap in report.snapshots:
        fp.write(json.dumps(snapshot_record(snap)) + "\n")
    fp.write(json.dumps(status_record(report)) + "\n")


@dataclass
class ParsedReport:
    """A report file as found on disk; status may be missing after a crash."""

    snapshots: list[ValueSnapshot] = field(default_factory=list)
    status: ExecStatus | None = None
    backend: str = ""
    duration: float = 0.0
    target_invoked: bool | None = None

    def to_execution_report(self, fallback_status: ExecStatus, backend: str) -> ExecutionReport:
        return ExecutionReport(
            backend=self.backend or backend,
            status=self.status or fallback_status,
            snapshots=tuple(self.snapshots),
            duration=self.duration,
            target_invoked=self.target_invoked,
        )


def parse_report(text: str) -> ParsedReport:
    """Parse report lines, tolerating truncation after a hard crash."""
    parsed = ParsedReport()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            validate_record(record)
        except ValueError:
            continue  # half-written trailing line from a dying process
        if record["record"] == "snapshot":
            parsed.snapshots.append(_snapshot_from_record(record))
        else:
            parsed.status = ExecStatus(
                kind=StatusKind(record["status"]),
                detail=record.get("detail", "") or "",
                message=record.get("message", "") or "",
            )
            parsed.backend = record.get("backend", "")
            parsed.duration = float(record.get("duration", 0.0) or 0.0)
            parsed.target_invoked = record.get("target_invoked")
    return parsed


def load_report(path: Path) -> ExecutionReport:
    """Load a complete report; raises ValueError when the status is missing."""
    parsed = parse_report(Path(path).read_text(encoding="utf-8"))
    if parsed.status is None:
        raise ValueError(f"{path}: report has no status record")
    return parsed.to_execution_report(parsed.status, parsed.backend)
