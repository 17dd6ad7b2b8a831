"""Instrumented out-of-process executor for generated test programs."""

from .shim import (
    DEFAULT_SNAPSHOT_CAP,
    EXIT_INFRASTRUCTURE,
    EXIT_OK,
    EXIT_PROGRAM_ERROR,
    InfrastructureError,
    RunOutcome,
    execute_source,
    main,
    run_one,
    run_pair,
    snapshot_record,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SNAPSHOT_CAP",
    "EXIT_INFRASTRUCTURE",
    "EXIT_OK",
    "EXIT_PROGRAM_ERROR",
    "InfrastructureError",
    "RunOutcome",
    "execute_source",
    "main",
    "run_one",
    "run_pair",
    "snapshot_record",
]
