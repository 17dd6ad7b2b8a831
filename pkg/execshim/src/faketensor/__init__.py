"""Tiny pure-Python tensor library used as a differential-testing target.

Covers just enough of a real array library for pipeline tests: uniform
random tensors, a few elementwise ops, a 2-D matmul, and a cpu/accelerator
backend switch. The accelerator is fake; environment knobs inject
controlled misbehavior there so crash and divergence handling can be
exercised without hardware or native code.

Knobs (comma-separated op-name lists, accelerator backend only):
  FAKETENSOR_DIVERGE  "log" maps NaN results to 0.17, any other listed op
                      adds 0.25 to every output element.
  FAKETENSOR_CRASH    listed ops kill the process with SIGSEGV.
  FAKETENSOR_ASSERT   listed ops print a "Check failed" line and exit hard,
                      mimicking a native assertion failure.

Random values come from the stdlib `random` module, so `random.seed(n)`
pins them.
"""

from __future__ import annotations

import math
import os
import random
import signal
import sys

__version__ = "0.1.0"

_BACKENDS = ("cpu", "accelerator")
_backend = "cpu"


def set_backend(name: str) -> None:
    global _backend
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {_BACKENDS}")
    _backend = name


def get_backend() -> str:
    return _backend


def _knob(env_name: str) -> set[str]:
    raw = os.environ.get(env_name, "")
    return {part.strip() for part in raw.split(",") if part.strip()}


class FakeTensor:
    """Flat float storage plus a shape; immutable by convention."""

    __slots__ = ("_values", "shape")
    dtype = "float64"

    def __init__(self, values, shape) -> None:
        self._values = [float(v) for v in values]
        self.shape = tuple(int(d) for d in shape)
        expected = math.prod(self.shape)
        if len(self._values) != expected:
            raise ValueError(
                f"shape {self.shape} wants {expected} values, got {len(self._values)}"
            )

    @property
    def numel(self) -> int:
        return len(self._values)

    def flat(self) -> tuple[float, ...]:
        return tuple(self._values)

    def tolist(self):
        def build(dims, values):
            if not dims:
                return values[0]
            step = len(values) // dims[0] if dims[0] else 0
            return [
                build(dims[1:], values[i * step : (i + 1) * step])
                for i in range(dims[0])
            ]

        return build(list(self.shape), self._values)

    def sum(self) -> float:
        return math.fsum(self._values)

    def mean(self) -> float:
        if not self._values:
            raise ValueError("mean of an empty tensor")
        return math.fsum(self._values) / len(self._values)

    def abs(self) -> "FakeTensor":
        return abs(self)

    def __repr__(self) -> str:
        return f"FakeTensor(shape={self.shape}, values={self._values!r})"


def _as_tensor(value) -> FakeTensor:
    if isinstance(value, FakeTensor):
        return value
    if isinstance(value, (int, float)):
        return FakeTensor([value], ())
    if isinstance(value, (list, tuple)):
        return FakeTensor(list(value), (len(value),))
    raise TypeError(f"cannot treat {type(value).__name__} as a tensor")


def _finish(op_name: str, result: FakeTensor) -> FakeTensor:
    """Apply the accelerator knobs to one op's result."""
    if _backend != "accelerator":
        return result
    if op_name in _knob("FAKETENSOR_CRASH"):
        os.kill(os.getpid(), signal.SIGSEGV)
    if op_name in _knob("FAKETENSOR_ASSERT"):
        sys.stderr.write(f"Check failed: {op_name} kernel result mismatch\n")
        sys.stderr.flush()
        os._exit(1)
    if op_name in _knob("FAKETENSOR_DIVERGE"):
        if op_name == "log":
            values = [0.17 if math.isnan(v) else v for v in result._values]
        else:
            values = [v + 0.25 for v in result._values]
        return FakeTensor(values, result.shape)
    return result


def _elementwise(op_name: str, fn, value) -> FakeTensor:
    tensor = _as_tensor(value)
    return _finish(op_name, FakeTensor([fn(v) for v in tensor._values], tensor.shape))


def rand(*shape) -> FakeTensor:
    count = math.prod(shape) if shape else 1
    values = [random.random() for _ in range(count)]
    return _finish("rand", FakeTensor(values, shape))


def full(shape, value) -> FakeTensor:
    dims = tuple(shape)
    return _finish("full", FakeTensor([float(value)] * math.prod(dims), dims))


def _log_elem(v: float) -> float:
    if v > 0:
        return math.log(v)
    if v == 0:
        return float("-inf")
    return float("nan")


def _exp_elem(v: float) -> float:
    try:
        return math.exp(v)
    except OverflowError:
        return float("inf")


def log(value) -> FakeTensor:
    return _elementwise("log", _log_elem, value)


def exp(value) -> FakeTensor:
    return _elementwise("exp", _exp_elem, value)


def abs(value) -> FakeTensor:  # noqa: A001 - mirrors the array-library name
    return _elementwise("abs", lambda v: -v if v < 0 else v, value)


def relu(value) -> FakeTensor:
    return _elementwise("relu", lambda v: v if v > 0 else 0.0, value)


def _binary(op_name: str, fn, left, right) -> FakeTensor:
    a, b = _as_tensor(left), _as_tensor(right)
    if a.shape == b.shape:
        values = [fn(x, y) for x, y in zip(a._values, b._values)]
        return _finish(op_name, FakeTensor(values, a.shape))
    if b.shape == ():
        scalar = b._values[0]
        return _finish(op_name, FakeTensor([fn(x, scalar) for x in a._values], a.shape))
    if a.shape == ():
        scalar = a._values[0]
        return _finish(op_name, FakeTensor([fn(scalar, y) for y in b._values], b.shape))
    raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(left, right) -> FakeTensor:
    return _binary("add", lambda x, y: x + y, left, right)


def mul(left, right) -> FakeTensor:
    return _binary("mul", lambda x, y: x * y, left, right)


def mm(left, right) -> FakeTensor:
    a, b = _as_tensor(left), _as_tensor(right)
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ValueError("mm needs two 2-D tensors")
    n, k = a.shape
    k2, m = b.shape
    if k != k2:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    values = []
    for i in range(n):
        for j in range(m):
            values.append(
                math.fsum(a._values[i * k + t] * b._values[t * m + j] for t in range(k))
            )
    return _finish("mm", FakeTensor(values, (n, m)))


def sum(value) -> float:  # noqa: A001 - mirrors the array-library name
    return _as_tensor(value).sum()
