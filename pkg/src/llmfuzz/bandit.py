"""Thompson sampling over mutation operators.

Each operator is a Bernoulli arm whose reward is "this mutation produced a
valid, previously unseen program". Beta(successes, failures) posteriors
start uniform; every round draws one sample per arm and plays the argmax,
then the posterior absorbs the round's batch of outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Sequence

from .mutator import OperatorId


@dataclass
class ArmState:
    successes: int = 1
    failures: int = 1
    pulls: int = 0


@dataclass
class OperatorStats:
    """Posterior bookkeeping for every operator arm."""

    arms: dict[OperatorId, ArmState] = field(
        default_factory=lambda: {op: ArmState() for op in OperatorId}
    )

    def snapshot(self) -> dict[str, dict[str, int]]:
        return {
            op.name.lower(): {
                "successes": arm.successes,
                "failures": arm.failures,
                "pulls": arm.pulls,
            }
            for op, arm in self.arms.items()
        }


def init_prior(operators: Sequence[OperatorId] | None = None) -> OperatorStats:
    """Uniform Beta(1, 1) prior over the given arms (default: all operators)."""
    ops = tuple(OperatorId) if operators is None else tuple(operators)
    return OperatorStats({op: ArmState() for op in ops})


def select_operator(stats: OperatorStats, rng: Random) -> OperatorId:
    """One Beta draw per arm, in fixed arm order; highest draw wins."""
    best_op: OperatorId | None = None
    best_draw = float("-inf")
    for op, arm in stats.arms.items():
        draw = rng.betavariate(arm.successes, arm.failures)
        if draw > best_draw:
            best_op, best_draw = op, draw
    if best_op is None:
        raise ValueError("no arms configured")
    stats.arms[best_op].pulls += 1
    return best_op


def update_posterior(
    stats: OperatorStats, operator: OperatorId, num_valid: int, num_invalid: int
) -> OperatorStats:
    """Absorb one round's outcome counts into the played arm."""
    if num_valid < 0 or num_invalid < 0:
        raise ValueError("outcome counts must be non-negative")
    arm = stats.arms[operator]
    arm.successes += num_valid
    arm.failures += num_invalid
    return stats
