"""Per-intersection signal agents: coordination masks and masked policies.

The coordination module turns the active strategy into a feasible-phase
mask. Under MFC the coordinated window restricts choices to the phases
serving the inbound through; under GWC the progression bands restrict to
the two-way through phase where both bands pass, or to the through plus
the same-direction left where only one does. Outside any window (and under
PAC always) every internally consistent phase is allowed.

The learning module samples from a masked softmax: masked logits are
pushed to -1e9, probabilities renormalized, and masked entries zeroed
exactly, so infeasible phases carry probability 0, not merely epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .model import PhaseTable, default_phase_table, movements_conflict
from .plan import SignalPlan

__all__ = [
    "STRATEGIES",
    "MASK_LOGIT",
    "StrategyAssignment",
    "feasible_phases",
    "masked_policy",
    "select_action",
    "PolicyBank",
]

STRATEGIES = ("PAC", "MFC", "GWC")

# Added to masked logits before the softmax; low enough that a masked entry
# underflows to zero even against strongly negative live logits.
MASK_LOGIT = -1e9

THROUGH_PHASE = 0        # both corridor throughs
INBOUND_PHASES = (0, 1)  # through pair + inbound through with its left
OUTBOUND_PHASES = (0, 2)


@dataclass(frozen=True)
class StrategyAssignment:
    """The strategy an intersection runs under, with its plan when model-based."""

    strategy: str
    plan: SignalPlan | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "PAC" and self.plan is not None:
            raise ValueError("PAC runs without a plan")
        if self.strategy != "PAC" and self.plan is None:
            raise ValueError(f"{self.strategy} needs a signal plan")


def _consistent_phases(table: PhaseTable) -> np.ndarray:
    ok = np.ones(len(table), dtype=float)
    for idx, phase in enumerate(table.phases):
        for a in phase:
            for b in phase:
                if a < b and movements_conflict(a, b):
                    ok[idx] = 0.0
    return ok


def feasible_phases(
    i: int,
    t: float,
    assignment: StrategyAssignment,
    table: PhaseTable | None = None,
) -> np.ndarray:
    """Binary mask over the phase table for agent i at absolute time t."""
    table = table or default_phase_table()
    base = _consistent_phases(table)
    if not base.any():
        raise ValueError("phase table has no internally consistent phase")

    plan = assignment.plan
    if assignment.strategy == "PAC" or plan is None or t < plan.epoch:
        return base

    if assignment.strategy == "MFC":
        if plan.in_coordination(i, t):
            return _restrict(base, INBOUND_PHASES)
        return base

    inside_in = plan.in_band(i, t, "in")
    inside_out = plan.in_band(i, t, "out")
    if inside_in and inside_out:
        return _restrict(base, (THROUGH_PHASE,))
    if inside_in:
        return _restrict(base, INBOUND_PHASES)
    if inside_out:
        return _restrict(base, OUTBOUND_PHASES)
    return base


def _restrict(base: np.ndarray, phases) -> np.ndarray:
    mask = np.zeros_like(base)
    mask[list(phases)] = 1.0
    mask *= base
    if not mask.any():
        # A custom table may mark the canonical phases inconsistent; fall
        # back to the open mask rather than strand the agent.
        return base
    return mask


def masked_policy(logits, mask) -> np.ndarray:
    """Softmax over the unmasked entries; exact zeros on the masked ones."""
    logits = np.asarray(logits, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if logits.shape != mask.shape:
        raise ValueError("logits and mask shapes differ")
    if not mask.any():
        raise ValueError("mask excludes every action")
    shifted = np.where(mask > 0.0, logits, logits + MASK_LOGIT)
    shifted = shifted - shifted.max()
    weights = np.exp(shifted)
    weights[mask == 0.0] = 0.0
    return weights / weights.sum()


def select_action(
    logits,
    mask,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
) -> tuple[int, float, np.ndarray]:
    """Pick a feasible phase; returns (action, log probability, probabilities)."""
    probs = masked_policy(logits, mask)
    if mode == "argmax":
        action = int(np.argmax(probs))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling needs a random generator")
        action = int(rng.choice(len(probs), p=probs))
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return action, float(np.log(probs[action])), probs


class PolicyBank:
    """One policy per strategy; routes each assignment to its parameters."""

    def __init__(self, policies: Mapping[str, Callable[[np.ndarray], np.ndarray]]):
        missing = [s for s in STRATEGIES if s not in policies]
        if missing:
            raise ValueError(f"missing policies for {', '.join(missing)}")
        self.policies = dict(policies)

    def logits(self, strategy: str, obs: np.ndarray) -> np.ndarray:
        return np.asarray(self.policies[strategy](obs), dtype=float)

    def act(
        self,
        assignment: StrategyAssignment,
        i: int,
        t: float,
        obs: np.ndarray,
        mode: str = "sample",
        rng: np.random.Generator | None = None,
        table: PhaseTable | None = None,
    ) -> tuple[int, float, np.ndarray]:
        mask = feasible_phases(i, t, assignment, table)
        logits = self.logits(assignment.strategy, obs)
        return select_action(logits, mask, mode=mode, rng=rng)
