"""Non-learning controllers: queue-pressure selection and plan followers.

These close the loop for comparison runs.  A controller is a callable
taking the simulator and returning one phase index per intersection for
the next step; the episode driver below wires any of them (or a trained
policy) through a full seeded run.
"""

from __future__ import annotations

import numpy as np

from .agents import StrategyAssignment, feasible_phases, select_action
from .envs import normalize_observations
from .model import (
    CorridorSpec,
    DemandProfile,
    Movement,
    PhaseTable,
    default_phase_table,
)
from .net import PolicyParams
from .plan import SignalPlan
from .sim import EpisodeMetrics, Simulator


def movement_pressure(
    queues: np.ndarray, i: int, movement: Movement, corridor: CorridorSpec
) -> float:
    """Saturation-weighted queue differential for one movement.

    Through movements push toward the next stop line along their
    direction; every other movement (and the corridor exits) drains out
    of the network, so its downstream term is zero.
    """
    n = len(corridor.intersections)
    down = 0.0
    if movement == Movement.IN_T and i + 1 < n:
        down = queues[i + 1, int(Movement.IN_T)]
    elif movement == Movement.OUT_T and i > 0:
        down = queues[i - 1, int(Movement.OUT_T)]
    sat = corridor.intersections[i].sat_flow
    return sat * (queues[i, int(movement)] - down)


def backpressure_phase(
    queues: np.ndarray,
    i: int,
    corridor: CorridorSpec,
    table: PhaseTable | None = None,
) -> int:
    """Phase with the largest summed movement pressure; ties take the
    lowest index."""
    table = table or default_phase_table()
    scores = np.array([
        sum(movement_pressure(queues, i, m, corridor) for m in phase)
        for phase in table.phases
    ])
    return int(np.argmax(scores))


class BackpressureController:
    """Re-picks the max-pressure phase at every step.

    Stateless by design: clearance and first-green deferral live in the
    simulator, so frequent switching costs lost time there rather than
    being rate-limited here.
    """

    def __init__(self, corridor: CorridorSpec, table: PhaseTable | None = None):
        self.corridor = corridor
        self.table = table or default_phase_table()
        self.n = len(corridor.intersections)

    def __call__(self, sim: Simulator) -> np.ndarray:
        queues = sim.queue_lengths()
        return np.array([
            backpressure_phase(queues, i, self.corridor, self.table)
            for i in range(self.n)
        ])


# fixed rotation outside the coordinated window: arterial lefts, then
# cross throughs, then cross lefts
ROTATION = (3, 4, 7)


class FixedPlanController:
    """Plays a signal plan open loop.

    Inside the plan's coordinated green window the through phase runs;
    the rest of the cycle is split evenly among the rotation phases so
    every movement is served each cycle.
    """

    def __init__(self, plan: SignalPlan, table: PhaseTable | None = None):
        self.plan = plan
        self.table = table or default_phase_table()
        self.n = plan.n_intersections

    def _phase(self, i: int, t: float) -> int:
        plan = self.plan
        if t < plan.epoch or plan.in_coordination(i, t):
            return 0
        kk = plan.stored_cycle(plan.cycle_at(t))
        g = float(plan.splits[i, kk])
        phi = float(plan.offsets[i, kk])
        rel = ((t - plan.epoch) / plan.cycle) % 1.0
        lead = ((rel - phi) % 1.0) - g / 2.0
        share = lead / max(1.0 - g, 1e-9)
        slot = min(int(share * len(ROTATION)), len(ROTATION) - 1)
        return ROTATION[max(slot, 0)]

    def __call__(self, sim: Simulator) -> np.ndarray:
        t = sim.clock
        return np.array([self._phase(i, t) for i in range(self.n)])


class PolicyController:
    """Trained policy under one strategy's feasibility masks."""

    def __init__(
        self,
        params: PolicyParams,
        assignment: StrategyAssignment,
        corridor: CorridorSpec,
        table: PhaseTable | None = None,
        mode: str = "argmax",
        rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.assignment = assignment
        self.corridor = corridor
        self.table = table or default_phase_table()
        self.mode = mode
        self.rng = rng
        self.n = len(corridor.intersections)

    def __call__(self, sim: Simulator) -> np.ndarray:
        raw = np.stack([sim.observe(i) for i in range(self.n)])
        logits = self.params.policy(normalize_observations(raw, self.corridor))
        t = sim.clock
        actions = np.empty(self.n, dtype=int)
        for i in range(self.n):
            mask = feasible_phases(i, t, self.assignment, self.table)
            actions[i], _, _ = select_action(
                logits[i], mask, mode=self.mode, rng=self.rng
            )
        return actions


def run_episode(
    corridor: CorridorSpec,
    profile: DemandProfile,
    controller,
    seed: int = 0,
    episode: float = 3600.0,
    warmup: float = 600.0,
    phase_table: PhaseTable | None = None,
    kappa: float = 0.2,
    record_events: bool = False,
) -> tuple[EpisodeMetrics, Simulator]:
    """One seeded run under any controller; metrics cover the post-warm-up
    window."""
    table = phase_table or default_phase_table()
    sim = Simulator(corridor, profile, table, kappa=kappa,
                    record_events=record_events)
    sim.reset(seed)
    while sim.clock < episode - 1e-9:
        sim.step(controller(sim))
    return sim.finalize_metrics(warmup, episode), sim
