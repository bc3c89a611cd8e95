"""Training environments: corridor episodes and small sanity bandits.

CorridorEnv speaks the collection protocol the trainer expects —
reset(seed) -> (k, d) observations, masks() -> (k, A), step(actions) ->
(obs, rewards, done, info) — with one row per intersection agent.  The
bandits speak the same protocol with a single row and one-step episodes.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .agents import StrategyAssignment, feasible_phases
from .gwc import GwcInputs, gwc_plan, solve_gwc, webster_splits
from .mfc import MfcInputs, mfc_plan, solve_mfc
from .model import (
    CorridorSpec,
    DemandProfile,
    DemandSegment,
    MOVEMENTS,
    PhaseTable,
    default_phase_table,
)
from .sim import Simulator

N_PHASES = 8
OBS_DIM = 4 * len(MOVEMENTS)


def normalize_observations(raw: np.ndarray, corridor: CorridorSpec) -> np.ndarray:
    """Fixed-constant feature scaling, flattened to one row per agent.

    Arrival and neighbor-inflow rates are scaled by saturation flow,
    queues by the inbound edge's storage, speeds by free-flow speed.
    """
    raw = np.asarray(raw, dtype=float)
    out = raw.copy()
    for i, spec in enumerate(corridor.intersections):
        out[i, 0] /= spec.sat_flow
        out[i, 1] /= spec.storage
        out[i, 2] /= spec.free_flow_speed
        out[i, 3] /= spec.sat_flow
    return out.reshape(raw.shape[0], -1)


def segment_inputs(
    corridor: CorridorSpec,
    segment: DemandSegment,
    queues=None,
    horizon: int = 3,
) -> MfcInputs:
    """Coordination-optimizer inputs for one demand segment.

    The segment's branch arrival rates become the admission caps, its
    entry rate the upstream inflow; queues default to empty.
    """
    specs = tuple(
        replace(spec, branch_min=0.0, branch_max=float(segment.branch[i]))
        for i, spec in enumerate(corridor.intersections)
    )
    adjusted = replace(
        corridor, intersections=specs, entry_inflow=float(segment.entry_in)
    )
    if queues is None:
        queues = tuple(0.0 for _ in specs)
    return MfcInputs(adjusted, tuple(float(v) for v in queues), horizon=horizon)


def build_plan(
    strategy: str,
    corridor: CorridorSpec,
    segment: DemandSegment,
    epoch: float = 0.0,
    queues=None,
    horizon: int = 3,
):
    """A fresh coordination plan for one segment's demand."""
    if strategy == "MFC":
        solution = solve_mfc(segment_inputs(corridor, segment, queues, horizon))
        return mfc_plan(solution, corridor, epoch=epoch)
    if strategy == "GWC":
        green_in, green_out = webster_splits(corridor, segment)
        solution = solve_gwc(GwcInputs(corridor, green_in, green_out))
        return gwc_plan(solution, corridor, epoch=epoch)
    raise ValueError(f"strategy {strategy!r} does not use a plan")


class CorridorEnv:
    """One corridor episode per reset under a single control strategy.

    A demand level is drawn at every reset.  MFC and GWC builds their
    plan from that level's rates with the plan epoch at the warm-up
    boundary, so the coordination masks stay wide open while the
    network fills and bind afterwards.  Transitions whose step ends
    inside the warm-up are flagged collect=False.
    """

    def __init__(
        self,
        corridor: CorridorSpec,
        profiles,
        mode: str = "PAC",
        phase_table: PhaseTable | None = None,
        episode: float = 3600.0,
        warmup: float = 600.0,
        eval_window: float = 600.0,
        kappa: float = 0.2,
        plan_horizon: int = 3,
        record_events: bool = False,
    ):
        if isinstance(profiles, DemandProfile):
            profiles = {"default": profiles}
        if not profiles:
            raise ValueError("need at least one demand profile")
        if mode not in ("PAC", "MFC", "GWC"):
            raise ValueError(f"unknown control mode {mode!r}")
        self.corridor = corridor
        self.profiles = dict(profiles)
        self.mode = mode
        self.table = phase_table or default_phase_table()
        self.episode = float(episode)
        self.warmup = float(warmup)
        self.eval_window = float(eval_window)
        self.kappa = float(kappa)
        self.plan_horizon = int(plan_horizon)
        self.record_events = record_events
        self.n = len(corridor.intersections)
        self._sims = {
            level: Simulator(corridor, profile, self.table, kappa=kappa,
                             record_events=record_events)
            for level, profile in self.profiles.items()
        }
        self.sim: Simulator | None = None
        self.level: str | None = None
        self.assignment: StrategyAssignment | None = None
        self._plans: dict[str, object] = {}

    def _plan_for(self, level: str):
        # same level always yields the same plan, so solve each once
        if level not in self._plans:
            segment = self.profiles[level].segment_at(self.warmup)
            self._plans[level] = build_plan(
                self.mode, self.corridor, segment,
                epoch=self.warmup, horizon=self.plan_horizon,
            )
        return self._plans[level]

    def reset(self, seed: int | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        levels = sorted(self.profiles)
        self.level = levels[int(rng.integers(len(levels)))]
        self.sim = self._sims[self.level]
        raw = self.sim.reset(int(rng.integers(2 ** 31)))
        if self.mode == "PAC":
            self.assignment = StrategyAssignment("PAC")
        else:
            self.assignment = StrategyAssignment(self.mode, self._plan_for(self.level))
        return normalize_observations(raw, self.corridor)

    def masks(self) -> np.ndarray:
        t = self.sim.clock
        return np.stack([
            feasible_phases(i, t, self.assignment, self.table)
            for i in range(self.n)
        ])

    def step(self, actions):
        raw, rewards, _info = self.sim.step(actions)
        clock = self.sim.clock
        done = clock >= self.episode - 1e-9
        info = {
            "collect": clock > self.warmup + 1e-9,
            "terminal": False,      # horizon truncation bootstraps
            "level": self.level,
            "clock": clock,
        }
        if done:
            info["metrics"] = self.sim.finalize_metrics(
                self.episode - self.eval_window, self.episode
            )
        obs = normalize_observations(raw, self.corridor)
        return obs, rewards, done, info


class TwoArmedBandit:
    """One-step episodes; pulling the hot arm pays 1, anything else 0."""

    def __init__(self, hot: int = 1, arms: int = 2, mask=None, obs_dim: int = 3):
        if not 0 <= hot < arms:
            raise ValueError("hot arm outside the action range")
        self.hot = hot
        self.arms = arms
        self.obs_dim = obs_dim
        self._mask = np.ones(arms) if mask is None else np.asarray(mask, dtype=float)

    def reset(self, seed=None) -> np.ndarray:
        return np.ones((1, self.obs_dim))

    def masks(self) -> np.ndarray:
        return self._mask[None, :].copy()

    def step(self, actions):
        reward = 1.0 if int(actions[0]) == self.hot else 0.0
        return np.ones((1, self.obs_dim)), np.array([reward]), True, {"terminal": True}


class ContextualBandit:
    """One-step episodes over a payoff table; rows are contexts.

    Each reset draws a context; the observation one-hot encodes it.
    Useful as a known-optimum check for any policy over discrete
    options: the best arm per context is argmax of its payoff row.
    """

    def __init__(self, payoffs):
        self.payoffs = np.atleast_2d(np.asarray(payoffs, dtype=float))
        self.n_contexts, self.arms = self.payoffs.shape
        self.context = 0

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.context = int(rng.integers(self.n_contexts))
        return self._obs()

    def _obs(self) -> np.ndarray:
        row = np.zeros((1, self.n_contexts + 1))
        row[0, self.context] = 1.0
        row[0, -1] = 1.0    # bias feature
        return row

    def masks(self) -> np.ndarray:
        return np.ones((1, self.arms))

    def step(self, actions):
        reward = self.payoffs[self.context, int(actions[0])]
        return self._obs(), np.array([reward]), True, {"terminal": True}

    def best_arm(self, context: int) -> int:
        return int(np.argmax(self.payoffs[context]))
