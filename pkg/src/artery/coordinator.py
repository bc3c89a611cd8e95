"""Corridor-level option selection over the three control strategies.

A day is split into hour-long decision steps.  Each step opens with a
short measurement phase run under unconstrained actuated control, after
which the coordinator reads the corridor state, picks one strategy for
every intersection at once, and (for the coordinated strategies) solves
a fresh plan from the measured queues.  The option policy is trained
with the same clipped-surrogate machinery as the signal agents while
their weights stay frozen.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .agents import StrategyAssignment, feasible_phases, select_action
from .envs import build_plan, normalize_observations
from .model import (
    CorridorSpec,
    DemandProfile,
    DemandSegment,
    Movement,
    PhaseTable,
    default_phase_table,
)
from .net import PolicyParams, params_checksum
from .ppo import PpoConfig, TrainResult, train_mode
from .sim import Simulator

OPTIONS = ("PAC", "MFC", "GWC")

DECISION_COLUMNS = (
    "tau", "level", "demand", "queue_in", "queue_out", "option", "reward",
)

#: configured (queue, stop, speed) multiplier groups
WEIGHT_GROUPS = {
    1: (-1.0, -0.1, 50.0),
    2: (-1.0, -0.01, 10.0),
    3: (-1.0, -0.005, 1.0),
}


@dataclass(frozen=True)
class HlcRewardWeights:
    """Signed multipliers for (queue sum, corridor stops, corridor speed)."""

    alpha_queue: float
    alpha_stop: float
    alpha_speed: float

    @classmethod
    def group(cls, number: int) -> "HlcRewardWeights":
        if number not in WEIGHT_GROUPS:
            raise ValueError(f"no weight group {number}")
        return cls(*WEIGHT_GROUPS[number])

    def problems(self) -> list[str]:
        values = (self.alpha_queue, self.alpha_stop, self.alpha_speed)
        if not all(np.isfinite(values)):
            return ["reward weights must be finite"]
        return []


def hlc_reward(
    queue_sum: float, stops: float, speed: float, weights: HlcRewardWeights
) -> float:
    """Weighted corridor score for one decision window.

    queue_sum is the queue length summed over every movement and every
    low-level step of the window, stops the corridor stop count, speed
    the mean corridor travel speed.
    """
    return (
        weights.alpha_queue * queue_sum
        + weights.alpha_stop * stops
        + weights.alpha_speed * speed
    )


@dataclass(frozen=True)
class HlcObservation:
    """Corridor state read at the end of a measurement phase.

    demand is the scheduled aggregate arrival rate for the upcoming
    control period; the queue vectors hold mean inbound-through and
    outbound-through queues per intersection over the measurement
    window, in vehicles.
    """

    demand: float
    queues_in: np.ndarray
    queues_out: np.ndarray

    def problems(self) -> list[str]:
        out = []
        if self.queues_in.shape != self.queues_out.shape:
            out.append("queue vectors differ in length")
        if np.any(self.queues_in < 0) or np.any(self.queues_out < 0):
            out.append("negative mean queue")
        if not np.isfinite(self.demand):
            out.append("demand rate must be finite")
        return out

    def vector(self) -> np.ndarray:
        return np.concatenate(
            ([self.demand], self.queues_in, self.queues_out)
        )


def aggregate_rate(segment: DemandSegment) -> float:
    """Total scheduled arrival rate of a demand segment, veh/s."""
    return (
        segment.entry_in
        + segment.entry_out
        + sum(segment.branch)
        + sum(sum(rates) for rates in segment.direct)
    )


def hlc_observe(
    mean_queues: np.ndarray, forecast_rate: float
) -> HlcObservation:
    """Builds the coordinator state from measured per-movement queue means.

    mean_queues is (n, 8); the inbound- and outbound-through columns
    become the state's queue vectors.
    """
    q = np.asarray(mean_queues, dtype=float)
    return HlcObservation(
        demand=float(forecast_rate),
        queues_in=q[:, int(Movement.IN_T)].copy(),
        queues_out=q[:, int(Movement.OUT_T)].copy(),
    )


def select_option(observation, params: PolicyParams, mode: str = "sample",
                  rng: np.random.Generator | None = None):
    """Picks one strategy for the whole corridor.

    Returns (option name, log probability, probability vector).  All
    three options are always admissible, so the mask is trivial.
    """
    vec = observation.vector() if hasattr(observation, "vector") else observation
    logits = params.policy(np.asarray(vec, dtype=float).reshape(1, -1))[0]
    action, logp, probs = select_action(
        logits, np.ones(len(OPTIONS)), mode=mode, rng=rng
    )
    return OPTIONS[action], logp, probs


class HlcEnv:
    """Hour-stepped option-selection episodes over a full demand schedule.

    Each decision step spans `step_seconds`: a measurement phase of
    `measure` seconds under unconstrained control, then the chosen
    option for the remainder with a plan solved from the measured
    queues.  Low-level phases come from the frozen per-option policies.
    Observation vectors are [rate, q_in / storage, q_out / storage].
    """

    def __init__(
        self,
        corridor: CorridorSpec,
        schedule: DemandProfile,
        hsa_params: dict,
        weights: HlcRewardWeights,
        phase_table: PhaseTable | None = None,
        episode: float = 58800.0,
        warmup: float = 1200.0,
        step_seconds: float = 3600.0,
        measure: float = 600.0,
        kappa: float = 0.2,
        plan_horizon: int = 3,
        hsa_mode: str = "sample",
        trace=None,
    ):
        missing = [w for w in OPTIONS if w not in hsa_params]
        if missing:
            raise ValueError(f"no frozen policy for option {missing[0]!r}")
        steps = (episode - warmup) / step_seconds
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValueError("episode minus warm-up must be a whole number "
                             "of decision steps")
        if not 0.0 < measure < step_seconds:
            raise ValueError("measurement phase must fit inside a step")
        self.corridor = corridor
        self.schedule = schedule
        self.hsa_params = dict(hsa_params)
        self.weights = weights
        self.table = phase_table or default_phase_table()
        self.episode = float(episode)
        self.warmup = float(warmup)
        self.step_seconds = float(step_seconds)
        self.measure = float(measure)
        self.plan_horizon = int(plan_horizon)
        self.hsa_mode = hsa_mode
        self.trace = trace
        self.n = len(corridor.intersections)
        self.n_steps = int(round(steps))
        self.obs_dim = 2 * self.n + 1
        self._storage = np.array(
            [spec.storage for spec in corridor.intersections]
        )
        self.sim = Simulator(corridor, schedule, self.table, kappa=kappa)
        self.decisions: list[tuple] = []
        self.window_stats: list[tuple] = []
        self.tau = 0

    # -- low-level driving -------------------------------------------------

    def _hsa_actions(self, assignment: StrategyAssignment) -> np.ndarray:
        params = self.hsa_params[assignment.strategy]
        logits = params.policy(normalize_observations(self._raw, self.corridor))
        t = self.sim.clock
        actions = np.empty(self.n, dtype=int)
        for i in range(self.n):
            mask = feasible_phases(i, t, assignment, self.table)
            actions[i], _, _ = select_action(
                logits[i], mask, mode=self.hsa_mode, rng=self.rng
            )
        return actions

    def _run(self, until: float, assignment: StrategyAssignment,
             sample_after: float | None = None):
        """Advances the simulator, returning mean queues over sampled steps."""
        total = np.zeros((self.n, len(Movement)))
        count = 0
        queue_sum = 0.0
        while self.sim.clock < until - 1e-9:
            self._raw, _, _ = self.sim.step(self._hsa_actions(assignment))
            lengths = self.sim.queue_lengths()
            queue_sum += float(lengths.sum())
            if sample_after is None or self.sim.clock > sample_after + 1e-9:
                total += lengths
                count += 1
            if self.trace is not None:
                self.trace(self.sim.clock, assignment)
        mean = total / max(count, 1)
        return mean, queue_sum

    def _observation(self, mean_queues: np.ndarray, when: float):
        segment = self.schedule.segment_at(when)
        state = hlc_observe(mean_queues, aggregate_rate(segment))
        vec = np.concatenate((
            [state.demand],
            state.queues_in / self._storage,
            state.queues_out / self._storage,
        ))
        return state, segment, vec.reshape(1, -1)

    # -- environment protocol ----------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self._raw = self.sim.reset(int(self.rng.integers(2 ** 31)))
        self.tau = 0
        self.decisions = []
        self.window_stats = []
        free = StrategyAssignment("PAC")
        self._run(self.warmup, free)
        mean, _ = self._run(self.warmup + self.measure, free)
        self._state, self._segment, obs = self._observation(
            mean, self.warmup + self.measure
        )
        return obs

    def masks(self) -> np.ndarray:
        return np.ones((1, len(OPTIONS)))

    def step(self, actions):
        option = OPTIONS[int(np.asarray(actions).ravel()[0])]
        start = self.warmup + self.tau * self.step_seconds + self.measure
        end = self.warmup + (self.tau + 1) * self.step_seconds
        if option == "PAC":
            assignment = StrategyAssignment("PAC")
        else:
            plan = build_plan(
                option, self.corridor, self._segment, epoch=start,
                queues=self._state.queues_in, horizon=self.plan_horizon,
            )
            assignment = StrategyAssignment(option, plan)
        # the window's closing stretch doubles as the terminal measurement
        tail_mean, queue_sum = self._run(
            end, assignment, sample_after=end - self.measure
        )
        window = self.sim.finalize_metrics(start, end)
        stops = window.stop * window.thru_corridor
        reward = hlc_reward(queue_sum, stops, window.speed, self.weights)
        self.decisions.append((
            self.tau, self._segment.level, self._state.demand,
            float(self._state.queues_in.mean()),
            float(self._state.queues_out.mean()),
            option, reward,
        ))
        self.window_stats.append((self.tau, stops, window.speed, queue_sum))
        self.tau += 1
        done = self.tau >= self.n_steps
        info = {
            "collect": True,
            "terminal": False,      # day boundary truncates, so bootstrap
            "option": option,
            "clock": self.sim.clock,
        }
        if done:
            self._state, self._segment, obs = self._observation(
                tail_mean, self.episode
            )
            info["metrics"] = self.sim.finalize_metrics(
                self.warmup, self.episode
            )
        else:
            mean, _ = self._run(end + self.measure, StrategyAssignment("PAC"))
            self._state, self._segment, obs = self._observation(
                mean, end + self.measure
            )
        return obs, np.array([reward]), done, info


class OptionBandit:
    """One-step option pulls with demand-keyed payoffs.

    Observations mimic the coordinator's layout: a per-level demand
    rate followed by 2 n storage-normalized queue entries drawn
    uniformly, so the rate is the only informative feature.
    """

    def __init__(self, rates: dict, payoffs: dict, n: int = 6,
                 queue_span: float = 0.8):
        if set(rates) != set(payoffs):
            raise ValueError("rates and payoffs must cover the same levels")
        for level, row in payoffs.items():
            if len(row) != len(OPTIONS):
                raise ValueError(f"need one payoff per option for {level!r}")
        self.levels = tuple(sorted(rates))
        self.rates = {k: float(v) for k, v in rates.items()}
        self.payoffs = {k: tuple(map(float, v)) for k, v in payoffs.items()}
        self.n = n
        self.queue_span = float(queue_span)
        self.obs_dim = 2 * n + 1
        self.level: str | None = None

    def best_option(self, level: str) -> str:
        return OPTIONS[int(np.argmax(self.payoffs[level]))]

    def reset(self, seed=None) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self.level = self.levels[int(self.rng.integers(len(self.levels)))]
        queues = self.rng.uniform(0.0, self.queue_span, size=2 * self.n)
        obs = np.concatenate(([self.rates[self.level]], queues))
        return obs.reshape(1, -1)

    def masks(self) -> np.ndarray:
        return np.ones((1, len(OPTIONS)))

    def step(self, actions):
        a = int(np.asarray(actions).ravel()[0])
        reward = self.payoffs[self.level][a]
        info = {"collect": True, "terminal": True, "level": self.level}
        return np.zeros((1, self.obs_dim)), np.array([reward]), True, info


@dataclass
class HlcTrainResult:
    params: PolicyParams
    log: list = field(default_factory=list)
    steps: int = 0
    diverged: bool = False
    aborted: bool = False
    checksums: dict = field(default_factory=dict)


def train_hlc(
    env_factory,
    config: PpoConfig | None = None,
    iterations: int = 30,
    seed: int = 0,
    params: PolicyParams | None = None,
    progress=None,
) -> HlcTrainResult:
    """Trains the option policy while the per-option policies stay fixed.

    The environment owns the frozen weights; their checksums are taken
    before and after training and any drift is an error.
    """
    probe = env_factory()
    frozen = getattr(probe, "hsa_params", None)
    before = {}
    if frozen is not None:
        missing = [w for w in OPTIONS if w not in frozen]
        if missing:
            raise ValueError(f"no frozen policy for option {missing[0]!r}")
        before = {w: params_checksum(p) for w, p in frozen.items()}
    result: TrainResult = train_mode(
        env_factory, "HLC", config, iterations=iterations, seed=seed,
        params=params, progress=progress,
    )
    if frozen is not None:
        after = {w: params_checksum(p) for w, p in frozen.items()}
        if after != before:
            raise RuntimeError(
                "frozen per-option weights changed during coordinator training"
            )
    return HlcTrainResult(
        params=result.params, log=result.log, steps=result.steps,
        diverged=result.diverged, aborted=result.aborted, checksums=before,
    )


def evaluate_hlc(env, params: PolicyParams, mode: str = "argmax",
                 seed: int | None = None):
    """Runs one episode under the trained option policy.

    Returns (decision rows, episode metrics).  Rows follow
    DECISION_COLUMNS; metrics may be None for environments that do not
    report any.
    """
    rng = np.random.default_rng(seed)
    obs = np.atleast_2d(env.reset(int(rng.integers(2 ** 31))))
    done = False
    metrics = None
    while not done:
        mask = np.atleast_2d(env.masks())[0]
        logits = params.policy(obs)[0]
        action, _, _ = select_action(logits, mask, mode=mode, rng=rng)
        obs, _, done, info = env.step(np.array([action]))
        obs = np.atleast_2d(obs)
        if done:
            metrics = info.get("metrics")
    return list(getattr(env, "decisions", [])), metrics


def write_decision_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECISION_COLUMNS)
        for tau, level, demand, q_in, q_out, option, reward in rows:
            writer.writerow([
                tau, level, f"{demand:.6f}", f"{q_in:.6f}",
                f"{q_out:.6f}", option, f"{reward:.6f}",
            ])
