"""Mesoscopic corridor simulator with a 3 s control step.

Discrete vehicles, per-movement FIFO queues, and fractional discharge
accumulators: a movement served green gains q_s * lanes * dt of release
credit per step, whole vehicles leave the front of the queue, and the
fractional remainder carries over while the queue stays nonempty. Released
corridor-through vehicles either continue along the corridor (entering the
next edge in free-flow transit, probability = that edge's turn ratio) or
exit; all other movements exit on release.

Signal handling: one phase active per intersection. A phase change costs
one full-red clearance step before the new phase serves, and a change
request arriving on a phase's first green step is deferred.

Queues are unbounded: storage limits and spillback belong to the planning
models, not this simulator.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import (
    MOVEMENTS,
    CorridorSpec,
    DemandProfile,
    Movement,
    PhaseTable,
    default_phase_table,
    validate,
)

__all__ = [
    "STEP_SECONDS",
    "WINDOW_SECONDS",
    "EpisodeMetrics",
    "Simulator",
    "METRIC_COLUMNS",
]

STEP_SECONDS = 3.0
WINDOW_SECONDS = 60.0

# Route classes, assigned at entry.
ROUTE_IN, ROUTE_OUT, ROUTE_OTHER = 0, 1, 2
_ROUTE_NAMES = ("inbound", "outbound", "other")

METRIC_COLUMNS = (
    "in_tt",
    "out_tt",
    "oth_tt",
    "avg_t",
    "thru",
    "thru_corridor",
    "stop",
    "speed",
    "reward",
    "degenerate",
)


@dataclass(slots=True)
class _Vehicle:
    ident: int
    route: int
    entry_time: float
    stops: int = 0
    exit_time: float = -1.0
    completer: bool = False


@dataclass(frozen=True)
class EpisodeMetrics:
    """Evaluation-window summary of one episode."""

    in_tt: float            # vehicle-seconds, vehicles that entered inbound
    out_tt: float
    oth_tt: float           # branch, cross-street and left-turn entries
    avg_t: float            # total TT / completed vehicles, s/veh
    thru: int               # vehicles that left the network in the window
    thru_corridor: int      # full corridor traversals in the window
    stop: float             # mean stops per corridor traversal
    speed: float            # corridor distance / corridor travel time, m/s
    reward: float           # summed agent rewards over the window
    degenerate: bool        # no completions or no corridor traversals

    def as_row(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_COLUMNS}


class Simulator:
    """One corridor instance; reset() then step() with one phase per signal."""

    def __init__(
        self,
        corridor: CorridorSpec,
        demand: DemandProfile,
        phase_table: PhaseTable | None = None,
        kappa: float = 0.2,
        record_events: bool = False,
    ):
        issues = validate(corridor, demand)
        if issues:
            raise ValueError("; ".join(issues))
        self.corridor = corridor
        self.demand = demand
        self.table = phase_table or default_phase_table()
        table_issues = self.table.problems()
        if table_issues:
            raise ValueError("; ".join(table_issues))
        self.kappa = float(kappa)
        self.dt = STEP_SECONDS
        self.record_events = record_events

        specs = corridor.intersections
        self.n = len(specs)
        self._window = int(round(WINDOW_SECONDS / self.dt))
        self._sat = np.array([s.sat_flow for s in specs])
        self._lanes = np.array(
            [[s.movement_lanes(m) for m in MOVEMENTS] for s in specs], dtype=float
        )
        self._tt = np.array([s.free_flow_tt for s in specs])
        self._speed_in = np.array([s.free_flow_speed for s in specs])
        out_edge = [min(i + 1, self.n - 1) for i in range(self.n)]
        self._speed_out = self._speed_in[out_edge]
        self._turn = np.array([s.turn_ratio for s in specs])
        self._served_masks = [
            np.array([m in phase for m in MOVEMENTS], dtype=bool)
            for phase in self.table.phases
        ]
        self.reset()

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Clear all state and return the initial observations (n, 4, 8)."""
        self._rng = np.random.default_rng(
            self.demand.seed if seed is None else seed
        )
        self._clock = 0.0
        self._steps = 0
        self._active = np.zeros(self.n, dtype=int)
        self._green_steps = np.ones(self.n, dtype=int)
        self._pending = np.zeros(self.n, dtype=int)
        self._clearing = np.zeros(self.n, dtype=bool)
        self._queues = [
            [deque() for _ in MOVEMENTS] for _ in range(self.n)
        ]
        self._acc = np.zeros((self.n, len(MOVEMENTS)))
        self._transit_in = [deque() for _ in range(self.n)]
        self._transit_out = [deque() for _ in range(self.n)]
        self._joins = np.zeros((self.n, len(MOVEMENTS), self._window))
        self._disch = np.zeros((self.n, len(MOVEMENTS), self._window))
        self._vehicles: dict[int, _Vehicle] = {}
        self._next_vid = 0
        self._entered = 0
        self._exited = 0
        self._step_rewards: list[float] = []
        self._events: list[tuple] = []
        self._lam_seg = None
        self._lam = None
        return self.observations()

    # -- bookkeeping helpers ----------------------------------------------

    @property
    def clock(self) -> float:
        return self._clock

    @property
    def entered(self) -> int:
        return self._entered

    @property
    def exited(self) -> int:
        return self._exited

    @property
    def in_network(self) -> int:
        queued = sum(len(q) for row in self._queues for q in row)
        moving = sum(len(t) for t in self._transit_in) + sum(
            len(t) for t in self._transit_out
        )
        return queued + moving

    @property
    def total_stops(self) -> int:
        return sum(v.stops for v in self._vehicles.values())

    def queue_lengths(self) -> np.ndarray:
        """(n, 8) queued vehicles per movement."""
        return np.array(
            [[len(q) for q in row] for row in self._queues], dtype=float
        )

    def _log(self, vid: int, event: str, place: str) -> None:
        if self.record_events:
            self._events.append((vid, event, self._clock, place))

    def _new_vehicle(self, route: int) -> _Vehicle:
        v = _Vehicle(ident=self._next_vid, route=route, entry_time=self._clock)
        self._next_vid += 1
        self._vehicles[v.ident] = v
        self._entered += 1
        return v

    def _serves(self, i: int, m: int) -> bool:
        if self._clearing[i]:
            return False
        return self._served_masks[self._active[i]][m]

    def _join(self, i: int, m: int, vid: int) -> None:
        queue = self._queues[i][m]
        if queue or not self._serves(i, m):
            self._vehicles[vid].stops += 1
            self._log(vid, "stop", f"{self.corridor.intersections[i].ident}:{MOVEMENTS[m].label}")
        queue.append((vid, self._clock))
        self._joins[i, m, self._steps % self._window] += 1
        self._log(vid, "join", f"{self.corridor.intersections[i].ident}:{MOVEMENTS[m].label}")

    def _exit(self, vid: int, where: str, completer: bool) -> None:
        v = self._vehicles[vid]
        v.exit_time = self._clock
        v.completer = completer
        self._exited += 1
        self._log(vid, "exit", where)

    # -- scenario seeding --------------------------------------------------

    def seed_queue(self, i: int, movement: Movement, count: int) -> None:
        """Place stationary vehicles at a stop line (initial-queue warm start)."""
        for _ in range(count):
            v = self._new_vehicle(ROUTE_OTHER)
            self._log(v.ident, "enter", "seed")
            self._join(i, int(movement), v.ident)

    def seed_transit(
        self, direction: str, count: int, delay: float = 0.0
    ) -> None:
        """Launch corridor-entry vehicles onto the entry edge.

        direction "in" starts at the inbound entry, "out" at the outbound
        one; each vehicle reaches the first stop line after the edge's
        free-flow time plus delay.
        """
        if direction not in ("in", "out"):
            raise ValueError(f"unknown direction {direction!r}")
        for _ in range(count):
            if direction == "in":
                v = self._new_vehicle(ROUTE_IN)
                self._transit_in[0].append(
                    (self._clock + delay + self._tt[0], v.ident)
                )
            else:
                v = self._new_vehicle(ROUTE_OUT)
                self._transit_out[self.n - 1].append(
                    (self._clock + delay + self._tt[self.n - 1], v.ident)
                )
            self._log(v.ident, "enter", f"entry-{direction}")

    # -- the control step --------------------------------------------------

    def step(self, phases) -> tuple[np.ndarray, np.ndarray, dict]:
        """Advance 3 s under the requested phases.

        Returns (observations (n, 4, 8), rewards (n,), info). info carries
        the served movement sets, active phases, and per-movement release
        counts for this step.
        """
        phases = np.asarray(phases, dtype=int)
        if phases.shape != (self.n,):
            raise ValueError(
                f"expected {self.n} phase commands, got shape {phases.shape}"
            )
        n_phases = len(self.table)
        for i, ph in enumerate(phases):
            if not 0 <= ph < n_phases:
                raise ValueError(
                    f"unknown phase {ph} at intersection "
                    f"{self.corridor.intersections[i].ident}"
                )

        t_start = self._clock
        self._clock += self.dt
        self._steps += 1
        slot = self._steps % self._window
        self._joins[:, :, slot] = 0.0
        self._disch[:, :, slot] = 0.0

        # Phase resolution: clearance completes, then changes are accepted.
        for i in range(self.n):
            if self._clearing[i]:
                self._clearing[i] = False
                self._active[i] = self._pending[i]
                self._green_steps[i] = 0
            if phases[i] != self._active[i] and self._green_steps[i] >= 1:
                self._clearing[i] = True
                self._pending[i] = phases[i]

        # Vehicles reaching a stop line join before new demand appears.
        for i in range(self.n):
            transit = self._transit_in[i]
            while transit and transit[0][0] <= self._clock + 1e-9:
                _, vid = transit.popleft()
                self._join(i, int(Movement.IN_T), vid)
            transit = self._transit_out[i]
            while transit and transit[0][0] <= self._clock + 1e-9:
                _, vid = transit.popleft()
                self._join(i, int(Movement.OUT_T), vid)

        self._spawn_arrivals(t_start)

        # Discharge served queues.
        released = np.zeros((self.n, len(MOVEMENTS)), dtype=int)
        for i in range(self.n):
            if self._clearing[i]:
                self._acc[i, :] = 0.0
                continue
            mask = self._served_masks[self._active[i]]
            for m in range(len(MOVEMENTS)):
                if not mask[m]:
                    self._acc[i, m] = 0.0
                    continue
                queue = self._queues[i][m]
                self._acc[i, m] += self._sat[i] * self._lanes[i, m] * self.dt
                count = min(int(self._acc[i, m] + 1e-9), len(queue))
                for _ in range(count):
                    vid, _ = queue.popleft()
                    self._route_released(i, m, vid)
                self._acc[i, m] -= count
                if not queue:
                    self._acc[i, m] = 0.0
                released[i, m] = count
                self._disch[i, m, slot] += count
            self._green_steps[i] += 1

        rewards = np.array([self.agent_reward(i) for i in range(self.n)])
        self._step_rewards.append(float(rewards.sum()))

        info = {
            "clock": self._clock,
            "active": self._active.copy(),
            "clearing": self._clearing.copy(),
            "served": tuple(
                frozenset() if self._clearing[i]
                else self.table.phases[self._active[i]]
                for i in range(self.n)
            ),
            "released": released,
        }
        return self.observations(), rewards, info

    def _spawn_arrivals(self, t_start: float) -> None:
        seg = self.demand.segment_at(t_start)
        if seg is not self._lam_seg:
            lam = [seg.entry_in, seg.entry_out]
            lam.extend(seg.branch)
            for rates in seg.direct:
                lam.extend(rates)
            self._lam_seg = seg
            self._lam = np.array(lam) * self.dt
        counts = self._rng.poisson(self._lam)

        for _ in range(counts[0]):
            v = self._new_vehicle(ROUTE_IN)
            self._transit_in[0].append((self._clock + self._tt[0], v.ident))
            self._log(v.ident, "enter", "entry-in")
        for _ in range(counts[1]):
            v = self._new_vehicle(ROUTE_OUT)
            self._transit_out[self.n - 1].append(
                (self._clock + self._tt[self.n - 1], v.ident)
            )
            self._log(v.ident, "enter", "entry-out")
        base = 2
        for i in range(self.n):
            for _ in range(counts[base + i]):
                v = self._new_vehicle(ROUTE_OTHER)
                self._log(v.ident, "enter", "branch")
                self._join(i, int(Movement.IN_T), v.ident)
        base += self.n
        for i in range(self.n):
            for m in range(len(MOVEMENTS)):
                for _ in range(counts[base + i * len(MOVEMENTS) + m]):
                    v = self._new_vehicle(ROUTE_OTHER)
                    self._log(v.ident, "enter", "direct")
                    self._join(i, m, v.ident)

    def _route_released(self, i: int, m: int, vid: int) -> None:
        ident = self.corridor.intersections[i].ident
        self._log(vid, "release", f"{ident}:{MOVEMENTS[m].label}")
        if m == Movement.IN_T:
            if i == self.n - 1:
                self._exit(vid, ident, self._vehicles[vid].route == ROUTE_IN)
            elif self._rng.random() < self._turn[i + 1]:
                self._transit_in[i + 1].append(
                    (self._clock + self._tt[i + 1], vid)
                )
            else:
                self._exit(vid, ident, False)
        elif m == Movement.OUT_T:
            if i == 0:
                self._exit(vid, ident, self._vehicles[vid].route == ROUTE_OUT)
            elif self._rng.random() < self._turn[i]:
                self._transit_out[i - 1].append((self._clock + self._tt[i], vid))
            else:
                self._exit(vid, ident, False)
        else:
            self._exit(vid, ident, False)

    # -- observations and rewards -----------------------------------------

    def observe(self, i: int) -> np.ndarray:
        """Movement features (4, 8): arrival rate, queue, speed, neighbor inflow."""
        n_m = len(MOVEMENTS)
        mu = self._joins[i].sum(axis=1) / WINDOW_SECONDS
        q = np.array([len(self._queues[i][m]) for m in range(n_m)], dtype=float)
        nu = np.empty(n_m)
        for m in range(n_m):
            if m == Movement.IN_T:
                moving, speed = len(self._transit_in[i]), self._speed_in[i]
            elif m == Movement.OUT_T:
                moving, speed = len(self._transit_out[i]), self._speed_out[i]
            else:
                moving, speed = 0, self._speed_in[i]
            total = moving + q[m]
            nu[m] = speed if total == 0 else speed * moving / total
        xi = np.zeros(n_m)
        if i > 0:
            up = self._disch[i - 1, Movement.IN_T].sum() / WINDOW_SECONDS
            xi[Movement.IN_T] = self._turn[i] * up
        if i < self.n - 1:
            up = self._disch[i + 1, Movement.OUT_T].sum() / WINDOW_SECONDS
            xi[Movement.OUT_T] = self._turn[i + 1] * up
        return np.stack([mu, q, nu, xi])

    def observations(self) -> np.ndarray:
        return np.stack([self.observe(i) for i in range(self.n)])

    def agent_reward(self, i: int) -> float:
        """Negative queue-plus-head-wait pressure over the eight movements."""
        total = 0.0
        for m in range(len(MOVEMENTS)):
            queue = self._queues[i][m]
            total += len(queue)
            if queue:
                total += self.kappa * (self._clock - queue[0][1])
        return -total

    # -- episode metrics ---------------------------------------------------

    def finalize_metrics(
        self, eval_start: float = 0.0, eval_end: float | None = None
    ) -> EpisodeMetrics:
        end = self._clock if eval_end is None else eval_end
        tt = [0.0, 0.0, 0.0]
        thru = 0
        completer_stops: list[int] = []
        completer_time = 0.0
        completer_dist = 0.0
        lengths = (
            self.corridor.inbound_route_length,
            self.corridor.outbound_route_length,
        )
        for v in self._vehicles.values():
            leave = v.exit_time if v.exit_time >= 0.0 else end
            span = min(leave, end) - max(v.entry_time, eval_start)
            if span > 0.0:
                tt[v.route] += span
            if v.exit_time >= 0.0 and eval_start < v.exit_time <= end:
                thru += 1
                if v.completer:
                    completer_stops.append(v.stops)
                    completer_time += v.exit_time - v.entry_time
                    completer_dist += lengths[v.route]

        n_corridor = len(completer_stops)
        total_tt = sum(tt)
        degenerate = thru == 0 or n_corridor == 0
        avg_t = 0.0 if thru == 0 else total_tt / thru
        stop = 0.0 if n_corridor == 0 else sum(completer_stops) / n_corridor
        speed = 0.0 if completer_time <= 0.0 else completer_dist / completer_time

        first_step = int(eval_start / self.dt)
        last_step = int(round(end / self.dt))
        reward = float(sum(self._step_rewards[first_step:last_step]))
        return EpisodeMetrics(
            in_tt=tt[ROUTE_IN],
            out_tt=tt[ROUTE_OUT],
            oth_tt=tt[ROUTE_OTHER],
            avg_t=avg_t,
            thru=thru,
            thru_corridor=n_corridor,
            stop=stop,
            speed=speed,
            reward=reward,
            degenerate=degenerate,
        )

    # -- exports -----------------------------------------------------------

    def write_trajectories(self, path) -> None:
        """Per-vehicle event log: entries, stop-line joins, stops, releases,
        exits, in simulation order."""
        if not self.record_events:
            raise ValueError("simulator was created without record_events")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["vehicle", "event", "time", "place"])
            for vid, event, when, place in self._events:
                writer.writerow([vid, event, f"{when:.3f}", place])

    def write_metrics(self, path, metrics: EpisodeMetrics) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(METRIC_COLUMNS))
            writer.writeheader()
            row = metrics.as_row()
            row = {
                k: (f"{v:.6f}" if isinstance(v, float) else v)
                for k, v in row.items()
            }
            writer.writerow(row)
