"""Max-flow coordination: cycle length, green splits and offsets via MILP.

The pipeline runs in three steps. First a single-cycle problem with the
cycle frequency z = 1/C as a decision variable picks the cycle length.
Then, with z fixed, a multi-cycle problem chooses green splits, branch
admissions and outflows, propagating per-lane queues between cycles.
Finally each link/cycle pair is classified by its supply-demand split and
the matching closed-form offset is evaluated and clamped to its bounds.

Throughput q_out = min(capacity, demand) is linearized with one binary per
intersection and cycle: x = 1 when the green is the binding term (queues
persist), x = 0 when arrivals clear, which also forces the next queue to 0.
Tie-breaks are deterministic: among throughput-optimal solutions the cycle
step prefers larger z, the split step lexicographically larger greens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .milp import (
    GE,
    LE,
    EQ,
    INFEASIBLE,
    MilpProblem,
    MilpSolution,
    solve_milp,
)
from .model import CorridorSpec
from .plan import SignalPlan, absolute_offsets

__all__ = [
    "MfcInputs",
    "MfcSolution",
    "MfcInfeasibleError",
    "build_cycle_milp",
    "build_split_milp",
    "optimize_cycle",
    "optimize_splits",
    "supply_demand_splits",
    "classify_scenario",
    "scenario_offset",
    "solve_mfc",
    "mfc_plan",
]

# Objective floor used when re-solving for tie-breaks.
TIE_TOL = 1e-9


class MfcInfeasibleError(RuntimeError):
    """No coordination plan satisfies the storage and bound constraints."""

    def __init__(self, message: str, ident: str | None = None, cycle: int | None = None):
        super().__init__(message)
        self.ident = ident
        self.cycle = cycle


@dataclass(frozen=True)
class MfcInputs:
    """Everything the optimizer consumes: geometry plus current estimates.

    initial_queues are per-lane queue lengths l_i(1) in vehicles at the start
    of the first cycle. entry_inflow overrides the corridor's configured
    upstream arrival rate (veh/s) when given. horizon is the number of
    cycles t_T the split step plans for.
    """

    corridor: CorridorSpec
    initial_queues: tuple[float, ...]
    horizon: int = 1
    entry_inflow: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "initial_queues", tuple(float(v) for v in self.initial_queues))

    @property
    def q1_in(self) -> float:
        if self.entry_inflow is not None:
            return float(self.entry_inflow)
        return float(self.corridor.entry_inflow)

    def problems(self) -> list[str]:
        out = []
        n = len(self.corridor.intersections)
        if len(self.initial_queues) != n:
            out.append(
                f"initial_queues has {len(self.initial_queues)} entries for {n} intersections"
            )
        for i, (l0, spec) in enumerate(zip(self.initial_queues, self.corridor.intersections)):
            if not l0 >= 0.0:
                out.append(f"initial queue {i} is negative: {l0}")
            elif l0 > spec.storage + 1e-9:
                out.append(
                    f"initial queue {i} ({l0}) exceeds storage {spec.storage:.3f}"
                )
        if self.horizon < 1:
            out.append(f"horizon must be >= 1, got {self.horizon}")
        if not self.q1_in >= 0.0:
            out.append(f"entry inflow is negative: {self.q1_in}")
        return out


def _check_inputs(inputs: MfcInputs) -> None:
    issues = inputs.problems()
    if issues:
        raise ValueError("; ".join(issues))


def _build_milp(inputs: MfcInputs, z_fixed: float | None):
    """Shared constraint builder for both optimization steps.

    z_fixed None: single cycle, z is a variable (cycle-length step).
    z_fixed set: `inputs.horizon` cycles, queues become variables linked by
    the queue recursion (split step).
    """
    corridor = inputs.corridor
    specs = corridor.intersections
    n = len(specs)
    t_T = 1 if z_fixed is None else inputs.horizon

    p = MilpProblem()
    z_min = 1.0 / corridor.cycle_max
    z_max = 1.0 / corridor.cycle_min
    if z_fixed is None:
        z_j = p.add_var("z", z_min, z_max)
    else:
        z_j = None
        if not (z_min - 1e-12 <= z_fixed <= z_max + 1e-12):
            raise ValueError(f"z={z_fixed} outside [{z_min}, {z_max}]")

    q_out = np.full((n, t_T), -1, dtype=int)
    q_in = np.full((n, t_T), -1, dtype=int)
    q_b = np.full((n, t_T), -1, dtype=int)
    g = np.full((n, t_T), -1, dtype=int)
    x = np.full((n, t_T), -1, dtype=int)
    l_var = np.full((n, t_T + 1), -1, dtype=int)  # column 0 stays parametric

    for i, spec in enumerate(specs):
        cap = spec.sat_flow * spec.lanes
        for k in range(t_T):
            q_out[i, k] = p.add_var(f"qout_{i}_{k}", 0.0, cap)
            g[i, k] = p.add_var(f"g_{i}_{k}", spec.green_min, spec.green_max)
            q_b[i, k] = p.add_var(f"qb_{i}_{k}", spec.branch_min, spec.branch_max)
            x[i, k] = p.add_binary(f"x_{i}_{k}")
            if i > 0:
                up_cap = specs[i - 1].sat_flow * specs[i - 1].lanes
                q_in[i, k] = p.add_var(f"qin_{i}_{k}", 0.0, spec.turn_ratio * up_cap)
        if z_fixed is not None:
            for k in range(1, t_T + 1):
                l_var[i, k] = p.add_var(f"l_{i}_{k}", 0.0, spec.storage)

    big_m = p.big_m

    def inflow_term(i, k):
        """(coeff dict contribution, constant) for q_i_in at cycle k."""
        if i == 0:
            return None, inputs.q1_in
        return q_in[i, k], 0.0

    for i, spec in enumerate(specs):
        lanes = spec.lanes
        q_s = spec.sat_flow
        storage = spec.storage
        f = spec.turn_ratio
        l0 = inputs.initial_queues[i]
        for k in range(t_T):
            in_j, in_const = inflow_term(i, k)

            # Capacity side of the min: q_out <= g*q_s*n and the big-M lower
            # mate q_out >= g*q_s*n - M(1-x).
            p.add_constraint({q_out[i, k]: 1.0, g[i, k]: -q_s * lanes}, LE, 0.0)
            p.add_constraint(
                {q_out[i, k]: 1.0, g[i, k]: -q_s * lanes, x[i, k]: -big_m},
                GE,
                -big_m,
            )

            # Demand side: q_out <= l*n*z + q_in + q_b with its big-M mate.
            demand_le = {q_out[i, k]: 1.0, q_b[i, k]: -1.0}
            demand_ge = {q_out[i, k]: 1.0, q_b[i, k]: -1.0, x[i, k]: big_m}
            rhs_le = in_const
            rhs_ge = in_const
            if in_j is not None:
                demand_le[in_j] = -1.0
                demand_ge[in_j] = -1.0
                rhs_le = 0.0
                rhs_ge = 0.0
            if z_fixed is None:
                demand_le[z_j] = -lanes * l0
                demand_ge[z_j] = -lanes * l0
            elif k == 0:
                rhs_le += lanes * l0 * z_fixed
                rhs_ge += lanes * l0 * z_fixed
            else:
                demand_le[l_var[i, k]] = -lanes * z_fixed
                demand_ge[l_var[i, k]] = -lanes * z_fixed
            p.add_constraint(demand_le, LE, rhs_le)
            p.add_constraint(demand_ge, GE, rhs_ge)

            # Conservation from upstream: q_i_in = f_i * q_{i-1}_out.
            if i > 0:
                p.add_constraint(
                    {q_in[i, k]: 1.0, q_out[i - 1, k]: -f}, EQ, 0.0
                )

            # Storage within the cycle: saturated service must fit the link.
            # Clearance time: q_s*t_c = q_b/n + l*z <= (L/h)*z.
            tc_coefs = {q_b[i, k]: 1.0 / lanes}
            tc_rhs = 0.0
            if z_fixed is None:
                tc_coefs[z_j] = l0 - storage
            elif k == 0:
                tc_rhs = (storage - l0) * z_fixed
            else:
                tc_coefs[l_var[i, k]] = z_fixed
                tc_rhs = storage * z_fixed
            p.add_constraint(tc_coefs, LE, tc_rhs)

            # Saturated-arrival time: q_s*t_s <= (L/h)*z, expanded so it stays
            # linear whether or not everything turns in (f = 1).
            if f >= 1.0:
                ts_coefs = {q_out[i, k]: 1.0 / lanes}
                ts_rhs = 0.0
                if z_fixed is None:
                    ts_coefs[z_j] = -storage
                else:
                    ts_rhs = storage * z_fixed
            else:
                ts_coefs = {q_out[i, k]: 1.0 / lanes, g[i, k]: -f * q_s}
                ts_rhs = 0.0
                if z_fixed is None:
                    ts_coefs[z_j] = -(1.0 - f) * storage
                else:
                    ts_rhs = (1.0 - f) * storage * z_fixed
            p.add_constraint(ts_coefs, LE, ts_rhs)

            if z_fixed is not None:
                C = 1.0 / z_fixed
                ln = l_var[i, k + 1]
                base = {
                    ln: 1.0,
                    q_b[i, k]: -C / lanes,
                    g[i, k]: C * q_s,
                }
                rhs0 = 0.0
                if in_j is not None:
                    base[in_j] = -C / lanes
                else:
                    rhs0 = in_const * C / lanes
                if k > 0:
                    base[l_var[i, k]] = -1.0
                    prev_const = 0.0
                else:
                    prev_const = l0

                # Queue recursion, big-M form: the next queue equals the
                # update when x=1 and is forced to 0 when x=0.
                lower = dict(base)
                p.add_constraint(lower, GE, rhs0 + prev_const)
                upper = dict(base)
                upper[x[i, k]] = big_m
                p.add_constraint(upper, LE, big_m + rhs0 + prev_const)
                p.add_constraint({ln: 1.0, x[i, k]: -big_m}, LE, 0.0)

                # Next-cycle spillover in rate form:
                # l*z + (q_in+q_b)/n - g*q_s <= (L/h)*z.
                sp = {q_b[i, k]: 1.0 / lanes, g[i, k]: -q_s}
                sp_rhs = storage * z_fixed
                if in_j is not None:
                    sp[in_j] = 1.0 / lanes
                else:
                    sp_rhs -= in_const / lanes
                if k == 0:
                    sp_rhs -= l0 * z_fixed
                else:
                    sp[l_var[i, k]] = z_fixed
                p.add_constraint(sp, LE, sp_rhs)

    p.set_objective({int(q_out[i, k]): 1.0 for i in range(n) for k in range(t_T)})

    indices = {
        "z": z_j,
        "q_out": q_out,
        "q_in": q_in,
        "q_b": q_b,
        "g": g,
        "x": x,
        "l": l_var,
    }
    return p, indices


def build_cycle_milp(inputs: MfcInputs):
    """Single-cycle problem with z = 1/C as a variable."""
    _check_inputs(inputs)
    return _build_milp(inputs, None)


def build_split_milp(inputs: MfcInputs, z: float):
    """Multi-cycle green-split problem at a fixed cycle frequency."""
    _check_inputs(inputs)
    return _build_milp(inputs, float(z))


def _diagnose(inputs: MfcInputs, z: float | None) -> MfcInfeasibleError:
    """Best-effort localization of why no plan exists."""
    corridor = inputs.corridor
    z_max = 1.0 / corridor.cycle_min
    for i, spec in enumerate(corridor.intersections):
        l0 = inputs.initial_queues[i]
        z_i = z_max if z is None else z
        # Clearance demand at the most favorable admission.
        lhs = spec.branch_min / spec.lanes + l0 * z_i
        if lhs > spec.storage * z_i + 1e-9:
            return MfcInfeasibleError(
                f"intersection {spec.ident}: queue {l0:.2f} plus mandatory branch "
                f"inflow cannot clear within link storage {spec.storage:.1f}",
                ident=spec.ident,
                cycle=1,
            )
    return MfcInfeasibleError(
        "no feasible coordination plan under the given bounds", ident=None, cycle=None
    )


def _objective_floor(p: MilpProblem, indices, value: float) -> None:
    coefs = {int(j): 1.0 for j in indices["q_out"].ravel() if j >= 0}
    p.add_constraint(coefs, GE, value - TIE_TOL)


def optimize_cycle(inputs: MfcInputs) -> tuple[float, float, dict]:
    """Pick the cycle frequency z maximizing first-cycle throughput.

    Returns (z, objective, stats). Throughput ties go to the larger z,
    meaning the shortest cycle that achieves the optimum.
    """
    p, indices = build_cycle_milp(inputs)
    sol = solve_milp(p)
    stats = {"nodes": sol.nodes, "pivots": sol.pivots}
    if sol.status == INFEASIBLE:
        raise _diagnose(inputs, None)
    _objective_floor(p, indices, sol.objective)
    p.set_objective({indices["z"]: 1.0})
    sol2 = solve_milp(p)
    stats["tie_nodes"] = sol2.nodes
    stats["tie_pivots"] = sol2.pivots
    if sol2.status == INFEASIBLE:  # floor is within TIE_TOL of the optimum
        raise _diagnose(inputs, None)
    return float(sol2.x[indices["z"]]), float(sol.objective), stats


@dataclass(frozen=True)
class _SplitArrays:
    green: np.ndarray
    outflow: np.ndarray
    inflow: np.ndarray
    branch: np.ndarray
    saturated: np.ndarray
    queues: np.ndarray
    objective: float
    stats: dict


def _extract(inputs: MfcInputs, indices, sol: MilpSolution, stats) -> _SplitArrays:
    n = len(inputs.corridor.intersections)
    t_T = indices["q_out"].shape[1]
    sel = lambda arr: np.where(arr >= 0, sol.x[np.maximum(arr, 0)], 0.0)
    green = sel(indices["g"])
    outflow = sel(indices["q_out"])
    branch = sel(indices["q_b"])
    saturated = np.rint(sel(indices["x"])).astype(int)
    inflow = sel(indices["q_in"])
    inflow[0, :] = inputs.q1_in
    queues = np.zeros((n, t_T + 1))
    queues[:, 0] = inputs.initial_queues
    if indices["l"][0, 1] >= 0:
        queues[:, 1:] = sol.x[indices["l"][:, 1:]]
    return _SplitArrays(
        green=green,
        outflow=outflow,
        inflow=inflow,
        branch=branch,
        saturated=saturated,
        queues=queues,
        objective=float(np.sum(outflow)),
        stats=stats,
    )


def optimize_splits(inputs: MfcInputs, z: float) -> _SplitArrays:
    """Green splits over the horizon at fixed z, queues propagated per cycle.

    Among throughput-optimal solutions, prefers lexicographically larger
    greens in (intersection, cycle) order.
    """
    p, indices = build_split_milp(inputs, z)
    sol = solve_milp(p)
    stats = {"nodes": sol.nodes, "pivots": sol.pivots}
    if sol.status == INFEASIBLE:
        raise _diagnose(inputs, z)
    _objective_floor(p, indices, sol.objective)
    weights = {}
    rank = 0
    for i in range(indices["g"].shape[0]):
        for k in range(indices["g"].shape[1]):
            weights[int(indices["g"][i, k])] = 4.0 ** (-rank)
            rank += 1
    p.set_objective(weights)
    sol2 = solve_milp(p)
    stats["tie_nodes"] = sol2.nodes
    stats["tie_pivots"] = sol2.pivots
    if sol2.status == INFEASIBLE:
        raise _diagnose(inputs, z)
    return _extract(inputs, indices, sol2, stats)


def supply_demand_splits(
    g: float,
    q_out: float,
    q_b: float,
    l: float,
    z: float,
    q_s: float,
    lanes: int,
    f: float,
) -> tuple[float, float, float]:
    """Decompose a cycle into clearance, saturated and unsaturated fractions.

    t_c: time to discharge the standing queue plus branch admissions.
    t_s: time serving upstream arrivals at saturation.
    t_u: leftover green once arrivals no longer saturate the stop line.
    All three are cycle fractions; t_s + t_u = g holds whenever the
    underlying flows are consistent.
    """
    t_c = (q_b / lanes + l * z) / q_s
    if f >= 1.0:
        t_s = q_out / (q_s * lanes)
        t_u = (g * q_s - q_out / lanes) / q_s
    else:
        t_s = (q_out / lanes - g * f * q_s) / (q_s * (1.0 - f))
        t_u = (g * q_s - q_out / lanes) / (q_s * (1.0 - f))
    return t_c, t_s, t_u


def classify_scenario(t_c: float, t_s: float, t_u: float, f: float) -> str:
    """Name the progression scenario for one link and cycle.

    1.x: green outlasts saturated flow (t_u > 0); 2.x: it does not.
    x.1 vs x.2 splits on whether saturated arrivals outlast queue clearance.
    Scenario 1.1 additionally requires a genuine turn split (f < 1); with
    f = 1 the platoon stays whole, which is case 1.2.
    """
    if t_u > 0.0:
        if t_s >= t_c and f < 1.0:
            return "1.1"
        return "1.2"
    return "2.1" if t_s >= t_c else "2.2"


def scenario_offset(
    scenario: str,
    *,
    travel_time: float,
    z: float,
    g_i: float,
    g_prev: float,
    g_next: float,
    t_c: float,
    t_s: float,
    q_b: float,
    q_s: float,
    lanes: int,
    f: float,
) -> float:
    """Raw center-of-green offset of intersection i relative to i-1.

    g_next is the downstream green of the following cycle, used when the
    residual queue pushes the platoon head into it (scenario 2.2, which also
    wraps one full cycle back).
    """
    t_z = travel_time * z
    if scenario in ("1.1", "1.2"):
        return t_z - g_i / 2.0 + g_prev / 2.0
    if scenario == "2.1":
        return (
            (1.0 / f - 1.0) * t_s
            - t_c / f
            + g_i / 2.0
            - g_prev / 2.0
            + t_z
        )
    if scenario == "2.2":
        return (
            g_i / 2.0
            - g_prev / 2.0
            + g_next
            + t_z
            - t_c
            - q_b / (q_s * lanes)
            - 1.0
        )
    raise ValueError(f"unknown scenario {scenario!r}")


@dataclass(frozen=True)
class MfcSolution:
    """Full output of the coordination pipeline."""

    z: float
    cycle: float
    green: np.ndarray          # (n, t_T) green fractions
    outflow: np.ndarray        # (n, t_T) veh/s
    inflow: np.ndarray         # (n, t_T) veh/s, row 0 = entry inflow
    branch: np.ndarray         # (n, t_T) admitted branch rate
    saturated: np.ndarray      # (n, t_T) 1 when capacity binds the min
    queues: np.ndarray         # (n, t_T+1) per-lane queues, col 0 = initial
    t_c: np.ndarray
    t_s: np.ndarray
    t_u: np.ndarray
    scenario: np.ndarray       # (n, t_T) labels as strings
    offset_raw: np.ndarray     # (n, t_T) link-relative, row 0 = 0
    offset_clamped: np.ndarray
    offset_absolute: np.ndarray  # chained and normalized to [0, 1)
    cycle_objective: float
    split_objective: float
    cycle_stats: dict
    split_stats: dict


def solve_mfc(inputs: MfcInputs) -> MfcSolution:
    """Run the full pipeline: cycle length, splits, scenarios, offsets."""
    z, cyc_obj, cyc_stats = optimize_cycle(inputs)
    splits = optimize_splits(inputs, z)
    corridor = inputs.corridor
    specs = corridor.intersections
    n = len(specs)
    t_T = splits.green.shape[1]

    t_c = np.zeros((n, t_T))
    t_s = np.zeros((n, t_T))
    t_u = np.zeros((n, t_T))
    scenario = np.empty((n, t_T), dtype=object)
    for i, spec in enumerate(specs):
        for k in range(t_T):
            tc, ts, tu = supply_demand_splits(
                splits.green[i, k],
                splits.outflow[i, k],
                splits.branch[i, k],
                splits.queues[i, k],
                z,
                spec.sat_flow,
                spec.lanes,
                spec.turn_ratio,
            )
            t_c[i, k], t_s[i, k], t_u[i, k] = tc, ts, tu
            scenario[i, k] = classify_scenario(tc, ts, tu, spec.turn_ratio)

    offset_raw = np.zeros((n, t_T))
    offset_clamped = np.zeros((n, t_T))
    for i in range(1, n):
        spec = specs[i]
        for k in range(t_T):
            k_next = min(k + 1, t_T - 1)
            raw = scenario_offset(
                str(scenario[i, k]),
                travel_time=spec.free_flow_tt,
                z=z,
                g_i=splits.green[i, k],
                g_prev=splits.green[i - 1, k],
                g_next=splits.green[i, k_next],
                t_c=t_c[i, k],
                t_s=t_s[i, k],
                q_b=splits.branch[i, k],
                q_s=spec.sat_flow,
                lanes=spec.lanes,
                f=spec.turn_ratio,
            )
            offset_raw[i, k] = raw
            offset_clamped[i, k] = min(max(raw, spec.offset_min), spec.offset_max)

    return MfcSolution(
        z=z,
        cycle=1.0 / z,
        green=splits.green,
        outflow=splits.outflow,
        inflow=splits.inflow,
        branch=splits.branch,
        saturated=splits.saturated,
        queues=splits.queues,
        t_c=t_c,
        t_s=t_s,
        t_u=t_u,
        scenario=scenario,
        offset_raw=offset_raw,
        offset_clamped=offset_clamped,
        offset_absolute=absolute_offsets(offset_clamped),
        cycle_objective=cyc_obj,
        split_objective=splits.objective,
        cycle_stats=cyc_stats,
        split_stats=splits.stats,
    )


def mfc_plan(solution: MfcSolution, corridor: CorridorSpec, epoch: float = 0.0) -> SignalPlan:
    """Package a solution as an executable signal plan."""
    return SignalPlan(
        strategy="MFC",
        cycle=solution.cycle,
        epoch=epoch,
        idents=tuple(s.ident for s in corridor.intersections),
        splits=solution.green,
        offsets=solution.offset_absolute,
    )
