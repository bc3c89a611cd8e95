"""Green-wave coordination: maximum two-way progression bands via MILP.

Both directions share each intersection's coordinated window (same green
center), so a single integer wrap count per link couples the inbound and
outbound progression lines once the absolute offsets are eliminated. The
decision variables are the cycle frequency z, the band center position
within each green window (w, measured from green start), the per-link band
widths, and the integer wrap counts; the objective is total two-way
bandwidth in cycle fractions.

Green splits are inputs here: either taken as given per intersection and
direction, or (free mode) optimized inside their bounds, which simply
saturates them since wider greens never hurt a band.

When the windows are too narrow to thread any progression line through,
the problem is infeasible; solve_gwc then returns the flagged fallback
plan: zero bands, centered windows, zero offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .milp import EQ, GE, INFEASIBLE, LE, MilpProblem, solve_milp
from .model import CorridorSpec, DemandSegment, Movement
from .plan import SignalPlan, absolute_offsets

__all__ = [
    "GwcInputs",
    "GwcSolution",
    "build_gwc_milp",
    "solve_gwc",
    "gwc_plan",
    "webster_splits",
    "bandwidth_for_offsets",
    "bandwidth_grid_search",
]

# Band centers may sit exactly on a green edge.
EDGE_TOL = 1e-12


@dataclass(frozen=True)
class GwcInputs:
    """Corridor plus the green windows the bands must thread through."""

    corridor: CorridorSpec
    green_in: tuple[float, ...]     # coordinated green fraction, inbound
    green_out: tuple[float, ...]
    free_splits: bool = False       # optimize greens inside their bounds

    def __post_init__(self):
        object.__setattr__(self, "green_in", tuple(float(v) for v in self.green_in))
        object.__setattr__(self, "green_out", tuple(float(v) for v in self.green_out))

    def problems(self) -> list[str]:
        out = []
        n = len(self.corridor.intersections)
        for name, greens in (("green_in", self.green_in), ("green_out", self.green_out)):
            if len(greens) != n:
                out.append(f"{name} has {len(greens)} entries for {n} intersections")
                continue
            for i, g in enumerate(greens):
                if not 0.0 < g <= 1.0:
                    out.append(f"{name}[{i}] must lie in (0, 1], got {g!r}")
        return out


@dataclass(frozen=True)
class GwcSolution:
    z: float
    cycle: float
    green_in: np.ndarray        # (n,)
    green_out: np.ndarray
    band_in: np.ndarray         # (n-1,) link band widths, cycle fractions
    band_out: np.ndarray
    w_in: np.ndarray            # (n,) band center from green start
    w_out: np.ndarray
    wrap: np.ndarray            # (n-1,) integer wrap counts per link
    offset_rel: np.ndarray      # (n,) link-relative green-center offsets mod 1
    offset_abs: np.ndarray      # (n,) chained, [0] = 0
    objective: float
    fallback: bool
    stats: dict


def _link_travel(corridor: CorridorSpec) -> np.ndarray:
    """Travel time of each link, seconds; link j runs between j-1 and j.

    Outbound travel mirrors inbound on every link.
    """
    return np.array(
        [spec.free_flow_tt for spec in corridor.intersections[1:]], dtype=float
    )


def _wrap_bounds(travel_sum: float, z_min: float, z_max: float) -> tuple[int, int]:
    # m = (w and green terms in (-3, 3)) - (t + tbar) * z
    lo = math.floor(-3.0 - travel_sum * z_max)
    hi = math.ceil(3.0 - travel_sum * z_min)
    return lo, hi


def build_gwc_milp(inputs: GwcInputs):
    issues = inputs.problems()
    if issues:
        raise ValueError("; ".join(issues))
    corridor = inputs.corridor
    specs = corridor.intersections
    n = len(specs)
    travel = _link_travel(corridor)
    z_min = 1.0 / corridor.cycle_max
    z_max = 1.0 / corridor.cycle_min

    p = MilpProblem()
    z_j = p.add_var("z", z_min, z_max)

    g_in_var = np.full(n, -1, dtype=int)
    g_out_var = np.full(n, -1, dtype=int)
    if inputs.free_splits:
        for i, spec in enumerate(specs):
            g_in_var[i] = p.add_var(f"gin_{i}", spec.green_min, spec.green_max)
            g_out_var[i] = p.add_var(f"gout_{i}", spec.green_min, spec.green_max)

    w_in = np.empty(n, dtype=int)
    w_out = np.empty(n, dtype=int)
    for i in range(n):
        if inputs.free_splits:
            w_in[i] = p.add_var(f"w_{i}", 0.0, 1.0)
            w_out[i] = p.add_var(f"wb_{i}", 0.0, 1.0)
            p.add_constraint({w_in[i]: 1.0, g_in_var[i]: -1.0}, LE, 0.0)
            p.add_constraint({w_out[i]: 1.0, g_out_var[i]: -1.0}, LE, 0.0)
        else:
            w_in[i] = p.add_var(f"w_{i}", 0.0, inputs.green_in[i])
            w_out[i] = p.add_var(f"wb_{i}", 0.0, inputs.green_out[i])

    b_in = np.empty(max(n - 1, 0), dtype=int)
    b_out = np.empty(max(n - 1, 0), dtype=int)
    bits: list[list[int]] = []
    wrap_lo: list[int] = []
    for j in range(1, n):
        b_in[j - 1] = p.add_var(f"b_{j}", 0.0, 1.0)
        b_out[j - 1] = p.add_var(f"bb_{j}", 0.0, 1.0)
        lo, hi = _wrap_bounds(2.0 * travel[j - 1], z_min, z_max)
        width = hi - lo
        n_bits = max(1, math.ceil(math.log2(width + 1)))
        cols = [p.add_binary(f"m_{j}_{k}") for k in range(n_bits)]
        bits.append(cols)
        wrap_lo.append(lo)
        if (1 << n_bits) - 1 > width:
            p.add_constraint(
                {c: float(1 << k) for k, c in enumerate(cols)}, LE, float(width)
            )

    def fit(band_j: int, w_i: int, green_idx: int, g_var: int, g_fixed: float):
        # w - b/2 >= 0 and w + b/2 <= g
        p.add_constraint({w_i: 1.0, band_j: -0.5}, GE, 0.0)
        if g_var >= 0:
            p.add_constraint({w_i: 1.0, band_j: 0.5, g_var: -1.0}, LE, 0.0)
        else:
            p.add_constraint({w_i: 1.0, band_j: 0.5}, LE, g_fixed)

    for j in range(1, n):
        for i in (j - 1, j):
            fit(b_in[j - 1], w_in[i], i, g_in_var[i], inputs.green_in[i])
            fit(b_out[j - 1], w_out[i], i, g_out_var[i], inputs.green_out[i])

        # Loop closure: the two progression lines and the shared offsets are
        # consistent up to one integer wrap per link.
        # (w_j - w_{j-1}) + (wb_{j-1} - wb_j) - (t + tbar)z - m
        #     = (g_j - g_{j-1} + gb_{j-1} - gb_j) / 2
        coefs = {
            w_in[j]: 1.0,
            w_in[j - 1]: -1.0,
            w_out[j - 1]: 1.0,
            w_out[j]: -1.0,
            z_j: -2.0 * travel[j - 1],
        }
        for k, c in enumerate(bits[j - 1]):
            coefs[c] = -float(1 << k)
        rhs = float(wrap_lo[j - 1])
        if inputs.free_splits:
            coefs[g_in_var[j]] = coefs.get(g_in_var[j], 0.0) - 0.5
            coefs[g_in_var[j - 1]] = coefs.get(g_in_var[j - 1], 0.0) + 0.5
            coefs[g_out_var[j - 1]] = coefs.get(g_out_var[j - 1], 0.0) - 0.5
            coefs[g_out_var[j]] = coefs.get(g_out_var[j], 0.0) + 0.5
        else:
            rhs += (
                inputs.green_in[j]
                - inputs.green_in[j - 1]
                + inputs.green_out[j - 1]
                - inputs.green_out[j]
            ) / 2.0
        p.add_constraint(coefs, EQ, rhs)

    p.set_objective(
        {int(v): 1.0 for v in np.concatenate([b_in, b_out])} if n > 1 else {}
    )
    indices = {
        "z": z_j,
        "w_in": w_in,
        "w_out": w_out,
        "b_in": b_in,
        "b_out": b_out,
        "bits": bits,
        "wrap_lo": wrap_lo,
        "g_in": g_in_var,
        "g_out": g_out_var,
    }
    return p, indices


def _relative_offsets(
    w_in: np.ndarray, green_in: np.ndarray, travel: np.ndarray, z: float
) -> np.ndarray:
    n = len(green_in)
    rel = np.zeros(n)
    for j in range(1, n):
        rel[j] = (
            (green_in[j] - green_in[j - 1]) / 2.0
            + w_in[j - 1]
            - w_in[j]
            + travel[j - 1] * z
        ) % 1.0
    return rel


def solve_gwc(inputs: GwcInputs) -> GwcSolution:
    """Maximize total two-way bandwidth; fall back to zero bands if needed."""
    corridor = inputs.corridor
    n = len(corridor.intersections)
    travel = _link_travel(corridor)

    if n == 1:
        g_in = np.array(inputs.green_in, dtype=float)
        g_out = np.array(inputs.green_out, dtype=float)
        if inputs.free_splits:
            g_in = np.array([corridor.intersections[0].green_max])
            g_out = g_in.copy()
        z = 1.0 / corridor.cycle_min
        return GwcSolution(
            z=z,
            cycle=corridor.cycle_min,
            green_in=g_in,
            green_out=g_out,
            band_in=np.zeros(0),
            band_out=np.zeros(0),
            w_in=g_in / 2.0,
            w_out=g_out / 2.0,
            wrap=np.zeros(0, dtype=int),
            offset_rel=np.zeros(1),
            offset_abs=np.zeros(1),
            objective=0.0,
            fallback=False,
            stats={"nodes": 0, "pivots": 0},
        )

    p, idx = build_gwc_milp(inputs)
    sol = solve_milp(p)
    stats = {"nodes": sol.nodes, "pivots": sol.pivots}

    if sol.status == INFEASIBLE:
        g_in = np.array(inputs.green_in, dtype=float)
        g_out = np.array(inputs.green_out, dtype=float)
        z = 1.0 / corridor.cycle_min
        return GwcSolution(
            z=z,
            cycle=corridor.cycle_min,
            green_in=g_in,
            green_out=g_out,
            band_in=np.zeros(n - 1),
            band_out=np.zeros(n - 1),
            w_in=g_in / 2.0,
            w_out=g_out / 2.0,
            wrap=np.zeros(n - 1, dtype=int),
            offset_rel=np.zeros(n),
            offset_abs=np.zeros(n),
            objective=0.0,
            fallback=True,
            stats=stats,
        )

    z = float(sol.x[idx["z"]])
    if inputs.free_splits:
        g_in = sol.x[idx["g_in"]].copy()
        g_out = sol.x[idx["g_out"]].copy()
    else:
        g_in = np.array(inputs.green_in, dtype=float)
        g_out = np.array(inputs.green_out, dtype=float)
    w_in = sol.x[idx["w_in"]].copy()
    w_out = sol.x[idx["w_out"]].copy()
    wrap = np.array(
        [
            idx["wrap_lo"][j]
            + int(round(sum(sol.x[c] * (1 << k) for k, c in enumerate(cols))))
            for j, cols in enumerate(idx["bits"])
        ],
        dtype=int,
    )
    rel = _relative_offsets(w_in, g_in, travel, z)
    return GwcSolution(
        z=z,
        cycle=1.0 / z,
        green_in=g_in,
        green_out=g_out,
        band_in=sol.x[idx["b_in"]].copy(),
        band_out=sol.x[idx["b_out"]].copy(),
        w_in=w_in,
        w_out=w_out,
        wrap=wrap,
        offset_rel=rel,
        offset_abs=absolute_offsets(rel),
        objective=float(sol.objective),
        fallback=False,
        stats=stats,
    )


def webster_splits(
    corridor: CorridorSpec, segment: DemandSegment
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Fixed-time corridor splits from critical flow ratios.

    Each intersection's coordinated green is y_c / (y_c + y_x), the corridor
    critical ratio against the cross street's, clipped into the green
    bounds. Both corridor directions share the window.
    """
    g = []
    for i, spec in enumerate(corridor.intersections):
        through_cap = spec.sat_flow * spec.lanes
        r_in = segment.entry_in + segment.branch[i]
        r_out = segment.entry_out
        y_c = max(r_in / through_cap, r_out / through_cap)
        rates = segment.direct[i]
        y_x = max(
            rates[Movement.CROSS_IN_T] / spec.sat_flow,
            rates[Movement.CROSS_OUT_T] / spec.sat_flow,
        )
        share = 0.5 if y_c + y_x <= 0.0 else y_c / (y_c + y_x)
        g.append(min(spec.green_max, max(spec.green_min, share)))
    return tuple(g), tuple(g)


def gwc_plan(sol: GwcSolution, corridor: CorridorSpec, epoch: float = 0.0) -> SignalPlan:
    """Package the solution with its band windows for the coordination masks."""
    n = len(corridor.intersections)
    widths_in = np.zeros(n)
    widths_out = np.zeros(n)
    for i in range(n):
        adjacent = []
        if i > 0:
            adjacent.append(i - 1)   # arriving link
        if i < n - 1:
            adjacent.append(i)       # departing link
        if adjacent:
            widths_in[i] = max(sol.band_in[j] for j in adjacent)
            widths_out[i] = max(sol.band_out[j] for j in adjacent)
    center_in = (sol.offset_abs + sol.w_in - sol.green_in / 2.0) % 1.0
    center_out = (sol.offset_abs + sol.w_out - sol.green_out / 2.0) % 1.0
    return SignalPlan(
        strategy="GWC",
        cycle=sol.cycle,
        epoch=epoch,
        idents=tuple(s.ident for s in corridor.intersections),
        splits=np.maximum(sol.green_in, sol.green_out)[:, None],
        offsets=sol.offset_abs[:, None],
        band_in=np.column_stack([center_in, widths_in]),
        band_out=np.column_stack([center_out, widths_out]),
        fallback=sol.fallback,
    )


def _direction_values(centers: np.ndarray, halves: np.ndarray) -> np.ndarray:
    """Best bandwidth for one direction per offset configuration.

    centers: (n, G) progression-line reference per intersection (offset minus
    cumulative travel, mod 1). halves: (n,) or (n, G) half green widths.
    Returns (G,) values; -inf where no admissible line exists. The value
    function of the line anchor is piecewise linear, so evaluating every
    kink candidate (green centers, green edges, antipodes, pairwise
    crossings) gives the exact inner maximum.
    """
    c = np.atleast_2d(centers)
    n, G = c.shape
    h = halves if halves.ndim == 2 else np.broadcast_to(halves[:, None], (n, G))

    groups = [
        c,
        c + h,
        c - h,
        c + 0.5,
    ]
    for j in range(1, n):
        delta = (c[j] - c[j - 1] + 0.5) % 1.0 - 0.5
        gamma = h[j - 1] - h[j]
        base = c[j - 1]
        for sd in (1.0, -1.0):
            for sg in (1.0, -1.0):
                mid = base + (sd * delta + sg * gamma) / 2.0
                groups.append(mid[None, :])
                groups.append(mid[None, :] + 0.5)
    cand = np.concatenate(groups, axis=0) % 1.0          # (K, G)

    dist = np.abs(((cand[:, None, :] - c[None, :, :] + 0.5) % 1.0) - 0.5)
    rho = h[None, :, :] - dist                           # (K, n, G)
    ok = (rho >= -EDGE_TOL).all(axis=1)
    if n > 1:
        link = np.minimum(rho[:, :-1, :], rho[:, 1:, :])
        value = 2.0 * np.clip(link, 0.0, None).sum(axis=1)
    else:
        value = np.zeros((cand.shape[0], G))
    value[~ok] = -np.inf
    return value.max(axis=0)


def _config_values(
    offsets: np.ndarray,
    green_in: np.ndarray,
    green_out: np.ndarray,
    travel: np.ndarray,
    z: float,
) -> np.ndarray:
    """Total two-way bandwidth for each offset configuration (n, G)."""
    n = offsets.shape[0]
    t_in = np.concatenate([[0.0], np.cumsum(travel) * z])
    t_out = np.concatenate([np.cumsum(travel[::-1])[::-1] * z, [0.0]])
    c_in = (offsets - t_in[:, None]) % 1.0
    c_out = (offsets - t_out[:, None]) % 1.0
    v_in = _direction_values(c_in, green_in / 2.0)
    v_out = _direction_values(c_out, green_out / 2.0)
    return v_in + v_out


def bandwidth_for_offsets(
    corridor: CorridorSpec,
    green_in,
    green_out,
    offsets_abs,
    z: float,
) -> float | None:
    """Exact achievable two-way bandwidth at fixed offsets; None if no
    progression line fits inside every green window."""
    offsets = np.asarray(offsets_abs, dtype=float)[:, None]
    value = _config_values(
        offsets,
        np.asarray(green_in, dtype=float),
        np.asarray(green_out, dtype=float),
        _link_travel(corridor),
        z,
    )[0]
    return None if not np.isfinite(value) else float(value)


def bandwidth_grid_search(
    corridor: CorridorSpec,
    green_in,
    green_out,
    z: float,
    step: float = 0.001,
    refine: bool = True,
    chunk: int = 1 << 15,
) -> tuple[float, np.ndarray]:
    """Brute-force offset search: full grid plus local refinement.

    Supports up to three intersections (the grid is exponential in n).
    Returns (best value, best absolute offsets); value 0 with zero offsets
    when no configuration admits a progression line, mirroring the solver
    fallback.
    """
    g_in = np.asarray(green_in, dtype=float)
    g_out = np.asarray(green_out, dtype=float)
    n = len(g_in)
    travel = _link_travel(corridor)
    if n == 1:
        return 0.0, np.zeros(1)
    if n > 3:
        raise ValueError("grid search supports at most 3 intersections")

    ticks = np.arange(0.0, 1.0, step)
    if n == 2:
        grids = ticks[None, :]
    else:
        a, b = np.meshgrid(ticks, ticks, indexing="ij")
        grids = np.stack([a.ravel(), b.ravel()])
    G = grids.shape[1]

    best_val = -np.inf
    best_off = np.zeros(n)
    for start in range(0, G, chunk):
        part = grids[:, start : start + chunk]
        offsets = np.vstack([np.zeros(part.shape[1]), part])
        vals = _config_values(offsets, g_in, g_out, travel, z)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = float(vals[k])
            best_off = offsets[:, k].copy()

    if not np.isfinite(best_val):
        return 0.0, np.zeros(n)

    if refine:
        fine = np.arange(-step, step, step / 50.0)
        for _ in range(2):
            for coord in range(1, n):
                trial = np.repeat(best_off[:, None], len(fine), axis=1)
                trial[coord] = (trial[coord] + fine) % 1.0
                vals = _config_values(trial, g_in, g_out, travel, z)
                k = int(np.argmax(vals))
                if vals[k] > best_val:
                    best_val = float(vals[k])
                    best_off = trial[:, k].copy()
    return best_val, best_off
