"""Small exact solver for linear programs with binary variables.

The solver is self-contained: a bounded-variable primal simplex (two phases,
Bland's rule, so it cannot cycle) under a depth-first branch and bound over
the binary variables. Problems in this package are small and well scaled, so
the dense tableau is kept explicitly and updated by row operations.

Determinism is part of the contract: identical problems produce identical
pivot sequences, identical branch orders (lowest-index fractional binary
first, 0-branch first) and therefore bit-identical solutions. Numeric
trouble surfaces as an explicit error rather than a silently wrong optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "MilpProblem",
    "LpSolution",
    "MilpSolution",
    "solve_lp",
    "solve_milp",
    "enumerate_oracle",
    "problem_to_text",
    "MilpError",
    "MilpInputError",
    "MilpNumericError",
    "MilpNodeLimitError",
    "OPTIMAL",
    "INFEASIBLE",
    "UNBOUNDED",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

LE, GE, EQ = "<=", ">=", "=="

FEAS_TOL = 1e-7     # final feasibility verification
INT_TOL = 1e-6      # integrality tolerance on binaries
GAP_TOL = 1e-6      # guaranteed absolute optimality gap of branch and bound
PIVOT_TOL = 1e-9    # reduced-cost / pivot-element threshold
PRUNE_TOL = 1e-9    # bound pruning slack, well inside GAP_TOL

DEFAULT_BIG_M = 1e4
DEFAULT_NODE_LIMIT = 1_000_000
ENUMERATION_LIMIT = 16  # max binaries the exhaustive oracle accepts


class MilpError(Exception):
    pass


class MilpInputError(MilpError, ValueError):
    pass


class MilpNumericError(MilpError, RuntimeError):
    pass


class MilpNodeLimitError(MilpError, RuntimeError):
    pass


@dataclass
class MilpProblem:
    """Maximize objective over box-bounded variables and linear constraints.

    Variables are added through add_var / add_binary which return the column
    index used everywhere else. Continuous variables need finite bounds;
    binaries live on {0, 1} (a binary may be pre-fixed by giving it equal
    bounds). big_m is the linearization constant available to model builders.
    """

    big_m: float = DEFAULT_BIG_M
    names: list[str] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    binary: list[bool] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    constraints: list[tuple[dict[int, float], str, float]] = field(
        default_factory=list
    )

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def binary_indices(self) -> list[int]:
        return [j for j, flag in enumerate(self.binary) if flag]

    def add_var(
        self, name: str, lower: float, upper: float, *, binary: bool = False
    ) -> int:
        self.names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.binary.append(binary)
        return len(self.names) - 1

    def add_binary(self, name: str) -> int:
        return self.add_var(name, 0.0, 1.0, binary=True)

    def set_objective(self, coeffs: Mapping[int, float]) -> None:
        self.objective = {int(j): float(v) for j, v in coeffs.items() if v != 0.0}

    def add_constraint(
        self, coeffs: Mapping[int, float], relation: str, rhs: float
    ) -> int:
        if relation not in (LE, GE, EQ):
            raise MilpInputError(f"unknown relation {relation!r}")
        row = {int(j): float(v) for j, v in coeffs.items() if v != 0.0}
        self.constraints.append((row, relation, float(rhs)))
        return len(self.constraints) - 1

    def check(self) -> None:
        """Raise MilpInputError on any malformed piece of the problem."""
        n = self.num_vars
        for j in range(n):
            lo, hi = self.lower[j], self.upper[j]
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise MilpInputError(
                    f"variable {self.names[j]!r} needs finite bounds"
                )
            if lo > hi:
                raise MilpInputError(
                    f"variable {self.names[j]!r} has empty bounds [{lo}, {hi}]"
                )
            if self.binary[j] and not (
                lo in (0.0, 1.0) and hi in (0.0, 1.0)
            ):
                raise MilpInputError(
                    f"binary {self.names[j]!r} must have bounds within {{0, 1}}"
                )
        for j, v in self.objective.items():
            if not 0 <= j < n:
                raise MilpInputError(f"objective references unknown column {j}")
            if not np.isfinite(v):
                raise MilpInputError("objective coefficients must be finite")
        for idx, (row, _rel, rhs) in enumerate(self.constraints):
            if not np.isfinite(rhs):
                raise MilpInputError(f"constraint {idx} has non-finite rhs")
            for j, v in row.items():
                if not 0 <= j < n:
                    raise MilpInputError(
                        f"constraint {idx} references unknown column {j}"
                    )
                if not np.isfinite(v):
                    raise MilpInputError(
                        f"constraint {idx} has non-finite coefficient"
                    )


@dataclass(frozen=True)
class LpSolution:
    status: str
    objective: float
    x: np.ndarray
    pivots: int


@dataclass(frozen=True)
class MilpSolution:
    status: str
    objective: float
    x: np.ndarray
    nodes: int
    pivots: int


class _StandardForm:
    """Equality standard form: maximize c@x, A@x = b, lb <= x <= ub.

    Columns 0..num_vars-1 are the problem variables; one slack column per
    inequality follows. Built once and reused across branch-and-bound nodes
    with per-node bound overrides on the binary columns.
    """

    def __init__(self, problem: MilpProblem):
        problem.check()
        self.problem = problem
        n = problem.num_vars
        m = len(problem.constraints)
        slacks = sum(1 for _r, rel, _b in problem.constraints if rel != EQ)
        total = n + slacks
        A = np.zeros((m, total))
        b = np.zeros(m)
        lb = np.empty(total)
        ub = np.empty(total)
        lb[:n] = problem.lower
        ub[:n] = problem.upper
        lb[n:] = 0.0
        ub[n:] = np.inf
        col = n
        for i, (row, rel, rhs) in enumerate(problem.constraints):
            for j, v in row.items():
                A[i, j] = v
            b[i] = rhs
            if rel == LE:
                A[i, col] = 1.0
                col += 1
            elif rel == GE:
                A[i, col] = -1.0
                col += 1
        self.A, self.b, self.lb, self.ub = A, b, lb, ub
        self.num_vars = n
        c = np.zeros(total)
        for j, v in problem.objective.items():
            c[j] = v
        self.c = c

    def solve(
        self, overrides: Mapping[int, tuple[float, float]] | None = None
    ) -> LpSolution:
        lb = self.lb
        ub = self.ub
        if overrides:
            lb = lb.copy()
            ub = ub.copy()
            for j, (lo, hi) in overrides.items():
                lb[j], ub[j] = lo, hi
        status, x, pivots = _bounded_simplex(self.A, self.b, self.c, lb, ub)
        if status == OPTIMAL:
            xs = x[: self.num_vars].copy()
            obj = float(self.c[: self.num_vars] @ xs)
        else:
            xs = np.full(self.num_vars, np.nan)
            obj = np.nan
        return LpSolution(status=status, objective=obj, x=xs, pivots=pivots)


def _bounded_simplex(A, b, c, lb, ub):
    """Core routine: maximize c@x s.t. A@x = b, lb <= x <= ub.

    Returns (status, x_extended, pivots). Bland's rule throughout; artificial
    columns carry phase 1 and are then frozen at zero.
    """
    m, n = A.shape
    if m == 0:
        # Box-only problem: each variable sits at whichever bound the
        # objective prefers.
        x = np.where(c > 0.0, ub, lb)
        if not np.all(np.isfinite(x)):
            return UNBOUNDED, x, 0
        return OPTIMAL, x, 0

    x = np.concatenate([lb[: n], np.zeros(m)])
    resid = b - A @ x[:n]
    sign = np.where(resid >= 0.0, 1.0, -1.0)
    x[n:] = np.abs(resid)

    # Tableau holds B^-1 [A | artificials | b]; the artificial block starts
    # as the identity because the initial basis is the artificial columns.
    total = n + m
    T = np.empty((m, total + 1))
    T[:, :n] = A * sign[:, None]
    T[:, n:total] = np.eye(m)
    T[:, total] = b * sign

    lb_full = np.concatenate([lb, np.zeros(m)])
    ub_full = np.concatenate([ub, np.full(m, np.inf)])
    basis = np.arange(n, total)
    at_upper = np.zeros(total, dtype=bool)
    in_basis = np.zeros(total, dtype=bool)
    in_basis[basis] = True

    max_iter = 2000 + 200 * (m + total)
    pivots = 0

    def run(cobj, phase_one: bool):
        nonlocal pivots
        while True:
            if pivots > max_iter:
                raise MilpNumericError("simplex iteration limit exceeded")
            cb = cobj[basis]
            sel = _select_entering(T, cobj, cb, in_basis, at_upper,
                                   lb_full, ub_full, total)
            if sel is None:
                return OPTIMAL
            j, sigma = sel
            colj = T[:, j]
            xb = x[basis]
            coef = sigma * colj
            with np.errstate(divide="ignore", invalid="ignore"):
                t_lo = np.where(
                    coef > PIVOT_TOL, (xb - lb_full[basis]) / coef, np.inf
                )
                t_hi = np.where(
                    coef < -PIVOT_TOL, (ub_full[basis] - xb) / (-coef), np.inf
                )
            t_rows = np.maximum(np.minimum(t_lo, t_hi), 0.0)
            t_basic = t_rows.min() if m else np.inf
            t_self = ub_full[j] - lb_full[j]
            if not np.isfinite(min(t_basic, t_self)):
                if phase_one:
                    raise MilpNumericError("phase-1 objective unbounded")
                return UNBOUNDED
            if t_self <= t_basic:
                # Bound flip, basis unchanged.
                x[j] = ub_full[j] if sigma > 0 else lb_full[j]
                x[basis] = xb - coef * t_self
                at_upper[j] = not at_upper[j]
                continue
            rows = np.flatnonzero(t_rows <= t_basic)
            leave = rows[np.argmin(basis[rows])]
            lv = basis[leave]
            x[j] = x[j] + sigma * t_basic
            x[basis] = xb - coef * t_basic
            hit_lower = coef[leave] > 0.0
            x[lv] = lb_full[lv] if hit_lower else ub_full[lv]
            at_upper[lv] = not hit_lower
            piv = T[leave, j]
            if abs(piv) < PIVOT_TOL:
                raise MilpNumericError("vanishing pivot element")
            pivrow = T[leave] / piv
            colv = T[:, j].copy()
            T[...] -= np.outer(colv, pivrow)
            T[leave] = pivrow
            in_basis[lv] = False
            in_basis[j] = True
            at_upper[j] = False
            basis[leave] = j
            pivots += 1
            if pivots % 64 == 0:
                _refresh_basics(T, x, basis, in_basis, total)

    c1 = np.zeros(total)
    c1[n:] = -1.0
    run(c1, phase_one=True)
    _refresh_basics(T, x, basis, in_basis, total)
    # Feasibility is judged on the actual row residuals, scaled by each
    # row's activity. Scaling by total rhs mass would let big-M constants in
    # unrelated rows mask small but genuine infeasibilities.
    if np.any(np.abs(b - A @ x[:n]) > FEAS_TOL * _row_scale(A, b, x[:n])):
        return INFEASIBLE, x, pivots
    # Freeze artificials at zero for phase 2.
    lb_full[n:] = 0.0
    ub_full[n:] = 0.0
    x[n:] = 0.0

    c2 = np.concatenate([c, np.zeros(m)])
    status = run(c2, phase_one=False)
    if status == UNBOUNDED:
        return UNBOUNDED, x, pivots
    _refresh_basics(T, x, basis, in_basis, total)

    resid = np.abs(A @ x[:n] - b)
    worst = (resid - FEAS_TOL * _row_scale(A, b, x[:n])).max(initial=0.0)
    if worst > 0.0:
        raise MilpNumericError(
            f"optimal basis fails feasibility verification (excess {worst:.3e})"
        )
    per_var = 1.0 + np.abs(x[:n])
    low_viol = (lb - x[:n] - FEAS_TOL * per_var).max(initial=0.0)
    high_viol = (x[:n] - ub - FEAS_TOL * per_var).max(initial=0.0)
    if low_viol > 0.0 or high_viol > 0.0:
        raise MilpNumericError(
            "optimal point violates variable bounds "
            f"(excess {max(low_viol, high_viol):.3e})"
        )
    # Snap to bounds within tolerance so downstream code sees clean values.
    np.clip(x[:n], lb, ub, out=x[:n])
    return OPTIMAL, x, pivots


def _row_scale(A, b, xs):
    """Per-row tolerance scale: one plus the row's absolute activity."""
    return 1.0 + np.abs(A) @ np.abs(xs) + np.abs(b)


def _select_entering(T, cobj, cb, in_basis, at_upper, lb_full, ub_full, total):
    """Lowest-index improving nonbasic column (Bland), scanned blockwise."""
    step = 64
    for start in range(0, total, step):
        stop = min(start + step, total)
        d = cobj[start:stop] - cb @ T[:, start:stop]
        movable = ~in_basis[start:stop] & (
            ub_full[start:stop] > lb_full[start:stop]
        )
        up = at_upper[start:stop]
        good = movable & (
            (~up & (d > PIVOT_TOL)) | (up & (d < -PIVOT_TOL))
        )
        idx = np.flatnonzero(good)
        if idx.size:
            j = start + int(idx[0])
            return j, (-1.0 if at_upper[j] else 1.0)
    return None


def _refresh_basics(T, x, basis, in_basis, total):
    """Recompute basic values from the tableau to cancel pivot drift."""
    nb = np.flatnonzero(~in_basis)
    x[basis] = T[:, total] - T[:, nb] @ x[nb]


def solve_lp(
    problem: MilpProblem,
    overrides: Mapping[int, tuple[float, float]] | None = None,
) -> LpSolution:
    """Solve the LP relaxation (binaries relaxed to their [0, 1] boxes)."""
    return _StandardForm(problem).solve(overrides)


def solve_milp(
    problem: MilpProblem, node_limit: int = DEFAULT_NODE_LIMIT
) -> MilpSolution:
    """Branch and bound over the binary variables.

    Depth-first: branch on the lowest-index fractional binary, explore the
    0-branch first; a node is pruned when its relaxation bound cannot beat
    the incumbent by more than the pruning slack, so the returned optimum is
    globally optimal within GAP_TOL. Ties keep the first incumbent found.
    """
    form = _StandardForm(problem)
    binaries = problem.binary_indices
    nodes = 0
    pivots = 0
    best_x = None
    best_obj = -np.inf
    saw_unbounded = False
    stack: list[dict[int, tuple[float, float]]] = [{}]
    while stack:
        overrides = stack.pop()
        nodes += 1
        if nodes > node_limit:
            raise MilpNodeLimitError(
                f"branch and bound exceeded {node_limit} nodes"
            )
        lp = form.solve(overrides)
        pivots += lp.pivots
        if lp.status == INFEASIBLE:
            continue
        if lp.status == UNBOUNDED:
            saw_unbounded = True
            break
        if best_x is not None and lp.objective <= best_obj + PRUNE_TOL:
            continue
        frac = None
        for j in binaries:
            v = lp.x[j]
            if min(v, 1.0 - v) > INT_TOL:
                frac = j
                break
        if frac is None:
            x = lp.x.copy()
            for j in binaries:
                x[j] = round(x[j])
            if lp.objective > best_obj + 1e-12 or best_x is None:
                best_obj = lp.objective
                best_x = x
            continue
        # Push 1-branch first so the 0-branch pops first.
        one = dict(overrides)
        one[frac] = (1.0, 1.0)
        zero = dict(overrides)
        zero[frac] = (0.0, 0.0)
        stack.append(one)
        stack.append(zero)
    if saw_unbounded:
        return MilpSolution(UNBOUNDED, np.nan,
                            np.full(problem.num_vars, np.nan), nodes, pivots)
    if best_x is None:
        return MilpSolution(INFEASIBLE, np.nan,
                            np.full(problem.num_vars, np.nan), nodes, pivots)
    return MilpSolution(OPTIMAL, best_obj, best_x, nodes, pivots)


def enumerate_oracle(problem: MilpProblem) -> MilpSolution:
    """Exact optimum by exhausting every binary assignment.

    Independent check for solve_milp: no branching, no pruning, just one LP
    per assignment in lexicographic order. Refuses more than
    ENUMERATION_LIMIT binaries.
    """
    binaries = problem.binary_indices
    if len(binaries) > ENUMERATION_LIMIT:
        raise MilpInputError(
            f"enumeration oracle accepts at most {ENUMERATION_LIMIT} binaries, "
            f"got {len(binaries)}"
        )
    form = _StandardForm(problem)
    best_x = None
    best_obj = -np.inf
    nodes = 0
    pivots = 0
    for bits in product((0.0, 1.0), repeat=len(binaries)):
        overrides = {j: (v, v) for j, v in zip(binaries, bits)}
        nodes += 1
        lp = form.solve(overrides)
        pivots += lp.pivots
        if lp.status == UNBOUNDED:
            return MilpSolution(UNBOUNDED, np.nan,
                                np.full(problem.num_vars, np.nan),
                                nodes, pivots)
        if lp.status != OPTIMAL:
            continue
        if best_x is None or lp.objective > best_obj + 1e-12:
            best_obj = lp.objective
            best_x = lp.x.copy()
            for j, v in zip(binaries, bits):
                best_x[j] = v
    if best_x is None:
        return MilpSolution(INFEASIBLE, np.nan,
                            np.full(problem.num_vars, np.nan), nodes, pivots)
    return MilpSolution(OPTIMAL, best_obj, best_x, nodes, pivots)


def problem_to_text(problem: MilpProblem) -> str:
    """Human-readable dump of the model, LP-file flavored."""

    def term(j: int, v: float, lead: bool) -> str:
        name = problem.names[j]
        mag = abs(v)
        coeff = "" if mag == 1.0 else f"{mag:g} "
        if lead:
            sign = "-" if v < 0 else ""
        else:
            sign = "- " if v < 0 else "+ "
        return f"{sign}{coeff}{name}"

    def linexpr(coeffs: Mapping[int, float]) -> str:
        items = sorted(coeffs.items())
        if not items:
            return "0"
        return " ".join(
            term(j, v, lead=(k == 0)) for k, (j, v) in enumerate(items)
        )

    lines = ["Maximize", f"  obj: {linexpr(problem.objective)}", "Subject To"]
    for i, (row, rel, rhs) in enumerate(problem.constraints):
        lines.append(f"  c{i}: {linexpr(row)} {rel} {rhs:g}")
    lines.append("Bounds")
    for j, name in enumerate(problem.names):
        lines.append(f"  {problem.lower[j]:g} <= {name} <= {problem.upper[j]:g}")
    binaries = [problem.names[j] for j in problem.binary_indices]
    if binaries:
        lines.append("Binaries")
        lines.append("  " + " ".join(binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"
