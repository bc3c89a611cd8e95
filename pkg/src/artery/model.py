"""Corridor data model: intersections, phases, demand profiles.

The corridor is a chain of signalized intersections along an arterial street.
Each intersection controls eight movements: through and left in both corridor
directions, and through and left in both cross-street directions. Phases are
conflict-free movement pairs; the default table is the standard eight-phase
split used throughout the package.

Units are SI throughout: lengths in meters, times in seconds, flow rates in
vehicles per second. Green splits and offsets are fractions of a cycle.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable

__all__ = [
    "Movement",
    "MOVEMENTS",
    "PhaseTable",
    "default_phase_table",
    "movements_conflict",
    "IntersectionSpec",
    "CorridorSpec",
    "DemandSegment",
    "DemandProfile",
    "validate",
]


class Movement(IntEnum):
    """Controlled movements at one intersection, in canonical vector order."""

    IN_T = 0        # corridor inbound through
    IN_L = 1        # corridor inbound left
    OUT_T = 2       # corridor outbound through
    OUT_L = 3       # corridor outbound left
    CROSS_IN_T = 4  # cross street, one direction, through
    CROSS_IN_L = 5
    CROSS_OUT_T = 6  # cross street, opposite direction, through
    CROSS_OUT_L = 7

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def on_corridor(self) -> bool:
        return self < Movement.CROSS_IN_T

    @property
    def is_through(self) -> bool:
        return self in (
            Movement.IN_T,
            Movement.OUT_T,
            Movement.CROSS_IN_T,
            Movement.CROSS_OUT_T,
        )

    @property
    def direction_index(self) -> int:
        """0 for the in-direction of its street, 1 for the out-direction."""
        return (self.value // 2) % 2


_LABELS = {
    Movement.IN_T: "in-T",
    Movement.IN_L: "in-L",
    Movement.OUT_T: "out-T",
    Movement.OUT_L: "out-L",
    Movement.CROSS_IN_T: "inX-T",
    Movement.CROSS_IN_L: "inX-L",
    Movement.CROSS_OUT_T: "outX-T",
    Movement.CROSS_OUT_L: "outX-L",
}

MOVEMENTS: tuple[Movement, ...] = tuple(Movement)

def movements_conflict(a: Movement, b: Movement) -> bool:
    """True when the two movements cannot share green.

    Movements on different streets always conflict. On the same street a
    protected left conflicts with the opposing through; everything else
    (paired throughs, paired lefts, a through with its same-direction left)
    is compatible.
    """
    if a == b:
        return False
    if a.on_corridor != b.on_corridor:
        return True
    if a.is_through == b.is_through:
        return False
    # Mixed kind on the same street: compatible only heading the same way.
    return a.direction_index != b.direction_index


@dataclass(frozen=True)
class PhaseTable:
    """Ordered list of phases; each phase is a set of compatible movements."""

    phases: tuple[frozenset[Movement], ...]

    def __len__(self) -> int:
        return len(self.phases)

    def serves(self, phase_index: int, movement: Movement) -> bool:
        return movement in self.phases[phase_index]

    def problems(self) -> list[str]:
        """Validation messages; empty when the table is well formed."""
        out = []
        if len(self.phases) != 8:
            out.append(f"phase table has {len(self.phases)} phases, expected 8")
        covered = set()
        for idx, phase in enumerate(self.phases):
            covered |= phase
            for a in phase:
                for b in phase:
                    if a < b and movements_conflict(a, b):
                        out.append(
                            f"phase {idx + 1} pairs conflicting movements "
                            f"{a.label} and {b.label}"
                        )
        missing = [m.label for m in MOVEMENTS if m not in covered]
        if missing:
            out.append("movements never served: " + ", ".join(missing))
        return out


def default_phase_table() -> PhaseTable:
    """The standard eight-phase table.

    Phases 1..4 serve the corridor street (paired throughs, split phases for
    each direction, paired lefts); phases 5..8 mirror them on the cross street.
    """
    M = Movement
    return PhaseTable(
        phases=(
            frozenset({M.IN_T, M.OUT_T}),
            frozenset({M.IN_T, M.IN_L}),
            frozenset({M.OUT_T, M.OUT_L}),
            frozenset({M.IN_L, M.OUT_L}),
            frozenset({M.CROSS_IN_T, M.CROSS_OUT_T}),
            frozenset({M.CROSS_IN_T, M.CROSS_IN_L}),
            frozenset({M.CROSS_OUT_T, M.CROSS_OUT_L}),
            frozenset({M.CROSS_IN_L, M.CROSS_OUT_L}),
        )
    )


@dataclass(frozen=True)
class IntersectionSpec:
    """Static description of one signalized intersection.

    link_length and free_flow_tt describe the inbound corridor edge feeding
    this intersection (from its upstream neighbor, or from the corridor entry
    for the first intersection). turn_ratio is the share of upstream through
    outflow that continues along the corridor into this intersection.
    """

    ident: str
    link_length: float          # meters, inbound edge into this intersection
    lanes: int                  # coordinated through lanes per direction
    free_flow_tt: float         # seconds to traverse the inbound edge
    turn_ratio: float           # fraction of upstream outflow entering here
    sat_flow: float             # veh/s per lane at saturation
    stop_headway: float         # meters of storage per queued vehicle
    green_min: float = 0.1     # cycle fraction
    green_max: float = 0.9
    branch_min: float = 0.0    # veh/s joining from the upstream branch
    branch_max: float = 0.0
    offset_min: float = -1.0   # cycle fraction, clamp range for offsets
    offset_max: float = 2.0

    def movement_lanes(self, movement: Movement) -> int:
        """Lane count serving a movement; coordinated throughs get all lanes."""
        if movement in (Movement.IN_T, Movement.OUT_T):
            return self.lanes
        return 1

    @property
    def approach_lanes(self) -> tuple[str, ...]:
        """Labels of the logical approach lane groups, one per movement."""
        return tuple(m.label for m in MOVEMENTS)

    @property
    def storage(self) -> float:
        """Per-lane queue storage of the inbound edge, in vehicles."""
        return self.link_length / self.stop_headway

    @property
    def free_flow_speed(self) -> float:
        return self.link_length / self.free_flow_tt


@dataclass(frozen=True)
class CorridorSpec:
    """A corridor: ordered intersections plus shared signal timing bounds."""

    intersections: tuple[IntersectionSpec, ...]
    cycle_min: float            # seconds
    cycle_max: float
    entry_inflow: float = 0.0  # veh/s arriving at the inbound corridor entry
    direction_names: tuple[str, str] = ("inbound", "outbound")

    def __post_init__(self):
        object.__setattr__(self, "intersections", tuple(self.intersections))

    def __len__(self) -> int:
        return len(self.intersections)

    @property
    def inbound_route_length(self) -> float:
        return sum(x.link_length for x in self.intersections)

    @property
    def outbound_route_length(self) -> float:
        # The outbound entry edge mirrors the last inbound edge.
        n = len(self.intersections)
        return sum(self.intersections[i].link_length for i in range(1, n)) + (
            self.intersections[-1].link_length if self.intersections else 0.0
        )


# Movements that may receive direct arrival demand (everything that does not
# enter through a corridor edge).
DIRECT_DEMAND_MOVEMENTS: tuple[Movement, ...] = (
    Movement.IN_L,
    Movement.OUT_L,
    Movement.CROSS_IN_T,
    Movement.CROSS_IN_L,
    Movement.CROSS_OUT_T,
    Movement.CROSS_OUT_L,
)


@dataclass(frozen=True)
class DemandSegment:
    """Piecewise-constant arrival rates over [start, end), all in veh/s."""

    start: float
    end: float
    level: str
    entry_in: float
    entry_out: float
    branch: tuple[float, ...]                 # per intersection
    direct: tuple[tuple[float, ...], ...]     # per intersection, per movement

    def problems(self, n_intersections: int) -> list[str]:
        out = []
        if not self.end > self.start:
            out.append(f"segment [{self.start}, {self.end}) is empty")
        if len(self.branch) != n_intersections:
            out.append("branch rate count does not match intersection count")
        if len(self.direct) != n_intersections:
            out.append("direct rate count does not match intersection count")
        for rates in self.direct:
            if len(rates) != len(MOVEMENTS):
                out.append("direct rates must list all eight movements")
                break
        for value in self._all_rates():
            if not value >= 0.0:
                out.append(f"negative or non-finite rate {value!r}")
                break
        for rates in self.direct:
            if len(rates) == len(MOVEMENTS):
                for m in (Movement.IN_T, Movement.OUT_T):
                    if rates[m] != 0.0:
                        out.append(
                            "corridor through movements receive arrivals from "
                            "their edges, not direct demand"
                        )
                        return out
        return out

    def _all_rates(self) -> Iterable[float]:
        yield self.entry_in
        yield self.entry_out
        yield from self.branch
        for rates in self.direct:
            yield from rates


@dataclass(frozen=True)
class DemandProfile:
    """Arrival schedule: contiguous demand segments plus the arrival seed."""

    segments: tuple[DemandSegment, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def horizon(self) -> float:
        return self.segments[-1].end if self.segments else 0.0

    def levels(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for seg in self.segments:
            seen.setdefault(seg.level, None)
        return tuple(seen)

    def segment_at(self, t: float) -> DemandSegment:
        """Active segment at time t; the last segment extends past the end."""
        if not self.segments:
            raise ValueError("empty demand profile")
        for seg in self.segments:
            if seg.start <= t < seg.end:
                return seg
        return self.segments[-1]

    def problems(self, n_intersections: int) -> list[str]:
        out = []
        if not self.segments:
            out.append("demand profile has no segments")
            return out
        prev_end = None
        for seg in self.segments:
            out.extend(seg.problems(n_intersections))
            if prev_end is not None and seg.start != prev_end:
                out.append(
                    f"segments are not contiguous at t={seg.start} "
                    f"(previous ended at {prev_end})"
                )
            prev_end = seg.end
        return out


def _check(out: list[str], where: str, ok: bool, message: str) -> None:
    if not ok:
        out.append(f"{where}: {message}")


def validate(
    corridor: CorridorSpec,
    demand: DemandProfile | None = None,
    phase_table: PhaseTable | None = None,
) -> list[str]:
    """Collect all specification problems; an empty list means valid.

    Total over arbitrary finite numeric input: comparisons are written so that
    NaN fields register as problems instead of slipping through.
    """
    out: list[str] = []
    _check(out, "corridor", len(corridor.intersections) >= 1,
           "needs at least one intersection")
    _check(out, "corridor", corridor.cycle_min > 0.0,
           f"cycle_min must be positive, got {corridor.cycle_min!r}")
    _check(out, "corridor", corridor.cycle_max >= corridor.cycle_min,
           f"cycle_max {corridor.cycle_max!r} below cycle_min {corridor.cycle_min!r}")
    _check(out, "corridor", corridor.entry_inflow >= 0.0,
           f"entry_inflow must be nonnegative, got {corridor.entry_inflow!r}")

    seen_idents = set()
    for idx, x in enumerate(corridor.intersections):
        where = f"intersection {x.ident or idx}"
        if x.ident in seen_idents:
            out.append(f"{where}: duplicate ident")
        seen_idents.add(x.ident)
        _check(out, where, x.link_length > 0.0, "link_length must be positive")
        _check(out, where, x.lanes >= 1, "lanes must be at least 1")
        _check(out, where, x.free_flow_tt > 0.0, "free_flow_tt must be positive")
        _check(out, where, 0.0 < x.turn_ratio <= 1.0,
               f"turn_ratio must lie in (0, 1], got {x.turn_ratio!r}")
        _check(out, where, x.sat_flow > 0.0, "sat_flow must be positive")
        _check(out, where, x.stop_headway > 0.0, "stop_headway must be positive")
        _check(out, where, 0.0 <= x.green_min <= x.green_max <= 1.0,
               "green bounds must satisfy 0 <= green_min <= green_max <= 1")
        _check(out, where, 0.0 <= x.branch_min <= x.branch_max,
               "branch bounds must satisfy 0 <= branch_min <= branch_max")
        _check(out, where, x.offset_min <= x.offset_max,
               "offset_min must not exceed offset_max")

    if phase_table is not None:
        out.extend(f"phase table: {p}" for p in phase_table.problems())
    if demand is not None:
        out.extend(
            f"demand: {p}" for p in demand.problems(len(corridor.intersections))
        )
    return out
