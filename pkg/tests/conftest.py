"""Shared builders for corridor fixtures used across the test suite."""

from artery.model import (
    MOVEMENTS,
    CorridorSpec,
    DemandProfile,
    DemandSegment,
    IntersectionSpec,
)


def make_intersection(ident: str = "i1", **overrides) -> IntersectionSpec:
    base = dict(
        ident=ident,
        link_length=500.0,
        lanes=2,
        free_flow_tt=36.0,
        turn_ratio=0.8,
        sat_flow=0.5,
        stop_headway=7.0,
        green_min=0.1,
        green_max=0.9,
        branch_min=0.0,
        branch_max=0.0,
        offset_min=-1.0,
        offset_max=2.0,
    )
    base.update(overrides)
    return IntersectionSpec(**base)


def make_corridor(
    n: int = 2,
    cycle_min: float = 60.0,
    cycle_max: float = 120.0,
    entry_inflow: float = 0.2,
    per: dict | None = None,
    **overrides,
) -> CorridorSpec:
    """Corridor of n otherwise identical intersections.

    per maps intersection index to keyword overrides for that one spec.
    """
    per = per or {}
    common = {
        k: v
        for k, v in overrides.items()
        if k not in ("direction_names",)
    }
    xs = tuple(
        make_intersection(ident=f"i{i + 1}", **{**common, **per.get(i, {})})
        for i in range(n)
    )
    kw = {}
    if "direction_names" in overrides:
        kw["direction_names"] = overrides["direction_names"]
    return CorridorSpec(
        intersections=xs,
        cycle_min=cycle_min,
        cycle_max=cycle_max,
        entry_inflow=entry_inflow,
        **kw,
    )


def flat_segment(
    n: int,
    start: float = 0.0,
    end: float = 3600.0,
    level: str = "med",
    entry_in: float = 0.2,
    entry_out: float = 0.2,
    branch: float = 0.0,
    cross: float = 0.05,
    left: float = 0.02,
) -> DemandSegment:
    direct_row = [0.0] * len(MOVEMENTS)
    direct_row[1] = left    # in-L
    direct_row[3] = left    # out-L
    direct_row[4] = cross
    direct_row[5] = left
    direct_row[6] = cross
    direct_row[7] = left
    return DemandSegment(
        start=start,
        end=end,
        level=level,
        entry_in=entry_in,
        entry_out=entry_out,
        branch=tuple([branch] * n),
        direct=tuple(tuple(direct_row) for _ in range(n)),
    )


def flat_demand(n: int, seed: int = 0, **kw) -> DemandProfile:
    return DemandProfile(segments=(flat_segment(n, **kw),), seed=seed)
