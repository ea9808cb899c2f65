"""Minimum refuel-stop selection.

Chooses the fewest ground points (the depot is always available for free)
such that every task point lies within the air vehicle's coverage radius --
half its flight range, the out-and-back reach of one tank -- of some chosen
stop.  Exact branch-and-bound up to 20 candidate ground points, greedy with
drop/swap polishing beyond.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import InfeasibleError

EXACT_CANDIDATE_LIMIT = 20


@dataclass
class RefuelPlan:
    stops: List[int]  # scenario node ids; depot first (ordered once TSP ran)
    cover: Dict[int, int]  # task id -> assigned stop node id


def _cover_sets(scenario, radius_m: float):
    """Per-candidate coverage bitmasks over task ids, plus the depot's own."""
    n = scenario.n_tasks
    depot = scenario.depot_node
    dist = scenario.fly_dist_m
    candidates = [int(i) for i in np.flatnonzero(scenario.node_is_ground[:n])]
    masks = {}
    for c in candidates:
        bits = 0
        for t in range(n):
            if dist[c, t] <= radius_m:
                bits |= 1 << t
        masks[c] = bits
    depot_bits = 0
    for t in range(n):
        if dist[depot, t] <= radius_m:
            depot_bits |= 1 << t
    return candidates, masks, depot_bits


def _exact_min_cover(candidates, masks, covered0, universe):
    """Branch-and-bound over candidate subsets, smallest cardinality wins.

    Candidates are scanned in decreasing coverage order; the bound uses the
    best remaining single-candidate coverage.  Ties resolve toward the
    lexicographically first selection in scan order, which is deterministic.
    """
    order = sorted(candidates, key=lambda c: (-bin(masks[c]).count("1"), c))
    best: Optional[List[int]] = None

    def recurse(idx, covered, chosen):
        nonlocal best
        if covered & universe == universe:
            if best is None or len(chosen) < len(best):
                best = list(chosen)
            return
        if idx == len(order):
            return
        remaining = universe & ~covered
        biggest = max(
            (bin(masks[c] & remaining).count("1") for c in order[idx:]), default=0
        )
        if biggest == 0:
            return
        need = -(-bin(remaining).count("1") // biggest)
        if best is not None and len(chosen) + need >= len(best):
            return
        c = order[idx]
        if masks[c] & remaining:
            recurse(idx + 1, covered | masks[c], chosen + [c])
        recurse(idx + 1, covered, chosen)

    recurse(0, covered0, [])
    if best is None:
        raise InfeasibleError("no stop subset covers every task")
    return best


def _greedy_swap_cover(candidates, masks, covered0, universe):
    chosen: List[int] = []
    covered = covered0
    while covered & universe != universe:
        remaining = universe & ~covered
        best_c = max(
            candidates,
            key=lambda c: (bin(masks[c] & remaining).count("1"), -c),
        )
        if masks[best_c] & remaining == 0:
            raise InfeasibleError("no stop subset covers every task")
        chosen.append(best_c)
        covered |= masks[best_c]

    def total(sel):
        bits = covered0
        for c in sel:
            bits |= masks[c]
        return bits

    improved = True
    while improved:
        improved = False
        for drop in list(chosen):
            rest = [c for c in chosen if c != drop]
            if total(rest) & universe == universe:
                chosen = rest
                improved = True
                break
        else:
            for i, old in enumerate(chosen):
                for new in candidates:
                    if new in chosen:
                        continue
                    trial = chosen[:i] + [new] + chosen[i + 1 :]
                    bits = total(trial)
                    if bits & universe == universe:
                        # accept a swap only if it enables a drop
                        for drop in trial:
                            rest = [c for c in trial if c != drop]
                            if total(rest) & universe == universe:
                                chosen = rest
                                improved = True
                                break
                    if improved:
                        break
                if improved:
                    break
    return chosen


def solve_msc(scenario, coverage_radius_m: Optional[float] = None) -> RefuelPlan:
    """Minimum set of refuel stops covering all tasks, plus the assignment.

    Returns stops with the depot first and the chosen ground points in id
    order (route ordering happens later).  Every task is assigned to its
    nearest selected stop, which by construction lies within the radius.
    """
    radius = coverage_radius_m if coverage_radius_m is not None else scenario.coverage_radius_m()
    n = scenario.n_tasks
    universe = (1 << n) - 1
    candidates, masks, depot_bits = _cover_sets(scenario, radius)

    reachable = depot_bits
    for c in candidates:
        reachable |= masks[c]
    if reachable & universe != universe:
        missing = next(t for t in range(n) if not (reachable >> t) & 1)
        raise InfeasibleError(
            f"task {missing} lies beyond the coverage radius of every ground point",
            detail=missing,
        )

    if len(candidates) <= EXACT_CANDIDATE_LIMIT:
        chosen = _exact_min_cover(candidates, masks, depot_bits, universe)
    else:
        chosen = _greedy_swap_cover(candidates, masks, depot_bits, universe)

    stops = [scenario.depot_node] + sorted(chosen)
    dist = scenario.fly_dist_m
    cover = {}
    for t in range(n):
        within = [s for s in stops if dist[s, t] <= radius]
        cover[t] = min(within, key=lambda s: (dist[s, t], s))
    return RefuelPlan(stops=stops, cover=cover)
