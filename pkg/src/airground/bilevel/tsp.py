"""Stop-sequence optimization for the ground vehicle.

Orders the refuel stops as an open path starting at the depot (the mission
ends at the last stop, so there is no return leg).  Exact Held-Karp dynamic
programming up to 15 stops beyond the depot, nearest-neighbor plus 2-opt
improvement above that.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

HELD_KARP_LIMIT = 15


def path_length(order: Sequence[int], dist: np.ndarray) -> float:
    return float(sum(dist[a, b] for a, b in zip(order, order[1:])))


def held_karp_path(depot: int, others: List[int], dist: np.ndarray) -> List[int]:
    """Optimal open path depot -> all stops, free endpoint."""
    n = len(others)
    full = (1 << n) - 1
    # dp[(mask, last)] = (cost, parent_state)
    dp = {}
    for k in range(n):
        dp[(1 << k, k)] = (float(dist[depot, others[k]]), None)
    for mask in range(1, full + 1):
        for last in range(n):
            if not (mask >> last) & 1:
                continue
            state = (mask, last)
            if state not in dp:
                continue
            cost, _ = dp[state]
            for nxt in range(n):
                if (mask >> nxt) & 1:
                    continue
                cand = cost + float(dist[others[last], others[nxt]])
                key = (mask | (1 << nxt), nxt)
                if key not in dp or cand < dp[key][0] - 1e-12:
                    dp[key] = (cand, state)
    end = min(range(n), key=lambda k: dp[(full, k)][0])
    order = []
    state = (full, end)
    while state is not None:
        order.append(others[state[1]])
        state = dp[state][1]
    order.reverse()
    return [depot] + order


def nearest_neighbor_two_opt(depot: int, others: List[int], dist: np.ndarray) -> List[int]:
    todo = list(others)
    order = [depot]
    while todo:
        cur = order[-1]
        nxt = min(todo, key=lambda s: (dist[cur, s], s))
        order.append(nxt)
        todo.remove(nxt)
    improved = True
    while improved:
        improved = False
        for i in range(1, len(order) - 1):
            for j in range(i + 1, len(order)):
                cand = order[:i] + order[i : j + 1][::-1] + order[j + 1 :]
                if path_length(cand, dist) < path_length(order, dist) - 1e-9:
                    order = cand
                    improved = True
    return order


def solve_tsp_stops(
    stops: Sequence[int],
    depot: int,
    dist: np.ndarray,
    banned: np.ndarray = None,
) -> List[int]:
    """Ordered stop route, depot first.  ``dist`` is the road-metric matrix.

    ``banned`` optionally marks leg pairs to avoid (e.g. beyond air-vehicle
    relocation range); banned legs cost a large penalty, so they are used
    only when no fully-clean ordering exists.
    """
    others = [s for s in stops if s != depot]
    if not others:
        return [depot]
    if banned is not None:
        dist = dist.copy()
        dist[banned] += 1e9
    if len(others) <= HELD_KARP_LIMIT:
        return held_karp_path(depot, others, dist)
    return nearest_neighbor_two_opt(depot, others, dist)
