"""Metaheuristic route improvement for the subproblem routing model.

Search operates on a compact representation: one item list per vehicle
holding task vertices and recharge markers; the mandatory final recharge is
implicit.  A construction heuristic (nearest feasible neighbor with forced
recharges) seeds the search, then one of three improvement strategies runs
under an iteration/wall-clock budget:

- guided local search: best-improvement sweeps on an objective augmented
  with arc penalties, bumping the most "useful" arcs whenever the sweep
  stalls;
- tabu search: best non-tabu sweep move applied even when worsening, with
  an aspiration override on new incumbents;
- simulated annealing: random single moves accepted by the Metropolis rule
  under a geometric cooling schedule.

All strategies track the incumbent by true objective, so the returned
solution is never worse than the construction seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InfeasibleError
from ..rng import make_rng
from .evrptw import (
    EvrptwModel,
    EvrptwSolution,
    canonicalize,
    check_model_feasible,
    evrptw_objective,
    validate_evrptw,
)

RECHARGE_MARK = -1  # mid-route recharge marker inside item lists

GLS_LAMBDA_FACTOR = 0.1
SA_T0_FACTOR = 0.2
SA_COOLING = 0.995


@dataclass(frozen=True)
class Budget:
    iterations: int = 2000
    wall_ms: Optional[float] = None
    stall: Optional[int] = None  # stop after this many non-improving iterations


@dataclass
class SolveStats:
    method: str
    seed: int
    iterations: int
    construction_objective_s: float
    objective_s: float
    best_history: List[float] = field(default_factory=list)


class _Evaluator:
    """Fast feasibility/objective evaluation over item lists."""

    def __init__(self, model: EvrptwModel):
        self.m = model.n_tasks
        self.dest = self.m + 1  # canonical physical id; copies are co-located
        self.cap = model.capacity_kj
        k = self.dest + 1
        self.at = model.arc_time_s[:k, :k].tolist()
        self.af = model.arc_fuel_kj[:k, :k].tolist()
        self.n_copies = model.n_copies
        self.fleet = model.fleet
        self.n_vertices = model.n_vertices

    def copies_used(self, items: Sequence[Sequence[int]]) -> int:
        return self.fleet + sum(1 for r in items for it in r if it == RECHARGE_MARK)

    def evaluate(self, items: Sequence[Sequence[int]]) -> Tuple[bool, float]:
        total = 0.0
        at, af, cap, dest = self.at, self.af, self.cap, self.dest
        for route in items:
            pos = 0
            fuel = cap
            for it in route:
                tgt = dest if it == RECHARGE_MARK else it
                total += at[pos][tgt]
                fuel -= af[pos][tgt]
                if fuel < -1e-9:
                    return False, math.inf
                if tgt == dest:
                    fuel = cap
                pos = tgt
            total += at[pos][dest]
            if fuel - af[pos][dest] < -1e-9:
                return False, math.inf
        return True, total

    def arcs(self, items: Sequence[Sequence[int]]) -> List[Tuple[int, int]]:
        out = []
        dest = self.dest
        for route in items:
            pos = 0
            for it in route:
                tgt = dest if it == RECHARGE_MARK else it
                out.append((min(pos, tgt), max(pos, tgt)))
                pos = tgt
            out.append((min(pos, dest), max(pos, dest)))
        return out


def construct(model: EvrptwModel) -> List[List[int]]:
    """Nearest-feasible-neighbor seed with forced recharges, round-robin."""
    ev = _Evaluator(model)
    cap, dest = ev.cap, ev.dest
    items: List[List[int]] = [[] for _ in range(model.fleet)]
    pos = [0] * model.fleet
    fuel = [cap] * model.fleet
    active = [True] * model.fleet
    unassigned = set(range(1, model.n_tasks + 1))
    copies_left = model.n_copies - model.fleet
    turn = 0
    while unassigned:
        if not any(active):
            task = min(unassigned)
            raise InfeasibleError(
                f"construction cannot service task vertex {task}", detail=model.tasks[task - 1]
            )
        k = turn % model.fleet
        turn += 1
        if not active[k]:
            continue
        feasible = [
            t
            for t in sorted(unassigned)
            if fuel[k] - ev.af[pos[k]][t] - ev.af[t][dest] >= -1e-9
        ]
        if feasible:
            t = min(feasible, key=lambda v: (ev.at[pos[k]][v], v))
            items[k].append(t)
            fuel[k] -= ev.af[pos[k]][t]
            pos[k] = t
            unassigned.discard(t)
        elif pos[k] == dest and fuel[k] >= cap - 1e-9:
            active[k] = False
        elif copies_left > 0:
            if fuel[k] - ev.af[pos[k]][dest] < -1e-9:
                raise InfeasibleError(
                    f"stop leg exceeds one tank from vertex {pos[k]}", detail="leg"
                )
            items[k].append(RECHARGE_MARK)
            fuel[k] = cap
            pos[k] = dest
            copies_left -= 1
        else:
            raise InfeasibleError(
                "recharge copies exhausted during construction", detail="copies"
            )
    ok, _ = ev.evaluate(items)
    if not ok:
        raise InfeasibleError("construction produced an infeasible seed")
    return items


def _neighbors(items: List[List[int]], ev: _Evaluator):
    """Deterministically ordered candidate moves as (attr, new_items)."""
    fleet = len(items)
    copies_free = ev.n_copies - ev.copies_used(items)
    # relocate task
    for r1 in range(fleet):
        for i, it in enumerate(items[r1]):
            if it == RECHARGE_MARK:
                continue
            for r2 in range(fleet):
                for j in range(len(items[r2]) + (0 if r2 == r1 else 1)):
                    if r2 == r1 and j in (i, i + 1):
                        continue
                    new = [list(r) for r in items]
                    new[r1].pop(i)
                    jj = j if not (r2 == r1 and j > i) else j - 1
                    new[r2].insert(jj, it)
                    yield ("rel", it), new
    # swap two tasks
    flat = [
        (r, i, it)
        for r in range(fleet)
        for i, it in enumerate(items[r])
        if it != RECHARGE_MARK
    ]
    for a in range(len(flat)):
        for b in range(a + 1, len(flat)):
            r1, i, t1 = flat[a]
            r2, j, t2 = flat[b]
            new = [list(r) for r in items]
            new[r1][i], new[r2][j] = t2, t1
            yield ("swp", t1, t2), new
    # reverse a segment within one route
    for r in range(fleet):
        n = len(items[r])
        for i in range(n - 1):
            for j in range(i + 1, n):
                new = [list(x) for x in items]
                new[r][i : j + 1] = new[r][i : j + 1][::-1]
                yield ("rev", r, i, j), new
    # recharge insertion / removal
    for r in range(fleet):
        if copies_free > 0:
            for g in range(len(items[r]) + 1):
                new = [list(x) for x in items]
                new[r].insert(g, RECHARGE_MARK)
                yield ("radd", r, g), new
        for i, it in enumerate(items[r]):
            if it == RECHARGE_MARK:
                new = [list(x) for x in items]
                new[r].pop(i)
                yield ("rdel", r, i), new


def _random_neighbor(items, ev: _Evaluator, rng) -> Tuple[Tuple, List[List[int]]]:
    fleet = len(items)
    for _ in range(64):
        kind = rng.integers(4)
        tasks = [
            (r, i) for r in range(fleet) for i, it in enumerate(items[r]) if it != RECHARGE_MARK
        ]
        if kind == 0 and tasks:
            r1, i = tasks[rng.integers(len(tasks))]
            it = items[r1][i]
            r2 = int(rng.integers(fleet))
            j = int(rng.integers(len(items[r2]) + 1))
            new = [list(x) for x in items]
            new[r1].pop(i)
            if r2 == r1 and j > i:
                j -= 1
            new[r2].insert(j, it)
            return ("rel", it), new
        if kind == 1 and len(tasks) >= 2:
            a, b = rng.choice(len(tasks), size=2, replace=False)
            r1, i = tasks[a]
            r2, j = tasks[b]
            new = [list(x) for x in items]
            new[r1][i], new[r2][j] = new[r2][j], new[r1][i]
            return ("swp",), new
        if kind == 2:
            r = int(rng.integers(fleet))
            n = len(items[r])
            if n >= 2:
                i = int(rng.integers(n - 1))
                j = int(rng.integers(i + 1, n))
                new = [list(x) for x in items]
                new[r][i : j + 1] = new[r][i : j + 1][::-1]
                return ("rev",), new
        if kind == 3:
            r = int(rng.integers(fleet))
            if rng.random() < 0.5 and ev.copies_used(items) < ev.n_copies:
                g = int(rng.integers(len(items[r]) + 1))
                new = [list(x) for x in items]
                new[r].insert(g, RECHARGE_MARK)
                return ("radd",), new
            marks = [i for i, it in enumerate(items[r]) if it == RECHARGE_MARK]
            if marks:
                i = marks[int(rng.integers(len(marks)))]
                new = [list(x) for x in items]
                new[r].pop(i)
                return ("rdel",), new
    return ("noop",), [list(x) for x in items]


class _Clock:
    def __init__(self, budget: Budget):
        self.budget = budget
        self.start = time.perf_counter()
        self.iterations = 0
        self.since_best = 0

    def tick(self) -> bool:
        self.iterations += 1
        if self.iterations >= self.budget.iterations:
            return False
        if self.budget.wall_ms is not None:
            if (time.perf_counter() - self.start) * 1e3 >= self.budget.wall_ms:
                return False
        if self.budget.stall is not None and self.since_best >= self.budget.stall:
            return False
        return True


def _finalize(model: EvrptwModel, items: List[List[int]]) -> EvrptwSolution:
    routes = []
    copy_cursor = model.first_copy()
    for route_items in items:
        route = [0]
        for it in route_items:
            if it == RECHARGE_MARK:
                route.append(copy_cursor)
                copy_cursor += 1
            else:
                route.append(it)
        route.append(copy_cursor)
        copy_cursor += 1
        routes.append(route)
    return canonicalize(model, routes)


def _gls(items, ev, budget, rng, history):
    lam = GLS_LAMBDA_FACTOR * float(
        np.mean([ev.at[i][j] for i in range(ev.dest + 1) for j in range(ev.dest + 1) if i != j])
    )
    pen: Dict[Tuple[int, int], int] = {}
    cur = items
    _, cur_obj = ev.evaluate(cur)
    best, best_obj = cur, cur_obj
    clock = _Clock(budget)
    while True:
        cur_pen = cur_obj + lam * sum(pen.get(a, 0) for a in ev.arcs(cur))
        move_best = None
        for _attr, cand in _neighbors(cur, ev):
            ok, obj = ev.evaluate(cand)
            if not ok:
                continue
            score = obj + lam * sum(pen.get(a, 0) for a in ev.arcs(cand))
            if move_best is None or score < move_best[0] - 1e-12:
                move_best = (score, obj, cand)
        improved = False
        if move_best is not None and move_best[0] < cur_pen - 1e-12:
            cur, cur_obj = move_best[2], move_best[1]
            improved = True
            if cur_obj < best_obj - 1e-12:
                best, best_obj = cur, cur_obj
                clock.since_best = -1
        if not improved:
            arcs = ev.arcs(cur)
            utils = {a: ev.at[a[0]][a[1]] / (1 + pen.get(a, 0)) for a in arcs}
            top = max(utils.values())
            for a in sorted(utils):
                if utils[a] >= top - 1e-12:
                    pen[a] = pen.get(a, 0) + 1
        history.append(best_obj)
        clock.since_best += 1
        if not clock.tick():
            break
    return best, best_obj, clock.iterations


def _tabu(items, ev, budget, rng, history):
    tenure = math.ceil(ev.n_vertices / 2)
    tabu: Dict[Tuple, int] = {}
    cur = items
    _, cur_obj = ev.evaluate(cur)
    best, best_obj = cur, cur_obj
    clock = _Clock(budget)
    while True:
        chosen = None
        for attr, cand in _neighbors(cur, ev):
            ok, obj = ev.evaluate(cand)
            if not ok:
                continue
            is_tabu = tabu.get(attr, -1) >= clock.iterations
            if is_tabu and not obj < best_obj - 1e-12:
                continue
            if chosen is None or obj < chosen[0] - 1e-12:
                chosen = (obj, attr, cand)
        if chosen is not None:
            cur_obj, attr, cur = chosen
            tabu[attr] = clock.iterations + tenure
            if cur_obj < best_obj - 1e-12:
                best, best_obj = cur, cur_obj
                clock.since_best = -1
        history.append(best_obj)
        clock.since_best += 1
        if not clock.tick():
            break
    return best, best_obj, clock.iterations


def _anneal(items, ev, budget, rng, history):
    cur = items
    _, cur_obj = ev.evaluate(cur)
    best, best_obj = cur, cur_obj
    temp = SA_T0_FACTOR * max(cur_obj, 1e-9)
    clock = _Clock(budget)
    while True:
        _attr, cand = _random_neighbor(cur, ev, rng)
        ok, obj = ev.evaluate(cand)
        if ok:
            delta = obj - cur_obj
            if delta < 0 or rng.random() < math.exp(-delta / max(temp, 1e-12)):
                cur, cur_obj = cand, obj
                if cur_obj < best_obj - 1e-12:
                    best, best_obj = cur, cur_obj
                    clock.since_best = -1
        temp *= SA_COOLING
        history.append(best_obj)
        clock.since_best += 1
        if not clock.tick():
            break
    return best, best_obj, clock.iterations


_METHODS = {"gls": _gls, "tabu": _tabu, "anneal": _anneal}


def solve_evrptw(
    model: EvrptwModel,
    method: str = "gls",
    budget: Budget = Budget(),
    seed: int = 0,
) -> Tuple[EvrptwSolution, SolveStats]:
    """Construct and improve; the result always validates and never regresses.

    Deterministic for fixed (model, method, budget, seed).  Raises
    :class:`InfeasibleError` when no feasible seed exists (unreachable task or
    exhausted recharge copies).
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(_METHODS)}")
    check_model_feasible(model)
    ev = _Evaluator(model)
    seed_items = construct(model)
    _, seed_obj = ev.evaluate(seed_items)
    rng = make_rng(seed, 17)
    history: List[float] = []
    best_items, best_obj, iterations = _METHODS[method](seed_items, ev, budget, rng, history)
    solution = _finalize(model, best_items)
    violations = validate_evrptw(model, solution)
    if violations:
        raise AssertionError(f"search produced an invalid solution: {violations[:3]}")
    obj = evrptw_objective(model, solution)
    if obj > seed_obj + 1e-6:
        raise AssertionError("improvement phase worsened the construction seed")
    stats = SolveStats(
        method=method,
        seed=seed,
        iterations=iterations,
        construction_objective_s=seed_obj,
        objective_s=obj,
        best_history=history,
    )
    return solution, stats
