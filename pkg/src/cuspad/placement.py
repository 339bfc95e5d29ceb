"""Minimum-cost placement of dual-use line relays (DULRs) with PMU function.

A DULR sits at one end of a branch. Placing it costs `dulr_cost` and disrupts
the substation that hosts that end, which costs that substation's outage cost
once however many relays go in. A bus is observed when some branch incident to
it carries a relay at either end (the relay measures the line current and its
own bus voltage, so the far-end voltage is computable). With strict=True only
relays sitting at the bus itself count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

from .grid_model import BusId, NetworkModel, SubstationPartition, group_substations

LOW, HIGH = "low", "high"
Endpoint = tuple[int, str]  # (branch id, end)


class PlacementInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class PlacementProblem:
    buses: tuple[BusId, ...]
    edges: tuple[tuple[BusId, BusId], ...]  # (low, high) by bus label
    substation_of: dict[BusId, int]
    substation_costs: tuple[float, ...]
    dulr_cost: float = 0.1
    strict: bool = False

    def __post_init__(self):
        if self.dulr_cost < 0 or any(c < 0 for c in self.substation_costs):
            raise ValueError("costs must be non-negative")
        touched = {b for e in self.edges for b in e}
        lonely = [b for b in self.buses if b not in touched]
        if lonely:
            raise PlacementInfeasible(f"buses without incident branches: {lonely}")
        missing = [b for b in self.buses if b not in self.substation_of]
        if missing:
            raise ValueError(f"buses without a substation: {missing}")

    @classmethod
    def from_network(
        cls,
        net: NetworkModel,
        partition: SubstationPartition | None = None,
        dulr_cost: float = 0.1,
        substation_cost: float = 1.0,
        strict: bool = False,
    ) -> "PlacementProblem":
        part = partition or group_substations(net, substation_cost)
        edges = tuple((min(b.frm, b.to), max(b.frm, b.to)) for b in net.branches)
        return cls(tuple(net.buses), edges, part.group_of, tuple(part.costs), dulr_cost, strict)

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[BusId, BusId]],
        substations: Iterable[Iterable[BusId]] | None = None,
        costs: Iterable[float] | None = None,
        dulr_cost: float = 0.1,
        strict: bool = False,
    ) -> "PlacementProblem":
        edges = tuple((min(a, b), max(a, b)) for a, b in edges)
        buses = tuple(sorted({b for e in edges for b in e}))
        groups = [sorted(g) for g in substations] if substations is not None else [[b] for b in buses]
        sub_of = {b: i for i, g in enumerate(groups) for b in g}
        cost = tuple(costs) if costs is not None else tuple(1.0 for _ in groups)
        return cls(buses, edges, sub_of, cost, dulr_cost, strict)

    def bus_of(self, ep: Endpoint) -> BusId:
        e, end = ep
        return self.edges[e][0] if end == LOW else self.edges[e][1]

    def covers(self, ep: Endpoint) -> tuple[BusId, ...]:
        return (self.bus_of(ep),) if self.strict else self.edges[ep[0]]

    def endpoints(self) -> list[Endpoint]:
        return [(e, end) for e in range(len(self.edges)) for end in (LOW, HIGH)]

    def cost_of(self, endpoints: Iterable[Endpoint]) -> float:
        eps = set(endpoints)
        subs = {self.substation_of[self.bus_of(ep)] for ep in eps}
        return sum(self.substation_costs[s] for s in sorted(subs)) + self.dulr_cost * len(eps)


@dataclass(frozen=True)
class PlacementSolution:
    endpoints: frozenset[Endpoint]
    substations: frozenset[int]
    total_cost: float
    mode: str
    proven_optimal: bool = False
    lower_bound: float = 0.0
    nodes: int = 0
    buses: tuple[BusId, ...] = field(default=())

    @property
    def pmu_buses(self) -> list[BusId]:
        return sorted(set(self.buses))

    def to_dict(self, p: PlacementProblem) -> dict:
        return {
            "mode": self.mode,
            "total_cost": round(self.total_cost, 10),
            "dulr_cost": p.dulr_cost,
            "n_dulr": len(self.endpoints),
            "n_substations_disrupted": len(self.substations),
            "pmu_buses": self.pmu_buses,
            "endpoints": [
                {"branch": e, "end": end, "bus": p.bus_of((e, end))} for e, end in sorted(self.endpoints)
            ],
            "substations": sorted(self.substations),
            "proven_optimal": self.proven_optimal,
            "lower_bound": round(self.lower_bound, 10),
            "nodes": self.nodes,
            "observable": verify_observability(self, p),
        }


def _make_solution(p: PlacementProblem, eps: Iterable[Endpoint], mode: str, **kw) -> PlacementSolution:
    eps = frozenset(eps)
    subs = frozenset(p.substation_of[p.bus_of(ep)] for ep in eps)
    return PlacementSolution(
        eps, subs, p.cost_of(eps), mode, buses=tuple(sorted({p.bus_of(ep) for ep in eps})), **kw
    )


def verify_observability(sol: PlacementSolution, p: PlacementProblem) -> bool:
    seen = set()
    for ep in sol.endpoints:
        seen.update(p.covers(ep))
    return all(b in seen for b in p.buses)


# -- greedy ---------------------------------------------------------------------------


def _greedy(p: PlacementProblem) -> list[Endpoint]:
    """Weighted set cover. A move is either one relay in an already disrupted
    substation, or disrupting a substation together with the relays it needs to
    cover every reachable unobserved bus; the best gain/cost ratio wins."""
    uncovered = set(p.buses)
    open_subs: set[int] = set()
    chosen: list[Endpoint] = []
    by_sub: dict[int, list[Endpoint]] = {}
    for ep in p.endpoints():
        by_sub.setdefault(p.substation_of[p.bus_of(ep)], []).append(ep)

    def bundle(eps: list[Endpoint]) -> list[Endpoint]:
        todo = set(uncovered)
        picked = []
        # two-for-one relays first, then singles
        for need in (2, 1):
            for ep in eps:
                new = todo.intersection(p.covers(ep))
                if len(new) >= need:
                    picked.append(ep)
                    todo -= new
        return picked

    while uncovered:
        best = None  # (ratio, order key, endpoints)
        for s, eps in sorted(by_sub.items()):
            moves = [[ep] for ep in eps] if s in open_subs else [bundle(eps)]
            for mv in moves:
                gain = len(uncovered.intersection(b for ep in mv for b in p.covers(ep)))
                if gain == 0:
                    continue
                cost = p.dulr_cost * len(mv) + (0.0 if s in open_subs else p.substation_costs[s])
                ratio = gain / cost if cost > 0 else math.inf
                if best is None or ratio > best[0]:
                    best = (ratio, s, mv)
        if best is None:
            raise PlacementInfeasible("unobservable bus left")
        _, s, mv = best
        open_subs.add(s)
        for ep in mv:
            chosen.append(ep)
            uncovered.difference_update(p.covers(ep))
    return _prune(p, chosen)


def _prune(p: PlacementProblem, chosen: list[Endpoint]) -> list[Endpoint]:
    """Drop redundant relays, most expensive removals first."""
    keep = list(chosen)
    changed = True
    while changed:
        changed = False
        base = p.cost_of(keep)
        order = sorted(keep, key=lambda ep: (p.cost_of(x for x in keep if x != ep) - base, ep))
        for ep in order:
            rest = [x for x in keep if x != ep]
            count = {}
            for x in rest:
                for b in p.covers(x):
                    count[b] = count.get(b, 0) + 1
            if all(count.get(b, 0) > 0 for b in p.buses):
                keep = rest
                changed = True
                break
    return keep


# -- exact ---------------------------------------------------------------------------


class _BnB:
    def __init__(self, p: PlacementProblem, node_budget: int):
        self.p = p
        self.budget = node_budget
        self.nodes = 0
        self.exhausted = False
        self.sub_of = p.substation_of
        self.cost = p.substation_costs
        # relays able to observe each bus
        self.options: dict[BusId, list[Endpoint]] = {b: [] for b in p.buses}
        for ep in p.endpoints():
            for b in p.covers(ep):
                self.options[b].append(ep)
        self.cand_subs = {
            b: frozenset(self.sub_of[p.bus_of(ep)] for ep in self.options[b]) for b in p.buses
        }
        self.per_cover = p.dulr_cost / (1 if p.strict else 2)

    def bound(self, uncovered: set, open_subs: set) -> float:
        """Admissible: every relay observes at most two buses, and buses whose
        candidate substations are all closed and pairwise disjoint each need
        a different substation disrupted."""
        lb = self.per_cover * len(uncovered)
        if not self.p.strict:
            lb = self.p.dulr_cost * math.ceil(len(uncovered) / 2)
        used: set[int] = set()
        extra = 0.0
        for b in sorted(uncovered, key=lambda b: (len(self.cand_subs[b]), b)):
            subs = self.cand_subs[b]
            if subs & open_subs or subs & used:
                continue
            used |= subs
            extra += min(self.cost[s] for s in subs)
        return lb + extra

    def solve(self, incumbent: list[Endpoint]) -> tuple[list[Endpoint], float]:
        self.best = list(incumbent)
        self.best_cost = self.p.cost_of(incumbent)
        self.root_bound = self.bound(set(self.p.buses), set())
        self._dfs(set(self.p.buses), {}, [], 0.0)
        return self.best, self.best_cost

    def _dfs(self, uncovered: set, open_count: dict, chosen: list, cost: float):
        if self.nodes >= self.budget:
            self.exhausted = True
            return
        self.nodes += 1
        if not uncovered:
            if cost < self.best_cost - 1e-12:
                self.best, self.best_cost = list(chosen), cost
            return
        open_subs = {s for s, k in open_count.items() if k}
        if cost + self.bound(uncovered, open_subs) >= self.best_cost - 1e-12:
            return
        # branch on the unobserved bus with the fewest useful relays
        v = min(uncovered, key=lambda b: (len(self.options[b]), b))
        children = {}
        for ep in self.options[v]:
            s = self.sub_of[self.p.bus_of(ep)]
            new = frozenset(uncovered.intersection(self.p.covers(ep)))
            step = self.p.dulr_cost + (0.0 if open_count.get(s) else self.cost[s])
            key = (new, s if not open_count.get(s) else -1)
            # same observed set and same substation effect: keep the first
            if key not in children:
                children[key] = (step, ep, s, new)
        for step, ep, s, new in sorted(children.values(), key=lambda c: (c[0], -len(c[3]), c[1])):
            open_count[s] = open_count.get(s, 0) + 1
            chosen.append(ep)
            self._dfs(uncovered - new, open_count, chosen, cost + step)
            chosen.pop()
            open_count[s] -= 1
            if self.exhausted:
                return


def solve_placement(p: PlacementProblem, mode: str = "exact", node_budget: int = 200_000) -> PlacementSolution:
    """mode="greedy": set-cover heuristic with redundancy pruning.
    mode="exact": depth-first branch and bound warm-started from greedy. The
    result carries proven_optimal=False if the node budget ran out first."""
    warm = _greedy(p)
    if mode == "greedy":
        return _make_solution(p, warm, "greedy")
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    bnb = _BnB(p, node_budget)
    best, _ = bnb.solve(warm)
    proven = not bnb.exhausted
    sol = _make_solution(
        p, best, "exact", proven_optimal=proven, lower_bound=bnb.root_bound, nodes=bnb.nodes
    )
    if proven:
        sol = PlacementSolution(**{**sol.__dict__, "lower_bound": sol.total_cost})
    return sol


def brute_force_cost(p: PlacementProblem) -> float:
    """Exhaustive minimum over all relay subsets (small graphs only)."""
    eps = p.endpoints()
    if len(eps) > 20:
        raise ValueError("too many endpoints for exhaustive search")
    best = math.inf
    for mask in range(1 << len(eps)):
        sel = [eps[i] for i in range(len(eps)) if mask >> i & 1]
        seen = {b for ep in sel for b in p.covers(ep)}
        if len(seen) == len(p.buses):
            best = min(best, p.cost_of(sel))
    return best


def save_solution(sol: PlacementSolution, p: PlacementProblem, path) -> None:
    with open(path, "w") as fh:
        json.dump(sol.to_dict(p), fh, indent=2, sort_keys=True)
        fh.write("\n")


def summary(sol: PlacementSolution, p: PlacementProblem) -> str:
    status = "optimal" if sol.proven_optimal else f"best found (lower bound {sol.lower_bound:.3f})"
    return (
        f"{sol.mode}: cost {sol.total_cost:.3f} ({status}), {len(sol.endpoints)} relays in "
        f"{len(sol.substations)} substations, PMU buses {sol.pmu_buses}"
    )
