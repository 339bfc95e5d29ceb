"""Static network description, substation grouping, wind conversion and
enumeration of line-removal sets that split the grid into two islands."""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

BusId = int


class NetworkFormatError(ValueError):
    """The network file is not valid JSON or does not follow the schema."""


class NetworkValidationError(ValueError):
    """The network parses but violates a structural invariant."""


class InfeasibleWindFraction(ValueError):
    pass


@dataclass(frozen=True)
class Branch:
    frm: BusId
    to: BusId
    kind: str  # "line" | "transformer"
    b_pu: float


@dataclass(frozen=True)
class Generator:
    bus: BusId
    H: float  # inertia constant, s, on machine base
    rated_mw: float
    inverter_based: bool = False


@dataclass(frozen=True)
class Load:
    bus: BusId
    p_mw: float
    q_mvar: float = 0.0


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[BusId, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...] = ()
    base_frequency: float = 60.0
    base_mva: float = 100.0
    name: str = "network"

    def __post_init__(self):
        validate_network(self)

    @cached_property
    def bus_index(self) -> dict[BusId, int]:
        return {b: i for i, b in enumerate(self.buses)}

    @property
    def total_capacity(self) -> float:
        return sum(g.rated_mw for g in self.generators)

    def line_ids(self) -> list[int]:
        return [i for i, br in enumerate(self.branches) if br.kind == "line"]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_frequency_hz": self.base_frequency,
            "base_mva": self.base_mva,
            "buses": list(self.buses),
            "branches": [
                {"from": b.frm, "to": b.to, "kind": b.kind, "b_pu": b.b_pu} for b in self.branches
            ],
            "generators": [
                {"bus": g.bus, "H_s": g.H, "rated_mw": g.rated_mw, "inverter_based": g.inverter_based}
                for g in self.generators
            ],
            "loads": [{"bus": l.bus, "p_mw": l.p_mw, "q_mvar": l.q_mvar} for l in self.loads],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkModel":
        try:
            jsonschema.validate(doc, _schema())
        except jsonschema.ValidationError as exc:
            raise NetworkFormatError(f"schema violation: {exc.message}") from exc
        return cls(
            buses=tuple(doc["buses"]),
            branches=tuple(Branch(b["from"], b["to"], b["kind"], float(b["b_pu"])) for b in doc["branches"]),
            generators=tuple(
                Generator(g["bus"], float(g["H_s"]), float(g["rated_mw"]), bool(g["inverter_based"]))
                for g in doc["generators"]
            ),
            loads=tuple(Load(l["bus"], float(l["p_mw"]), float(l["q_mvar"])) for l in doc["loads"]),
            base_frequency=float(doc["base_frequency_hz"]),
            base_mva=float(doc.get("base_mva", 100.0)),
            name=doc.get("name", "network"),
        )


def _schema() -> dict:
    return json.loads(resources.files("cuspad.data").joinpath("network.schema.json").read_text())


def validate_network(net: NetworkModel) -> None:
    known = set(net.buses)
    if len(known) != len(net.buses):
        raise NetworkValidationError("duplicate bus labels")
    for i, br in enumerate(net.branches):
        if br.frm not in known or br.to not in known:
            raise NetworkValidationError(f"branch {i} references unknown bus ({br.frm}, {br.to})")
        if br.frm == br.to:
            raise NetworkValidationError(f"branch {i} is a self loop at bus {br.frm}")
        if br.kind not in ("line", "transformer"):
            raise NetworkValidationError(f"branch {i} has unknown kind {br.kind!r}")
        if not br.b_pu > 0:
            raise NetworkValidationError(f"branch {i} has non-positive susceptance")
    for g in net.generators:
        if g.bus not in known:
            raise NetworkValidationError(f"generator at unknown bus {g.bus}")
        if g.rated_mw <= 0:
            raise NetworkValidationError(f"generator at bus {g.bus} has non-positive rating")
        if g.H <= 0 and not g.inverter_based:
            raise NetworkValidationError(f"synchronous generator at bus {g.bus} needs H > 0")
        if g.H < 0:
            raise NetworkValidationError(f"generator at bus {g.bus} has negative inertia")
    for l in net.loads:
        if l.bus not in known:
            raise NetworkValidationError(f"load at unknown bus {l.bus}")
    if len(components(net.buses, [(b.frm, b.to) for b in net.branches])) != 1:
        raise NetworkValidationError("network graph is not connected")


def load_network(path: str | Path) -> NetworkModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
    return NetworkModel.from_dict(doc)


def bundled_network(name: str) -> NetworkModel:
    """Load one of the shipped networks ("net18" or "net118")."""
    with resources.as_file(resources.files("cuspad.data").joinpath(f"{name}.json")) as p:
        return load_network(p)


def components(buses: Iterable[BusId], edges: Iterable[tuple[BusId, BusId]]) -> list[frozenset[BusId]]:
    """Connected components, ordered by their smallest bus label."""
    adj: dict[BusId, list[BusId]] = {b: [] for b in buses}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen: set[BusId] = set()
    out = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    queue.append(v)
        seen |= comp
        out.append(frozenset(comp))
    return out


# -- substations ---------------------------------------------------------------


@dataclass(frozen=True)
class SubstationPartition:
    groups: tuple[frozenset[BusId], ...]
    costs: tuple[float, ...]

    @cached_property
    def group_of(self) -> dict[BusId, int]:
        return {b: i for i, g in enumerate(self.groups) for b in g}

    def __len__(self):
        return len(self.groups)


def group_substations(net: NetworkModel, default_cost: float = 1.0) -> SubstationPartition:
    xf = [(b.frm, b.to) for b in net.branches if b.kind == "transformer"]
    groups = tuple(components(net.buses, xf))
    return SubstationPartition(groups=groups, costs=tuple(default_cost for _ in groups))


# -- wind penetration ----------------------------------------------------------


def apply_wind_penetration(net: NetworkModel, fraction: float) -> NetworkModel:
    """Convert the largest synchronous machines to zero-inertia inverter units
    until at least `fraction` of total capacity is inverter based."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    total = net.total_capacity
    converted = sum(g.rated_mw for g in net.generators if g.inverter_based)
    target = fraction * total
    sync = sorted(
        (i for i, g in enumerate(net.generators) if not g.inverter_based),
        key=lambda i: (-net.generators[i].rated_mw, i),
    )
    to_convert = []
    for i in sync:
        if converted >= target:
            break
        to_convert.append(i)
        converted += net.generators[i].rated_mw
    if converted < target or len(to_convert) == len(sync):
        raise InfeasibleWindFraction(
            f"wind fraction {fraction} would convert every synchronous machine"
        )
    if not to_convert:
        return net
    gens = list(net.generators)
    for i in to_convert:
        gens[i] = replace(gens[i], H=0.0, inverter_based=True)
    return replace(net, generators=tuple(gens))


def wind_share(net: NetworkModel) -> float:
    return sum(g.rated_mw for g in net.generators if g.inverter_based) / net.total_capacity


# -- island cuts ---------------------------------------------------------------


@dataclass(frozen=True)
class IslandCut:
    removed_branches: frozenset[int]
    side_a: frozenset[BusId]  # side holding the smallest bus label
    side_b: frozenset[BusId]

    @property
    def key(self) -> tuple[int, ...]:
        return tuple(sorted(self.removed_branches))

    def side_of(self, bus: BusId) -> int:
        return 0 if bus in self.side_a else 1


@dataclass
class _Graph:
    n: int
    # adjacency: node -> list of (neighbor, branch id)
    adj: list[list[tuple[int, int]]] = field(default_factory=list)


def _graph(net: NetworkModel) -> _Graph:
    idx = net.bus_index
    g = _Graph(len(net.buses), [[] for _ in net.buses])
    for k, br in enumerate(net.branches):
        a, b = idx[br.frm], idx[br.to]
        g.adj[a].append((b, k))
        g.adj[b].append((a, k))
    return g


def _split(g: _Graph, removed: set[int]) -> list[int]:
    """Component label per node after removing branches."""
    label = [-1] * g.n
    c = 0
    for s in range(g.n):
        if label[s] != -1:
            continue
        label[s] = c
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v, k in g.adj[u]:
                if k not in removed and label[v] == -1:
                    label[v] = c
                    queue.append(v)
        c += 1
    return label


def _cycle_labels(g: _Graph, n_branches: int, seed: int = 0x5EED) -> np.ndarray:
    """Random GF(2) labels whose XOR vanishes on every cut set.

    Each non-tree branch gets a random 64-bit word; a tree branch gets the XOR
    of the words of the non-tree branches whose fundamental cycle uses it. A
    branch set is then an edge cut iff its labels XOR to zero, up to a 2**-64
    false-positive rate (candidates are verified exactly anyway).
    """
    rng = np.random.default_rng(seed)
    parent = [-1] * g.n
    parent_edge = [-1] * g.n
    order = [0]
    parent[0] = 0
    for u in order:
        for v, k in g.adj[u]:
            if parent[v] == -1:
                parent[v] = u
                parent_edge[v] = k
                order.append(v)
    tree = set(parent_edge[1:])
    labels = np.zeros(n_branches, dtype=np.uint64)
    acc = np.zeros(g.n, dtype=np.uint64)
    for k in range(n_branches):
        if k in tree:
            continue
        labels[k] = rng.integers(1, 2**63, dtype=np.uint64)
    for u in range(g.n):
        for v, k in g.adj[u]:
            if k not in tree:
                acc[u] ^= labels[k]
    for v in reversed(order[1:]):
        k = parent_edge[v]
        labels[k] = acc[v]
        acc[parent[v]] ^= acc[v]
    return labels


def _zero_xor_sets(labels: np.ndarray, size: int) -> list[tuple[int, ...]]:
    """Index sets of the given size (positions into `labels`) with zero XOR,
    sorted lexicographically."""
    n = len(labels)
    found: set[tuple[int, ...]] = set()
    if size == 1:
        return [(i,) for i in np.flatnonzero(labels == 0)]
    pairs = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(n), 2)), dtype=np.int64
    ).reshape(-1, 2)
    pair_x = labels[pairs[:, 0]] ^ labels[pairs[:, 1]]
    if size == 2:
        return [tuple(p) for p in pairs[pair_x == 0]]
    if size == 3:
        left, right = pairs, pair_x
        singles = labels
        order = np.argsort(singles, kind="stable")
        srt = singles[order]
        lo = np.searchsorted(srt, right, "left")
        hi = np.searchsorted(srt, right, "right")
        for p in np.flatnonzero(hi > lo):
            for k in order[lo[p]:hi[p]]:
                s = set(left[p]) | {int(k)}
                if len(s) == 3:
                    found.add(tuple(sorted(int(x) for x in s)))
        return sorted(found)
    if size == 4:
        left, left_x = pairs, pair_x
    else:
        left = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(n), 3)), dtype=np.int64
        ).reshape(-1, 3)
        left_x = labels[left[:, 0]] ^ labels[left[:, 1]] ^ labels[left[:, 2]]
    order = np.argsort(pair_x, kind="stable")
    srt = pair_x[order]
    lo = np.searchsorted(srt, left_x, "left")
    hi = np.searchsorted(srt, left_x, "right")
    for p in np.flatnonzero(hi > lo):
        base = set(int(x) for x in left[p])
        for q in order[lo[p]:hi[p]]:
            s = base | {int(pairs[q, 0]), int(pairs[q, 1])}
            if len(s) == size:
                found.add(tuple(sorted(s)))
    return sorted(found)


def enumerate_island_cuts(
    net: NetworkModel, max_branches: int = 5, max_cuts: int = 500
) -> list[IslandCut]:
    """All line sets of size 1..max_branches whose removal leaves exactly two
    connected islands with generation on both sides, every removed line running
    between the islands. Ordered by size, then lexicographically by branch id;
    truncated at max_cuts.

    Candidates come from a cut-space test (a branch set is an edge cut iff its
    random cycle labels XOR to zero), found by meet-in-the-middle over pairs and
    triples; every candidate is then checked by an explicit component split.
    """
    if not 1 <= max_branches <= 5:
        raise ValueError("max_branches must be in 1..5")
    g = _graph(net)
    lines = net.line_ids()
    labels = _cycle_labels(g, len(net.branches))[lines]
    gen_nodes = {net.bus_index[gen.bus] for gen in net.generators}
    cuts: list[IslandCut] = []
    smaller: set[tuple[int, ...]] = set()
    for size in range(1, max_branches + 1):
        found = _zero_xor_sets(labels, size)
        for cand in found:
            # a minimal cut contains no smaller cut
            if any(
                sub in smaller
                for r in range(1, size)
                for sub in itertools.combinations(cand, r)
            ):
                continue
            removed = {lines[i] for i in cand}
            label = _split(g, removed)
            if max(label) != 1:
                continue
            if not all(_crosses(net, g, label, k) for k in removed):
                continue
            if {label[n] for n in gen_nodes} != {0, 1}:
                continue
            a = frozenset(net.buses[i] for i in range(g.n) if label[i] == 0)
            b = frozenset(net.buses[i] for i in range(g.n) if label[i] == 1)
            cuts.append(IslandCut(frozenset(removed), a, b))
            if len(cuts) >= max_cuts:
                return cuts
        smaller.update(found)
    return cuts


def _crosses(net: NetworkModel, g: _Graph, label: list[int], k: int) -> bool:
    br = net.branches[k]
    return label[net.bus_index[br.frm]] != label[net.bus_index[br.to]]


def apply_cut(net: NetworkModel, removed: Iterable[int]) -> list[frozenset[BusId]]:
    gone = set(removed)
    return components(
        net.buses, [(b.frm, b.to) for k, b in enumerate(net.branches) if k not in gone]
    )


def generators_by_side(net: NetworkModel, cut: IslandCut, synchronous_only: bool = False) -> tuple[int, int]:
    a = b = 0
    for gen in net.generators:
        if synchronous_only and gen.inverter_based:
            continue
        if gen.bus in cut.side_a:
            a += 1
        else:
            b += 1
    return a, b


def make_network(
    buses: Sequence[BusId],
    branches: Sequence[tuple],
    generators: Sequence[tuple],
    loads: Sequence[tuple] = (),
    name: str = "network",
) -> NetworkModel:
    """Convenience constructor from plain tuples.

    branches: (from, to) or (from, to, kind) or (from, to, kind, b_pu)
    generators: (bus, H, rated_mw) or (bus, H, rated_mw, inverter_based)
    loads: (bus, p_mw) or (bus, p_mw, q_mvar)
    """
    brs = []
    for b in branches:
        frm, to = b[0], b[1]
        kind = b[2] if len(b) > 2 else "line"
        b_pu = b[3] if len(b) > 3 else 10.0
        brs.append(Branch(frm, to, kind, float(b_pu)))
    return NetworkModel(
        buses=tuple(buses),
        branches=tuple(brs),
        generators=tuple(Generator(*g) for g in generators),
        loads=tuple(Load(*l) for l in loads),
        name=name,
    )
