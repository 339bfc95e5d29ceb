import json
from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cuspad.grid_model import (
    InfeasibleWindFraction,
    NetworkFormatError,
    NetworkValidationError,
    apply_cut,
    apply_wind_penetration,
    bundled_network,
    enumerate_island_cuts,
    group_substations,
    load_network,
    make_network,
    wind_share,
)


def bfs_components(buses, edges):
    adj = {b: set() for b in buses}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, comps = set(), []
    for s in buses:
        if s in seen:
            continue
        comp, q = {s}, deque([s])
        seen.add(s)
        while q:
            u = q.popleft()
            for v in adj[u] - seen:
                seen.add(v)
                comp.add(v)
                q.append(v)
        comps.append(frozenset(comp))
    return comps


def test_net18_bundled():
    net = bundled_network("net18")
    assert len(net.buses) == 18
    assert {1, 11, 14, 23, 31} <= set(net.buses)
    assert len(net.generators) >= 2
    assert len(bfs_components(net.buses, [(b.frm, b.to) for b in net.branches])) == 1


def test_net118_bundled():
    net = bundled_network("net118")
    assert len(net.buses) == 118
    assert len(net.branches) == 186
    assert len(bfs_components(net.buses, [(b.frm, b.to) for b in net.branches])) == 1


def test_dangling_branch_rejected():
    with pytest.raises(NetworkValidationError):
        make_network([1, 2], [(1, 2), (2, 9)], [(1, 3.0, 50.0)])


def test_schema_violation(tmp_path):
    doc = bundled_network("net18").to_dict()
    del doc["generators"]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(NetworkFormatError):
        load_network(path)


def test_roundtrip(tmp_path):
    net = bundled_network("net18")
    path = tmp_path / "n.json"
    path.write_text(json.dumps(net.to_dict()))
    assert load_network(path) == net


def test_substations_without_transformers():
    net = make_network([1, 2, 3], [(1, 2), (2, 3)], [(1, 3.0, 10.0)])
    part = group_substations(net)
    assert sorted(sorted(g) for g in part.groups) == [[1], [2], [3]]


def test_substations_one_transformer():
    net = make_network([3, 4, 5], [(4, 5, "transformer"), (3, 4)], [(3, 3.0, 10.0)])
    groups = sorted(sorted(g) for g in group_substations(net).groups)
    assert groups == [[3], [4, 5]]


def test_substations_transformer_chain():
    net = make_network([1, 2, 3], [(1, 2, "transformer"), (2, 3, "transformer")], [(1, 3.0, 10.0)])
    assert [sorted(g) for g in group_substations(net).groups] == [[1, 2, 3]]


def test_ring_cuts():
    net = make_network([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4), (4, 1)], [(1, 3.0, 100.0), (3, 3.0, 100.0)])
    cuts = enumerate_island_cuts(net)
    assert cuts and all(len(c.removed_branches) == 2 for c in cuts)
    halves = {frozenset([c.side_a, c.side_b]) for c in cuts if len(c.side_a) == 2}
    assert frozenset([frozenset({1, 2}), frozenset({3, 4})]) in halves
    assert frozenset([frozenset({1, 4}), frozenset({2, 3})]) in halves
    for c in cuts:
        assert 1 in c.side_a | c.side_b and (1 in c.side_a) != (3 in c.side_a)


def test_tree_network_bridges():
    # path 1-2-3-4 with generators at both ends
    net = make_network([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4)], [(1, 3.0, 50.0), (4, 3.0, 50.0)])
    cuts = enumerate_island_cuts(net)
    assert sorted(c.key for c in cuts) == [(0,), (1,), (2,)]


def test_net118_cuts_verified_by_bfs():
    net = bundled_network("net118")
    cuts = enumerate_island_cuts(net, 5, 500)
    assert cuts
    gens = {g.bus for g in net.generators}
    for c in cuts:
        kept = [(b.frm, b.to) for k, b in enumerate(net.branches) if k not in c.removed_branches]
        comps = bfs_components(net.buses, kept)
        assert sorted(map(sorted, comps)) == sorted(map(sorted, [c.side_a, c.side_b]))
        assert gens & c.side_a and gens & c.side_b
        assert 1 <= len(c.removed_branches) <= 5


def test_apply_cut_matches_sides():
    net = bundled_network("net18")
    c = enumerate_island_cuts(net)[0]
    assert set(apply_cut(net, c.removed_branches)) == {c.side_a, c.side_b}


def test_wind_zero_is_identity():
    net = bundled_network("net18")
    assert apply_wind_penetration(net, 0.0) == net


def test_wind_half_of_two_equal_units():
    net = make_network([1, 2], [(1, 2)], [(1, 3.0, 100.0), (2, 3.0, 100.0)])
    out = apply_wind_penetration(net, 0.5)
    assert sum(g.inverter_based for g in out.generators) == 1


def test_wind_net118_capacity_window():
    net = bundled_network("net118")
    total = sum(g.rated_mw for g in net.generators)
    largest = max(g.rated_mw for g in net.generators) / total
    share = wind_share(apply_wind_penetration(net, 0.3))
    assert 0.3 <= share <= 0.3 + largest


def test_wind_all_units_infeasible():
    net = make_network([1, 2], [(1, 2)], [(1, 3.0, 100.0), (2, 3.0, 100.0)])
    with pytest.raises(InfeasibleWindFraction):
        apply_wind_penetration(net, 0.9)


@given(st.floats(0.0, 0.6), st.floats(0.0, 0.6))
def test_wind_share_monotone(a, b):
    net = bundled_network("net118")
    lo, hi = sorted((a, b))
    s_lo = wind_share(apply_wind_penetration(net, lo))
    s_hi = wind_share(apply_wind_penetration(net, hi))
    assert s_lo >= lo - 1e-12 and s_lo <= s_hi
    converted = [g for g in apply_wind_penetration(net, hi).generators if g.inverter_based]
    assert all(g.H == 0.0 for g in converted)
