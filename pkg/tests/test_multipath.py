import itertools

import networkx as nx
import numpy as np
import pytest
from scipy.optimize import linprog

from cndsvne.enhance import EnhancedVn, fip_enhance
from cndsvne.multipath import (
    PairCache,
    allocate_embedding,
    build_embedding_lp,
    build_path_table,
    candidate_nodes,
    disjoint_paths,
    embed_vn,
    round_assignment,
    survives_link_failure,
)
from cndsvne.netmodel import ResourceError, SubstrateNetwork, VirtualNetwork, generate_vn_request, waxman_generate
from cndsvne.neurolp import solve_lp


def substrate_from(edges, cpu=100.0, bw=100.0, n=None):
    n = n if n is not None else 1 + max(max(e) for e in edges)
    cpus = np.full(n, cpu) if np.isscalar(cpu) else np.asarray(cpu, dtype=float)
    return SubstrateNetwork(cpus, edges, [bw] * len(edges))


def one_link_enhanced(b=10.0, cpu=(10.0, 10.0)):
    """Two slots joined by one enhanced link of bandwidth ``b``."""
    base = VirtualNetwork.from_links([cpu[0]], {})
    b_e = np.array([[0.0, b], [b, 0.0]])
    return EnhancedVn(base, np.array(cpu, dtype=float), b_e, np.array([[1, 0]]))


def mincost_oracle(sub, k, l, eta):
    """Independent min-cost flow on the bidirected unit-capacity graph."""
    g = nx.DiGraph()
    for u, v in sub.links:
        g.add_edge(u, v, capacity=1, weight=1)
        g.add_edge(v, u, capacity=1, weight=1)
    if nx.maximum_flow_value(g, k, l) < eta:
        return None
    g.nodes[k]["demand"] = -eta
    g.nodes[l]["demand"] = eta
    return nx.cost_of_flow(g, nx.min_cost_flow(g))


def check_pathset(sub, ps, eta, band=True):
    assert ps.eta == eta
    seen = set()
    for nodes, links in zip(ps.paths, ps.links):
        assert nodes[0] == ps.k and nodes[-1] == ps.l
        assert len(set(nodes)) == len(nodes)
        for (a, b), e in zip(zip(nodes, nodes[1:]), links):
            assert set(sub.links[e]) == {a, b}
        assert seen.isdisjoint(links)
        seen.update(links)
    assert ps.length == len(seen)
    if band:
        assert ps.band == min(sub.residual_bw[e] for e in seen)


def test_two_parallel_routes():
    sub = substrate_from([(0, 1), (1, 3), (0, 2), (2, 3)])
    ps = disjoint_paths(sub, 0, 3, 2)
    assert ps.length == 4
    check_pathset(sub, ps, 2)
    assert disjoint_paths(sub, 0, 3, 3) is None


def test_bridge_is_infeasible():
    sub = substrate_from([(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)])
    assert disjoint_paths(sub, 0, 5, 2) is None
    assert disjoint_paths(sub, 0, 1, 2) is not None


def test_argument_validation():
    sub = substrate_from([(0, 1)])
    with pytest.raises(ValueError):
        disjoint_paths(sub, 1, 1, 2)
    with pytest.raises(ValueError):
        disjoint_paths(sub, 0, 1, 1)


def test_min_band_filters_links():
    sub = SubstrateNetwork([1.0] * 4, [(0, 1), (1, 3), (0, 2), (2, 3), (0, 3)], [10, 10, 10, 10, 3])
    assert disjoint_paths(sub, 0, 3, 3).band == 3
    assert disjoint_paths(sub, 0, 3, 3, min_band=5) is None
    assert disjoint_paths(sub, 0, 3, 2, min_band=5).band == 10


def test_random_graphs_against_flow_oracle():
    rng = np.random.default_rng(0)
    checked = 0
    for seed in range(12):
        sub = waxman_generate(20, 45, seed=seed)
        for _ in range(6):
            k, l = (int(v) for v in rng.choice(20, 2, replace=False))
            for eta in (2, 3):
                ps = disjoint_paths(sub, k, l, eta)
                ref = mincost_oracle(sub, k, l, eta)
                if ref is None:
                    assert ps is None
                    continue
                check_pathset(sub, ps, eta)
                assert ps.length == ref
                checked += 1
    assert checked > 50


def test_path_table_examples():
    sub = waxman_generate(15, 35, seed=3)
    assert build_path_table(sub, [], 2) == {}
    single = build_path_table(sub, [(4, 2)], 2)
    assert list(single) == [(2, 4)]
    pairs = [(0, 5), (5, 0), (3, 9), (1, 14)]
    table = build_path_table(sub, pairs, 3)
    assert len(table) == 3
    for (k, l), ps in table.items():
        again = disjoint_paths(sub, k, l, 3)
        assert (ps is None) == (again is None)
        if ps is not None:
            assert ps.paths == again.paths and ps.band == again.band


def test_single_node_lp_has_zero_cost():
    sub = waxman_generate(10, 20, seed=1)
    enh = fip_enhance(VirtualNetwork.from_links([500.0], {}))
    cands = candidate_nodes(enh, sub)
    lp = build_embedding_lp(enh, sub, 3, {}, cands)
    assert lp.meta["y"].stop == lp.meta["y"].start
    assert not np.any(lp.d)


def test_empty_candidate_set_refused():
    sub = waxman_generate(10, 20, seed=1)
    enh = fip_enhance(VirtualNetwork.from_links([500.0], {}))
    with pytest.raises(ValueError):
        build_embedding_lp(enh, sub, 3, {}, [[0, 1], []])


# a 6-cycle with chords: hop costs differ between candidate pairs
RING = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4)]


def test_two_slot_lp_matches_exhaustive_assignment():
    sub = substrate_from(RING)
    enh = one_link_enhanced(b=6.0)
    cands = [[0, 2, 5], [0, 2, 5]]
    table = build_path_table(sub, [(k, l) for k in cands[0] for l in cands[1] if k != l], 2)
    lp = build_embedding_lp(enh, sub, 2, table, cands)
    exhaustive = min(
        mincost_oracle(sub, k, l, 2) * 6.0 for k, l in itertools.permutations([0, 2, 5], 2)
    )
    z, _, report = solve_lp(lp)
    assert lp.objective(z) == pytest.approx(exhaustive, rel=1e-3)
    a_ub = -lp.m1.toarray()
    res = linprog(lp.d, A_ub=a_ub, b_ub=-lp.r1, A_eq=lp.m2.toarray(), b_eq=lp.r2, bounds=(0, None), method="highs")
    assert res.fun == pytest.approx(exhaustive)


def test_candidate_cap_bounds_variable_count():
    sub = waxman_generate(100, 500, seed=0)
    vn = generate_vn_request(20, 20, seed=2, connectivity=0.2)
    enh = fip_enhance(vn)
    cap = 6
    cands = candidate_nodes(enh, sub, cap)
    assert len(cands) == 21 and all(len(c) <= cap for c in cands)
    assert all(len(c) == 42 for c in candidate_nodes(enh, sub))
    pairs = {tuple(sorted((int(k), int(l)))) for i, j in enh.links() for k in cands[i] for l in cands[j] if k != l}
    table = build_path_table(sub, pairs, 3)
    lp = build_embedding_lp(enh, sub, 3, table, cands)
    assert len(lp.meta["x_index"]) <= 21 * cap
    assert len(lp.meta["y_index"]) <= len(enh.links()) * cap * (cap - 1)


def _onehot(node_map, m):
    w = np.full((len(node_map), m), -np.inf)
    for i in range(len(node_map)):
        w[i, :] = 0.0
    w[np.arange(len(node_map)), node_map] = 1.0
    return w


def test_integral_weights_returned_unchanged():
    sub = substrate_from(RING)
    enh = one_link_enhanced()
    table = build_path_table(sub, itertools.combinations(range(6), 2), 2)
    out = round_assignment(_onehot([4, 1], 6), enh, sub, 2, table)
    assert out.tolist() == [4, 1]


def test_uniform_weights_pick_min_true_cost():
    sub = substrate_from(RING)
    enh = one_link_enhanced(b=4.0)
    pool = [0, 2, 5]
    table = build_path_table(sub, itertools.combinations(pool, 2), 2)
    w = np.full((2, 6), -np.inf)
    w[:, pool] = 0.5
    out = round_assignment(w, enh, sub, 2, table)
    best = min(mincost_oracle(sub, k, l, 2) for k, l in itertools.permutations(pool, 2)) * 4.0
    _, cost = PairCache(enh, sub, 2, table).evaluate(out)
    assert cost == best


def test_cpu_infeasible_match_repaired_to_second_best():
    sub = substrate_from(RING, cpu=[5, 50, 50, 50, 50, 50])
    enh = one_link_enhanced(cpu=(20.0, 1.0))
    table = build_path_table(sub, [(0, 1)], 2)
    w = np.full((2, 6), -np.inf)
    w[:, [0, 1]] = [[0.9, 0.1], [0.2, 0.8]]
    assert round_assignment(w, enh, sub, 2, table).tolist() == [1, 0]


def test_unrepairable_returns_none():
    sub = substrate_from(RING, cpu=[5, 5, 50, 50, 50, 50])
    enh = one_link_enhanced(cpu=(20.0, 20.0))
    w = np.full((2, 6), -np.inf)
    w[:, [0, 1]] = 0.5
    assert round_assignment(w, enh, sub, 2, {}) is None


# three disjoint routes 0 -> 4 of lengths 1, 2 and 3
THREE = [(0, 4), (0, 1), (1, 4), (0, 2), (2, 3), (3, 4)]


@pytest.mark.parametrize("eta, share", [(3, 5.0), (2, 10.0)])
def test_allocation_reserves_share_per_path(eta, share):
    sub = substrate_from(THREE, bw=20.0)
    enh = one_link_enhanced(b=10.0)
    table = build_path_table(sub, [(0, 4)], eta)
    before = sub.residual_bw.copy()
    emb = allocate_embedding(sub, enh, [0, 4], eta, table)
    assert emb.share[(0, 1)] == share
    ps = emb.link_paths[(0, 1)]
    assert ps.eta == eta
    used = before - sub.residual_bw
    for path in ps.links:
        assert all(used[e] == share for e in path)
    assert used.sum() == share * ps.length
    assert used.sum() == pytest.approx(sum(emb.entry.link_bw.values()))
    assert sub.used_cpu() == 20.0
    assert all(survives_link_failure(emb, e) for e in range(sub.num_links))


def test_allocation_rolls_back():
    sub = substrate_from(THREE, bw=4.0)
    enh = one_link_enhanced(b=10.0)
    table = build_path_table(sub, [(0, 4)], 3)
    with pytest.raises(ResourceError) as info:
        allocate_embedding(sub, enh, [0, 4], 3, table)
    assert info.value.resource[0] == "link"
    assert sub.used_bw() == 0 and sub.used_cpu() == 0
    with pytest.raises(ValueError):
        allocate_embedding(sub, enh, [0, 0], 3, table)


def test_corrupted_embedding_fails_on_shared_link():
    sub = substrate_from(THREE, bw=20.0)
    emb = allocate_embedding(sub, one_link_enhanced(), [0, 4], 3, build_path_table(sub, [(0, 4)], 3))
    ps = emb.link_paths[(0, 1)]
    shared = ps.links[0][0]
    ps.links[1] = ps.links[1] + [shared]
    assert not survives_link_failure(emb, shared)
    others = [e for e in range(sub.num_links) if e != shared]
    assert all(survives_link_failure(emb, e) for e in others)


def test_embed_pipeline_cost_is_recomputable():
    sub = waxman_generate(30, 90, seed=5)
    for seed in range(3):
        enh = fip_enhance(generate_vn_request(2, 4, seed=seed))
        fresh = sub.fresh()
        emb = embed_vn(enh, fresh)
        if emb is None:
            continue
        for (i, j), ps in emb.link_paths.items():
            k, l = sorted((int(emb.node_map[i]), int(emb.node_map[j])))
            check_pathset(sub, ps, 3, band=False)
            # residual filtering can only lengthen a path system
            assert ps.length >= mincost_oracle(sub, k, l, 3)
        assert emb.objective == pytest.approx(sum(ps.length * emb.demands[p] for p, ps in emb.link_paths.items()))
        assert all(survives_link_failure(emb, e) for e in range(sub.num_links))
