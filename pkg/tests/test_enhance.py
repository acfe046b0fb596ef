import itertools
import json

import numpy as np
import pytest

from cndsvne.enhance import (
    EnhancedVn,
    apply_recovery,
    brute_force_enhance,
    build_enhancement_lp,
    enhance_vn,
    envelope,
    fip_enhance,
    improve_plans,
    round_plans,
    swap_plans,
    verify_restorability,
)
from cndsvne.netmodel import VirtualNetwork, generate_vn_request

PATH = VirtualNetwork.from_links([10, 10, 10], {(0, 1): 5, (1, 2): 5})
TRIANGLE = VirtualNetwork.from_links([10, 10, 10], {(0, 1): 5, (1, 2): 5, (0, 2): 5})


def naive_optimum(vn, alpha):
    """Enumerate every tuple of pinned permutation matrices."""
    n = vn.n
    N = n + 1
    c0 = np.append(vn.cpu, 0.0)
    b0 = np.zeros((N, N))
    b0[:n, :n] = vn.bw
    per_k = []
    for k in range(n):
        mats = []
        for perm in itertools.permutations(range(N)):
            if perm[n] != k:
                continue
            x = np.zeros((N, N))
            x[np.arange(N), perm] = 1
            mats.append(x)
        per_k.append(mats)
    best = np.inf
    for combo in itertools.product(*per_k):
        c_e, b_e = c0.copy(), b0.copy()
        for x in combo:
            c_e = np.maximum(c_e, x.T @ c0)
            b_e = np.maximum(b_e, x.T @ b0 @ x)
        best = min(best, c_e.sum() + alpha * np.triu(b_e, 1).sum())
    return best


def test_path_and_triangle_values():
    assert brute_force_enhance(PATH).objective == 60
    assert fip_enhance(PATH).objective == 65
    assert enhance_vn(PATH).objective == 60
    for fn in (brute_force_enhance, fip_enhance, enhance_vn):
        assert fn(TRIANGLE).objective == 70


def test_single_node_needs_a_copy_of_its_cpu():
    vn = VirtualNetwork.from_links([7.0], {})
    for fn in (brute_force_enhance, fip_enhance, enhance_vn):
        e = fn(vn)
        assert e.objective == 14.0
        assert e.plans.tolist() == [[1, 0]]


def test_branch_and_bound_matches_naive_enumeration():
    for seed in range(25):
        vn = generate_vn_request(1, 3, seed=seed, cpu_set=(1.0, 2.0, 3.0), bw_low=1, bw_high=4)
        alpha = [0.5, 1.0, 2.0][seed % 3]
        assert brute_force_enhance(vn, alpha).objective == pytest.approx(naive_optimum(vn, alpha))


def test_brute_force_refuses_large_inputs():
    with pytest.raises(ValueError):
        brute_force_enhance(generate_vn_request(6, 6, seed=1))


def test_lp_size_for_one_node():
    lp = build_enhancement_lp(VirtualNetwork.from_links([7.0], {}))
    # 2 capacities, 4 bandwidths, 16 products, 4 assignment entries
    assert lp.num_vars == 26
    assert lp.binary.sum() == 20


def test_lp_optimum_below_brute_force_at_a_feasible_point():
    # the integral plan of the brute force is feasible for the relaxation
    vn = PATH
    lp = build_enhancement_lp(vn)
    best = brute_force_enhance(vn)
    n, N = vn.n, vn.n + 1
    z = np.zeros(lp.num_vars)
    z[lp.meta["blocks"]["c_e"]] = best.c_e
    z[lp.meta["blocks"]["b_e"]] = best.b_e.ravel()
    x = np.zeros((n, N, N))
    for k in range(n):
        x[k, np.arange(N), best.plans[k]] = 1
    z[lp.meta["blocks"]["x"]] = x.ravel()
    z[lp.meta["blocks"]["y"]] = np.einsum("kli,kmj->klimj", x, x).ravel()
    slack_ge = lp.m1 @ z - lp.r1
    slack_eq = lp.m2 @ z - lp.r2
    assert slack_ge.min() >= -1e-9
    assert np.abs(slack_eq).max() <= 1e-9
    # c_e costs 1 and each ordered b_e entry alpha / 2
    assert lp.objective(z) == pytest.approx(best.objective)


def test_round_plans_keeps_pin_and_follows_weights():
    n, N = 2, 3
    x = np.zeros((n, N, N))
    x[0] = [[0, 0.9, 0.1], [0.2, 0.1, 0.7], [1, 0, 0]]
    x[1] = [[0.8, 0.2, 0], [0.1, 0.1, 0.8], [0, 1, 0]]
    plans = round_plans(x)
    assert plans[0].tolist() == [1, 2, 0]
    assert plans[1].tolist() == [0, 2, 1]


def test_improve_plans_never_worse():
    for seed in range(10):
        vn = generate_vn_request(2, 5, seed=seed)
        start = swap_plans(vn.n)
        better = improve_plans(vn, start, 1.0)
        assert EnhancedVn(vn, *envelope(vn, better), better).objective <= fip_enhance(vn).objective + 1e-9


def test_apply_recovery_path_example():
    e = brute_force_enhance(PATH)
    for k in (1, 2, 3):
        a, c, b = apply_recovery(e, k)
        assert a[k - 1] == 0
        assert sorted(a.tolist()) == [0, 1, 2, 3]
        assert np.all(c <= e.c_e) and np.all(b <= e.b_e)
    with pytest.raises(IndexError):
        apply_recovery(e, 0)


def test_verify_restorability_flags_violations():
    e = enhance_vn(PATH)
    assert verify_restorability(e)
    shrunk = EnhancedVn(e.base, e.c_e.copy(), e.b_e.copy(), e.plans.copy())
    shrunk.c_e[-1] -= 1
    res = verify_restorability(shrunk)
    assert not res and res.violation[0] == "cpu"
    thin = EnhancedVn(e.base, e.c_e.copy(), e.b_e * 0.5, e.plans.copy())
    assert verify_restorability(thin).violation[0] == "bw"
    unpinned = EnhancedVn(e.base, e.c_e, e.b_e, np.tile(np.arange(4), (3, 1)))
    assert verify_restorability(unpinned).violation == ("plan", 1)


def test_document_round_trip():
    e = enhance_vn(TRIANGLE)
    doc = json.loads(json.dumps(e.to_document(base_ref="k3.brite")))
    back = EnhancedVn.from_document(doc)
    assert back.objective == e.objective
    assert np.array_equal(back.plans, e.plans)
    assert np.array_equal(back.b_e, e.b_e)
    assert doc["base_ref"] == "k3.brite"


def test_plan_matrix_is_permutation():
    e = fip_enhance(PATH)
    for k in (1, 2, 3):
        x = e.plan_matrix(k)
        assert np.all(x.sum(0) == 1) and np.all(x.sum(1) == 1)
        assert x[3, k - 1] == 1
