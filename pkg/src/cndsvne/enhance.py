"""Failure-dependent protection: enhance a virtual network with one backup slot.

Slots ``0..n-1`` initially host virtual nodes ``0..n-1``; slot ``n`` is the
empty backup. A recovery plan for the failure of slot ``k`` is a permutation
``perm`` of the ``n + 1`` slots with ``perm[n] == k``: the content of slot
``i`` moves to slot ``perm[i]`` (the permutation-matrix row ``i`` has its
one in column ``perm[i]``), so the failed slot ``k`` ends up empty.

The enhanced capacities are the elementwise maxima of the per-scenario loads
over the initial allocation and every recovery plan.
"""
from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from .cnd import CndConfig, cnd_solve
from .netmodel import VirtualNetwork, rng_stream
from .neurolp import GeneralFormLp, SolverConfig

log = logging.getLogger(__name__)

# Light defaults: the enhancement LP has n(n+1)^4 product variables, so the
# flow only refines particles before rounding.
ENHANCE_SOLVER = SolverConfig(integrator="explicit-euler", step_size=1e-3, max_steps=20)
ENHANCE_SWARM = CndConfig(swarm_size=6, outer_rounds=6, stall_rounds=3)

BRUTE_FORCE_MAX_N = 5
# largest n whose n! pinned plans per scenario are enumerated during polishing
BLOCK_SEARCH_MAX_N = 8


def _padded(vn: VirtualNetwork) -> Tuple[np.ndarray, np.ndarray]:
    n = vn.n
    c0 = np.zeros(n + 1)
    c0[:n] = vn.cpu
    b0 = np.zeros((n + 1, n + 1))
    b0[:n, :n] = vn.bw
    return c0, b0


def identity_plan(n: int) -> np.ndarray:
    return np.arange(n + 1)


def swap_plans(n: int) -> np.ndarray:
    """Failure-independent plans: failed node ``k`` moves to the backup slot."""
    plans = np.tile(np.arange(n + 1), (n, 1))
    for k in range(n):
        plans[k, k], plans[k, n] = n, k
    return plans


def scenario_loads(vn: VirtualNetwork, perm: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """CPU vector and bandwidth matrix per slot after applying ``perm``."""
    c0, b0 = _padded(vn)
    perm = np.asarray(perm)
    c = np.zeros_like(c0)
    c[perm] = c0
    b = np.zeros_like(b0)
    b[np.ix_(perm, perm)] = b0
    return c, b


def envelope(vn: VirtualNetwork, plans: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Elementwise maxima over the initial allocation and every plan."""
    c_e, b_e = _padded(vn)
    for perm in plans:
        c, b = scenario_loads(vn, perm)
        np.maximum(c_e, c, out=c_e)
        np.maximum(b_e, b, out=b_e)
    return c_e, b_e


def enhancement_objective(c_e: np.ndarray, b_e: np.ndarray, alpha: float) -> float:
    """Total CPU plus ``alpha`` times total bandwidth, each link counted once."""
    return float(c_e.sum() + alpha * np.triu(b_e, 1).sum())


@dataclass
class EnhancedVn:
    base: VirtualNetwork
    c_e: np.ndarray
    b_e: np.ndarray
    plans: np.ndarray
    alpha: float = 1.0
    method: str = ""
    fell_back: bool = False
    info: Dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def objective(self) -> float:
        return enhancement_objective(self.c_e, self.b_e, self.alpha)

    def plan_matrix(self, k: int) -> np.ndarray:
        """Permutation matrix of the plan for failure ``k`` (1-based)."""
        perm = self.plans[k - 1]
        x = np.zeros((self.n + 1, self.n + 1), dtype=int)
        x[np.arange(self.n + 1), perm] = 1
        return x

    def links(self) -> List[Tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.b_e, 1))
        return list(zip(iu.tolist(), ju.tolist()))

    def to_document(self, base_ref: Optional[str] = None) -> Dict:
        iu, ju = np.triu_indices(self.n + 1, 1)
        doc = {
            "base": {
                "cpu": self.base.cpu.tolist(),
                "links": [[i, j, float(self.base.bw[i, j])] for i, j in self.base.links],
            },
            "alpha": self.alpha,
            "method": self.method,
            "fell_back": self.fell_back,
            "c_e": self.c_e.tolist(),
            "b_e_upper": [[int(i), int(j), float(self.b_e[i, j])] for i, j in zip(iu, ju) if self.b_e[i, j] != 0],
            "plans": self.plans.tolist(),
            "objective": self.objective,
        }
        if base_ref is not None:
            doc["base_ref"] = base_ref
        return doc

    @classmethod
    def from_document(cls, doc: Dict) -> "EnhancedVn":
        base = VirtualNetwork.from_links(doc["base"]["cpu"], {(i, j): b for i, j, b in doc["base"]["links"]})
        n1 = base.n + 1
        b_e = np.zeros((n1, n1))
        for i, j, b in doc["b_e_upper"]:
            b_e[i, j] = b_e[j, i] = b
        plans = np.asarray(doc["plans"], dtype=int).reshape(base.n, n1)
        return cls(base, np.asarray(doc["c_e"], dtype=float), b_e, plans,
                   alpha=doc["alpha"], method=doc.get("method", ""), fell_back=doc.get("fell_back", False))


def _make(vn, plans, alpha, method, **kw) -> EnhancedVn:
    plans = np.asarray(plans, dtype=int).reshape(vn.n, vn.n + 1)
    c_e, b_e = envelope(vn, plans)
    return EnhancedVn(vn, c_e, b_e, plans, alpha=alpha, method=method, **kw)


# ----------------------------------------------------------------- LP model


def build_enhancement_lp(vn: VirtualNetwork, alpha: float = 1.0) -> GeneralFormLp:
    """Linearized enhancement problem in general form.

    Variables, stacked: ``c_e`` (n+1), ``b_e`` ((n+1)^2, row-major),
    ``y[k,l,i,m,j] = x^k[l,i] * x^k[m,j]`` (n (n+1)^4) and ``x^k[i,j]``
    (n (n+1)^2). All are nonnegative. Rows:

    * ``c_e[j] - sum_i c0[i] x^k[i,j] >= 0``
    * ``c_e >= c0`` and ``b_e >= b0`` (the initial allocation must fit)
    * ``b_e[i,j] - sum_{l,m} b0[l,m] y[k,l,i,m,j] >= 0``
    * ``x^k[l,i] + x^k[m,j] - 2 y[k,l,i,m,j] >= 0``
    * ``sum y[k,...] = (n+1)^2``, row and column sums of ``x^k`` equal 1,
      and ``x^k[n,k] = 1``.
    """
    n = vn.n
    N = n + 1
    c0, b0 = _padded(vn)
    n_c, n_b, n_y, n_x = N, N * N, n * N ** 4, n * N * N
    off_b = n_c
    off_y = off_b + n_b
    off_x = off_y + n_y
    nvar = off_x + n_x

    def xi(k, i, j):
        return off_x + (k * N + i) * N + j

    def yi(k, l, i, m, j):
        return off_y + (((k * N + l) * N + i) * N + m) * N + j

    ge_rows, ge_cols, ge_vals, ge_rhs = [], [], [], []
    row = 0

    # CPU cover per scenario
    k, i, j = np.meshgrid(np.arange(n), np.arange(N), np.arange(N), indexing="ij")
    r = row + (k * N + j)
    ge_rows += [r.ravel(), (row + np.arange(n * N))]
    ge_cols += [xi(k, i, j).ravel(), np.tile(np.arange(N), n)]
    ge_vals += [-c0[i].ravel(), np.ones(n * N)]
    ge_rhs.append(np.zeros(n * N))
    row += n * N

    # initial allocation cover
    ge_rows += [row + np.arange(N), row + N + np.arange(N * N)]
    ge_cols += [np.arange(N), off_b + np.arange(N * N)]
    ge_vals += [np.ones(N), np.ones(N * N)]
    ge_rhs += [c0, b0.ravel()]
    row += N + N * N

    # bandwidth cover per scenario
    kk, ll, ii, mm, jj = np.meshgrid(*(np.arange(s) for s in (n, N, N, N, N)), indexing="ij")
    coef = b0[ll, mm]
    nz = coef != 0
    ge_rows += [(row + (kk * N + ii) * N + jj)[nz], row + np.arange(n * N * N)]
    ge_cols += [yi(kk, ll, ii, mm, jj)[nz], off_b + np.tile(np.arange(N * N), n)]
    ge_vals += [-coef[nz], np.ones(n * N * N)]
    ge_rhs.append(np.zeros(n * N * N))
    row += n * N * N

    # product coupling
    flat = np.arange(n_y)
    ycols = yi(kk, ll, ii, mm, jj).ravel()
    ge_rows += [row + flat, row + flat, row + flat]
    ge_cols += [ycols, xi(kk, ll, ii).ravel(), xi(kk, mm, jj).ravel()]
    ge_vals += [np.full(n_y, -2.0), np.ones(n_y), np.ones(n_y)]
    ge_rhs.append(np.zeros(n_y))
    row += n_y
    n_ge = row

    eq_rows, eq_cols, eq_vals, eq_rhs = [], [], [], []
    row = 0
    eq_rows.append(row + kk.ravel())
    eq_cols.append(ycols)
    eq_vals.append(np.ones(n_y))
    eq_rhs.append(np.full(n, float(N * N)))
    row += n
    k, i, j = (a.ravel() for a in np.meshgrid(np.arange(n), np.arange(N), np.arange(N), indexing="ij"))
    eq_rows += [row + k * N + i, row + n * N + k * N + j]
    eq_cols += [xi(k, i, j), xi(k, i, j)]
    eq_vals += [np.ones(k.size), np.ones(k.size)]
    eq_rhs += [np.ones(n * N), np.ones(n * N)]
    row += 2 * n * N
    eq_rows.append(row + np.arange(n))
    eq_cols.append(xi(np.arange(n), n, np.arange(n)))
    eq_vals.append(np.ones(n))
    eq_rhs.append(np.ones(n))
    row += n
    n_eq = row

    a_ge = sp.csr_matrix(
        (np.concatenate(ge_vals), (np.concatenate(ge_rows), np.concatenate(ge_cols))), shape=(n_ge, nvar)
    )
    a_eq = sp.csr_matrix(
        (np.concatenate(eq_vals), (np.concatenate(eq_rows), np.concatenate(eq_cols))), shape=(n_eq, nvar)
    )
    cost = np.zeros(nvar)
    cost[:n_c] = 1.0
    cost[off_b:off_y] = alpha / 2.0
    binary = np.zeros(nvar, dtype=bool)
    binary[off_y:] = True
    meta = {
        "kind": "enhancement",
        "n": n,
        "blocks": {
            "c_e": slice(0, off_b),
            "b_e": slice(off_b, off_y),
            "y": slice(off_y, off_x),
            "x": slice(off_x, nvar),
        },
    }
    return GeneralFormLp.from_rows(cost, a_ge, np.concatenate(ge_rhs), a_eq, np.concatenate(eq_rhs),
                                   binary=binary, meta=meta)


def round_plans(x_blocks: np.ndarray) -> np.ndarray:
    """Per scenario, the max-weight permutation honoring the pin ``x^k[n,k] = 1``."""
    n = x_blocks.shape[0]
    N = n + 1
    plans = np.empty((n, N), dtype=int)
    for k in range(n):
        rows = np.arange(n)
        cols = np.array([c for c in range(N) if c != k])
        w = np.nan_to_num(x_blocks[k][np.ix_(rows, cols)], nan=0.0, posinf=1e9, neginf=-1e9)
        ri, ci = linear_sum_assignment(w, maximize=True)
        plans[k, rows[ri]] = cols[ci]
        plans[k, n] = k
    return plans


def improve_plans(vn: VirtualNetwork, plans: np.ndarray, alpha: float, max_passes: int = 50) -> np.ndarray:
    """Best-improvement pairwise-swap search on each scenario's plan.

    Swaps exchange the targets of two unpinned rows, so the pin is kept and
    every intermediate tuple is valid. The exact envelope objective never
    increases.
    """
    n = vn.n
    plans = np.array(plans, dtype=int)
    if n < 2:
        return plans
    c0, b0 = _padded(vn)
    iu = np.triu_indices(n + 1, 1)
    # scenario stack; row 0 is the initial allocation
    cs = np.zeros((n + 1, n + 1))
    bs = np.zeros((n + 1, n + 1, n + 1))
    cs[0], bs[0] = c0, b0
    for k in range(n):
        cs[k + 1], bs[k + 1] = scenario_loads(vn, plans[k])

    def value(c, b):
        return c.sum() + alpha * b[iu].sum()

    current = value(cs.max(0), bs.max(0))
    pairs = list(itertools.combinations(range(n), 2))
    for _ in range(max_passes):
        improved = False
        for k in range(n):
            others = np.delete(np.arange(n + 1), k + 1)
            cex = cs[others].max(0)
            bex = bs[others].max(0)
            best_val, best_perm = current, None
            for a, b in pairs:
                perm = plans[k].copy()
                perm[a], perm[b] = perm[b], perm[a]
                c = np.zeros(n + 1)
                c[perm] = c0
                bm = np.zeros((n + 1, n + 1))
                bm[np.ix_(perm, perm)] = b0
                val = value(np.maximum(cex, c), np.maximum(bex, bm))
                if val < best_val - 1e-9:
                    best_val, best_perm = val, perm
            if best_perm is not None:
                plans[k] = best_perm
                cs[k + 1], bs[k + 1] = scenario_loads(vn, best_perm)
                current = best_val
                improved = True
        if not improved:
            break
    return plans


@functools.lru_cache(maxsize=64)
def _pinned_options(n: int, k: int) -> np.ndarray:
    free = [s for s in range(n + 1) if s != k]
    opts = np.array([list(p) + [k] for p in itertools.permutations(free)], dtype=int)
    opts.setflags(write=False)
    return opts


def block_descent(vn: VirtualNetwork, plans: np.ndarray, alpha: float, max_passes: int = 20) -> np.ndarray:
    """Exact per-scenario minimization, cycled until no scenario improves.

    With the other scenarios fixed, every pinned permutation of scenario k
    is scored against their exclusive envelope and the best one is kept.
    Falls back to :func:`improve_plans` above ``BLOCK_SEARCH_MAX_N``.
    """
    n = vn.n
    plans = np.array(plans, dtype=int)
    if n < 2:
        return plans
    if n > BLOCK_SEARCH_MAX_N:
        return improve_plans(vn, plans, alpha)
    c0, b0 = _padded(vn)
    links = [(i, j, b0[i, j]) for i, j in zip(*np.nonzero(np.triu(b0, 1)))]
    cs = np.zeros((n + 1, n + 1))
    bs = np.zeros((n + 1, n + 1, n + 1))
    cs[0], bs[0] = c0, b0
    for k in range(n):
        cs[k + 1], bs[k + 1] = scenario_loads(vn, plans[k])
    for _ in range(max_passes):
        improved = False
        for k in range(n):
            others = np.delete(np.arange(n + 1), k + 1)
            cex, bex = cs[others].max(0), bs[others].max(0)
            opts = _pinned_options(n, k)
            # envelope growth each option forces on top of the other scenarios
            cost = np.maximum(c0 - cex[opts], 0.0).sum(axis=1)
            for i, j, b in links:
                cost += alpha * np.maximum(b - bex[opts[:, i], opts[:, j]], 0.0)
            cur = plans[k]
            cur_cost = np.maximum(c0 - cex[cur], 0.0).sum() + alpha * sum(
                max(b - bex[cur[i], cur[j]], 0.0) for i, j, b in links)
            best = int(np.argmin(cost))
            if cost[best] < cur_cost - 1e-9:
                plans[k] = opts[best]
                cs[k + 1], bs[k + 1] = scenario_loads(vn, plans[k])
                improved = True
        if not improved:
            break
    return plans


def greedy_plans(vn: VirtualNetwork, order: Sequence[int], alpha: float) -> np.ndarray:
    """Add scenarios in ``order``, each taking its cheapest plan on the partial envelope."""
    n = vn.n
    c0, b0 = _padded(vn)
    links = [(i, j, b0[i, j]) for i, j in zip(*np.nonzero(np.triu(b0, 1)))]
    c_env, b_env = c0.copy(), b0.copy()
    plans = swap_plans(n)
    for k in order:
        opts = _pinned_options(n, int(k))
        cost = np.maximum(c0 - c_env[opts], 0.0).sum(axis=1)
        for i, j, b in links:
            cost += alpha * np.maximum(b - b_env[opts[:, i], opts[:, j]], 0.0)
        plans[k] = opts[int(np.argmin(cost))]
        c, b = scenario_loads(vn, plans[k])
        np.maximum(c_env, c, out=c_env)
        np.maximum(b_env, b, out=b_env)
    return plans


def _incumbent(vn: VirtualNetwork, alpha: float, seed: int, starts: int = 3) -> np.ndarray:
    """Best of block descent from the swap plans and from greedy constructions."""
    n = vn.n
    best = block_descent(vn, swap_plans(n), alpha)
    if n < 2 or n > BLOCK_SEARCH_MAX_N:
        return best
    best_val = enhancement_objective(*envelope(vn, best), alpha)
    rng = rng_stream(seed, "enhance-orders")
    orders = [np.arange(n)] + [rng.permutation(n) for _ in range(starts)]
    for order in orders:
        plans = block_descent(vn, greedy_plans(vn, order, alpha), alpha)
        val = enhancement_objective(*envelope(vn, plans), alpha)
        if val < best_val - 1e-9:
            best, best_val = plans, val
    return best


def plan_rounder(vn: VirtualNetwork, lp: GeneralFormLp, alpha: float, polish: bool = True):
    """Rounding map for the swarm: relaxed z -> (objective, plans)."""
    n = vn.n
    xs = lp.meta["blocks"]["x"]
    seen: Dict[bytes, Tuple[float, np.ndarray]] = {}

    def rounder(z):
        if not np.all(np.isfinite(z)):
            return math.inf, None
        plans = round_plans(z[xs].reshape(n, n + 1, n + 1))
        key = plans.tobytes()
        if key not in seen:
            out = block_descent(vn, plans, alpha) if polish else plans
            seen[key] = (enhancement_objective(*envelope(vn, out), alpha), out)
        value, out = seen[key]
        return value, out.copy()

    return rounder


# ---------------------------------------------------------------- strategies


def fip_enhance(vn: VirtualNetwork, alpha: float = 1.0) -> EnhancedVn:
    """One backup node that directly substitutes whichever node fails."""
    return _make(vn, swap_plans(vn.n), alpha, "fip")


def enhance_vn(
    vn: VirtualNetwork,
    alpha: float = 1.0,
    solver_config: Optional[SolverConfig] = None,
    cnd_config: Optional[CndConfig] = None,
) -> EnhancedVn:
    """Failure-dependent enhancement via the collective neurodynamic solver.

    Particles are refined on the linearized LP, rounded per scenario by
    max-weight assignment and polished by exact per-scenario descent. The
    incumbent is the best of the polished swap plans and a few greedy
    constructions, so the result never exceeds FIP.
    """
    solver_config = solver_config or ENHANCE_SOLVER
    cnd_config = cnd_config or ENHANCE_SWARM
    incumbent = _incumbent(vn, alpha, cnd_config.seed)
    inc_val = enhancement_objective(*envelope(vn, incumbent), alpha)
    lp = build_enhancement_lp(vn, alpha)
    try:
        result = cnd_solve(lp, cnd_config, solver_config, plan_rounder(vn, lp, alpha))
    except (FloatingPointError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
        log.warning("enhancement solver failed (%s); using FIP plans", exc)
        return _make(vn, swap_plans(vn.n), alpha, "cnd", fell_back=True)
    if result.solution is None or not math.isfinite(result.value):
        log.warning("enhancement solver produced no plan; using FIP plans")
        return _make(vn, swap_plans(vn.n), alpha, "cnd", fell_back=True)
    plans = result.solution
    if inc_val < result.value:
        plans = incumbent
    out = _make(vn, plans, alpha, "cnd")
    out.info["cnd_rounds"] = result.report.rounds
    out.info["cnd_value"] = result.value
    return out


def brute_force_enhance(vn: VirtualNetwork, alpha: float = 1.0) -> EnhancedVn:
    """Globally optimal plan tuple by branch and bound over pinned permutations."""
    n = vn.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    N = n + 1
    iu = np.triu_indices(N, 1)
    c0, b0 = _padded(vn)

    def vec(perm):
        c, b = scenario_loads(vn, perm)
        return np.concatenate([c, alpha * b[iu]])

    options = [_pinned_options(n, k) for k in range(n)]
    vecs = [np.array([vec(p) for p in opts]) for opts in options]
    base = np.concatenate([c0, alpha * b0[iu]])

    best_plans = swap_plans(n)
    best_val = float(np.maximum.reduce([base] + [vec(p) for p in best_plans]).sum())
    order = list(range(n))

    def bound(env, depth):
        lb = env.sum()
        for k in order[depth:]:
            lb = max(lb, np.maximum(env, vecs[k]).sum(axis=1).min())
        return lb

    chosen = [0] * n

    def dfs(depth, env):
        nonlocal best_val, best_plans
        if depth == n:
            val = float(env.sum())
            if val < best_val - 1e-9:
                best_val = val
                best_plans = np.array([options[k][chosen[k]] for k in range(n)])
            return
        k = order[depth]
        cand = np.maximum(env, vecs[k])
        vals = cand.sum(axis=1)
        for o in np.argsort(vals, kind="stable"):
            if vals[o] >= best_val - 1e-9:
                break
            if depth + 1 < n and bound(cand[o], depth + 1) >= best_val - 1e-9:
                continue
            chosen[k] = o
            dfs(depth + 1, cand[o])

    dfs(0, base)
    return _make(vn, best_plans, alpha, "brute")


# ----------------------------------------------------------------- recovery


def apply_recovery(enhanced: EnhancedVn, k: int):
    """Allocation, CPU and bandwidth after failure ``k`` (1-based).

    ``A[j]`` is the 1-based virtual node hosted by slot ``j`` (0 = empty).
    """
    n = enhanced.n
    if not 1 <= k <= n:
        raise IndexError(f"failure index {k} outside 1..{n}")
    perm = enhanced.plans[k - 1]
    a0 = np.append(np.arange(1, n + 1), 0)
    a = np.zeros(n + 1, dtype=int)
    a[perm] = a0
    c, b = scenario_loads(enhanced.base, perm)
    return a, c, b


@dataclass
class Restorability:
    ok: bool
    violation: Optional[Tuple] = None

    def __bool__(self) -> bool:
        return self.ok


def verify_restorability(enhanced: EnhancedVn) -> Restorability:
    """Check plan validity and that every scenario fits the envelope.

    Violations are reported as ``("plan", k)``, ``("cpu", k, slot)`` or
    ``("bw", k, i, j)`` with ``k`` 1-based and ``k = 0`` the initial
    allocation.
    """
    n = enhanced.n
    N = n + 1
    plans = np.asarray(enhanced.plans)
    if plans.shape != (n, N):
        return Restorability(False, ("plan", 0))
    scenarios = [np.arange(N)]
    for k in range(n):
        perm = plans[k]
        if not np.array_equal(np.sort(perm), np.arange(N)) or perm[n] != k:
            return Restorability(False, ("plan", k + 1))
        scenarios.append(perm)
    for k, perm in enumerate(scenarios):
        c, b = scenario_loads(enhanced.base, perm)
        bad = np.nonzero(c > enhanced.c_e)[0]
        if bad.size:
            return Restorability(False, ("cpu", k, int(bad[0]) + 1))
        bi, bj = np.nonzero(np.triu(b > enhanced.b_e, 1) | np.triu((b > enhanced.b_e).T, 1))
        if bi.size:
            return Restorability(False, ("bw", k, int(bi[0]) + 1, int(bj[0]) + 1))
    return Restorability(True)
