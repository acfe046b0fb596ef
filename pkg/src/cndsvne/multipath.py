"""Edge-disjoint multi-path embedding of enhanced virtual networks.

Every enhanced virtual link of demand ``b`` is carried by ``eta``
edge-disjoint substrate paths, each reserving ``b / (eta - 1)``, so the loss
of any single substrate link leaves at least ``b`` in place.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from .cnd import CndConfig, cnd_solve
from .enhance import EnhancedVn
from .netmodel import LedgerEntry, ResourceError, SubstrateNetwork, allocate
from .neurolp import GeneralFormLp, SolverConfig

log = logging.getLogger(__name__)

DEFAULT_ETA = 3
# residual comparisons tolerate accumulated rounding of this relative size
_REL_TOL = 1e-12

Pair = Tuple[int, int]


@dataclass
class PathSet:
    k: int
    l: int
    paths: List[List[int]]
    links: List[List[int]]
    length: int
    band: float

    @property
    def eta(self) -> int:
        return len(self.paths)

    def all_links(self) -> List[int]:
        return [e for p in self.links for e in p]

    def to_document(self) -> Dict:
        return {"k": self.k, "l": self.l, "paths": self.paths, "links": self.links,
                "length": self.length, "band": self.band}


def _key(k: int, l: int) -> Pair:
    return (k, l) if k < l else (l, k)


def disjoint_paths(
    substrate: SubstrateNetwork,
    k: int,
    l: int,
    eta: int,
    min_band: float = 0.0,
    residual_bw: Optional[np.ndarray] = None,
) -> Optional[PathSet]:
    """``eta`` edge-disjoint ``k``-``l`` paths of least total hop count, or ``None``.

    Successive shortest paths with Dijkstra on reduced costs. Each undirected
    unit-capacity link carries a signed flow in ``{-1, 0, 1}``; pushing
    against existing flow cancels it at cost ``-1``.
    """
    if k == l:
        raise ValueError("endpoints must differ")
    if eta < 2:
        raise ValueError("eta must be at least 2")
    res = substrate.residual_bw if residual_bw is None else residual_bw
    m = substrate.num_nodes
    adj = [[(b, e) for b, e in substrate.adjacency[a] if res[e] >= min_band] for a in range(m)]
    if len(adj[k]) < eta or len(adj[l]) < eta:
        return None
    flow: Dict[int, int] = {}
    pot = [0.0] * m
    for _ in range(eta):
        dist = [math.inf] * m
        pred: List[Optional[Tuple[int, int, int]]] = [None] * m
        dist[k] = 0.0
        heap = [(0.0, k)]
        done = [False] * m
        while heap:
            d, a = heapq.heappop(heap)
            if done[a]:
                continue
            done[a] = True
            if a == l:
                break
            for b, e in adj[a]:
                if done[b]:
                    continue
                direction = 1 if a < b else -1
                f = flow.get(e, 0)
                if f == direction:
                    continue
                cost = -1.0 if f == -direction else 1.0
                nd = d + cost + pot[a] - pot[b]
                if nd < dist[b] - 1e-12:
                    dist[b] = nd
                    pred[b] = (a, e, direction)
                    heapq.heappush(heap, (nd, b))
        if math.isinf(dist[l]):
            return None
        dl = dist[l]
        # nodes not settled before the sink are capped at its distance
        for v in range(m):
            pot[v] += dist[v] if done[v] else dl
        v = l
        while v != k:
            a, e, direction = pred[v]
            f = flow.get(e, 0) + direction
            if f:
                flow[e] = f
            else:
                del flow[e]
            v = a
    out: Dict[int, List[Tuple[int, int]]] = {}
    for e, f in flow.items():
        u, v = substrate.links[e]
        a, b = (u, v) if f > 0 else (v, u)
        out.setdefault(a, []).append((b, e))
    for arcs in out.values():
        arcs.sort()
    paths, links = [], []
    for _ in range(eta):
        node, seq, used = k, [k], []
        while node != l:
            nxt, e = out[node].pop(0)
            seq.append(nxt)
            used.append(e)
            node = nxt
        paths.append(seq)
        links.append(used)
    union = [e for p in links for e in p]
    band = float(min(res[e] for e in union))
    return PathSet(k, l, paths, links, len(union), band)


def build_path_table(
    substrate: SubstrateNetwork,
    pairs: Iterable[Pair],
    eta: int,
    min_band: float = 0.0,
    residual_bw: Optional[np.ndarray] = None,
) -> Dict[Pair, Optional[PathSet]]:
    """Path systems keyed by ``(min, max)``; ``None`` marks an infeasible pair."""
    table: Dict[Pair, Optional[PathSet]] = {}
    for k, l in pairs:
        key = _key(k, l)
        if key not in table:
            table[key] = disjoint_paths(substrate, key[0], key[1], eta, min_band, residual_bw)
    return table


def candidate_nodes(enhanced: EnhancedVn, substrate: SubstrateNetwork, cap: Optional[int] = None) -> List[np.ndarray]:
    """Per slot, the CPU-feasible substrate nodes ranked by residual CPU times adjacent residual bandwidth."""
    N = enhanced.n + 1
    cap = 2 * N if cap is None else cap
    adj_bw = np.zeros(substrate.num_nodes)
    for e, (u, v) in enumerate(substrate.links):
        adj_bw[u] += substrate.residual_bw[e]
        adj_bw[v] += substrate.residual_bw[e]
    score = substrate.residual_cpu * adj_bw
    order = np.lexsort((np.arange(substrate.num_nodes), -score))
    out = []
    for i in range(N):
        feasible = order[substrate.residual_cpu[order] >= enhanced.c_e[i]]
        out.append(np.sort(feasible[:cap]))
    return out


def _virtual_links(enhanced: EnhancedVn) -> List[Tuple[int, int, float]]:
    return [(i, j, float(enhanced.b_e[i, j])) for i, j in enhanced.links()]


def build_embedding_lp(
    enhanced: EnhancedVn,
    substrate: SubstrateNetwork,
    eta: int,
    table: Dict[Pair, Optional[PathSet]],
    candidates: Sequence[Sequence[int]],
) -> GeneralFormLp:
    """Linearized embedding problem over placement ``x[i,k]`` and pair variables ``y[i,j,k,l]``.

    A pair variable exists for every enhanced link ``(i, j)`` and candidate
    pair ``k != l`` with a path system in ``table``. Rows:

    * ``(cpu_k - c_e[i]) x[i,k] >= 0`` and ``(band_kl - b/(eta-1)) y >= 0``
    * ``x[i,k] - y >= 0`` and ``x[j,l] - y >= 0``
    * ``sum_{k,l} y[i,j,k,l] = 1`` per enhanced link
    * ``sum_k x[i,k] = 1`` per slot and ``sum_i x[i,k] <= 1`` per node.
    """
    N = enhanced.n + 1
    if len(candidates) != N:
        raise ValueError("one candidate set per slot required")
    for i, cand in enumerate(candidates):
        if len(cand) == 0:
            raise ValueError(f"slot {i} has no candidate substrate node")
    x_index: List[Tuple[int, int]] = [(i, int(k)) for i in range(N) for k in candidates[i]]
    x_pos = {key: p for p, key in enumerate(x_index)}
    vlinks = _virtual_links(enhanced)
    y_index: List[Tuple[int, int, int, int]] = []
    y_cost, y_slack = [], []
    for i, j, b in vlinks:
        share = b / (eta - 1)
        for k in candidates[i]:
            for l in candidates[j]:
                if k == l:
                    continue
                ps = table.get(_key(int(k), int(l)))
                if ps is None:
                    continue
                y_index.append((i, j, int(k), int(l)))
                y_cost.append(ps.length * b)
                y_slack.append(ps.band - share)
    nx_, ny = len(x_index), len(y_index)
    nvar = nx_ + ny
    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def add(row_cols, row_vals, b):
        nonlocal r
        rows.extend([r] * len(row_cols))
        cols.extend(row_cols)
        vals.extend(row_vals)
        rhs.append(b)
        r += 1

    for p, (i, k) in enumerate(x_index):
        add([p], [substrate.residual_cpu[k] - enhanced.c_e[i]], 0.0)
    for q, slack in enumerate(y_slack):
        add([nx_ + q], [slack], 0.0)
    for q, (i, j, k, l) in enumerate(y_index):
        add([x_pos[(i, k)], nx_ + q], [1.0, -1.0], 0.0)
        add([x_pos[(j, l)], nx_ + q], [1.0, -1.0], 0.0)
    by_node: Dict[int, List[int]] = {}
    for p, (i, k) in enumerate(x_index):
        by_node.setdefault(k, []).append(p)
    for k in sorted(by_node):
        add(by_node[k], [-1.0] * len(by_node[k]), -1.0)
    a_ge = sp.csr_matrix((vals, (rows, cols)), shape=(r, nvar))
    b_ge = np.array(rhs)

    rows, cols, vals, rhs = [], [], [], []
    r = 0
    by_link: Dict[Pair, List[int]] = {(i, j): [] for i, j, _ in vlinks}
    for q, (i, j, _, _) in enumerate(y_index):
        by_link[(i, j)].append(nx_ + q)
    for i, j, _ in vlinks:
        add(by_link[(i, j)], [1.0] * len(by_link[(i, j)]), 1.0)
    by_slot: Dict[int, List[int]] = {i: [] for i in range(N)}
    for p, (i, _) in enumerate(x_index):
        by_slot[i].append(p)
    for i in range(N):
        add(by_slot[i], [1.0] * len(by_slot[i]), 1.0)
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(r, nvar))

    cost = np.concatenate([np.zeros(nx_), np.asarray(y_cost, dtype=float)])
    meta = {
        "kind": "embedding",
        "slots": N,
        "x_index": x_index,
        "y_index": y_index,
        "x": slice(0, nx_),
        "y": slice(nx_, nvar),
    }
    return GeneralFormLp.from_rows(cost, a_ge, b_ge, a_eq, np.array(rhs),
                                   binary=np.ones(nvar, dtype=bool), meta=meta)


def placement_weights(lp: GeneralFormLp, z: np.ndarray, num_nodes: int) -> np.ndarray:
    """Scatter the relaxed placement block into a slots x substrate-nodes matrix."""
    w = np.full((lp.meta["slots"], num_nodes), -np.inf)
    xs = z[lp.meta["x"]]
    for p, (i, k) in enumerate(lp.meta["x_index"]):
        w[i, k] = xs[p]
    return w


class PairCache:
    """Path-system lookups for one request, shared by every rounding call.

    Pairs missing from the table are computed on first use. A system whose
    band is below a link's share does not qualify for that link.
    """

    def __init__(self, enhanced, substrate, eta, table, min_band: float = 0.0):
        self.enhanced = enhanced
        self.substrate = substrate
        self.eta = eta
        self.table = table
        self.min_band = min_band
        self.vlinks = _virtual_links(enhanced)

    def get(self, k: int, l: int, share: float) -> Optional[PathSet]:
        key = (k, l) if k < l else (l, k)
        try:
            ps = self.table[key]
        except KeyError:
            ps = self.table[key] = disjoint_paths(self.substrate, key[0], key[1], self.eta, self.min_band)
        if ps is None or ps.band < share:
            return None
        return ps

    def evaluate(self, node_map) -> Tuple[int, float]:
        """Violation count and true cost of a placement."""
        c_e, res = self.enhanced.c_e, self.substrate.residual_cpu
        viol = sum(1 for i, k in enumerate(node_map) if res[k] < c_e[i])
        cost = 0.0
        eta = self.eta
        for i, j, b in self.vlinks:
            ps = self.get(int(node_map[i]), int(node_map[j]), b / (eta - 1))
            if ps is None:
                viol += 1
            else:
                cost += ps.length * b
        return viol, cost


def embedding_cost(node_map, enhanced, substrate, eta, table) -> float:
    """True objective of a placement, ``inf`` when it is infeasible."""
    viol, cost = PairCache(enhanced, substrate, eta, table).evaluate(node_map)
    return math.inf if viol else cost


def _moves(node_map: np.ndarray, pool: Sequence[int]):
    used = set(node_map.tolist())
    for i in range(len(node_map)):
        for k in pool:
            if k not in used:
                cand = node_map.copy()
                cand[i] = k
                yield cand
    for a, b in itertools.combinations(range(len(node_map)), 2):
        cand = node_map.copy()
        cand[a], cand[b] = cand[b], cand[a]
        yield cand


def round_assignment(
    weights: np.ndarray,
    enhanced: EnhancedVn,
    substrate: SubstrateNetwork,
    eta: int,
    table: Dict[Pair, Optional[PathSet]],
    repair_rounds: int = 20,
    cache: Optional[PairCache] = None,
) -> Optional[np.ndarray]:
    """Max-weight matching of slots to substrate nodes, then tie-break and repair.

    ``weights`` is slots x substrate nodes, ``-inf`` where a node is not a
    candidate. Among placements of maximal relaxed weight, local moves lower
    the true cost. A CPU or bandwidth violation triggers a bounded search
    over relocations and swaps within the candidate nodes; ``None`` means
    the repair failed.
    """
    w = np.asarray(weights, dtype=float)
    N = w.shape[0]
    rows = np.arange(N)
    finite = np.isfinite(w)
    if not finite.any(axis=1).all():
        return None
    big = (np.abs(w[finite]).max() + 1.0) * (N + 1) * 4
    wf = np.where(finite, w, -big)
    ri, ci = linear_sum_assignment(wf, maximize=True)
    node_map = np.empty(N, dtype=int)
    node_map[ri] = ci
    if not finite[rows, node_map].all():
        return None
    cache = cache or PairCache(enhanced, substrate, eta, table)
    pool = [int(k) for k in np.nonzero(finite.any(axis=0))[0]]
    best_w = float(wf[rows, node_map].sum())
    tol = 1e-9 * max(1.0, abs(best_w))
    viol, cost = cache.evaluate(node_map)

    # tie-break among maximum-weight placements
    improved = viol == 0
    while improved:
        improved = False
        for cand in _moves(node_map, pool):
            if wf[rows, cand].sum() < best_w - tol:
                continue
            v2, c2 = cache.evaluate(cand)
            if v2 == 0 and c2 < cost - 1e-9:
                node_map, cost, improved = cand, c2, True
                break

    # feasibility repair: fewest violations, then highest weight, then cost
    for _ in range(repair_rounds):
        if viol == 0:
            break
        best = None
        for cand in _moves(node_map, pool):
            v2, c2 = cache.evaluate(cand)
            score = (v2, -float(wf[rows, cand].sum()), c2)
            if best is None or score < best[0]:
                best = (score, cand)
        if best is None or best[0][0] >= viol:
            break
        node_map = best[1]
        viol = best[0][0]
    return node_map if viol == 0 else None


def polish_assignment(node_map, enhanced, substrate, eta, table, pool, max_iter: int = 50,
                      cache: Optional[PairCache] = None):
    """First-improvement relocation/swap search on the true cost of a feasible placement."""
    cache = cache or PairCache(enhanced, substrate, eta, table)
    viol, cost = cache.evaluate(node_map)
    if viol:
        return node_map
    for _ in range(max_iter):
        for cand in _moves(node_map, pool):
            v2, c2 = cache.evaluate(cand)
            if v2 == 0 and c2 < cost - 1e-9:
                node_map, cost = cand, c2
                break
        else:
            break
    return node_map


@dataclass
class Embedding:
    vn_id: int
    node_map: np.ndarray
    link_paths: Dict[Pair, PathSet]
    share: Dict[Pair, float]
    demands: Dict[Pair, float]
    eta: int
    objective: float
    entry: Optional[LedgerEntry] = None
    info: Dict = field(default_factory=dict)

    def to_document(self) -> Dict:
        return {
            "vn_id": self.vn_id,
            "eta": self.eta,
            "objective": self.objective,
            "node_map": [int(k) for k in self.node_map],
            "links": [
                {"i": i, "j": j, "demand": self.demands[(i, j)], "share": self.share[(i, j)],
                 "paths": ps.paths, "substrate_links": ps.links}
                for (i, j), ps in sorted(self.link_paths.items())
            ],
            "cpu": {str(k): v for k, v in sorted(self.entry.node_cpu.items())} if self.entry else {},
        }


def allocate_embedding(
    substrate: SubstrateNetwork,
    enhanced: EnhancedVn,
    node_map: Sequence[int],
    eta: int,
    table: Dict[Pair, Optional[PathSet]],
    key: object = None,
) -> Embedding:
    """Reserve envelope CPU and ``b / (eta - 1)`` on every path, all or nothing.

    Virtual links are placed in descending demand. When the tabled path
    system no longer fits the pending residuals, it is recomputed on links
    that still have room. Raises ``ResourceError`` naming the first violated
    resource; the substrate is left untouched in that case.
    """
    node_map = np.asarray(node_map, dtype=int)
    N = enhanced.n + 1
    if len(node_map) != N or len(set(node_map.tolist())) != N:
        raise ValueError("node map must be injective over all slots")
    key = ("vn", enhanced.base.vn_id) if key is None else key
    node_cpu = {}
    for i, k in enumerate(node_map):
        if substrate.residual_cpu[k] < enhanced.c_e[i]:
            raise ResourceError(f"slot {i} does not fit node {k}", ("node", int(k)))
        node_cpu[int(k)] = float(enhanced.c_e[i])
    shares_on: Dict[int, List[float]] = {}
    vlinks = sorted(_virtual_links(enhanced), key=lambda t: (-t[2], t[0], t[1]))
    link_paths, share_of, demands = {}, {}, {}

    def fits(e, share):
        need = math.fsum(shares_on.get(e, []) + [share])
        return substrate.residual_bw[e] >= need

    for i, j, b in vlinks:
        share = b / (eta - 1)
        k, l = int(node_map[i]), int(node_map[j])
        ps = table.get(_key(k, l))
        if ps is None or not all(fits(e, share) for e in ps.all_links()):
            pending = substrate.residual_bw.copy()
            for e, lst in shares_on.items():
                pending[e] = substrate.residual_bw[e] - math.fsum(lst)
            ps2 = disjoint_paths(substrate, min(k, l), max(k, l), eta, min_band=share, residual_bw=pending)
            if ps2 is None or not all(fits(e, share) for e in ps2.all_links()):
                bad = None
                if ps is not None:
                    bad = next((e for e in ps.all_links() if not fits(e, share)), None)
                raise ResourceError(
                    f"virtual link {i}-{j} ({b}) has no {eta} disjoint paths with {share} free",
                    ("link", -1 if bad is None else int(bad)),
                )
            ps = ps2
        for e in ps.all_links():
            shares_on.setdefault(e, []).append(share)
        link_paths[(i, j)] = ps
        share_of[(i, j)] = share
        demands[(i, j)] = b
    entry = LedgerEntry(key, node_cpu, {e: math.fsum(v) for e, v in sorted(shares_on.items())})
    allocate(substrate, entry)
    objective = math.fsum(ps.length * demands[p] for p, ps in link_paths.items())
    return Embedding(enhanced.base.vn_id, node_map, link_paths, share_of, demands, eta, objective, entry)


def survives_link_failure(embedding: Embedding, link: int) -> bool:
    """True when every virtual link keeps at least its demand on paths avoiding ``link``."""
    for p, ps in embedding.link_paths.items():
        kept = math.fsum(embedding.share[p] for path in ps.links if link not in path)
        demand = embedding.demands[p]
        if kept < demand * (1 - _REL_TOL):
            return False
    return True


# ------------------------------------------------------------ full pipeline


EMBED_SOLVER = SolverConfig(integrator="explicit-euler", step_size=1e-3, max_steps=20)
EMBED_SWARM = CndConfig(swarm_size=4, outer_rounds=4, stall_rounds=2)


def embedding_rounder(lp, enhanced, substrate, eta, table, polish: bool = True, min_band: float = 0.0):
    """Rounding map for the swarm: relaxed z -> (true cost, placement)."""
    pool = sorted({k for _, k in lp.meta["x_index"]})
    cache = PairCache(enhanced, substrate, eta, table, min_band)
    polished: Dict[Tuple[int, ...], Tuple[float, np.ndarray]] = {}

    def rounder(z):
        if not np.all(np.isfinite(z)):
            return math.inf, None
        w = placement_weights(lp, z, substrate.num_nodes)
        node_map = round_assignment(w, enhanced, substrate, eta, table, cache=cache)
        if node_map is None:
            return math.inf, None
        key = tuple(node_map.tolist())
        if key not in polished:
            out = polish_assignment(node_map, enhanced, substrate, eta, table, pool, cache=cache) if polish else node_map
            viol, cost = cache.evaluate(out)
            polished[key] = (math.inf if viol else cost, out)
        value, out = polished[key]
        return value, out.copy()

    return rounder


def embed_vn(
    enhanced: EnhancedVn,
    substrate: SubstrateNetwork,
    eta: int = DEFAULT_ETA,
    solver_config: Optional[SolverConfig] = None,
    cnd_config: Optional[CndConfig] = None,
    candidate_cap: Optional[int] = None,
) -> Optional[Embedding]:
    """Place and route an enhanced VN, reserving resources on success.

    Returns ``None`` (nothing reserved) when no feasible embedding is found.
    """
    candidates = candidate_nodes(enhanced, substrate, candidate_cap)
    if any(len(c) == 0 for c in candidates):
        return None
    pairs = set()
    for i, j, _ in _virtual_links(enhanced):
        for k in candidates[i]:
            for l in candidates[j]:
                if k != l:
                    pairs.add(_key(int(k), int(l)))
    # systems that fit the largest share serve every link of the request
    widest = max((b for _, _, b in _virtual_links(enhanced)), default=0.0) / (eta - 1)
    table = build_path_table(substrate, sorted(pairs), eta, min_band=widest)
    lp = build_embedding_lp(enhanced, substrate, eta, table, candidates)
    result = cnd_solve(lp, cnd_config or EMBED_SWARM, solver_config or EMBED_SOLVER,
                       embedding_rounder(lp, enhanced, substrate, eta, table, min_band=widest))
    if result.solution is None:
        return None
    try:
        emb = allocate_embedding(substrate, enhanced, result.solution, eta, table)
    except ResourceError as exc:
        log.info("allocation rejected: %s", exc)
        return None
    emb.info["cnd_rounds"] = result.report.rounds
    return emb
