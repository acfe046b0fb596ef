"""Substrate and virtual network data model, residual accounting and generators."""
from __future__ import annotations

import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

# Server configurations as cores x MHz, read as MIPS-equivalents.
G4_CPU = 2 * 1860.0
G5_CPU = 2 * 2660.0
SUBSTRATE_CPU_OPTIONS = (G4_CPU, G5_CPU)
# Amazon EC2 instance types, MIPS.
VN_CPU_OPTIONS = (2500.0, 2000.0, 1000.0, 500.0)


class GenerationError(RuntimeError):
    pass


class ResourceError(RuntimeError):
    """Raised when a reservation does not fit the residual capacity.

    ``resource`` names the first violated resource, e.g. ``("node", 3)`` or
    ``("link", 17)``.
    """

    def __init__(self, message: str, resource: Tuple[str, int]):
        super().__init__(message)
        self.resource = resource


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent, named random stream derived from a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def _is_connected(n: int, pairs: Iterable[Tuple[int, int]]) -> bool:
    if n <= 1:
        return True
    adj: List[List[int]] = [[] for _ in range(n)]
    for u, v in pairs:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                queue.append(v)
    return count == n


@dataclass
class SubstrateNetwork:
    """Undirected substrate graph with node CPU and link bandwidth.

    Links are stored as ``(u, v)`` with ``u < v``; link ``i`` has capacity
    ``bw[i]``. Residuals are derived from the live reservations so that
    releasing a reservation restores the previous residual bit-for-bit.
    """

    cpu: np.ndarray
    links: List[Tuple[int, int]]
    bw: np.ndarray
    pos: Optional[np.ndarray] = None
    _node_res: List[Dict[object, float]] = field(default_factory=list, repr=False)
    _link_res: List[Dict[object, float]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.cpu = np.asarray(self.cpu, dtype=float)
        self.bw = np.asarray(self.bw, dtype=float)
        self.links = [(min(u, v), max(u, v)) for u, v in self.links]
        m = len(self.cpu)
        if self.pos is None:
            self.pos = np.zeros((m, 2))
        self.pos = np.asarray(self.pos, dtype=float)
        if len(self.links) != len(self.bw):
            raise ValueError("links and bandwidths differ in length")
        if np.any(self.cpu < 0) or np.any(self.bw < 0):
            raise ValueError("negative capacity")
        self.link_index: Dict[Tuple[int, int], int] = {}
        self.adjacency: List[List[Tuple[int, int]]] = [[] for _ in range(m)]
        for idx, (u, v) in enumerate(self.links):
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < m and 0 <= v < m):
                raise ValueError(f"link {idx} references unknown node")
            if (u, v) in self.link_index:
                raise ValueError(f"duplicate link {u}-{v}")
            self.link_index[(u, v)] = idx
            self.adjacency[u].append((v, idx))
            self.adjacency[v].append((u, idx))
        if not self._node_res:
            self._node_res = [{} for _ in range(m)]
            self._link_res = [{} for _ in range(len(self.links))]
        self.residual_cpu = self.cpu.copy()
        self.residual_bw = self.bw.copy()
        for i in range(m):
            self._refresh_node(i)
        for i in range(len(self.links)):
            self._refresh_link(i)

    @property
    def num_nodes(self) -> int:
        return len(self.cpu)

    @property
    def num_links(self) -> int:
        return len(self.links)

    def link_id(self, u: int, v: int) -> int:
        return self.link_index[(min(u, v), max(u, v))]

    def _refresh_node(self, i: int) -> None:
        self.residual_cpu[i] = self.cpu[i] - math.fsum(self._node_res[i].values())

    def _refresh_link(self, i: int) -> None:
        self.residual_bw[i] = self.bw[i] - math.fsum(self._link_res[i].values())

    def used_cpu(self) -> float:
        return math.fsum(a for d in self._node_res for a in d.values())

    def used_bw(self) -> float:
        return math.fsum(a for d in self._link_res for a in d.values())

    def node_usage(self, i: int) -> Dict[object, float]:
        return dict(self._node_res[i])

    def link_usage(self, i: int) -> Dict[object, float]:
        return dict(self._link_res[i])

    def copy(self) -> "SubstrateNetwork":
        """Deep copy including live reservations."""
        return SubstrateNetwork(
            self.cpu.copy(), list(self.links), self.bw.copy(), self.pos.copy(),
            [dict(d) for d in self._node_res], [dict(d) for d in self._link_res],
        )

    def fresh(self) -> "SubstrateNetwork":
        """Copy with every reservation dropped."""
        return SubstrateNetwork(self.cpu.copy(), list(self.links), self.bw.copy(), self.pos.copy())

    def same_topology(self, other: "SubstrateNetwork") -> bool:
        return (
            np.array_equal(self.cpu, other.cpu)
            and self.links == other.links
            and np.array_equal(self.bw, other.bw)
            and np.array_equal(self.pos, other.pos)
        )

    def to_networkx(self, min_band: float = 0.0):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.num_nodes))
        for idx, (u, v) in enumerate(self.links):
            if self.residual_bw[idx] >= min_band:
                g.add_edge(u, v, link=idx)
        return g


@dataclass
class VirtualNetwork:
    """Virtual network request: CPU demand per node, symmetric bandwidth matrix."""

    cpu: np.ndarray
    bw: np.ndarray
    vn_id: int = 0
    arrival: float = 0.0
    lifetime: float = 0.0
    pos: Optional[np.ndarray] = None

    def __post_init__(self):
        self.cpu = np.asarray(self.cpu, dtype=float)
        n = len(self.cpu)
        if n < 1:
            raise ValueError("a virtual network needs at least one node")
        self.bw = np.asarray(self.bw, dtype=float).reshape(n, n)
        if not np.array_equal(self.bw, self.bw.T):
            raise ValueError("bandwidth matrix must be symmetric")
        if np.any(np.diag(self.bw) != 0):
            raise ValueError("bandwidth matrix must have a zero diagonal")
        if np.any(self.bw < 0) or np.any(self.cpu < 0):
            raise ValueError("negative demand")
        if self.pos is None:
            self.pos = np.zeros((n, 2))
        self.pos = np.asarray(self.pos, dtype=float)

    @property
    def n(self) -> int:
        return len(self.cpu)

    @property
    def links(self) -> List[Tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.bw, 1))
        return list(zip(iu.tolist(), ju.tolist()))

    def revenue(self) -> float:
        """Requested CPU plus requested bandwidth, each link counted once."""
        return float(self.cpu.sum() + np.triu(self.bw, 1).sum())

    def same_topology(self, other: "VirtualNetwork") -> bool:
        return (
            np.array_equal(self.cpu, other.cpu)
            and np.array_equal(self.bw, other.bw)
            and np.array_equal(self.pos, other.pos)
        )

    @classmethod
    def from_links(cls, cpu: Sequence[float], links: Dict[Tuple[int, int], float], **kw) -> "VirtualNetwork":
        n = len(cpu)
        bw = np.zeros((n, n))
        for (i, j), b in links.items():
            bw[i, j] = bw[j, i] = b
        return cls(np.asarray(cpu, dtype=float), bw, **kw)


@dataclass
class LedgerEntry:
    """Resources reserved for one accepted virtual network."""

    key: object
    node_cpu: Dict[int, float] = field(default_factory=dict)
    link_bw: Dict[int, float] = field(default_factory=dict)
    payload: object = None


def allocate(substrate: SubstrateNetwork, entry: LedgerEntry) -> None:
    """Reserve ``entry`` atomically; nothing is mutated on failure."""
    for node, amount in entry.node_cpu.items():
        if amount < 0:
            raise ValueError("negative reservation")
        if entry.key in substrate._node_res[node]:
            raise ValueError(f"ledger key {entry.key!r} already holds node {node}")
        if substrate.residual_cpu[node] < amount:
            raise ResourceError(
                f"node {node}: need {amount}, free {substrate.residual_cpu[node]}", ("node", node)
            )
    for link, amount in entry.link_bw.items():
        if amount < 0:
            raise ValueError("negative reservation")
        if entry.key in substrate._link_res[link]:
            raise ValueError(f"ledger key {entry.key!r} already holds link {link}")
        if substrate.residual_bw[link] < amount:
            raise ResourceError(
                f"link {link}: need {amount}, free {substrate.residual_bw[link]}", ("link", link)
            )
    for node, amount in entry.node_cpu.items():
        substrate._node_res[node][entry.key] = amount
        substrate._refresh_node(node)
    for link, amount in entry.link_bw.items():
        substrate._link_res[link][entry.key] = amount
        substrate._refresh_link(link)


def release(substrate: SubstrateNetwork, entry: LedgerEntry) -> None:
    for node in entry.node_cpu:
        del substrate._node_res[node][entry.key]
        substrate._refresh_node(node)
    for link in entry.link_bw:
        del substrate._link_res[link][entry.key]
        substrate._refresh_link(link)


def _waxman_weights(pos: np.ndarray, alpha: float, beta: float):
    n = len(pos)
    iu, ju = np.triu_indices(n, 1)
    dist = np.linalg.norm(pos[iu] - pos[ju], axis=1)
    scale = dist.max() if len(dist) and dist.max() > 0 else 1.0
    return iu, ju, beta * np.exp(-dist / (alpha * scale))


def waxman_generate(
    node_count: int,
    link_count: int,
    bw_low: float = 50.0,
    bw_high: float = 150.0,
    cpu_options: Sequence[float] = SUBSTRATE_CPU_OPTIONS,
    waxman_alpha: float = 0.15,
    waxman_beta: float = 0.2,
    seed: int = 0,
    max_retries: int = 200,
) -> SubstrateNetwork:
    """Connected Waxman substrate with exactly ``link_count`` links.

    Node positions are uniform in the unit square. Links are drawn without
    replacement with probability proportional to the Waxman weight
    ``beta * exp(-d / (alpha * L))``; the draw is repeated until the graph
    is connected.
    """
    if node_count < 2:
        raise ValueError("node_count must be at least 2")
    max_links = node_count * (node_count - 1) // 2
    if link_count > max_links:
        raise ValueError(f"link_count {link_count} exceeds simple-graph maximum {max_links}")
    if link_count < node_count - 1:
        raise ValueError("link_count too small for a connected graph")
    if bw_low > bw_high:
        raise ValueError("bw_low > bw_high")
    if len(cpu_options) == 0:
        raise ValueError("cpu_options is empty")
    topo = rng_stream(seed, "topology")
    demands = rng_stream(seed, "demands")
    pos = topo.random((node_count, 2))
    iu, ju, w = _waxman_weights(pos, waxman_alpha, waxman_beta)
    if np.count_nonzero(w) < link_count:
        raise GenerationError("Waxman weights underflow; too few candidate pairs remain")
    p = w / w.sum()
    for _ in range(max_retries):
        chosen = np.sort(topo.choice(len(p), size=link_count, replace=False, p=p))
        pairs = list(zip(iu[chosen].tolist(), ju[chosen].tolist()))
        if _is_connected(node_count, pairs):
            break
    else:
        raise GenerationError(f"no connected sample after {max_retries} retries")
    bw = demands.uniform(bw_low, bw_high, size=link_count)
    cpu = np.asarray(cpu_options, dtype=float)[demands.integers(0, len(cpu_options), size=node_count)]
    return SubstrateNetwork(cpu, pairs, bw, pos)


def generate_vn_request(
    size_low: int = 2,
    size_high: int = 20,
    connectivity: float = 0.5,
    cpu_set: Sequence[float] = VN_CPU_OPTIONS,
    bw_low: float = 1.0,
    bw_high: float = 50.0,
    seed: int = 0,
    waxman_alpha: float = 0.15,
    waxman_beta: float = 0.2,
    vn_id: int = 0,
) -> VirtualNetwork:
    """Connected Waxman-style virtual network.

    A Waxman-weighted random spanning tree guarantees connectivity; further
    links are drawn by Waxman weight until the link count reaches a
    Binomial(n(n-1)/2, connectivity) draw.
    """
    if not 1 <= size_low <= size_high:
        raise ValueError("need 1 <= size_low <= size_high")
    if not 0 < connectivity <= 1:
        raise ValueError("connectivity must be in (0, 1]")
    if bw_low > bw_high:
        raise ValueError("bw_low > bw_high")
    rng = rng_stream(seed, "vn")
    n = int(rng.integers(size_low, size_high + 1))
    pos = rng.random((n, 2))
    cpu = np.asarray(cpu_set, dtype=float)[rng.integers(0, len(cpu_set), size=n)]
    bw = np.zeros((n, n))
    if n == 1:
        return VirtualNetwork(cpu, bw, vn_id=vn_id, pos=pos)
    iu, ju, w = _waxman_weights(pos, waxman_alpha, waxman_beta)
    weight = np.zeros((n, n))
    weight[iu, ju] = w
    weight = weight + weight.T
    max_links = n * (n - 1) // 2
    target = max(n - 1, int(rng.binomial(max_links, connectivity)))
    chosen = set()
    order = rng.permutation(n)
    for t in range(1, n):
        v = order[t]
        prev = order[:t]
        p = weight[v, prev] / weight[v, prev].sum()
        u = prev[rng.choice(t, p=p)]
        chosen.add((min(u, v), max(u, v)))
    rest = [k for k in range(len(iu)) if (iu[k], ju[k]) not in chosen]
    extra = target - len(chosen)
    if extra > 0:
        pw = w[rest] / w[rest].sum()
        for k in rng.choice(len(rest), size=extra, replace=False, p=pw):
            chosen.add((int(iu[rest[k]]), int(ju[rest[k]])))
    for i, j in sorted(chosen):
        bw[i, j] = bw[j, i] = rng.uniform(bw_low, bw_high)
    return VirtualNetwork(cpu, bw, vn_id=vn_id, pos=pos)
