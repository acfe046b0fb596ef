"""BRITE topology files extended with a node ``cpu=<value>`` token.

Grammar::

    Topology: ( <N> Nodes, <M> Edges )
    Nodes: ( <N> ):
    <id> <x> <y> <indeg> <outdeg> <as> <type> cpu=<float>
    Edges: ( <M> ):
    <id> <from> <to> <len> <delay> <bw> <asf> <ast> <type>

Node type ``RT_NODE`` marks a substrate, ``VN_NODE`` a virtual network.
Blank lines are ignored. Floats are written with ``repr`` so a write/parse
cycle is exact.
"""
from __future__ import annotations

import re
from typing import List, Union

import numpy as np

from .netmodel import SubstrateNetwork, VirtualNetwork

SUBSTRATE_NODE = "RT_NODE"
VIRTUAL_NODE = "VN_NODE"
SUBSTRATE_EDGE = "E_RT"
VIRTUAL_EDGE = "E_VN"

_TOPOLOGY = re.compile(r"^Topology:\s*\(\s*(\d+)\s+Nodes,\s*(\d+)\s+Edges\s*\)\s*$")
_NODES = re.compile(r"^Nodes:\s*\(\s*(\d+)\s*\):\s*$")
_EDGES = re.compile(r"^Edges:\s*\(\s*(\d+)\s*\):\s*$")


class BriteSyntaxError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _fmt(x: float) -> str:
    return repr(float(x))


def write_brite(network: Union[SubstrateNetwork, VirtualNetwork]) -> str:
    if isinstance(network, SubstrateNetwork):
        links = [(u, v, network.bw[i]) for i, (u, v) in enumerate(network.links)]
        ntype, etype = SUBSTRATE_NODE, SUBSTRATE_EDGE
    else:
        links = [(i, j, network.bw[i, j]) for i, j in network.links]
        ntype, etype = VIRTUAL_NODE, VIRTUAL_EDGE
    n = len(network.cpu)
    degree = np.zeros(n, dtype=int)
    for u, v, _ in links:
        degree[u] += 1
        degree[v] += 1
    out: List[str] = [f"Topology: ( {n} Nodes, {len(links)} Edges )", "", f"Nodes: ( {n} ):"]
    for i in range(n):
        x, y = network.pos[i]
        out.append(
            f"{i} {_fmt(x)} {_fmt(y)} {degree[i]} {degree[i]} -1 {ntype} cpu={_fmt(network.cpu[i])}"
        )
    out += ["", f"Edges: ( {len(links)} ):"]
    for k, (u, v, b) in enumerate(links):
        length = float(np.linalg.norm(network.pos[u] - network.pos[v]))
        out.append(f"{k} {u} {v} {_fmt(length)} 0.0 {_fmt(b)} -1 -1 {etype}")
    return "\n".join(out) + "\n"


def _float(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise BriteSyntaxError(lineno, f"bad {what} {tok!r}") from None


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise BriteSyntaxError(lineno, f"bad {what} {tok!r}") from None


def parse_brite(text: str) -> Union[SubstrateNetwork, VirtualNetwork]:
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines:
        raise BriteSyntaxError(1, "empty file")
    pos = 0

    def header(regex, name):
        nonlocal pos
        if pos >= len(lines):
            raise BriteSyntaxError(lines[-1][0], f"missing {name} header")
        lineno, ln = lines[pos]
        m = regex.match(ln)
        if not m:
            raise BriteSyntaxError(lineno, f"unknown section header {ln!r}, expected {name}")
        pos += 1
        return lineno, [int(g) for g in m.groups()]

    _, (n_top, m_top) = header(_TOPOLOGY, "Topology")
    lineno, (n_nodes,) = header(_NODES, "Nodes")
    if n_nodes != n_top:
        raise BriteSyntaxError(lineno, f"node count {n_nodes} disagrees with Topology {n_top}")
    ids: dict = {}
    cpu = np.zeros(n_nodes)
    xy = np.zeros((n_nodes, 2))
    kinds = set()
    for _ in range(n_nodes):
        if pos >= len(lines):
            raise BriteSyntaxError(lines[-1][0], "truncated node section")
        lineno, ln = lines[pos]
        pos += 1
        tok = ln.split()
        if len(tok) != 8 or not tok[7].startswith("cpu="):
            raise BriteSyntaxError(lineno, f"malformed node line {ln!r}")
        nid = _int(tok[0], lineno, "node id")
        if nid in ids:
            raise BriteSyntaxError(lineno, f"duplicate node {nid}")
        if not 0 <= nid < n_nodes:
            raise BriteSyntaxError(lineno, f"node id {nid} out of range")
        ids[nid] = True
        xy[nid] = (_float(tok[1], lineno, "x"), _float(tok[2], lineno, "y"))
        c = _float(tok[7][4:], lineno, "cpu")
        if c < 0:
            raise BriteSyntaxError(lineno, f"negative capacity {c}")
        cpu[nid] = c
        kinds.add(tok[6])
    lineno, (m_edges,) = header(_EDGES, "Edges")
    if m_edges != m_top:
        raise BriteSyntaxError(lineno, f"edge count {m_edges} disagrees with Topology {m_top}")
    edges = []
    for _ in range(m_edges):
        if pos >= len(lines):
            raise BriteSyntaxError(lines[-1][0], "truncated edge section")
        lineno, ln = lines[pos]
        pos += 1
        tok = ln.split()
        if len(tok) != 9:
            raise BriteSyntaxError(lineno, f"malformed edge line {ln!r}")
        u = _int(tok[1], lineno, "endpoint")
        v = _int(tok[2], lineno, "endpoint")
        for end in (u, v):
            if end not in ids:
                raise BriteSyntaxError(lineno, f"unknown node {end}")
        if u == v:
            raise BriteSyntaxError(lineno, f"self-loop on node {u}")
        b = _float(tok[5], lineno, "bandwidth")
        if b < 0:
            raise BriteSyntaxError(lineno, f"negative capacity {b}")
        edges.append((lineno, u, v, b))
    if pos < len(lines):
        lineno, ln = lines[pos]
        raise BriteSyntaxError(lineno, f"unknown section header {ln!r}")
    if kinds - {SUBSTRATE_NODE, VIRTUAL_NODE} or len(kinds) > 1:
        raise BriteSyntaxError(lines[0][0], f"mixed or unknown node types {sorted(kinds)}")
    if VIRTUAL_NODE in kinds:
        bw = np.zeros((n_nodes, n_nodes))
        for lineno, u, v, b in edges:
            if bw[u, v] != 0:
                raise BriteSyntaxError(lineno, f"duplicate link {u}-{v}")
            bw[u, v] = bw[v, u] = b
        return VirtualNetwork(cpu, bw, pos=xy)
    seen = set()
    for lineno, u, v, _ in edges:
        key = (min(u, v), max(u, v))
        if key in seen:
            raise BriteSyntaxError(lineno, f"duplicate link {u}-{v}")
        seen.add(key)
    return SubstrateNetwork(cpu, [(u, v) for _, u, v, _ in edges], [b for *_, b in edges], xy)
