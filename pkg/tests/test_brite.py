import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cndsvne.brite import BriteSyntaxError, parse_brite, write_brite
from cndsvne.netmodel import SubstrateNetwork, VirtualNetwork, generate_vn_request, waxman_generate

HEADER = "Topology: ( 2 Nodes, 1 Edges )\nNodes: ( 2 ):\n"
NODES = "0 0.0 0.0 1 1 -1 RT_NODE cpu=10.0\n1 1.0 1.0 1 1 -1 RT_NODE cpu=20.0\n"


def test_substrate_round_trip():
    sub = waxman_generate(25, 60, seed=2)
    back = parse_brite(write_brite(sub))
    assert isinstance(back, SubstrateNetwork)
    assert back.same_topology(sub)


def test_virtual_round_trip():
    vn = generate_vn_request(2, 10, seed=9)
    back = parse_brite(write_brite(vn))
    assert isinstance(back, VirtualNetwork)
    assert back.same_topology(vn)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1e9, allow_nan=False), min_size=2, max_size=6))
def test_awkward_floats_survive(values):
    n = len(values)
    links = [(i, i + 1) for i in range(n - 1)]
    sub = SubstrateNetwork(values, links, values[1:], np.column_stack([values, values[::-1]]))
    assert parse_brite(write_brite(sub)).same_topology(sub)


def test_minimal_file_parses():
    text = HEADER + NODES + "Edges: ( 1 ):\n0 0 1 1.4 0.0 7.5 -1 -1 E_RT\n"
    sub = parse_brite(text)
    assert sub.links == [(0, 1)] and sub.bw[0] == 7.5 and sub.cpu[1] == 20.0


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        (HEADER + NODES + "Edges: ( 1 ):\n0 0 9 1.0 0.0 7.5 -1 -1 E_RT\n", 6, "unknown node 9"),
        (HEADER + NODES + "Links: ( 1 ):\n", 5, "unknown section header"),
        (HEADER + NODES + "Edges: ( 1 ):\n0 0 1 1.0 0.0 -7.5 -1 -1 E_RT\n", 6, "negative capacity"),
        (HEADER.replace("2 Nodes", "x Nodes"), 1, "unknown section header"),
        (HEADER + "0 0.0 0.0 1 1 -1 RT_NODE cpu=-1\n", 3, "negative capacity"),
    ],
)
def test_located_syntax_errors(text, line, fragment):
    with pytest.raises(BriteSyntaxError) as info:
        parse_brite(text)
    assert info.value.line == line
    assert fragment in str(info.value)


def test_truncated_and_trailing_sections():
    with pytest.raises(BriteSyntaxError):
        parse_brite(HEADER + NODES)
    text = HEADER + NODES + "Edges: ( 1 ):\n0 0 1 1.0 0.0 7.5 -1 -1 E_RT\nextra stuff\n"
    with pytest.raises(BriteSyntaxError):
        parse_brite(text)
    with pytest.raises(BriteSyntaxError):
        parse_brite("")
