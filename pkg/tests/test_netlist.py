import numpy as np
import pytest

from irgrid.errors import ParseError
from irgrid.netlist import (
    CurrentSource,
    Diagnostic,
    NodeId,
    PdnNetlist,
    ResistorEdge,
    VoltagePad,
    edge_layer,
    parse_netlist,
    validate,
    write_netlist,
)

GOOD = """* die 16 16
* a comment line
R1 n_M1_2_1 n_M1_6_1 3.2
R2 n_M1_2_1 n_M4_2_1 2.0
R3 n_M4_2_1 n_M4_2_9 1.6

I1 n_M1_6_1 0 0.004
V1 n_M4_2_9 0 1.05
"""


def test_parse_good_netlist():
    n = parse_netlist(GOOD)
    assert (n.die_width, n.die_height) == (16, 16)
    assert len(n.edges) == 3
    assert n.edges[0] == ResistorEdge(NodeId("M1", 2, 1), NodeId("M1", 6, 1), 3.2)
    assert n.sources == [CurrentSource(NodeId("M1", 6, 1), 0.004)]
    assert n.pads == [VoltagePad(NodeId("M4", 2, 9), 1.05)]


def test_roundtrip_identity():
    n = parse_netlist(GOOD)
    assert parse_netlist(write_netlist(n)) == n


def test_roundtrip_preserves_exact_floats():
    n = PdnNetlist(8, 8, [ResistorEdge(NodeId("M1", 0, 0), NodeId("M1", 3, 0),
                                       0.30000000000000004)])
    back = parse_netlist(write_netlist(n))
    assert back.edges[0].resistance == 0.30000000000000004


def test_write_regenerates_ids_in_order():
    text = write_netlist(parse_netlist(GOOD))
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("*")]
    assert [ln.split()[0] for ln in lines] == ["R1", "R2", "R3", "I1", "V1"]


def test_parse_reports_line_and_column():
    with pytest.raises(ParseError) as info:
        parse_netlist("* die 8 8\nR1 n_M1_0_0 n_M1_1_0 nope\n")
    assert info.value.line == 2
    assert info.value.column == 22
    assert "resistance" in info.value.reason


@pytest.mark.parametrize("text, fragment", [
    ("R1 n_M1_0_0 n_M1_1_0 1.0\n", "die header must precede"),
    ("* die 8 8\n* die 8 8\n", "duplicate die header"),
    ("* die 8\n", "die header must be"),
    ("* die 8 x\n", "malformed die extent"),
    ("* die 8 0\n", "non-positive die extent"),
    ("* die 8 8\nQ1 n_M1_0_0 0 1.0\n", "unknown statement"),
    ("* die 8 8\nR1 n_M1_0_0 n_M1_1_0\n", "needs 4 fields"),
    ("* die 8 8\nR1 n_M1_0_0 n_M1_1_0 1.0 extra\n", "unexpected trailing"),
    ("* die 8 8\nR1 node_M1_0_0 n_M1_1_0 1.0\n", "malformed node token"),
    ("* die 8 8\nR1 n_M2_0_0 n_M1_1_0 1.0\n", "unknown layer"),
    ("* die 8 8\nR1 n_M1_9_0 n_M1_1_0 1.0\n", "outside die extent"),
    ("* die 8 8\nR1 n_M1_0_0 n_M1_1_0 -1.0\n", "non-positive resistance"),
    ("* die 8 8\nR1 n_M1_0_0 n_M1_1_0 inf\n", "non-finite resistance"),
    ("* die 8 8\nR1 n_M1_0_0 n_M1_0_0 1.0\n", "shorts node"),
    ("* die 8 8\nR1 n_M1_0_0 n_M7_0_0 1.0\n", "no PDN layer joins"),
    ("* die 8 8\nR1 n_M1_0_0 n_M4_1_0 1.0\n", "share coordinates"),
    ("* die 8 8\nI1 n_M1_0_0 1 0.1\n", "expected ground terminal"),
    ("* die 8 8\nR1 n_M1_0_0 n_M1_1_0 1.0\nI1 n_M4_0_0 0 0.1\n", "attach to M1"),
    ("* die 8 8\nI1 n_M1_0_0 0 0.0\n", "non-positive current"),
    ("* die 8 8\nV1 n_M14_0_0 0 1.0\n", "via-layer node"),
    ("* die 8 8\nV1 n_M1_0_0 0 -2\n", "non-positive voltage"),
    ("", "missing '* die"),
])
def test_parse_rejections(text, fragment):
    with pytest.raises(ParseError) as info:
        parse_netlist(text)
    assert fragment in str(info.value)


def test_comments_and_blank_lines_ignored():
    n = parse_netlist("* die 4 4\n*anything at all\n\n   \nR1 n_M1_0_0 n_M1_1_0 1\n")
    assert len(n.edges) == 1


def test_crlf_accepted():
    n = parse_netlist("* die 4 4\r\nR1 n_M1_0_0 n_M1_1_0 1\r\n")
    assert len(n.edges) == 1


def test_edge_layer_classification():
    assert edge_layer(NodeId("M4", 1, 1), NodeId("M4", 1, 3)) == "M4"
    assert edge_layer(NodeId("M1", 1, 1), NodeId("M4", 1, 1)) == "M14"
    assert edge_layer(NodeId("M9", 2, 2), NodeId("M8", 2, 2)) == "M89"
    assert edge_layer(NodeId("M47", 2, 2), NodeId("M7", 2, 2)) == "M47"
    assert edge_layer(NodeId("M47", 2, 2), NodeId("M4", 2, 2)) == "M47"
    with pytest.raises(ValueError):
        edge_layer(NodeId("M1", 0, 0), NodeId("M8", 0, 0))
    with pytest.raises(ValueError):
        edge_layer(NodeId("M14", 0, 0), NodeId("M7", 0, 0))
    with pytest.raises(ValueError):
        edge_layer(NodeId("M14", 0, 0), NodeId("M14", 1, 0))


def test_validate_clean_netlist():
    assert validate(parse_netlist(GOOD)) == []


def _invariants(diags: list[Diagnostic]) -> set:
    return {d.invariant for d in diags}


def test_validate_dangling_and_floating():
    n = PdnNetlist(
        8, 8,
        [ResistorEdge(NodeId("M1", 0, 0), NodeId("M1", 1, 0), 1.0)],
        [CurrentSource(NodeId("M1", 5, 5), 0.1),
         CurrentSource(NodeId("M1", 0, 0), 0.1)],
        [VoltagePad(NodeId("M1", 6, 6), 1.0)])
    found = _invariants(validate(n))
    assert "dangling source node" in found
    assert "dangling pad node" in found
    assert "floating component" in found  # the edge island has no pad


def test_validate_empty_and_bounds():
    n = PdnNetlist(4, 4, [], [], [])
    assert "empty netlist" in _invariants(validate(n))
    n2 = PdnNetlist(
        4, 4,
        [ResistorEdge(NodeId("M1", 0, 0), NodeId("M1", 3, 3), 1.0)], [], [])
    n2.die_width = 2  # shrink after the fact: nodes now out of range
    assert "node out of die bounds" in _invariants(validate(n2))


def test_validate_conflicting_pads():
    n = PdnNetlist(
        4, 4,
        [ResistorEdge(NodeId("M9", 0, 0), NodeId("M9", 2, 0), 1.0)],
        [],
        [VoltagePad(NodeId("M9", 0, 0), 1.0),
         VoltagePad(NodeId("M9", 0, 0), 1.1)])
    assert "conflicting pad voltages" in _invariants(validate(n))


def test_validate_grounded_component_passes():
    # source and pad in the same component: no floating diagnostic
    n = PdnNetlist(
        8, 8,
        [ResistorEdge(NodeId("M1", 0, 0), NodeId("M1", 1, 0), 1.0),
         ResistorEdge(NodeId("M1", 1, 0), NodeId("M4", 1, 0), 0.5)],
        [CurrentSource(NodeId("M1", 0, 0), 0.1)],
        [VoltagePad(NodeId("M4", 1, 0), 1.0)])
    assert validate(n) == []


def test_write_accepts_numpy_scalar_values():
    n = PdnNetlist(
        4, 4,
        [ResistorEdge(NodeId("M1", 0, 0), NodeId("M1", 2, 0),
                      np.float64(0.3))],
        [CurrentSource(NodeId("M1", 0, 0), np.float64(0.005347869108217194))],
        [VoltagePad(NodeId("M9", 0, 0), np.float64(1.0))])
    text = write_netlist(n)
    assert "np.float64" not in text
    back = parse_netlist(text)
    assert back.sources[0].current == 0.005347869108217194
