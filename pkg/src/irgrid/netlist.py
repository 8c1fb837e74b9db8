"""Power delivery network netlists: model, parser, writer, validator.

The accepted text format is a small SPICE subset.  One statement per
line:

    * die <W> <H>              mandatory header, die extent in um
    R<id> <node> <node> <ohms>
    I<id> <node> 0 <amps>      load current drawn from an M1 node
    V<id> <node> 0 <volts>     supply pad holding a node at a voltage
    * anything else            comment

Node tokens are ``n_<layer>_<x>_<y>`` with integer on-grid coordinates
in um and layer one of M1/M4/M7/M8/M9 (metal) or M14/M47/M78/M89 (via
layers bridging the adjacent metal pair).  Element ids are not
semantic; they are regenerated on write.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import ParseError

METAL_LAYERS = ("M1", "M4", "M7", "M8", "M9")
VIA_LAYERS = ("M14", "M47", "M78", "M89")
LAYERS = METAL_LAYERS + VIA_LAYERS

VIA_BRIDGES = {
    "M14": ("M1", "M4"),
    "M47": ("M4", "M7"),
    "M78": ("M7", "M8"),
    "M89": ("M8", "M9"),
}
_METAL_PAIR_TO_VIA = {frozenset(pair): via for via, pair in VIA_BRIDGES.items()}

_NODE_RE = re.compile(r"n_(M\d+)_(\d+)_(\d+)\Z")


@dataclass(frozen=True)
class NodeId:
    layer: str
    x: int
    y: int

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"unknown layer {self.layer!r}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative node coordinate ({self.x}, {self.y})")

    @property
    def is_via(self) -> bool:
        return self.layer in VIA_LAYERS

    @property
    def token(self) -> str:
        return f"n_{self.layer}_{self.x}_{self.y}"


def edge_layer(a: NodeId, b: NodeId) -> str:
    """Classify the PDN layer a resistor between two nodes belongs to.

    Same-metal edges are stripe segments on that metal.  Edges joining
    vertically adjacent metals, or a via node to one of its two
    metals, belong to the via layer.  Anything else is not a PDN edge.
    """
    if a.layer == b.layer:
        if a.layer in VIA_LAYERS:
            raise ValueError(f"resistor joins two {a.layer} via nodes")
        return a.layer
    pair = frozenset((a.layer, b.layer))
    via = _METAL_PAIR_TO_VIA.get(pair)
    if via is not None:
        return via
    for node, other in ((a, b), (b, a)):
        if node.is_via and other.layer in VIA_BRIDGES[node.layer]:
            return node.layer
    raise ValueError(f"no PDN layer joins {a.layer} and {b.layer}")


@dataclass(frozen=True)
class ResistorEdge:
    a: NodeId
    b: NodeId
    resistance: float

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError(f"resistor shorts node {self.a.token} to itself")
        if not (math.isfinite(self.resistance) and self.resistance > 0):
            raise ValueError(f"non-positive resistance {self.resistance!r}")
        layer = edge_layer(self.a, self.b)
        if layer in VIA_LAYERS and (self.a.x, self.a.y) != (self.b.x, self.b.y):
            raise ValueError("via edge endpoints must share coordinates")

    @property
    def layer(self) -> str:
        return edge_layer(self.a, self.b)


@dataclass(frozen=True)
class CurrentSource:
    node: NodeId
    current: float

    def __post_init__(self):
        if not (math.isfinite(self.current) and self.current > 0):
            raise ValueError(f"non-positive current {self.current!r}")
        if self.node.layer != "M1":
            raise ValueError(f"current source on {self.node.layer}; loads attach to M1")


@dataclass(frozen=True)
class VoltagePad:
    node: NodeId
    voltage: float

    def __post_init__(self):
        if not (math.isfinite(self.voltage) and self.voltage > 0):
            raise ValueError(f"non-positive pad voltage {self.voltage!r}")
        if self.node.is_via:
            raise ValueError("voltage pad on a via-layer node")


@dataclass
class PdnNetlist:
    die_width: int
    die_height: int
    edges: list[ResistorEdge] = field(default_factory=list)
    sources: list[CurrentSource] = field(default_factory=list)
    pads: list[VoltagePad] = field(default_factory=list)

    def __post_init__(self):
        if self.die_width <= 0 or self.die_height <= 0:
            raise ValueError(f"non-positive die extent {self.die_width}x{self.die_height}")

    def nodes(self) -> set[NodeId]:
        seen: set[NodeId] = set()
        for e in self.edges:
            seen.add(e.a)
            seen.add(e.b)
        for s in self.sources:
            seen.add(s.node)
        for p in self.pads:
            seen.add(p.node)
        return seen


@dataclass(frozen=True)
class Diagnostic:
    invariant: str
    detail: str

    def __str__(self):
        return f"{self.invariant}: {self.detail}"


def _parse_node(token: str, line: int, col: int) -> NodeId:
    m = _NODE_RE.match(token)
    if not m:
        raise ParseError(line, col, f"malformed node token {token!r}")
    layer = m.group(1)
    if layer not in LAYERS:
        raise ParseError(line, col, f"unknown layer {layer!r} in node token {token!r}")
    return NodeId(layer, int(m.group(2)), int(m.group(3)))


def _parse_value(token: str, line: int, col: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(line, col, f"malformed {what} value {token!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, col, f"non-finite {what} value {token!r}")
    if value <= 0:
        raise ParseError(line, col, f"non-positive {what} value {token!r}")
    return value


def _check_bounds(node: NodeId, width: int, height: int, line: int, col: int):
    if node.x >= width or node.y >= height:
        raise ParseError(
            line, col,
            f"node {node.token} outside die extent {width}x{height}")


def parse_netlist(text: str) -> PdnNetlist:
    """Parse netlist text into a PdnNetlist.

    Raises ParseError with 1-based line and column positions on any
    grammar violation.  Statement order within each element kind is
    preserved.
    """
    width = height = None
    edges: list[ResistorEdge] = []
    sources: list[CurrentSource] = []
    pads: list[VoltagePad] = []

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        tokens = [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", line)]
        if not tokens:
            continue
        col0, head = tokens[0]

        if head.startswith("*"):
            words = [t for _, t in tokens]
            is_header = (head == "*" and len(words) >= 2 and words[1] == "die")
            if not is_header:
                continue
            if width is not None:
                raise ParseError(lineno, col0, "duplicate die header")
            if len(words) != 4:
                raise ParseError(lineno, col0, "die header must be '* die <W> <H>'")
            dims = []
            for col, tok in tokens[2:4]:
                try:
                    v = int(tok)
                except ValueError:
                    raise ParseError(lineno, col, f"malformed die extent {tok!r}") from None
                if v <= 0:
                    raise ParseError(lineno, col, f"non-positive die extent {tok!r}")
                dims.append(v)
            width, height = dims
            continue

        kind = head[0].upper()
        if kind not in ("R", "I", "V"):
            raise ParseError(lineno, col0, f"unknown statement {head!r}")
        if width is None:
            raise ParseError(lineno, col0, "die header must precede netlist statements")
        if len(tokens) < 4:
            raise ParseError(lineno, col0, f"statement needs 4 fields, got {len(tokens)}")
        if len(tokens) > 4:
            col, tok = tokens[4]
            raise ParseError(lineno, col, f"unexpected trailing token {tok!r}")

        if kind == "R":
            (ca, ta), (cb, tb), (cv, tv) = tokens[1], tokens[2], tokens[3]
            a = _parse_node(ta, lineno, ca)
            _check_bounds(a, width, height, lineno, ca)
            b = _parse_node(tb, lineno, cb)
            _check_bounds(b, width, height, lineno, cb)
            ohms = _parse_value(tv, lineno, cv, "resistance")
            try:
                edges.append(ResistorEdge(a, b, ohms))
            except ValueError as exc:
                raise ParseError(lineno, ca, str(exc)) from None
        else:
            (cn, tn), (cg, tg), (cv, tv) = tokens[1], tokens[2], tokens[3]
            node = _parse_node(tn, lineno, cn)
            _check_bounds(node, width, height, lineno, cn)
            if tg != "0":
                raise ParseError(lineno, cg, f"expected ground terminal '0', got {tg!r}")
            what = "current" if kind == "I" else "voltage"
            value = _parse_value(tv, lineno, cv, what)
            try:
                if kind == "I":
                    sources.append(CurrentSource(node, value))
                else:
                    pads.append(VoltagePad(node, value))
            except ValueError as exc:
                raise ParseError(lineno, cn, str(exc)) from None

    if width is None:
        raise ParseError(1, 1, "missing '* die <W> <H>' header")
    return PdnNetlist(width, height, edges, sources, pads)


def write_netlist(netlist: PdnNetlist) -> str:
    """Render a PdnNetlist back to text.  parse(write(n)) == n."""
    out = [f"* die {netlist.die_width} {netlist.die_height}"]
    for i, e in enumerate(netlist.edges, start=1):
        out.append(f"R{i} {e.a.token} {e.b.token} {float(e.resistance)!r}")
    for i, s in enumerate(netlist.sources, start=1):
        out.append(f"I{i} {s.node.token} 0 {float(s.current)!r}")
    for i, p in enumerate(netlist.pads, start=1):
        out.append(f"V{i} {p.node.token} 0 {float(p.voltage)!r}")
    return "\n".join(out) + "\n"


def validate(netlist: PdnNetlist) -> list[Diagnostic]:
    """Check semantic invariants; returns one Diagnostic per violation.

    An empty result means the netlist is solvable: every source sits in
    a component that also contains a pad, all nodes are on-die, pads do
    not disagree on voltage, and the edge list is non-empty.
    """
    diags: list[Diagnostic] = []
    if not netlist.edges:
        diags.append(Diagnostic("empty netlist", "no resistor edges"))

    w, h = netlist.die_width, netlist.die_height
    for node in sorted(netlist.nodes(), key=lambda n: (n.layer, n.x, n.y)):
        if node.x >= w or node.y >= h:
            diags.append(Diagnostic(
                "node out of die bounds",
                f"{node.token} outside die extent {w}x{h}"))

    edge_nodes: set[NodeId] = set()
    for e in netlist.edges:
        edge_nodes.add(e.a)
        edge_nodes.add(e.b)
    for s in netlist.sources:
        if s.node not in edge_nodes:
            diags.append(Diagnostic(
                "dangling source node",
                f"{s.node.token} is not an endpoint of any resistor"))
    for p in netlist.pads:
        if p.node not in edge_nodes:
            diags.append(Diagnostic(
                "dangling pad node",
                f"{p.node.token} is not an endpoint of any resistor"))

    by_node: dict[NodeId, float] = {}
    for p in netlist.pads:
        if p.node in by_node and by_node[p.node] != p.voltage:
            diags.append(Diagnostic(
                "conflicting pad voltages",
                f"{p.node.token} held at both {by_node[p.node]!r} and {p.voltage!r}"))
        by_node.setdefault(p.node, p.voltage)

    # union-find over resistor endpoints to catch source islands with no pad
    parent: dict[NodeId, NodeId] = {}

    def find(n: NodeId) -> NodeId:
        root = n
        while parent[root] != root:
            root = parent[root]
        while parent[n] != root:
            parent[n], n = root, parent[n]
        return root

    for e in netlist.edges:
        for n in (e.a, e.b):
            parent.setdefault(n, n)
        ra, rb = find(e.a), find(e.b)
        if ra != rb:
            parent[ra] = rb
    padded = {find(p.node) for p in netlist.pads if p.node in parent}
    flagged: set[NodeId] = set()
    for s in netlist.sources:
        if s.node not in parent:
            continue  # already reported as dangling
        root = find(s.node)
        if root not in padded and root not in flagged:
            flagged.add(root)
            diags.append(Diagnostic(
                "floating component",
                f"component containing {s.node.token} draws current but has no pad"))
    return diags
