"""Exact static IR-drop solver for PDN netlists.

Assembles the nodal conductance system G v = b with pad nodes
eliminated (their known voltages fold into the right-hand side), which
keeps the reduced matrix symmetric positive definite.  Small systems
go through a sparse direct factorization; large ones through
Jacobi-preconditioned conjugate gradients.  Either way the solution is
accepted only if the true residual meets the requested tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import InputError, SolveError, ValidationFailure
from .netlist import NodeId, PdnNetlist, validate

DIRECT_LIMIT = 50_000
DEFAULT_TOLERANCE = 1e-10
ITER_CAP_FACTOR = 20


@dataclass
class LinearSystem:
    """Reduced conductance system plus the bookkeeping to map back."""

    unknowns: list[NodeId]
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    pad_voltages: dict[NodeId, float]


@dataclass
class IrDropMap:
    """Per-pixel worst-case M1 drop in volts, indexed [y][x]."""

    data: np.ndarray
    provenance: dict = field(default_factory=dict)


def build_system(netlist: PdnNetlist) -> LinearSystem:
    """Assemble the pad-eliminated conductance system for a valid netlist.

    Unknowns are ordered by first appearance in the edge list.  Raises
    ValidationFailure when validate() reports diagnostics.
    """
    diags = validate(netlist)
    if diags:
        raise ValidationFailure(diags)

    pad_voltages: dict[NodeId, float] = {p.node: p.voltage for p in netlist.pads}

    index: dict[NodeId, int] = {}
    unknowns: list[NodeId] = []
    for e in netlist.edges:
        for n in (e.a, e.b):
            if n not in pad_voltages and n not in index:
                index[n] = len(unknowns)
                unknowns.append(n)

    n = len(unknowns)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs = np.zeros(n)

    for e in netlist.edges:
        g = 1.0 / e.resistance
        ia = index.get(e.a)
        ib = index.get(e.b)
        if ia is not None:
            rows.append(ia)
            cols.append(ia)
            vals.append(g)
        if ib is not None:
            rows.append(ib)
            cols.append(ib)
            vals.append(g)
        if ia is not None and ib is not None:
            rows.extend((ia, ib))
            cols.extend((ib, ia))
            vals.extend((-g, -g))
        elif ia is not None:
            rhs[ia] += g * pad_voltages[e.b]
        elif ib is not None:
            rhs[ib] += g * pad_voltages[e.a]

    for s in netlist.sources:
        i = index.get(s.node)
        if i is not None:
            rhs[i] -= s.current

    matrix = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return LinearSystem(unknowns, matrix, rhs, pad_voltages)


def _residual(matrix, x, rhs) -> float:
    return float(np.linalg.norm(rhs - matrix @ x))


def solve(system: LinearSystem, tolerance: float = DEFAULT_TOLERANCE) -> dict[NodeId, float]:
    """Solve for all node voltages; pads come back at their fixed values.

    Residual acceptance is relative: ||b - G x|| <= tolerance * ||b||
    (absolute when b is zero).  Raises SolveError if neither backend
    reaches it.
    """
    if tolerance <= 0:
        raise InputError(f"non-positive tolerance {tolerance!r}")
    voltages = dict(system.pad_voltages)
    n = len(system.unknowns)
    if n == 0:
        return voltages

    matrix, rhs = system.matrix, system.rhs
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        x = np.zeros(n)
    elif n <= DIRECT_LIMIT:
        lu = spla.splu(matrix.tocsc())
        x = lu.solve(rhs)
        if _residual(matrix, x, rhs) > tolerance * bnorm:
            x = x + lu.solve(rhs - matrix @ x)  # one refinement pass
        res = _residual(matrix, x, rhs)
        if res > tolerance * bnorm:
            raise SolveError(
                f"direct solve residual {res:.3e} exceeds {tolerance:.1e} * ||b||")
    else:
        inv_diag = 1.0 / matrix.diagonal()
        precond = spla.LinearOperator((n, n), matvec=lambda v: inv_diag * v)
        maxiter = math.ceil(ITER_CAP_FACTOR * math.sqrt(n))
        x, info = spla.cg(matrix, rhs, rtol=tolerance, atol=0.0,
                          maxiter=maxiter, M=precond)
        res = _residual(matrix, x, rhs)
        if res > tolerance * bnorm:
            raise SolveError(
                f"cg stopped after {maxiter} iterations (info={info}) "
                f"at residual {res:.3e}, above {tolerance:.1e} * ||b||")

    for node, value in zip(system.unknowns, x):
        voltages[node] = float(value)
    return voltages


def supply_voltage(netlist: PdnNetlist) -> float:
    """The single pad voltage of the netlist; errors if absent or mixed."""
    levels = sorted({p.voltage for p in netlist.pads})
    if not levels:
        raise InputError("netlist has no voltage pads")
    if len(levels) > 1:
        raise InputError(f"multiple distinct pad voltages {levels}")
    return levels[0]


def ir_drop_map(netlist: PdnNetlist, voltages: dict[NodeId, float]) -> IrDropMap:
    """Reduce node voltages to the per-pixel worst-case M1 drop map.

    Each pixel holds max(supply - v) over the M1 nodes at that (x, y);
    pixels with no M1 node are zero.
    """
    supply = supply_voltage(netlist)
    grid = np.zeros((netlist.die_height, netlist.die_width))
    for node, v in voltages.items():
        if node.layer != "M1":
            continue
        drop = supply - v
        if drop > grid[node.y, node.x]:
            grid[node.y, node.x] = drop
    return IrDropMap(grid, {"kind": "oracle", "supplyVoltage": supply})


def solve_netlist(netlist: PdnNetlist, tolerance: float = DEFAULT_TOLERANCE) -> IrDropMap:
    """Convenience path: assemble, solve, reduce to a drop map."""
    return ir_drop_map(netlist, solve(build_system(netlist), tolerance))
