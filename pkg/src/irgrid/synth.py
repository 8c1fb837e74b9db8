"""Synthetic PDN test-case generation.

Builds randomized but physically plausible power grids: alternating
horizontal/vertical stripe layers, dense cell-level vias but sparse
upper-layer via programming, Gaussian blobs of load current snapped
onto M1, and supply pads on random M9 nodes.  Each case is solved by
the exact solver for its ground-truth drop map and featurized into the
model input stack.

Case i of a corpus depends only on (seed, i), so any corpus can be
regenerated bit-identically from its manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError, IrgridError
from .features import DEFAULT_SIZE, Provenance, TestCase, featurize
from .netlist import (
    CurrentSource,
    NodeId,
    PdnNetlist,
    ResistorEdge,
    VoltagePad,
    validate,
    write_netlist,
)
from .solver import DEFAULT_TOLERANCE, solve_netlist

SUPPLY_VOLTAGE = 1.0
MIN_DIE = 16

# stripe pitch per metal layer in um; offset is half the pitch
PITCHES = {"M1": 2, "M4": 4, "M7": 8, "M8": 8, "M9": 16}
# horizontal layers run along x at fixed y; the rest are vertical
HORIZONTAL = {"M1", "M7", "M9"}

# per-um stripe resistance (lower metals are thinner) and per-cut via resistance
UNIT_RESISTANCE = {"M1": 0.8, "M4": 0.4, "M7": 0.2, "M8": 0.1, "M9": 0.05}
VIA_RESISTANCE = {"M14": 2.0, "M47": 1.0, "M78": 0.5, "M89": 0.25}
# fraction of crossings that get a via; upper layers are sparsely
# programmed so a region's supply rides on a few identifiable sites
VIA_DENSITY = {"M14": 1.0, "M47": 0.45, "M78": 0.45, "M89": 0.6}

POINTS_PER_BLOB = 48
_RETRIES = 3


@dataclass(frozen=True)
class GenParams:
    die_size: int = 64
    pad_count: int = 4
    blob_count: int = 3
    blob_spread: float = 6.0
    total_current: float = 0.15
    res_scale: float = 1.0

    def __post_init__(self):
        if self.die_size < MIN_DIE:
            raise InputError(f"die_size {self.die_size} below minimum {MIN_DIE}")
        if self.pad_count < 1:
            raise InputError("pad_count must be at least 1")
        if self.blob_count < 1:
            raise InputError("blob_count must be at least 1")
        if not (math.isfinite(self.blob_spread) and self.blob_spread > 0):
            raise InputError(f"non-positive blob_spread {self.blob_spread!r}")
        if not (math.isfinite(self.total_current) and self.total_current > 0):
            raise InputError(f"non-positive total_current {self.total_current!r}")
        if not (math.isfinite(self.res_scale) and self.res_scale > 0):
            raise InputError(f"non-positive res_scale {self.res_scale!r}")


def _stripe_positions(layer: str, extent: int) -> list[int]:
    pitch = PITCHES[layer]
    return list(range(pitch // 2, extent, pitch))


def _sparse_keep(rng: np.random.Generator, n_rows: int, n_cols: int,
                 density: float) -> np.ndarray:
    """Random keep mask where every row and column keeps at least one
    entry, so each stripe stays stitched to the adjacent layer."""
    keep = rng.random((n_rows, n_cols)) < density
    for i in range(n_rows):
        if not keep[i].any():
            keep[i, rng.integers(n_cols)] = True
    for j in range(n_cols):
        if not keep[:, j].any():
            keep[rng.integers(n_rows), j] = True
    return keep


def _weakness_field(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    """Smooth multiplicative field modeling regions of narrower metal.

    A few broad log-gaussian bumps, so local resistance varies by
    region the way grid width varies between blocks on a real die.
    """
    log_field = np.zeros((h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(3, 6)):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        spread = rng.uniform(min(w, h) / 8, min(w, h) / 3)
        amp = rng.uniform(-0.45, 0.45)
        log_field += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2)
                                  / (2 * spread * spread))
    return np.exp(log_field)


def generate_netlist(params: GenParams, rng: np.random.Generator) -> PdnNetlist:
    """One random grid; unit resistances vary with a smooth regional
    weakness field plus per-stripe and per-via jitter, so the resistance
    channels keep spatial signal after per-channel normalization (a
    per-layer scale alone would divide out)."""
    w = h = params.die_size
    layer_scale = {layer: params.res_scale * rng.uniform(0.7, 1.4)
                   for layer in list(UNIT_RESISTANCE) + list(VIA_RESISTANCE)}
    field = _weakness_field(rng, w, h)

    ys1 = _stripe_positions("M1", h)
    xs4 = _stripe_positions("M4", w)
    ys7 = _stripe_positions("M7", h)
    xs8 = _stripe_positions("M8", w)
    ys9 = _stripe_positions("M9", h)

    # nodes sit where a stripe crosses a stripe of an adjacent layer
    cross = {
        "M1": [(x, y) for y in ys1 for x in xs4],
        "M4": [(x, y) for x in xs4 for y in sorted(set(ys1) | set(ys7))],
        "M7": [(x, y) for y in ys7 for x in sorted(set(xs4) | set(xs8))],
        "M8": [(x, y) for x in xs8 for y in sorted(set(ys7) | set(ys9))],
        "M9": [(x, y) for y in ys9 for x in xs8],
    }

    edges: list[ResistorEdge] = []
    for layer, points in cross.items():
        unit = UNIT_RESISTANCE[layer] * layer_scale[layer]
        lines: dict[int, list[int]] = {}
        if layer in HORIZONTAL:
            for x, y in points:
                lines.setdefault(y, []).append(x)
        else:
            for x, y in points:
                lines.setdefault(x, []).append(y)
        for fixed, coords in lines.items():
            coords = sorted(set(coords))
            stripe = unit * rng.uniform(0.8, 1.25)
            for c0, c1 in zip(coords, coords[1:]):
                if layer in HORIZONTAL:
                    a, b = NodeId(layer, c0, fixed), NodeId(layer, c1, fixed)
                    mx, my = (c0 + c1) // 2, fixed
                else:
                    a, b = NodeId(layer, fixed, c0), NodeId(layer, fixed, c1)
                    mx, my = fixed, (c0 + c1) // 2
                local = stripe * field[min(my, h - 1), min(mx, w - 1)]
                edges.append(ResistorEdge(a, b, local * (c1 - c0)))

    for via, (lo, hi), xs, ys in (
            ("M14", ("M1", "M4"), xs4, ys1),
            ("M47", ("M4", "M7"), xs4, ys7),
            ("M78", ("M7", "M8"), xs8, ys7),
            ("M89", ("M8", "M9"), xs8, ys9)):
        ohms = VIA_RESISTANCE[via] * layer_scale[via]
        keep = _sparse_keep(rng, len(xs), len(ys), VIA_DENSITY[via])
        for ix, x in enumerate(xs):
            for iy, y in enumerate(ys):
                if not keep[ix, iy]:
                    continue
                local = ohms * rng.uniform(0.8, 1.25) * field[y, x]
                edges.append(ResistorEdge(NodeId(lo, x, y), NodeId(hi, x, y),
                                          local))

    # loads: gaussian blobs snapped to the nearest M1 crossing
    def snap(vals, grid_positions):
        arr = np.asarray(grid_positions)
        idx = np.clip(np.rint((vals - arr[0]) / (arr[1] - arr[0])
                              if len(arr) > 1 else np.zeros_like(vals)),
                      0, len(arr) - 1).astype(int)
        return arr[idx]

    draw: dict[NodeId, float] = {}
    for _ in range(params.blob_count):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        px = rng.normal(cx, params.blob_spread, POINTS_PER_BLOB)
        py = rng.normal(cy, params.blob_spread, POINTS_PER_BLOB)
        weights = rng.uniform(0.5, 1.5, POINTS_PER_BLOB)
        for x, y, wt in zip(snap(px, xs4), snap(py, ys1), weights):
            node = NodeId("M1", int(x), int(y))
            draw[node] = draw.get(node, 0.0) + wt
    total = sum(draw.values())
    sources = [CurrentSource(node, wt / total * params.total_current)
               for node, wt in draw.items()]

    m9_nodes = cross["M9"]
    count = min(params.pad_count, len(m9_nodes))
    picks = rng.choice(len(m9_nodes), size=count, replace=False)
    pads = [VoltagePad(NodeId("M9", *m9_nodes[i]), SUPPLY_VOLTAGE)
            for i in sorted(picks)]

    return PdnNetlist(w, h, edges, sources, pads)


def case_rng(seed: int, index: int) -> np.random.Generator:
    """The RNG for corpus case index; independent of every other case."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def generate_case(params: GenParams, rng: np.random.Generator,
                  size: int = DEFAULT_SIZE, case_id: str | None = None,
                  tolerance: float = DEFAULT_TOLERANCE,
                  keep_netlist: bool = True) -> TestCase:
    """Netlist, exact ground truth, and features for one random case."""
    last = None
    for _ in range(_RETRIES):
        netlist = generate_netlist(params, rng)
        if not validate(netlist):
            truth = solve_netlist(netlist, tolerance)
            return TestCase(
                features=featurize(netlist, size),
                ground_truth=truth,
                provenance=Provenance("synthetic"),
                supply_voltage=SUPPLY_VOLTAGE,
                case_id=case_id,
                netlist=netlist if keep_netlist else None)
        last = validate(netlist)
    raise IrgridError(f"generation kept failing validation: {last}")


@dataclass(frozen=True)
class CorpusSpec:
    """Parameter ranges for a corpus; each case draws its own GenParams.

    Integer ranges are inclusive; float ranges are half-open.  A range
    with lo == hi pins the parameter.
    """

    count: int
    seed: int
    size: int = DEFAULT_SIZE
    die_size: tuple[int, int] = (64, 64)
    pad_count: tuple[int, int] = (3, 6)
    blob_count: tuple[int, int] = (3, 6)
    blob_spread: tuple[float, float] = (4.0, 12.0)
    total_current: tuple[float, float] = (0.05, 0.3)
    res_scale: tuple[float, float] = (0.5, 1.5)

    def draw(self, rng: np.random.Generator) -> GenParams:
        def ints(lo, hi):
            return int(rng.integers(lo, hi + 1))

        def floats(lo, hi):
            return float(lo if lo == hi else rng.uniform(lo, hi))

        return GenParams(
            die_size=ints(*self.die_size),
            pad_count=ints(*self.pad_count),
            blob_count=ints(*self.blob_count),
            blob_spread=floats(*self.blob_spread),
            total_current=floats(*self.total_current),
            res_scale=floats(*self.res_scale))


def generate_corpus(spec: CorpusSpec) -> list[TestCase]:
    """All cases of the corpus, case i seeded from (spec.seed, i)."""
    if spec.count < 1:
        raise InputError("corpus count must be positive")
    cases = []
    for i in range(spec.count):
        rng = case_rng(spec.seed, i)
        params = spec.draw(rng)
        cases.append(generate_case(params, rng, size=spec.size,
                                   case_id=f"case_{i:04d}"))
    return cases


def write_corpus(directory, cases: list[TestCase], spec: CorpusSpec):
    """Write one subdirectory per case plus a regeneration manifest."""
    from pathlib import Path

    from .container import write_tensor

    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for case in cases:
        cid = case.case_id or f"case_{len(ids):04d}"
        ids.append(cid)
        d = root / cid
        d.mkdir(exist_ok=True)
        if case.netlist is not None:
            (d / "netlist.sp").write_text(write_netlist(case.netlist))
        write_tensor(d / "features.irgt", case.features.data, {
            "caseId": cid,
            "kind": "features",
            "scales": [float(s) for s in case.features.scales],
            "originalDims": list(case.features.original_dims),
            "supplyVoltage": case.supply_voltage,
            "provenance": asdict(case.provenance),
        })
        write_tensor(d / "truth.irgt", case.ground_truth.data, {
            "caseId": cid,
            "kind": "truth",
            "units": "V",
            "supplyVoltage": case.supply_voltage,
        })
    manifest = {"spec": asdict(spec), "cases": ids}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_corpus(directory) -> list[TestCase]:
    """Read back a corpus written by write_corpus (netlists optional)."""
    from pathlib import Path

    from .container import read_tensor
    from .features import FeatureStack
    from .netlist import parse_netlist
    from .solver import IrDropMap

    root = Path(directory)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        ids = json.loads(manifest_path.read_text())["cases"]
    else:
        ids = sorted(p.name for p in root.iterdir()
                     if p.is_dir() and (p / "features.irgt").exists())
    if not ids:
        raise InputError(f"no cases found under {root}")
    cases = []
    for cid in ids:
        d = root / cid
        feats, fmeta = read_tensor(d / "features.irgt")
        truth, tmeta = read_tensor(d / "truth.irgt")
        dims = fmeta.get("originalDims") or list(truth.shape)
        netlist = None
        if (d / "netlist.sp").exists():
            netlist = parse_netlist((d / "netlist.sp").read_text())
        cases.append(TestCase(
            features=FeatureStack(
                feats.astype(float),
                np.array(fmeta.get("scales", [1.0] * feats.shape[0]), dtype=float),
                (int(dims[0]), int(dims[1]))),
            ground_truth=IrDropMap(truth.astype(float), {"kind": "oracle"}),
            provenance=Provenance(**fmeta.get(
                "provenance", {"kind": "synthetic"})),
            supply_voltage=float(fmeta.get("supplyVoltage",
                                           tmeta.get("supplyVoltage", 1.0))),
            case_id=cid,
            netlist=netlist))
    return cases
