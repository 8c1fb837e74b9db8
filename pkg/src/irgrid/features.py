"""Image featurization of PDN netlists and test-case augmentation.

A netlist becomes a 12-channel image stack indexed [channel][y][x] at
die resolution: load current, stripe density, effective pad distance,
and one lumped-resistance map per PDN layer.  Stacks are resized to
the model input size and normalized per channel to [0, 1].

All geometric transforms used for augmentation are defined here with
paired array and coordinate forms so netlists, feature stacks, and
drop maps transform consistently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InputError
from .netlist import (
    METAL_LAYERS,
    LAYERS,
    CurrentSource,
    NodeId,
    PdnNetlist,
    ResistorEdge,
    VoltagePad,
)
from .solver import IrDropMap

CHANNELS = ("current", "pdn_density", "eff_distance") + tuple(
    f"r_{layer.lower()}" for layer in LAYERS)
RESISTANCE_CHANNELS = tuple(range(3, 12))
DEFAULT_SIZE = 512
MIN_PAD_DISTANCE = 0.5


@dataclass
class RawImageStack:
    """Die-resolution channel stack, images[c][y][x], channels as in CHANNELS."""

    images: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 3 or self.images.shape[0] != len(CHANNELS):
            raise InputError(f"raw stack must be ({len(CHANNELS)}, h, w), "
                             f"got {self.images.shape}")


@dataclass
class FeatureStack:
    """Model-ready stack: resized, per-channel max-normalized to [0, 1]."""

    data: np.ndarray
    scales: np.ndarray
    original_dims: tuple[int, int]  # (height, width) of the die grid

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != len(CHANNELS):
            raise InputError(f"feature stack must be ({len(CHANNELS)}, s, s), "
                             f"got {self.data.shape}")


@dataclass(frozen=True)
class Provenance:
    kind: str  # synthetic | real | augmented
    transform: str | None = None
    parent_id: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "real", "augmented"):
            raise ValueError(f"unknown provenance kind {self.kind!r}")


@dataclass
class TestCase:
    __test__ = False  # not a pytest class, despite the name

    features: FeatureStack
    ground_truth: IrDropMap
    provenance: Provenance
    supply_voltage: float = 1.0
    case_id: str | None = None
    netlist: PdnNetlist | None = None


def current_map(netlist: PdnNetlist) -> np.ndarray:
    grid = np.zeros((netlist.die_height, netlist.die_width))
    for s in netlist.sources:
        grid[s.node.y, s.node.x] += s.current
    return grid


def effective_distance_map(netlist: PdnNetlist) -> np.ndarray:
    """Per pixel, sum of 1/distance over all pads, distance floored at 0.5 um."""
    if not netlist.pads:
        raise InputError("effective distance needs at least one voltage pad")
    h, w = netlist.die_height, netlist.die_width
    yy, xx = np.mgrid[0:h, 0:w]
    grid = np.zeros((h, w))
    for p in netlist.pads:
        d = np.hypot(xx - p.node.x, yy - p.node.y)
        np.maximum(d, MIN_PAD_DISTANCE, out=d)
        grid += 1.0 / d
    return grid


def _merge_runs(spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    # edges that touch or overlap on a line continue the same stripe
    spans.sort()
    merged: list[tuple[int, int]] = []
    for lo, hi in spans:
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def pdn_density_map(netlist: PdnNetlist) -> np.ndarray:
    """Count of metal stripes whose geometry crosses each pixel, summed over layers."""
    h, w = netlist.die_height, netlist.die_width
    grid = np.zeros((h, w))
    for layer in METAL_LAYERS:
        horiz: dict[int, list[tuple[int, int]]] = {}
        vert: dict[int, list[tuple[int, int]]] = {}
        layer_grid = np.zeros((h, w))
        for e in netlist.edges:
            if e.layer != layer:
                continue
            if e.a.y == e.b.y:
                horiz.setdefault(e.a.y, []).append(
                    (min(e.a.x, e.b.x), max(e.a.x, e.b.x)))
            elif e.a.x == e.b.x:
                vert.setdefault(e.a.x, []).append(
                    (min(e.a.y, e.b.y), max(e.a.y, e.b.y)))
            else:
                for (cx, cy), _ in segment_cell_lengths(
                        (e.a.x, e.a.y), (e.b.x, e.b.y)):
                    layer_grid[cy, cx] += 1
        for y, spans in horiz.items():
            for lo, hi in _merge_runs(spans):
                layer_grid[y, lo:hi + 1] += 1
        for x, spans in vert.items():
            for lo, hi in _merge_runs(spans):
                layer_grid[lo:hi + 1, x] += 1
        grid += layer_grid
    return grid


def segment_cell_lengths(p0: tuple[float, float],
                         p1: tuple[float, float]) -> list[tuple[tuple[int, int], float]]:
    """Split the segment p0-p1 into per-pixel pieces; returns ((x, y), length).

    Pixel (x, y) is centered on the integer grid point, so its window
    spans the half-integers around it.  That keeps attribution
    consistent with array flips and rotations of the die.
    """
    x0, y0 = float(p0[0]), float(p0[1])
    x1, y1 = float(p1[0]), float(p1[1])
    dx, dy = x1 - x0, y1 - y0
    length = math.hypot(dx, dy)
    if length == 0.0:
        return []
    ts = {0.0, 1.0}
    # cuts where the segment crosses a half-integer grid line
    for delta, start in ((dx, x0), (dy, y0)):
        if delta == 0.0:
            continue
        lo, hi = sorted((start, start + delta))
        k = math.floor(lo - 0.5) + 1
        while k + 0.5 < hi:
            if k + 0.5 > lo:
                ts.add((k + 0.5 - start) / delta)
            k += 1
    cuts = sorted(t for t in ts if 0.0 <= t <= 1.0)
    pieces: list[tuple[tuple[int, int], float]] = []
    for ta, tb in zip(cuts, cuts[1:]):
        if tb <= ta:
            continue
        tm = (ta + tb) / 2
        cx = math.floor(x0 + tm * dx + 0.5)
        cy = math.floor(y0 + tm * dy + 0.5)
        pieces.append(((cx, cy), (tb - ta) * length))
    return pieces


def layer_resistance_maps(netlist: PdnNetlist) -> dict[str, np.ndarray]:
    """Lumped resistance per pixel and layer.

    Metal edges spread their resistance over crossed pixels in
    proportion to the segment length inside each; via edges charge
    their full resistance to their pixel.
    """
    h, w = netlist.die_height, netlist.die_width
    maps = {layer: np.zeros((h, w)) for layer in LAYERS}
    for e in netlist.edges:
        layer = e.layer
        if layer in METAL_LAYERS:
            pieces = segment_cell_lengths((e.a.x, e.a.y), (e.b.x, e.b.y))
            total = sum(piece_len for _, piece_len in pieces)
            for (cx, cy), piece_len in pieces:
                maps[layer][cy, cx] += e.resistance * piece_len / total
        else:
            maps[layer][e.a.y, e.a.x] += e.resistance
    return maps


def raw_stack(netlist: PdnNetlist) -> RawImageStack:
    """Assemble all 12 die-resolution channels in CHANNELS order."""
    per_layer = layer_resistance_maps(netlist)
    images = np.stack(
        [current_map(netlist), pdn_density_map(netlist),
         effective_distance_map(netlist)]
        + [per_layer[layer] for layer in LAYERS])
    return RawImageStack(images)


def _axis_weights(n_src: int, n_dst: int) -> np.ndarray | None:
    """Resampling matrix for one axis; None when source equals target.

    Shrinking uses exact area averaging; growing uses pixel-center
    bilinear interpolation.  Rows sum to one, so constants and value
    bounds are preserved.
    """
    if n_dst == n_src:
        return None
    weights = np.zeros((n_dst, n_src))
    if n_dst < n_src:
        scale = n_src / n_dst
        for i in range(n_dst):
            lo, hi = i * scale, (i + 1) * scale
            for j in range(math.floor(lo), min(math.ceil(hi), n_src)):
                overlap = min(hi, j + 1) - max(lo, j)
                if overlap > 0:
                    weights[i, j] = overlap
    else:
        scale = n_src / n_dst
        for i in range(n_dst):
            pos = (i + 0.5) * scale - 0.5
            pos = min(max(pos, 0.0), n_src - 1.0)
            j0 = min(math.floor(pos), n_src - 1)
            frac = pos - j0
            weights[i, j0] += 1.0 - frac
            if frac > 0:
                weights[i, j0 + 1] += frac
    return weights / weights.sum(axis=1, keepdims=True)


def resample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2D grid to (out_h, out_w); identity dims copy bit-exactly."""
    if grid.ndim != 2:
        raise InputError(f"resample expects a 2D grid, got shape {grid.shape}")
    if out_h <= 0 or out_w <= 0:
        raise InputError(f"non-positive resample target {out_h}x{out_w}")
    wr = _axis_weights(grid.shape[0], out_h)
    wc = _axis_weights(grid.shape[1], out_w)
    out = np.array(grid, dtype=float, copy=True)
    if wr is not None:
        out = wr @ out
    if wc is not None:
        out = out @ wc.T
    return out


def resize(grid: np.ndarray, size: int = DEFAULT_SIZE) -> np.ndarray:
    return resample(grid, size, size)


def normalize(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale each channel by its max; all-zero channels pass through.

    Returns (normalized stack, per-channel scales) such that
    normalized * scales[:, None, None] recovers the input.
    """
    scales = np.array([float(c.max()) for c in images])
    safe = np.where(scales > 0, scales, 1.0)
    return images / safe[:, None, None], np.where(scales > 0, scales, 1.0)


def featurize(netlist: PdnNetlist, size: int = DEFAULT_SIZE) -> FeatureStack:
    """Full pipeline: channel maps, resize to size x size, normalize."""
    raw = raw_stack(netlist)
    resized = np.stack([resample(img, size, size) for img in raw.images])
    data, scales = normalize(resized)
    return FeatureStack(data, scales,
                        (netlist.die_height, netlist.die_width))


# --- geometric transforms -------------------------------------------------

TRANSFORM_NAMES = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")


def transform_grid(arr: np.ndarray, name: str) -> np.ndarray:
    """Apply a named transform to the last two axes (rotations are CCW)."""
    if name == "identity":
        return arr.copy()
    if name == "hflip":
        return np.flip(arr, axis=-1).copy()
    if name == "vflip":
        return np.flip(arr, axis=-2).copy()
    if name in ("rot90", "rot180", "rot270"):
        k = {"rot90": 1, "rot180": 2, "rot270": 3}[name]
        return np.rot90(arr, k, axes=(-2, -1)).copy()
    raise InputError(f"unknown transform {name!r}")


def _coord_fn(name: str, width: int, height: int):
    if name == "identity":
        return (lambda x, y: (x, y)), (width, height)
    if name == "hflip":
        return (lambda x, y: (width - 1 - x, y)), (width, height)
    if name == "vflip":
        return (lambda x, y: (x, height - 1 - y)), (width, height)
    if name == "rot90":
        return (lambda x, y: (y, width - 1 - x)), (height, width)
    if name == "rot180":
        return (lambda x, y: (width - 1 - x, height - 1 - y)), (width, height)
    if name == "rot270":
        return (lambda x, y: (height - 1 - y, x)), (height, width)
    raise InputError(f"unknown transform {name!r}")


def transform_netlist(netlist: PdnNetlist, name: str) -> PdnNetlist:
    """Apply a named transform to all node coordinates and the die extent."""
    fn, (w2, h2) = _coord_fn(name, netlist.die_width, netlist.die_height)

    def move(n: NodeId) -> NodeId:
        x2, y2 = fn(n.x, n.y)
        return NodeId(n.layer, x2, y2)

    return PdnNetlist(
        w2, h2,
        [ResistorEdge(move(e.a), move(e.b), e.resistance) for e in netlist.edges],
        [CurrentSource(move(s.node), s.current) for s in netlist.sources],
        [VoltagePad(move(p.node), p.voltage) for p in netlist.pads])


def transform_case(case: TestCase, name: str) -> TestCase:
    """Transform features, ground truth, and any attached netlist together."""
    swap = name in ("rot90", "rot270")
    return TestCase(
        features=replace(case.features,
                         data=transform_grid(case.features.data, name),
                         scales=case.features.scales.copy(),
                         original_dims=(case.features.original_dims[1],
                                        case.features.original_dims[0])
                         if swap else case.features.original_dims),
        ground_truth=IrDropMap(transform_grid(case.ground_truth.data, name),
                               dict(case.ground_truth.provenance)),
        provenance=Provenance("augmented", transform=name,
                              parent_id=case.case_id),
        supply_voltage=case.supply_voltage,
        case_id=f"{case.case_id}_{name}" if case.case_id else None,
        netlist=transform_netlist(case.netlist, name) if case.netlist else None)


def augment(case: TestCase) -> list[TestCase]:
    """Sixfold expansion: the case itself plus its five nontrivial transforms."""
    return [case] + [transform_case(case, t) for t in TRANSFORM_NAMES[1:]]


class AugmentedView(Sequence):
    """Lazy sixfold view over a case sequence; index i maps to
    (base case i // 6, transform i % 6)."""

    def __init__(self, base: Sequence[TestCase]):
        self._base = base

    def __len__(self):
        return 6 * len(self._base)

    def __getitem__(self, i: int) -> TestCase:
        if not 0 <= i < len(self):
            raise IndexError(i)
        case = self._base[i // 6]
        name = TRANSFORM_NAMES[i % 6]
        return case if name == "identity" else transform_case(case, name)
