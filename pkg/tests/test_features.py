import math

import numpy as np
import pytest

from irgrid.errors import InputError
from irgrid.features import (
    CHANNELS,
    RESISTANCE_CHANNELS,
    TRANSFORM_NAMES,
    AugmentedView,
    Provenance,
    TestCase,
    augment,
    current_map,
    effective_distance_map,
    featurize,
    layer_resistance_maps,
    normalize,
    pdn_density_map,
    raw_stack,
    resample,
    resize,
    segment_cell_lengths,
    transform_case,
    transform_grid,
    transform_netlist,
)
from irgrid.netlist import (
    CurrentSource,
    NodeId,
    PdnNetlist,
    ResistorEdge,
    VoltagePad,
)
from irgrid.solver import solve_netlist
from irgrid.synth import GenParams, case_rng, generate_case, generate_netlist


def small_grid():
    """4x4 die: one M1 row, one M4 column, a via, a load, a pad."""
    edges = [
        ResistorEdge(NodeId("M1", 0, 1), NodeId("M1", 2, 1), 2.0),
        ResistorEdge(NodeId("M1", 2, 1), NodeId("M1", 3, 1), 1.0),
        ResistorEdge(NodeId("M4", 2, 0), NodeId("M4", 2, 1), 1.5),
        ResistorEdge(NodeId("M1", 2, 1), NodeId("M4", 2, 1), 0.5),
    ]
    return PdnNetlist(4, 4, edges,
                      [CurrentSource(NodeId("M1", 0, 1), 0.002)],
                      [VoltagePad(NodeId("M4", 2, 0), 1.0)])


def test_channel_names():
    assert CHANNELS[:3] == ("current", "pdn_density", "eff_distance")
    assert CHANNELS[3:] == ("r_m1", "r_m4", "r_m7", "r_m8", "r_m9",
                            "r_m14", "r_m47", "r_m78", "r_m89")
    assert RESISTANCE_CHANNELS == tuple(range(3, 12))


def test_current_map_accumulates():
    n = small_grid()
    n.sources.append(CurrentSource(NodeId("M1", 0, 1), 0.003))
    grid = current_map(n)
    assert grid[1, 0] == pytest.approx(0.005)
    assert grid.sum() == pytest.approx(0.005)


def test_effective_distance_values():
    n = small_grid()  # single pad at (2, 0)
    grid = effective_distance_map(n)
    assert grid[0, 2] == pytest.approx(1.0 / 0.5)  # coincident pixel capped
    assert grid[0, 3] == pytest.approx(1.0)
    assert grid[2, 2] == pytest.approx(0.5)
    assert grid[1, 1] == pytest.approx(1.0 / math.hypot(1, 1))


def test_effective_distance_needs_pads():
    n = small_grid()
    n.pads.clear()
    with pytest.raises(InputError):
        effective_distance_map(n)


def test_density_counts_stripes_not_edges():
    n = small_grid()
    grid = pdn_density_map(n)
    # the two collinear M1 edges form one stripe covering x=0..3 at y=1
    assert list(grid[1]) == [1.0, 1.0, 2.0, 1.0]
    # the M4 column covers y=0..1 at x=2, overlapping the row stripe at (2, 1)
    assert grid[0, 2] == 1.0
    assert grid[2, 2] == 0.0
    # via edges contribute nothing
    assert grid.sum() == pytest.approx(6.0)


def test_density_gap_splits_stripes():
    edges = [
        ResistorEdge(NodeId("M1", 0, 0), NodeId("M1", 1, 0), 1.0),
        ResistorEdge(NodeId("M1", 3, 0), NodeId("M1", 5, 0), 1.0),
    ]
    n = PdnNetlist(6, 2, edges, [], [])
    grid = pdn_density_map(n)
    assert list(grid[0]) == [1.0, 1.0, 0.0, 1.0, 1.0, 1.0]


def test_segment_cell_lengths_axis_aligned():
    # pixels are centered on integers: a 0..3 run splits half/1/1/half
    pieces = segment_cell_lengths((0, 1), (3, 1))
    assert [cell for cell, _ in pieces] == [(0, 1), (1, 1), (2, 1), (3, 1)]
    assert [ln for _, ln in pieces] == pytest.approx([0.5, 1.0, 1.0, 0.5])


def test_segment_cell_lengths_mirror_symmetric():
    ahead = dict(segment_cell_lengths((0, 0), (3, 0)))
    back = dict(segment_cell_lengths((3, 0), (0, 0)))
    assert set(ahead) == set(back)
    for cell, ln in ahead.items():
        assert back[cell] == pytest.approx(ln)
    # mirroring x -> 3 - x permutes cells and keeps lengths
    for (x, y), ln in ahead.items():
        assert ahead[(3 - x, y)] == pytest.approx(ln)


def test_segment_cell_lengths_diagonal():
    pieces = segment_cell_lengths((0, 0), (2, 2))
    total = sum(length for _, length in pieces)
    assert total == pytest.approx(math.hypot(2, 2))
    assert [cell for cell, _ in pieces] == [(0, 0), (1, 1), (2, 2)]


def test_resistance_maps_distribute_by_length():
    n = small_grid()
    maps = layer_resistance_maps(n)
    # 2-ohm edge spans x=0..2: quarter, half, quarter of it per pixel
    assert maps["M1"][1, 0] == pytest.approx(0.5)
    assert maps["M1"][1, 1] == pytest.approx(1.0)
    # plus half of the 1-ohm edge x=2..3 in pixel 2
    assert maps["M1"][1, 2] == pytest.approx(0.5 + 0.5)
    assert maps["M1"][1, 3] == pytest.approx(0.5)
    assert maps["M4"][0, 2] == pytest.approx(0.75)
    assert maps["M4"][1, 2] == pytest.approx(0.75)
    # via charges its full resistance to its pixel
    assert maps["M14"][1, 2] == pytest.approx(0.5)
    assert maps["M47"].sum() == 0.0


def test_resistance_sum_is_conserved():
    rng = case_rng(333, 0)
    netlist = generate_netlist(GenParams(die_size=32), rng)
    maps = layer_resistance_maps(netlist)
    total_map = sum(m.sum() for m in maps.values())
    total_edges = sum(e.resistance for e in netlist.edges)
    assert total_map == pytest.approx(total_edges, rel=1e-12)


def test_raw_stack_order_and_nonnegativity():
    stack = raw_stack(small_grid())
    assert stack.images.shape == (12, 4, 4)
    assert stack.images.min() >= 0.0
    assert np.array_equal(stack.images[0], current_map(small_grid()))


# --- resampling -----------------------------------------------------------


def test_resample_identity_is_bit_exact():
    rng = np.random.default_rng(0)
    grid = rng.random((7, 5))
    out = resample(grid, 7, 5)
    assert np.array_equal(out, grid)


def test_resample_downscale_is_area_average():
    grid = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert resample(grid, 1, 1)[0, 0] == pytest.approx(0.5)
    grid4 = np.arange(16, dtype=float).reshape(4, 4)
    out = resample(grid4, 2, 2)
    assert out[0, 0] == pytest.approx(grid4[:2, :2].mean())
    assert out[1, 1] == pytest.approx(grid4[2:, 2:].mean())


def test_resample_preserves_mean_on_downscale():
    rng = np.random.default_rng(1)
    grid = rng.random((64, 64))
    out = resample(grid, 16, 16)
    assert out.mean() == pytest.approx(grid.mean(), rel=1e-12)


def test_resample_upscale_interpolates_between_centers():
    grid = np.array([[0.0, 1.0]])
    out = resample(grid, 1, 4)
    # pixel centers at source coords -0.25, 0.25, 0.75, 1.25 (clamped)
    assert out[0] == pytest.approx([0.0, 0.25, 0.75, 1.0])


def test_resample_constant_invariance_and_bounds():
    for shape, target in [((10, 10), 512), ((512, 512), 64), ((31, 17), 64)]:
        const = np.full(shape, 0.37)
        out = resample(const, target, target)
        assert np.allclose(out, 0.37, rtol=1e-12)
        rng = np.random.default_rng(3)
        grid = rng.random(shape)
        out = resample(grid, target, target)
        assert out.min() >= grid.min() - 1e-12
        assert out.max() <= grid.max() + 1e-12


def test_resize_idempotent_at_target():
    rng = np.random.default_rng(2)
    grid = rng.random((64, 64))
    once = resize(grid, 64)
    assert np.array_equal(once, grid)


def test_resample_rejects_bad_targets():
    with pytest.raises(InputError):
        resample(np.zeros((4, 4)), 0, 4)
    with pytest.raises(InputError):
        resample(np.zeros(4), 4, 4)


def test_normalize_scales_and_zero_channels():
    images = np.zeros((12, 4, 4))
    images[0, 1, 1] = 4.0
    images[5] = 2.0
    data, scales = normalize(images)
    assert data.max() <= 1.0
    assert data[0, 1, 1] == 1.0
    assert scales[0] == 4.0
    assert scales[1] == 1.0  # all-zero channel passes through
    assert np.array_equal(data[1], np.zeros((4, 4)))
    assert np.allclose(data * scales[:, None, None], images)


def test_featurize_end_to_end():
    stack = featurize(small_grid(), size=16)
    assert stack.data.shape == (12, 16, 16)
    assert stack.original_dims == (4, 4)
    assert stack.data.min() >= 0.0
    assert stack.data.max() <= 1.0


# --- transforms -----------------------------------------------------------


def test_transform_grid_matches_coordinate_map():
    # a one-hot grid transported by the array op must match the moved
    # coordinate for every transform
    h, w = 5, 7
    for name in TRANSFORM_NAMES:
        for (x, y) in [(0, 0), (6, 4), (2, 3)]:
            grid = np.zeros((h, w))
            grid[y, x] = 1.0
            moved = transform_grid(grid, name)
            netlist = PdnNetlist(
                w, h,
                [ResistorEdge(NodeId("M1", x, y), NodeId("M4", x, y), 1.0)],
                [], [])
            out = transform_netlist(netlist, name)
            node = out.edges[0].a
            assert moved[node.y, node.x] == 1.0, (name, x, y)
            assert moved.shape == (out.die_height, out.die_width)


def test_transform_round_trips():
    rng = np.random.default_rng(5)
    grid = rng.random((6, 9))
    assert np.array_equal(
        transform_grid(transform_grid(grid, "hflip"), "hflip"), grid)
    assert np.array_equal(
        transform_grid(transform_grid(grid, "rot90"), "rot270"), grid)
    assert np.array_equal(
        transform_grid(transform_grid(grid, "rot180"), "rot180"), grid)


def test_transform_netlist_preserves_solution():
    # solver equivariance: transforming the netlist permutes node voltages
    rng = case_rng(44, 0)
    netlist = generate_netlist(GenParams(die_size=32), rng)
    base = solve_netlist(netlist).data
    for name in TRANSFORM_NAMES:
        moved = solve_netlist(transform_netlist(netlist, name)).data
        assert np.max(np.abs(moved - transform_grid(base, name))) < 1e-8, name


def test_transform_rejects_unknown_name():
    with pytest.raises(InputError):
        transform_grid(np.zeros((4, 4)), "transpose")


def make_case(die=24, seed=0):
    rng = case_rng(seed + 1000, 0)
    return generate_case(GenParams(die_size=die), rng, size=16,
                         case_id=f"case_{seed:04d}")


def test_augment_is_sixfold_with_provenance():
    case = make_case()
    out = augment(case)
    assert len(out) == 6
    assert out[0] is case
    for view, name in zip(out[1:], TRANSFORM_NAMES[1:]):
        assert view.provenance == Provenance("augmented", name, case.case_id)
        assert view.features.data.shape == case.features.data.shape
        assert view.supply_voltage == case.supply_voltage


def test_augmented_ground_truth_matches_resolve():
    # ground truth transported by the array op equals re-solving the
    # transformed netlist
    case = make_case()
    for view in augment(case)[1:]:
        resolved = solve_netlist(view.netlist).data
        assert np.max(np.abs(view.ground_truth.data - resolved)) < 1e-8


def test_augmented_features_match_refeaturize():
    # features of the transformed netlist equal transformed features;
    # square die, so resize and the transforms commute
    case = make_case()
    for view in augment(case)[1:]:
        refeat = featurize(view.netlist, size=16)
        assert np.max(np.abs(view.features.data - refeat.data)) < 1e-8
        assert np.allclose(view.features.scales, refeat.scales)


def test_augmented_view_is_lazy_sixfold():
    cases = [make_case(seed=i) for i in range(2)]
    view = AugmentedView(cases)
    assert len(view) == 12
    assert view[0] is cases[0]
    assert view[6] is cases[1]
    assert view[1].provenance.transform == "hflip"
    assert view[11].provenance.transform == "rot270"
    with pytest.raises(IndexError):
        view[12]


def test_transform_case_swaps_dims_on_rotation():
    case = make_case()
    object.__setattr__  # silence linters; dims come from a non-square check
    rect = TestCase(
        features=case.features,
        ground_truth=case.ground_truth,
        provenance=case.provenance,
        supply_voltage=case.supply_voltage,
        case_id=case.case_id)
    rect.features.original_dims = (10, 20)
    rotated = transform_case(rect, "rot90")
    assert rotated.features.original_dims == (20, 10)
    flipped = transform_case(rect, "hflip")
    assert flipped.features.original_dims == (10, 20)
