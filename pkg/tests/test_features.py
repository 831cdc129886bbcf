import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dimenet.errors import EmptyBaseline, NonPositiveDepth, OutOfImageBounds
from dimenet.features import (
    FEATURE_MASKS,
    GridConfig,
    PointFeatures,
    build_point_features,
    cell_indices,
    channel_mask,
    compute_pmd,
    feature_vector,
    fit_channel_scaling,
    flatten,
    gridify,
    occupancy_metrics,
)
from dimenet.geometry import Correspondences, Intrinsics, Pose, project
from dimenet.simulator import drop_cells, simulate_dataset

KC = Intrinsics(2900.0, 2900.0, 2016.0, 1512.0)
GRID = GridConfig()


def frame_points(rng, n=100):
    px = np.column_stack([rng.uniform(0, 4032, n), rng.uniform(0, 3024, n)])
    Z = rng.uniform(400, 700, n)
    X = (px[:, 0] - KC.cx) * Z / KC.fx + rng.normal(0, 1, n)
    Y = (px[:, 1] - KC.cy) * Z / KC.fy + rng.normal(0, 1, n)
    return Correspondences(px, np.column_stack([X, Y, Z]))


# --- PMD ---------------------------------------------------------------------


def test_pmd_zero_for_self_consistent_pixel():
    X = np.array([12.0, -30.0, 550.0])
    assert np.allclose(compute_pmd(KC, project(KC, Pose.identity(), X), X), 0, atol=1e-12)


def test_pmd_fx_linearity(rng):
    d = 17.5
    X = rng.uniform(-200, 200, (50, 3)) + [0, 0, 600]
    px = project(Intrinsics(KC.fx + d, KC.fy, KC.cx, KC.cy), Pose.identity(), X)
    f = build_point_features(KC, Correspondences(px, X))
    assert np.allclose(f.dmd[:, 0], -d * X[:, 0] / X[:, 2], rtol=0, atol=1e-9)
    assert np.allclose(f.dmd[:, 1], 0, atol=1e-9)


def test_pmd_matches_hand_formula(rng):
    for _ in range(20):
        k = Intrinsics(*rng.uniform(1000, 4000, 2), *rng.uniform(0, 3000, 2))
        px, X = rng.uniform(0, 4000, 2), rng.uniform(-300, 300, 3) + [0, 0, 800]
        hand = np.array([
            k.fx * X[0] / X[2] + k.cx - px[0],
            k.fy * X[1] / X[2] + k.cy - px[1],
        ])
        assert np.allclose(compute_pmd(k, px, X), hand, rtol=1e-14)


def test_pmd_rejects_non_positive_depth():
    with pytest.raises(NonPositiveDepth):
        compute_pmd(KC, [0, 0], [1, 1, 0])
    with pytest.raises(NonPositiveDepth) as exc:
        build_point_features(KC, Correspondences([[0, 0], [1, 1]], [[0, 0, 5], [0, 0, -5]]))
    assert exc.value.index == 1


# --- point features ----------------------------------------------------------


def test_point_feature_substitution():
    X = np.array([10.0, 20.0, 100.0])
    px = project(KC, Pose.identity(), X)
    f = build_point_features(KC, Correspondences(px, X))
    assert np.allclose(f.values[0], [0, 0, 10, 20, 0.01], atol=1e-12)


def test_point_features_empty():
    f = build_point_features(KC, Correspondences(np.zeros((0, 2)), np.zeros((0, 3))))
    assert len(f) == 0 and f.values.shape == (0, 5)


def test_point_features_loop_oracle():
    kc, frames = simulate_dataset(1, seed=3)
    c = frames[0].corrs
    f = build_point_features(kc, c)
    assert len(f) == 320
    for i in range(len(c)):
        X, Y, Z = c.points[i]
        expect = np.concatenate([compute_pmd(kc, c.pixels[i], c.points[i]), [X, Y, 1 / Z]])
        assert np.array_equal(f.values[i], expect) or np.allclose(f.values[i], expect, rtol=1e-15, atol=1e-12)


# --- grid --------------------------------------------------------------------


def test_grid_parse_and_edges():
    g = GridConfig.parse("8x6")
    assert (g.cols, g.rows, g.feature_dim, g.label()) == (8, 6, 240, "8x6")
    assert np.allclose(np.diff(g.col_edges()), 504) and np.allclose(np.diff(g.row_edges()), 504)
    assert g.col_edges()[-1] == 4032 and g.row_edges()[-1] == 3024
    with pytest.raises(ValueError):
        GridConfig(rows=0, cols=3)


def test_cell_boundaries_half_open():
    g = GRID
    px = [[0, 0], [503.999, 0], [504, 0], [4032, 3024], [4031.9, 1512]]
    idx = cell_indices(px, g)
    assert idx.tolist() == [0, 0, 1, 47, 3 * 8 + 7]


@pytest.mark.parametrize("px", [[-0.1, 5], [5, 3024.5], [np.nan, 1]])
def test_cell_indices_out_of_bounds(px):
    with pytest.raises(OutOfImageBounds):
        cell_indices([[10, 10], px], GRID)


def test_single_point_gamma():
    f = PointFeatures(np.array([[1.0, 2, 3, 4, 0.5]]), np.array([[1000.0, 700.0]]))
    m = gridify(f, GRID)
    assert m.occupancy_count == 1
    assert occupancy_metrics(m, m, GRID) == (1 / 48, 0.0)


def test_cell_mean_of_two():
    f = PointFeatures(np.array([[1.0, 2, 3, 4, 0.5], [3.0, -2, 5, 0, 0.25]]), np.array([[10.0, 10], [20.0, 30]]))
    m = gridify(f, GRID)
    assert np.array_equal(m.cell(0, 0), [2.0, 0, 4, 2, 0.375])
    assert m.cell(0, 1) is None


def test_gridify_permutation_invariant(rng):
    f = build_point_features(KC, frame_points(rng, 300))
    m1 = gridify(f, GRID)
    for _ in range(5):
        p = rng.permutation(len(f))
        m2 = gridify(PointFeatures(f.values[p], f.pixels[p]), GRID)
        assert np.array_equal(m1.means, m2.means) and np.array_equal(m1.counts, m2.counts)


def test_flatten_layout(rng):
    assert flatten(gridify(PointFeatures(np.zeros((0, 5)), np.zeros((0, 2))), GRID)).tolist() == [0.0] * 240
    j, k = 4, 6
    px = np.array([[k * 504 + 100.0, j * 504 + 50.0]])
    y = flatten(gridify(PointFeatures(np.array([[1.0, 2, 3, 4, 5]]), px), GRID))
    assert len(y) == 240
    off = 5 * (j * GRID.cols + k)
    assert np.flatnonzero(y).tolist() == list(range(off, off + 5))
    assert y[off:off + 5].tolist() == [1, 2, 3, 4, 5]


def test_flat_support_equals_occupied_cells(rng):
    f = build_point_features(KC, frame_points(rng, 40))
    m = gridify(f, GRID)
    y = flatten(m).reshape(48, 5)
    assert np.array_equal(np.any(y != 0, axis=1), m.counts.reshape(-1) > 0)


# --- occupancy ---------------------------------------------------------------


def test_occupancy_counting_example():
    before = gridify(PointFeatures(np.ones((48, 5)), np.array([[k * 504 + 1.0, j * 504 + 1.0] for j in range(6) for k in range(8)])), GRID)
    after = gridify(PointFeatures(np.ones((38, 5)), np.array([[k * 504 + 1.0, j * 504 + 1.0] for j in range(6) for k in range(8)][:38])), GRID)
    gamma, eta = occupancy_metrics(before, after, GRID)
    assert gamma == 1.0 and eta == pytest.approx(10 / 48)


def test_occupancy_extremes(rng):
    f = build_point_features(KC, frame_points(rng, 50))
    m = gridify(f, GRID)
    empty = gridify(PointFeatures(np.zeros((0, 5)), np.zeros((0, 2))), GRID)
    assert occupancy_metrics(m, m, GRID)[1] == 0.0
    assert occupancy_metrics(m, empty, GRID)[1] == 1.0
    with pytest.raises(EmptyBaseline):
        occupancy_metrics(empty, empty, GRID)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9))
def test_drop_cells_eta_brute_force(seed, eta):
    kc, frames = _one_frame()
    f = drop_cells(frames[0], GRID, eta, np.random.default_rng(seed))
    occ = lambda c: {(int(y // 504), int(min(x, 4031.999) // 504)) for x, y in c.pixels}
    b, a = occ(frames[0].corrs), occ(f.corrs)
    assert a <= b
    assert f.noise.eta == pytest.approx(1 - len(a) / len(b), abs=1e-12)
    gamma, eta_m = occupancy_metrics(gridify(build_point_features(kc, frames[0].corrs), GRID),
                                     gridify(build_point_features(kc, f.corrs), GRID), GRID)
    assert gamma == len(b) / 48 and eta_m == pytest.approx(1 - len(a) / len(b), abs=1e-12)


_cache = {}


def _one_frame():
    if "f" not in _cache:
        _cache["f"] = simulate_dataset(1, seed=5)
    return _cache["f"]


# --- masks and scaling -------------------------------------------------------


def test_masks_zero_excluded_channels(rng):
    c = frame_points(rng, 200)
    full = feature_vector(KC, c, GRID).reshape(48, 5)
    for name, keep in FEATURE_MASKS.items():
        y = feature_vector(KC, c, GRID, channel_mask(GRID, keep)).reshape(48, 5)
        drop = [i for i in range(5) if i not in keep]
        assert np.all(y[:, drop] == 0)
        assert np.array_equal(y[:, list(keep)], full[:, list(keep)])


def test_channel_scaling_is_pure_scale(rng):
    Y = np.array([feature_vector(KC, frame_points(rng, 80), GRID) for _ in range(10)])
    s = fit_channel_scaling(Y, GRID)
    assert s.shape == (240,) and np.all(s > 0)
    assert np.all((np.zeros(240) * s) == 0)
    scaled = (Y * s).reshape(-1, 48, 5)
    occ = np.any(scaled != 0, axis=2)
    assert np.allclose(np.sqrt(np.mean(scaled[occ] ** 2, axis=0)), 1.0)
