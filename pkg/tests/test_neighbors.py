from __future__ import annotations

import numpy as np
import pytest

from fieldformer.neighbors import (Caps, NeighborError, ObservationIndex, VelocityScales, brute_force_knn,
                                   build_offset_table, gather_neighbors, needs_refresh, scaled_distance)
from fieldformer.simulators.grid import GridSpec


def random_index(grid: GridSpec, rng, sensors: int = 8, density: float = 0.6) -> ObservationIndex:
    flat = rng.choice(grid.nx * grid.ny, size=sensors, replace=False)
    cells = np.stack([flat // grid.ny, flat % grid.ny], axis=1)
    values = rng.standard_normal((sensors, grid.nt, 1))
    mask = rng.uniform(size=(sensors, grid.nt)) < density
    return ObservationIndex(grid, cells, values, mask)


def random_queries(grid: GridSpec, rng, n: int) -> np.ndarray:
    return np.stack([grid.x0 + rng.uniform(0, grid.Lx, n), grid.y0 + rng.uniform(0, grid.Ly, n),
                     grid.t0 + rng.uniform(0, (grid.nt - 1) * grid.dt, n)], axis=1)


def test_scaled_distance_examples():
    ones = VelocityScales.ones()
    assert scaled_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], ones) == 0.0
    assert scaled_distance([3.0, 4.0, 0.0], [0.0, 0.0, 0.0], ones) == pytest.approx(25.0)
    s = VelocityScales(np.log([2.0, 1.0, 1.0]))
    assert scaled_distance([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], s) == pytest.approx(6.0)
    with pytest.raises(NeighborError):
        scaled_distance([0.0, 0.0], [0.0, 0.0, 0.0], ones)


def test_scaled_distance_symmetric(rng):
    s = VelocityScales(rng.normal(0, 1, 3))
    a, b = rng.standard_normal((2, 10, 3))
    np.testing.assert_allclose(scaled_distance(a, b, s), scaled_distance(b, a, s))


def test_gamma_positive_for_extreme_theta():
    assert np.all(VelocityScales([-30.0, 0.0, 30.0]).gamma > 0)
    with pytest.raises(ValueError):
        VelocityScales([np.nan, 0.0, 0.0])


def test_table_unit_ball_order():
    g = GridSpec(16, 16, 16, 1.0, Lx=16, Ly=16)
    tbl = build_offset_table(VelocityScales.ones(), g, Caps(4, 4))
    first = [tuple(o) for o in tbl.offsets[:7]]
    assert first == [(0, 0, 0), (0, 0, -1), (-1, 0, 0), (0, -1, 0), (0, 1, 0), (1, 0, 0), (0, 0, 1)]
    assert np.all(np.diff(tbl.dist) >= 0)


def test_table_expensive_time_prefers_space():
    g = GridSpec(16, 16, 16, 1.0, Lx=16, Ly=16)
    tbl = build_offset_table(VelocityScales(np.log([1.0, 1.0, 100.0])), g, Caps(4, 4))
    assert np.all(tbl.offsets[1:20, 2] == 0)


def test_table_matches_independent_sort(rng):
    g = GridSpec(10, 8, 12, 0.05)
    for _ in range(5):
        s = VelocityScales(rng.normal(0, 1, 3))
        tbl = build_offset_table(s, g, Caps(3, 5))
        phys = tbl.offsets * np.array([g.dx, g.dy, g.dt])
        d = scaled_distance(phys, np.zeros(3), s)
        np.testing.assert_allclose(tbl.dist, d, rtol=1e-12)
        order = np.lexsort((tbl.offsets[:, 1], tbl.offsets[:, 0], tbl.offsets[:, 2], tbl.dist))
        np.testing.assert_array_equal(order, np.arange(len(tbl)))


def test_table_empty_caps_error():
    g = GridSpec(8, 8, 8, 1.0, Lx=8, Ly=8)
    with pytest.raises(NeighborError):
        build_offset_table(VelocityScales.ones(), g, Caps(-1, 0))


def test_needs_refresh_examples():
    a = VelocityScales([0.1, 0.2, 0.3])
    assert not needs_refresh(a, a, 0.05)
    assert needs_refresh(a, VelocityScales([0.1, 0.3, 0.3]), 0.05)
    assert needs_refresh(a, VelocityScales([0.1, 0.2, 0.3 + 1e-9]), 0.0)


@pytest.mark.parametrize("periodic", [True, False])
def test_gather_equals_brute_force(rng, periodic):
    g = GridSpec(12, 10, 30, 0.02, periodic=periodic)
    for _ in range(10):
        idx = random_index(g, rng)
        s = VelocityScales(rng.normal(0, 1.5, 3) + np.log([1 / g.dx, 1 / g.dy, 1 / g.dt]))
        tbl = build_offset_table(s, g, Caps.default(g))
        q = random_queries(g, rng, 20)
        m = int(rng.integers(1, 12))
        a = gather_neighbors(q, idx, tbl, m)
        b = brute_force_knn(q, idx, s, m)
        np.testing.assert_array_equal(a.offsets, b.offsets)
        np.testing.assert_array_equal(a.dist, b.dist)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_allclose(a.deltas, b.deltas)


def test_gather_with_exclusion_and_time_limit(rng):
    g = GridSpec(12, 10, 30, 0.02)
    idx = random_index(g, rng)
    s = VelocityScales.cell_isotropic(g, 0.5)
    tbl = build_offset_table(s, g)
    q = random_queries(g, rng, 30)
    limit = rng.integers(5, 30, 30)
    a = gather_neighbors(q, idx, tbl, 6, exclude_cell=True, time_limit=limit)
    b = brute_force_knn(q, idx, s, 6, exclude_cell=True, time_limit=limit)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    assert np.all(a.time_index <= limit[:, None])
    assert not np.any((a.offsets[..., 0] == 0) & (a.offsets[..., 1] == 0))


def test_self_hit_first():
    g = GridSpec(8, 8, 10, 0.1)
    idx = ObservationIndex(g, np.array([[2, 3], [5, 5]]), np.arange(20.0).reshape(2, 10, 1), np.ones((2, 10), bool))
    tbl = build_offset_table(VelocityScales.cell_isotropic(g), g)
    ns = gather_neighbors(g.coords(4, 2, 3), idx, tbl, 3)
    assert ns.dist[0] == 0.0
    assert ns.values[0, 0] == 4.0 and ns.sensor[0] == 0


def test_single_sensor_temporal_nearest():
    g = GridSpec(8, 8, 20, 0.1)
    mask = np.zeros((1, 20), bool)
    mask[0, [3, 11, 17]] = True
    idx = ObservationIndex(g, np.array([[1, 1]]), np.arange(20.0).reshape(1, 20, 1), mask)
    tbl = build_offset_table(VelocityScales.cell_isotropic(g, 5.0), g)
    ns = gather_neighbors(g.coords(13, 6, 6), idx, tbl, 1)
    assert ns.time_index[0] == 11


def test_brute_force_exhaustive_and_errors(rng):
    g = GridSpec(6, 6, 8, 0.1)
    idx = random_index(g, rng, sensors=3, density=0.5)
    s = VelocityScales(rng.normal(0, 1, 3))
    N = idx.count
    ns = brute_force_knn(random_queries(g, rng, 1)[0], idx, s, N)
    assert ns.m == N and np.all(np.diff(ns.dist) >= 0)
    with pytest.raises(NeighborError):
        brute_force_knn(random_queries(g, rng, 1)[0], idx, s, N + 1)


def test_ties_are_deterministic():
    g = GridSpec(9, 9, 5, 1.0, Lx=9, Ly=9)
    cells = np.array([[3, 4], [5, 4], [4, 3], [4, 5]])
    idx = ObservationIndex(g, cells, np.zeros((4, 5, 1)), np.ones((4, 5), bool))
    tbl = build_offset_table(VelocityScales.ones(), g)
    a = gather_neighbors(g.coords(2, 4, 4), idx, tbl, 4)
    b = brute_force_knn(g.coords(2, 4, 4), idx, VelocityScales.ones(), 4)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    assert [tuple(o[:2]) for o in a.offsets] == [(-1, 0), (0, -1), (0, 1), (1, 0)]


def test_caps_too_small_error():
    g = GridSpec(16, 16, 10, 0.1)
    idx = ObservationIndex(g, np.array([[8, 8]]), np.zeros((1, 10, 1)), np.ones((1, 10), bool))
    tbl = build_offset_table(VelocityScales.cell_isotropic(g), g, Caps(1, 1))
    with pytest.raises(NeighborError, match="caps"):
        gather_neighbors(g.coords(5, 0, 0), idx, tbl, 1)


def test_larger_gamma_t_narrows_temporal_spread(rng):
    g = GridSpec(12, 10, 40, 0.02)
    idx = random_index(g, rng, sensors=6, density=0.3)
    q = random_queries(g, rng, 25)
    spreads = []
    for wt in (0.1, 1.0, 10.0):
        s = VelocityScales.cell_isotropic(g, wt)
        ns = gather_neighbors(q, idx, build_offset_table(s, g), 8)
        spreads.append(np.max(np.abs(ns.deltas[..., 2]), axis=-1))
    assert np.all(spreads[1] <= spreads[0] + 1e-12) and np.all(spreads[2] <= spreads[1] + 1e-12)


def test_gather_is_deterministic(rng):
    g = GridSpec(12, 10, 30, 0.02)
    idx = random_index(g, rng)
    tbl = build_offset_table(VelocityScales.cell_isotropic(g), g)
    q = random_queries(g, rng, 50)
    a, b = gather_neighbors(q, idx, tbl, 7), gather_neighbors(q, idx, tbl, 7)
    for f in ("deltas", "values", "sensor", "time_index", "offsets", "dist"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_default_caps_cover_the_longer_periodic_axis(rng):
    g = GridSpec(7, 11, 12, 0.02)
    idx = random_index(g, rng, sensors=3, density=0.3)
    tbl = build_offset_table(VelocityScales(np.log([1.0, 1.0, 1e3])), g, Caps.default(g))
    q = random_queries(g, rng, 20)
    m = min(6, idx.count)
    np.testing.assert_array_equal(gather_neighbors(q, idx, tbl, m).sensor, brute_force_knn(q, idx, tbl.scales, m).sensor)
