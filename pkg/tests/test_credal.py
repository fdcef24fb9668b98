import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entrobound.credal import (AmbiguityRow, EntropyGeometry, InfeasibleRowError, cell_max_density,
                               epsilon, global_epsilon, linear_extreme, peak_density_at, phi, phi_eps,
                               robust_max_convex, robust_min_convex)
from entrobound.geometry import Box, build_uniform_grid

from oracles import brute_max, brute_min, random_row


def geom_equal(n, L_grad=0.0, base="e"):
    return EntropyGeometry(0.0, np.full(n, -math.log(n)), 1, 1.0 / n, L_grad, base)


def test_phi_reference_distribution_is_zero():
    g = build_uniform_grid(Box([0, 0], [3, 1]), [3, 2])
    geom = EntropyGeometry.from_partition(g)
    p = g.cell_volumes() / g.box.volume
    assert phi(p, np.zeros(6), geom) == pytest.approx(0.0, abs=1e-15)


def test_phi_hand_values():
    geom = geom_equal(2)
    assert phi([1, 0], [0, 0], geom) == pytest.approx(math.log(2), abs=1e-15)
    assert phi([0.5, 0.5], [1, 3], geom) == pytest.approx(2.0, abs=1e-15)
    assert phi([1, 0], [0, 0], geom_equal(2, base="2")) == pytest.approx(1.0, abs=1e-15)


def test_epsilon_hand_values():
    assert epsilon([0.3, 0.7], 2, 0.0, 0.5) == 0.0
    assert epsilon([1.0], 1, 1.0, 0.5) == pytest.approx(math.log(1.125), abs=1e-15)
    S = 16
    C = 0.5 * 3 * 2.0 * 0.25**4
    assert epsilon(np.full(S, 1 / S), 3, 2.0, 0.25) == pytest.approx(math.log1p(C * S), rel=1e-13)
    assert global_epsilon(3, math.log(S), 2.0, 0.25) == pytest.approx(math.log1p(C * S), rel=1e-13)


def test_global_epsilon_hand_values():
    assert global_epsilon(4, 3.0, 0.0, 0.5) == 0.0
    assert global_epsilon(1, math.log(2), 1.0, 0.5) == pytest.approx(math.log(1.25), abs=1e-15)
    # overflow-free in log form
    huge = global_epsilon(80, 2000.0, 0.0, 0.5, log_L=900.0)
    assert math.isfinite(huge) and huge > 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(0, 1e3), st.floats(1e-3, 1.0), st.integers(1, 20), st.integers(0, 2**31))
def test_epsilon_nonnegative_and_below_global(n, L, delta, S, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(S))
    e = epsilon(p, n, L, delta)
    assert e >= 0
    assert e <= global_epsilon(n, math.log(S), L, delta) * (1 + 1e-12) + 1e-300


def test_phi_eps_adds_local_correction():
    geom = EntropyGeometry(0.0, np.full(3, -math.log(3)), 1, 1 / 3, 6.0)
    p = np.array([0.2, 0.3, 0.5])
    V = np.array([0.1, -0.2, 0.4])
    C = geom.eps_constant
    assert C == pytest.approx(0.5 * 6.0 / 9)
    assert phi_eps(p, V, geom) == pytest.approx(phi(p, V, geom) + epsilon(p, 1, 6.0, 1 / 3), rel=1e-13)


def test_cell_max_density_values():
    assert cell_max_density(0.3, 0.5, 0.0, [0.5]) == pytest.approx(0.6)
    assert cell_max_density(0.5, 0.25, 2.0, [0.5, 0.5]) == pytest.approx(3.0, abs=1e-15)
    with pytest.raises(ValueError):
        cell_max_density(0.5, 0.3, 2.0, [0.5, 0.5])


def test_peak_density_is_largest_at_corners():
    lows, highs = np.array([0.0, 0.0]), np.array([0.5, 0.25])
    c = np.random.default_rng(0).random((500, 2)) * (highs - lows)
    corner = peak_density_at(highs, 0.5, lows, highs, 2.0)
    assert np.all(peak_density_at(c, 0.5, lows, highs, 2.0) <= corner + 1e-12)
    assert corner == pytest.approx(cell_max_density(0.5, 0.125, 2.0, highs - lows))


def test_linear_extreme_examples():
    row = AmbiguityRow([0.1] * 3, [0.8] * 3)
    val, p = linear_extreme(row, [3, 2, 1], "max")
    np.testing.assert_allclose(p, [0.8, 0.1, 0.1])
    assert val == pytest.approx(2.7)
    val, _ = linear_extreme(row, [2, 2, 2], "min")
    assert val == pytest.approx(2.0)
    fixed = AmbiguityRow([0.2, 0.3, 0.5], [0.2, 0.3, 0.5])
    np.testing.assert_array_equal(linear_extreme(fixed, [5, -1, 3], "max")[1], [0.2, 0.3, 0.5])
    with pytest.raises(ValueError):
        linear_extreme(row, [1, 2, 3], "sideways")


@pytest.mark.parametrize("lo,hi", [([0.6, 0.6], [0.9, 0.9]), ([0.0, 0.1], [0.3, 0.4]), ([0.5], [0.4])])
def test_empty_rows_are_rejected(lo, hi):
    with pytest.raises(InfeasibleRowError):
        AmbiguityRow(lo, hi)


def test_singleton_rows():
    row = AmbiguityRow([0.2, 0.8], [0.2, 0.8])
    geom = geom_equal(2)
    V = np.array([1.0, -2.0])
    for ext in (robust_max_convex(row, V, geom), robust_min_convex(row, V, geom)):
        assert ext.value == pytest.approx(phi(row.lower, V, geom), abs=1e-15)


def test_full_simplex_extremes():
    n = 5
    row = AmbiguityRow(np.zeros(n), np.ones(n))
    geom = geom_equal(n)
    hi = robust_max_convex(row, np.zeros(n), geom)
    assert hi.value == pytest.approx(math.log(n), abs=1e-14)
    assert np.count_nonzero(hi.p) == 1
    lo = robust_min_convex(row, np.zeros(n), geom)
    assert lo.value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(lo.p, 1 / n, atol=1e-9)


@pytest.mark.parametrize("use_eps", [False, True])
def test_max_matches_vertex_enumeration(use_eps):
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(2, 6))
        row = random_row(rng, n)
        geom = EntropyGeometry(0.0, np.log(rng.dirichlet(np.ones(n))), 1, 0.3, 4.0)
        V = rng.normal(size=n)
        ext = robust_max_convex(row, V, geom, use_eps)
        assert row.contains(ext.p, 1e-12)
        assert abs(ext.value - brute_max(row, V, geom, use_eps)) <= 1e-12


def test_heuristic_matches_enumeration_on_larger_rows():
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(6, 13))
        row = random_row(rng, n)
        geom = EntropyGeometry(0.0, np.log(rng.dirichlet(np.ones(n))), 2, 0.2, 3.0)
        V = rng.normal(size=n)
        exact = robust_max_convex(row, V, geom, True)
        heur = robust_max_convex(row, V, geom, True, vertex_budget=0)
        assert exact.mode == "exact" and heur.mode == "heuristic"
        assert row.contains(heur.p, 1e-12)
        assert abs(exact.value - heur.value) <= 1e-9


def test_min_matches_dense_oracle():
    rng = np.random.default_rng(9)
    for _ in range(25):
        n = int(rng.integers(2, 5))
        row = random_row(rng, n)
        geom = EntropyGeometry(0.0, np.log(rng.dirichlet(np.ones(n))), 1, 0.3)
        V = rng.normal(size=n)
        ext = robust_min_convex(row, V, geom)
        polished, grid_best = brute_min(row, V, geom)
        assert row.contains(ext.p, 1e-12)
        assert ext.value <= grid_best + 1e-12
        assert abs(ext.value - polished) <= 1e-6
        assert ext.gap <= 1e-9


def test_min_warm_start_is_certified_immediately():
    row = AmbiguityRow([0.0, 0.1, 0.0], [1.0, 1.0, 0.2])
    ext = robust_min_convex(row, np.array([0.0, 1.0, -2.0]), geom_equal(3))
    assert ext.mode == "exact" and ext.iterations == 0 and ext.gap <= 1e-9


def test_row_sampling_is_feasible():
    rng = np.random.default_rng(1)
    row = random_row(rng, 6)
    for p in row.sample(rng, 50):
        assert row.contains(p, 1e-12)


def test_geometry_rejects_unknown_base():
    with pytest.raises(ValueError):
        EntropyGeometry(0.0, np.zeros(2), 1, 0.5, 0.0, "10")
