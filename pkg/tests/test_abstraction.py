import numpy as np
import pytest
from scipy import integrate

from entrobound.abstraction import (IntervalAbstraction, InfeasibleRowError, abstract_costs,
                                    build_abstraction, initial_distribution, transition_intervals)
from entrobound.geometry import Box, build_uniform_grid
from entrobound.pipeline import AV
from entrobound.kernels import (ModelError, TabulatedModel, estimate_sup_bounds, triangular_av_model)


def test_uniform_initial_gives_uniform_pi():
    m = triangular_av_model(2, 1.0, "uniform")
    np.testing.assert_allclose(initial_distribution(m, build_uniform_grid(m.box, [8])), 1 / 8, atol=1e-15)


def test_initial_density_in_one_cell():
    m = triangular_av_model(2, 1.0, (0.0, 0.05, 0.1))
    pi = initial_distribution(m, build_uniform_grid(m.box, [10]))
    np.testing.assert_allclose(pi, np.eye(10)[0], atol=1e-15)


def test_gaussian_initial_masses_match_quadrature(gauss):
    g = build_uniform_grid(gauss.box, [2, 2])
    pi = initial_distribution(gauss, g)
    lows, highs = g.cell_bounds()
    f = lambda b, a: float(gauss.initial_density(np.array([[a, b]]))[0])
    ref = [integrate.dblquad(f, lo[0], hi[0], lo[1], hi[1], epsabs=1e-13, epsrel=1e-13)[0]
           for lo, hi in zip(lows, highs)]
    np.testing.assert_allclose(pi, ref, atol=1e-8)


def _state_independent(nodes=5):
    f = np.linspace(1.0, 3.0, nodes)
    q = np.tile(f, (nodes, 1))
    return TabulatedModel(Box.unit(1), f, q, 2, 3.0, 2.0), f


def test_state_independent_kernel_has_degenerate_intervals():
    m, _ = _state_independent()
    g = build_uniform_grid(m.box, [4])
    lo, hi = transition_intervals(m, g, 0, mesh=5, sound=False)
    np.testing.assert_allclose(lo, hi, atol=1e-14)
    np.testing.assert_allclose(lo[0], m.initial_cell_masses(*g.cell_bounds()), atol=1e-14)


def test_single_cell_is_trivial(gauss):
    g = build_uniform_grid(gauss.box, [1, 1])
    lo, hi = transition_intervals(gauss, g, 0, mesh=3, L_grad=5.0)
    assert lo[0, 0] == hi[0, 0] == 1.0
    abs_ = build_abstraction(gauss, g, 3, 5.0)
    np.testing.assert_array_equal(abs_.pi, [1.0])


def test_sound_mode_needs_gradient(gauss):
    with pytest.raises(ModelError):
        transition_intervals(gauss, build_uniform_grid(gauss.box, [2, 2]), 0, 3, None, True)


def test_linear_cost_bounds():
    m = triangular_av_model(2, 2.3)
    up, lo = abstract_costs(m, build_uniform_grid(m.box, [80]))
    assert up[79, 0] == pytest.approx(-2.27125, abs=1e-12)
    assert lo[79, 0] == pytest.approx(-2.3, abs=1e-12)
    np.testing.assert_allclose(up[:, 0], -2.3 * np.arange(80) * 0.0125, atol=1e-12)


def test_constant_cost_bounds():
    class Flat(TabulatedModel):
        cost_lipschitz = 0.0

        @property
        def has_costs(self):
            return True

        def stage_cost(self, x, action=0):
            return np.full(np.atleast_2d(x).shape[0], 1.5)

    m = Flat(Box.unit(1), np.ones(3), np.ones((3, 3)), 2, 1.0, 0.0)
    up, lo = abstract_costs(m, build_uniform_grid(m.box, [5]))
    np.testing.assert_array_equal(up, 1.5)
    np.testing.assert_array_equal(lo, 1.5)


def test_cost_needs_lipschitz_when_not_monotone():
    class Wavy(TabulatedModel):
        @property
        def has_costs(self):
            return True

        def stage_cost(self, x, action=0):
            return np.sin(np.atleast_2d(x)[:, 0])

    m = Wavy(Box.unit(1), np.ones(3), np.ones((3, 3)), 2, 1.0, 0.0)
    with pytest.raises(ModelError, match="Lipschitz"):
        abstract_costs(m, build_uniform_grid(m.box, [5]))


def test_av_row_extrema_against_dense_scan():
    m = triangular_av_model(2, 1.0, "uniform")
    g = build_uniform_grid(m.box, [20])
    L_grad = estimate_sup_bounds(m).L_grad
    lows, highs = g.cell_bounds()
    lo, hi = transition_intervals(m, g, 1, mesh=9, L_grad=L_grad)
    for i in (0, 7, 19):
        x = np.linspace(lows[i, 0], highs[i, 0], 1000)[:, None]
        masses = m.cell_masses(x, lows, highs, 1)
        assert np.all(lo[i] <= masses.min(axis=0) + 1e-12)
        assert np.all(hi[i] >= masses.max(axis=0) - 1e-12)


@pytest.mark.parametrize("which,N", [("gauss", 4), ("av", 16)])
def test_completeness_witness(which, N, gauss, av):
    model = {"gauss": gauss, "av": av}[which]
    g = build_uniform_grid(model.box, [N] * model.dim)
    abs_ = build_abstraction(model, g, 5, estimate_sup_bounds(model).L_grad)
    lows, highs = g.cell_bounds()
    rng = np.random.default_rng(2)
    for i in rng.choice(g.cell_count, 4, replace=False):
        x = lows[i] + rng.random((100, model.dim)) * (highs[i] - lows[i])
        for a in range(model.n_actions):
            P = model.cell_masses(x, lows, highs, a)
            assert np.all(abs_.lower[a, i] <= P + 1e-12) and np.all(P <= abs_.upper[a, i] + 1e-12)


@pytest.mark.parametrize("which,mesh", [("gauss", 5), ("av", AV["mesh"])])
def test_intervals_narrow_with_refinement(which, mesh, gauss, av):
    model = {"gauss": gauss, "av": av}[which]
    L_grad = estimate_sup_bounds(model).L_grad
    width = {}
    for N in (2, 8):
        g = build_uniform_grid(model.box, [N] * model.dim)
        lo, hi = transition_intervals(model, g, 0, mesh, L_grad)
        width[N] = float(np.mean(hi - lo))
    assert width[8] < width[2]


def test_rows_are_nonempty_and_roundtrip(tmp_path, av):
    g = build_uniform_grid(av.box, [12])
    abs_ = build_abstraction(av, g, 5, estimate_sup_bounds(av).L_grad)
    abs_.check()
    assert abs_.lower.sum(axis=2).max() <= 1 + 1e-12 and abs_.upper.sum(axis=2).min() >= 1 - 1e-12
    path = tmp_path / "abs.json"
    abs_.save(path)
    back = IntervalAbstraction.load(path)
    for name in ("pi", "lower", "upper", "cost_lower", "cost_upper"):
        np.testing.assert_array_equal(getattr(back, name), getattr(abs_, name))
    assert back.actions == abs_.actions and back.partition.counts == (12,)


def test_checksum_detects_tampering(tmp_path, gauss):
    abs_ = build_abstraction(gauss, build_uniform_grid(gauss.box, [2, 2]), 3, 5.0)
    d = abs_.to_dict()
    d["lower"][0][0][0] += 0.125
    with pytest.raises(ValueError, match="checksum"):
        IntervalAbstraction.from_dict(d)


def test_infeasible_row_is_reported():
    g = build_uniform_grid(Box.unit(1), [2])
    abs_ = IntervalAbstraction(g, [0.5, 0.5], np.array([[0.1, 0.1], [0.2, 0.2]]),
                               np.array([[0.3, 0.3], [0.9, 0.9]]))
    with pytest.raises(InfeasibleRowError) as err:
        abs_.check()
    assert err.value.row == 0


def test_unsound_mode_is_flagged(gauss):
    abs_ = build_abstraction(gauss, build_uniform_grid(gauss.box, [2, 2]), 3, None, sound=False)
    assert "unsound" in abs_.metadata["warning"]
