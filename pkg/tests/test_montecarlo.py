import numpy as np
import pytest

from entrobound.geometry import Box, build_uniform_grid
from entrobound.kernels import ModelError, TabulatedModel, clipped_gaussian_model, triangular_av_model
from entrobound.montecarlo import (DensityMismatchError, McEstimate, mc_expected_cost, mc_kl_to_uniform,
                                   mc_objective, simulate, trajectories_csv)
from entrobound.synthesis import Policy

from conftest import uniform_tabulated


class ConstantCost(TabulatedModel):
    cost_lipschitz = 0.0

    def __init__(self, c, K=3):
        super().__init__(Box.unit(1), np.ones(3), np.ones((3, 3)), K, 1.0, 0.0)
        self.c = c

    @property
    def has_costs(self):
        return True

    def stage_cost(self, x, action=0):
        return np.full(np.atleast_2d(x).shape[0], self.c)


def test_zero_horizon_samples_initial_only():
    m = clipped_gaussian_model(Box.unit(2), np.eye(2), [0.5, 0.5], np.eye(2) * 0.01, 0)
    tr = simulate(m, M=500, seed=1)
    assert tr.states.shape == (500, 1, 2) and tr.actions.shape == (500, 0)


def test_deterministic_limit_gives_constant_paths():
    m = clipped_gaussian_model(Box.unit(2), np.eye(2) * 1e-14, [0.4, 0.6], np.eye(2) * 1e-14, 3)
    tr = simulate(m, M=50, seed=0)
    np.testing.assert_allclose(tr.states, np.broadcast_to([0.4, 0.6], tr.states.shape), atol=1e-5)


def test_uniform_chain_has_zero_kl():
    est = mc_kl_to_uniform(uniform_tabulated(1, K=3), M=2000, seed=4)
    assert abs(est.mean) <= 3 * est.std_error + 1e-12


@pytest.mark.parametrize("c", [0.0, -1.75])
def test_constant_costs_are_exact(c):
    est = mc_expected_cost(ConstantCost(c, K=3), M=300, seed=2)
    assert est.mean == 3 * c
    assert est.std_error == 0.0


def test_single_sample_has_undefined_error():
    est = mc_kl_to_uniform(uniform_tabulated(1), M=1, seed=0)
    assert est.std_error is None and est.samples == 1
    assert est.to_dict()["std_error"] is None
    assert McEstimate(0.5, None, 1, 0).brackets(0.5, 0.5)


def test_seed_determinism_and_sensitivity(gauss):
    a = mc_kl_to_uniform(gauss, M=3000, seed=9)
    b = mc_kl_to_uniform(gauss, M=3000, seed=9)
    c = mc_kl_to_uniform(gauss, M=3000, seed=10)
    assert a == b and a.mean != c.mean


def test_chunks_do_not_depend_on_order(gauss):
    big = simulate(gauss, M=9000, seed=3)
    again = simulate(gauss, M=9000, seed=3)
    np.testing.assert_array_equal(big.states, again.states)
    assert big.states.shape == (9000, 5, 2)


def test_objective_combines_same_samples():
    m = triangular_av_model(3, 2.3, "uniform")
    g = build_uniform_grid(m.box, [10])
    pol = Policy(np.full((3, 10), 4), m.actions)
    est = mc_objective(m, pol, g, M=4000, seed=5, sigma=-1)
    assert est["objective"].mean == pytest.approx(est["cost"].mean - est["kl"].mean, abs=1e-9)
    kl = mc_kl_to_uniform(m, pol, g, M=4000, seed=5)
    assert kl.mean == est["kl"].mean


def test_policy_is_required_and_shape_checked():
    m = triangular_av_model(3, 2.3)
    g = build_uniform_grid(m.box, [10])
    with pytest.raises(ModelError, match="needs a policy"):
        mc_kl_to_uniform(m, None, g, M=10)
    with pytest.raises(ModelError, match="covers"):
        mc_kl_to_uniform(m, Policy(np.zeros((3, 8), dtype=int), m.actions), g, M=10)
    with pytest.raises(ModelError, match="horizon"):
        mc_kl_to_uniform(m, Policy(np.zeros((2, 10), dtype=int), m.actions), g, M=10)


def test_sampler_density_mismatch_is_detected():
    class Broken(type(triangular_av_model(1))):
        def sample_step(self, x, action, rng):
            return np.ones_like(np.atleast_2d(x))

    m = Broken(2, 1.0, "uniform")
    g = build_uniform_grid(m.box, [4])
    with pytest.raises(DensityMismatchError):
        mc_kl_to_uniform(m, Policy(np.zeros((2, 4), dtype=int), m.actions), g, M=20)


def test_trajectory_csv_layout():
    m = triangular_av_model(2, 1.0, "uniform")
    g = build_uniform_grid(m.box, [5])
    tr = simulate(m, Policy(np.full((2, 5), 1), m.actions), g, M=4, seed=0)
    lines = trajectories_csv(tr, m.actions, limit=2).splitlines()
    assert lines[0] == "trajectory,k,x0,action"
    assert len(lines) == 1 + 2 * 3
    assert lines[1].endswith(",5") and lines[3].endswith(",")
