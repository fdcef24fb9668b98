import numpy as np
import pytest

from entrobound.abstraction import IntervalAbstraction
from entrobound.bounds import GuardError
from entrobound.credal import EntropyGeometry
from entrobound.geometry import Box, build_uniform_grid
from entrobound.pipeline import prepare
from entrobound.synthesis import MODES, Policy, evaluate_policy, synthesize, unregularized_policy


@pytest.fixture(scope="module")
def small_av(av):
    return prepare(av, 12, mesh=9)


def test_policy_validation_and_roundtrip(tmp_path):
    pol = Policy(np.array([[0, 1], [1, 0]]), ("a", "b"))
    pol.save(tmp_path / "p.json")
    assert Policy.load(tmp_path / "p.json") == pol
    assert hash(Policy.load(tmp_path / "p.json")) == hash(pol)
    assert pol(1, 0) == 1
    with pytest.raises(ValueError):
        Policy(np.array([[0, 2]]), ("a", "b"))
    with pytest.raises(ValueError):
        Policy(np.array([0, 1]), ("a", "b"))


@pytest.mark.parametrize("sigma", [1, -1])
def test_synthesis_bounds_are_ordered(small_av, sigma):
    s = small_av
    rep = synthesize(s.abstraction, 3, s.geom, s.gradient, sigma)
    assert rep.mode == MODES[sigma]
    assert rep.lower_global <= rep.upper_global
    assert rep.lower_local <= rep.upper_local
    assert rep.policy_global.actions.shape == (3, 12)
    if sigma == -1:
        assert rep.policy_global == rep.policy_local
        assert rep.upper_global == rep.upper_local
    d = rep.to_dict()
    assert d["mode"].startswith("penalize" if sigma == 1 else "reward")


def test_evaluation_of_synthesized_policy_reproduces_upper(small_av):
    s = small_av
    rep = synthesize(s.abstraction, 3, s.geom, s.gradient, -1)
    ev = evaluate_policy(s.abstraction, 3, s.geom, s.gradient, rep.policy_global, -1)
    assert ev.upper_global == pytest.approx(rep.upper_global, abs=1e-9)
    assert ev.lower_local == pytest.approx(rep.lower_local, abs=1e-9)


def test_dp_policy_prefers_acceleration(small_av):
    # cost -phi*v rewards speed, so the robust cost minimizer takes the top action
    # while it still matters; at the last step every action ties and index 0 wins
    pol = unregularized_policy(small_av.abstraction, 3)
    assert pol.legend == (0, 5, 10, 15, 20)
    assert np.all(pol.actions[:-1] == 4)
    assert np.all(pol.actions[-1] == 0)


def _cost_chain(n_actions, cost):
    g = build_uniform_grid(Box.unit(1), [3])
    P = np.full((n_actions, 3, 3), 1 / 3)
    c = np.tile(np.asarray(cost, dtype=float), (3, 1))
    return IntervalAbstraction(g, np.full(3, 1 / 3), P, P, tuple(range(n_actions)), c, c), g


def test_action_independent_costs_tie_to_lowest_index():
    abs_, g = _cost_chain(3, [1.0, 1.0, 1.0])
    geom = EntropyGeometry.from_partition(g)
    assert np.all(unregularized_policy(abs_, 2).actions == 0)
    rep = synthesize(abs_, 2, geom, 0.0, 1)
    assert np.all(rep.policy_global.actions == 0)


def test_single_action_policies_coincide():
    abs_, g = _cost_chain(1, [0.5])
    geom = EntropyGeometry.from_partition(g)
    rep = synthesize(abs_, 2, geom, 0.0, 1)
    dp = unregularized_policy(abs_, 2)
    assert rep.policy_global == rep.policy_local == dp
    # uniform chain: KL is zero, cost is exactly 2 * 0.5
    assert rep.lower_global == pytest.approx(1.0, abs=1e-8)
    assert rep.upper_global == pytest.approx(1.0, abs=1e-12)


def test_guards(gauss):
    s = prepare(gauss, 2)
    with pytest.raises(GuardError, match="cost"):
        synthesize(s.abstraction, 4, s.geom, s.gradient)
    abs_, g = _cost_chain(2, [0.0, 1.0])
    geom = EntropyGeometry.from_partition(g)
    with pytest.raises(GuardError, match="sign"):
        synthesize(abs_, 2, geom, 0.0, 0)
    with pytest.raises(GuardError, match="shape"):
        evaluate_policy(abs_, 2, geom, 0.0, np.zeros((3, 3), dtype=int))
