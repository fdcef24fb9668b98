"""Entropy-regularized robust policy synthesis on interval MDP abstractions."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .abstraction import IntervalAbstraction
from .bounds import (GuardError, SolverOptions, SolverStats, backward, combine, constants_echo,
                     trajectory_epsilon)
from .credal import EntropyGeometry, linear_extreme

MODES = {1: "penalize-predictability (cost + KL)", -1: "reward-entropy (cost - KL)"}


@dataclass(frozen=True)
class Policy:
    """Deterministic Markov policy: ``actions[k, i]`` indexes into ``legend``."""

    actions: np.ndarray
    legend: tuple = (None,)

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=int)
        if a.ndim != 2:
            raise ValueError("policy table must be K x |X|")
        if np.any(a < 0) or np.any(a >= len(self.legend)):
            raise ValueError("policy entry outside the action set")
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "legend", tuple(self.legend))

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    @property
    def n_states(self) -> int:
        return self.actions.shape[1]

    def __call__(self, k: int, cell):
        return self.actions[k, cell]

    def to_dict(self) -> dict:
        return {"actions": self.actions.tolist(), "legend": list(self.legend)}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(np.array(d["actions"], dtype=int), tuple(d["legend"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __eq__(self, other):
        return isinstance(other, Policy) and self.legend == other.legend and np.array_equal(self.actions, other.actions)

    def __hash__(self):
        return hash((self.actions.tobytes(), self.legend))


@dataclass
class PolicyBounds:
    lower_global: float
    upper_global: float
    lower_local: float
    upper_local: float
    solver: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lower_global": self.lower_global, "upper_global": self.upper_global,
                "lower_local": self.lower_local, "upper_local": self.upper_local, "solver": self.solver}


@dataclass
class SynthesisReport:
    policy_global: Policy
    policy_local: Policy
    lower_global: float
    upper_global: float
    lower_local: float
    upper_local: float
    sigma: int
    eps_global: float
    constants: dict
    solver: dict
    runtime_s: float = 0.0

    @property
    def mode(self) -> str:
        return MODES[self.sigma]

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "mode": self.mode,
            "lower_global": self.lower_global,
            "upper_global": self.upper_global,
            "lower_local": self.lower_local,
            "upper_local": self.upper_local,
            "eps_global": self.eps_global,
            "policy_global": self.policy_global.to_dict(),
            "policy_local": self.policy_local.to_dict(),
            "constants": self.constants,
            "solver": self.solver,
            "runtime_s": self.runtime_s,
        }


def _check(abs_, sigma):
    if not abs_.has_costs:
        raise GuardError("synthesis needs stage-cost bounds in the abstraction")
    if sigma not in (1, -1):
        raise GuardError("regularization sign must be +1 or -1")


def _table(policy, K, n):
    a = policy.actions if isinstance(policy, Policy) else np.asarray(policy, dtype=int)
    if a.shape != (K, n):
        raise GuardError(f"policy has shape {a.shape}, expected {(K, n)}")
    return a


def evaluate_policy(abs_: IntervalAbstraction, K: int, geom: EntropyGeometry, L, policy,
                    sigma: int = -1, opts: SolverOptions = SolverOptions()) -> PolicyBounds:
    """Certified bounds on ``E[sum g] + sigma * KL(T || U)`` for a fixed policy.

    The global and local entropy corrections go on the side that
    upper-bounds the KL term: the upper side for ``sigma=+1``, the lower
    side for ``sigma=-1``.
    """
    _check(abs_, sigma)
    table = _table(policy, K, abs_.n_states)
    eps_g = trajectory_epsilon(abs_, K, geom, L)
    stats = SolverStats()
    out = {}
    if sigma > 0:
        V, _, s1, _ = backward(abs_, K, geom, 1, "upper", False, table, opts)
        Ve, _, s2, _ = backward(abs_, K, geom, 1, "upper", True, table, opts)
        W, _, s3, _ = backward(abs_, K, geom, 1, "lower", False, table, opts)
        out["upper_global"] = combine(abs_, V, geom, 1, False) + eps_g
        out["upper_local"] = combine(abs_, Ve, geom, 1, True)
        out["lower_global"] = out["lower_local"] = combine(abs_, W, geom, 1, False) - s3.debit
    else:
        W, _, s1, _ = backward(abs_, K, geom, -1, "upper", False, table, opts)
        V, _, s2, _ = backward(abs_, K, geom, -1, "lower", False, table, opts)
        Ve, _, s3, _ = backward(abs_, K, geom, -1, "lower", True, table, opts)
        out["upper_global"] = out["upper_local"] = combine(abs_, W, geom, -1, False) + s1.debit
        out["lower_global"] = combine(abs_, V, geom, -1, False) - eps_g
        out["lower_local"] = combine(abs_, Ve, geom, -1, True)
    for s in (s1, s2, s3):
        stats.merge(s)
    return PolicyBounds(solver=stats.to_dict(), **out)


def synthesize(abs_: IntervalAbstraction, K: int, geom: EntropyGeometry, L, sigma: int = 1,
               opts: SolverOptions = SolverOptions()) -> SynthesisReport:
    """Policies minimizing the certified upper bound, with two-sided bounds for each.

    ``policy_global`` minimizes the upper recursion without the local
    correction, ``policy_local`` the one with it.  For ``sigma=-1`` the upper
    side carries no correction, so the two coincide.
    """
    _check(abs_, sigma)
    t0 = time.perf_counter()
    eps_g = trajectory_epsilon(abs_, K, geom, L)
    stats = SolverStats()
    if sigma > 0:
        V, mu, s1, _ = backward(abs_, K, geom, 1, "upper", False, None, opts)
        Ve, mu_e, s2, _ = backward(abs_, K, geom, 1, "upper", True, None, opts)
        W, _, s3, _ = backward(abs_, K, geom, 1, "lower", False, mu, opts)
        We, _, s4, _ = backward(abs_, K, geom, 1, "lower", False, mu_e, opts)
        upper_g = combine(abs_, V, geom, 1, False) + eps_g
        upper_l = combine(abs_, Ve, geom, 1, True)
        lower_g = combine(abs_, W, geom, 1, False) - s3.debit
        lower_l = combine(abs_, We, geom, 1, False) - s4.debit
    else:
        W, mu, s1, _ = backward(abs_, K, geom, -1, "upper", False, None, opts)
        mu_e = mu
        V, _, s2, _ = backward(abs_, K, geom, -1, "lower", False, mu, opts)
        Ve, _, s3, _ = backward(abs_, K, geom, -1, "lower", True, mu, opts)
        s4 = SolverStats()
        upper_g = upper_l = combine(abs_, W, geom, -1, False) + s1.debit
        lower_g = combine(abs_, V, geom, -1, False) - eps_g
        lower_l = combine(abs_, Ve, geom, -1, True)
    for s in (s1, s2, s3, s4):
        stats.merge(s)
    legend = abs_.actions
    return SynthesisReport(Policy(mu, legend), Policy(mu_e, legend), lower_g, upper_g, lower_l, upper_l,
                           sigma, eps_g, constants_echo(abs_, K, geom, L), stats.to_dict(),
                           time.perf_counter() - t0)


def unregularized_policy(abs_: IntervalAbstraction, K: int) -> Policy:
    """Robust minimization of the stage-cost upper bound alone (worst-case expectation)."""
    if not abs_.has_costs:
        raise GuardError("synthesis needs stage-cost bounds in the abstraction")
    n = abs_.n_states
    V = np.zeros(n)
    table = np.zeros((K, n), dtype=int)
    for k in range(K - 1, -1, -1):
        q = np.empty((n, abs_.n_actions))
        for i in range(n):
            for a in range(abs_.n_actions):
                q[i, a] = abs_.cost_upper[i, a] + linear_extreme(abs_.row(i, a), V, "max")[0]
        table[k] = np.argmin(q, axis=1)
        V = q[np.arange(n), table[k]]
    return Policy(table, abs_.actions)
