"""Ancestral trajectory sampling and plug-in estimators of KL to uniform and expected cost."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .geometry import GridPartition, cell_of
from .kernels import KernelModel, ModelError

CHUNK = 8192


class DensityMismatchError(RuntimeError):
    """A sampled transition has zero density under the model."""


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float | None
    samples: int
    seed: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std_error": self.std_error, "samples": self.samples, "seed": self.seed}

    def brackets(self, lower: float, upper: float, k: float = 3.0) -> bool:
        se = self.std_error or 0.0
        return lower - k * se <= self.mean <= upper + k * se


@dataclass
class Trajectories:
    states: np.ndarray   # (M, K+1, dim)
    actions: np.ndarray  # (M, K) action indices, -1 without a policy


def _rng(seed: int, chunk: int) -> np.random.Generator:
    # counter-based stream per fixed-size chunk: results do not depend on worker count
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _policy_table(model, policy, partition):
    if model.has_actions:
        if policy is None or partition is None:
            raise ModelError("a model with actions needs a policy and the partition it was built on")
    if policy is None:
        return None
    table = policy.actions if hasattr(policy, "actions") else np.asarray(policy, dtype=int)
    if partition is not None and table.shape[1] != partition.cell_count:
        raise ModelError(f"policy covers {table.shape[1]} cells, partition has {partition.cell_count}")
    if table.shape[0] < model.horizon:
        raise ModelError(f"policy horizon {table.shape[0]} is shorter than the model horizon {model.horizon}")
    return table


def _chunk(model, table, partition, size, rng):
    K = model.horizon
    x = model.sample_initial(rng, size)
    states = np.empty((size, K + 1, model.dim))
    actions = np.full((size, K), -1, dtype=int)
    states[:, 0] = x
    for k in range(K):
        a = table[k, cell_of(partition, x)] if table is not None else np.zeros(size, dtype=int)
        actions[:, k] = a if table is not None else -1
        x = model.sample_step(x, a, rng)
        states[:, k + 1] = x
    return states, actions


def iter_trajectories(model: KernelModel, policy=None, partition: GridPartition | None = None,
                      M: int = 1000, seed: int = 0):
    """Yield ``(states, actions)`` chunks of at most ``CHUNK`` trajectories."""
    table = _policy_table(model, policy, partition)
    for c, start in enumerate(range(0, M, CHUNK)):
        yield _chunk(model, table, partition, min(CHUNK, M - start), _rng(seed, c))


def simulate(model: KernelModel, policy=None, partition: GridPartition | None = None,
             M: int = 1000, seed: int = 0) -> Trajectories:
    """``M`` independent trajectories of length ``K+1``, reproducible from ``seed``."""
    if M < 1:
        raise ValueError("need at least one sample")
    parts = list(iter_trajectories(model, policy, partition, M, seed))
    return Trajectories(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def _log_likelihood(model, states, actions):
    K = model.horizon
    with np.errstate(divide="ignore"):
        ll = np.log(model.initial_density(states[:, 0]))
        for k in range(K):
            a = np.maximum(actions[:, k], 0)
            ll = ll + np.log(model.transition_density(states[:, k], states[:, k + 1], a))
    if not np.all(np.isfinite(ll)):
        bad = int(np.flatnonzero(~np.isfinite(ll))[0])
        raise DensityMismatchError(f"zero density along sampled trajectory {bad}; sampler and density disagree")
    return ll


def _costs(model, states, actions):
    total = np.zeros(states.shape[0])
    for k in range(model.horizon):
        total += model.stage_cost(states[:, k], np.maximum(actions[:, k], 0))
    return total


def per_sample(model: KernelModel, policy=None, partition=None, M: int = 1000, seed: int = 0,
               log_base: str = "e", with_cost: bool = False):
    """Per-trajectory ``log T(s) + log vol(S)`` (and cost) in the chosen log base."""
    scale = 1.0 if log_base == "e" else 1.0 / math.log(2.0)
    log_vol = (model.horizon + 1) * model.box.log_volume
    kl, cost = [], []
    for states, actions in iter_trajectories(model, policy, partition, M, seed):
        kl.append(scale * (_log_likelihood(model, states, actions) + log_vol))
        if with_cost:
            cost.append(_costs(model, states, actions))
    kl = np.concatenate(kl)
    return (kl, np.concatenate(cost)) if with_cost else kl


def _estimate(values, seed):
    M = values.size
    se = float(np.std(values, ddof=1) / math.sqrt(M)) if M > 1 else None
    return McEstimate(float(np.mean(values)), se, M, int(seed))


def mc_kl_to_uniform(model, policy=None, partition=None, M: int = 10**5, seed: int = 0,
                     log_base: str = "e") -> McEstimate:
    return _estimate(per_sample(model, policy, partition, M, seed, log_base), seed)


def mc_expected_cost(model, policy=None, partition=None, M: int = 10**5, seed: int = 0) -> McEstimate:
    if not model.has_costs:
        raise ModelError(f"model {model.name!r} has no stage cost")
    parts = [_costs(model, s, a) for s, a in iter_trajectories(model, policy, partition, M, seed)]
    return _estimate(np.concatenate(parts), seed)


def mc_objective(model, policy=None, partition=None, M: int = 10**5, seed: int = 0,
                 sigma: int = -1, log_base: str = "e") -> dict:
    """Joint estimates of KL, cost and ``cost + sigma * KL`` from one set of trajectories."""
    kl, cost = per_sample(model, policy, partition, M, seed, log_base, with_cost=True)
    return {"kl": _estimate(kl, seed), "cost": _estimate(cost, seed),
            "objective": _estimate(cost + sigma * kl, seed)}


def trajectories_csv(traj: Trajectories, legend=None, limit: int | None = None) -> str:
    """Long-format CSV: one row per (trajectory, k) with state components and action."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = traj.states.shape[2]
    w.writerow(["trajectory", "k"] + [f"x{j}" for j in range(dim)] + ["action"])
    M = traj.states.shape[0] if limit is None else min(limit, traj.states.shape[0])
    K = traj.actions.shape[1]
    for m in range(M):
        for k in range(K + 1):
            a = traj.actions[m, k] if k < K else -1
            label = "" if a < 0 else (legend[a] if legend is not None else int(a))
            w.writerow([m, k] + [repr(float(v)) for v in traj.states[m, k]] + [label])
    return buf.getvalue()
