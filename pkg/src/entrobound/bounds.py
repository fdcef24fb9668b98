"""Backward value recursions giving certified bounds on the trajectory KL divergence to uniform."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .abstraction import IntervalAbstraction
from .credal import (EntropyGeometry, global_epsilon, phi, phi_eps, robust_max_convex,
                     robust_min_convex)
from .kernels import GradientConstants

SWEEP_COLUMNS = ("N", "lower", "upper_global", "upper_local", "eps_global", "runtime_s")


class GuardError(ValueError):
    """An input exceeds a documented size or shape guard."""


@dataclass(frozen=True)
class SolverOptions:
    fw_tol: float = 1e-9
    fw_max_iter: int = 10**4
    vertex_budget: int = 10**6
    starts: int = 32
    workers: int | None = None

    def n_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        return max(1, int(os.environ.get("ENTROBOUND_THREADS", "1")))


@dataclass
class SolverStats:
    exact: int = 0
    heuristic: int = 0
    capped: int = 0
    max_gap: float = 0.0
    debit: float = 0.0

    def add(self, ext):
        if ext.mode == "heuristic":
            self.heuristic += 1
        elif ext.mode == "cap":
            self.capped += 1
        else:
            self.exact += 1
        self.max_gap = max(self.max_gap, ext.gap)

    def merge(self, other: "SolverStats"):
        self.exact += other.exact
        self.heuristic += other.heuristic
        self.capped += other.capped
        self.max_gap = max(self.max_gap, other.max_gap)
        self.debit += other.debit

    def to_dict(self):
        return {"exact": self.exact, "heuristic": self.heuristic, "capped": self.capped,
                "max_gap": self.max_gap, "fw_debit": self.debit}


def _log_L(L) -> float:
    if isinstance(L, GradientConstants):
        return L.log_L
    L = float(L)
    if L < 0:
        raise ValueError("L must be nonnegative")
    return math.log(L) if L > 0 else -math.inf


def trajectory_epsilon(abs_: IntervalAbstraction, K: int, geom: EntropyGeometry, L) -> float:
    """Global correction for horizon ``K`` in the run's log base."""
    n = (K + 1) * geom.n_x
    log_S = (K + 1) * math.log(abs_.n_states)
    return geom.scale * global_epsilon(n, log_S, 0.0, geom.max_side, log_L=_log_L(L))


def row_value(abs_, i, a, V, geom, sigma, side, use_eps, opts: SolverOptions):
    """Worst (``side="upper"``) or best case of ``sigma*KL_step + p.V`` over row ``(i, a)``.

    Returns ``(value, extremum)``.  The entropy term enters with sign
    ``sigma``, so every case reduces to a convex max or min of ``Phi``.
    """
    row = abs_.row(i, a)
    if (sigma > 0) == (side == "upper"):
        ext = robust_max_convex(row, sigma * V, geom, use_eps, opts.vertex_budget, opts.starts)
    else:
        ext = robust_min_convex(row, sigma * V, geom, opts.fw_tol, opts.fw_max_iter)
    return sigma * ext.value, ext


def backward(abs_: IntervalAbstraction, K: int, geom: EntropyGeometry, sigma: int = 1,
             side: str = "upper", use_eps: bool = False, policy=None,
             opts: SolverOptions = SolverOptions(), keep_values: bool = False):
    """One robust recursion from ``V_K = 0`` down to ``V_0``.

    Without ``policy`` the action minimizing stage-cost bound plus backup is
    selected (ties to the lowest index) and returned as a ``(K, n)`` table.
    """
    n = abs_.n_states
    cost = abs_.cost_upper if side == "upper" else abs_.cost_lower
    if cost is None:
        cost = np.zeros((n, abs_.n_actions))
    V = np.zeros(n)
    table = np.zeros((K, n), dtype=int)
    stats = SolverStats()
    history = [V] if keep_values else None
    workers = opts.n_workers()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for k in range(K - 1, -1, -1):
            if policy is None:
                pairs = [(i, a) for i in range(n) for a in range(abs_.n_actions)]
            else:
                pairs = [(i, int(policy[k, i])) for i in range(n)]
            job = lambda ia, V=V: row_value(abs_, ia[0], ia[1], V, geom, sigma, side, use_eps, opts)
            results = list(pool.map(job, pairs)) if pool else [job(ia) for ia in pairs]
            q = np.full((n, abs_.n_actions), np.inf)
            step_gap = 0.0
            for (i, a), (val, ext) in zip(pairs, results):
                q[i, a] = cost[i, a] + val
                stats.add(ext)
                step_gap = max(step_gap, ext.gap)
            acts = np.argmin(q, axis=1)
            table[k] = acts
            V = q[np.arange(n), acts]
            # min backups may overshoot by their certified conditional-gradient gap
            if (sigma > 0) != (side == "upper"):
                stats.debit += step_gap
            if keep_values:
                history.append(V)
    finally:
        if pool:
            pool.shutdown()
    if keep_values:
        history = history[::-1]
    return V, table, stats, history


def combine(abs_, V0, geom, sigma, use_eps):
    f = phi_eps if use_eps else phi
    return sigma * f(abs_.pi, sigma * np.asarray(V0), geom)


@dataclass
class BoundsReport:
    lower: float
    upper_global: float
    upper_local: float
    eps_global: float
    constants: dict
    solver: dict
    resolution: tuple = ()
    runtime_s: float = 0.0
    values: dict | None = field(default=None, repr=False)

    @property
    def N(self):
        return self.resolution[0] if len(set(self.resolution)) == 1 else "x".join(map(str, self.resolution))

    def to_dict(self) -> dict:
        d = {
            "lower": self.lower,
            "upper_global": self.upper_global,
            "upper_local": self.upper_local,
            "eps_global": self.eps_global,
            "resolution": list(self.resolution),
            "runtime_s": self.runtime_s,
            "constants": self.constants,
            "solver": self.solver,
        }
        if self.values is not None:
            d["values"] = {k: [v.tolist() for v in vs] for k, vs in self.values.items()}
        return d


def constants_echo(abs_, K, geom, L) -> dict:
    log_L = _log_L(L)
    d = {
        "L": float(math.exp(log_L)) if log_L < 700 else math.inf,
        "log_L": log_L,
        "L_grad": geom.L_grad,
        "max_side": geom.max_side,
        "n": (K + 1) * geom.n_x,
        "n_x": geom.n_x,
        "log_S": (K + 1) * math.log(abs_.n_states),
        "K": K,
        "log_base": geom.log_base,
    }
    if isinstance(L, GradientConstants):
        d["L_q"] = L.L_q
    return d


def compute_bounds(abs_: IntervalAbstraction, K: int, geom: EntropyGeometry, L,
                   opts: SolverOptions = SolverOptions(), action: int | None = None,
                   keep_values: bool = False) -> BoundsReport:
    """Lower, globally corrected upper and locally corrected upper bounds on KL(T || U)."""
    if K < 1:
        raise GuardError("horizon K must be at least 1")
    if action is None:
        if abs_.n_actions != 1:
            raise GuardError("abstraction has several actions; pin one with `action`")
        action = 0
    t0 = time.perf_counter()
    chain = IntervalAbstraction(abs_.partition, abs_.pi, abs_.lower[[action]], abs_.upper[[action]],
                                (abs_.actions[action],), metadata=abs_.metadata)
    policy = np.zeros((K, abs_.n_states), dtype=int)
    V_lo, _, s_lo, h_lo = backward(chain, K, geom, 1, "lower", False, policy, opts, keep_values)
    V_hi, _, s_hi, h_hi = backward(chain, K, geom, 1, "upper", False, policy, opts, keep_values)
    V_ep, _, s_ep, h_ep = backward(chain, K, geom, 1, "upper", True, policy, opts, keep_values)
    eps_g = trajectory_epsilon(chain, K, geom, L)
    lower = combine(chain, V_lo, geom, 1, False) - s_lo.debit
    upper_global = combine(chain, V_hi, geom, 1, False) + eps_g
    upper_local = combine(chain, V_ep, geom, 1, True)
    stats = SolverStats()
    for s in (s_lo, s_hi, s_ep):
        stats.merge(s)
    values = {"lower": h_lo, "upper": h_hi, "local": h_ep} if keep_values else None
    return BoundsReport(lower, upper_global, upper_local, eps_g, constants_echo(chain, K, geom, L),
                        stats.to_dict(), tuple(abs_.partition.counts), time.perf_counter() - t0, values)


def enumerate_discrete_kl(pi, kernels, log_cell_volumes, K: int, log_volume: float = 0.0,
                          log_base: str = "e", limit: int = 10**6) -> float:
    """Discrete KL to uniform by explicit enumeration of all ``|X|^(K+1)`` trajectories.

    ``kernels`` is one row-stochastic matrix or a list of ``K`` of them.
    """
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    if n ** (K + 1) > limit:
        raise GuardError(f"{n}^{K + 1} trajectories exceed the enumeration limit {limit}")
    mats = [np.asarray(kernels, dtype=float)] * K if np.ndim(kernels) == 2 else [np.asarray(P) for P in kernels]
    if len(mats) != K:
        raise ValueError("need one kernel per step")
    r = log_volume - np.asarray(log_cell_volumes, dtype=float)
    joint = pi.copy()
    ratio = r.copy()
    for P in mats:
        joint = (joint[..., None] * P.reshape((1,) * (joint.ndim - 1) + P.shape))
        ratio = ratio[..., None] + r.reshape((1,) * ratio.ndim + (n,))
    scale = 1.0 if log_base == "e" else 1.0 / math.log(2.0)
    return float(scale * np.sum(xlogy(joint, joint) + joint * ratio))


def mean_width_diagnostics(reports) -> list[dict]:
    """Sweep rows (one per report) with the columns of :data:`SWEEP_COLUMNS`."""
    reports = list(reports)
    if len(reports) < 2:
        raise GuardError("need >=2 reports")
    return [{"N": r.N, "lower": r.lower, "upper_global": r.upper_global, "upper_local": r.upper_local,
             "eps_global": r.eps_global, "runtime_s": r.runtime_s} for r in reports]


def sweep_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in mean_width_diagnostics(reports):
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
