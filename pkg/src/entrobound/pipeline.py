"""Glue from a model and a resolution to abstraction, constants and bounds."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .abstraction import IntervalAbstraction, build_abstraction
from .bounds import BoundsReport, SolverOptions, compute_bounds
from .credal import EntropyGeometry
from .geometry import Box, GridPartition, build_uniform_grid
from .kernels import (GradientConstants, KernelModel, SupBounds, clipped_gaussian_model,
                      estimate_sup_bounds, trajectory_gradient_bound, triangular_av_model)

# documented defaults for the two built-in experiments
EXAMPLE1 = {"cov": [[0.5, 0.0], [0.0, 0.5]], "mean0": [0.5, 0.5], "cov0": [[0.5, 0.0], [0.0, 0.5]], "K": 4}
AV = {"K": 15, "initial": "uniform", "mesh": 33, "N": 80}


def example1_model(K: int = EXAMPLE1["K"], cov=None, mean0=None, cov0=None) -> KernelModel:
    return clipped_gaussian_model(Box.unit(2), EXAMPLE1["cov"] if cov is None else cov,
                                  EXAMPLE1["mean0"] if mean0 is None else mean0,
                                  EXAMPLE1["cov0"] if cov0 is None else cov0, K)


def av_model(phi: float = 1.0, K: int = AV["K"], initial=AV["initial"]) -> KernelModel:
    return triangular_av_model(K, phi, initial)


@dataclass
class Setup:
    model: KernelModel
    partition: GridPartition
    sup: SupBounds
    gradient: GradientConstants
    geom: EntropyGeometry
    abstraction: IntervalAbstraction
    build_s: float = 0.0


def prepare(model: KernelModel, counts, mesh: int = 5, sound: bool = True, log_base: str = "e",
            safety: float = 1.1, sup_mesh: int = 21, abstraction: IntervalAbstraction | None = None) -> Setup:
    """Partition, sup-norm constants, geometry and (unless supplied) the abstraction."""
    counts = np.broadcast_to(np.atleast_1d(counts), (model.dim,))
    partition = build_uniform_grid(model.box, counts)
    sup = estimate_sup_bounds(model, sup_mesh, safety)
    grad = trajectory_gradient_bound(sup.L_q, sup.L_grad, model.horizon)
    geom = EntropyGeometry.from_partition(partition, sup.L_grad, log_base)
    t0 = time.perf_counter()
    if abstraction is None:
        abstraction = build_abstraction(model, partition, mesh, sup.L_grad, sound)
    elif abstraction.partition.counts != partition.counts:
        raise ValueError("cached abstraction was built on a different partition")
    return Setup(model, partition, sup, grad, geom, abstraction, time.perf_counter() - t0)


def run_bounds(model: KernelModel, counts, mesh: int = 5, sound: bool = True, log_base: str = "e",
               opts: SolverOptions = SolverOptions(), action: int | None = None) -> BoundsReport:
    t0 = time.perf_counter()
    s = prepare(model, counts, mesh, sound, log_base)
    rep = compute_bounds(s.abstraction, model.horizon, s.geom, s.gradient, opts, action)
    rep.constants["L_q"] = s.sup.L_q
    rep.constants["constants_source"] = s.sup.source
    rep.runtime_s = time.perf_counter() - t0
    return rep


def sweep(model: KernelModel, resolutions, **kw) -> list[BoundsReport]:
    return [run_bounds(model, N, **kw) for N in resolutions]
