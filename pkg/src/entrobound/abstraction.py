"""Interval Markov chain / decision process abstractions of a continuous model."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .credal import InfeasibleRowError as _RowError
from .geometry import Box, GridPartition
from .kernels import KernelModel, ModelError, QuadratureError

FORMAT = "entrobound.abstraction/1"


class InfeasibleRowError(_RowError):
    def __init__(self, row, action, detail):
        super().__init__(f"row {row} (action index {action}) has an empty ambiguity set: {detail}")
        self.row = row
        self.action = action


@dataclass(frozen=True)
class IntervalAbstraction:
    """Initial distribution, per-action interval matrices and optional cost bounds.

    ``lower``/``upper`` have shape ``(n_actions, n_states, n_states)``;
    ``cost_lower``/``cost_upper`` have shape ``(n_states, n_actions)``.
    """

    partition: GridPartition
    pi: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    actions: tuple = (None,)
    cost_lower: np.ndarray | None = None
    cost_upper: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim == 2:
            lower, upper = lower[None], upper[None]
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        object.__setattr__(self, "actions", tuple(self.actions))
        n = self.partition.cell_count
        if lower.shape != (len(self.actions), n, n) or upper.shape != lower.shape:
            raise ValueError(f"interval matrices must have shape {(len(self.actions), n, n)}")
        if self.pi.shape != (n,):
            raise ValueError("initial distribution has the wrong length")
        for name in ("cost_lower", "cost_upper"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.shape != (n, len(self.actions)):
                    raise ValueError(f"{name} must have shape {(n, len(self.actions))}")
                object.__setattr__(self, name, val)

    @property
    def n_states(self) -> int:
        return self.partition.cell_count

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def has_costs(self) -> bool:
        return self.cost_upper is not None

    def row(self, i: int, action: int = 0):
        from .credal import AmbiguityRow
        return AmbiguityRow(self.lower[action, i], self.upper[action, i])

    def check(self, tol: float = 1e-12):
        """Raise if any documented invariant fails."""
        if np.any(self.lower < 0) or np.any(self.upper > 1) or np.any(self.lower > self.upper):
            raise ValueError("interval entries must satisfy 0 <= lower <= upper <= 1")
        lo_sum = self.lower.sum(axis=2)
        hi_sum = self.upper.sum(axis=2)
        bad = np.argwhere((lo_sum > 1 + tol) | (hi_sum < 1 - tol))
        if bad.size:
            a, i = bad[0]
            raise InfeasibleRowError(int(i), int(a), f"sum lower {lo_sum[a, i]:.17g}, sum upper {hi_sum[a, i]:.17g}")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1) > 1e-12:
            raise ValueError("initial distribution is not a probability vector")
        if self.has_costs and np.any(self.cost_lower > self.cost_upper):
            raise ValueError("cost lower bound exceeds upper bound")

    # -- serialization -----------------------------------------------------

    def _payload(self) -> dict:
        return {
            "format": FORMAT,
            "partition": self.partition.to_dict(),
            "actions": list(self.actions),
            "pi": self.pi.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "cost_lower": None if self.cost_lower is None else self.cost_lower.tolist(),
            "cost_upper": None if self.cost_upper is None else self.cost_upper.tolist(),
            "metadata": self.metadata,
        }

    def to_dict(self) -> dict:
        payload = self._payload()
        payload["checksum"] = content_hash(payload)
        return payload

    @classmethod
    def from_dict(cls, data: dict, verify: bool = True) -> "IntervalAbstraction":
        if data.get("format") != FORMAT:
            raise ValueError(f"not an abstraction file (format {data.get('format')!r})")
        if verify and "checksum" in data:
            body = {k: v for k, v in data.items() if k != "checksum"}
            if content_hash(body) != data["checksum"]:
                raise ValueError("abstraction checksum mismatch")
        part = data["partition"]
        partition = GridPartition(Box(part["box"]["lows"], part["box"]["highs"]), tuple(part["counts"]))

        def arr(key):
            return None if data.get(key) is None else np.array(data[key], dtype=float)

        return cls(partition, arr("pi"), arr("lower"), arr("upper"), tuple(data["actions"]),
                   arr("cost_lower"), arr("cost_upper"), data.get("metadata", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "IntervalAbstraction":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------

def _cell_mesh(lows, highs, points):
    """Tensor mesh of ``points`` per dimension inside each cell: ``(C, P, dim)``."""
    t = np.linspace(0.0, 1.0, points) if points > 1 else np.array([0.5])
    dim = lows.shape[1]
    grids = np.meshgrid(*([t] * dim), indexing="ij")
    frac = np.stack([g.ravel() for g in grids], axis=1)
    return lows[:, None, :] + frac[None, :, :] * (highs - lows)[:, None, :]


def _mesh_spacing(sides, points):
    # every point of a cell lies within half a spacing of a mesh node, per dimension
    return sides / (points - 1) if points > 1 else sides


def initial_distribution(model: KernelModel, partition: GridPartition, drift_tol: float = 1e-6) -> np.ndarray:
    """Cell masses of the initial density, renormalized to sum to one."""
    lows, highs = partition.cell_bounds()
    raw = np.asarray(model.initial_cell_masses(lows, highs), dtype=float)
    raw = np.clip(raw, 0.0, None)
    drift = abs(raw.sum() - 1.0)
    if drift > drift_tol:
        raise QuadratureError("initial cell masses do not sum to one", drift)
    return raw / raw.sum()


def _repair_rows(lo, hi, tol=1e-12):
    lo = np.clip(lo, 0.0, 1.0)
    hi = np.clip(hi, 0.0, 1.0)
    hi = np.maximum(hi, lo)
    for i in range(lo.shape[0]):
        excess = lo[i].sum() - 1.0
        if excess > 0:
            lo[i] -= excess * lo[i] / lo[i].sum()
        deficit = 1.0 - hi[i].sum()
        if deficit > 0:
            room = 1.0 - hi[i]
            if room.sum() < deficit:
                raise InfeasibleRowError(i, None, "upper bounds cannot reach total mass one")
            hi[i] += deficit * room / room.sum()
            hi[i] = np.minimum(hi[i], 1.0)
    # every admissible row sums to one, so each entry is also bounded by what
    # the others leave over; this only removes unreachable values
    lo_t = np.maximum(lo, 1.0 - (hi.sum(axis=1, keepdims=True) - hi))
    hi_t = np.minimum(hi, 1.0 - (lo.sum(axis=1, keepdims=True) - lo))
    lo = np.clip(lo_t, 0.0, 1.0)
    hi = np.clip(np.maximum(hi_t, lo), 0.0, 1.0)
    return lo, hi


def transition_intervals(model: KernelModel, partition: GridPartition, action: int = 0,
                         mesh: int = 5, L_grad: float | None = None, sound: bool = True):
    """Interval bounds on one-step cell masses for every source/target cell pair.

    The mass ``m(x) = int_{X_j} q(x, x') dx'`` is extremized over a mesh of
    each source cell; with ``sound`` the extrema are widened by
    ``L_grad * vol(X_j) * sum_k h_k / 2`` (``h_k`` the mesh spacing), which
    bounds the variation of ``m`` between mesh nodes.  Target cells outside
    the model's support hull for the source cell are exactly zero.
    """
    if sound and L_grad is None:
        raise ModelError("sound interval construction needs the gradient bound L_grad")
    lows, highs = partition.cell_bounds()
    n = partition.cell_count
    sides = highs - lows
    vols = np.prod(sides, axis=1)
    pts = _cell_mesh(lows, highs, mesh)
    P = pts.shape[1]
    masses = model.cell_masses(pts.reshape(-1, partition.dim), lows, highs, action).reshape(n, P, n)
    lo = masses.min(axis=1)
    hi = masses.max(axis=1)
    if sound:
        spacing = _mesh_spacing(sides, mesh)
        margin = L_grad * vols[None, :] * (0.5 * spacing.sum(axis=1))[:, None]
        lo = lo - margin
        hi = hi + margin
    for i in range(n):
        h_lo, h_hi = model.support_hull(lows[i], highs[i], action)
        outside = np.any((highs <= h_lo) | (lows >= h_hi), axis=1)
        lo[i, outside] = 0.0
        hi[i, outside] = 0.0
    try:
        lo, hi = _repair_rows(lo, hi)
    except InfeasibleRowError as err:
        raise InfeasibleRowError(err.row, action, "upper bounds cannot reach total mass one") from None
    return lo, hi


def abstract_costs(model: KernelModel, partition: GridPartition, mesh: int = 5):
    """Per-cell upper and lower bounds on the stage cost, shape ``(n_states, n_actions)``."""
    if not model.has_costs:
        raise ModelError(f"model {model.name!r} has no stage cost")
    lows, highs = partition.cell_bounds()
    n = partition.cell_count
    if model.cost_monotone:
        pts = _cell_mesh(lows, highs, 2)
        slack = np.zeros(n)
    else:
        if model.cost_lipschitz is None:
            raise ModelError("non-monotone cost needs a declared Lipschitz constant")
        pts = _cell_mesh(lows, highs, mesh)
        slack = model.cost_lipschitz * 0.5 * _mesh_spacing(highs - lows, mesh).sum(axis=1)
    flat = pts.reshape(-1, partition.dim)
    upper = np.empty((n, model.n_actions))
    lower = np.empty((n, model.n_actions))
    for a in range(model.n_actions):
        g = np.asarray(model.stage_cost(flat, a), dtype=float).reshape(n, -1)
        upper[:, a] = g.max(axis=1) + slack
        lower[:, a] = g.min(axis=1) - slack
    return upper, lower


def build_abstraction(model: KernelModel, partition: GridPartition, mesh: int = 5,
                      L_grad: float | None = None, sound: bool = True,
                      cost_mesh: int = 5, drift_tol: float = 1e-6) -> IntervalAbstraction:
    if partition.box.dim != model.dim or not (
            np.allclose(partition.box.lows, model.box.lows) and np.allclose(partition.box.highs, model.box.highs)):
        raise ModelError("partition box does not match the model state space")
    pi = initial_distribution(model, partition, drift_tol)
    lower = np.empty((model.n_actions, partition.cell_count, partition.cell_count))
    upper = np.empty_like(lower)
    for a in range(model.n_actions):
        lower[a], upper[a] = transition_intervals(model, partition, a, mesh, L_grad, sound)
    cost_upper = cost_lower = None
    if model.has_costs:
        cost_upper, cost_lower = abstract_costs(model, partition, cost_mesh)
    meta = {
        "model": model.to_dict(),
        "mesh": mesh,
        "sound": sound,
        "L_grad": L_grad,
    }
    if not sound:
        meta["warning"] = "unsound mode: intervals are mesh extrema without a Lipschitz margin"
    abs_ = IntervalAbstraction(partition, pi, lower, upper, model.actions, cost_lower, cost_upper, meta)
    abs_.check()
    return abs_
