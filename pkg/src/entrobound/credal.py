"""One-step entropy functionals and optimizers over interval ambiguity sets.

Every objective handled here is separable and convex in the row ``p``:

    Phi(p, V)     = s * sum_j [p_j log p_j + p_j r_j] + p.V
    Phi_eps(p, V) = s * sum_j [p_j log(p_j + C) + p_j r_j] + p.V

with ``r_j = log(vol(X) / vol(X_j))``, ``s`` the log-base scale and
``C = n L_grad dmax^(n+1) / 2``.  The second form is ``Phi + s * eps(p)``
rewritten, since ``p log p + p log(1 + C/p) = p log(p + C)``; it is convex
because ``x log(x + C)`` has second derivative ``1/(x+C) + C/(x+C)^2 > 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

LOG_BASES = {"e": 1.0, "2": 1.0 / math.log(2.0)}


class InfeasibleRowError(ValueError):
    pass


# ---------------------------------------------------------------------------
# types

@dataclass(frozen=True)
class AmbiguityRow:
    """The polytope ``{p in simplex : lower <= p <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray
    tol: float = 1e-9

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise InfeasibleRowError("lower and upper bounds differ in length")
        if np.any(lo > hi + self.tol) or np.any(lo < -self.tol) or np.any(hi > 1 + self.tol):
            raise InfeasibleRowError("bounds must satisfy 0 <= lower <= upper <= 1")
        if lo.sum() > 1 + self.tol or hi.sum() < 1 - self.tol:
            raise InfeasibleRowError(
                f"empty ambiguity set: sum(lower)={lo.sum():.17g}, sum(upper)={hi.sum():.17g}")
        lo = np.clip(lo, 0.0, 1.0)
        hi = np.clip(np.maximum(hi, lo), 0.0, 1.0)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def size(self) -> int:
        return self.lower.size

    @property
    def slack(self) -> float:
        return max(0.0, 1.0 - float(self.lower.sum()))

    def free(self) -> np.ndarray:
        return np.flatnonzero(self.upper > self.lower)

    def contains(self, p, tol: float = 1e-12) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol)
                    and abs(p.sum() - 1.0) <= tol)

    def sample(self, rng, size: int = 1) -> np.ndarray:
        """Random feasible rows (convex combinations of random greedy vertices)."""
        out = np.empty((size, self.size))
        for s in range(size):
            w = rng.dirichlet(np.ones(3))
            out[s] = sum(wi * linear_extreme(self, rng.standard_normal(self.size), "max")[1] for wi in w)
        return out


@dataclass(frozen=True)
class EntropyGeometry:
    """Cell volumes, dimension, max side, gradient bound and log base of one run."""

    log_volume: float
    log_cell_volumes: np.ndarray
    n_x: int
    max_side: float
    L_grad: float = 0.0
    log_base: str = "e"

    def __post_init__(self):
        if self.log_base not in LOG_BASES:
            raise ValueError(f"log_base must be one of {sorted(LOG_BASES)}")
        lcv = np.asarray(self.log_cell_volumes, dtype=float).ravel()
        if not np.all(np.isfinite(lcv)) or not math.isfinite(self.log_volume):
            raise ValueError("cell volumes must be positive")
        object.__setattr__(self, "log_cell_volumes", lcv)

    @classmethod
    def from_partition(cls, partition, L_grad: float = 0.0, log_base: str = "e") -> "EntropyGeometry":
        return cls(partition.box.log_volume, partition.log_cell_volumes(), partition.dim,
                   partition.max_side, float(L_grad), log_base)

    @property
    def scale(self) -> float:
        return LOG_BASES[self.log_base]

    @property
    def log_ratio(self) -> np.ndarray:
        return self.log_volume - self.log_cell_volumes

    @property
    def eps_constant(self) -> float:
        """``C = n L dmax^(n+1) / 2`` of the local correction."""
        return 0.5 * self.n_x * self.L_grad * self.max_side ** (self.n_x + 1)


# ---------------------------------------------------------------------------
# functionals

def _kl_terms(p, geom, C=0.0):
    return geom.scale * (xlogy(p, p + C) + p * geom.log_ratio)


def phi(p, V, geom: EntropyGeometry) -> float:
    p = np.asarray(p, dtype=float)
    return float(np.sum(_kl_terms(p, geom)) + p @ np.asarray(V, dtype=float))


def epsilon(p, n: int, L: float, delta: float) -> float:
    """``sum_t p_t log(1 + n L delta^(n+1) / (2 p_t))`` in nats; zero entries contribute 0."""
    p = np.asarray(p, dtype=float)
    C = 0.5 * n * L * delta ** (n + 1)
    if C == 0:
        return 0.0
    pos = p[p > 0]
    return float(np.sum(pos * np.log1p(C / pos)))


def phi_eps(p, V, geom: EntropyGeometry) -> float:
    p = np.asarray(p, dtype=float)
    C = geom.eps_constant
    return float(np.sum(_kl_terms(p, geom, C)) + p @ np.asarray(V, dtype=float))


def global_epsilon(n: int, log_S: float, L: float, delta: float, log_L: float | None = None) -> float:
    """``log(1 + n/2 |S| L delta^(n+1))`` evaluated through logs, in nats.

    ``log_S`` is ``log |S|``; pass ``log_L`` when ``L`` itself overflows.
    """
    if log_L is None:
        if L < 0:
            raise ValueError("L must be nonnegative")
        if L == 0:
            return 0.0
        log_L = math.log(L)
    if log_L == -math.inf or delta == 0 or n == 0:
        return 0.0
    t = math.log(n / 2.0) + log_S + log_L + (n + 1) * math.log(delta)
    return float(np.logaddexp(0.0, t))


def cell_max_density(p_t: float, lam_t: float, L: float, deltas) -> float:
    """Largest density value reachable in a cell of mass ``p_t`` under gradient bound ``L``."""
    deltas = np.asarray(deltas, dtype=float)
    if abs(np.prod(deltas) - lam_t) > 1e-10 * max(1.0, abs(lam_t)):
        raise ValueError(f"cell volume {lam_t} is not the product of its sides {deltas.tolist()}")
    return p_t / lam_t + 0.5 * L * float(deltas.sum())


def peak_density_at(c, p_t: float, lows, highs, L: float) -> np.ndarray:
    """Maximal density value at peak location(s) ``c`` (shape ``(..., n)``) inside the cell."""
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    c = np.asarray(c, dtype=float)
    deltas = highs - lows
    lam = float(np.prod(deltas))
    others = np.array([np.prod(np.delete(deltas, j)) for j in range(deltas.size)])
    spread = (c - lows) ** 2 + (highs - c) ** 2
    return p_t / lam + L / (2 * lam) * np.sum(others * spread, axis=-1)


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class Extremum:
    """Optimizer output; unpacks as ``value, p``."""

    value: float
    p: np.ndarray
    mode: str = "exact"
    gap: float = 0.0
    iterations: int = 0

    def __iter__(self):
        yield self.value
        yield self.p


def linear_extreme(row: AmbiguityRow, c, sense: str = "max"):
    """Optimize ``c.p`` over the row with the greedy fill; returns ``(value, vertex)``."""
    c = np.asarray(c, dtype=float)
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    order = np.argsort(-c if sense == "max" else c, kind="stable")
    d = (row.upper - row.lower)[order]
    before = np.cumsum(d) - d
    add = np.clip(row.slack - before, 0.0, d)
    p = row.lower.copy()
    p[order] += add
    return float(c @ p), p


class _Separable:
    """``f(p) = sum_j h_j(p_j)`` for the (optionally eps-corrected) step functional."""

    def __init__(self, V, geom, use_eps=False):
        self.V = np.asarray(V, dtype=float)
        self.r = geom.log_ratio
        self.s = geom.scale
        self.C = geom.eps_constant if use_eps else 0.0

    def h(self, x, idx=slice(None)):
        return self.s * (xlogy(x, x + self.C) + x * self.r[idx]) + x * self.V[idx]

    def f(self, p):
        return float(np.sum(self.h(p)))

    def grad(self, p):
        q = np.maximum(p + self.C, 1e-300)
        extra = p / q if self.C > 0 else 1.0
        return self.s * (np.log(q) + extra + self.r) + self.V


def _vertex_count(m: int) -> int:
    return m * 2 ** (m - 1) if m > 0 else 1


def _enumerate_max(row, fn, free, tol=1e-12):
    lo, hi = row.lower, row.upper
    m = free.size
    base = row.lower.copy()
    slack = row.slack
    h_lo = fn.h(lo[free], free)
    d = hi[free] - lo[free]
    gain = fn.h(hi[free], free) - h_lo
    # subset sums of widths and gains over all bitmasks of the free coordinates
    sumd = np.zeros(1)
    sumg = np.zeros(1)
    for j in range(m):
        sumd = np.concatenate([sumd, sumd + d[j]])
        sumg = np.concatenate([sumg, sumg + gain[j]])
    masks = np.arange(2 ** m)
    rem = slack - sumd
    best_val, best = -np.inf, None
    # vertices with no fractional coordinate
    full = np.abs(rem) <= tol
    if np.any(full):
        i = int(np.argmax(np.where(full, sumg, -np.inf)))
        best_val, best = sumg[i], (i, None, 0.0)
    for k in range(m):
        ok = ((masks >> k) & 1 == 0) & (rem >= -tol) & (rem <= d[k] + tol)
        if not np.any(ok):
            continue
        x = np.clip(rem[ok], 0.0, d[k])
        vals = sumg[ok] + fn.h(lo[free[k]] + x, free[k]) - h_lo[k]
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = vals[i], (int(masks[ok][i]), k, float(x[i]))
    mask, k, x = best
    sel = ((mask >> np.arange(m)) & 1).astype(bool)
    base[free[sel]] = hi[free[sel]]
    if k is not None:
        base[free[k]] += x
    return base


def _greedy_vertex(row, order):
    d = (row.upper - row.lower)[order]
    before = np.cumsum(d) - d
    p = row.lower.copy()
    p[order] += np.clip(row.slack - before, 0.0, d)
    return p


def _pair_ascent(row, fn, p, free, max_iter, visited, sid):
    """Steepest ascent over full transfers ``p + t (e_j - e_i)``; convexity puts the best at an end.

    Returns ``(p, steps, fresh)``; ``fresh`` is False when the path ran into a
    point an earlier start already passed through (same continuation).
    """
    lo, hi = row.lower[free], row.upper[free]
    r, V = fn.r[free], fn.V[free]
    s, C = fn.s, fn.C

    def h(x, rr, vv):
        return s * (xlogy(x, x + C) + x * rr) + x * vv

    q = p[free].copy()
    hq = h(q, r, V)
    it = 0
    fresh = True
    for it in range(1, max_iter + 1):
        key = q.tobytes()
        if visited.setdefault(key, sid) != sid:
            fresh = False
            break
        I = np.flatnonzero(q > lo)
        J = np.flatnonzero(q < hi)
        if I.size == 0 or J.size == 0:
            break
        t = np.minimum((q[I] - lo[I])[:, None], (hi[J] - q[J])[None, :])
        t[I[:, None] == J[None, :]] = 0.0
        delta = (h(q[I][:, None] - t, r[I][:, None], V[I][:, None]) - hq[I][:, None]
                 + h(q[J][None, :] + t, r[J][None, :], V[J][None, :]) - hq[J][None, :])
        delta[t <= 0] = -np.inf
        a, b = np.unravel_index(int(np.argmax(delta)), delta.shape)
        if not delta[a, b] > 1e-13 * (1.0 + abs(hq.sum())):
            break
        i, j = I[a], J[b]
        q[i] -= t[a, b]
        q[j] += t[a, b]
        hq[[i, j]] = h(q[[i, j]], r[[i, j]], V[[i, j]])
    out = p.copy()
    out[free] = q
    return out, it, fresh


def _local_max(row, fn, p, free, visited, sid, max_rounds=50):
    best = fn.f(p)
    iters = 0
    for _ in range(max_rounds):
        p, n, fresh = _pair_ascent(row, fn, p, free, 4 * free.size + 4, visited, sid)
        iters += n
        if not fresh:
            return None, iters
        # gradient LP snap onto a vertex never decreases a convex objective
        _, v = linear_extreme(row, fn.grad(p), "max")
        fv, fp = fn.f(v), fn.f(p)
        if fv >= fp:
            p, fp = v, fv
        if fp <= best + 1e-13 * (1.0 + abs(best)):
            break
        best = fp
    return p, iters


def robust_max_convex(row: AmbiguityRow, V, geom: EntropyGeometry, use_eps: bool = False,
                      vertex_budget: int = 10**6, starts: int = 32, seed: int = 0) -> Extremum:
    """Maximize ``Phi`` (or ``Phi_eps``) over the row.

    Exact vertex enumeration when the vertex count fits ``vertex_budget``;
    otherwise multi-start ascent from greedy vertices (``mode="heuristic"``).
    """
    fn = _Separable(V, geom, use_eps)
    free = row.free()
    m = free.size
    if m == 0 or row.slack <= 0:
        p = row.lower.copy()
        return Extremum(fn.f(p), p, "exact")
    if _vertex_count(m) <= vertex_budget:
        p = _enumerate_max(row, fn, free)
        return Extremum(fn.f(p), p, "exact")
    lo, hi = row.lower[free], row.upper[free]
    d = hi - lo
    gain = fn.h(hi, free) - fn.h(lo, free)
    orders = [
        np.argsort(-gain / np.maximum(d, 1e-300), kind="stable"),
        np.argsort(-fn.grad(row.upper)[free], kind="stable"),
        np.argsort(-gain, kind="stable"),
        np.argsort(-(fn.V[free] + fn.s * fn.r[free]), kind="stable"),
    ]
    rng = np.random.default_rng(seed)
    while len(orders) < starts:
        orders.append(rng.permutation(m))
    best_val, best_p, visited, iters = -np.inf, None, {}, 0
    fixed = np.setdiff1d(np.arange(row.size), free)
    for sid, order in enumerate(orders[:starts]):
        p0 = _greedy_vertex(row, np.concatenate([free[order], fixed]))
        p, n = _local_max(row, fn, p0, free, visited, sid)
        iters += n
        if p is None:
            continue
        val = fn.f(p)
        if val > best_val:
            best_val, best_p = val, p
    return Extremum(best_val, best_p, "heuristic", iterations=iters)


def _kkt_min(row, fn):
    """Exact minimizer of the separable ``Phi`` (no eps): ``p_j = clip(w_j e^t, lower, upper)``."""
    lo, hi = row.lower, row.upper
    # log of the unconstrained stationary point at multiplier t: t - V/s - 1 - r
    shift = -fn.V / fn.s - 1.0 - fn.r

    def point(t):
        return np.clip(np.exp(np.minimum(t + shift, 700.0)), lo, hi)

    with np.errstate(divide="ignore"):
        t_lo = float(np.min(np.log(np.where(hi > 0, hi, 1.0)) - shift)) - 50.0
        t_hi = float(np.max(np.log(np.where(hi > 0, hi, 1.0)) - shift)) + 1.0
    for _ in range(200):
        t = 0.5 * (t_lo + t_hi)
        if point(t).sum() < 1.0:
            t_lo = t
        else:
            t_hi = t
        if t_hi - t_lo <= 1e-15 * max(1.0, abs(t)):
            break
    p = point(t_hi)
    # push the rounding residue onto coordinates strictly inside their bounds
    resid = 1.0 - p.sum()
    inner = (p > lo) & (p < hi)
    if not np.any(inner):
        inner = hi > lo
    room = np.where(resid > 0, hi - p, p - lo) * inner
    if room.sum() > 0:
        p = p + resid * room / room.sum()
    return np.clip(p, lo, hi)


def _fw_gap(row, fn, p):
    g = fn.grad(p)
    _, s = linear_extreme(row, g, "min")
    return float(g @ (p - s)), s


def robust_min_convex(row: AmbiguityRow, V, geom: EntropyGeometry, fw_tol: float = 1e-9,
                      max_iter: int = 10**4) -> Extremum:
    """Minimize ``Phi`` over the row.

    The conditional-gradient gap certifies the result; the iteration is
    warm-started at the closed-form stationary point of the separable problem,
    so the gap is usually met at iteration zero.
    """
    fn = _Separable(V, geom, False)
    if row.free().size == 0 or row.slack <= 0:
        p = row.lower.copy()
        return Extremum(fn.f(p), p, "exact")
    p = _kkt_min(row, fn)
    gap, s = _fw_gap(row, fn, p)
    it = 0
    while gap > fw_tol and it < max_iter:
        it += 1
        direction = s - p
        a, b = 0.0, 1.0
        # convex in the step size: ternary-style bisection on the directional derivative
        for _ in range(60):
            mid = 0.5 * (a + b)
            if fn.grad(p + mid * direction) @ direction < 0:
                a = mid
            else:
                b = mid
        p = p + a * direction
        gap, s = _fw_gap(row, fn, p)
    mode = "exact" if gap <= fw_tol else "cap"
    return Extremum(fn.f(p), p, mode, gap=max(gap, 0.0), iterations=it)
