"""Continuous Markov models: densities, cell masses, samplers and sup-norm constants.

Every model works on batches.  Points are arrays of shape ``(M, dim)`` and
actions are integer indices into ``model.actions``.  A plain Markov chain is
a model with the single action ``None``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import ndtr

from .geometry import Box

AV_ACTIONS = (0, 5, 10, 15, 20)


class ModelError(ValueError):
    pass


class QuadratureError(RuntimeError):
    def __init__(self, message, error_estimate):
        super().__init__(f"{message} (estimated error {error_estimate:.3e})")
        self.error_estimate = error_estimate


# ---------------------------------------------------------------------------
# quadrature

def gauss_legendre_box(f, lows, highs, order=16, pieces=1):
    """Composite tensor Gauss-Legendre rule for ``f`` over one box.

    ``f`` maps an ``(P, dim)`` array of nodes to ``(P, ...)`` values; the
    weighted sum over nodes is returned.
    """
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    dim = lows.size
    t, w = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for d in range(dim):
        edges = np.linspace(lows[d], highs[d], pieces + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        axes.append((mid[:, None] + half[:, None] * t[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wts = weights[0]
    for d in range(1, dim):
        wts = np.multiply.outer(wts, weights[d])
    vals = f(nodes)
    return np.tensordot(wts.ravel(), vals, axes=(0, 0))


def checked_box_integral(f, lows, highs, order=16, pieces=1, tol=1e-9):
    """Integrate with a refinement check; raises :class:`QuadratureError`."""
    coarse = gauss_legendre_box(f, lows, highs, order, pieces)
    fine = gauss_legendre_box(f, lows, highs, order, 2 * pieces)
    err = float(np.max(np.abs(fine - coarse)))
    if err > tol:
        raise QuadratureError("Gauss-Legendre quadrature did not converge", err)
    return fine


# ---------------------------------------------------------------------------
# model base

class KernelModel:
    """Base class for continuous Markov models on a box.

    Subclasses implement the density/mass/sampling hooks.  ``cost_monotone``
    declares that the stage cost is monotone in every coordinate, so exact
    cell extrema sit at cell corners.
    """

    name = "abstract"
    actions: tuple = (None,)
    cost_monotone = False
    cost_lipschitz: float | None = None

    def __init__(self, box: Box, horizon: int):
        if horizon < 0:
            raise ModelError("horizon must be nonnegative")
        self.box = box
        self.horizon = int(horizon)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def has_actions(self) -> bool:
        return self.actions != (None,)

    @property
    def has_costs(self) -> bool:
        return False

    def initial_density(self, x):
        raise NotImplementedError

    def transition_density(self, x, xp, action=0):
        raise NotImplementedError

    def cell_masses(self, x, lows, highs, action=0):
        """Masses of ``q(x_m, .)`` over boxes ``[lows[c], highs[c]]``: shape ``(M, C)``."""
        raise NotImplementedError

    def initial_cell_masses(self, lows, highs):
        raise NotImplementedError

    def support_hull(self, lo, hi, action=0):
        """A box containing the support of ``q(x, .)`` for every ``x`` in ``[lo, hi]``."""
        return self.box.lows, self.box.highs

    def sample_initial(self, rng, size):
        raise NotImplementedError

    def sample_step(self, x, action, rng):
        raise NotImplementedError

    def stage_cost(self, x, action=0):
        raise ModelError(f"model {self.name!r} has no stage cost")

    def analytic_constants(self):
        """``(L_q, L_grad)`` when known in closed form, else ``None``."""
        return None

    def to_dict(self) -> dict:
        return {"type": self.name, "box": self.box.to_dict(), "horizon": self.horizon}


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim)
    if x.shape[-1] != dim:
        raise ModelError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


def _action_array(action, size):
    return np.broadcast_to(np.asarray(action, dtype=int), (size,))


# ---------------------------------------------------------------------------
# clipped Gaussian random walk

def _normal_interval(z_lo, z_hi):
    # evaluate in the tail that keeps precision
    upper = z_lo > 0
    return np.where(upper, ndtr(-z_lo) - ndtr(-z_hi), ndtr(z_hi) - ndtr(z_lo))


def _check_spd(name, cov):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, rtol=0, atol=1e-14):
        raise ModelError(f"{name} must be a symmetric square matrix")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ModelError(f"{name} is not positive definite") from None
    return cov, chol


class _ClippedGaussian:
    """``N(.; mean, cov)`` restricted to the box plus the outside mass spread uniformly."""

    def __init__(self, box, cov, quad_order=16, quad_pieces=4, quad_tol=1e-9):
        self.box = box
        self.cov, self.chol = _check_spd("covariance", cov)
        if self.cov.shape[0] != box.dim:
            raise ModelError("covariance dimension does not match the box")
        self.prec = np.linalg.inv(self.cov)
        self.diagonal = bool(np.all(self.cov == np.diag(np.diag(self.cov))))
        self.sigma = np.sqrt(np.diag(self.cov))
        self.log_norm = -0.5 * (box.dim * math.log(2 * math.pi) + np.linalg.slogdet(self.cov)[1])
        self.quad = (quad_order, quad_pieces, quad_tol)

    def gauss_pdf(self, mean, xp):
        d = xp - mean
        return np.exp(self.log_norm - 0.5 * np.einsum("...i,ij,...j->...", d, self.prec, d))

    def box_masses(self, mean, lows, highs):
        """Gaussian (unclipped) mass of boxes; ``mean`` is ``(M, dim)``, result ``(M, C)``."""
        if self.diagonal:
            z_hi = (highs[None, :, :] - mean[:, None, :]) / self.sigma
            z_lo = (lows[None, :, :] - mean[:, None, :]) / self.sigma
            return np.prod(_normal_interval(z_lo, z_hi), axis=2)
        order, pieces, tol = self.quad
        out = np.empty((mean.shape[0], lows.shape[0]))
        for c in range(lows.shape[0]):
            out[:, c] = checked_box_integral(
                lambda nodes: self.gauss_pdf(mean[None, :, :], nodes[:, None, :]),
                lows[c], highs[c], order, pieces, tol)
        return out

    def outside(self, mean):
        inside = self.box_masses(mean, self.box.lows[None, :], self.box.highs[None, :])[:, 0]
        return np.clip(1.0 - inside, 0.0, 1.0)

    def density(self, mean, xp):
        inside = self.box.contains(xp)
        val = self.gauss_pdf(mean, xp) + self.outside(mean) / self.box.volume
        return np.where(inside, val, 0.0)

    def masses(self, mean, lows, highs):
        vols = np.prod(highs - lows, axis=1)
        return self.box_masses(mean, lows, highs) + self.outside(mean)[:, None] * vols[None, :] / self.box.volume

    def sup_constants(self, centres=None):
        """Exact ``sup`` and a gradient bound of the density for a diagonal covariance.

        ``centres=None`` means the mean ranges over the whole box (transition
        kernel); otherwise the mean is the fixed point ``centres``.
        """
        if not self.diagonal:
            return None
        s, w, lam = self.sigma, self.box.widths, self.box.volume
        peak1 = 1.0 / (math.sqrt(2 * math.pi) * s)
        if centres is None:
            # interval masses are smallest with the mean on a box edge, largest at the centre
            m_min = ndtr(w / s) - 0.5
            m_max = 2 * ndtr(0.5 * w / s) - 1
            outside = 1.0 - float(np.prod(m_min))
            peak = float(np.prod(peak1))
        else:
            mean = np.asarray(centres, dtype=float)
            m = _normal_interval((self.box.lows - mean) / s, (self.box.highs - mean) / s)
            outside = 1.0 - float(np.prod(m))
            peak = float(np.prod(peak1))
        L_q = peak + max(outside, 0.0) / lam
        grad = np.empty(s.size)
        for j in range(s.size):
            others = float(np.prod(np.delete(peak1, j)))
            # |d/dz z phi(z)/s^2| is largest at |z| = s, value e^{-1/2}/(sqrt(2 pi) s^2)
            A = math.exp(-0.5) * peak1[j] / s[j] * others
            B = 0.0
            if centres is None:
                B = peak1[j] * (1.0 - math.exp(-0.5 * (w[j] / s[j]) ** 2)) * float(np.prod(np.delete(m_max, j)))
            grad[j] = A + B / lam
        return L_q, float(grad.max())

    def sample(self, mean, rng):
        step = rng.standard_normal(mean.shape) @ self.chol.T
        out = mean + step
        bad = ~self.box.contains(out)
        if np.any(bad):
            out[bad] = self.box.lows + rng.random((int(bad.sum()), self.box.dim)) * self.box.widths
        return out


class ClippedGaussianModel(KernelModel):
    """Gaussian random walk on a box with uniform re-placement of escaping mass."""

    name = "clipped_gaussian"

    def __init__(self, box: Box, cov, mean0, cov0, horizon: int, **quad):
        super().__init__(box, horizon)
        self.step = _ClippedGaussian(box, cov, **quad)
        self.init = _ClippedGaussian(box, cov0, **quad)
        self.mean0 = np.asarray(mean0, dtype=float).reshape(box.dim)
        if not box.contains(self.mean0):
            raise ModelError("initial mean must lie in the box")

    def initial_density(self, x):
        x = _as_points(x, self.dim)
        return self.init.density(np.broadcast_to(self.mean0, x.shape), x)

    def transition_density(self, x, xp, action=0):
        x = _as_points(x, self.dim)
        xp = _as_points(xp, self.dim)
        return self.step.density(x, xp)

    def outside_mass(self, x):
        return self.step.outside(_as_points(x, self.dim))

    def cell_masses(self, x, lows, highs, action=0):
        return self.step.masses(_as_points(x, self.dim), np.atleast_2d(lows), np.atleast_2d(highs))

    def initial_cell_masses(self, lows, highs):
        return self.init.masses(self.mean0[None, :], np.atleast_2d(lows), np.atleast_2d(highs))[0]

    def sample_initial(self, rng, size):
        return self.init.sample(np.tile(self.mean0, (size, 1)), rng)

    def sample_step(self, x, action, rng):
        return self.step.sample(_as_points(x, self.dim).copy(), rng)

    def analytic_constants(self):
        step = self.step.sup_constants()
        init = self.init.sup_constants(self.mean0)
        if step is None or init is None:
            return None
        return max(step[0], init[0]), max(step[1], init[1])

    def to_dict(self):
        d = super().to_dict()
        d.update(cov=self.step.cov.tolist(), mean0=self.mean0.tolist(), cov0=self.init.cov.tolist())
        return d


def clipped_gaussian_model(box: Box, cov, mean0, cov0, K: int, **quad) -> ClippedGaussianModel:
    return ClippedGaussianModel(box, cov, mean0, cov0, K, **quad)


# ---------------------------------------------------------------------------
# triangular distributions

def triangular_pdf(w, left, mode, right):
    w, left, mode, right = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (w, left, mode, right)))
    width = right - left
    out = np.zeros(w.shape)
    rise = (w >= left) & (w <= mode) & (mode > left)
    fall = (w >= mode) & (w <= right) & (right > mode)
    out[rise] = 2 * (w[rise] - left[rise]) / (width[rise] * (mode[rise] - left[rise]))
    out[fall] = 2 * (right[fall] - w[fall]) / (width[fall] * (right[fall] - mode[fall]))
    return out


def triangular_cdf(w, left, mode, right):
    w, left, mode, right = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (w, left, mode, right)))
    width = right - left
    out = np.where(w >= right, 1.0, 0.0)
    rise = (w > left) & (w <= mode)
    fall = (w > mode) & (w < right)
    out[rise] = (w[rise] - left[rise]) ** 2 / (width[rise] * (mode[rise] - left[rise]))
    out[fall] = 1 - (right[fall] - w[fall]) ** 2 / (width[fall] * (right[fall] - mode[fall]))
    return out


def av_shape(v):
    """Left, mode and right points of the velocity disturbance at velocity ``v``."""
    v = np.asarray(v, dtype=float)
    left = (1 - v) * 0.0 + v * -0.8
    mode = (1 - v) * 0.05 + v * -0.2
    right = (1 - v) * 0.1 + v * 0.0
    return left, mode, right


def av_disturbance_pdf(w, v):
    return triangular_pdf(w, *av_shape(v))


class TriangularAVModel(KernelModel):
    """Velocity model ``v' = 0.8 v + 0.01 u + w`` with a velocity-dependent triangular ``w``.

    The state space is ``[0, 1]``; actions are additive accelerations and the
    stage cost is ``-phi * v``.  ``initial`` is either ``"uniform"`` or a
    ``(left, mode, right)`` triangle inside ``[0, 1]``.
    """

    name = "triangular_av"
    actions = AV_ACTIONS
    cost_monotone = True

    def __init__(self, horizon: int, phi: float = 1.0, initial=(0.0, 0.05, 0.1)):
        super().__init__(Box.unit(1), horizon)
        if not phi > 0:
            raise ModelError("cost scale phi must be positive")
        self.phi = float(phi)
        if isinstance(initial, str):
            if initial != "uniform":
                raise ModelError(f"unknown initial distribution {initial!r}")
            self.initial = "uniform"
        else:
            left, mode, right = (float(a) for a in initial)
            if not (0.0 <= left <= mode <= right <= 1.0 and right > left):
                raise ModelError("initial triangle must satisfy 0 <= left <= mode <= right <= 1, left < right")
            self.initial = (left, mode, right)
        self.cost_lipschitz = self.phi

    @property
    def has_costs(self):
        return True

    def drift(self, v, action):
        return 0.8 * v + 0.01 * np.asarray(self.actions, dtype=float)[action]

    def initial_density(self, x):
        v = _as_points(x, 1)[:, 0]
        if self.initial == "uniform":
            return np.where((v >= 0) & (v <= 1), 1.0, 0.0)
        return triangular_pdf(v, *self.initial)

    def transition_density(self, x, xp, action=0):
        v = _as_points(x, 1)[:, 0]
        vp = _as_points(xp, 1)[:, 0]
        a = _action_array(action, v.size)
        return av_disturbance_pdf(vp - self.drift(v, a), v)

    def cell_masses(self, x, lows, highs, action=0):
        v = _as_points(x, 1)[:, 0]
        lo = np.atleast_2d(lows)[:, 0]
        hi = np.atleast_2d(highs)[:, 0]
        a = _action_array(action, v.size)
        centre = self.drift(v, a)[:, None]
        left, mode, right = (s[:, None] for s in av_shape(v))
        return (triangular_cdf(hi[None, :] - centre, left, mode, right)
                - triangular_cdf(lo[None, :] - centre, left, mode, right))

    def initial_cell_masses(self, lows, highs):
        lo = np.atleast_2d(lows)[:, 0]
        hi = np.atleast_2d(highs)[:, 0]
        if self.initial == "uniform":
            return np.clip(hi, 0, 1) - np.clip(lo, 0, 1)
        return triangular_cdf(hi, *self.initial) - triangular_cdf(lo, *self.initial)

    def support_hull(self, lo, hi, action=0):
        # lower edge of the support is 0.8 v + l(v) + 0.01 u = 0.01 u for every v;
        # upper edge 0.01 u + 0.1 + 0.7 v is increasing in v
        shift = 0.01 * self.actions[action]
        top = shift + 0.1 + 0.7 * float(np.max(hi))
        return np.array([shift]), np.array([min(top, 1.0)])

    def sample_initial(self, rng, size):
        if self.initial == "uniform":
            return rng.random((size, 1))
        left, mode, right = self.initial
        return rng.triangular(left, mode, right, size=(size, 1))

    def sample_step(self, x, action, rng):
        v = _as_points(x, 1)[:, 0]
        a = _action_array(action, v.size)
        left, mode, right = av_shape(v)
        w = rng.triangular(left, mode, right)
        return np.clip(self.drift(v, a) + w, 0.0, 1.0)[:, None]

    def stage_cost(self, x, action=0):
        v = _as_points(x, 1)[:, 0]
        return -self.phi * v

    def analytic_constants(self):
        # the peak 2/(r-l) and the slopes 2/((r-l)(m-l)), 2/((r-l)(r-m)) are all
        # largest at v = 0, giving 20 and 400; derivatives in v are smaller there
        L_q, L_grad = 20.0, 400.0
        if self.initial != "uniform":
            left, mode, right = self.initial
            width = right - left
            L_q = max(L_q, 2 / width)
            for part in (mode - left, right - mode):
                if part > 0:
                    L_grad = max(L_grad, 2 / (width * part))
        return L_q, L_grad

    def to_dict(self):
        d = super().to_dict()
        d.update(phi=self.phi, initial=self.initial if isinstance(self.initial, str) else list(self.initial),
                 actions=list(self.actions))
        return d


def triangular_av_model(K: int, phi: float = 1.0, initial=(0.0, 0.05, 0.1)) -> TriangularAVModel:
    return TriangularAVModel(K, phi, initial)


# ---------------------------------------------------------------------------
# tabulated densities

def _hat_weights(nodes, lo, hi):
    """Integrals over ``[lo, hi]`` of the piecewise-linear hat functions on ``nodes``."""
    lo = np.atleast_1d(lo)
    hi = np.atleast_1d(hi)
    n = nodes.size
    out = np.zeros((lo.size, n))
    for seg in range(n - 1):
        a, b = nodes[seg], nodes[seg + 1]
        h = b - a
        s = np.clip(lo, a, b)
        e = np.clip(hi, a, b)
        # hat_k on [a, b]: left node weight (b - t)/h, right node weight (t - a)/h
        out[:, seg] += ((b - s) ** 2 - (b - e) ** 2) / (2 * h)
        out[:, seg + 1] += ((e - a) ** 2 - (s - a) ** 2) / (2 * h)
    return out


class TabulatedModel(KernelModel):
    """Chain with densities tabulated on a uniform node grid, interpolated multilinearly.

    ``q0`` has shape ``(n,) * dim`` and ``q`` has shape ``(n,) * (2 * dim)``
    with source coordinates first.  Each source row is normalized so that the
    interpolant integrates to one exactly.  ``L_q`` and ``L_grad`` must be
    supplied by the user.
    """

    name = "custom"

    def __init__(self, box: Box, q0, q, horizon: int, L_q: float, L_grad: float):
        super().__init__(box, horizon)
        q0 = np.asarray(q0, dtype=float)
        q = np.asarray(q, dtype=float)
        dim = box.dim
        n = q0.shape[0]
        if q0.shape != (n,) * dim or q.shape != (n,) * (2 * dim) or n < 2:
            raise ModelError(f"tables must have shapes {(n,) * dim} and {(n,) * (2 * dim)} with n >= 2")
        if np.any(q0 < 0) or np.any(q < 0):
            raise ModelError("tabulated densities must be nonnegative")
        self.nodes = [np.linspace(lo, hi, n) for lo, hi in zip(box.lows, box.highs)]
        self.trap = [_hat_weights(nd, nd[0], nd[-1])[0] for nd in self.nodes]
        q0 = q0 / self._integrate_tail(q0)
        rows = q.reshape((n**dim,) + (n,) * dim)
        norms = np.array([self._integrate_tail(r) for r in rows])
        if np.any(norms <= 0):
            raise ModelError("a tabulated transition row has zero mass")
        self.q0 = q0
        self.q = (rows / norms.reshape((-1,) + (1,) * dim)).reshape(q.shape)
        self.L_q = float(L_q)
        self.L_grad = float(L_grad)
        self._q0_interp = RegularGridInterpolator(self.nodes, self.q0)
        self._q_interp = RegularGridInterpolator(self.nodes * 2, self.q)
        # source-only interpolation of whole rows: move target axes to the back
        self._row_interp = RegularGridInterpolator(self.nodes, self.q.reshape((n,) * dim + (-1,)))

    def _integrate_tail(self, table):
        out = table
        for d in reversed(range(self.dim)):
            out = np.tensordot(out, self.trap[d], axes=([out.ndim - 1], [0]))
        return float(out)

    def _weights(self, lows, highs):
        lows = np.atleast_2d(lows)
        highs = np.atleast_2d(highs)
        per_dim = [_hat_weights(self.nodes[d], lows[:, d], highs[:, d]) for d in range(self.dim)]
        w = per_dim[0]
        for d in range(1, self.dim):
            w = np.einsum("ca,cb->cab", w, per_dim[d]).reshape(w.shape[0], -1)
        return w  # (C, n**dim)

    def initial_density(self, x):
        x = _as_points(x, self.dim)
        inside = self.box.contains(x)
        return np.where(inside, self._q0_interp(np.clip(x, self.box.lows, self.box.highs)), 0.0)

    def transition_density(self, x, xp, action=0):
        x = _as_points(x, self.dim)
        xp = _as_points(xp, self.dim)
        inside = self.box.contains(xp)
        pts = np.concatenate([x, np.clip(xp, self.box.lows, self.box.highs)], axis=1)
        return np.where(inside, self._q_interp(pts), 0.0)

    def cell_masses(self, x, lows, highs, action=0):
        rows = self._row_interp(_as_points(x, self.dim))
        return rows @ self._weights(lows, highs).T

    def initial_cell_masses(self, lows, highs):
        return self._weights(lows, highs) @ self.q0.ravel()

    def _rejection(self, rng, size, density):
        out = np.empty((size, self.dim))
        todo = np.arange(size)
        cap = max(self.L_q, 1e-300)
        while todo.size:
            prop = self.box.lows + rng.random((todo.size, self.dim)) * self.box.widths
            keep = rng.random(todo.size) * cap <= density(todo, prop)
            out[todo[keep]] = prop[keep]
            todo = todo[~keep]
        return out

    def sample_initial(self, rng, size):
        return self._rejection(rng, size, lambda idx, p: self.initial_density(p))

    def sample_step(self, x, action, rng):
        x = _as_points(x, self.dim)
        return self._rejection(rng, x.shape[0], lambda idx, p: self.transition_density(x[idx], p))

    def analytic_constants(self):
        return self.L_q, self.L_grad

    def to_dict(self):
        d = super().to_dict()
        d.update(nodes=len(self.nodes[0]), L_q=self.L_q, L_grad=self.L_grad)
        return d


# ---------------------------------------------------------------------------
# single-point wrappers

def cell_mass(model: KernelModel, x, cell: Box, action: int = 0) -> float:
    """Probability that one step from ``x`` lands in ``cell``."""
    x = np.asarray(x, dtype=float).reshape(1, model.dim)
    if not model.box.contains(x[0]):
        raise ModelError("source point lies outside the state space")
    return float(model.cell_masses(x, cell.lows[None, :], cell.highs[None, :], action)[0, 0])


def sample_step(model: KernelModel, x, action, rng) -> np.ndarray:
    return model.sample_step(x, action, rng)


# ---------------------------------------------------------------------------
# sup-norm constants

@dataclass(frozen=True)
class SupBounds:
    L_q: float
    L_grad: float
    source: str
    safety: float


def _mesh(box, points):
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(box.lows, box.highs)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _fd_gradient_sup(f, pts, box_lows, box_highs, step):
    """Largest absolute central (one-sided at the box edge) difference over all coordinates."""
    best = 0.0
    for j in range(pts.shape[1]):
        up = pts.copy()
        dn = pts.copy()
        up[:, j] = np.minimum(pts[:, j] + step[j], box_highs[j])
        dn[:, j] = np.maximum(pts[:, j] - step[j], box_lows[j])
        span = up[:, j] - dn[:, j]
        slope = np.abs(f(up) - f(dn)) / span
        best = max(best, float(np.max(slope)))
    return best


def estimate_sup_bounds(model: KernelModel, mesh: int = 21, safety: float = 1.1,
                        use_analytic: bool = True, fd_rel_step: float = 1e-6) -> SupBounds:
    """Bounds on ``sup q`` and on the sup-norm of its gradient.

    Analytic values are returned when the model has them (and
    ``use_analytic``).  Otherwise densities and finite-difference slopes are
    maximized over a tensor mesh of source/target pairs and the results are
    inflated by ``safety``; sampling cannot certify a supremum.
    """
    if use_analytic and model.analytic_constants() is not None:
        L_q, L_grad = model.analytic_constants()
        return SupBounds(float(L_q), float(L_grad), "analytic", 1.0)
    box = model.box
    dim = model.dim
    pts = _mesh(box, mesh)
    step = fd_rel_step * box.widths
    L_q = float(np.max(model.initial_density(pts)))
    L_grad = _fd_gradient_sup(model.initial_density, pts, box.lows, box.highs, step)
    src = np.repeat(pts, pts.shape[0], axis=0)
    dst = np.tile(pts, (pts.shape[0], 1))
    pairs = np.concatenate([src, dst], axis=1)
    lows2 = np.concatenate([box.lows, box.lows])
    highs2 = np.concatenate([box.highs, box.highs])
    step2 = np.concatenate([step, step])
    for a in range(model.n_actions):
        f = lambda z, a=a: model.transition_density(z[:, :dim], z[:, dim:], a)
        L_q = max(L_q, float(np.max(f(pairs))))
        L_grad = max(L_grad, _fd_gradient_sup(f, pairs, lows2, highs2, step2))
    return SupBounds(safety * L_q, safety * L_grad, "sampled", safety)


@dataclass(frozen=True)
class GradientConstants:
    """``L_q``, ``L_grad`` and the trajectory-density gradient bound ``L = 2 L_q^K L_grad``.

    ``L`` is ``inf`` when it overflows a double; ``log_L`` is always exact.
    """

    L_q: float
    L_grad: float
    L: float
    log_L: float
    horizon: int


def trajectory_gradient_bound(L_q: float, L_grad: float, K: int) -> GradientConstants:
    if L_q < 0 or L_grad < 0:
        raise ModelError("sup-norm constants must be nonnegative")
    if L_grad == 0 or (L_q == 0 and K > 0):
        return GradientConstants(L_q, L_grad, 0.0, -math.inf, K)
    log_L = math.log(2.0) + K * math.log(L_q) + math.log(L_grad) if K > 0 else math.log(2 * L_grad)
    try:
        L = 2.0 * L_q**K * L_grad
    except OverflowError:
        L = math.inf
    if not math.isfinite(L):
        L = math.inf
    return GradientConstants(L_q, L_grad, L, log_L, K)
