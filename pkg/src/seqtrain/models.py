"""Nonlinear parametrizations u(theta, x) with analytic derivatives.

Every model maps a flat parameter vector ``theta`` of length ``n_params`` and a
batch of spatial points ``x`` of shape ``(n, d)`` to values.  Derivative
arrays put the parameter axis first so that row ``i`` of ``grad_theta`` is the
component function d u / d theta_i sampled at the points.

All derivatives are hand-coded.  The test-suite checks each of them against
central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Model",
    "GaussianMixtureModel",
    "ShallowNetworkModel",
    "BoundaryMask",
    "MaskedModel",
    "as_points",
]


def as_points(x, dim):
    """Return ``x`` as a float array of shape ``(n, dim)``."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    if pts.ndim == 1:
        if dim == 1:
            pts = pts[:, None]
        elif pts.shape[0] == dim:
            pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ConfigurationError(
            f"points must have shape (n, {dim}), got {np.shape(x)}")
    return pts


class Model:
    """Common interface.  Subclasses set ``dim`` and ``n_params``."""

    dim: int
    n_params: int

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(
                f"{type(self).__name__} expects {self.n_params} parameters, "
                f"got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("parameter vector contains NaN or Inf")
        return theta

    def eval(self, theta, x):
        raise NotImplementedError

    def grad_theta(self, theta, x):
        raise NotImplementedError

    def grad_x(self, theta, x):
        raise NotImplementedError

    def laplacian(self, theta, x):
        raise NotImplementedError

    def grad_theta_grad_x(self, theta, x):
        """Mixed derivative, shape ``(p, d, n)``."""
        raise NotImplementedError

    def grad_theta_laplacian(self, theta, x):
        """Parameter gradient of the Laplacian, shape ``(p, n)``."""
        raise NotImplementedError

    def hessian_vector(self, theta, v, x):
        """Directional derivative of ``grad_theta`` along ``v``, shape ``(p, n)``."""
        raise NotImplementedError

    def random_params(self, rng):
        raise NotImplementedError

    # Whether u(theta, .) lies in the span of its own gradient components.
    in_own_tangent_space = True


class GaussianMixtureModel(Model):
    """Sum of Gaussian bumps ``sum_i beta_i * exp(-|x - alpha_i|^2 / (2 h_i^2))``.

    Parameter layout is ``[alpha_1, ..., alpha_N, beta_1, ..., beta_N]`` with
    each center ``alpha_i`` in R^d stored contiguously.  With
    ``trainable_bandwidth=True`` the per-kernel widths ``h_1..h_N`` are
    appended and ``bandwidth`` only sets their initial value.
    """

    def __init__(self, n_kernels, bandwidth=0.1, dim=1, trainable_bandwidth=False):
        if int(n_kernels) < 1:
            raise ConfigurationError("n_kernels must be a positive integer")
        if not bandwidth > 0:
            raise ConfigurationError("bandwidth must be positive")
        if int(dim) < 1:
            raise ConfigurationError("dim must be a positive integer")
        self.n_kernels = int(n_kernels)
        self.bandwidth = float(bandwidth)
        self.dim = int(dim)
        self.trainable_bandwidth = bool(trainable_bandwidth)
        n, d = self.n_kernels, self.dim
        self.n_params = n * d + n + (n if self.trainable_bandwidth else 0)

    def __repr__(self):
        return (f"GaussianMixtureModel(n_kernels={self.n_kernels}, "
                f"bandwidth={self.bandwidth}, dim={self.dim}, "
                f"trainable_bandwidth={self.trainable_bandwidth})")

    # -- layout helpers -------------------------------------------------
    def center_index(self, i):
        return slice(i * self.dim, (i + 1) * self.dim)

    def weight_index(self, i):
        return self.n_kernels * self.dim + i

    def width_index(self, i):
        if not self.trainable_bandwidth:
            raise ConfigurationError("bandwidth is not a parameter of this model")
        return self.n_kernels * (self.dim + 1) + i

    def kernel_indices(self, i):
        """All parameter indices belonging to kernel ``i``."""
        idx = list(range(i * self.dim, (i + 1) * self.dim)) + [self.weight_index(i)]
        if self.trainable_bandwidth:
            idx.append(self.width_index(i))
        return idx

    def pack(self, centers, weights, widths=None):
        centers = np.asarray(centers, dtype=float).reshape(self.n_kernels, self.dim)
        parts = [centers.ravel(), np.asarray(weights, dtype=float).ravel()]
        if self.trainable_bandwidth:
            if widths is None:
                widths = np.full(self.n_kernels, self.bandwidth)
            parts.append(np.asarray(widths, dtype=float).ravel())
        return np.concatenate(parts)

    def unpack(self, theta):
        n, d = self.n_kernels, self.dim
        centers = theta[: n * d].reshape(n, d)
        weights = theta[n * d: n * d + n]
        if self.trainable_bandwidth:
            widths = theta[n * d + n:]
        else:
            widths = np.full(n, self.bandwidth)
        return centers, weights, widths

    def random_params(self, rng, box=None):
        lo, hi = (-1.0, 1.0) if box is None else box
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.dim,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.dim,))
        centers = lo + (hi - lo) * rng.random((self.n_kernels, self.dim))
        weights = rng.standard_normal(self.n_kernels)
        widths = self.bandwidth * (1.0 + 0.2 * rng.random(self.n_kernels))
        return self.pack(centers, weights, widths)

    # -- shared intermediate quantities ---------------------------------
    def _parts(self, theta, x):
        theta = self.check_theta(theta)
        pts = as_points(x, self.dim)
        centers, beta, h = self.unpack(theta)
        diff = pts[None, :, :] - centers[:, None, :]          # (N, n, d)
        r2 = np.einsum("ind,ind->in", diff, diff)             # (N, n)
        a = (1.0 / h**2)[:, None]                              # (N, 1)
        phi = np.exp(-0.5 * a * r2)                            # (N, n)
        return beta[:, None], h[:, None], a, diff, r2, phi

    def _stack(self, center_rows, weight_rows, width_rows):
        """Assemble per-kernel blocks into parameter-major order."""
        n = self.n_kernels
        tail = center_rows.shape[2:]
        rows = [center_rows.reshape((n * self.dim,) + tail), weight_rows]
        if self.trainable_bandwidth:
            rows.append(width_rows)
        return np.concatenate(rows, axis=0)

    # -- evaluation -----------------------------------------------------
    def eval(self, theta, x):
        beta, _, _, _, _, phi = self._parts(theta, x)
        return np.sum(beta * phi, axis=0)

    def grad_theta(self, theta, x):
        beta, h, a, diff, r2, phi = self._parts(theta, x)
        # d/d alpha_i = beta_i phi_i (x - alpha_i) / h_i^2
        center = (beta * phi * a)[:, None, :] * np.moveaxis(diff, 2, 1)
        width = beta * phi * a * r2 / h
        return self._stack(center, phi, width)

    def grad_x(self, theta, x):
        beta, _, a, diff, _, phi = self._parts(theta, x)
        return -np.einsum("in,ind->dn", beta * phi * a, diff)

    def laplacian(self, theta, x):
        beta, _, a, _, r2, phi = self._parts(theta, x)
        d = self.dim
        return np.sum(beta * phi * (a**2 * r2 - d * a), axis=0)

    def grad_theta_grad_x(self, theta, x):
        beta, h, a, diff, r2, phi = self._parts(theta, x)
        d = self.dim
        dt = np.moveaxis(diff, 2, 1)                           # (N, d, n)
        eye = np.eye(d)[None, :, :, None]
        outer = dt[:, :, None, :] * dt[:, None, :, :]          # (N, d, d, n)
        coef = (beta * phi)[:, None, None, :]
        center = coef * (a[:, None, None, :] * eye - (a**2)[:, None, None, :] * outer)
        weight = -(phi * a)[:, None, :] * dt
        width = -(beta * phi * a / h * (a * r2 - 2.0))[:, None, :] * dt
        return self._stack(center, weight, width)

    def grad_theta_laplacian(self, theta, x):
        beta, h, a, diff, r2, phi = self._parts(theta, x)
        d = self.dim
        dt = np.moveaxis(diff, 2, 1)
        center = (beta * phi * a * (a**2 * r2 - (d + 2) * a))[:, None, :] * dt
        weight = phi * (a**2 * r2 - d * a)
        width = beta * phi * a / h * (a**2 * r2**2 - d * a * r2 - 4.0 * a * r2 + 2.0 * d)
        return self._stack(center, weight, width)

    def hessian_vector(self, theta, v, x):
        beta, h, a, diff, r2, phi = self._parts(theta, x)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_params,):
            raise ConfigurationError("direction must match the parameter shape")
        v_alpha, v_beta, v_h = self.unpack(v)
        v_beta = v_beta[:, None]
        v_h = v_h[:, None] if self.trainable_bandwidth else np.zeros_like(v_beta)
        dt = np.moveaxis(diff, 2, 1)                           # (N, d, n)
        dv = np.einsum("idn,id->in", dt, v_alpha)              # D . v_alpha
        bp = beta * phi
        center = ((bp * a**2 * dv)[:, None, :] * dt
                  - (bp * a)[:, None, :] * v_alpha[:, :, None]
                  + (phi * a * v_beta)[:, None, :] * dt
                  + (bp * a * (a * r2 - 2.0) / h * v_h)[:, None, :] * dt)
        weight = phi * a * dv + phi * a * r2 / h * v_h
        width = (bp * a * (a * r2 - 2.0) / h * dv
                 + phi * a * r2 / h * v_beta
                 + bp * a**2 * r2 * (a * r2 - 3.0) * v_h)
        return self._stack(center, weight, width)


class ShallowNetworkModel(Model):
    """One hidden tanh layer with a linear output layer.

    ``u(theta, x) = sum_j w_j tanh(a_j . x + b_j) + c`` with parameter layout
    ``[a_1, ..., a_N, b_1..b_N, w_1..w_N, c]``.
    """

    def __init__(self, n_units, dim=1):
        if int(n_units) < 1:
            raise ConfigurationError("n_units must be a positive integer")
        self.n_units = int(n_units)
        self.dim = int(dim)
        self.n_params = self.n_units * (self.dim + 2) + 1

    def __repr__(self):
        return f"ShallowNetworkModel(n_units={self.n_units}, dim={self.dim})"

    def unpack(self, theta):
        n, d = self.n_units, self.dim
        inner = theta[: n * d].reshape(n, d)
        bias = theta[n * d: n * d + n]
        outer = theta[n * d + n: n * d + 2 * n]
        return inner, bias, outer, theta[-1]

    def pack(self, inner, bias, outer, offset):
        return np.concatenate([np.asarray(inner, dtype=float).ravel(),
                               np.ravel(bias), np.ravel(outer), [float(offset)]])

    def random_params(self, rng, box=None):
        n, d = self.n_units, self.dim
        return self.pack(rng.standard_normal((n, d)) * 2.0,
                         rng.standard_normal(n), rng.standard_normal(n) / np.sqrt(n),
                         0.1 * rng.standard_normal())

    def _parts(self, theta, x):
        theta = self.check_theta(theta)
        pts = as_points(x, self.dim)
        inner, bias, outer, offset = self.unpack(theta)
        s = inner @ pts.T + bias[:, None]                      # (N, n)
        t0 = np.tanh(s)
        t1 = 1.0 - t0**2
        t2 = -2.0 * t0 * t1
        t3 = -2.0 * t1**2 + 4.0 * t0**2 * t1
        return pts, inner, outer[:, None], offset, t0, t1, t2, t3

    def _stack(self, inner_rows, bias_rows, outer_rows, offset_row):
        n = self.n_units
        tail = inner_rows.shape[2:]
        return np.concatenate([inner_rows.reshape((n * self.dim,) + tail),
                               bias_rows, outer_rows, offset_row[None]], axis=0)

    def eval(self, theta, x):
        _, _, w, c, t0, _, _, _ = self._parts(theta, x)
        return np.sum(w * t0, axis=0) + c

    def grad_theta(self, theta, x):
        pts, _, w, _, t0, t1, _, _ = self._parts(theta, x)
        inner = (w * t1)[:, None, :] * pts.T[None, :, :]
        return self._stack(inner, w * t1, t0, np.ones(pts.shape[0]))

    def grad_x(self, theta, x):
        _, a, w, _, _, t1, _, _ = self._parts(theta, x)
        return np.einsum("jn,jd->dn", w * t1, a)

    def laplacian(self, theta, x):
        _, a, w, _, _, _, t2, _ = self._parts(theta, x)
        return np.sum(w * t2 * np.sum(a**2, axis=1)[:, None], axis=0)

    def grad_theta_grad_x(self, theta, x):
        pts, a, w, _, _, t1, t2, _ = self._parts(theta, x)
        d, n = self.dim, pts.shape[0]
        xt = pts.T                                              # (d, n)
        # d/d a_jm of w_j t1_j a_jk  ->  w_j (t2_j x_m a_jk + t1_j delta_mk)
        inner = (w * t2)[:, None, None, :] * xt[None, :, None, :] * a[:, None, :, None]
        inner = inner + (w * t1)[:, None, None, :] * np.eye(d)[None, :, :, None]
        bias = (w * t2)[:, None, :] * a[:, :, None]
        outer = t1[:, None, :] * a[:, :, None]
        return self._stack(inner, bias, outer, np.zeros((d, n)))

    def grad_theta_laplacian(self, theta, x):
        pts, a, w, _, _, _, t2, t3 = self._parts(theta, x)
        asq = np.sum(a**2, axis=1)[:, None]                    # (N, 1)
        inner = ((w * t3 * asq)[:, None, :] * pts.T[None, :, :]
                 + 2.0 * (w * t2)[:, None, :] * a[:, :, None])
        return self._stack(inner, w * t3 * asq, t2 * asq, np.zeros(pts.shape[0]))

    def hessian_vector(self, theta, v, x):
        pts, _, w, _, _, t1, t2, _ = self._parts(theta, x)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_params,):
            raise ConfigurationError("direction must match the parameter shape")
        va, vb, vw, _ = self.unpack(v)
        vw = vw[:, None]
        ds = va @ pts.T + vb[:, None]                          # (N, n)
        inner = (w * t2 * ds + t1 * vw)[:, None, :] * pts.T[None, :, :]
        bias = w * t2 * ds + t1 * vw
        outer = t1 * ds
        return self._stack(inner, bias, outer, np.zeros(pts.shape[0]))


@dataclass(frozen=True)
class BoundaryMask:
    """Smooth factor that vanishes on the boundary of an axis-aligned box.

    ``kind`` is ``"none"`` or ``"homogeneous-dirichlet"``.  For the latter the
    mask is ``prod_k sin(pi (x_k - lo_k) / (hi_k - lo_k))``.
    """

    kind: str
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if self.kind not in ("none", "homogeneous-dirichlet"):
            raise ConfigurationError(f"unknown boundary mask kind {self.kind!r}")
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise ConfigurationError("box bounds must satisfy lower < upper per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)

    def values(self, x):
        """Return ``m``, ``grad m`` (d, n) and ``laplacian m`` at the points."""
        pts = as_points(x, self.dim)
        n = pts.shape[0]
        if self.kind == "none":
            return np.ones(n), np.zeros((self.dim, n)), np.zeros(n)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        omega = np.pi / (hi - lo)
        t = (pts - lo) / (hi - lo)
        # sin(pi t) == sin(pi (1 - t)); the min makes both ends exactly zero
        s = np.sin(np.pi * np.minimum(t, 1.0 - t)).T          # (d, n)
        c = np.cos(np.pi * t).T
        m = np.prod(s, axis=0)
        grad = np.empty((self.dim, n))
        for k in range(self.dim):
            others = np.prod(np.delete(s, k, axis=0), axis=0) if self.dim > 1 else 1.0
            grad[k] = omega[k] * c[k] * others
        lap = -np.sum(omega**2) * m
        return m, grad, lap


class MaskedModel(Model):
    """``m(x) * u(theta, x)`` for a base model ``u`` and boundary mask ``m``."""

    def __init__(self, base, mask):
        if mask.dim != base.dim:
            raise ConfigurationError("mask and model dimensions differ")
        self.base = base
        self.mask = mask
        self.dim = base.dim
        self.n_params = base.n_params
        self.in_own_tangent_space = base.in_own_tangent_space

    def __repr__(self):
        return f"MaskedModel({self.base!r}, {self.mask.kind})"

    def __getattr__(self, name):
        # layout helpers (center_index, weight_index, ...) come from the base
        if name in ("base", "mask"):
            raise AttributeError(name)
        return getattr(self.base, name)

    def random_params(self, rng, box=None):
        if box is None:
            box = (self.mask.lower, self.mask.upper)
        return self.base.random_params(rng, box)

    def eval(self, theta, x):
        m, _, _ = self.mask.values(x)
        return m * self.base.eval(theta, x)

    def grad_theta(self, theta, x):
        m, _, _ = self.mask.values(x)
        return m * self.base.grad_theta(theta, x)

    def grad_x(self, theta, x):
        m, gm, _ = self.mask.values(x)
        return gm * self.base.eval(theta, x) + m * self.base.grad_x(theta, x)

    def laplacian(self, theta, x):
        m, gm, lm = self.mask.values(x)
        u = self.base.eval(theta, x)
        gu = self.base.grad_x(theta, x)
        return lm * u + 2.0 * np.sum(gm * gu, axis=0) + m * self.base.laplacian(theta, x)

    def grad_theta_grad_x(self, theta, x):
        m, gm, _ = self.mask.values(x)
        g = self.base.grad_theta(theta, x)
        return gm[None, :, :] * g[:, None, :] + m * self.base.grad_theta_grad_x(theta, x)

    def grad_theta_laplacian(self, theta, x):
        m, gm, lm = self.mask.values(x)
        g = self.base.grad_theta(theta, x)
        gx = self.base.grad_theta_grad_x(theta, x)
        return (lm * g + 2.0 * np.einsum("dn,pdn->pn", gm, gx)
                + m * self.base.grad_theta_laplacian(theta, x))

    def hessian_vector(self, theta, v, x):
        m, _, _ = self.mask.values(x)
        return m * self.base.hessian_vector(theta, v, x)
