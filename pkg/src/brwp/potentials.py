"""Target potentials ``V`` for Gibbs densities ``exp(-V / beta)``.

All ``value``/``grad`` callables are vectorized over leading axes: an input of
shape ``(..., d)`` gives values of shape ``(...)`` and gradients of shape
``(..., d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logsumexp

from .errors import InvalidArgument

BIMODAL_RADIUS_CLAMP = 1e-8


@dataclass(frozen=True)
class PotentialSpec:
    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    m: Optional[float] = None
    L: Optional[float] = None
    params: dict = field(default_factory=dict)
    quadratic: Optional["QuadraticTarget"] = None

    def shifted(self, c):
        """Same potential plus a constant ``c``."""
        value = self.value
        return PotentialSpec(
            name=self.name,
            dim=self.dim,
            value=lambda x: value(x) + c,
            grad=self.grad,
            m=self.m,
            L=self.L,
            params=dict(self.params),
            quadratic=self.quadratic,
        )


class QuadraticTarget:
    """Zero-mean Gaussian target ``V(x) = x^T Sigma^{-1} x / 2``.

    ``xi`` holds the covariance eigenvalues sorted in descending order and
    the columns of ``rotation`` the matching eigenvectors. Every matrix
    function is formed from this decomposition.
    """

    def __init__(self, xi, rotation=None):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if xi.ndim != 1 or xi.size == 0:
            raise InvalidArgument("eigenvalues must be a nonempty vector")
        if not np.all(np.isfinite(xi)) or np.any(xi <= 0):
            raise InvalidArgument(f"covariance eigenvalues must be positive, got {xi}")
        d = xi.size
        if rotation is None:
            rotation = np.eye(d)
        rotation = np.asarray(rotation, dtype=float)
        if rotation.shape != (d, d):
            raise InvalidArgument(f"rotation must be {d}x{d}, got {rotation.shape}")
        if np.max(np.abs(rotation.T @ rotation - np.eye(d))) > 1e-10:
            raise InvalidArgument("rotation is not orthogonal within 1e-10")
        order = np.argsort(-xi, kind="stable")
        self.xi = xi[order]
        self.rotation = rotation[:, order]
        self.dim = d

    def matrix_function(self, f):
        """``R diag(f(xi)) R^T``."""
        vals = f(self.xi)
        return (self.rotation * vals) @ self.rotation.T

    @property
    def covariance(self):
        return self.matrix_function(lambda s: s)

    @property
    def precision(self):
        return self.matrix_function(lambda s: 1.0 / s)

    @property
    def is_diagonal(self):
        return np.allclose(self.rotation, np.diag(np.diag(self.rotation)), atol=0, rtol=0)


def quadratic_potential(eigenvalues, rotation=None):
    """Gaussian potential with covariance ``R diag(eigenvalues) R^T``."""
    target = QuadraticTarget(eigenvalues, rotation)
    precision = target.precision

    def value(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, precision, x)

    def grad(x):
        return np.asarray(x, dtype=float) @ precision  # precision is symmetric

    return PotentialSpec(
        name="quadratic",
        dim=target.dim,
        value=value,
        grad=grad,
        m=1.0 / target.xi[0],
        L=1.0 / target.xi[-1],
        params={"eigenvalues": target.xi.tolist()},
        quadratic=target,
    )


def gaussian_mixture_potential(a):
    """Equal mixture of ``N(a, I)`` and ``N(-a, I)``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("mixture offset must be finite")

    def value(x):
        x = np.asarray(x, dtype=float)
        s = x @ a
        # -log(1 + e^{-2s}) without overflow
        return 0.5 * np.sum((x - a) ** 2, axis=-1) - np.logaddexp(0.0, -2.0 * s)

    def grad(x):
        x = np.asarray(x, dtype=float)
        s = x @ a
        # (1 + e^{2s})^{-1} == expit(-2s)
        return x - a + 2.0 * expit(-2.0 * s)[..., None] * a

    norm2 = float(a @ a)
    return PotentialSpec(
        name="gaussian_mixture",
        dim=a.size,
        value=value,
        grad=grad,
        m=1.0 - norm2 if norm2 < 1.0 else None,
        L=1.0,
        params={"a": a.tolist()},
    )


def bimodal_potential():
    """Two-dimensional ring-times-double-well density centred on radius 3.

    ``V(x) = 2(|x| - 3)^2 - log[exp(-2(x1-3)^2) + exp(-2(x1+3)^2)]``, so that
    ``exp(-V)`` is the ring density times the two-well factor and the
    gradient carries the factor 4 on both terms.
    """

    def _mode_logits(x1):
        return np.stack([-2.0 * (x1 - 3.0) ** 2, -2.0 * (x1 + 3.0) ** 2], axis=-1)

    def value(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        return 2.0 * (r - 3.0) ** 2 - logsumexp(_mode_logits(x[..., 0]), axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        radial = 4.0 * ((r - 3.0) / np.maximum(r, BIMODAL_RADIUS_CLAMP))[..., None] * x
        x1 = x[..., 0]
        logits = _mode_logits(x1)
        w = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        g1 = 4.0 * (x1 - 3.0) * w[..., 0] + 4.0 * (x1 + 3.0) * w[..., 1]
        out = radial.copy()
        out[..., 0] += g1
        return out

    return PotentialSpec(name="bimodal", dim=2, value=value, grad=grad)


class LogisticRegressionTarget:
    """Data and prior strength for a Bayesian logistic regression posterior."""

    def __init__(self, X, Y, alpha):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidArgument("features must be a nonempty n x d matrix")
        if Y.ndim != 1 or Y.shape[0] != X.shape[0]:
            raise InvalidArgument(f"labels have shape {Y.shape}, expected ({X.shape[0]},)")
        if not np.all((Y == 0) | (Y == 1)):
            raise InvalidArgument("labels must be 0 or 1")
        if not alpha > 0:
            raise InvalidArgument("alpha must be positive")
        self.X = X
        self.Y = Y
        self.alpha = float(alpha)
        self.sample_covariance = X.T @ X / X.shape[0]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def hessian_bounds(self):
        """``(m, L)`` as used to set the initial spread of the samplers."""
        eig = np.linalg.eigvalsh(self.sample_covariance)
        m = self.alpha * eig[0]
        L = (0.25 * self.n + self.alpha) * eig[-1]
        return float(m), float(L)


_PRODUCT_CHUNK = 512


def _sum_softplus(z, z_sum=None):
    """``sum(log(1 + e^z))`` over the first axis.

    Each term is ``max(z, 0) + log1p(e^{-|z|})``. The second parts lie in
    ``(0, log 2]``, so they are summed as the log of a product of factors
    in ``(1, 2]`` taken over chunks of at most 512 entries (no overflow).
    One log per chunk instead of one per entry is the whole point: the
    elementwise log dominates the cost of the Monte Carlo normalizers.
    Reducing over the leading axis keeps every pass contiguous.
    ``z_sum`` may supply ``z.sum(0)`` when the caller has it cheaper.
    """
    e = np.abs(z)
    if z_sum is None:
        z_sum = np.sum(z, axis=0)
    # z + |z| is exactly 2 max(z, 0)
    total = 0.5 * (z_sum + np.sum(e, axis=0))
    np.negative(e, out=e)
    np.exp(e, out=e)
    e += 1.0
    for s in range(0, z.shape[0], _PRODUCT_CHUNK):
        total += np.log(np.prod(e[s : s + _PRODUCT_CHUNK], axis=0))
    return total


def logistic_regression_potential(target: LogisticRegressionTarget):
    X, Y, alpha, cov = target.X, target.Y, target.alpha, target.sample_covariance
    xty = X.T @ Y
    x_total = X.sum(axis=0)

    def value(theta):
        theta = np.asarray(theta, dtype=float)
        # flat 2-D products are much faster than stacked matmul over batch axes
        flat = theta.reshape(-1, theta.shape[-1])
        prior = alpha * np.sum((flat @ cov) * flat, axis=-1)
        out = -flat @ xty + _sum_softplus(X @ flat.T, flat @ x_total) + prior
        return out.reshape(theta.shape[:-1])

    def grad(theta):
        theta = np.asarray(theta, dtype=float)
        p = expit(theta @ X.T)
        # gradient of alpha * theta^T cov theta is 2 alpha cov theta
        return -xty + p @ X + 2.0 * alpha * (theta @ cov)

    m, L = target.hessian_bounds()
    return PotentialSpec(
        name="logistic_regression",
        dim=target.dim,
        value=value,
        grad=grad,
        m=m,
        L=L,
        params={"alpha": alpha, "n": target.n},
    )
