"""Synthetic Bayesian logistic regression: data, MAP reference, error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import rng as _rng
from .errors import DivergenceError, InvalidArgument
from .potentials import LogisticRegressionTarget, PotentialSpec
from .report import matrix_to_csv

# purpose tags for dataset generation, disjoint from the sampler streams
_FEATURES = 101
_LABELS = 102

GD_SCHEDULE = ((1000, 1e-3), (1000, 1e-4))
GRAD_TOL = 1e-6
MAX_EXTRA_ITERS = 100_000


@dataclass(frozen=True)
class LogisticDataset:
    X: np.ndarray
    Y: np.ndarray
    theta_gen: np.ndarray
    seed: int
    covariates: str = "iid standard normal"

    def target(self, alpha):
        return LogisticRegressionTarget(self.X, self.Y, alpha)

    def to_csv(self):
        d = self.X.shape[1]
        header = [f"x{i}" for i in range(d)] + ["y"]
        return matrix_to_csv(np.column_stack([self.X, self.Y]), header)


def generate_dataset(n, d, theta_gen=None, seed=0) -> LogisticDataset:
    """Standard normal covariates and Bernoulli labels with ``P(y=1|x) = sigmoid(theta_gen . x)``.

    ``theta_gen`` defaults to all ones.
    """
    if n < 1 or d < 1:
        raise InvalidArgument("n and d must be at least 1")
    theta = np.ones(d) if theta_gen is None else np.asarray(theta_gen, dtype=float)
    if theta.shape != (d,):
        raise InvalidArgument(f"theta_gen must have length {d}")
    stream = _rng.RngStream(seed)
    rows = np.arange(n, dtype=np.uint64)
    X = stream.normal(_FEATURES, 0, rows, d)
    u = stream.uniform(_LABELS, 0, rows, 1)[:, 0]
    Y = (u <= expit(X @ theta)).astype(float)
    return LogisticDataset(X, Y, theta, int(seed))


@dataclass(frozen=True)
class MapEstimate:
    theta: np.ndarray
    grad_norm: float
    iterations: int
    extra_iterations: int


def map_estimate(pot: PotentialSpec, theta0=None, true_lipschitz=None) -> MapEstimate:
    """Minimizer of ``V`` by gradient descent.

    Runs the fixed two-phase schedule (1000 steps of 1e-3, then 1000 of
    1e-4) from ``theta0`` (default all ones), then keeps descending with
    step ``1 / true_lipschitz`` until the gradient norm drops below 1e-6.
    The tail is needed because the schedule alone stops well short of
    that tolerance. ``true_lipschitz`` defaults to ``pot.L``.
    """
    theta = np.ones(pot.dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    iters = 0

    def check(th):
        if not np.all(np.isfinite(th)) or np.linalg.norm(th) > 1e6:
            raise DivergenceError(f"gradient descent diverged at iteration {iters}")

    for count, step in GD_SCHEDULE:
        for _ in range(count):
            theta = theta - step * pot.grad(theta)
            iters += 1
        check(theta)
    L = true_lipschitz if true_lipschitz is not None else pot.L
    if L is None or not L > 0:
        raise InvalidArgument("a positive Lipschitz constant is needed for the refinement phase")
    step = 1.0 / L
    extra = 0
    g = pot.grad(theta)
    while np.linalg.norm(g) > GRAD_TOL and extra < MAX_EXTRA_ITERS:
        theta = theta - step * g
        g = pot.grad(theta)
        extra += 1
        if extra % 1000 == 0:
            check(theta)
    check(theta)
    return MapEstimate(theta, float(np.linalg.norm(g)), iters + extra, extra)


def logistic_lipschitz(target: LogisticRegressionTarget):
    """Hessian bound of the potential as implemented, with the prior's factor 2."""
    eig = np.linalg.eigvalsh(target.sample_covariance)
    return float((0.25 * target.n + 2.0 * target.alpha) * eig[-1])


def epsilon_metrics(positions, theta_star):
    """``(eps1, eps2)``: l1 error of the sample mean and mean l1 error of the particles, each over ``d``."""
    x = np.asarray(positions, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgument("ensemble must be a nonempty N x d array")
    theta_star = np.asarray(theta_star, dtype=float)
    d = x.shape[1]
    # Both metrics reduce the same deviations column by column, so when every
    # particle lies on one side of theta* the two agree bit for bit.
    dev = x - theta_star
    eps1 = float(np.sum(np.abs(dev.mean(axis=0))) / d)
    eps2 = float(np.sum(np.abs(dev).mean(axis=0)) / d)
    return eps1, eps2
