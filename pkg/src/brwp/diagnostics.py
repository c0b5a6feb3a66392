"""Ensemble statistics and their distance to analytic Gaussian oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .gaussian_analytic import GaussianState, tv_bound
from .report import ExperimentReport
from .samplers import Observer, ParticleEnsemble


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    covariance: np.ndarray
    displacement: Optional[float] = None


def _positions(ens):
    x = ens.positions if isinstance(ens, ParticleEnsemble) else np.asarray(ens, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgument("need a nonempty N x d set of positions")
    return x


def ensemble_stats(ens, previous=None) -> EnsembleStats:
    """Mean, covariance and mean displacement of an ensemble.

    The covariance is normalized by ``1/N``, the covariance of the empirical
    measure itself. ``displacement`` is the particle-averaged Euclidean
    distance to ``previous`` (same row order), when given.
    """
    x = _positions(ens)
    n = x.shape[0]
    if n < 2:
        raise InvalidArgument("covariance needs at least two particles")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / n
    cov = 0.5 * (cov + cov.T)
    disp = None
    if previous is not None:
        prev = _positions(previous)
        if prev.shape != x.shape:
            raise InvalidArgument(f"previous positions have shape {prev.shape}, expected {x.shape}")
        disp = float(np.mean(np.linalg.norm(x - prev, axis=1)))
    return EnsembleStats(mean, cov, disp)


def oracle_divergence(stats: EnsembleStats, oracle: GaussianState):
    """``(|mean error|_2, |cov error|_F, tv)`` against an analytic Gaussian.

    ``tv`` is ``tv_bound(stats.covariance, oracle.cov)``; it is NaN when the
    empirical covariance is singular.
    """
    if stats.mean.shape != oracle.mean.shape:
        raise InvalidArgument(f"dimension mismatch: {stats.mean.shape} vs {oracle.mean.shape}")
    mean_err = float(np.linalg.norm(stats.mean - oracle.mean))
    cov_err = float(np.linalg.norm(stats.covariance - oracle.cov, ord="fro"))
    if np.linalg.eigvalsh(stats.covariance)[0] > 0:
        tv = tv_bound(stats.covariance, oracle.cov)
    else:
        tv = float("nan")
    return mean_err, cov_err, tv


def stats_row(stats: EnsembleStats):
    """Flatten stats into CSV-ready columns ``mean_i``, ``cov_i_j`` (upper triangle), ``displacement``."""
    row = {}
    d = stats.mean.size
    for i in range(d):
        row[f"mean_{i}"] = float(stats.mean[i])
    for i in range(d):
        for j in range(i, d):
            row[f"cov_{i}_{j}"] = float(stats.covariance[i, j])
    if stats.displacement is not None:
        row["displacement"] = stats.displacement
    return row


def stats_observer(stride=1, oracle=None):
    """Observer recording ensemble statistics.

    ``oracle(k)`` may return the analytic law at iteration ``k`` (or ``None``),
    in which case the distances of :func:`oracle_divergence` are added.
    """

    def fn(ens, previous):
        if ens.n < 2:
            return {f"mean_{i}": float(v) for i, v in enumerate(ens.positions[0])}
        stats = ensemble_stats(ens, previous)
        row = stats_row(stats)
        row["max_norm"] = float(np.max(np.linalg.norm(ens.positions, axis=1)))
        law = None if oracle is None else oracle(ens.k)
        if law is not None:
            mean_err, cov_err, tv = oracle_divergence(stats, law)
            row.update(oracle_mean_error=mean_err, oracle_cov_error=cov_err, oracle_tv=tv)
        return row

    return Observer("stats", fn, stride)


def stationarity_score(report: ExperimentReport, window):
    """Average per-iteration particle displacement over ``lo < k <= hi``.

    Uses the ``displacement`` column, which holds the mean distance moved in
    the single step ending at each recorded iteration.
    """
    lo, hi = window
    if not lo < hi:
        raise InvalidArgument("window must satisfy lo < hi")
    vals = [row["displacement"] for row in report.rows if lo < row["iteration"] <= hi and "displacement" in row]
    if not vals:
        raise InvalidArgument(f"no displacement records in iterations ({lo}, {hi}]")
    return float(np.mean(vals))
