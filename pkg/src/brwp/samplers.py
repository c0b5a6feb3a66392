"""Particle updates: ULA, MALA and the backward regularized Wasserstein proximal (BRWP) scheme.

The BRWP step moves every particle along

    x <- x - eta * grad V(x) - eta * beta * score(x)

where ``score`` is the gradient of the log-density of the regularized
Wasserstein proximal of the empirical measure. That density is a kernel
mixture over the particles, so the score is a weighted average with weights

    log w_ij = -|x_i - x_j|^2 / (4 beta T) - log Z_j.

A ``V(x_i)`` term common to row ``i`` cancels in the ratio and is omitted.
``Z_j`` is a Gaussian expectation of ``exp(-V / 2 beta)`` around ``x_j``,
estimated by Monte Carlo or, for quadratic targets, in closed form.

All randomness comes from :class:`brwp.rng.RngStream`, addressed by
``(seed, purpose, iteration, particle id)``. Row sums use a fixed block size
and a fixed reduction order, so the thread count never changes a result.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .errors import DegenerateNormalizerError, InvalidArgument, NumericOverflowError, ObserverError
from .gaussian_analytic import ProximalParams, exact_log_normalizer
from .potentials import PotentialSpec
from .report import ExperimentReport

METHODS = ("ula", "mala", "brwp")
ROW_BLOCK = 128


@dataclass
class ParticleEnsemble:
    """``N`` particles in ``d`` dimensions at iteration ``k``.

    ``ids`` label particles independently of their row, so random draws
    follow a particle under any reordering of the rows.
    """

    positions: np.ndarray
    k: int = 0
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0:
            raise InvalidArgument(f"positions must be a nonempty N x d array, got shape {x.shape}")
        self.positions = x
        if self.ids is None:
            self.ids = np.arange(x.shape[0], dtype=np.uint64)
        else:
            ids = np.asarray(self.ids, dtype=np.uint64)
            if ids.shape != (x.shape[0],) or np.unique(ids).size != ids.size:
                raise InvalidArgument("ids must be unique, one per particle")
            self.ids = ids
        if self.k < 0:
            raise InvalidArgument("iteration counter must be nonnegative")

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def advanced(self, positions):
        return ParticleEnsemble(positions, self.k + 1, self.ids)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return ParticleEnsemble(self.positions[perm], self.k, self.ids[perm])

    @classmethod
    def gaussian(cls, n, mean, cov, seed):
        """Draw ``n`` particles from ``N(mean, cov)`` on the initialization stream."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = mean.size
        if cov.shape != (d, d):
            raise InvalidArgument(f"covariance shape {cov.shape} does not match mean of length {d}")
        w, U = np.linalg.eigh(0.5 * (cov + cov.T))
        if w[0] < 0:
            raise InvalidArgument("initial covariance is not positive semidefinite")
        root = U * np.sqrt(w)
        ids = np.arange(n, dtype=np.uint64)
        z = _rng.RngStream(seed).normal(_rng.INIT, 0, ids, d)
        return cls(mean + z @ root.T, 0, ids)


@dataclass(frozen=True)
class SamplerConfig:
    """Step and kernel parameters.

    Parameters
    ----------
    eta : float
        Step size.
    beta : float
        Temperature of the Gibbs target ``exp(-V / beta)``.
    T : float, optional
        Proximal horizon; required by BRWP.
    P : int
        Monte Carlo samples per normalizer.
    subsample : int, optional
        Number of kernel centres drawn per iteration; all particles when absent.
    seed : int
        Key of every random stream.
    normalizer : {"mc", "exact"}
        How ``Z_j`` is computed. ``"exact"`` needs a quadratic target.
    threads : int
        Worker threads for the kernel sums. Does not affect results.
    """

    eta: float
    beta: float = 1.0
    T: Optional[float] = None
    P: int = 10
    subsample: Optional[int] = None
    seed: int = 0
    normalizer: str = "mc"
    threads: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise InvalidArgument(f"eta must be positive, got {self.eta}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidArgument(f"beta must be positive, got {self.beta}")
        if self.T is not None and not (math.isfinite(self.T) and self.T > 0):
            raise InvalidArgument(f"T must be positive, got {self.T}")
        if int(self.P) != self.P or self.P < 1:
            raise InvalidArgument(f"P must be a positive integer, got {self.P}")
        if self.subsample is not None and (int(self.subsample) != self.subsample or self.subsample < 1):
            raise InvalidArgument(f"subsample must be a positive integer, got {self.subsample}")
        if self.normalizer not in ("mc", "exact"):
            raise InvalidArgument(f"normalizer must be 'mc' or 'exact', got {self.normalizer!r}")
        if int(self.threads) != self.threads or self.threads < 1:
            raise InvalidArgument("threads must be a positive integer")

    def stream(self):
        return _rng.RngStream(self.seed)

    def require_T(self):
        if self.T is None:
            raise InvalidArgument("BRWP needs the horizon T")
        return self.T


def _check_dims(ens, pot):
    if ens.dim != pot.dim:
        raise InvalidArgument(f"ensemble dimension {ens.dim} does not match potential dimension {pot.dim}")


def _check_finite(x):
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericOverflowError(f"particle {i} has non-finite coordinates {x[i]}", i)
    return x


def step_size_guard(pot: PotentialSpec, cfg: SamplerConfig):
    """Warn when ``eta * L > 2`` on a quadratic target, where explicit steps are unstable."""
    if pot.quadratic is not None and pot.L is not None and cfg.eta * pot.L > 2.0:
        warnings.warn(
            f"eta * L = {cfg.eta * pot.L:.3g} exceeds 2; gradient steps are unstable on this target",
            RuntimeWarning,
            stacklevel=3,
        )


# ------------------------------------------------------------------ Langevin


def ula_step(ens: ParticleEnsemble, pot: PotentialSpec, cfg: SamplerConfig, rng: _rng.RngStream) -> ParticleEnsemble:
    _check_dims(ens, pot)
    x = ens.positions
    z = rng.normal(_rng.NOISE, ens.k, ens.ids, ens.dim)
    new = x - cfg.eta * pot.grad(x) + math.sqrt(2.0 * cfg.beta * cfg.eta) * z
    return ens.advanced(_check_finite(new))


def mala_log_acceptance(x, y, pot: PotentialSpec, eta, beta):
    """Log of the Metropolis-Hastings ratio for a Langevin proposal ``x -> y``, capped at 0.

    Energies are scaled by ``1 / beta`` and the proposal quadratic forms by
    ``1 / (4 beta eta)``. Works row-wise on ``(N, d)`` arrays.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    forward = y - x + eta * pot.grad(x)
    backward = x - y + eta * pot.grad(y)
    log_ratio = -(pot.value(y) - pot.value(x)) / beta - (
        np.sum(backward**2, axis=-1) - np.sum(forward**2, axis=-1)
    ) / (4.0 * beta * eta)
    return np.minimum(0.0, log_ratio)


def mala_step(ens: ParticleEnsemble, pot: PotentialSpec, cfg: SamplerConfig, rng: _rng.RngStream) -> ParticleEnsemble:
    _check_dims(ens, pot)
    x = ens.positions
    z = rng.normal(_rng.NOISE, ens.k, ens.ids, ens.dim)
    y = x - cfg.eta * pot.grad(x) + math.sqrt(2.0 * cfg.beta * cfg.eta) * z
    with np.errstate(over="ignore", invalid="ignore"):
        log_alpha = mala_log_acceptance(x, y, pot, cfg.eta, cfg.beta)
    u = rng.uniform(_rng.ACCEPT, ens.k, ens.ids, 1)[:, 0]
    # a NaN ratio (overflowing proposal) is treated as a rejection
    accept = np.log(u) <= np.nan_to_num(log_alpha, nan=-np.inf)
    new = np.where(accept[:, None], y, x)
    return ens.advanced(_check_finite(new))


# ---------------------------------------------------------------------- BRWP


def subsample_indices(ens: ParticleEnsemble, cfg: SamplerConfig, rng: _rng.RngStream):
    """Rows used as kernel centres at this iteration, sorted by particle id.

    Without replacement: every particle gets a uniform key from its own
    stream and the ``M`` smallest keys win.
    """
    n = ens.n
    m = cfg.subsample
    if m is None or m >= n:
        return np.argsort(ens.ids, kind="stable")
    keys = rng.uniform(_rng.SUBSAMPLE, ens.k, ens.ids, 1)[:, 0]
    chosen = np.argsort(keys, kind="stable")[:m]
    return chosen[np.argsort(ens.ids[chosen], kind="stable")]


def brwp_normalizers(
    ens: ParticleEnsemble,
    pot: PotentialSpec,
    cfg: SamplerConfig,
    rng: _rng.RngStream,
    columns=None,
):
    """Log kernel normalizers ``log Z_j`` for the centre rows ``columns``.

    Monte Carlo mode averages ``exp(-V(z) / 2 beta)`` over ``P`` draws
    ``z ~ N(x_j, 2 T beta I)`` in log space. Exact mode evaluates the closed
    form for quadratic targets, up to a constant shared by every ``j``.
    """
    _check_dims(ens, pot)
    T = cfg.require_T()
    if columns is None:
        columns = np.arange(ens.n)
    centres = ens.positions[columns]
    if cfg.normalizer == "exact":
        if pot.quadratic is None:
            raise InvalidArgument("exact normalizers need a quadratic potential")
        params = ProximalParams(pot.quadratic, T, cfg.beta)
        return exact_log_normalizer(centres, params)
    m, d, P = centres.shape[0], ens.dim, cfg.P
    zeta = rng.normal(_rng.NORMALIZER, ens.k, ens.ids[columns], P * d).reshape(m, P, d)
    z = centres[:, None, :] + math.sqrt(2.0 * T * cfg.beta) * zeta
    with np.errstate(over="ignore"):
        log_terms = -pot.value(z) / (2.0 * cfg.beta)
    log_terms = np.where(np.isnan(log_terms), -np.inf, log_terms)
    with np.errstate(divide="ignore"):
        log_z = logsumexp(log_terms, axis=1) - math.log(P)
    bad = ~np.isfinite(log_z)
    if np.any(bad):
        j = int(columns[np.flatnonzero(bad)[0]])
        raise DegenerateNormalizerError(f"every Monte Carlo sample underflowed for the normalizer of particle {j}", j)
    return log_z


def _kernel_means_block(xi, slope, bias, weighted, logits):
    # Block shapes are fixed by ROW_BLOCK and never by the thread count, so
    # each output row goes through the same BLAS call in every run.
    n = xi.shape[0]
    logits = logits[:n]
    np.matmul(xi, slope.T, out=logits)
    logits += bias[None, :]
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    sums = logits @ weighted
    return sums[:, 1:] / sums[:, :1]


def kernel_weighted_means(x, centres, log_z, beta, T, threads=1):
    """Row ``i``: average of ``centres`` under weights ``exp(-|x_i - c_j|^2/(4 beta T) - log_z_j)``.

    Expanding the square, ``-|x_i|^2`` is constant along a row and cancels,
    which leaves ``x_i . c_j / (2 beta T) - |c_j|^2 / (4 beta T) - log_z_j``.
    Coordinates are first centred on the mean of ``centres`` so the
    expansion does not lose precision far from the origin.
    """
    x = np.asarray(x, dtype=float)
    centres = np.asarray(centres, dtype=float)
    log_z = np.asarray(log_z, dtype=float)
    if centres.shape[0] == 0:
        raise InvalidArgument("no kernel centres; subsample size must be at least 1")
    if not np.all(np.isfinite(log_z)):
        raise InvalidArgument("normalizers must be finite in log space")
    shift = centres.mean(axis=0)
    xs = x - shift
    cs = centres - shift
    slope = cs / (2.0 * beta * T)
    bias = -np.sum(cs * cs, axis=1) / (4.0 * beta * T) - log_z
    m = centres.shape[0]
    # a leading column of ones makes the row totals come out of the same product
    weighted = np.column_stack([np.ones(m), cs])
    starts = list(range(0, x.shape[0], ROW_BLOCK))

    def run(chunk):
        logits = np.empty((ROW_BLOCK, m))
        return [_kernel_means_block(xs[s : s + ROW_BLOCK], slope, bias, weighted, logits) for s in chunk]

    if threads > 1 and len(starts) > 1:
        chunks = [starts[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
        parts = [None] * len(starts)
        for i, res in enumerate(results):
            parts[i::threads] = res
    else:
        parts = run(starts)
    return np.concatenate(parts, axis=0) + shift


def brwp_score(
    ens: ParticleEnsemble,
    pot: PotentialSpec,
    cfg: SamplerConfig,
    log_normalizers,
    columns=None,
):
    """Kernel estimate of ``grad log rho_T`` at every particle, shape ``(N, d)``.

    ``columns`` selects the centre rows matching ``log_normalizers``; all rows
    by default.
    """
    _check_dims(ens, pot)
    T = cfg.require_T()
    x = ens.positions
    centres = x if columns is None else x[columns]
    log_normalizers = np.asarray(log_normalizers, dtype=float)
    if log_normalizers.shape != (centres.shape[0],):
        raise InvalidArgument(f"expected {centres.shape[0]} normalizers, got shape {log_normalizers.shape}")
    xbar = kernel_weighted_means(x, centres, log_normalizers, cfg.beta, T, cfg.threads)
    return -(pot.grad(x) + (x - xbar) / T) / (2.0 * cfg.beta)


def brwp_step(ens: ParticleEnsemble, pot: PotentialSpec, cfg: SamplerConfig, rng: _rng.RngStream) -> ParticleEnsemble:
    _check_dims(ens, pot)
    columns = subsample_indices(ens, cfg, rng)
    log_z = brwp_normalizers(ens, pot, cfg, rng, columns)
    score = brwp_score(ens, pot, cfg, log_z, columns)
    x = ens.positions
    new = x - cfg.eta * pot.grad(x) - cfg.eta * cfg.beta * score
    return ens.advanced(_check_finite(new))


STEPS: dict[str, Callable] = {"ula": ula_step, "mala": mala_step, "brwp": brwp_step}


# --------------------------------------------------------------------- chains


@dataclass
class Observer:
    """Callback run every ``stride`` iterations (and at the first and last).

    ``fn(ens, previous)`` returns a dict of metrics merged into that
    iteration's row, or ``None``. ``previous`` holds the positions one
    iteration earlier, or ``None`` at the start.
    """

    name: str
    fn: Callable
    stride: int = 1

    def due(self, k, final):
        return k % self.stride == 0 or final


@dataclass
class SnapshotObserver:
    name: str = "snapshot"
    stride: int = 10
    snapshots: list = field(default_factory=list)

    def due(self, k, final):
        return k % self.stride == 0 or final

    def fn(self, ens, previous):
        self.snapshots.append((ens.k, ens.positions.copy()))
        return None


def run_chain(
    ens: ParticleEnsemble,
    pot: PotentialSpec,
    cfg: SamplerConfig,
    method: str,
    n_iters: int,
    observers: Sequence = (),
    divergence_threshold: Optional[float] = None,
) -> ExperimentReport:
    """Apply ``method`` ``n_iters`` times and collect observer output.

    A run whose largest coordinate norm passes ``divergence_threshold`` stops
    early and is marked diverged in the summary instead of raising.
    """
    if method not in STEPS:
        raise InvalidArgument(f"unknown method {method!r}; expected one of {METHODS}")
    if n_iters < 0:
        raise InvalidArgument("n_iters must be nonnegative")
    _check_dims(ens, pot)
    if method == "brwp":
        cfg.require_T()
    step_size_guard(pot, cfg)
    step = STEPS[method]
    stream = cfg.stream()
    report = ExperimentReport(config={"method": method, "n_iters": n_iters})
    snapshot_obs = [o for o in observers if isinstance(o, SnapshotObserver)]
    start = time.perf_counter()

    def observe(current, previous, final):
        row = {"iteration": current.k}
        for obs in observers:
            if not obs.due(current.k, final):
                continue
            try:
                out = obs.fn(current, previous)
            except Exception as exc:  # wrap with context, keep the cause
                raise ObserverError(
                    f"observer {obs.name!r} failed at iteration {current.k}: {exc}", current.k, obs.name
                ) from exc
            if out:
                row.update(out)
        if len(row) > 1:
            report.rows.append(row)

    diverged_at = None
    observe(ens, None, n_iters == 0)
    for it in range(n_iters):
        previous = ens.positions
        ens = step(ens, pot, cfg, stream)
        norm = float(np.max(np.linalg.norm(ens.positions, axis=1)))
        final = it == n_iters - 1
        if divergence_threshold is not None and norm > divergence_threshold:
            diverged_at = ens.k
            final = True
        observe(ens, previous, final)
        if diverged_at is not None:
            break

    for obs in snapshot_obs:
        report.snapshots.extend(obs.snapshots)
    report.summary = {
        "iterations_completed": ens.k,
        "diverged": diverged_at is not None,
        "diverged_at": diverged_at,
        "max_norm": float(np.max(np.linalg.norm(ens.positions, axis=1))),
    }
    report.wall_clock = time.perf_counter() - start
    report.final = ens
    return report
