"""Closed-form Gaussian evolution under ULA and the BRWP scheme.

For a quadratic potential and Gaussian initialization every iterate stays
Gaussian, so means and covariances evolve by explicit matrix recurrences.
This module evaluates those recurrences, their fixed points, the total
variation and mixing-time bounds built on them, and the continuous-time
limit for covariances that do not commute with the target. The particle
tests use it as their oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, PreconditionError, ReduceStepError, StepTooLargeError
from .potentials import QuadraticTarget


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _spd_inverse(M):
    w, U = np.linalg.eigh(M)
    return (U / w) @ U.T


def _sym_sqrt_and_inv_sqrt(M):
    w, U = np.linalg.eigh(M)
    s = np.sqrt(w)
    return (U * s) @ U.T, (U / s) @ U.T


def _check_spd(M, what):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument(f"{what} must be square, got shape {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(M))):
        raise InvalidArgument(f"{what} is not symmetric")
    if np.linalg.eigvalsh(symmetrize(M))[0] <= 0:
        raise InvalidArgument(f"{what} is not positive definite")
    return symmetrize(M)


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgument(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _check_spd(cov, "covariance"))

    @property
    def dim(self):
        return self.mean.size


@dataclass
class ProximalParams:
    """Quadratic target together with the proximal horizon and temperature."""

    target: QuadraticTarget
    T: float
    beta: float = 1.0
    K: np.ndarray = field(init=False, repr=False)
    K_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidArgument("T must be positive")
        if not self.beta > 0:
            raise InvalidArgument("beta must be positive")
        T = self.T
        self.K = self.target.matrix_function(lambda s: 1.0 + T / s)
        self.K_inv = self.target.matrix_function(lambda s: 1.0 / (1.0 + T / s))

    @classmethod
    def from_eigenvalues(cls, xi, T, beta=1.0, rotation=None):
        return cls(QuadraticTarget(xi, rotation), T, beta)

    @property
    def dim(self):
        return self.target.dim

    @property
    def sigma(self):
        return self.target.covariance

    @property
    def sigma_inv(self):
        return self.target.precision

    @property
    def prox_stationary(self):
        """Proximal covariance of the target law, ``beta * Sigma``."""
        return self.beta * self.sigma

    def require_small_horizon(self):
        if not self.T < self.target.xi[-1]:
            raise PreconditionError(
                f"horizon T={self.T} must be below the smallest covariance eigenvalue {self.target.xi[-1]}"
            )


# ---------------------------------------------------------------- one dimension


def rwp_gaussian_1d(mu, var, a, T, beta=1.0):
    """Mean and variance of the regularized proximal of ``N(mu, var)``."""
    if a < 0 or not T > 0 or not var > 0:
        raise InvalidArgument("need a >= 0, T > 0, var > 0")
    s = 1.0 + a * T
    return mu / s, var / s**2 + 2.0 * beta * T / s


def brwp_recurrence_1d(mu, var, a, T, beta, eta):
    """One BRWP step for ``V = a x^2 / 2`` acting on ``N(mu, var)``."""
    if not eta > 0:
        raise InvalidArgument("eta must be positive")
    if a < 0 or not T > 0 or not var > 0:
        raise InvalidArgument("need a >= 0, T > 0, var > 0")
    s = 1.0 + a * T
    den = var + 2.0 * beta * T * s
    mean_factor = 1.0 - a * eta + eta * beta * a * T * s / den
    var_factor = 1.0 - a * eta + eta * beta * s**2 / den
    return mean_factor * mu, var_factor**2 * var


def brwp_stationary_variance_1d(a, T, beta=1.0):
    """Fixed point of the BRWP variance recurrence; 0 when ``aT >= 1``."""
    if a * T >= 1.0:
        return 0.0
    return beta / a * (1.0 - (a * T) ** 2)


def ula_recurrence_1d(mu0, var0, a, beta, eta, k):
    """Closed-form ULA mean and variance after ``k`` steps."""
    if not a * eta < 1.0:
        raise InvalidArgument("closed form requires a * eta < 1")
    if k < 0:
        raise InvalidArgument("k must be nonnegative")
    r = 1.0 - a * eta
    geometric = k if r * r == 1.0 else (1.0 - r ** (2 * k)) / (1.0 - r * r)
    return r**k * mu0, r ** (2 * k) * var0 + 2.0 * beta * eta * geometric


def ula_stationary_variance_1d(a, beta, eta):
    return 2.0 * beta / ((2.0 - a * eta) * a)


# ------------------------------------------------------------ many dimensions


def rwp_gaussian_nd(state: GaussianState, params: ProximalParams) -> GaussianState:
    Ki = params.K_inv
    cov = Ki @ state.cov @ Ki + 2.0 * params.beta * params.T * Ki
    return GaussianState(Ki @ state.mean, symmetrize(cov))


def brwp_covariance_step_nd(state: GaussianState, params: ProximalParams, eta) -> GaussianState:
    """Exact BRWP update of a Gaussian under a quadratic target."""
    if eta < 0:
        raise InvalidArgument("eta must be nonnegative")
    if eta == 0:
        return state
    prox = rwp_gaussian_nd(state, params)
    prox_prec = _spd_inverse(prox.cov)
    M = np.eye(params.dim) - eta * params.sigma_inv + eta * params.beta * prox_prec
    mean = M @ state.mean - eta * params.beta * prox_prec @ prox.mean
    cov = symmetrize(M @ state.cov @ M.T)
    w = np.linalg.eigvalsh(cov)
    if w[0] <= 1e-14 * max(w[-1], 1.0):
        raise StepTooLargeError(f"covariance lost positive definiteness (eigenvalue {w[0]:.3e})", w[0])
    return GaussianState(mean, cov)


def ula_covariance_step_nd(state: GaussianState, params: ProximalParams, eta) -> GaussianState:
    A = np.eye(params.dim) - eta * params.sigma_inv
    cov = A @ state.cov @ A.T + 2.0 * params.beta * eta * np.eye(params.dim)
    return GaussianState(A @ state.mean, symmetrize(cov))


def stationary_covariance_nd(params: ProximalParams):
    """``beta (I - T Sigma^{-1}) Sigma (I + T Sigma^{-1})``."""
    params.require_small_horizon()
    T, beta = params.T, params.beta
    return params.target.matrix_function(lambda s: beta * s * (1.0 - (T / s) ** 2))


def tv_bound(cov1, cov2):
    """Upper bound on TV between same-mean Gaussians, in ``[0, 3/2]``.

    Eigenvalues of ``cov1^{-1} cov2 - I`` are read off the similar symmetric
    matrix ``cov1^{-1/2} cov2 cov1^{-1/2} - I``.
    """
    cov1 = _check_spd(np.atleast_2d(cov1), "cov1")
    cov2 = _check_spd(np.atleast_2d(cov2), "cov2")
    _, inv_sqrt = _sym_sqrt_and_inv_sqrt(cov1)
    lam = np.linalg.eigvalsh(symmetrize(inv_sqrt @ cov2 @ inv_sqrt)) - 1.0
    return 1.5 * min(1.0, float(np.sqrt(np.sum(lam**2))))


def kl_gaussians(cov1, cov2):
    """KL divergence between ``N(0, cov1)`` and ``N(0, cov2)``."""
    cov1 = _check_spd(np.atleast_2d(cov1), "cov1")
    cov2 = _check_spd(np.atleast_2d(cov2), "cov2")
    d = cov1.shape[0]
    _, logdet1 = np.linalg.slogdet(cov1)
    _, logdet2 = np.linalg.slogdet(cov2)
    trace = np.trace(np.linalg.solve(cov2, cov1))
    return max(0.0, 0.5 * (logdet2 - logdet1 - d + trace))


def exact_log_normalizer(y, params: ProximalParams):
    """Log of the kernel normalizer at ``y``, up to a ``y``-independent constant.

    Vectorized over leading axes of ``y``.
    """
    y = np.asarray(y, dtype=float)
    Q = (params.K_inv - np.eye(params.dim)) / (2.0 * params.T)
    return np.einsum("...i,ij,...j->...", y, Q, y) / (2.0 * params.beta)


# ----------------------------------------------------- eigenvalue recurrences


def delta_cap(xi, T):
    """Supremum of ``omega`` over its domain."""
    return 0.5 * (np.sqrt((xi + T) / (2.0 * T)) + 1.0)


def _ansatz_offset(xi, T, beta):
    return np.sqrt(beta * xi * (1.0 - T / xi))


def omega(gamma, xi, T, beta=1.0):
    """Contraction multiplier of the ansatz recurrence ``gamma -> gamma (1 - eta omega / xi)``."""
    xi = np.asarray(xi, dtype=float)
    if not (T > 0 and np.all(T < xi)):
        raise InvalidArgument("need 0 < T < xi")
    s = _ansatz_offset(xi, T, beta)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= -s):
        raise InvalidArgument(f"gamma must exceed {-s}")
    u = s + gamma
    return (s + u) * u / (u * u + 2.0 * beta * T)


def omega_argmax(xi, T, beta=1.0):
    """Point where ``omega`` attains ``delta_cap``."""
    s = _ansatz_offset(xi, T, beta)
    u = np.sqrt(4.0 * beta**2 * T**2 / s**2 + 2.0 * beta * T) + 2.0 * beta * T / s
    return u - s


def ansatz_gamma(tau, xi, T, beta=1.0):
    """``gamma`` with ``sqrt(tau) = sqrt(tau_inf) + sqrt(1 + T/xi) gamma``."""
    tau_inf = beta * xi * (1.0 - (T / xi) ** 2)
    return (np.sqrt(tau) - np.sqrt(tau_inf)) / np.sqrt(1.0 + T / xi)


def eigenvalue_step(tau, xi, T, beta, eta):
    """Commuting-case update of one covariance eigenvalue."""
    k = 1.0 + T / xi
    factor = 1.0 - eta / xi + eta * beta * k**2 / (tau + 2.0 * beta * T * k)
    return factor**2 * tau


def asymptotic_rate_candidates(xi, T, eta):
    """Limit of ``(tau_{k+1} - tau_inf) / (tau_k - tau_inf)`` as printed in two places.

    Returns ``(without_factor_two, with_factor_two)``.
    """
    q = (xi - T) / (xi + T)
    return 1.0 - eta / xi * q, 1.0 - 2.0 * eta / xi * q


def max_step_size(params: ProximalParams):
    """Largest eta allowed by the mixing-time theorem, ``min_i xi_i / Delta_i``."""
    xi = params.target.xi
    return float(np.min(xi / delta_cap(xi, params.T)))


@dataclass(frozen=True)
class MixingBound:
    C: float
    C_max: float
    c: float
    t_mix: int
    coordinate_rates: np.ndarray
    tau0: np.ndarray
    tau_inf: np.ndarray

    def tv_envelope(self, k):
        d = self.tau0.size
        return 1.5 * self.C * math.sqrt(d) * self.c**k


def mixing_time_bound(sigma0, params: ProximalParams, eta, delta) -> MixingBound:
    """Constants of the commuting-case total variation bound.

    ``C`` is the root mean square of the initial eigenvalues of
    ``Sigma_0 Sigma_inf^{-1} - I``; ``C_max`` is ``1.5 * max |.|`` of the same
    eigenvalues. The bound and ``t_mix`` use ``C``.
    """
    params.require_small_horizon()
    if not 0 < delta < 1:
        raise InvalidArgument("delta must lie in (0, 1)")
    target = params.target
    xi, T, beta = target.xi, params.T, params.beta
    sigma0 = _check_spd(np.atleast_2d(sigma0), "sigma0")
    D0 = target.rotation.T @ sigma0 @ target.rotation
    off = D0 - np.diag(np.diag(D0))
    if np.max(np.abs(off)) > 1e-10 * max(1.0, np.max(np.abs(D0))):
        raise PreconditionError("sigma0 does not commute with the target covariance")
    tau0 = np.diag(D0).copy()
    cap = delta_cap(xi, T)
    for i in range(xi.size):
        if eta / xi[i] > (1.0 + 1e-12) / cap[i]:
            raise InvalidArgument(
                f"step size {eta} exceeds the cap {xi[i] / cap[i]:.6g} for coordinate {i} (xi={xi[i]})"
            )
    tau_inf = beta * xi * (1.0 - (T / xi) ** 2)
    lam0 = tau0 / tau_inf - 1.0
    C = float(np.sqrt(np.mean(lam0**2)))
    C_max = float(1.5 * np.max(np.abs(lam0)))
    gamma0 = ansatz_gamma(tau0, xi, T, beta)
    omega0 = omega(gamma0, xi, T, beta)
    omega_limit = 2.0 * (xi - T) / (xi + T)
    rates = 1.0 - eta / xi * np.minimum(omega0, omega_limit)
    c = float(np.max(rates))
    d = xi.size
    if C == 0.0 or C * math.sqrt(d) <= delta:
        t_mix = 0
    else:
        t_mix = int(math.ceil(math.log(delta / (C * math.sqrt(d))) / math.log(c)))
    return MixingBound(C, C_max, c, t_mix, rates, tau0, tau_inf)


def ansatz_trajectory(gamma0, xi, T, beta, eta, n_steps):
    """Iterates ``gamma_k`` of the multiplicative ansatz recurrence, shape ``(n_steps + 1, d)``."""
    gamma = np.array(gamma0, dtype=float)
    out = np.empty((n_steps + 1,) + gamma.shape)
    for k in range(n_steps + 1):
        out[k] = gamma
        gamma = gamma * (1.0 - eta / xi * omega(gamma, xi, T, beta))
    return out


def commuting_tv_trajectory(sigma0, params: ProximalParams, eta, n_steps):
    """TV bounds ``tv_bound(Sigma_inf, Sigma_k)`` for ``k = 0..n_steps`` in the commuting case.

    Covariance eigenvalues are propagated through the multiplicative ansatz
    recurrence for ``gamma_k``, which is algebraically identical to
    :func:`eigenvalue_step` but carries the deviation ``tau_k - tau_inf``
    directly. Forming that difference from the iterated covariances instead
    would bottom out at roundoff (about 1e-16 relative) long before the
    geometric envelope does.

    Returns
    -------
    tv : ndarray, shape (n_steps + 1,)
    tau : ndarray, shape (n_steps + 1, d)
        Eigenvalues of ``Sigma_k`` in the target eigenbasis.
    gamma : ndarray, shape (n_steps + 1, d)
    """
    params.require_small_horizon()
    target = params.target
    xi, T, beta = target.xi, params.T, params.beta
    sigma0 = _check_spd(np.atleast_2d(sigma0), "sigma0")
    D0 = target.rotation.T @ sigma0 @ target.rotation
    if np.max(np.abs(D0 - np.diag(np.diag(D0)))) > 1e-10 * max(1.0, np.max(np.abs(D0))):
        raise PreconditionError("sigma0 does not commute with the target covariance")
    tau_inf = beta * xi * (1.0 - (T / xi) ** 2)
    root_inf = np.sqrt(tau_inf)
    scale = np.sqrt(1.0 + T / xi)
    gammas = ansatz_trajectory(ansatz_gamma(np.diag(D0), xi, T, beta), xi, T, beta, eta, n_steps)
    roots = root_inf + scale * gammas
    lam = scale * gammas * (roots + root_inf) / tau_inf
    tv = 1.5 * np.minimum(1.0, np.sqrt(np.sum(lam**2, axis=1)))
    return tv, roots**2, gammas


def corollary_rate_bound(kappa):
    """Upper bound on ``c`` for ``T = xi_min / 3`` at the maximal step size."""
    return 1.0 - 1.0 / (0.5 * kappa * (math.sqrt(1.5 * kappa + 0.5) + 1.0))


# ---------------------------------------------------- non-commuting dynamics


def frobenius_lyapunov(prox_cov, prox_stationary):
    """``|| prox_stationary^{-1} - prox_cov^{-1} ||_F^2``; batched over leading axes."""
    diff = np.linalg.inv(prox_stationary) - np.linalg.inv(prox_cov)
    return np.sum(diff * diff, axis=(-2, -1))


def prox_from_covariance(cov, params: ProximalParams):
    Ki = params.K_inv
    return symmetrize(Ki @ cov @ Ki + 2.0 * params.beta * params.T * Ki)


def covariance_from_prox(prox_cov, params: ProximalParams):
    K = params.K
    return symmetrize(K @ prox_cov @ K - 2.0 * params.beta * params.T * K)


def prox_ode_rhs(prox_cov, params: ProximalParams):
    """Time derivative of the proximal covariance in the small-step limit."""
    K, Ki = params.K, params.K_inv
    A = np.linalg.inv(params.prox_stationary) - np.linalg.inv(prox_cov)
    cov = K @ prox_cov @ K - 2.0 * params.beta * params.T * K
    return -params.beta * Ki @ (A @ cov + cov @ A) @ Ki


@dataclass
class ODETrajectory:
    times: np.ndarray
    lyapunov: np.ndarray  # (n_steps + 1, *batch)
    record_times: np.ndarray
    eigenvalues: np.ndarray  # (n_records, *batch, d)
    final: np.ndarray


def noncommuting_ode_integrate(prox_cov0, params: ProximalParams, dt=1e-3, t_end=20.0, record_every=100):
    """Explicit Euler integration of the proximal-covariance ODE.

    ``prox_cov0`` may carry leading batch axes; all members are integrated in
    lockstep. The Lyapunov value is recorded at every step, eigenvalues of the
    state every ``record_every`` steps.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    S = symmetrize(np.asarray(prox_cov0, dtype=float))
    n_steps = int(round(t_end / dt))
    target_inv = np.linalg.inv(params.prox_stationary)
    K, Ki = params.K, params.K_inv
    two_bt = 2.0 * params.beta * params.T
    lyap = np.empty((n_steps + 1,) + S.shape[:-2])
    records, record_times = [], []

    S_inv = np.linalg.inv(S)
    for step in range(n_steps + 1):
        A = target_inv - S_inv
        lyap[step] = np.sum(A * A, axis=(-2, -1))
        if step % record_every == 0 or step == n_steps:
            records.append(np.linalg.eigvalsh(S))
            record_times.append(step * dt)
        if step == n_steps:
            break
        cov = K @ S @ K - two_bt * K
        S = symmetrize(S - dt * params.beta * (Ki @ (A @ cov + cov @ A) @ Ki))
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            t = (step + 1) * dt
            raise ReduceStepError(f"state left the SPD cone at t={t:.6g}; reduce dt", t) from None
        S_inv = np.linalg.inv(S)
    return ODETrajectory(
        times=np.arange(n_steps + 1) * dt,
        lyapunov=lyap,
        record_times=np.array(record_times),
        eigenvalues=np.array(records),
        final=S,
    )


def log_linear_fit(t, y):
    """Least-squares fit ``log y = a + b t``; returns ``(b, r_squared)``."""
    t = np.asarray(t, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    b, a = np.polyfit(t, ly, 1)
    resid = ly - (a + b * t)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(b), float(r2)


def spectral_half_plane_check(prox_cov, params: ProximalParams):
    """Whether ``prox_cov - 2 beta T K^{-1}`` is positive definite.

    When it is, the spectral radius of ``I - 4 beta T prox_cov^{-1} K^{-1}``
    is also confirmed to be below one.
    """
    S = symmetrize(np.asarray(prox_cov, dtype=float))
    gap = np.linalg.eigvalsh(symmetrize(S - 2.0 * params.beta * params.T * params.K_inv))[0]
    if gap <= 0:
        return False
    M = np.eye(params.dim) - 4.0 * params.beta * params.T * np.linalg.solve(S, params.K_inv)
    radius = np.max(np.abs(np.linalg.eigvals(M)))
    if not radius < 1.0:
        raise ArithmeticError(f"spectral radius {radius} >= 1 despite the quadratic-form condition")
    return True
