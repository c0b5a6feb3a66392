import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp, trapezoid
from scipy.stats import special_ortho_group

from brwp import gaussian_analytic as ga
from brwp.errors import InvalidArgument, PreconditionError, StepTooLargeError


def random_spd(gen, d, low=0.5, high=4.0):
    Q = special_ortho_group.rvs(d, random_state=gen)
    return ga.symmetrize((Q * gen.uniform(low, high, d)) @ Q.T)


def params_nd(xi, T, beta=1.0, rotation=None):
    return ga.ProximalParams.from_eigenvalues(xi, T, beta, rotation)


# ------------------------------------------------------------- quadrature oracle


def proximal_by_quadrature(mu, var, a, T, beta, n_grid=801):
    """Mean and variance of int K(x, y) rho0(y) dy for V = a x^2 / 2, by trapezoid sums."""
    sd = math.sqrt(var)
    y = np.linspace(mu - 12 * sd, mu + 12 * sd, n_grid)
    z = np.linspace(-40, 40, 20_001)
    V = lambda s: 0.5 * a * s * s
    # log normalizer of the kernel at each y, computed by quadrature with a log-sum-exp shift
    expo = -(V(z)[None, :] + (z[None, :] - y[:, None]) ** 2 / (2 * T)) / (2 * beta)
    shift = expo.max(axis=1, keepdims=True)
    log_z = np.log(trapezoid(np.exp(expo - shift), z, axis=1)) + shift[:, 0]
    rho0 = np.exp(-((y - mu) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    x = np.linspace(-25, 25, 4001)
    log_k = -(V(x)[:, None] + (x[:, None] - y[None, :]) ** 2 / (2 * T)) / (2 * beta) - log_z[None, :]
    rho = trapezoid(np.exp(log_k) * rho0[None, :], y, axis=1)
    mass = trapezoid(rho, x)
    m = trapezoid(x * rho, x) / mass
    v = trapezoid((x - m) ** 2 * rho, x) / mass
    return mass, m, v, (y, log_z)


def test_rwp_1d_examples():
    assert ga.rwp_gaussian_1d(1.5, 2.0, 0.0, 0.3, 2.0) == pytest.approx((1.5, 2.0 + 2 * 2.0 * 0.3))
    mu, var = ga.rwp_gaussian_1d(2.0, 1.0, 1.0, 0.5, 1.0)
    assert mu == pytest.approx(4 / 3, rel=1e-15)
    assert var == pytest.approx(1 / 2.25 + 1 / 1.5, rel=1e-15)


def test_rwp_1d_matches_quadrature():
    mass, m, v, _ = proximal_by_quadrature(2.0, 1.0, 1.0, 0.5, 1.0)
    assert mass == pytest.approx(1.0, abs=1e-6)
    mu, var = ga.rwp_gaussian_1d(2.0, 1.0, 1.0, 0.5, 1.0)
    assert abs(m - mu) < 1e-6 and abs(v - var) < 1e-6


def test_exact_log_normalizer_examples_and_quadrature():
    p = params_nd([1.0], 0.5)
    assert ga.exact_log_normalizer(np.zeros(1), p) == 0.0
    assert ga.exact_log_normalizer(np.ones(1), p) == pytest.approx(-1 / 6, rel=1e-14)
    _, _, _, (y, log_z) = proximal_by_quadrature(0.0, 1.0, 1.0, 0.5, 1.0)
    formula = ga.exact_log_normalizer(y[:, None], p)
    diff = log_z - formula
    assert np.ptp(diff) < 1e-6


# ------------------------------------------------------------- 1D recurrences


def test_brwp_1d_fixed_point():
    for a, T, beta in [(1.0, 0.5, 1.0), (2.0, 0.1, 0.7), (0.3, 1.0, 2.0)]:
        var = ga.brwp_stationary_variance_1d(a, T, beta)
        assert var == pytest.approx(beta / a * (1 - a * a * T * T))
        assert ga.brwp_recurrence_1d(0.0, var, a, T, beta, 0.1) == pytest.approx((0.0, var), abs=1e-12)


def test_brwp_1d_degenerate_limit_is_zero():
    assert ga.brwp_stationary_variance_1d(1.0, 1.0) == 0.0
    assert ga.brwp_stationary_variance_1d(2.0, 0.75) == 0.0


def test_brwp_1d_reference_trajectory():
    mu, var = 0.0, 4.0
    history = [var]
    for _ in range(500):
        mu, var = ga.brwp_recurrence_1d(mu, var, 1.0, 0.5, 1.0, 0.25)
        history.append(var)
    assert abs(var - 0.75) < 1e-10
    assert np.all(np.diff(history) <= 0)


def test_brwp_1d_agrees_with_affine_rederivation(gen):
    # x' = x - eta a x + eta beta (x - mu_tilde) / var_tilde, the exact score of the proximal Gaussian
    for _ in range(20):
        a, T, beta, eta = gen.uniform(0.2, 2), gen.uniform(0.05, 1), gen.uniform(0.5, 2), gen.uniform(0.01, 0.3)
        mu, var = gen.normal(), gen.uniform(0.2, 5)
        mt, vt = ga.rwp_gaussian_1d(mu, var, a, T, beta)
        slope = 1 - a * eta + eta * beta / vt
        shift = -eta * beta * mt / vt
        got = ga.brwp_recurrence_1d(mu, var, a, T, beta, eta)
        assert got[0] == pytest.approx(slope * mu + shift, rel=1e-12, abs=1e-12)
        assert got[1] == pytest.approx(slope**2 * var, rel=1e-12)


def test_ula_1d_examples():
    assert ga.ula_recurrence_1d(1.3, 2.2, 1.0, 1.0, 0.25, 0) == (1.3, 2.2)
    assert ga.ula_recurrence_1d(1.0, 4.0, 1.0, 1.0, 0.25, 2)[0] == pytest.approx(0.5625)
    assert ga.ula_recurrence_1d(0.0, 4.0, 1.0, 1.0, 0.25, 2000)[1] == pytest.approx(2 / 1.75, abs=1e-12)
    assert ga.ula_stationary_variance_1d(1.0, 1.0, 0.25) == pytest.approx(2 / 1.75)


def test_ula_closed_form_matches_iteration():
    mu, var = 1.0, 4.0
    for k in range(1, 30):
        mu, var = (1 - 0.25) * mu, (1 - 0.25) ** 2 * var + 2 * 0.25
        assert ga.ula_recurrence_1d(1.0, 4.0, 1.0, 1.0, 0.25, k) == pytest.approx((mu, var), rel=1e-13)


def test_ula_requires_small_step():
    with pytest.raises(InvalidArgument):
        ga.ula_recurrence_1d(0.0, 1.0, 1.0, 1.0, 1.0, 3)


# ------------------------------------------------------------- d dimensions


def test_rwp_nd_examples(gen):
    state = ga.GaussianState(np.array([1.0, -2.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
    tiny = ga.rwp_gaussian_nd(state, params_nd([3.0, 1.0], 1e-12))
    np.testing.assert_allclose(tiny.cov, state.cov, atol=1e-10)
    np.testing.assert_allclose(tiny.mean, state.mean, atol=1e-10)

    diag = ga.GaussianState(np.array([1.0, 2.0]), np.diag([0.5, 3.0]))
    out = ga.rwp_gaussian_nd(diag, params_nd([2.0, 0.5], 0.3, 1.5, np.eye(2)))
    for i, (xi, m, v) in enumerate([(2.0, 1.0, 0.5), (0.5, 2.0, 3.0)]):
        m1, v1 = ga.rwp_gaussian_1d(m, v, 1 / xi, 0.3, 1.5)
        assert out.mean[i] == pytest.approx(m1) and out.cov[i, i] == pytest.approx(v1)

    p = params_nd([4.0, 2.0, 1.0], 0.25, 1.3, special_ortho_group.rvs(3, random_state=gen))
    stat = ga.GaussianState(np.zeros(3), ga.stationary_covariance_nd(p))
    np.testing.assert_allclose(ga.rwp_gaussian_nd(stat, p).cov, p.prox_stationary, atol=1e-12)


def test_stationary_covariance_examples():
    np.testing.assert_allclose(ga.stationary_covariance_nd(params_nd([10.0, 1.0], 0.5, rotation=np.eye(2))), np.diag([9.975, 0.75]))
    np.testing.assert_allclose(ga.stationary_covariance_nd(params_nd([3.0], 1e-15, 2.0)), [[6.0]])
    with pytest.raises(PreconditionError):
        ga.stationary_covariance_nd(params_nd([3.0, 1.0], 1.0))


def test_brwp_nd_fixed_point_random_targets(gen):
    for _ in range(20):
        d = int(gen.integers(1, 6))
        xi = gen.uniform(0.5, 5.0, d)
        T = gen.uniform(0.01, 0.9) * xi.min()
        p = params_nd(xi, T, gen.uniform(0.5, 2.0), special_ortho_group.rvs(d, random_state=gen) if d > 1 else None)
        stat = ga.GaussianState(np.zeros(d), ga.stationary_covariance_nd(p))
        out = ga.brwp_covariance_step_nd(stat, p, 0.05 * xi.min())
        np.testing.assert_allclose(out.cov, stat.cov, atol=1e-10)


def test_brwp_nd_reduces_to_1d_and_eta_zero():
    p = params_nd([2.0, 0.5], 0.2, 1.0, np.eye(2))
    state = ga.GaussianState(np.array([1.0, -1.0]), np.diag([3.0, 0.2]))
    out = ga.brwp_covariance_step_nd(state, p, 0.1)
    for i, (xi, m, v) in enumerate([(2.0, 1.0, 3.0), (0.5, -1.0, 0.2)]):
        m1, v1 = ga.brwp_recurrence_1d(m, v, 1 / xi, 0.2, 1.0, 0.1)
        assert out.mean[i] == pytest.approx(m1, rel=1e-12) and out.cov[i, i] == pytest.approx(v1, rel=1e-12)
    assert ga.brwp_covariance_step_nd(state, p, 0.0) is state


def test_brwp_nd_eigenvalue_recurrence_in_commuting_case(gen):
    Q = special_ortho_group.rvs(4, random_state=gen)
    xi = np.array([5.0, 3.0, 2.0, 1.0])
    p = params_nd(xi, 0.3, 1.2, Q)
    tau = np.array([4.0, 0.5, 2.5, 1.5])
    state = ga.GaussianState(np.zeros(4), (Q * tau) @ Q.T)
    out = ga.brwp_covariance_step_nd(state, p, 0.2)
    got = np.diag(Q.T @ out.cov @ Q)
    np.testing.assert_allclose(got, ga.eigenvalue_step(tau, xi, 0.3, 1.2, 0.2), rtol=1e-12)


def test_brwp_nd_step_too_large_reports_eigenvalue():
    p = params_nd([1.0], 0.1)
    # factor 1 - eta/xi + eta beta / var_tilde vanishes for this step size
    state = ga.GaussianState(np.zeros(1), np.array([[1.0]]))
    var_t = ga.rwp_gaussian_1d(0.0, 1.0, 1.0, 0.1, 1.0)[1]
    eta = 1.0 / (1.0 - 1.0 / var_t)
    with pytest.raises(StepTooLargeError) as info:
        ga.brwp_covariance_step_nd(state, p, eta)
    assert info.value.eigenvalue <= 1e-12


def test_ula_nd_matches_1d():
    p = params_nd([2.0, 0.5], 0.2, 1.0, np.eye(2))
    state = ga.GaussianState(np.array([1.0, -1.0]), np.diag([3.0, 0.2]))
    out = ga.ula_covariance_step_nd(state, p, 0.1)
    for i, (xi, m, v) in enumerate([(2.0, 1.0, 3.0), (0.5, -1.0, 0.2)]):
        assert (out.mean[i], out.cov[i, i]) == pytest.approx(ga.ula_recurrence_1d(m, v, 1 / xi, 1.0, 0.1, 1))


# ------------------------------------------------------------- divergences


def test_tv_bound_examples(gen):
    assert ga.tv_bound(np.eye(3), np.eye(3)) == 0.0
    assert ga.tv_bound(1.0, 2.0) == pytest.approx(1.5)
    assert ga.tv_bound(np.eye(3), 1.01 * np.eye(3)) == pytest.approx(1.5 * 0.01 * math.sqrt(3), rel=1e-10)
    for _ in range(50):
        v = ga.tv_bound(random_spd(gen, 3), random_spd(gen, 3))
        assert 0.0 <= v <= 1.5


def test_kl_examples(gen):
    assert ga.kl_gaussians(np.eye(2), np.eye(2)) == 0.0
    assert ga.kl_gaussians(1.0, 2.0) == pytest.approx(0.5 * (math.log(2) - 1 + 0.5), rel=1e-12)
    assert ga.kl_gaussians(1.0, 2.0) == pytest.approx(0.096574, abs=1e-6)
    for _ in range(100):
        assert ga.kl_gaussians(random_spd(gen, 3), random_spd(gen, 3)) >= 0.0


def test_frobenius_lyapunov_examples(gen):
    A = random_spd(gen, 4)
    assert ga.frobenius_lyapunov(A, A) == pytest.approx(0.0, abs=1e-24)
    assert ga.frobenius_lyapunov(np.eye(1), 2 * np.eye(1)) == pytest.approx(0.25)
    B = random_spd(gen, 4)
    Q = special_ortho_group.rvs(4, random_state=gen)
    assert ga.frobenius_lyapunov(Q @ A @ Q.T, Q @ B @ Q.T) == pytest.approx(ga.frobenius_lyapunov(A, B), abs=1e-12)


# ------------------------------------------------------------- omega and the ansatz


def test_omega_examples():
    xi, T = 3.0, 0.5
    assert ga.omega(0.0, xi, T) == pytest.approx(2 * (xi - T) / (xi + T), rel=1e-14)
    assert ga.omega(1e8, xi, T) == pytest.approx(1.0, abs=1e-7)
    s = math.sqrt(xi * (1 - T / xi))
    grid = np.linspace(-s + 1e-9, 50, 2_000_001)
    w = ga.omega(grid, xi, T)
    cap = ga.delta_cap(xi, T)
    assert w.max() <= cap + 1e-9
    assert ga.omega(ga.omega_argmax(xi, T), xi, T) == pytest.approx(cap, rel=1e-12)


def test_omega_domain_errors():
    with pytest.raises(InvalidArgument):
        ga.omega(0.0, 1.0, 2.0)
    with pytest.raises(InvalidArgument):
        ga.omega(-10.0, 1.0, 0.1)


def test_ansatz_monotone_under_step_cap(gen):
    xi = np.array([10.0, 7.75, 5.5, 3.25, 1.0])
    T = 1 / 3
    eta = ga.max_step_size(params_nd(xi, T))
    for _ in range(10):
        tau0 = gen.uniform(0.2, 20.0, 5)
        g = ga.ansatz_trajectory(ga.ansatz_gamma(tau0, xi, T), xi, T, 1.0, eta, 300)
        assert np.all(np.diff(np.abs(g), axis=0) <= 0)


def test_ansatz_agrees_with_eigenvalue_step():
    xi, T, beta, eta = np.array([4.0, 1.0]), 0.2, 1.0, 0.3
    tau = np.array([9.0, 0.3])
    g = ga.ansatz_trajectory(ga.ansatz_gamma(tau, xi, T, beta), xi, T, beta, eta, 20)
    for k in range(20):
        np.testing.assert_allclose(ga.ansatz_gamma(tau, xi, T, beta), g[k], rtol=1e-9, atol=1e-14)
        tau = ga.eigenvalue_step(tau, xi, T, beta, eta)


def test_measured_rate_is_the_factor_two_rate():
    """Regression pin: the asymptotic ratio gamma_{k+1}/gamma_k has the factor 2."""
    xi = np.array([10.0, 7.75, 5.5, 3.25, 1.0])
    T = 1 / 3
    eta = ga.max_step_size(params_nd(xi, T))
    g = ga.ansatz_trajectory(np.full(5, 1e-3), xi, T, 1.0, eta, 3000)
    ratio = np.empty(5)
    for i in range(5):
        # last step before gamma reaches the subnormal range
        k = np.flatnonzero(np.abs(g[:, i]) > 1e-200)[-1]
        ratio[i] = g[k, i] / g[k - 1, i]
    without_two, with_two = ga.asymptotic_rate_candidates(xi, T, eta)
    np.testing.assert_allclose(ratio, with_two, atol=1e-6)
    assert np.all(np.abs(ratio - without_two) > 1e-3)


# ------------------------------------------------------------- mixing bound


def corollary_fixture():
    xi = np.array([10.0, 7.75, 5.5, 3.25, 1.0])
    T = xi.min() / 3
    p = params_nd(xi, T)
    sigma0 = xi.min() / (1 - (T / xi.min()) ** 2) * np.eye(5)
    return xi, p, ga.max_step_size(p), sigma0


def test_mixing_bound_stationary_start():
    xi, p, eta, _ = corollary_fixture()
    b = ga.mixing_time_bound(ga.stationary_covariance_nd(p), p, eta, 1e-3)
    assert b.C == pytest.approx(0.0, abs=1e-12) and b.t_mix == 0


def test_mixing_bound_corollary_rate():
    xi, p, eta, sigma0 = corollary_fixture()
    b = ga.mixing_time_bound(sigma0, p, eta, 1e-3)
    assert b.c <= ga.corollary_rate_bound(xi.max() / xi.min())
    assert b.C_max >= 1.5 * b.C - 1e-15
    assert b.t_mix == math.ceil(math.log(1e-3 / (b.C * math.sqrt(5))) / math.log(b.c))


def test_mixing_envelope_against_direct_iteration(gen):
    xi, p, eta, sigma0 = corollary_fixture()
    b = ga.mixing_time_bound(sigma0, p, eta, 1e-3)
    # direct iteration of the covariance step while the deviation is above roundoff
    state = ga.GaussianState(np.zeros(5), sigma0)
    stat = ga.stationary_covariance_nd(p)
    direct = []
    for k in range(120):
        direct.append(ga.tv_bound(stat, state.cov))
        state = ga.brwp_covariance_step_nd(state, p, eta)
    tv, _, _ = ga.commuting_tv_trajectory(sigma0, p, eta, 500)
    np.testing.assert_allclose(tv[:120], direct, rtol=1e-6, atol=1e-13)
    assert all(tv[k] <= b.tv_envelope(k) for k in range(501))


def test_mixing_bound_rejects_large_step_and_noncommuting(gen):
    xi, p, eta, sigma0 = corollary_fixture()
    with pytest.raises(InvalidArgument, match="coordinate"):
        ga.mixing_time_bound(sigma0, p, 1.01 * eta, 1e-3)
    with pytest.raises(PreconditionError):
        ga.mixing_time_bound(random_spd(gen, 5), p, eta, 1e-3)


# ------------------------------------------------------------- non-commuting ODE


def test_ode_equilibrium_is_constant():
    p = params_nd([3.0, 2.0, 1.0], 0.2)
    traj = ga.noncommuting_ode_integrate(p.prox_stationary, p, dt=1e-3, t_end=1.0)
    np.testing.assert_allclose(traj.final, p.prox_stationary, atol=1e-12)
    assert np.max(traj.lyapunov) < 1e-20


def test_ode_commuting_matches_scalar_reference():
    xi, T, beta = np.array([3.0, 1.0]), 0.2, 1.0
    p = params_nd(xi, T, beta, np.eye(2))
    s0 = np.array([0.5, 4.0])
    k = 1 + T / xi

    def rhs(t, s):
        a = 1 / (beta * xi) - 1 / s
        cov = k * s * k - 2 * beta * T * k
        return -beta * 2 * a * cov / k**2

    ref = solve_ivp(rhs, (0, 2.0), s0, method="DOP853", rtol=1e-12, atol=1e-14).y[:, -1]
    for dt in (1e-3, 5e-4):
        got = np.diag(ga.noncommuting_ode_integrate(np.diag(s0), p, dt=dt, t_end=2.0).final)
        assert np.max(np.abs(got - ref)) < 5 * dt


def test_ode_lyapunov_decreases_noncommuting(gen):
    p = params_nd([2.0, 1.75, 1.5, 1.25, 1.0], 1 / 3, 1.0, special_ortho_group.rvs(5, random_state=gen))
    S0 = np.stack([ga.prox_from_covariance(random_spd(gen, 5), p) for _ in range(4)])
    traj = ga.noncommuting_ode_integrate(S0, p, dt=1e-3, t_end=5.0)
    assert np.all(np.diff(traj.lyapunov, axis=0) < 0)
    assert traj.eigenvalues.shape == (len(traj.record_times), 4, 5)


def test_log_linear_fit():
    t = np.linspace(0, 5, 50)
    b, r2 = ga.log_linear_fit(t, 3.0 * np.exp(-0.7 * t))
    assert b == pytest.approx(-0.7) and r2 == pytest.approx(1.0)


def test_spectral_half_plane_examples(gen):
    p = params_nd([3.0, 1.0], 0.4, 1.0, special_ortho_group.rvs(2, random_state=gen))
    assert ga.spectral_half_plane_check(4 * p.T * p.K_inv, p)
    assert not ga.spectral_half_plane_check(p.T * p.K_inv, p)
    for _ in range(20):
        assert ga.spectral_half_plane_check(ga.prox_from_covariance(random_spd(gen, 2), p), p)


def test_prox_covariance_round_trip(gen):
    p = params_nd([3.0, 2.0, 0.5], 0.1, 1.0, special_ortho_group.rvs(3, random_state=gen))
    C = random_spd(gen, 3)
    np.testing.assert_allclose(ga.covariance_from_prox(ga.prox_from_covariance(C, p), p), C, atol=1e-12)
