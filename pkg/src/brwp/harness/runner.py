"""Execution of particle and analytic experiments, and writing their outputs."""

from __future__ import annotations

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import bayes_lr, gaussian_analytic as ga
from ..diagnostics import stats_observer
from ..errors import ConfigError, StepTooLargeError
from ..potentials import (
    bimodal_potential,
    gaussian_mixture_potential,
    logistic_regression_potential,
    quadratic_potential,
)
from ..report import ExperimentReport, matrix_to_csv, rows_to_csv
from ..samplers import Observer, ParticleEnsemble, SamplerConfig, SnapshotObserver, run_chain
from .config import AnalyticConfig, ExperimentConfig, dump_yaml, run_id


# ------------------------------------------------------------------ building


def rotation_matrix(params, d):
    if params.get("rotation") is not None:
        return np.array(params["rotation"], dtype=float)
    if params.get("rotation_deg") is not None:
        a = math.radians(params["rotation_deg"])
        return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    return None


def build_potential(pc):
    """``(PotentialSpec, extras)``; extras carry the dataset and MAP estimate for logistic regression."""
    p = pc.params
    if pc.name == "quadratic":
        return quadratic_potential(p["eigenvalues"], rotation_matrix(p, len(p["eigenvalues"]))), {}
    if pc.name == "gaussian_mixture":
        return gaussian_mixture_potential(p["a"]), {}
    if pc.name == "bimodal":
        return bimodal_potential(), {}
    dataset = bayes_lr.generate_dataset(p["n"], p["d"], p["theta_gen"], p["data_seed"])
    target = dataset.target(p["alpha"])
    pot = logistic_regression_potential(target)
    est = bayes_lr.map_estimate(pot, true_lipschitz=bayes_lr.logistic_lipschitz(target))
    return pot, {"dataset": dataset, "map": est}


def initial_law(cfg: ExperimentConfig, pot):
    d = pot.dim
    mean = np.zeros(d) if cfg.init.mean is None else np.array(cfg.init.mean, dtype=float)
    cov = cfg.init.cov
    if cov == "inverse_lipschitz":
        if pot.L is None:
            raise ConfigError("init.cov", f"potential {pot.name} has no Lipschitz constant")
        cov = np.eye(d) / pot.L
    elif isinstance(cov, list):
        cov = np.array(cov, dtype=float)
    else:
        cov = float(cov) * np.eye(d)
    return mean, cov


def sampler_config(cfg: ExperimentConfig, threads=1):
    s = cfg.sampler
    return SamplerConfig(
        eta=s.eta,
        beta=s.beta,
        T=s.T,
        P=s.P,
        subsample=s.subsample,
        seed=cfg.seed,
        normalizer=s.normalizer,
        threads=threads,
    )


class _GaussianOracle:
    """Analytic mean and covariance of ULA or BRWP on a quadratic target, advanced on demand."""

    def __init__(self, method, pot, sampler: SamplerConfig, mean, cov):
        T = sampler.T if method == "brwp" else 1.0
        self.params = ga.ProximalParams(pot.quadratic, T, sampler.beta)
        self.method = method
        self.eta = sampler.eta
        self.state = ga.GaussianState(mean, cov)
        self.k = 0
        self.broken = False

    def __call__(self, k):
        while self.k < k and not self.broken:
            try:
                if self.method == "brwp":
                    self.state = ga.brwp_covariance_step_nd(self.state, self.params, self.eta)
                else:
                    self.state = ga.ula_covariance_step_nd(self.state, self.params, self.eta)
            except (StepTooLargeError, ValueError):
                # the analytic law degenerates (horizon beyond the smallest eigenvalue)
                self.broken = True
            self.k += 1
        return None if self.broken else self.state


# ------------------------------------------------------------------ running


def run_experiment(cfg: ExperimentConfig, threads=1) -> ExperimentReport:
    """Run one particle experiment and collect per-snapshot metrics."""
    pot, extras = build_potential(cfg.potential)
    mean, cov = initial_law(cfg, pot)
    sampler = sampler_config(cfg, threads)
    ens = ParticleEnsemble.gaussian(cfg.n_particles, mean, cov, cfg.seed)

    oracle = None
    if pot.quadratic is not None and cfg.method in ("ula", "brwp"):
        oracle = _GaussianOracle(cfg.method, pot, sampler, mean, cov)

    base = stats_observer(cfg.snapshot_stride, oracle)

    def stats_fn(e, previous):
        row = base.fn(e, previous)
        if "map" in extras:
            eps1, eps2 = bayes_lr.epsilon_metrics(e.positions, extras["map"].theta)
            row.update(eps1=eps1, eps2=eps2)
        return row

    observers = [
        Observer("stats", stats_fn, cfg.snapshot_stride),
        SnapshotObserver(stride=cfg.snapshot_stride),
    ]
    start = time.perf_counter()
    report = run_chain(ens, pot, sampler, cfg.method, cfg.n_iters, observers, cfg.divergence_threshold)
    report.config = cfg.to_dict()
    report.run_id = run_id(cfg)
    if "map" in extras:
        est = extras["map"]
        report.summary.update(
            map_theta=est.theta.tolist(),
            map_grad_norm=est.grad_norm,
            map_iterations=est.iterations,
            covariates=extras["dataset"].covariates,
        )
        report.tables["dataset"] = extras["dataset"].to_csv()
    last = report.rows[-1] if report.rows else {}
    for key in ("eps1", "eps2", "oracle_tv", "oracle_mean_error", "oracle_cov_error"):
        if key in last:
            report.summary[f"final_{key}"] = last[key]
    report.wall_clock = time.perf_counter() - start
    return report


def compare_methods(configs, threads=1):
    """Run configs that share potential and initialization with paired seeds.

    All runs use the first config's seed, so initial ensembles coincide.
    Returns ``(merged_rows, reports)`` where merged rows carry
    ``<label>.<metric>`` columns aligned on iteration.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("", "nothing to compare")
    first = configs[0]
    for c in configs[1:]:
        if not isinstance(c, ExperimentConfig):
            raise ConfigError("", "compare works on particle configs only")
        if c.potential != first.potential:
            raise ConfigError("potential", f"{c.label} uses a different potential from {first.label}")
        if c.init != first.init or c.n_particles != first.n_particles:
            raise ConfigError("init", f"{c.label} uses a different initialization from {first.label}")
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError("label", f"labels must be unique, got {labels}")
    reports = [run_experiment(replace(c, seed=first.seed), threads) for c in configs]
    return merge_rows(reports, labels), reports


def merge_rows(reports, labels):
    by_iter = {}
    for rep, label in zip(reports, labels):
        for row in rep.rows:
            merged = by_iter.setdefault(row["iteration"], {"iteration": row["iteration"]})
            for key, value in row.items():
                if key != "iteration":
                    merged[f"{label}.{key}"] = value
    return [by_iter[k] for k in sorted(by_iter)]


# ------------------------------------------------------------------ analytic


def _recurrence_1d(p, report):
    a, beta, eta = p["a"], p["beta"], p["eta"]
    n = p["n_iters"]
    rows = []
    states = {T: (p["mean0"], p["var0"]) for T in p["T_values"]}
    for k in range(n + 1):
        mu, var = ga.ula_recurrence_1d(p["mean0"], p["var0"], a, beta, eta, k)
        row = {"iteration": k, "ula_mean": mu, "ula_var": var}
        for T, (m, v) in states.items():
            row[f"brwp_T{T:g}_mean"] = m
            row[f"brwp_T{T:g}_var"] = v
        rows.append(row)
        states = {T: ga.brwp_recurrence_1d(m, v, a, T, beta, eta) for T, (m, v) in states.items()}
    report.rows = rows
    summary = {
        "ula_limit": ga.ula_stationary_variance_1d(a, beta, eta),
        "ula_final": rows[-1]["ula_var"],
        "brwp": {},
    }
    for T in p["T_values"]:
        summary["brwp"][f"{T:g}"] = {
            "stationary_variance": ga.brwp_stationary_variance_1d(a, T, beta),
            "final_variance": rows[-1][f"brwp_T{T:g}_var"],
            "degenerate": bool(a * T >= 1.0),
        }
    report.summary = summary


def measured_gamma_ratio(gammas, floor=1e-200):
    """Per coordinate, ``gamma_{k+1} / gamma_k`` at the last step before ``|gamma|`` drops below ``floor``."""
    ratios = np.empty(gammas.shape[1])
    for i in range(gammas.shape[1]):
        alive = np.flatnonzero(np.abs(gammas[:, i]) > floor)
        if alive.size < 2:
            ratios[i] = np.nan
            continue
        k = alive[-1]
        ratios[i] = gammas[k, i] / gammas[k - 1, i]
    return ratios


def _mixing(p, report):
    xi = np.array(p["eigenvalues"], dtype=float)
    xi_min, xi_max = float(xi.min()), float(xi.max())
    T = p["T"] if p["T"] is not None else p["T_fraction"] * xi_min
    params = ga.ProximalParams.from_eigenvalues(xi, T, p["beta"])
    params.require_small_horizon()
    eta = ga.max_step_size(params) if p["eta"] == "cap" else p["eta"]
    if p["init_var"] == "corollary":
        init_var = xi_min / (1.0 - (T / xi_min) ** 2)
    else:
        init_var = p["init_var"]
    sigma0 = init_var * np.eye(xi.size)
    bound = ga.mixing_time_bound(sigma0, params, eta, p["delta"])
    n = p["n_iters"]
    tv, taus, gammas = ga.commuting_tv_trajectory(sigma0, params, eta, n)
    rows = []
    for k in range(n + 1):
        row = {"iteration": k, "tv_bound": tv[k], "envelope": bound.tv_envelope(k)}
        for i in range(xi.size):
            row[f"tau_{i}"] = taus[k, i]
        rows.append(row)
    report.rows = rows
    sorted_xi = params.target.xi
    measured = measured_gamma_ratio(gammas)
    without_two, with_two = ga.asymptotic_rate_candidates(sorted_xi, T, eta)
    kappa = xi_max / xi_min
    report.summary = {
        "T": T,
        "eta": eta,
        "C": bound.C,
        "C_max": bound.C_max,
        "c": bound.c,
        "t_mix": bound.t_mix,
        "coordinate_rates": bound.coordinate_rates.tolist(),
        "envelope_holds": bool(np.all(tv <= np.array([bound.tv_envelope(k) for k in range(n + 1)]))),
        "measured_ratio": measured.tolist(),
        "rate_without_factor_two": without_two.tolist(),
        "rate_with_factor_two": with_two.tolist(),
        "matches_factor_two": bool(np.all(np.abs(measured - with_two) <= 1e-6)),
        "matches_without_factor_two": bool(np.all(np.abs(measured - without_two) <= 1e-6)),
        "kappa": kappa,
        "corollary_rate_bound": ga.corollary_rate_bound(kappa),
        "corollary_holds": bool(bound.c <= ga.corollary_rate_bound(kappa)),
    }


def random_noncommuting_inits(d, n, low, high, seed):
    """``n`` covariances ``Q diag(u) Q^T`` with Haar-random ``Q`` and ``u`` uniform in ``[low, high]``."""
    gen = np.random.default_rng(seed)
    out = np.empty((n, d, d))
    for i in range(n):
        Q, R = np.linalg.qr(gen.standard_normal((d, d)))
        Q = Q * np.sign(np.diag(R))
        u = gen.uniform(low, high, size=d)
        out[i] = ga.symmetrize((Q * u) @ Q.T)
    return out


def _noncommuting(p, report):
    xi = np.array(p["eigenvalues"], dtype=float)
    params = ga.ProximalParams.from_eigenvalues(xi, p["T"], p["beta"])
    low, high = p["init_eigen_range"]
    covs = random_noncommuting_inits(xi.size, p["n_inits"], low, high, p["seed"])
    prox0 = np.array([ga.prox_from_covariance(c, params) for c in covs])
    traj = ga.noncommuting_ode_integrate(prox0, params, p["dt"], p["t_end"], p["record_every"])
    lyap = traj.lyapunov
    stride = p["record_every"]
    idx = list(range(0, lyap.shape[0], stride))
    if idx[-1] != lyap.shape[0] - 1:
        idx.append(lyap.shape[0] - 1)
    report.rows = [
        {"t": traj.times[i], **{f"lyapunov_{j}": lyap[i, j] for j in range(lyap.shape[1])}} for i in idx
    ]
    half = lyap.shape[0] // 2
    fits = [ga.log_linear_fit(traj.times[half:], lyap[half:, j]) for j in range(lyap.shape[1])]
    decreasing = np.all(np.diff(lyap, axis=0) < 0, axis=0)
    report.summary = {
        "strictly_decreasing": decreasing.tolist(),
        "final_over_initial": (lyap[-1] / lyap[0]).tolist(),
        "log_slope": [f[0] for f in fits],
        "r_squared_last_half": [f[1] for f in fits],
        "half_plane_condition": [bool(ga.spectral_half_plane_check(s, params)) for s in traj.final],
    }
    eig_rows = []
    for r, t in enumerate(traj.record_times):
        for j in range(traj.eigenvalues.shape[1]):
            eig_rows.append(
                {"t": t, "init": j, **{f"eig_{i}": traj.eigenvalues[r, j, i] for i in range(xi.size)}}
            )
    report.tables["eigenvalues"] = rows_to_csv(eig_rows)


def run_analytic(cfg: AnalyticConfig) -> ExperimentReport:
    """Evaluate a closed-form study: 1D variance recurrences, the mixing bound or the Lyapunov ODE."""
    report = ExperimentReport(config=cfg.to_dict(), run_id=run_id(cfg))
    start = time.perf_counter()
    {"recurrence_1d": _recurrence_1d, "mixing": _mixing, "noncommuting": _noncommuting}[cfg.analysis](cfg.params, report)
    report.wall_clock = time.perf_counter() - start
    return report


def run_config(cfg, threads=1):
    if isinstance(cfg, AnalyticConfig):
        return run_analytic(cfg)
    return run_experiment(cfg, threads)


# ------------------------------------------------------------------ output


def write_report(report: ExperimentReport, cfg, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "metrics.csv").write_text(report.metrics_csv())
    (directory / "summary.json").write_text(report.summary_json() + "\n")
    (directory / "config.yaml").write_text(dump_yaml(cfg))
    for name, text in report.tables.items():
        (directory / f"{name}.csv").write_text(text)
    if report.snapshots:
        snap_dir = directory / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for k, positions in report.snapshots:
            header = [f"x{i}" for i in range(positions.shape[1])]
            (snap_dir / f"iter_{k:06d}.csv").write_text(matrix_to_csv(positions, header))
    return directory
