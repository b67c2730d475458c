"""Acceptance suite: every gate runs at its stated tolerance and prints
one PASS/FAIL line.  Run with ``pytest tests/test_acceptance.py -v -s``.

Criteria hit in order: the posterior-mean identity, the quadratic-form
variance formula, gradient equivalence of the two objective families,
sum-consistency of the vectorized model, first-order quadrature decay,
the two-Gaussian and mixture table reproductions at desk scale, MI
recovery, the inverse-CDF sampler, Stein-score reconstruction with
annealed-HMC sampling, and the differentiation suite.
"""

import dataclasses

import numpy as np
import pytest

from timescore import checks, oracle, paths, ratio, weighting
from timescore.bench import default_config, run_gaussians, run_gmm, run_mi
from timescore.losses import predict_time_score
from timescore.mi import MiModel, MiTrainConfig, block_correlation_matrix, estimate_mi, train_mi
from timescore.oracle import (
    AnalyticScoreModel,
    GaussianSpec,
    analytic_marginal_time_score,
    lemma1_variance,
    mc_marginal_time_score,
    standard_normal,
)
from timescore.paths import VPPath, time_score_ab
from timescore.ratio import annealed_hmc_sample, log_ratio_riemann_batch, stein_score_via_integral
from timescore.weighting import SteinNorm, TimeNorm, c_statistic, importance_sample_t, lambda_time

GAUSSIANS_D2 = dict(d=2, lr=2e-3, batch_size=256, n_iters=20000)
GAUSSIANS_D10 = dict(d=10, lr=2e-3, batch_size=256, n_iters=20000)
GMM_K1 = dict(d=2, gmm_k=1.0, sb_sigma=1.0, lr=1e-3, batch_size=256, n_iters=20000)
MI_D40 = dict(d=40, lr=1e-2, batch_size=512, n_iters=20001, eval_every=2000)
# tuned on single-seed desk runs: D=2 MSE 0.07, D=10 MSE 2.2, GMM harness
# level ~0.5 at k=1 (dimensionality of the mixture study is a config
# choice; gates are the spec thresholds), MI rel err ~0.1%


def _report(num, passed, detail):
    print(f"ACCEPTANCE {num:02d} {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, detail


class TestAcceptance:
    def test_01_mixture_identity(self):
        """Posterior-mean estimator vs analytic marginal score, 10x10 grid,
        each deviation under 3 jackknife standard errors."""
        worst = 0.0
        rng = np.random.default_rng(0)
        for dim in (1, 2):
            path = VPPath(dim=dim)
            p1 = GaussianSpec(np.full(dim, 4.0), 1.0)
            p0 = standard_normal(dim)
            xs = np.concatenate([p0.sample(rng, 5), p1.sample(rng, 5)], axis=0)
            for t in np.linspace(0.05, 0.95, 10):
                an = analytic_marginal_time_score(p1, path, xs, t)
                for i in range(10):
                    est = mc_marginal_time_score(
                        path, lambda r, n: p1.sample(r, n), xs[i], t, 100_000, rng
                    )
                    worst = max(worst, abs(est.value - an[i]) / max(est.stderr, 1e-12))
        _report(1, worst < 3.0, f"max |mc - analytic| = {worst:.2f} jackknife SEs (limit 3)")

    def test_02_lemma1(self):
        """Variance formula 2 a^2 D + b^2 c D: 20 Monte-Carlo tuples within
        2%, and the time-score weighting is its exact reciprocal."""
        rng = np.random.default_rng(1)
        worst_mc = 0.0
        for _ in range(20):
            dim = int(rng.integers(1, 11))
            a, b = rng.normal(size=2)
            mean = rng.normal(size=dim)
            root = rng.normal(size=(dim, dim)) / np.sqrt(dim)
            cov = root @ root.T + 0.3 * np.eye(dim)
            c = c_statistic(mean, np.trace(cov), dim)
            expect = lemma1_variance(a, b, c, dim)
            got = checks._chunked_quadratic_variance(rng, a, b, mean, cov, 600_000)
            worst_mc = max(worst_mc, abs(got - expect) / expect)

        worst_eq = 0.0
        for path, c in ((VPPath(dim=4), 1.0), (VPPath(dim=7), 2.2)):
            for t in np.linspace(0.05, 0.9, 18):
                a, b = time_score_ab(path, t)
                lhs = 1.0 / lambda_time(path, t, c)
                rhs = lemma1_variance(a, b, c, path.dim) / path.dim
                worst_eq = max(worst_eq, abs(lhs - rhs))
        _report(
            2,
            worst_mc < 0.02 and worst_eq < 1e-10,
            f"MC deviation = {worst_mc:.4f} (limit 0.02), closed-form gap = {worst_eq:.1e} (limit 1e-10)",
        )

    def test_03_gradient_equivalence(self, gradient_cosines):
        """TSM and CTSM batch gradients align near a trained optimum; the
        wrong dlambda/dt scaling must break the alignment."""
        cos_good, cos_bad = gradient_cosines
        _report(
            3,
            cos_good > 0.99 and cos_bad < 0.99,
            f"cosine = {cos_good:.4f} (> 0.99), with corrupted scaling = {cos_bad:.4f} (< 0.99)",
        )

    def test_04_vectorized_sum_consistency(self, ctsm_1d, ctsm_v_1d, gaussian_1d_task):
        """Summed vectorized outputs track both the scalar model and the
        analytic score on a support-following grid, RMSE < 0.1."""
        p1, path, _ = gaussian_1d_task
        sq_pair, sq_true = [], []
        for t in np.linspace(0.05, 0.9, 12):
            xg = (4.0 * t + np.linspace(-3.0, 3.0, 25))[:, None]
            a = predict_time_score(ctsm_1d.net, xg, np.full(25, t))
            b = predict_time_score(ctsm_v_1d.net, xg, np.full(25, t))
            an = analytic_marginal_time_score(p1, path, xg, t)
            sq_pair.append(np.mean((a - b) ** 2))
            sq_true.append(np.mean((b - an) ** 2))
        rmse_pair = float(np.sqrt(np.mean(sq_pair)))
        rmse_true = float(np.sqrt(np.mean(sq_true)))
        _report(
            4,
            rmse_pair < 0.1 and rmse_true < 0.1,
            f"RMSE vector-vs-scalar = {rmse_pair:.4f}, vector-vs-analytic = {rmse_true:.4f} (limits 0.1)",
        )

    def test_05_riemann_first_order(self):
        """Left-rule log-ratio error decays like 1/K on the analytic score."""
        model = AnalyticScoreModel(VPPath(dim=1), GaussianSpec([4.0], 1.0))
        xs = np.random.default_rng(2).normal(size=(8, 1)) + 2.0
        exact = -0.5 * np.sum((xs - 4.0) ** 2, -1) + 0.5 * np.sum(xs * xs, -1)
        ks = np.array([10, 20, 40, 80, 160])
        errs = [
            float(np.mean(np.abs(log_ratio_riemann_batch(model, xs, int(k)) - exact)))
            for k in ks
        ]
        slope = float(np.polyfit(np.log(ks), np.log(errs), 1)[0])
        _report(5, abs(slope + 1.0) < 0.15, f"log-log slope = {slope:.3f} (target -1 +- 0.15)")

    @pytest.mark.parametrize(
        "num,params,gate",
        [("6a", GAUSSIANS_D2, 0.5), ("6b", GAUSSIANS_D10, 5.0)],
        ids=["d2", "d10"],
    )
    def test_06_gaussians_table(self, num, params, gate):
        """Two-Gaussian table at desk scale: vectorized objective with
        time-score weighting at c = 1, single seed, 20k iterations."""
        cfg = dataclasses.replace(default_config("gaussians"), seed=0, **params)
        summary = run_gaussians(cfg)
        mse = summary["test_mse"]
        _report(
            6,
            mse < gate,
            f"[{num}] D={params['d']} test MSE = {mse:.3f} (gate {gate}), "
            f"best step {summary['best_step']}, {summary['wall_s']:.0f}s",
        )

    def test_07_gmm_table(self):
        """Mixture task on the bridge path, k = 1, sigma = 1."""
        cfg = dataclasses.replace(default_config("gmm"), seed=0, **GMM_K1)
        summary = run_gmm(cfg)
        mse = summary["test_mse"]
        _report(7, mse < 600.0, f"k=1 test MSE = {mse:.1f} (gate 600), {summary['wall_s']:.0f}s")

    def test_08_mi_recovery(self):
        """Block-correlated Gaussian MI at D = 40 within 5% relative."""
        cfg = dataclasses.replace(default_config("mi"), seed=0, **MI_D40)
        summary = run_mi(cfg)
        rel = summary["rel_error"]
        _report(
            8,
            rel < 0.05,
            f"D=40 MI = {summary['mi_estimate']:.3f} vs {summary['mi_true']:.3f} "
            f"(rel err {rel:.3%}, gate 5%), {summary['wall_s']:.0f}s",
        )

    def test_08b_mi_high_dim_smoke(self):
        """D = 320 short run must stay finite (not an accuracy gate)."""
        dim = 320
        p1 = GaussianSpec(np.zeros(dim), block_correlation_matrix(dim, 0.8))
        model = MiModel(dim)
        res = train_mi(
            model, p1, "ctsm_v", TimeNorm(c=1.0),
            MiTrainConfig(lr=1e-2, batch_size=256, n_iters=60, seed=0, eval_every=10**9),
        )
        mi, _ = estimate_mi(model, p1, 500, np.random.default_rng(0))
        ok = np.isfinite(mi) and res.n_skipped_steps == 0 and np.all(np.isfinite(model.s))
        _report(8, ok, f"[smoke] D=320 after 60 steps: MI estimate = {mi:.2f}, finite and stable")

    def test_09_importance_sampler(self):
        """Inverse-CDF draws vs the quadrature-oracle CDF: KS < 0.005."""
        rng = np.random.default_rng(3)
        n, t1 = 1_000_000, 0.9
        draws = np.sort(importance_sample_t(t1, rng.random(n)))
        grid = np.linspace(0.0, t1, 40_001)
        dens = (1.0 + grid**2) / (1.0 - grid**2) ** 2
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        oracle_cdf = np.interp(draws * t1 / (1.0 - paths.EPS_TIME), grid, cdf)
        ks = float(np.max(np.abs(oracle_cdf - (np.arange(1, n + 1) - 0.5) / n)))
        _report(9, ks < 0.005, f"KS = {ks:.5f} at 1e6 draws (gate 0.005)")

    def test_10_stein_reconstruction_and_sampling(self):
        """Spatial scores rebuilt from time scores match -(x - 4) to 1e-2;
        annealed-HMC samples from the reconstructed landscape land on the
        target's moments."""
        path = VPPath(dim=2)
        p1 = GaussianSpec([4.0, 4.0], 1.0)
        model = AnalyticScoreModel(path, p1)
        worst = 0.0
        for a in np.linspace(2.0, 6.0, 5):
            for b in np.linspace(2.0, 6.0, 5):
                x = np.array([a, b])
                got = stein_score_via_integral(model, x, 1.0 - paths.EPS_TIME)
                worst = max(worst, float(np.max(np.abs(got - (-(x - 4.0))))))

        rng = np.random.default_rng(4)
        samples, diag = annealed_hmc_sample(
            model,
            lambda r, m: r.standard_normal((m, 2)),
            n_samples=500,
            step_size=0.6,
            rng=rng,
            quad_nodes=8,
        )
        mean_err = float(np.max(np.abs(samples.mean(axis=0) - 4.0)))
        cov_err = float(np.max(np.abs(np.cov(samples.T) - np.eye(2))))
        ok = worst < 1e-2 and mean_err < 0.1 and cov_err < 0.15 and not diag.has_warning
        _report(
            10,
            ok,
            f"stein max err = {worst:.1e} (gate 1e-2); sample mean err = {mean_err:.3f} "
            f"(gate 0.1), cov err = {cov_err:.3f} (gate 0.15), "
            f"min acceptance = {diag.acceptance.min():.2f}",
        )

    def test_11_differentiation_suite(self):
        """All finite-difference checks on 100 random networks."""
        passed, stat = checks.check_nn_derivatives(seed=0, n_nets=100)
        _report(11, passed, f"worst deviations: {stat} (gates 1e-4, 1e-6, 1e-3, 1e-5)")
