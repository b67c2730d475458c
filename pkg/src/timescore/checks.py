"""Invariant-check harness: every module's stated properties as named,
machine-checkable verdicts.

Each check returns (passed, statistic string).  ``run_check`` executes a
selection and reports one line per property; any failure makes the whole
report fail, which the CLI turns into a nonzero exit status.  A handful
of checks train small models and take tens of seconds; they carry the
"training" tag so callers can select the fast subset.
"""

from __future__ import annotations

import json
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle, paths, ratio, weighting
from .losses import (
    TrainConfig,
    draw_batch,
    loss_ctsm,
    loss_tsm,
    predict_time_score,
    regression_loss,
    train,
)
from .mi import MiModel, MiTrainConfig, block_correlation_matrix, estimate_mi, mi_true_blockdiag, train_mi
from .nn import AdamState, ScoreNet, adam_step
from .oracle import GaussianSpec, GmmSpec, standard_normal
from .paths import SBPath, VPPath
from .weighting import SteinNorm, TimeNorm


@dataclass
class CheckResult:
    name: str
    passed: bool
    stat: str


def _rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _random_inputs(rng, path, n):
    t = rng.uniform(max(path.t_min, 0.02), min(path.t_max, 0.95), n)
    if isinstance(path, SBPath):
        z = (rng.normal(size=(n, path.dim)), rng.normal(size=(n, path.dim)))
    else:
        z = rng.normal(size=(n, path.dim))
    eps = rng.standard_normal((n, path.dim))
    sample = paths.make_path_sample(path, z, t, eps)
    return t, z, sample.x


def check_sample_round_trip(seed=0):
    (rng,) = _rngs(seed, 1)
    worst = 0.0
    for path in (VPPath(dim=3), SBPath(dim=3, sigma=1.3)):
        t = rng.uniform(path.t_min, path.t_max, 2000)
        if isinstance(path, SBPath):
            sampler = lambda r, n: (r.normal(size=(n, 3)), r.normal(size=(n, 3)))
        else:
            sampler = lambda r, n: r.normal(size=(n, 3))
        s = paths.sample_path(path, sampler, t, rng)
        back = paths.standardized_residual(path, s.x, s.z, s.t)
        worst = max(worst, float(np.max(np.abs(back - s.eps))))
    return worst < 1e-12, f"max |eps - recomputed eps| = {worst:.2e}"


def _cond_logpdf(path, x, z, t):
    k = path.cond_var(t)
    mu = path.mean(z, np.asarray(t, dtype=float))
    return -0.5 * path.dim * np.log(2 * np.pi * k) - 0.5 * np.sum((x - mu) ** 2, axis=-1) / k


def check_cond_score_finite_diff(seed=0, n=1000):
    (rng,) = _rngs(seed, 1)
    worst = 0.0
    for path in (VPPath(dim=2), SBPath(dim=2, sigma=0.8)):
        t, z, x = _random_inputs(rng, path, n)
        h = 1e-5
        fd = (_cond_logpdf(path, x, z, t + h) - _cond_logpdf(path, x, z, t - h)) / (2 * h)
        an = paths.cond_time_score(path, x, z, t)
        worst = max(worst, float(np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an)))))
    return worst < 1e-5, f"max rel diff vs central difference = {worst:.2e}"


def check_vec_sum(seed=0, n=2000):
    (rng,) = _rngs(seed, 1)
    worst = 0.0
    for path in (VPPath(dim=4), SBPath(dim=4, sigma=1.1)):
        t, z, x = _random_inputs(rng, path, n)
        vec = paths.cond_time_score_vec(path, x, z, t)
        scal = paths.cond_time_score(path, x, z, t)
        worst = max(
            worst, float(np.max(np.abs(vec.sum(-1) - scal) / np.maximum(1.0, np.abs(scal))))
        )
    return worst < 1e-10, f"max rel |sum(vec) - scalar| = {worst:.2e}"


def _standardized_bimodal(dim):
    # zero-mean, identity-covariance mixture (non-Gaussian along axis 0):
    # modes at +-gap e_0 with axis-0 component variance 1 - gap^2
    gap = 0.8
    mean = np.zeros(dim)
    mean[0] = gap
    diag = np.ones(dim)
    diag[0] = 1.0 - gap * gap
    return GmmSpec([0.5, 0.5], [GaussianSpec(-mean, diag), GaussianSpec(mean, diag)])


def check_vp_variance_preserving(seed=0, n=100_000):
    (rng,) = _rngs(seed, 1)
    dim = 2
    path = VPPath(dim=dim)
    p1 = _standardized_bimodal(dim)
    worst = 0.0
    for t in (0.1, 0.5, 0.9):
        s = paths.sample_path(path, lambda r, m: p1.sample(r, m), np.full(n, t), rng)
        cov = np.cov(s.x.T)
        worst = max(worst, float(np.max(np.abs(cov - np.eye(dim)))))
    return worst < 0.05, f"max |cov - I| entry = {worst:.3f}"


def check_sb_variance_preserving(seed=0, n=100_000):
    (rng,) = _rngs(seed, 1)
    dim = 2
    p0 = standard_normal(dim)
    p1 = _standardized_bimodal(dim)
    path = SBPath(dim=dim, sigma=np.sqrt(2.0))  # sigma = sqrt(2 var), var = 1
    worst = 0.0
    for t in (0.1, 0.5, 0.9):
        s = paths.sample_path(
            path, lambda r, m: (p0.sample(r, m), p1.sample(r, m)), np.full(n, t), rng
        )
        cov = np.cov(s.x.T)
        worst = max(worst, float(np.max(np.abs(cov - np.eye(dim)))))
    return worst < 0.05, f"max |cov - I| entry = {worst:.3f}"


def check_stein_norm_unit_variance(seed=0):
    # analytic: each conditional Stein component has variance 1/k_t
    ts = np.linspace(0.05, 0.95, 19)
    worst = 0.0
    for path in (VPPath(dim=3), SBPath(dim=3, sigma=1.7)):
        lam = weighting.lambda_stein(path, ts)
        worst = max(worst, float(np.max(np.abs(lam * (1.0 / path.cond_var(ts)) - 1.0))))
    return worst == 0.0, f"max |lambda/k_t - 1| = {worst:.1e}"


def check_time_norm_unit_variance(seed=0, n=100_000):
    (rng,) = _rngs(seed, 1)
    dim = 3
    path = VPPath(dim=dim)
    p1 = _standardized_bimodal(dim)  # c = 1 exactly
    worst = 0.0
    for t in np.linspace(0.05, 0.9, 20):
        s = paths.sample_path(path, lambda r, m: p1.sample(r, m), np.full(n, t), rng)
        scores = paths.cond_time_score(path, s.x, s.z, s.t)
        ratio_ = np.var(scores) * weighting.lambda_time(path, t, c=1.0) / dim
        worst = max(worst, abs(float(ratio_) - 1.0))
    return worst < 0.03, f"max |lambda * Var / D - 1| = {worst:.3f}"


def check_importance_cdf(seed=0, n=1_000_000):
    (rng,) = _rngs(seed, 1)
    t1 = 0.9
    draws = np.sort(weighting.importance_sample_t(t1, rng.random(n)))
    # quadrature oracle for the CDF of the rescaled density
    grid = np.linspace(0.0, t1, 40_001)
    dens = (1.0 + grid**2) / (1.0 - grid**2) ** 2
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(grid))])
    cdf /= cdf[-1]
    scaled = np.interp(draws * t1 / (1.0 - paths.EPS_TIME), grid, cdf)
    ks = float(np.max(np.abs(scaled - (np.arange(1, n + 1) - 0.5) / n)))
    return ks < 0.005, f"KS statistic = {ks:.4f} at n = {n}"


def check_nn_derivatives(seed=0, n_nets=25):
    rngs = _rngs(seed, n_nets)
    worst = {"params": 0.0, "dt": 0.0, "nested": 0.0, "x": 0.0}
    for i, rng in enumerate(rngs):
        dim = int(rng.integers(1, 5))
        n_out = int(rng.choice([1, dim]))
        hidden = tuple(rng.integers(4, 24, size=int(rng.integers(1, 4))))
        net = ScoreNet(dim, n_out, hidden=hidden, seed=1000 + i)
        x = rng.normal(size=(3, dim))
        t = rng.uniform(0.1, 0.9, 3)
        up = rng.normal(size=(3, n_out))
        up_dt = rng.normal(size=(3, n_out))

        g = net.grad_params(x, t, up)
        g_dt = net.grad_params(x, t, np.zeros_like(up), upstream_dt=up_dt)
        idx = rng.choice(net.n_params, min(20, net.n_params), replace=False)
        h = 1e-6
        for j in idx:
            base = net.params.copy()
            for target, grads, key in ((up, g, "params"), (up_dt, g_dt, "nested")):
                net.params = base.copy()
                net.params[j] += h
                if key == "params":
                    hi = float(np.sum(target * net.forward(x, t)))
                else:
                    hi = float(np.sum(target * net.dt_forward(x, t)[1]))
                net.params[j] -= 2 * h
                if key == "params":
                    lo = float(np.sum(target * net.forward(x, t)))
                else:
                    lo = float(np.sum(target * net.dt_forward(x, t)[1]))
                fd = (hi - lo) / (2 * h)
                scale = max(1e-6, abs(grads[j]))
                tol_key = worst[key]
                worst[key] = max(tol_key, abs(fd - grads[j]) / scale)
            net.params = base

        _, ydot = net.dt_forward(x, t)
        fd = (net.forward(x, t + 1e-5) - net.forward(x, t - 1e-5)) / 2e-5
        worst["dt"] = max(worst["dt"], float(np.max(np.abs(ydot - fd))))

        jac = net.grad_x(x, t)
        for d in range(dim):
            xp, xm = x.copy(), x.copy()
            xp[:, d] += 1e-6
            xm[:, d] -= 1e-6
            fd = (net.forward(xp, t) - net.forward(xm, t)) / 2e-6
            worst["x"] = max(worst["x"], float(np.max(np.abs(jac[:, :, d] - fd))))
    passed = (
        worst["params"] < 1e-4
        and worst["dt"] < 1e-6
        and worst["nested"] < 1e-3
        and worst["x"] < 1e-5
    )
    stat = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    return passed, stat


def check_nn_init_reproducible(seed=0):
    a = ScoreNet(3, 1, seed=42)
    b = ScoreNet(3, 1, seed=42)
    c = ScoreNet(3, 1, seed=43)
    same = np.array_equal(a.params, b.params)
    different = not np.array_equal(a.params, c.params)
    return same and different, "reseeding reproduces parameters bit-for-bit"


def check_mixture_identity(seed=0, n_mc=20_000, cond_score_fn=None):
    """Stop-ship property: the posterior-mean estimator must converge to
    the analytic marginal score.  ``cond_score_fn`` exists so mutation
    tests can inject a corrupted conditional score."""
    rng_x, rng_mc = _rngs(seed, 2)
    dim = 2
    path = VPPath(dim=dim)
    p1 = GaussianSpec(np.full(dim, 4.0), 1.0)
    xs = _mixture_points(p1, rng_x, 8)
    score_fn = cond_score_fn or paths.cond_time_score
    worst_sigma = 0.0
    for t in np.linspace(0.05, 0.9, 8):
        analytic = oracle.analytic_marginal_time_score(p1, path, xs, t)
        for i, x in enumerate(xs):
            est = _snis_score(path, p1, x, t, n_mc, rng_mc, score_fn)
            z_dev = abs(est.value - analytic[i]) / max(est.stderr, 1e-12)
            worst_sigma = max(worst_sigma, z_dev)
    return worst_sigma < 3.0, f"max |mc - analytic| = {worst_sigma:.2f} jackknife SEs"


def _mixture_points(p1, rng, n):
    p0 = standard_normal(p1.dim)
    return np.concatenate([p0.sample(rng, n // 2), p1.sample(rng, n - n // 2)], axis=0)


def _snis_score(path, p1, x, t, n_mc, rng, cond_score_fn):
    """Local SNIS wrapper letting mutation tests swap the conditional score."""
    z = p1.sample(rng, n_mc)
    k = float(path.cond_var(t))
    mu = path.mean(z, np.full(n_mc, float(t)))
    log_w = -0.5 * np.sum((x - mu) ** 2, axis=-1) / k
    log_w -= log_w.max()
    w = np.exp(log_w)
    f = cond_score_fn(path, np.broadcast_to(x, mu.shape), z, np.full(n_mc, float(t)))
    sum_w, sum_wf = w.sum(), np.sum(w * f)
    loo = (sum_wf - w * f) / (sum_w - w)
    se = np.sqrt((n_mc - 1) / n_mc * np.sum((loo - loo.mean()) ** 2))
    return oracle.McScore(float(sum_wf / sum_w), float(se), float(sum_w**2 / np.sum(w * w)), False)


def check_lemma1_monte_carlo(seed=0, n_tuples=20, n_mc=400_000):
    (rng,) = _rngs(seed, 1)
    worst = 0.0
    for _ in range(n_tuples):
        dim = int(rng.integers(1, 11))
        a, b = rng.normal(size=2)
        mean = rng.normal(size=dim)
        root = rng.normal(size=(dim, dim)) / np.sqrt(dim)
        cov = root @ root.T + 0.3 * np.eye(dim)
        c = weighting.c_statistic(mean, np.trace(cov), dim)
        expect = oracle.lemma1_variance(a, b, c, dim)
        var_acc = _chunked_quadratic_variance(rng, a, b, mean, cov, n_mc)
        worst = max(worst, abs(var_acc - expect) / expect)
    return worst < 0.02, f"max rel deviation = {worst:.4f}"


def _chunked_quadratic_variance(rng, a, b, mean, cov, n_mc, chunk=100_000):
    l = np.linalg.cholesky(cov)
    dim = mean.shape[0]
    vals = []
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        eps = rng.standard_normal((m, dim))
        x = mean + rng.standard_normal((m, dim)) @ l.T
        vals.append(a * np.sum(eps * eps, axis=-1) + b * np.sum(eps * x, axis=-1))
        done += m
    return float(np.var(np.concatenate(vals)))


def check_time_norm_matches_lemma1(seed=0):
    worst = 0.0
    for path, c in ((VPPath(dim=5), 1.4), (SBPath(dim=5, sigma=1.2), 0.7)):
        for t in np.linspace(0.05, 0.9, 15):
            a, b = paths.time_score_ab(path, t)
            per_dim = oracle.lemma1_variance(a, b, c, path.dim) / path.dim
            lam = weighting.lambda_time(path, t, c)
            worst = max(worst, abs(lam * per_dim - 1.0))
    return worst < 1e-10, f"max |lambda * var - 1| = {worst:.1e}"


def _analytic_gaussian_setup(dim):
    p1 = GaussianSpec(np.full(dim, 4.0), 1.0)
    path = VPPath(dim=dim)
    model = oracle.AnalyticScoreModel(path, p1)
    return p1, path, model


def _exact_gaussian_log_ratio(xs, offset=4.0):
    return -0.5 * np.sum((xs - offset) ** 2, axis=-1) + 0.5 * np.sum(xs * xs, axis=-1)


def check_riemann_order(seed=0):
    (rng,) = _rngs(seed, 1)
    _, _, model = _analytic_gaussian_setup(1)
    xs = rng.normal(size=(6, 1)) + 2.0
    exact = _exact_gaussian_log_ratio(xs)
    ks = np.array([10, 20, 40, 80, 160])
    errs = [
        float(np.mean(np.abs(ratio.log_ratio_riemann_batch(model, xs, int(k)) - exact)))
        for k in ks
    ]
    slope = float(np.polyfit(np.log(ks), np.log(errs), 1)[0])
    return abs(slope + 1.0) < 0.15, f"log-log error slope = {slope:.3f}"


def check_adaptive_vs_riemann(seed=0):
    (rng,) = _rngs(seed, 1)
    _, _, model = _analytic_gaussian_setup(2)
    xs = rng.normal(size=(4, 2)) + 1.0
    fine = ratio.log_ratio_riemann_batch(model, xs, 100_000)
    adapt, _ = ratio.log_ratio_adaptive_batch(model, xs)
    worst = float(np.max(np.abs(fine - adapt)))
    return worst < 1e-4, f"max |adaptive - riemann(1e5)| = {worst:.2e}"


def check_integration_linearity(seed=0):
    (rng,) = _rngs(seed, 1)
    f = lambda xs, t: np.full(xs.shape[0], np.sin(3 * t))
    g = lambda xs, t: np.full(xs.shape[0], t * t)
    fg = lambda xs, t: f(xs, t) + g(xs, t)
    xs = rng.normal(size=(3, 1))
    worst = 0.0
    for k in (16, 64):
        left = ratio.log_ratio_riemann_batch(fg, xs, k)
        right = ratio.log_ratio_riemann_batch(f, xs, k) + ratio.log_ratio_riemann_batch(g, xs, k)
        worst = max(worst, float(np.max(np.abs(left - right))))
    return worst < 1e-10, f"max |I(f+g) - I(f) - I(g)| = {worst:.1e}"


def _chunked_gradient(loss_fn, net, parts):
    total = None
    loss = 0.0
    n_total = sum(p.t.shape[0] for p in parts)
    for batch in parts:
        out = loss_fn(net, batch)
        w = batch.t.shape[0] / n_total
        loss += w * out.loss
        total = out.grad * w if total is None else total + out.grad * w
    return loss, total


def tsm_ctsm_gradient_cosine(seed=0, n=100_000, lambda_dot_coeff=2.0, pretrain_iters=1500, net=None):
    """Train briefly on the 1D two-Gaussian task (or start from a supplied
    trained model), nudge the parameters off the optimum, and compare the
    two objectives' full-batch gradients."""
    rng_data, rng_perturb = _rngs(seed + 17, 2)
    p1, path, _ = _analytic_gaussian_setup(1)
    sampler = lambda r, m: p1.sample(r, m)
    scheme = SteinNorm()
    if net is None:
        net = ScoreNet(1, 1, seed=seed)
        train(
            net, path, sampler, "ctsm", scheme,
            TrainConfig(lr=2e-3, batch_size=256, n_iters=pretrain_iters, seed=seed, eval_every=10**9),
        )
    work = ScoreNet(net.dim, net.n_out, hidden=net.hidden, seed=net.seed)
    work.params = net.params + 0.05 * rng_perturb.standard_normal(net.n_params) * np.std(net.params)
    net = work

    chunk = 10_000
    parts = [
        draw_batch(path, sampler, chunk, rng_data, scheme,
                   boundary_samplers=(lambda r, m: r.standard_normal((m, 1)), sampler))
        for _ in range(n // chunk)
    ]
    _, g_ctsm = _chunked_gradient(lambda nt, b: loss_ctsm(nt, b, scheme), net, parts)
    _, g_tsm = _chunked_gradient(
        lambda nt, b: loss_tsm(nt, b, scheme, lambda_dot_coeff=lambda_dot_coeff), net, parts
    )
    cos = float(g_ctsm @ g_tsm / (np.linalg.norm(g_ctsm) * np.linalg.norm(g_tsm)))
    return cos


def check_gradient_equivalence(seed=0, lambda_dot_coeff=2.0):
    cos = tsm_ctsm_gradient_cosine(seed=seed, lambda_dot_coeff=lambda_dot_coeff)
    return cos > 0.99, f"gradient cosine similarity = {cos:.4f}"


def check_posterior_mean_regression(seed=0, n_iters=16_000):
    """Conditional regression onto an arbitrary tractable f recovers the
    posterior mean E[f | x, t]: tested on a five-atom endpoint prior where
    the posterior mean is a finite sum."""
    (rng,) = _rngs(seed, 1)
    atoms = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    path = VPPath(dim=1)
    net = ScoreNet(1, 1, hidden=(128, 128), seed=seed)
    state = AdamState.for_params(net.params, 3e-3)
    t_lo, t_hi = 0.05, 0.8
    for step in range(1, n_iters + 1):
        t = rng.uniform(t_lo, t_hi, 512)
        z = rng.choice(atoms, size=(512, 1))
        eps = rng.standard_normal((512, 1))
        x = path.mean(z, t) + np.sqrt(path.cond_var(t))[:, None] * eps
        f = paths.cond_stein_score(path, x, z, t)
        out = regression_loss(net, x, t, f, np.ones(512))
        state.lr = 3e-3 * 0.5 * (1.0 + np.cos(np.pi * step / n_iters))
        net.params = adam_step(state, net.params, out.grad)

    def posterior_mean(xg, tg):
        k = path.cond_var(tg)
        log_w = -0.5 * (xg[:, None] - tg * atoms[None, :]) ** 2 / k
        log_w -= log_w.max(axis=1, keepdims=True)
        w = np.exp(log_w)
        w /= w.sum(axis=1, keepdims=True)
        f_all = -(xg[:, None] - tg * atoms[None, :]) / k
        return np.sum(w * f_all, axis=1)

    sup = 0.0
    xg = np.linspace(-2.5, 2.5, 26)
    for tg in np.linspace(0.1, 0.7, 7):
        pred = net.forward(np.c_[xg], np.full(26, tg))[:, 0]
        sup = max(sup, float(np.max(np.abs(pred - posterior_mean(xg, tg)))))
    return sup < 0.02, f"sup |net - posterior mean| = {sup:.4f}"


def check_vectorized_sum_consistency(seed=0, n_iters=10_000):
    """The summed vectorized model and the scalar model converge to the
    same function on the 1D two-Gaussian task."""
    p1, path, _ = _analytic_gaussian_setup(1)
    sampler = lambda r, m: p1.sample(r, m)
    scheme = TimeNorm(c=1.0)
    nets = {}
    for objective in ("ctsm", "ctsm_v"):
        net = ScoreNet(1, 1, seed=seed)
        train(
            net, path, sampler, objective, scheme,
            TrainConfig(lr=2.5e-3, batch_size=128, n_iters=n_iters, seed=seed,
                        eval_every=10**9, lr_schedule="cosine"),
        )
        nets[objective] = net
    diffs = []
    for t in np.linspace(0.05, 0.9, 12):
        xg = (4.0 * t + np.linspace(-3.0, 3.0, 25))[:, None]
        a = predict_time_score(nets["ctsm"], xg, np.full(25, t))
        b = predict_time_score(nets["ctsm_v"], xg, np.full(25, t))
        diffs.append(np.mean((a - b) ** 2))
    rmse = float(np.sqrt(np.mean(diffs)))
    return rmse < 0.1, f"grid RMSE between scalar and summed vector model = {rmse:.4f}"


def check_bench_determinism(seed=0):
    from .bench import default_config, run_gaussians
    import dataclasses

    outputs = []
    tmp = Path(tempfile.mkdtemp(prefix="timescore-check-"))
    try:
        for run in range(2):
            cfg = dataclasses.replace(
                default_config("gaussians"),
                d=1, n_iters=300, eval_every=100, batch_size=64,
                n_val=512, n_test=512, val_grid=16, seed=seed + 5,
                out=str(tmp / f"run{run}"),
            )
            run_gaussians(cfg)
            trace = (tmp / f"run{run}" / "trace.csv").read_text().splitlines()
            ratios = (tmp / f"run{run}" / "ratios.csv").read_text()
            metric_cols = ["\t".join(line.split(",")[:3]) for line in trace]
            outputs.append((metric_cols, ratios))
        same = outputs[0] == outputs[1]
        return same, "metric columns and ratio files identical across reruns"
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def check_mi_convergence_order(seed=0, n_iters=1200, dim=40):
    """The vectorized objective's MI error drops below the
    integration-by-parts objective's within the first quarter of steps."""
    cov = block_correlation_matrix(dim, 0.8)
    p1 = GaussianSpec(np.zeros(dim), cov)
    true = mi_true_blockdiag(dim, 0.8)
    quarter = n_iters // 4
    errs = {}
    for objective in ("ctsm_v", "tsm"):
        model = MiModel(dim)
        scheme = TimeNorm(c=1.0) if objective == "ctsm_v" else SteinNorm()
        train_mi(
            model, p1, objective, scheme,
            MiTrainConfig(lr=1e-2, batch_size=256, n_iters=quarter, seed=seed, eval_every=10**9),
        )
        est, _ = estimate_mi(model, p1, 2000, np.random.default_rng(seed + 1))
        errs[objective] = abs(est - true)
    passed = errs["ctsm_v"] < errs["tsm"]
    return passed, f"|err| at quarter point: ctsm_v={errs['ctsm_v']:.3f}, tsm={errs['tsm']:.3f}"


CHECKS = {
    "paths.sample-round-trip": (check_sample_round_trip, "core"),
    "paths.cond-score-finite-diff": (check_cond_score_finite_diff, "core"),
    "paths.vec-sum": (check_vec_sum, "core"),
    "paths.vp-variance-preserving": (check_vp_variance_preserving, "core"),
    "paths.sb-variance-preserving": (check_sb_variance_preserving, "core"),
    "weighting.stein-unit-variance": (check_stein_norm_unit_variance, "core"),
    "weighting.time-norm-unit-variance": (check_time_norm_unit_variance, "core"),
    "weighting.importance-cdf": (check_importance_cdf, "core"),
    "nn.derivative-suite": (check_nn_derivatives, "core"),
    "nn.init-reproducible": (check_nn_init_reproducible, "core"),
    "oracle.mixture-identity": (check_mixture_identity, "core"),
    "oracle.lemma1-monte-carlo": (check_lemma1_monte_carlo, "core"),
    "oracle.time-norm-matches-lemma1": (check_time_norm_matches_lemma1, "core"),
    "ratio.riemann-order": (check_riemann_order, "core"),
    "ratio.adaptive-vs-riemann": (check_adaptive_vs_riemann, "core"),
    "ratio.integration-linearity": (check_integration_linearity, "core"),
    "losses.tsm-ctsm-gradient-equivalence": (check_gradient_equivalence, "training"),
    "losses.posterior-mean-regression": (check_posterior_mean_regression, "training"),
    "losses.vectorized-sum-consistency": (check_vectorized_sum_consistency, "training"),
    "bench.determinism": (check_bench_determinism, "training"),
    "bench.mi-convergence-order": (check_mi_convergence_order, "training"),
}


def run_all_checks(seed=0, names=None, tags=None, verbose=False):
    results = []
    for name, (fn, tag) in CHECKS.items():
        if names is not None and name not in names:
            continue
        if tags is not None and tag not in tags:
            continue
        passed, stat = fn(seed=seed)
        results.append(CheckResult(name=name, passed=passed, stat=stat))
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'} {name}: {stat}", flush=True)
    return results


def run_check(config):
    """bench entry point: run every property, print one line each, and
    report machine-readable results."""
    results = run_all_checks(seed=config.seed, verbose=True)
    report = {
        "task": "check",
        "passed": all(r.passed for r in results),
        "n_checks": len(results),
        "results": [{"name": r.name, "passed": r.passed, "stat": r.stat} for r in results],
    }
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "check_report.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
