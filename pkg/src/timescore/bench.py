"""Experiment runner: the two-Gaussian, Gaussian-mixture, and
mutual-information studies at desk scale, plus machine-readable outputs.

Each run trains a model on one task, tracks a validation metric on a
fixed set, selects the best checkpoint by validation where the task
calls for it, and reports a test metric computed with the adaptive
integrator on fresh samples.  Outputs land in the configured directory:

* ``trace.csv``    -- step, loss, val_mse, wall_ms
* ``summary.json`` -- final metrics, config echo, git hash, wall time
* ``ratios.csv``   -- per-test-point log-ratio estimates

Config files are flat ``key = value`` text; unknown keys are rejected.
All randomness derives from the single config seed, so a rerun with the
same config reproduces every metric column exactly (wall-clock columns
naturally differ).
"""

from __future__ import annotations

import dataclasses
import json
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import NetScoreModel, TrainConfig, TrainResult, predict_time_score, train
from .nn import DivergenceError
from .mi import MiModel, MiTrainConfig, block_correlation_matrix, estimate_mi, mi_true_blockdiag, train_mi
from .nn import ScoreNet
from .oracle import AnalyticScoreModel, GaussianSpec, GmmSpec, standard_normal
from .paths import SBPath, VPPath, make_schedule
from .ratio import grid_log_ratio_batch, log_ratio_adaptive_batch
from .weighting import c_statistic, make_scheme


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in an experiment config."""


@dataclass
class ExperimentConfig:
    task: str = "gaussians"
    d: int = 2
    mean_offset: float = 4.0
    gmm_k: float = 1.0
    mi_rho: float = 0.8
    path: str = "vp"
    schedule: str = "linear"
    schedule_horizon: float = 1.0
    sb_sigma: float = 1.0
    objective: str = "ctsm_v"
    scheme: str = "time"
    scheme_c: float = 1.0  # <= 0 means: compute c from the data statistics
    scheme_t1: float = 0.9
    lr: float = 2e-3
    lr_grid: str = ""
    lr_schedule: str = "cosine"
    batch_size: int = 256
    n_iters: int = 20000
    eval_every: int = 1000
    seed: int = 0
    out: str = ""
    n_val: int = 10000
    n_test: int = 10000
    val_grid: int = 32
    hidden: str = "256,256,256"
    normalize_target: bool = False
    oracle_bypass: bool = False
    mi_time_groups: int = 32
    mi_eval_samples: int = 10000
    mi_trace_samples: int = 2048

    def hidden_sizes(self):
        return tuple(int(s) for s in self.hidden.split(",") if s.strip())

    def lr_values(self):
        if not self.lr_grid.strip():
            return [self.lr]
        return [float(s) for s in self.lr_grid.split(",") if s.strip()]


TASK_DEFAULTS = {
    "gaussians": {},
    "gmm": {"path": "sb", "lr": 1e-3},
    "mi": {"d": 40, "lr": 1e-2, "batch_size": 512, "n_iters": 20001, "eval_every": 2000},
    "check": {},
}

_BOOL_STRINGS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def default_config(task: str) -> ExperimentConfig:
    if task not in TASK_DEFAULTS:
        raise ConfigError(f"unknown task {task!r}")
    return ExperimentConfig(task=task, **TASK_DEFAULTS[task])


def apply_config_text(config: ExperimentConfig, text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` lines into a config; '#' starts a comment."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        ftype = fields[key].type
        try:
            if ftype == "bool":
                values[key] = _BOOL_STRINGS[value.lower()]
            elif ftype == "int":
                values[key] = int(value)
            elif ftype == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return dataclasses.replace(config, **values)


def load_config(path, task=None) -> ExperimentConfig:
    text = Path(path).read_text()
    base = ExperimentConfig()
    # the task key decides the defaults, so resolve it first
    probe = apply_config_text(base, text)
    cfg = default_config(task or probe.task)
    cfg = apply_config_text(cfg, text)
    if task is not None and cfg.task != task:
        cfg = dataclasses.replace(cfg, task=task)
    return cfg


def _git_hash():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_outputs(out_dir, trace, summary, ratio_rows, dim):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "trace.csv",
        ["step", "loss", "val_mse", "wall_ms"],
        [(r.step, r.loss, r.val_metric, r.wall_ms) for r in trace],
    )
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if ratio_rows is not None:
        header = [f"x{i}" for i in range(dim)] + ["log_ratio", "n_evals"]
        _write_csv(out / "ratios.csv", header, ratio_rows)


def _mixture_eval_set(p0, p1, rng, n):
    """Half p0 / half p1 draws, the evaluation mixture for the MSE metric."""
    n0 = n // 2
    x = np.concatenate([p0.sample(rng, n0), p1.sample(rng, n - n0)], axis=0)
    return x


def _scheme_for(config, path, p1, p0=None):
    c = config.scheme_c
    if config.scheme == "time" and c <= 0.0:
        # scheme_c <= 0 requests the data-derived statistic
        if isinstance(path, SBPath):
            mean_sq = float(np.sum((p1.mean - p0.mean) ** 2))
            c = (p0.cov_trace + p1.cov_trace + mean_sq) / (path.dim * path.sigma**2)
        else:
            c = c_statistic(p1.mean, p1.cov_trace, path.dim)
    return make_scheme(config.scheme, c=c, t1=config.scheme_t1)


def _gaussian_task(config):
    p0 = standard_normal(config.d)
    p1 = GaussianSpec(np.full(config.d, config.mean_offset), 1.0)
    path = VPPath(dim=config.d, schedule=make_schedule(config.schedule, config.schedule_horizon))
    sampler = lambda rng, n: p1.sample(rng, n)
    return p0, p1, path, sampler


def gmm_pair(d: int, k: float):
    """Two mirrored bimodal mixtures with unit per-dimension variance.

    Component scale sigma = sqrt(4 / (4 + k^2)) makes each mixture's
    marginal variance exactly one while k sets the mode gap in units of
    sigma; modes sit at (+-2 -+ k sigma / 2) * ones."""
    sigma = np.sqrt(4.0 / (4.0 + k * k))
    half = 0.5 * k * sigma
    ones = np.ones(d)
    p0 = GmmSpec(
        [0.5, 0.5],
        [GaussianSpec(2.0 * ones - half, sigma**2), GaussianSpec(2.0 * ones + half, sigma**2)],
    )
    p1 = GmmSpec(
        [0.5, 0.5],
        [GaussianSpec(-2.0 * ones - half, sigma**2), GaussianSpec(-2.0 * ones + half, sigma**2)],
    )
    return p0, p1


def _gmm_task(config):
    p0, p1 = gmm_pair(config.d, config.gmm_k)
    path = SBPath(dim=config.d, sigma=config.sb_sigma)
    sampler = lambda rng, n: (p0.sample(rng, n), p1.sample(rng, n))
    return p0, p1, path, sampler


def _ratio_training_run(config, p0, p1, path, endpoint_sampler):
    """Shared train/validate/test pipeline for the two MSE tasks."""
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    train_seed = int(seeds[0].generate_state(1)[0])
    rng_val = np.random.default_rng(seeds[1])
    rng_test = np.random.default_rng(seeds[2])

    x_val = _mixture_eval_set(p0, p1, rng_val, config.n_val)
    truth_val = p1.logpdf(x_val) - p0.logpdf(x_val)
    x_test = _mixture_eval_set(p0, p1, rng_test, config.n_test)
    truth_test = p1.logpdf(x_test) - p0.logpdf(x_test)

    t_start = time.perf_counter()
    if config.oracle_bypass:
        if isinstance(path, VPPath):
            model = AnalyticScoreModel(path, p1)
        else:
            model = AnalyticScoreModel(path, p1, p0=p0)
        est, n_evals = log_ratio_adaptive_batch(model, x_test)
        test_mse = float(np.mean((est - truth_test) ** 2))
        summary = {
            "task": config.task,
            "oracle_bypass": True,
            "test_mse": test_mse,
            "n_evals": int(n_evals),
            "wall_s": time.perf_counter() - t_start,
        }
        rows = [tuple(x_test[i]) + (float(est[i]), int(n_evals)) for i in range(x_test.shape[0])]
        return summary, [], rows

    scheme = _scheme_for(config, path, p1, p0)
    n_out = config.d if config.objective == "ctsm_v" else 1

    best: dict = {"val": np.inf, "step": -1, "params": None, "lr": None}
    all_traces = []
    lr_results = []
    for lr in config.lr_values():
        net = ScoreNet(
            config.d, n_out, hidden=config.hidden_sizes(), seed=config.seed,
            normalize_target=config.normalize_target,
        )
        run_best = {"val": np.inf, "step": -1, "params": None}

        def eval_fn(net_, step, run_best=run_best):
            est = grid_log_ratio_batch(
                lambda xs, t: predict_time_score(net_, xs, t, path), x_val, config.val_grid
            )
            mse = float(np.mean((est - truth_val) ** 2))
            if mse < run_best["val"]:
                run_best.update(val=mse, step=step, params=net_.params.copy())
            return mse

        try:
            result = train(
                net,
                path,
                endpoint_sampler,
                config.objective,
                scheme,
                TrainConfig(
                    lr=lr, batch_size=config.batch_size, n_iters=config.n_iters,
                    seed=train_seed, eval_every=config.eval_every,
                    lr_schedule=config.lr_schedule,
                ),
                eval_fn=eval_fn,
            )
        except DivergenceError as err:
            # flag the run and fall back to whatever checkpoint exists
            lr_results.append(
                {"lr": lr, "best_val_mse": run_best["val"], "best_step": run_best["step"],
                 "diverged": True}
            )
            all_traces.append((lr, TrainResult(net=net, trace=getattr(err, "trace", []))))
            if run_best["params"] is not None and run_best["val"] < best["val"]:
                best.update(val=run_best["val"], step=run_best["step"],
                            params=run_best["params"], lr=lr)
            continue
        lr_results.append({"lr": lr, "best_val_mse": run_best["val"], "best_step": run_best["step"]})
        all_traces.append((lr, result))
        if run_best["val"] < best["val"]:
            best.update(val=run_best["val"], step=run_best["step"], params=run_best["params"], lr=lr)

    if best["params"] is None:
        raise DivergenceError("every learning rate diverged before the first evaluation")
    net = ScoreNet(
        config.d, n_out, hidden=config.hidden_sizes(), seed=config.seed,
        normalize_target=config.normalize_target,
    )
    net.params = best["params"]
    est, n_evals = log_ratio_adaptive_batch(
        lambda xs, t: predict_time_score(net, xs, t, path), x_test
    )
    test_mse = float(np.mean((est - truth_test) ** 2))
    trace = all_traces[[r["lr"] for r in lr_results].index(best["lr"])][1].trace

    summary = {
        "diverged_lrs": [r["lr"] for r in lr_results if r.get("diverged")],
        "task": config.task,
        "objective": config.objective,
        "scheme": config.scheme,
        "d": config.d,
        "lr": best["lr"],
        "lr_results": lr_results,
        "best_val_mse": best["val"],
        "best_step": best["step"],
        "test_mse": test_mse,
        "test_n_evals": int(n_evals),
        "n_rejected": sum(tr.n_rejected for _, tr in all_traces),
        "wall_s": time.perf_counter() - t_start,
    }
    rows = [tuple(x_test[i]) + (float(est[i]), int(n_evals)) for i in range(x_test.shape[0])]
    return summary, trace, rows


def run_gaussians(config: ExperimentConfig):
    if config.path != "vp":
        raise ConfigError("the two-Gaussian task uses the VP path")
    p0, p1, path, sampler = _gaussian_task(config)
    summary, trace, rows = _ratio_training_run(config, p0, p1, path, sampler)
    summary["mean_offset"] = config.mean_offset
    return _finish(config, summary, trace, rows)


def run_gmm(config: ExperimentConfig):
    if config.path != "sb":
        raise ConfigError("the mixture task uses the SB path (p0 is not Gaussian)")
    p0, p1, path, sampler = _gmm_task(config)
    summary, trace, rows = _ratio_training_run(config, p0, p1, path, sampler)
    summary["gmm_k"] = config.gmm_k
    summary["sb_sigma"] = config.sb_sigma
    return _finish(config, summary, trace, rows)


def run_mi(config: ExperimentConfig):
    cov = block_correlation_matrix(config.d, config.mi_rho)
    p1 = GaussianSpec(np.zeros(config.d), cov)
    mi_true = mi_true_blockdiag(config.d, config.mi_rho)
    scheme = make_scheme(config.scheme, c=max(config.scheme_c, 1e-12), t1=config.scheme_t1)
    model = MiModel(config.d)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    rng_trace = np.random.default_rng(seeds[1])
    rng_final = np.random.default_rng(seeds[2])

    t_start = time.perf_counter()

    def eval_fn(model_, step):
        est, _ = estimate_mi(model_, p1, config.mi_trace_samples, np.random.default_rng(rng_trace.integers(2**63)))
        return abs(est - mi_true)

    result = train_mi(
        model, p1, config.objective, scheme,
        MiTrainConfig(
            lr=config.lr, batch_size=config.batch_size, n_iters=config.n_iters,
            seed=int(seeds[0].generate_state(1)[0]), eval_every=config.eval_every,
            n_time_groups=config.mi_time_groups, lr_schedule=config.lr_schedule,
        ),
        eval_fn=eval_fn,
    )
    mi_est, n_evals = estimate_mi(model, p1, config.mi_eval_samples, rng_final)
    summary = {
        "task": "mi",
        "objective": config.objective,
        "d": config.d,
        "mi_estimate": mi_est,
        "mi_true": mi_true,
        "abs_error": abs(mi_est - mi_true),
        "rel_error": abs(mi_est - mi_true) / mi_true,
        "n_evals": int(n_evals),
        "n_skipped_steps": result.n_skipped_steps,
        "wall_s": time.perf_counter() - t_start,
    }
    return _finish(config, summary, result.trace, None)


def _finish(config, summary, trace, ratio_rows):
    summary["config"] = dataclasses.asdict(config)
    summary["git_hash"] = _git_hash()
    if config.out:
        _write_outputs(config.out, trace, summary, ratio_rows, config.d)
    return summary


RUNNERS = {"gaussians": run_gaussians, "gmm": run_gmm, "mi": run_mi}


def run_experiment(config: ExperimentConfig):
    if config.task == "check":
        from .checks import run_check

        return run_check(config)
    if config.task not in RUNNERS:
        raise ConfigError(f"unknown task {config.task!r}")
    return RUNNERS[config.task](config)
