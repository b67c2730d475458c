"""Mutual-information estimation between N(0, I) and N(0, Sigma).

Instead of a network, the time-score model here is the closed-form
posterior expectation of the conditional score along the path
p_t(x|z) = N(t z, (1-t^2) I) with z ~ N(0, Sigma), parameterized by the
single symmetric matrix S = Sigma - I.  With A = (I + t^2 S)^{-1}, the
posterior over z given x is Gaussian with mean mu_bar = t A Sigma x and
covariance (1-t^2) A Sigma, and the model's i-th output is

    f_i = [t(1-t^2) - t(mu_bar_i^2 + Sbar_ii) - t x_i^2
           + (t^2+1) x_i mu_bar_i] / (1-t^2)^2.

Training S against the conditional targets recovers Sigma, and the MI
estimate is the average integrated score over target samples.  Gradients
in S are exact matrix calculus; the time derivative needed by the
integration-by-parts objective uses a complex-step derivative, which is
cancellation-free and reuses the same formulas in complex arithmetic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .losses import TraceRow, lr_at
from .nn import AdamState, DivergenceError, adam_step
from .paths import EPS_TIME, VPPath
from .ratio import log_ratio_adaptive_batch
from .weighting import ImportanceSampled


class IllConditionedError(RuntimeError):
    """I + t^2 S became numerically singular at an evaluation time."""


def block_correlation_matrix(dim: int, rho: float = 0.8) -> np.ndarray:
    """Block-diagonal covariance of 2x2 blocks [[1, rho], [rho, 1]]."""
    if dim % 2:
        raise ValueError("block covariance needs an even dimensionality")
    cov = np.eye(dim)
    idx = np.arange(0, dim, 2)
    cov[idx, idx + 1] = rho
    cov[idx + 1, idx] = rho
    return cov


def mi_true_blockdiag(dim: int, rho: float = 0.8) -> float:
    """-1/2 log det Sigma: exact MI between even and odd coordinates."""
    return -0.5 * (dim // 2) * np.log(1.0 - rho * rho)


class MiModel:
    """Learnable symmetric S with the closed-form vectorized score."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.s = np.zeros((self.dim, self.dim))

    def _solve_pair(self, t):
        """A = (I + t^2 S)^{-1} and A Sigma, sharing one factorization.

        Works in complex arithmetic when t is complex (complex-step
        time derivatives)."""
        eye = np.eye(self.dim)
        m = eye + (t * t) * self.s
        rhs = np.concatenate([eye, eye + self.s], axis=1).astype(m.dtype)
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedError(f"I + t^2 S singular at t = {t}") from exc
        if not np.all(np.isfinite(sol.real)):
            raise IllConditionedError(f"I + t^2 S ill-conditioned at t = {t}")
        return sol[:, : self.dim], sol[:, self.dim :]

    def _forward_parts(self, x, t):
        a, a_sigma = self._solve_pair(t)
        mu_bar = t * (x @ a_sigma.T)
        sbar_diag = (1.0 - t * t) * np.diag(a_sigma)
        denom = (1.0 - t * t) ** 2
        f = (
            t * (1.0 - t * t)
            - t * (mu_bar * mu_bar + sbar_diag)
            - t * x * x
            + (t * t + 1.0) * x * mu_bar
        ) / denom
        return f, mu_bar, a, a_sigma

    def predict_vec(self, x, t):
        """Per-dimension marginal time score at scalar time t, batched."""
        f, _, _, _ = self._forward_parts(np.asarray(x, dtype=float), float(t))
        return f

    def predict_scalar(self, x, t):
        return np.sum(self.predict_vec(x, t), axis=-1)

    def grad_s(self, x, t, upstream, complex_t=False):
        """Gradient of sum_b upstream_b . f(x_b, t) with respect to S.

        With complex_t the forward runs at t + i h and the imaginary part
        of the gradient over h is returned: the parameter gradient of
        df/dt, needed by the integration-by-parts objective.
        """
        x = np.asarray(x, dtype=float)
        h = 1e-20
        t_eval = t + 1j * h if complex_t else float(t)
        f, mu_bar, a, a_sigma = self._forward_parts(x, t_eval)
        denom = (1.0 - t_eval * t_eval) ** 2
        u = upstream * (-2.0 * t_eval * mu_bar + (t_eval * t_eval + 1.0) * x) / denom
        v = (-t_eval / denom) * np.sum(upstream, axis=0)
        g1 = t_eval * a @ (u.T @ (x - t_eval * mu_bar))
        g2 = (1.0 - t_eval * t_eval) * (a * v[None, :]) @ (
            np.eye(self.dim) - (t_eval * t_eval) * a_sigma.T
        )
        grad = g1 + g2
        grad = 0.5 * (grad + grad.T)
        if complex_t:
            return grad.imag / h, f.real, f.imag / h
        return grad, f, None


def _vec_targets(x, z, t):
    # conditional per-entry score of N(t z, (1 - t^2) I)
    k = 1.0 - t * t
    diff = x - t * z
    return t / k - t * diff * diff / (k * k) + diff * z / k


@dataclass
class MiTrainConfig:
    lr: float
    batch_size: int
    n_iters: int
    seed: int = 0
    eval_every: int = 2000
    n_time_groups: int = 32
    lr_schedule: str = "constant"


@dataclass
class MiTrainResult:
    model: MiModel
    trace: list = field(default_factory=list)
    n_skipped_steps: int = 0


def train_mi(
    model: MiModel,
    p1,
    objective: str,
    scheme,
    config: MiTrainConfig,
    eval_fn=None,
) -> MiTrainResult:
    """Fit S by one of the three objectives.

    Times are drawn in ``n_time_groups`` shared values per batch (still
    uniform marginally) so the matrix solves amortize across the batch.
    Steps hitting an ill-conditioned I + t^2 S are skipped and counted.
    """
    if objective not in ("ctsm", "ctsm_v", "tsm"):
        raise ValueError(f"unknown objective {objective!r}")
    if isinstance(scheme, ImportanceSampled):
        raise ValueError("importance sampling is not wired up for the MI model")
    dim = model.dim
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(model.s.ravel(), config.lr)
    result = MiTrainResult(model=model)
    # the MI path is the VP path with alpha_t = t
    path = VPPath(dim=dim)
    t_lo, t_hi = path.t_min, path.t_max
    n_groups = min(config.n_time_groups, config.batch_size)
    group_size = config.batch_size // n_groups

    window_losses = []
    t_window = time.perf_counter()
    for step in range(1, config.n_iters + 1):
        ts = rng.uniform(t_lo, t_hi, n_groups)
        try:
            loss, grad = _mi_loss_step(
                model, p1, objective, scheme, path, ts, group_size, rng
            )
        except IllConditionedError:
            result.n_skipped_steps += 1
            continue
        if not np.isfinite(loss):
            err = DivergenceError(f"loss became non-finite at step {step}")
            err.trace = result.trace
            raise err
        state.lr = lr_at(config, step)
        flat = adam_step(state, model.s.ravel(), grad.ravel())
        model.s = flat.reshape(dim, dim)
        window_losses.append(loss)
        if step % config.eval_every == 0 or step == config.n_iters:
            val = float(eval_fn(model, step)) if eval_fn is not None else float("nan")
            wall_ms = (time.perf_counter() - t_window) * 1000.0 / max(len(window_losses), 1)
            result.trace.append(
                TraceRow(step=step, loss=float(np.mean(window_losses)), val_metric=val, wall_ms=wall_ms)
            )
            window_losses = []
            t_window = time.perf_counter()
    return result


def _mi_loss_step(model, p1, objective, scheme, path, ts, group_size, rng):
    dim = model.dim
    n_total = ts.shape[0] * group_size
    loss = 0.0
    grad = np.zeros((dim, dim))

    if objective == "tsm":
        lam = scheme.weight(path, ts)
        lam_dot = scheme.weight_dot(path, ts)
        for t, l, ld in zip(ts, lam, lam_dot):
            z = p1.sample(rng, group_size)
            x = t * z + np.sqrt(1.0 - t * t) * rng.standard_normal((group_size, dim))
            f = model.predict_vec(x, t)
            g = np.sum(f, axis=-1)
            gdot_grad, f_re, fdot = model.grad_s(
                x, t, np.full((group_size, dim), 2.0 / n_total), complex_t=True
            )
            gdot = np.sum(fdot, axis=-1)
            loss += np.sum(2.0 * gdot + 2.0 * ld * g + l * g * g) / n_total
            grad += gdot_grad
            q = ((2.0 * ld + 2.0 * l * g) / n_total)[:, None] * np.ones(dim)
            g_val, _, _ = model.grad_s(x, t, q)
            grad += g_val
        # boundary terms at the clipped endpoints
        for sign, t_b, draw in ((2.0, EPS_TIME, None), (-2.0, 1.0 - EPS_TIME, p1)):
            n_b = n_total
            xb = rng.standard_normal((n_b, dim)) if draw is None else draw.sample(rng, n_b)
            fb = model.predict_vec(xb, t_b)
            loss += sign * np.mean(np.sum(fb, axis=-1))
            g_b, _, _ = model.grad_s(xb, t_b, np.full((n_b, dim), sign / n_b))
            grad += g_b
        grad = 0.5 * (grad + grad.T)
        return loss, grad

    lam = scheme.weight(path, ts)
    for t, l in zip(ts, lam):
        z = p1.sample(rng, group_size)
        x = t * z + np.sqrt(1.0 - t * t) * rng.standard_normal((group_size, dim))
        y = _vec_targets(x, z, t)
        f = model.predict_vec(x, t)
        if objective == "ctsm":
            resid = np.sum(f - y, axis=-1)
            loss += l * np.sum(resid * resid) / n_total
            q = (2.0 * l * resid / n_total)[:, None] * np.ones(dim)
        else:
            resid = f - y
            loss += l * np.sum(resid * resid) / n_total
            q = 2.0 * l * resid / n_total
        g, _, _ = model.grad_s(x, t, q)
        grad += g
    return loss, grad


def estimate_mi(model: MiModel, p1, n_eval: int, rng, rtol=1e-6, atol=1e-6):
    """Average integrated score over fresh target samples: the MI in nats."""
    x = p1.sample(rng, n_eval)
    values, n_evals = log_ratio_adaptive_batch(
        lambda xs, t: model.predict_scalar(xs, t), x, rtol=rtol, atol=atol
    )
    return float(np.mean(values)), n_evals
