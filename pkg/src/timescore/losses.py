"""Training objectives for time-score models.

Three minibatch estimators, each returning (loss value, parameter
gradient):

* ``loss_ctsm``    -- weighted L2 regression of a scalar network onto the
  conditional time score.
* ``loss_ctsm_v``  -- the vectorized variant: a D-output network regressed
  onto the per-dimension decomposition of the conditional score; summing
  the trained outputs recovers the time score.
* ``loss_tsm``     -- the integration-by-parts objective, which avoids
  conditional targets entirely at the cost of differentiating the network
  in time inside the loss.  Its dlambda/dt term carries coefficient 2; a
  knob exposes the off-by-one variant so the check suite can prove the
  gradient-equivalence test catches it.

All three are plain functions of any model exposing ``forward`` /
``grad_params`` (and ``dt_forward`` for TSM), so oracle stubs can stand in
for networks in tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .nn import AdamState, DivergenceError, adam_step
from .paths import (
    EPS_TIME,
    VPPath,
    cond_time_score,
    cond_time_score_vec,
    make_path_sample,
)
from .weighting import ImportanceSampled, time_score_var_per_dim


class DegenerateBatchError(RuntimeError):
    """More than 10% of a batch produced non-finite regression targets."""


@dataclass
class Batch:
    """A minibatch of path samples (arrays batched over the first axis),
    plus optional endpoint batches for the boundary terms of TSM."""

    path: object
    t: np.ndarray
    z: object
    x: np.ndarray
    eps: np.ndarray
    x0: np.ndarray | None = None
    x1: np.ndarray | None = None


def draw_batch(path, endpoint_sampler, n, rng, scheme=None, boundary_samplers=None) -> Batch:
    """Draw (t, z, x) tuples; times are uniform on the clipped domain
    unless the scheme is importance-sampled."""
    if isinstance(scheme, ImportanceSampled):
        t = scheme.sample_times(rng, n)
        t = np.clip(t, path.t_min, path.t_max)
    else:
        t = rng.uniform(path.t_min, path.t_max, n)
    z = endpoint_sampler(rng, n)
    eps = rng.standard_normal((n, path.dim))
    sample = make_path_sample(path, z, t, eps)
    x0 = x1 = None
    if boundary_samplers is not None:
        p0_sampler, p1_sampler = boundary_samplers
        x0 = p0_sampler(rng, n)
        x1 = p1_sampler(rng, n)
    return Batch(path=path, t=t, z=z, x=sample.x, eps=eps, x0=x0, x1=x1)


class LossOutput(NamedTuple):
    loss: float
    grad: np.ndarray
    n_rejected: int = 0


def regression_loss(net, x, t, targets, weights) -> LossOutput:
    """Mean-reduced weighted L2 loss sum_b w_b |target_b - s(x_b, t_b)|^2 / B
    and its parameter gradient, sharing one forward pass between the two."""
    n = x.shape[0]
    s, _, ctx = net.forward_with_cache(x, t)
    resid = targets - s
    loss = float(np.mean(weights * np.sum(resid * resid, axis=-1)))
    upstream = -2.0 * weights[:, None] * resid / n
    return LossOutput(loss=loss, grad=net.grad_from_cache(ctx, upstream))


def _target_scale(path, t, n_out):
    """Std of the (scalar or per-dimension) conditional target at c = 1."""
    per_dim = np.sqrt(time_score_var_per_dim(path, t, c=1.0))
    return per_dim * np.sqrt(path.dim) if n_out == 1 else per_dim


def _masked_batch(batch, targets):
    finite = np.isfinite(targets)
    mask = finite if targets.ndim == 1 else np.all(finite, axis=-1)
    n_rejected = int(batch.t.shape[0] - mask.sum())
    if n_rejected > 0.1 * batch.t.shape[0]:
        raise DegenerateBatchError(
            f"{n_rejected}/{batch.t.shape[0]} samples had degenerate targets; step aborted"
        )
    return mask, n_rejected


def loss_ctsm(net, batch: Batch, scheme) -> LossOutput:
    """Conditional time-score regression for a scalar-output model."""
    path = batch.path
    targets = cond_time_score(path, batch.x, batch.z, batch.t)
    mask, n_rejected = _masked_batch(batch, targets)
    t, x, targets = batch.t[mask], batch.x[mask], targets[mask]
    if net.normalize_target:
        targets = targets / _target_scale(path, t, 1)
    w = scheme.weight(path, t)
    out = regression_loss(net, x, t, targets[:, None], w)
    return LossOutput(out.loss, out.grad, n_rejected)


def loss_ctsm_v(net, batch: Batch, scheme) -> LossOutput:
    """Vectorized conditional regression for a D-output model."""
    path = batch.path
    targets = cond_time_score_vec(path, batch.x, batch.z, batch.t)
    mask, n_rejected = _masked_batch(batch, targets)
    t, x, targets = batch.t[mask], batch.x[mask], targets[mask]
    if net.normalize_target:
        targets = targets / _target_scale(path, t, path.dim)[:, None]
    w = scheme.weight(path, t)
    out = regression_loss(net, x, t, targets, w)
    return LossOutput(out.loss, out.grad, n_rejected)


def loss_tsm(net, batch: Batch, scheme, lambda_dot_coeff: float = 2.0) -> LossOutput:
    """Integration-by-parts objective:

        2 E_p0[s(x, eps)] - 2 E_p1[s(x, 1-eps)]
        + E[2 ds/dt + 2 dlambda/dt s + lambda s^2].

    ``lambda_dot_coeff`` must stay at 2 for the objective to match the
    conditional losses up to a constant; the value 1 reproduces a known
    incorrect scaling and exists only so regression checks can inject it.
    """
    if batch.x0 is None or batch.x1 is None:
        raise ValueError("the integration-by-parts objective needs endpoint batches")
    if getattr(net, "normalize_target", False):
        raise ValueError("normalized-target models are not supported by this objective")
    path = batch.path
    lam = scheme.weight(path, batch.t)
    lam_dot = scheme.weight_dot(path, batch.t)

    t_lo, t_hi = EPS_TIME, 1.0 - EPS_TIME
    n0, n1, n = batch.x0.shape[0], batch.x1.shape[0], batch.t.shape[0]
    y0, _, ctx0 = net.forward_with_cache(batch.x0, t_lo)
    y1, _, ctx1 = net.forward_with_cache(batch.x1, t_hi)
    y, ydot, ctx = net.forward_with_cache(batch.x, batch.t, with_tangent=True)
    s, s_dot = y[:, 0], ydot[:, 0]

    loss = (
        2.0 * y0[:, 0].mean()
        - 2.0 * y1[:, 0].mean()
        + np.mean(2.0 * s_dot + lambda_dot_coeff * lam_dot * s + lam * s * s)
    )
    grad = net.grad_from_cache(ctx0, np.full((n0, 1), 2.0 / n0))
    grad += net.grad_from_cache(ctx1, np.full((n1, 1), -2.0 / n1))
    grad += net.grad_from_cache(
        ctx,
        ((lambda_dot_coeff * lam_dot + 2.0 * lam * s) / n)[:, None],
        upstream_dt=np.full((n, 1), 2.0 / n),
    )
    return LossOutput(float(loss), grad, 0)


LOSSES = {"ctsm": loss_ctsm, "ctsm_v": loss_ctsm_v, "tsm": loss_tsm}


def predict_time_score(net, x, t, path=None):
    """Model's time-score prediction: the scalar output, or the sum of
    entries for vectorized models; rescaled if the model was trained on
    normalized targets."""
    y = net.forward(x, t)
    value = y[..., 0] if net.n_out == 1 else np.sum(y, axis=-1)
    if net.normalize_target:
        if path is None:
            raise ValueError("a normalized-target model needs its path to rescale")
        per_dim = np.sqrt(time_score_var_per_dim(path, np.asarray(t, dtype=float), c=1.0))
        value = value * (per_dim * np.sqrt(path.dim) if net.n_out == 1 else per_dim)
    return value


class NetScoreModel:
    """Adapter giving a trained network the (value, grad_x) interface the
    integration and sampling routines consume."""

    def __init__(self, net, path=None):
        self.net = net
        self.path = path

    def __call__(self, x, t):
        return predict_time_score(self.net, x, t, self.path)

    def grad_x(self, x, t):
        jac = self.net.grad_x(x, t)
        grad = np.sum(jac, axis=-2)
        if self.net.normalize_target:
            per_dim = np.sqrt(time_score_var_per_dim(self.path, float(t), c=1.0))
            grad = grad * (per_dim * np.sqrt(self.path.dim) if self.net.n_out == 1 else per_dim)
        return grad


class TraceRow(NamedTuple):
    step: int
    loss: float
    val_metric: float
    wall_ms: float


@dataclass
class TrainConfig:
    lr: float
    batch_size: int
    n_iters: int
    seed: int = 0
    eval_every: int = 1000
    # "cosine" anneals the step size to zero over the run, which collapses
    # the stochastic-gradient noise floor of a constant-rate run
    lr_schedule: str = "constant"


def lr_at(config: TrainConfig, step: int) -> float:
    if config.lr_schedule == "constant":
        return config.lr
    if config.lr_schedule == "cosine":
        return config.lr * 0.5 * (1.0 + np.cos(np.pi * step / config.n_iters))
    raise ValueError(f"unknown lr schedule {config.lr_schedule!r}")


@dataclass
class TrainResult:
    net: object
    trace: list = field(default_factory=list)
    n_rejected: int = 0
    n_skipped_steps: int = 0


def _standard_normal_sampler(dim):
    return lambda rng, n: rng.standard_normal((n, dim))


def train(
    net,
    path,
    endpoint_sampler,
    objective: str,
    scheme,
    config: TrainConfig,
    eval_fn=None,
    p0_sampler=None,
    p1_sampler=None,
) -> TrainResult:
    """Run the training loop; deterministic for a fixed config seed.

    ``eval_fn(net, step) -> float`` is called every ``eval_every`` steps
    (and at the last step); its value lands in the trace next to the mean
    loss since the previous evaluation.  Boundary samplers are only
    needed for the integration-by-parts objective; for VP paths they
    default to N(0, I) and the endpoint sampler itself.
    """
    if objective not in LOSSES:
        raise ValueError(f"unknown objective {objective!r}")
    loss_fn = LOSSES[objective]
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_params(net.params, config.lr)
    result = TrainResult(net=net)

    boundary = None
    if objective == "tsm":
        if p0_sampler is None:
            if not isinstance(path, VPPath):
                raise ValueError("boundary samplers are required for TSM off the VP path")
            p0_sampler = _standard_normal_sampler(path.dim)
        if p1_sampler is None:
            p1_sampler = endpoint_sampler
        boundary = (p0_sampler, p1_sampler)

    window_losses = []
    t_window = time.perf_counter()
    for step in range(1, config.n_iters + 1):
        batch = draw_batch(
            path, endpoint_sampler, config.batch_size, rng, scheme, boundary_samplers=boundary
        )
        try:
            out = loss_fn(net, batch, scheme)
        except DegenerateBatchError:
            result.n_skipped_steps += 1
            continue
        if not np.isfinite(out.loss):
            err = DivergenceError(f"loss became non-finite at step {step}")
            err.trace = result.trace
            raise err
        result.n_rejected += out.n_rejected
        state.lr = lr_at(config, step)
        try:
            net.params = adam_step(state, net.params, out.grad)
        except DivergenceError as err:
            err.trace = result.trace
            raise
        window_losses.append(out.loss)
        if step % config.eval_every == 0 or step == config.n_iters:
            val = float(eval_fn(net, step)) if eval_fn is not None else float("nan")
            wall_ms = (time.perf_counter() - t_window) * 1000.0 / max(len(window_losses), 1)
            result.trace.append(
                TraceRow(step=step, loss=float(np.mean(window_losses)), val_metric=val, wall_ms=wall_ms)
            )
            window_losses = []
            t_window = time.perf_counter()
    return result
