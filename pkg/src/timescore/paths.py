"""Conditional Gaussian probability paths and their closed-form scores.

A path interpolates between a reference density p0 (t=0) and a target p1
(t=1) through conditionals p_t(x|z) = N(mu_t(z), k_t I).  Everything
needed for training a time-score model comes from this module: sampling
the conditional, and the analytic conditional time score, its
per-dimension vectorization, and the conditional Stein score.

Two variants are provided:

* ``VPPath``   -- variance-preserving: z = x1, mu_t = alpha_t x1,
  k_t = 1 - alpha_t^2, for a noise schedule alpha_t.
* ``SBPath``   -- bridge interpolation with independent endpoint coupling:
  z = (x0, x1), mu_t = (1-t) x0 + t x1, k_t = t (1-t) sigma^2.

All functions broadcast: ``x`` and ``z`` have shape (..., D) and ``t``
has shape (...,), so single points and batches share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Conditionals degenerate where k_t -> 0; times are clipped this far
# inside the degenerate endpoint(s), both in training and at inference.
EPS_TIME = 1e-5


class TimeDomainError(ValueError):
    """Raised for times outside a path's clipped domain, or k_t <= 0."""


@dataclass(frozen=True)
class LinearSchedule:
    """alpha_t = t (so k_t = 1 - t^2); the default for all toy tasks."""

    kind = "linear"

    def alpha(self, t):
        return np.asarray(t, dtype=float)

    def alpha_dot(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def alpha_ddot(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class ExponentialSchedule:
    """alpha_t = min(1, exp(-2 (T - t))) with horizon T in (0, 1].

    Note alpha(0) = exp(-2T) > 0, so the path does not start exactly at
    the reference density; the linear schedule is preferred in practice.
    The schedule saturates at alpha = 1 for t >= T, where the conditional
    variance vanishes, so a VP path built on it clips its domain at T.
    """

    kind = "exponential"
    horizon: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.horizon <= 1.0:
            raise ValueError(
                f"horizon must be in (0, 1] so that alpha(1) = 1, got {self.horizon}"
            )

    def alpha(self, t):
        t = np.asarray(t, dtype=float)
        return np.minimum(1.0, np.exp(-2.0 * (self.horizon - t)))

    def alpha_dot(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.horizon, 2.0 * self.alpha(t), 0.0)

    def alpha_ddot(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.horizon, 4.0 * self.alpha(t), 0.0)


def make_schedule(kind: str, horizon: float = 1.0):
    if kind == "linear":
        return LinearSchedule()
    if kind == "exponential":
        return ExponentialSchedule(horizon=horizon)
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class VPPath:
    """Variance-preserving path conditioned on the target endpoint x1."""

    dim: int
    schedule: LinearSchedule | ExponentialSchedule = LinearSchedule()

    variant = "vp"

    @property
    def t_min(self) -> float:
        # k_0 = 1 - alpha_0^2 > 0 for both schedules: no clipping needed at 0.
        return 0.0

    @property
    def t_max(self) -> float:
        saturation = getattr(self.schedule, "horizon", 1.0)
        return min(1.0, saturation) - EPS_TIME

    def mean(self, z, t):
        a = self.schedule.alpha(t)
        return np.asarray(a)[..., None] * np.asarray(z, dtype=float)

    def mean_dot(self, z, t):
        ad = self.schedule.alpha_dot(t)
        return np.asarray(ad)[..., None] * np.asarray(z, dtype=float)

    def cond_var(self, t):
        a = self.schedule.alpha(t)
        return 1.0 - a * a

    def cond_var_dot(self, t):
        a = self.schedule.alpha(t)
        return -2.0 * a * self.schedule.alpha_dot(t)

    def cond_var_ddot(self, t):
        a = self.schedule.alpha(t)
        ad = self.schedule.alpha_dot(t)
        return -2.0 * (ad * ad + a * self.schedule.alpha_ddot(t))

    def mean_rate_scale(self, t):
        """Scale m(t) with mu_dot = m(t) * xi for a standardized endpoint xi."""
        return self.schedule.alpha_dot(t)

    def mean_rate_scale_dot(self, t):
        return self.schedule.alpha_ddot(t)


@dataclass(frozen=True)
class SBPath:
    """Bridge path between sampled endpoint pairs, z = (x0, x1).

    The endpoint coupling is the product distribution p0 x p1.  The
    conditional variance t (1-t) sigma^2 vanishes at both ends, so the
    time domain is clipped on both sides.
    """

    dim: int
    sigma: float = 1.0

    variant = "sb"

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def t_min(self) -> float:
        return EPS_TIME

    @property
    def t_max(self) -> float:
        return 1.0 - EPS_TIME

    @staticmethod
    def _endpoints(z):
        x0, x1 = z
        return np.asarray(x0, dtype=float), np.asarray(x1, dtype=float)

    def mean(self, z, t):
        x0, x1 = self._endpoints(z)
        t = np.asarray(t, dtype=float)[..., None]
        return (1.0 - t) * x0 + t * x1

    def mean_dot(self, z, t):
        x0, x1 = self._endpoints(z)
        return x1 - x0

    def cond_var(self, t):
        t = np.asarray(t, dtype=float)
        return t * (1.0 - t) * self.sigma**2

    def cond_var_dot(self, t):
        t = np.asarray(t, dtype=float)
        return (1.0 - 2.0 * t) * self.sigma**2

    def cond_var_ddot(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, -2.0 * self.sigma**2)

    def mean_rate_scale(self, t):
        """mu_dot = sigma * xi with xi = (x1 - x0) / sigma standardized."""
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.sigma)

    def mean_rate_scale_dot(self, t):
        t = np.asarray(t, dtype=float)
        return np.zeros_like(t)


ConditionalGaussianPath = VPPath | SBPath


def check_time(path, t):
    """Validate that all times lie in the path's clipped domain."""
    t = np.asarray(t, dtype=float)
    if np.any(t < path.t_min - 1e-12) or np.any(t > path.t_max + 1e-12):
        raise TimeDomainError(
            f"time outside clipped domain [{path.t_min}, {path.t_max}] "
            f"for {path.variant} path: offending range "
            f"[{t.min():.6g}, {t.max():.6g}]"
        )
    return t


def _checked_var(path, t):
    k = path.cond_var(t)
    if np.any(k <= 0.0):
        raise TimeDomainError(
            f"conditional variance k_t <= 0 on the {path.variant} path "
            f"(min k = {np.min(k):.3g}); clip times away from the degenerate endpoint"
        )
    return k


@dataclass
class PathSample:
    """One draw (or a batch of draws) of (t, z, x) with x = mu_t(z) + sqrt(k_t) eps.

    ``eps`` is stored at construction rather than recomputed from x,
    which avoids catastrophic cancellation as k_t -> 0.
    """

    t: np.ndarray
    z: object
    x: np.ndarray
    eps: np.ndarray


def make_path_sample(path, z, t, eps) -> PathSample:
    """Deterministic sample constructor from given endpoint(s) and residual."""
    t = check_time(path, t)
    k = _checked_var(path, t)
    eps = np.asarray(eps, dtype=float)
    x = path.mean(z, t) + np.sqrt(k)[..., None] * eps
    return PathSample(t=t, z=z, x=x, eps=eps)


def sample_path(path, endpoint_sampler, t, rng) -> PathSample:
    """Simulate x ~ p_t(x|z) with z drawn from ``endpoint_sampler``.

    Parameters
    ----------
    endpoint_sampler : callable(rng, n) -> z
        Returns x1 of shape (n, D) for VP paths, or a pair (x0, x1) of
        such arrays for SB paths.
    t : scalar or (n,) array
        Times inside the clipped domain; a scalar yields a single,
        unbatched sample.
    """
    t = check_time(path, t)
    scalar = t.ndim == 0
    n = 1 if scalar else t.shape[0]
    z = endpoint_sampler(rng, n)
    eps = rng.standard_normal((n, path.dim))
    sample = make_path_sample(path, z, t if not scalar else np.full(1, float(t)), eps)
    if scalar:
        z_single = (z[0][0], z[1][0]) if isinstance(z, tuple) else z[0]
        return PathSample(t=float(t), z=z_single, x=sample.x[0], eps=sample.eps[0])
    return sample


def standardized_residual(path, x, z, t):
    """Recompute eps = (x - mu_t(z)) / sqrt(k_t); the sampling round trip."""
    t = np.asarray(t, dtype=float)
    k = _checked_var(path, t)
    return (np.asarray(x, dtype=float) - path.mean(z, t)) / np.sqrt(k)[..., None]


def cond_time_score(path, x, z, t):
    """d/dt log p_t(x|z), the scalar regression target.

    Equals -D kdot/(2k) + mu_dot . eps / sqrt(k) + kdot |eps|^2 / (2k)
    with eps the standardized residual.
    """
    t = check_time(path, t)
    k = _checked_var(path, t)
    kd = path.cond_var_dot(t)
    eps = standardized_residual(path, x, z, t)
    mu_dot = path.mean_dot(z, t)
    quad = np.sum(eps * eps, axis=-1)
    cross = np.sum(mu_dot * eps, axis=-1)
    return -path.dim * kd / (2.0 * k) + cross / np.sqrt(k) + kd * quad / (2.0 * k)


def cond_time_score_vec(path, x, z, t):
    """Per-dimension decomposition of the conditional time score.

    Entry i is -kdot/(2k) + mu_dot_i eps_i / sqrt(k) + kdot eps_i^2 / (2k);
    the entries sum to ``cond_time_score``.
    """
    t = check_time(path, t)
    k = _checked_var(path, t)
    kd = path.cond_var_dot(t)
    eps = standardized_residual(path, x, z, t)
    mu_dot = path.mean_dot(z, t)
    k_ = k[..., None] if np.ndim(k) else k
    kd_ = kd[..., None] if np.ndim(kd) else kd
    return -kd_ / (2.0 * k_) + mu_dot * eps / np.sqrt(k_) + kd_ * eps * eps / (2.0 * k_)


def cond_stein_score(path, x, z, t):
    """d/dx log p_t(x|z) = -eps / sqrt(k_t) = -(x - mu_t(z)) / k_t."""
    t = check_time(path, t)
    k = _checked_var(path, t)
    eps = standardized_residual(path, x, z, t)
    return -eps / np.sqrt(k)[..., None]


def time_score_ab(path, t):
    """Coefficients (a, b) of the stochastic part of the conditional score.

    The conditional time score decomposes as a deterministic term plus
    a |eps|^2 + b eps . xi, where eps ~ N(0, I) and xi is the standardized
    endpoint variable (x1 for VP, (x1 - x0)/sigma for SB).  These feed the
    variance formula 2 a^2 D + b^2 c D used by the time-score weighting.
    """
    t = np.asarray(t, dtype=float)
    k = _checked_var(path, t)
    a = path.cond_var_dot(t) / (2.0 * k)
    b = path.mean_rate_scale(t) / np.sqrt(k)
    return a, b


def time_score_ab_dot(path, t):
    """Time derivatives (da/dt, db/dt) of ``time_score_ab``."""
    t = np.asarray(t, dtype=float)
    k = _checked_var(path, t)
    kd = path.cond_var_dot(t)
    kdd = path.cond_var_ddot(t)
    m = path.mean_rate_scale(t)
    md = path.mean_rate_scale_dot(t)
    a_dot = (kdd * k - kd * kd) / (2.0 * k * k)
    b_dot = md / np.sqrt(k) - m * kd / (2.0 * k ** 1.5)
    return a_dot, b_dot
