"""Weighting functions lambda(t) and the importance-sampled time distribution.

Time-score regression is a continuum of tasks indexed by t whose target
variances differ by orders of magnitude; lambda(t) balances them.

* ``Uniform``          -- lambda = 1.
* ``SteinNorm``        -- lambda = k_t, the inverse variance of a
  conditional Stein-score component.
* ``TimeNorm``         -- lambda = inverse per-dimension variance of the
  conditional time score, 1 / (2 a^2 + b^2 c).  The statistic
  c = (trace(Sigma) + |mu|^2) / D comes from the endpoint distribution;
  c = 1 holds exactly for standardized data and is the practical default.
* ``ImportanceSampled``-- draws t from a density proportional to that
  variance (VP path with alpha_t = t, c = 1) via an inverse CDF, so the
  expected per-sample loss contribution is flat in t while the effective
  weighting stays roughly uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import EPS_TIME, VPPath, time_score_ab, time_score_ab_dot


class UnsupportedSchemeError(ValueError):
    """Raised when a scheme lacks the operation a loss requires."""


def c_statistic(mean, cov_trace, dim: int) -> float:
    """c = (trace(Sigma) + |mu|^2) / D for the standardized endpoint variable."""
    return float((cov_trace + np.sum(np.square(mean))) / dim)


def time_score_var_per_dim(path, t, c):
    """Per-dimension variance of the conditional time score, 2 a^2 + b^2 c."""
    a, b = time_score_ab(path, t)
    return 2.0 * a * a + b * b * c


def lambda_stein(path, t):
    """Stein-score normalization: lambda(t) = k_t."""
    return path.cond_var(t)


def lambda_time(path, t, c=1.0):
    """Time-score normalization: reciprocal per-dimension target variance.

    For the VP path this is the closed form
    (1 - alpha^2)^2 / (2 alpha^2 alpha'^2 + alpha'^2 (1 - alpha^2) c).
    """
    if c <= 0.0:
        raise ValueError(f"c must be positive, got {c}")
    return 1.0 / time_score_var_per_dim(path, t, c)


def lambda_time_dot(path, t, c=1.0):
    """Analytic d/dt of ``lambda_time'' via the (a, b) decomposition."""
    a, b = time_score_ab(path, t)
    a_dot, b_dot = time_score_ab_dot(path, t)
    var = 2.0 * a * a + b * b * c
    return -(4.0 * a * a_dot + 2.0 * b * b_dot * c) / (var * var)


@dataclass(frozen=True)
class Uniform:
    kind = "uniform"

    def weight(self, path, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def weight_dot(self, path, t):
        return np.zeros_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class SteinNorm:
    kind = "stein"

    def weight(self, path, t):
        return lambda_stein(path, t)

    def weight_dot(self, path, t):
        return path.cond_var_dot(t)


@dataclass(frozen=True)
class TimeNorm:
    kind = "time"
    c: float = 1.0

    def weight(self, path, t):
        return lambda_time(path, t, self.c)

    def weight_dot(self, path, t):
        return lambda_time_dot(path, t, self.c)


def importance_sample_t(t1, u, eps_time=EPS_TIME):
    """Map uniform u in [0, 1] to t in [0, 1 - eps_time] via the inverse CDF.

    The target density on [0, t1] is proportional to (1 + t^2)/(1 - t^2)^2,
    the per-dimension time-score variance of the VP path with alpha_t = t
    and c = 1.  Its CDF is y(t) = t / (Z (1 - t^2)) with Z = t1/(1 - t1^2),
    inverted as t = 2 y Z / (sqrt(1 + 4 y^2 Z^2) + 1); the draw is then
    rescaled from [0, t1] onto [0, 1 - eps_time].
    """
    if not 0.0 < t1 < 1.0:
        raise ValueError(f"t1 must lie in (0, 1), got {t1}")
    u = np.asarray(u, dtype=float)
    z_norm = t1 / (1.0 - t1 * t1)
    yz = u * z_norm
    t_raw = 2.0 * yz / (np.sqrt(1.0 + 4.0 * yz * yz) + 1.0)
    return t_raw * (1.0 - eps_time) / t1


def importance_time_cdf(t, t1, eps_time=EPS_TIME):
    """CDF of the rescaled importance-sampling time distribution."""
    t = np.asarray(t, dtype=float)
    t_raw = np.clip(t * t1 / (1.0 - eps_time), 0.0, t1)
    z_norm = t1 / (1.0 - t1 * t1)
    return t_raw / ((1.0 - t_raw * t_raw) * z_norm)


@dataclass(frozen=True)
class ImportanceSampled:
    kind = "importance"
    t1: float = 0.9

    def sample_times(self, rng, n):
        return importance_sample_t(self.t1, rng.random(n))

    def weight(self, path, t):
        # Per-sample multiplier matching the sampling density, so weight(t)
        # times the target variance is constant across t.  Derived for the
        # VP path; the SB path has no such scheme.
        if not isinstance(path, VPPath):
            raise UnsupportedSchemeError(
                "importance-sampled weighting is only defined for the VP path"
            )
        return lambda_time(path, t, c=1.0)

    def weight_dot(self, path, t):
        raise UnsupportedSchemeError(
            "importance-sampled weighting has no dlambda/dt; "
            "use a direct scheme (uniform, stein, time) for objectives that need it"
        )


def make_scheme(kind: str, c: float = 1.0, t1: float = 0.9):
    if kind == "uniform":
        return Uniform()
    if kind == "stein":
        return SteinNorm()
    if kind == "time":
        return TimeNorm(c=c)
    if kind == "importance":
        return ImportanceSampled(t1=t1)
    raise ValueError(f"unknown weighting scheme {kind!r}")
