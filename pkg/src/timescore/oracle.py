"""Ground-truth machinery: analytic marginals, Monte-Carlo posterior scores,
finite-difference probes, and the quadratic-form variance identity.

For Gaussian (or Gaussian-mixture) endpoints the marginal p_t stays in the
mixture-of-Gaussians family along both path variants, so the marginal time
score d/dt log p_t(x) is available exactly.  These oracles anchor every
learned or estimated quantity in the test suite; none of them share code
with the estimators they validate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import SBPath, VPPath, check_time, cond_time_score


class UnsupportedPathError(ValueError):
    """Raised when an analytic oracle does not cover the requested path."""


def _logsumexp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


class GaussianSpec:
    """A Gaussian endpoint N(mean, cov).

    ``cov`` may be a positive scalar (isotropic), a length-D vector
    (diagonal), or a full SPD matrix; it is validated by Cholesky
    factorization at construction.
    """

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.dim = self.mean.shape[0]
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(self.dim)
        elif cov.ndim == 1:
            if cov.shape[0] != self.dim:
                raise ValueError("diagonal covariance length does not match mean")
            cov = np.diag(cov)
        elif cov.shape != (self.dim, self.dim):
            raise ValueError("covariance shape does not match mean")
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be symmetric positive definite") from exc
        self.cov = cov
        self.log_det = 2.0 * np.sum(np.log(np.diag(self.chol)))

    @property
    def cov_trace(self) -> float:
        return float(np.trace(self.cov))

    def logpdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x - self.mean
        r = np.linalg.solve(self.cov, diff.T).T
        quad = np.sum(diff * r, axis=-1)
        out = -0.5 * (self.dim * np.log(2.0 * np.pi) + self.log_det + quad)
        return out if out.shape[0] > 1 or np.ndim(x) > 1 else out[0]

    def sample(self, rng, n):
        return self.mean + rng.standard_normal((n, self.dim)) @ self.chol.T


class GmmSpec:
    """A finite Gaussian mixture with positive weights summing to one."""

    def __init__(self, weights, components):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0.0):
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to one")
        if len(components) != self.weights.shape[0]:
            raise ValueError("one weight per component required")
        self.components = list(components)
        self.dim = self.components[0].dim
        if any(c.dim != self.dim for c in self.components):
            raise ValueError("all components must share one dimensionality")

    @property
    def mean(self):
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def cov_trace(self) -> float:
        mu = self.mean
        total = 0.0
        for w, c in zip(self.weights, self.components):
            total += w * (c.cov_trace + float(np.sum((c.mean - mu) ** 2)))
        return total

    def logpdf(self, x):
        parts = np.stack(
            [np.log(w) + np.atleast_1d(c.logpdf(x)) for w, c in zip(self.weights, self.components)],
            axis=-1,
        )
        out = _logsumexp(parts, axis=-1)
        return out if np.ndim(x) > 1 else out[0]

    def sample(self, rng, n):
        idx = rng.choice(self.weights.shape[0], size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for j, comp in enumerate(self.components):
            mask = idx == j
            m = int(mask.sum())
            if m:
                out[mask] = comp.sample(rng, m)
        return out


def standard_normal(dim: int) -> GaussianSpec:
    return GaussianSpec(np.zeros(dim), 1.0)


def log_density(spec, x):
    """Log density of a GaussianSpec or GmmSpec, batched over rows of x."""
    return spec.logpdf(x)


def _component_list(spec):
    if isinstance(spec, GmmSpec):
        return list(spec.weights), spec.components
    return [1.0], [spec]


def _mixture_time_score(x, log_w, mus, covs, mu_dots, cov_dots, with_grad=False):
    """Score of log sum_j w_j N(x; mu_j(t), C_j(t)) in t, optionally with
    its x-gradient.  All component quantities are evaluated at a fixed t."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    n_comp = len(log_w)
    log_n = np.empty((n, n_comp))
    d_j = np.empty((n, n_comp))
    grad_logn = np.empty((n, n_comp, d)) if with_grad else None
    grad_dj = np.empty((n, n_comp, d)) if with_grad else None
    for j in range(n_comp):
        cov = covs[j]
        diff = x - mus[j]
        r = np.linalg.solve(cov, diff.T).T
        _, logdet = np.linalg.slogdet(cov)
        log_n[:, j] = -0.5 * (d * np.log(2.0 * np.pi) + logdet + np.sum(diff * r, axis=-1))
        tr = np.trace(np.linalg.solve(cov, cov_dots[j]))
        cr = r @ cov_dots[j].T
        d_j[:, j] = -0.5 * tr + r @ mu_dots[j] + 0.5 * np.sum(r * cr, axis=-1)
        if with_grad:
            grad_logn[:, j] = -r
            # d/dx [r.mu_dot + 0.5 r^T Cdot r] with r = C^{-1}(x - mu)
            grad_dj[:, j] = np.linalg.solve(cov, (mu_dots[j][:, None] + cov_dots[j] @ r.T)).T

    log_post = np.asarray(log_w) + log_n
    log_post -= _logsumexp(log_post, axis=-1)[:, None]
    resp = np.exp(log_post)
    score = np.sum(resp * d_j, axis=-1)
    if not with_grad:
        return score
    mean_grad_logn = np.sum(resp[:, :, None] * grad_logn, axis=1)
    grad = np.sum(
        resp[:, :, None] * (grad_dj + d_j[:, :, None] * (grad_logn - mean_grad_logn[:, None, :])),
        axis=1,
    )
    return score, grad


def _vp_components(p1, path: VPPath, t: float):
    a = float(path.schedule.alpha(t))
    ad = float(path.schedule.alpha_dot(t))
    eye = np.eye(path.dim)
    weights, comps = _component_list(p1)
    log_w = [np.log(w) for w in weights]
    mus = [a * c.mean for c in comps]
    covs = [a * a * c.cov + (1.0 - a * a) * eye for c in comps]
    mu_dots = [ad * c.mean for c in comps]
    cov_dots = [2.0 * a * ad * (c.cov - eye) for c in comps]
    return log_w, mus, covs, mu_dots, cov_dots


def _sb_components(p0, p1, path: SBPath, t: float):
    s2 = path.sigma**2
    eye = np.eye(path.dim)
    w0, c0 = _component_list(p0)
    w1, c1 = _component_list(p1)
    log_w, mus, covs, mu_dots, cov_dots = [], [], [], [], []
    for wi, ci in zip(w0, c0):
        for wj, cj in zip(w1, c1):
            log_w.append(np.log(wi) + np.log(wj))
            mus.append((1.0 - t) * ci.mean + t * cj.mean)
            covs.append((1.0 - t) ** 2 * ci.cov + t * t * cj.cov + t * (1.0 - t) * s2 * eye)
            mu_dots.append(cj.mean - ci.mean)
            cov_dots.append(-2.0 * (1.0 - t) * ci.cov + 2.0 * t * cj.cov + (1.0 - 2.0 * t) * s2 * eye)
    return log_w, mus, covs, mu_dots, cov_dots


def analytic_marginal_time_score(p1, path, x, t):
    """Exact d/dt log p_t(x) for the VP path with p0 = N(0, I) and p1
    Gaussian or a Gaussian mixture.

    The convolution stays in family: component means scale by alpha_t and
    covariances become alpha_t^2 Sigma + (1 - alpha_t^2) I, so the score
    follows from the chain rule through alpha_t.
    """
    if not isinstance(path, VPPath):
        raise UnsupportedPathError(
            "analytic marginal time scores are implemented for the VP path; "
            "use sb_marginal_time_score or the Monte-Carlo estimator otherwise"
        )
    check_time(path, t)
    return _mixture_time_score(x, *_vp_components(p1, path, float(t)))


def analytic_marginal_log_density(p1, path, x, t):
    """Exact log p_t(x) for the VP path; companion to the analytic score."""
    if not isinstance(path, VPPath):
        raise UnsupportedPathError("marginal log density in closed form needs the VP path")
    log_w, mus, covs, _, _ = _vp_components(p1, path, float(t))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    parts = np.empty((x.shape[0], len(log_w)))
    for j, (lw, mu, cov) in enumerate(zip(log_w, mus, covs)):
        diff = x - mu
        r = np.linalg.solve(cov, diff.T).T
        _, logdet = np.linalg.slogdet(cov)
        parts[:, j] = lw - 0.5 * (
            path.dim * np.log(2.0 * np.pi) + logdet + np.sum(diff * r, axis=-1)
        )
    return _logsumexp(parts, axis=-1)


def sb_marginal_time_score(p0, p1, path: SBPath, x, t):
    """Exact d/dt log p_t(x) for the SB path with mixture endpoints.

    Under the independent coupling the marginal is the mixture over
    endpoint-component pairs of N((1-t) m0 + t m1,
    (1-t)^2 S0 + t^2 S1 + t(1-t) sigma^2 I).
    """
    if not isinstance(path, SBPath):
        raise UnsupportedPathError("sb_marginal_time_score needs an SB path")
    check_time(path, t)
    return _mixture_time_score(x, *_sb_components(p0, p1, path, float(t)))


def sb_marginal_log_density(p0, p1, path: SBPath, x, t):
    log_w, mus, covs, _, _ = _sb_components(p0, p1, path, float(t))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    parts = np.empty((x.shape[0], len(log_w)))
    for j, (lw, mu, cov) in enumerate(zip(log_w, mus, covs)):
        diff = x - mu
        r = np.linalg.solve(cov, diff.T).T
        _, logdet = np.linalg.slogdet(cov)
        parts[:, j] = lw - 0.5 * (
            path.dim * np.log(2.0 * np.pi) + logdet + np.sum(diff * r, axis=-1)
        )
    return _logsumexp(parts, axis=-1)


class AnalyticScoreModel:
    """Callable oracle time score with spatial gradients.

    Construct from VP + target spec, or SB + both endpoint specs.  The
    interface (``model(x, t)`` and ``model.grad_x(x, t)``, both batched
    over rows of x at a fixed t) matches what the integration and
    sampling routines expect from a trained network.
    """

    def __init__(self, path, p1, p0=None):
        self.path = path
        self.p1 = p1
        self.p0 = p0
        if isinstance(path, SBPath) and p0 is None:
            raise ValueError("the SB oracle needs the reference endpoint p0")

    def _components(self, t):
        if isinstance(self.path, VPPath):
            return _vp_components(self.p1, self.path, float(t))
        return _sb_components(self.p0, self.p1, self.path, float(t))

    def __call__(self, x, t):
        return _mixture_time_score(x, *self._components(t))

    def grad_x(self, x, t):
        _, grad = _mixture_time_score(x, *self._components(t), with_grad=True)
        return grad


@dataclass
class McScore:
    """Self-normalized importance-sampling estimate of the marginal score."""

    value: float
    stderr: float
    ess: float
    low_ess: bool


def mc_marginal_time_score(path, z_sampler, x, t, n_mc, rng) -> McScore:
    """Posterior-mean estimate of d/dt log p_t(x) from the mixture identity.

    Draws z ~ p(z), weights each by p_t(x|z), and averages the conditional
    time score under the normalized weights.  Consistent with O(1/n) bias;
    the returned standard error is the delete-one jackknife, and an
    effective sample size below 10 sets the ``low_ess`` flag.
    """
    if n_mc < 1000:
        raise ValueError("use at least 1000 proposal draws for a usable estimate")
    check_time(path, t)
    x = np.asarray(x, dtype=float)
    z = z_sampler(rng, n_mc)
    k = float(path.cond_var(t))
    mu = path.mean(z, np.full(n_mc, float(t)))
    log_w = -0.5 * np.sum((x - mu) ** 2, axis=-1) / k
    log_w -= np.max(log_w)
    w = np.exp(log_w)
    f = cond_time_score(path, np.broadcast_to(x, mu.shape), z, np.full(n_mc, float(t)))

    sum_w = np.sum(w)
    sum_wf = np.sum(w * f)
    value = sum_wf / sum_w
    denom = sum_w - w
    # a draw carrying all the weight makes its delete-one estimate undefined
    safe = denom > 0.0
    loo = np.where(safe, (sum_wf - w * f) / np.where(safe, denom, 1.0), value)
    se = np.sqrt((n_mc - 1) / n_mc * np.sum((loo - loo.mean()) ** 2))
    ess = sum_w**2 / np.sum(w * w)
    return McScore(value=float(value), stderr=float(se), ess=float(ess), low_ess=bool(ess < 10))


def lemma1_variance(a, b, c, dim):
    """Var[a |eps|^2 + b eps.x] = 2 a^2 D + b^2 c D for eps ~ N(0, I_D)
    independent of x with c = (trace(Sigma) + |mu|^2)/D."""
    return 2.0 * a * a * dim + b * b * c * dim


def fd_time_score(log_density_fn, x, t, h=1e-5):
    """Central finite difference of a log density in t; validation probe."""
    return (log_density_fn(x, t + h) - log_density_fn(x, t - h)) / (2.0 * h)
