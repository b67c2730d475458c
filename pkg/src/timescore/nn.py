"""A small fully-connected time-score network with exactly the
differentiation modes the training objectives need:

* reverse-mode gradients with respect to the flat parameter vector,
* an exact forward-mode derivative with respect to the time input,
  whose parameter gradient is itself computable (the integration-by-parts
  objective differentiates d s/dt in the parameters), and
* the Jacobian with respect to the spatial input x.

The time derivative is handled by propagating (value, t-tangent) pairs
through every layer and running the reverse sweep over that doubled
computation, which needs the second derivative of the activation but no
general-purpose autodiff.  Inputs are [x; t] concatenated; hidden layers
use ELU, the output layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_HIDDEN = (256, 256, 256)


def _elu_pieces(a):
    # exp clamped at 0 so the positive branch cannot overflow
    e = np.exp(np.minimum(a, 0.0))
    pos = a > 0.0
    value = np.where(pos, a, e - 1.0)
    d1 = np.where(pos, 1.0, e)
    d2 = np.where(pos, 0.0, e)
    return value, d1, d2


class ScoreNet:
    """MLP s(x, t) with layer sizes [D+1, hidden..., n_out].

    Parameters live in one flat float64 vector; per-layer weight and bias
    views alias into it so optimizer updates stay O(1) in bookkeeping.
    Hidden initialization is uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    reproducible from ``seed``.

    ``normalize_target`` records that the model was trained against
    targets divided by their per-time standard deviation; prediction
    helpers use it to scale outputs back.
    """

    def __init__(self, dim, n_out, hidden=DEFAULT_HIDDEN, seed=0, normalize_target=False):
        self.dim = int(dim)
        self.n_out = int(n_out)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = int(seed)
        self.normalize_target = bool(normalize_target)
        self.layer_sizes = [self.dim + 1, *self.hidden, self.n_out]
        self._offsets = []
        total = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self._offsets.append((total, fan_in, fan_out))
            total += fan_in * fan_out + fan_out
        self.n_params = total
        self.params = self._init_params(self.seed)

    def _init_params(self, seed):
        rng = np.random.default_rng(seed)
        params = np.empty(self.n_params)
        for off, fan_in, fan_out in self._offsets:
            bound = 1.0 / np.sqrt(fan_in)
            size = fan_in * fan_out + fan_out
            params[off : off + size] = rng.uniform(-bound, bound, size)
        return params

    def _layers(self, params=None):
        p = self.params if params is None else params
        out = []
        for off, fan_in, fan_out in self._offsets:
            w = p[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
            b = p[off + fan_in * fan_out : off + fan_in * fan_out + fan_out]
            out.append((w, b))
        return out

    @staticmethod
    def _stack_inputs(x, t):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        t2 = np.broadcast_to(np.asarray(t, dtype=float), (x2.shape[0],))
        h = np.concatenate([x2, t2[:, None]], axis=1)
        return h, single

    def forward(self, x, t):
        """Evaluate the network; returns shape (..., n_out)."""
        h, single = self._stack_inputs(x, t)
        layers = self._layers()
        for w, b in layers[:-1]:
            h, _, _ = _elu_pieces(h @ w + b)
        w, b = layers[-1]
        y = h @ w + b
        return y[0] if single else y

    def _forward_cached(self, x, t, with_tangent):
        h, single = self._stack_inputs(x, t)
        u = None
        if with_tangent:
            u = np.zeros_like(h)
            u[:, -1] = 1.0
        layers = self._layers()
        caches = []
        for w, b in layers[:-1]:
            a = h @ w + b
            ua = u @ w if with_tangent else None
            value, d1, d2 = _elu_pieces(a)
            caches.append((h, u, d1, d2, ua))
            h = value
            u = d1 * ua if with_tangent else None
        w, b = layers[-1]
        y = h @ w + b
        uy = u @ w if with_tangent else None
        return h, u, y, uy, caches, single

    def dt_forward(self, x, t):
        """Value and exact d/dt of the output with respect to the time slot."""
        _, _, y, uy, _, single = self._forward_cached(x, t, with_tangent=True)
        return (y[0], uy[0]) if single else (y, uy)

    def forward_with_cache(self, x, t, with_tangent=False):
        """Forward pass keeping the activations needed for one backward
        sweep; returns (value, tangent-or-None, cache).  Lets a loss reuse
        the forward instead of recomputing it inside ``grad_params``."""
        h_last, u_last, y, uy, caches, single = self._forward_cached(x, t, with_tangent)
        ctx = (h_last, u_last, caches, single, with_tangent)
        return y, uy, ctx

    def grad_from_cache(self, ctx, upstream, upstream_dt=None):
        """Backward sweep over a cached forward; see ``grad_params``."""
        h_last, u_last, caches, single, had_tangent = ctx
        with_tangent = upstream_dt is not None
        if with_tangent and not had_tangent:
            raise ValueError("cache was built without tangent propagation")
        gy = np.asarray(upstream, dtype=float)
        if single:
            gy = gy[None, :]
        if gy.ndim == 1:
            gy = gy[:, None]
        guy = None
        if with_tangent:
            guy = np.asarray(upstream_dt, dtype=float)
            if single:
                guy = guy[None, :]
            if guy.ndim == 1:
                guy = guy[:, None]

        grad = np.zeros(self.n_params)
        layers = self._layers()
        grads_w = [None] * len(layers)
        grads_b = [None] * len(layers)

        w, _ = layers[-1]
        grads_w[-1] = h_last.T @ gy
        grads_b[-1] = gy.sum(axis=0)
        if with_tangent:
            grads_w[-1] += u_last.T @ guy
        gh = gy @ w.T
        gu = guy @ w.T if with_tangent else None

        for idx in range(len(layers) - 2, -1, -1):
            h_prev, u_prev, d1, d2, ua = caches[idx]
            w, _ = layers[idx]
            if with_tangent:
                ga = d1 * gh + d2 * ua * gu
                gua = d1 * gu
                grads_w[idx] = h_prev.T @ ga + u_prev.T @ gua
                gu = gua @ w.T
            else:
                ga = d1 * gh
                grads_w[idx] = h_prev.T @ ga
            grads_b[idx] = ga.sum(axis=0)
            gh = ga @ w.T

        for (off, fan_in, fan_out), gw, gb in zip(self._offsets, grads_w, grads_b):
            grad[off : off + fan_in * fan_out] = gw.ravel()
            grad[off + fan_in * fan_out : off + fan_in * fan_out + fan_out] = gb
        return grad

    def grad_params(self, x, t, upstream, upstream_dt=None):
        """Reverse-mode gradient of sum_b [u_b . s(x_b, t_b) (+ v_b . ds/dt)].

        ``upstream`` (and optionally ``upstream_dt`` for the time-tangent
        output) weight the network outputs; a batch returns the summed
        gradient, matching what a mean-reduced loss needs after scaling.
        """
        _, _, ctx = self.forward_with_cache(x, t, with_tangent=upstream_dt is not None)
        return self.grad_from_cache(ctx, upstream, upstream_dt)

    def grad_x(self, x, t):
        """Jacobian of the output in x, shape (..., n_out, D)."""
        h, single = self._stack_inputs(x, t)
        n = h.shape[0]
        jac = np.zeros((n, self.dim, self.dim + 1))
        jac[:, np.arange(self.dim), np.arange(self.dim)] = 1.0
        layers = self._layers()
        for w, b in layers[:-1]:
            a = h @ w + b
            value, d1, _ = _elu_pieces(a)
            jac = d1[:, None, :] * (jac @ w)
            h = value
        w, _ = layers[-1]
        jac = (jac @ w).transpose(0, 2, 1)
        return jac[0] if single else jac


class DivergenceError(RuntimeError):
    """Raised when optimization hits non-finite gradients or losses."""


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment optimizer state."""

    m: np.ndarray
    v: np.ndarray
    lr: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr):
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), lr=lr)


def adam_step(state: AdamState, params, grad):
    """One Adam update; mutates ``state`` and returns the new parameters."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(
            f"non-finite gradient at optimizer step {state.step + 1}; training aborted"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def save_checkpoint(net: ScoreNet, path):
    """Write a JSON header line plus the little-endian float64 parameter blob."""
    header = {
        "layer_sizes": net.layer_sizes,
        "n_out": net.n_out,
        "seed": net.seed,
        "normalize_target": net.normalize_target,
        "n_params": net.n_params,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(net.params.astype("<f8").tobytes())


def load_checkpoint(path) -> ScoreNet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        blob = fh.read()
    sizes = header["layer_sizes"]
    net = ScoreNet(
        dim=sizes[0] - 1,
        n_out=header["n_out"],
        hidden=tuple(sizes[1:-1]),
        seed=header["seed"],
        normalize_target=header["normalize_target"],
    )
    params = np.frombuffer(blob, dtype="<f8").astype(float)
    if params.shape[0] != header["n_params"] or params.shape[0] != net.n_params:
        raise ValueError("checkpoint parameter count does not match its header")
    net.params = params
    return net
