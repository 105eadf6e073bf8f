"""Forward/backward primitives: ReLU embedding, LSTM cell, attention, Gaussian head.

Conventions: inputs are row vectors, weights map (in, out), so a layer computes
``x @ w + b``.  Each ``*_backward`` consumes the cache returned by its forward
and the gradient of the loss w.r.t. the forward output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# embedding layer (linear + ReLU)


def embed(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """ReLU(x @ w + b).  x: (n, d_in) or (d_in,)."""
    x = np.atleast_2d(np.asarray(x))
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"embed: input dim {x.shape[1]} != weight rows {w.shape[0]}")
    z = x @ w + b
    out = np.maximum(z, 0.0)
    cache = (x, w, z > 0.0)
    return out, cache


def embed_backward(d_out: np.ndarray, cache):
    """Returns (d_x, d_w, d_b)."""
    x, w, active = cache
    dz = d_out * active
    return dz @ w.T, x.T @ dz, dz.sum(axis=0)


# ---------------------------------------------------------------------------
# LSTM cell


def lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              wx: np.ndarray, wh: np.ndarray, b: np.ndarray):
    """One step of a standard LSTM cell, batched over rows.

    Gate blocks in ``b``/weight columns are ordered input, forget, candidate,
    output.  Returns (h, c, cache).
    """
    x = np.atleast_2d(np.asarray(x))
    h_prev = np.atleast_2d(h_prev)
    c_prev = np.atleast_2d(c_prev)
    if not np.isfinite(x).all():
        raise ValueError("lstm_step: non-finite input")
    H = wh.shape[0]
    if wx.shape != (x.shape[1], 4 * H) or wh.shape != (H, 4 * H):
        raise ValueError("lstm_step: weight shapes disagree with state size")
    gates = x @ wx + h_prev @ wh + b
    i = sigmoid(gates[:, :H])
    f = sigmoid(gates[:, H:2 * H])
    g = np.tanh(gates[:, 2 * H:3 * H])
    o = sigmoid(gates[:, 3 * H:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = (x, h_prev, c_prev, i, f, g, o, tanh_c, wx, wh)
    return h, c, cache


def lstm_step_backward(d_h: np.ndarray, d_c: np.ndarray, cache):
    """Backward through one LSTM step.

    Returns (d_x, d_h_prev, d_c_prev, d_wx, d_wh, d_b).  ``d_c`` is the
    gradient flowing into the new cell state from later steps (may be zero).
    """
    x, h_prev, c_prev, i, f, g, o, tanh_c, wx, wh = cache
    d_o = d_h * tanh_c
    d_c_total = d_c + d_h * o * (1.0 - tanh_c ** 2)
    d_f = d_c_total * c_prev
    d_i = d_c_total * g
    d_g = d_c_total * i
    d_c_prev = d_c_total * f
    d_gates = np.concatenate([
        d_i * i * (1.0 - i),
        d_f * f * (1.0 - f),
        d_g * (1.0 - g ** 2),
        d_o * o * (1.0 - o),
    ], axis=1)
    d_x = d_gates @ wx.T
    d_h_prev = d_gates @ wh.T
    d_wx = x.T @ d_gates
    d_wh = h_prev.T @ d_gates
    d_b = d_gates.sum(axis=0)
    return d_x, d_h_prev, d_c_prev, d_wx, d_wh, d_b


# ---------------------------------------------------------------------------
# attention over spatial-edge hidden states


def attention(h_temporal: np.ndarray, h_spatial: np.ndarray, w_t: np.ndarray,
              w_s: np.ndarray, scale: str = "count_over_sqrt_dim"):
    """Softmax-weighted sum of spatial hidden states for one node.

    The query is the node's temporal hidden state and the keys are its
    outgoing spatial hidden states, each linearly projected to the attention
    dimension.  The exponent scale is ``m / sqrt(d)`` with m the neighbour
    count (``inv_sqrt_dim`` switches to the conventional ``1 / sqrt(d)``).
    With no neighbours the result is a zero vector.
    """
    h_spatial = np.asarray(h_spatial, dtype=np.float64).reshape(-1, w_s.shape[0]) \
        if np.size(h_spatial) else np.zeros((0, w_s.shape[0]))
    m = h_spatial.shape[0]
    if m == 0:
        return np.zeros(h_temporal.shape[-1]), None
    d_e = w_t.shape[1]
    factor = m / math.sqrt(d_e) if scale == "count_over_sqrt_dim" else 1.0 / math.sqrt(d_e)
    q = h_temporal @ w_t                      # (d_e,)
    k = h_spatial @ w_s                       # (m, d_e)
    logits = factor * (k @ q)                 # (m,)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    a = e / e.sum()
    out = a @ h_spatial                       # (hidden,)
    cache = (h_temporal, h_spatial, q, k, a, factor, w_t, w_s)
    return out, cache


def attention_backward(d_out: np.ndarray, cache):
    """Returns (d_h_temporal, d_h_spatial, d_w_t, d_w_s)."""
    h_t, h_s, q, k, a, factor, w_t, w_s = cache
    d_a = h_s @ d_out                              # (m,)
    d_h_s = np.outer(a, d_out)                     # weighted-sum path
    d_logits = a * (d_a - float(a @ d_a))          # softmax backward
    d_q = factor * (d_logits @ k)                  # (d_e,)
    d_k = factor * np.outer(d_logits, q)           # (m, d_e)
    d_h_t = d_q @ w_t.T
    d_w_t = np.outer(h_t, d_q)
    d_h_s += d_k @ w_s.T
    d_w_s = h_s.T @ d_k
    return d_h_t, d_h_s, d_w_t, d_w_s


def attention_weights(h_temporal: np.ndarray, h_spatial: np.ndarray, w_t: np.ndarray,
                      w_s: np.ndarray, scale: str = "count_over_sqrt_dim") -> np.ndarray:
    """The softmax weight vector alone (diagnostics and tests)."""
    _, cache = attention(h_temporal, h_spatial, w_t, w_s, scale)
    if cache is None:
        return np.zeros(0)
    return cache[4]


# ---------------------------------------------------------------------------
# bivariate Gaussian output head


@dataclass
class GaussianParams:
    """Bivariate Gaussian parameters; sigma positive and |rho| < 1 by the maps."""

    mu: np.ndarray     # (..., 2)
    sigma: np.ndarray  # (..., 2)
    rho: np.ndarray    # (...)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.mu, self.sigma, self.rho[..., None]], axis=-1)


def gaussian_head(h: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Linear readout to 5 channels, mapped to (mu, exp -> sigma, tanh -> rho)."""
    h = np.atleast_2d(h)
    raw = h @ w + b
    params = GaussianParams(mu=raw[:, 0:2].copy(), sigma=np.exp(raw[:, 2:4]),
                            rho=np.tanh(raw[:, 4]))
    cache = (h, w, params)
    return params, cache


def gaussian_head_backward(d_mu: np.ndarray, d_sigma: np.ndarray, d_rho: np.ndarray, cache):
    """Backward from Gaussian-parameter gradients.  Returns (d_h, d_w, d_b)."""
    h, w, params = cache
    d_raw = np.concatenate([
        d_mu,
        d_sigma * params.sigma,                      # d/draw exp(raw) = sigma
        (d_rho * (1.0 - params.rho ** 2))[:, None],  # d/draw tanh(raw)
    ], axis=1)
    return d_raw @ w.T, h.T @ d_raw, d_raw.sum(axis=0)
