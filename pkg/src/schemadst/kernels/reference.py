"""Pure numpy implementations of the hot numeric kernels.

This is the fallback backend and the semantic reference the JIT backend is
benchmarked against. Every function is deterministic for fixed inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def layer_norm_forward(x, gamma, beta, eps):
    """Normalize the last axis. Returns (y, mean, rstd) for the backward pass."""
    mean = x.mean(axis=-1)
    var = np.square(x - mean[..., None]).mean(axis=-1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[..., None]) * rstd[..., None] * gamma + beta
    return y.astype(x.dtype, copy=False), mean, rstd


def layer_norm_backward(dy, x, gamma, mean, rstd):
    xhat = (x - mean[..., None]) * rstd[..., None]
    dgamma = (dy * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, x.shape[-1]).sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = rstd[..., None] * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype, copy=False), dgamma, dbeta


def gelu_forward(x):
    return (0.5 * x * (1.0 + erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)


def gelu_backward(dy, x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (dy * (cdf + x * pdf)).astype(x.dtype, copy=False)


def attention_softmax(scores, valid_lens):
    """Masked softmax over the last axis of [batch, heads, T, T] scores.

    Key positions at or beyond an example's valid length are excluded from the
    softmax; query rows at or beyond it come out as all-zero rows.
    """
    b, h, t, _ = scores.shape
    pos = np.arange(t)
    key_ok = pos[None, :] < valid_lens[:, None]            # [b, t]
    masked = np.where(key_ok[:, None, None, :], scores, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    e = np.exp(masked - m)
    probs = e / e.sum(axis=-1, keepdims=True)
    probs = np.where(key_ok[:, None, :, None], probs, 0.0)  # zero padded query rows
    return probs.astype(scores.dtype, copy=False)


def attention_softmax_backward(dprobs, probs):
    inner = (dprobs * probs).sum(axis=-1, keepdims=True)
    return (probs * (dprobs - inner)).astype(probs.dtype, copy=False)


def softmax_xent(logits, labels):
    """Row-wise cross entropy. Returns (loss[n], dlogits = softmax - onehot)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=-1)
    probs = e / z[:, None]
    n = logits.shape[0]
    rows = np.arange(n)
    loss = np.log(z) - shifted[rows, labels]
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    return loss.astype(logits.dtype, copy=False), dlogits.astype(logits.dtype, copy=False)


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, t):
    """One in-place Adam update with bias correction; t is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
