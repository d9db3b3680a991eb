"""Numba-compiled twins of the reference kernels.

Same signatures and semantics as `reference`; compiled lazily on first call
and cached on disk. Each function is deterministic for fixed inputs, though
float rounding may differ from the numpy backend by ulps.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_OPTS = {"cache": True, "nogil": True}


@njit(**_OPTS)
def _layer_norm_forward_2d(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    mean = np.empty(n, x.dtype)
    rstd = np.empty(n, x.dtype)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        q = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            q += diff * diff
        r = 1.0 / math.sqrt(q / d + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mean[i]) * rstd[i] * gamma[j] + beta[j]
    return y, mean, rstd


@njit(**_OPTS)
def _layer_norm_backward_2d(dy, x, gamma, mean, rstd):
    n, d = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(d, x.dtype)
    dbeta = np.zeros(d, x.dtype)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xh = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            m1 += dxh
            m2 += dxh * xh
            dgamma[j] += dy[i, j] * xh
            dbeta[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xh = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = rstd[i] * (dxh - m1 - xh * m2)
    return dx, dgamma, dbeta


@njit(**_OPTS)
def _gelu_forward_1d(x):
    y = np.empty_like(x)
    for i in range(x.shape[0]):
        y[i] = 0.5 * x[i] * (1.0 + math.erf(x[i] * 0.7071067811865476))
    return y


@njit(**_OPTS)
def _gelu_backward_1d(dy, x):
    dx = np.empty_like(x)
    for i in range(x.shape[0]):
        cdf = 0.5 * (1.0 + math.erf(x[i] * 0.7071067811865476))
        pdf = 0.3989422804014327 * math.exp(-0.5 * x[i] * x[i])
        dx[i] = dy[i] * (cdf + x[i] * pdf)
    return dx


@njit(**_OPTS)
def _attention_softmax(scores, valid_lens):
    b, h, t, _ = scores.shape
    probs = np.zeros_like(scores)
    for bi in range(b):
        vl = valid_lens[bi]
        for hi in range(h):
            for q in range(vl):
                m = scores[bi, hi, q, 0]
                for k in range(1, vl):
                    if scores[bi, hi, q, k] > m:
                        m = scores[bi, hi, q, k]
                z = 0.0
                for k in range(vl):
                    e = math.exp(scores[bi, hi, q, k] - m)
                    probs[bi, hi, q, k] = e
                    z += e
                for k in range(vl):
                    probs[bi, hi, q, k] /= z
    return probs


@njit(**_OPTS)
def _attention_softmax_backward(dprobs, probs):
    b, h, t, _ = probs.shape
    dscores = np.empty_like(probs)
    for bi in range(b):
        for hi in range(h):
            for q in range(t):
                inner = 0.0
                for k in range(t):
                    inner += dprobs[bi, hi, q, k] * probs[bi, hi, q, k]
                for k in range(t):
                    dscores[bi, hi, q, k] = probs[bi, hi, q, k] * (
                        dprobs[bi, hi, q, k] - inner
                    )
    return dscores


@njit(**_OPTS)
def _softmax_xent(logits, labels):
    n, c = logits.shape
    loss = np.empty(n, logits.dtype)
    dlogits = np.empty_like(logits)
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > m:
                m = logits[i, j]
        z = 0.0
        for j in range(c):
            e = math.exp(logits[i, j] - m)
            dlogits[i, j] = e
            z += e
        for j in range(c):
            dlogits[i, j] /= z
        loss[i] = math.log(z) - (logits[i, labels[i]] - m)
        dlogits[i, labels[i]] -= 1.0
    return loss, dlogits


@njit(**_OPTS)
def _adam_step_1d(param, grad, m, v, lr, beta1, beta2, eps, t):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(param.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        param[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)


# thin wrappers: flatten to the core shapes, restore on the way out

def layer_norm_forward(x, gamma, beta, eps):
    d = x.shape[-1]
    y, mean, rstd = _layer_norm_forward_2d(x.reshape(-1, d), gamma, beta, eps)
    lead = x.shape[:-1]
    return y.reshape(x.shape), mean.reshape(lead), rstd.reshape(lead)


def layer_norm_backward(dy, x, gamma, mean, rstd):
    d = x.shape[-1]
    dx, dgamma, dbeta = _layer_norm_backward_2d(
        dy.reshape(-1, d), x.reshape(-1, d), gamma, mean.reshape(-1), rstd.reshape(-1)
    )
    return dx.reshape(x.shape), dgamma, dbeta


def gelu_forward(x):
    return _gelu_forward_1d(x.reshape(-1)).reshape(x.shape)


def gelu_backward(dy, x):
    return _gelu_backward_1d(dy.reshape(-1), x.reshape(-1)).reshape(x.shape)


def attention_softmax(scores, valid_lens):
    return _attention_softmax(scores, np.asarray(valid_lens, dtype=np.int64))


def attention_softmax_backward(dprobs, probs):
    return _attention_softmax_backward(dprobs, probs)


def softmax_xent(logits, labels):
    return _softmax_xent(logits, np.asarray(labels, dtype=np.int64))


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, t):
    _adam_step_1d(
        param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
        lr, beta1, beta2, eps, t,
    )
