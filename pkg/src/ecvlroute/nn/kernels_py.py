"""Pure numpy reference kernels.

Same call signatures as the compiled extension; the backend module picks
whichever is available. All arrays are float64 and C-contiguous.
"""
from __future__ import annotations

import numpy as np


def layernorm_forward(x, gamma, beta, eps=1e-5):
    """x: [n, d]. Returns (y, mean, rstd)."""
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layernorm_backward(dy, x, gamma, mean, rstd):
    """Returns (dx, dgamma, dbeta)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def softmax_forward(s):
    """Row-wise softmax over the last axis of a 2-D array."""
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dp, p):
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, y):
    return dy * (y > 0.0)


def sigmoid_bce(logits, targets):
    """Numerically stable mean BCE on logits. Returns (loss, dlogits)."""
    z = logits
    y = targets
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return loss, (p - y) / z.shape[0]


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, t):
    """In-place Adam update with bias correction; flat float64 views."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
