"""Numpy implementations of the hot training kernels.

This is the fallback backend; aegm._kernels._speedups provides the same
functions compiled with Cython. Both operate on C-contiguous float32 or
float64 arrays and must stay semantically interchangeable (see
tests/test_kernels.py for the parity suite).
"""

import numpy as np

BACKEND = "pure"


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, pre):
    return dy * (pre > 0.0)


def bn_forward_train(a, gamma, beta, eps):
    """Batch-norm forward with batch statistics.

    Returns (y, xhat, mean, var, invstd); xhat and invstd feed backward,
    mean/var feed the running-stat update.
    """
    mean = a.mean(axis=0)
    var = a.var(axis=0)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (a - mean) * invstd
    y = gamma * xhat + beta
    return y, xhat, mean, var, invstd


def bn_backward_train(dy, xhat, gamma, invstd):
    """Gradient through train-mode batch norm (population statistics)."""
    n = dy.shape[0]
    dgamma = np.einsum("ij,ij->j", dy, xhat)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    da = (invstd / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.einsum("ij,ij->j", dxhat, xhat))
    return da, dgamma, dbeta


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    """One bias-corrected Adam step, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    param -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


def flush_denormals_begin():
    """Denormal control needs the compiled backend; no-op here."""
    return None


def flush_denormals_end(state):
    pass
