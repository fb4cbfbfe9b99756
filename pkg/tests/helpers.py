"""Shared numeric oracles for the test suite.

The gradient checker evaluates the model function itself at perturbed inputs,
so it stays valid no matter how the analytic backward rules are implemented.
"""

import numpy as np
from scipy.special import erf

from gridifier.autodiff import Tensor
from gridifier.nn import PositionalNet

FD_STEP = 1e-5


def naive_mlp(params, row):
    """One input row through an MLP, written with plain loops and ndarray math."""
    h = row
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.data + b.data
        if i != last:
            if params.nonlinearity == "gelu":
                h = h * 0.5 * (1.0 + erf(h / np.sqrt(2.0)))
            elif params.nonlinearity == "relu":
                h = np.maximum(h, 0.0)
    return h


def naive_pos(net, rel_row):
    """Positional value for one offset row; accepts a plain MLP as well."""
    if isinstance(net, PositionalNet):
        z = 2.0 * np.pi * (net.rff.freq.data @ rel_row)
        return naive_mlp(net.head, np.concatenate([np.cos(z), np.sin(z)]))
    return naive_mlp(net, rel_row)


def numeric_grad(f, arrays, which, h=FD_STEP):
    """Central finite differences of scalar f w.r.t. arrays[which]."""
    grad = np.zeros_like(arrays[which])
    for j in range(grad.size):
        hi = [a.copy() for a in arrays]
        lo = [a.copy() for a in arrays]
        hi[which].ravel()[j] += h
        lo[which].ravel()[j] -= h
        grad.ravel()[j] = (f(hi) - f(lo)) / (2.0 * h)
    return grad


def assert_grads_match(build, arrays, tol=1e-4, skip=()):
    """Compare analytic gradients of build(tensors) against finite differences.

    build maps a list of Tensors to a scalar Tensor; the same callable is
    reused for the numeric probe so both sides evaluate identical code.
    """
    tensors = [Tensor(a) for a in arrays]
    out = build(tensors)
    out.backward()

    def scalar(arrs):
        return build([Tensor(a) for a in arrs]).item()

    for i, t in enumerate(tensors):
        if i in skip:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        numeric = numeric_grad(scalar, arrays, i)
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
        rel = np.abs(analytic - numeric) / denom
        assert rel.max() < tol, f"arg {i}: max rel err {rel.max():.3g}"


def rand(rng, *shape):
    return rng.normal(size=shape)
