"""Dense float64 numerics: matmul, differentiable layer primitives and Adam.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
backward function takes the upstream gradient and whatever the forward pass
cached, and returns gradients with the shapes of the forward inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where it must not."""


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def rng_stream(seed):
    """Seeded PCG64 generator; the same seed gives the same draws everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def matmul(a, b, fast=False):
    """Matrix product with a fixed left-to-right reduction over the inner index.

    The sequential path accumulates one rank-1 term per inner index, so each
    output entry is summed in exactly the order a naive triple loop uses and
    the result is bit-reproducible. ``fast=True`` hands off to BLAS, which is
    quicker but not bit-identical to the naive loop.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    if fast:
        return a @ b
    out = np.zeros((a.shape[0], b.shape[1]), dtype=DTYPE)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def affine_forward(x, w, b, fast=False):
    """y = x @ w.T + b for x (n, in), w (out, in), b (out,)."""
    x = as_matrix(x, "x")
    w = as_matrix(w, "w")
    b = np.asarray(b, dtype=DTYPE)
    if x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise DimensionError(
            f"affine shapes x{x.shape} w{w.shape} b{b.shape} are inconsistent")
    return matmul(x, w.T, fast=fast) + b


def affine_backward(x, w, upstream, need_grad_x=True, fast=False):
    """Returns (grad_x, grad_w, grad_b); grad_x is None when not requested."""
    x = as_matrix(x, "x")
    w = as_matrix(w, "w")
    upstream = as_matrix(upstream, "upstream")
    if upstream.shape != (x.shape[0], w.shape[0]) or x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"affine backward shapes x{x.shape} w{w.shape} "
            f"upstream{upstream.shape} are inconsistent")
    grad_w = matmul(upstream.T, x, fast=fast)
    grad_b = upstream.sum(axis=0)
    grad_x = matmul(upstream, w, fast=fast) if need_grad_x else None
    return grad_x, grad_w, grad_b


def softmax_forward(x):
    """Row-wise softmax with max subtraction."""
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_backward(y, upstream):
    """Gradient through softmax given its output ``y``."""
    y = np.asarray(y, dtype=DTYPE)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if y.shape != upstream.shape:
        raise DimensionError(f"softmax shapes {y.shape} vs {upstream.shape}")
    return y * (upstream - (upstream * y).sum(axis=-1, keepdims=True))


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x, upstream):
    x = np.asarray(x, dtype=DTYPE)
    upstream = np.asarray(upstream, dtype=DTYPE)
    if x.shape != upstream.shape:
        raise DimensionError(f"relu shapes {x.shape} vs {upstream.shape}")
    return np.where(x > 0.0, upstream, 0.0)


def layernorm_forward(x, gamma, beta, eps=1e-5):
    """Normalizes each row of ``x`` then applies the elementwise scale/shift.

    Returns ``(y, cache)``; the cache feeds :func:`layernorm_backward`.
    """
    x = as_matrix(x, "x")
    gamma = np.asarray(gamma, dtype=DTYPE)
    beta = np.asarray(beta, dtype=DTYPE)
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError("layernorm scale/shift must match row length")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv_std
    return xhat * gamma + beta, (xhat, inv_std, gamma)


def layernorm_backward(upstream, cache):
    """Returns (grad_x, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma = cache
    upstream = as_matrix(upstream, "upstream")
    if upstream.shape != xhat.shape:
        raise DimensionError(f"layernorm shapes {upstream.shape} vs {xhat.shape}")
    grad_gamma = (upstream * xhat).sum(axis=0)
    grad_beta = upstream.sum(axis=0)
    g = upstream * gamma
    n = xhat.shape[1]
    grad_x = inv_std / n * (n * g - g.sum(axis=1, keepdims=True)
                            - xhat * (g * xhat).sum(axis=1, keepdims=True))
    return grad_x, grad_gamma, grad_beta


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def reset_positions(self, name, flat_idx):
        """Zero both moments of parameter ``name`` at the given flat indices."""
        if name in self.first_moment:
            self.first_moment[name].reshape(-1)[flat_idx] = 0.0
            self.second_moment[name].reshape(-1)[flat_idx] = 0.0


def adam_step(params, grads, state):
    """One bias-corrected Adam update applied in place to every parameter.

    ``params`` and ``grads`` are dicts keyed by parameter name. The step
    counter advances once per call. Masked weights are not special-cased here;
    callers re-apply their masks afterwards.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, "
                f"parameter has {params[name].shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
