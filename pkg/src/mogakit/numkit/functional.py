"""Differentiable primitives on :class:`Tensor`.

Every op computes its forward value with numpy and, when a tape is open,
records a closure mapping the output gradient to input gradients.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return record(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, (a, b), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.exp(x.data))
    return record(out, (x,), lambda g: (g * out.data,))


def log(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.log(x.data))
    return record(out, (x,), lambda g: (g / x.data,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign for overflow safety
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = Tensor(s)
    return record(out, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)
    return record(out, (x,), lambda g: (g * (1.0 - t * t),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = Tensor(x.data * s)
    return record(out, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    return record(out, (x,), lambda g: (g * mask,))


def straight_through(hard: np.ndarray, soft) -> Tensor:
    """Forward value ``hard``; gradient flows to ``soft`` unchanged."""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError(f"hard {hard.shape} vs soft {soft.shape}")
    out = Tensor(hard.copy())
    return record(out, (soft,), lambda g: (g,))


# ---------------------------------------------------------------- reductions / shape

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.T)
    return record(out, (x,), lambda g: (g.T,))


def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))
        )

    return record(out, xs, backward)


def stack(xs) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.stack([x.data for x in xs]))
    return record(out, xs, lambda g: tuple(g[i] for i in range(len(xs))))


def index(x, i) -> Tensor:
    """``x[i]`` for an integer or slice along axis 0."""
    x = as_tensor(x)
    out = Tensor(x.data[i])

    def backward(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return record(out, (x,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot contract {a.shape} with {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return record(out, (a, b), backward)


def linear(x, W, bias=None) -> Tensor:
    """``x @ W.T (+ bias)`` for x of shape (N, K) and W of shape (D, K)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[-1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {W.shape}")
    val = x.data @ W.data.T
    inputs = [x, W]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {W.shape}")
        val = val + bias.data
        inputs.append(bias)
    out = Tensor(val)

    def backward(g):
        xd = x.data
        if xd.ndim == 1:
            gx, gW = W.data.T @ g, np.outer(g, xd)
            gb = g
        else:
            gx, gW = g @ W.data, g.T @ xd
            gb = g.sum(axis=0)
        return (gx, gW, gb) if bias is not None else (gx, gW)

    return record(out, inputs, backward)


# ---------------------------------------------------------------- normalization / attention

def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Row-wise LayerNorm over the last axis."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    k = x.shape[-1]
    if gain.shape != (k,) or bias.shape != (k,):
        raise ShapeError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g):
        gx_hat = g * gain.data
        gx = rstd * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return record(out, (x, gain, bias), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return record(out, (x,), backward)


class EmptyMemoryError(ValueError):
    pass


def softmax_attention(Q, K, V) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V."""
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if K.shape[0] == 0:
        raise EmptyMemoryError("attention over an empty key set")
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"attention: Q {Q.shape} and K {K.shape} disagree on d_k")
    if K.shape[0] != V.shape[0]:
        raise ShapeError(f"attention: K {K.shape} and V {V.shape} disagree on M")
    scores = matmul(Q, transpose(K)) * (1.0 / math.sqrt(Q.shape[-1]))
    return matmul(softmax(scores, axis=-1), V)


# ---------------------------------------------------------------- losses

def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def focal_loss(logits, target, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Mean focal-modulated binary cross-entropy over all pixels."""
    logits = as_tensor(logits)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"focal_loss: logits {logits.shape} vs target {t.shape}")
    x = logits.data
    p = _sigmoid(x)
    ce = _softplus(x) - t * x
    q = t * (1.0 - p) + (1.0 - t) * p  # 1 - p_t
    a_t = alpha * t + (1.0 - alpha) * (1.0 - t)
    mod = q ** gamma if gamma != 0 else np.ones_like(q)
    n = x.size
    out = Tensor(np.mean(a_t * mod * ce))

    def backward(g):
        dq = (1.0 - 2.0 * t) * p * (1.0 - p)
        d = mod * (p - t)
        if gamma != 0:
            d = d + gamma * q ** (gamma - 1.0) * dq * ce
        return (g * a_t * d / n,)

    return record(out, (logits,), backward)


def dice_loss(probs, target, smooth: float = 1.0) -> Tensor:
    """1 - (2 sum(p t) + s) / (sum p + sum t + s)."""
    if smooth <= 0:
        raise ValueError("dice smooth must be positive")
    probs = as_tensor(probs)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != probs.shape:
        raise ShapeError(f"dice_loss: probs {probs.shape} vs target {t.shape}")
    num = mul(sum(mul(probs, t)), 2.0) + smooth
    den = sum(probs) + (float(t.sum()) + smooth)
    return sub(1.0, div(num, den))
