"""Differentiable operations.

Each op computes its forward result with numpy and records a closure that maps
the upstream gradient to one gradient per parent (``None`` when the parent
needs none).  Binary elementwise ops only broadcast over missing or singleton
*leading* dimensions.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError
from .core import Tensor, as_tensor, broadcast_shape, make_result, unbroadcast

GELU_C = math.sqrt(2.0 / math.pi)


def _pair(a, b, op):
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape, op)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), bw, "div")


def neg(x) -> Tensor:
    x = as_tensor(x)
    return make_result(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x, c: float) -> Tensor:
    """Multiply by a python scalar."""
    x = as_tensor(x)
    c = float(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,), "scale")


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)
    xd = x.data
    if p != int(p) and np.any(xd < 0):
        raise NumericError("power: fractional power of a negative value")
    return make_result(xd**p, (x,), lambda g: (g * p * xd ** (p - 1),), "power")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive input")
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    sign = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_result(np.logaddexp(0.0, xd), (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def gelu(x) -> Tensor:
    """Tanh-approximated GELU."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(GELU_C * (xd + 0.044715 * xd**3))
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        du = GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return make_result(out, (x,), bw, "gelu")


ACTIVATIONS = {"gelu_tanh": gelu, "tanh": tanh, "relu": relu}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ContractError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data
    flat = b.ndim == 2 and a.ndim > 2  # batched input times a weight matrix: one GEMM

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if flat:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:]) if flat else ad @ bd
    return make_result(out, (a, b), bw, "matmul")


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    axes = _axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _axes(axis, x.ndim)
    n = 1
    for a in axes:
        n *= x.shape[a]
    return scale(sum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot reshape {old} to {shape}") from exc
    return make_result(out.copy(), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return make_result(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def _is_advanced(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def getitem(x, key) -> Tensor:
    """Indexing; the result is always a copy."""
    x = as_tensor(x)
    shape = x.shape
    out = np.array(x.data[key], dtype=np.float64, copy=True)
    advanced = _is_advanced(key)

    def bw(g):
        full = np.zeros(shape)
        if advanced:
            np.add.at(full, key, g)
        else:
            full[key] += g
        return (full,)

    return make_result(out, (x,), bw, "getitem")


def take(x, indices, axis: int) -> Tensor:
    """Gather along one axis with an integer index array (duplicates allowed)."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    shape = x.shape
    out = np.take(x.data, idx, axis=axis)

    def bw(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return make_result(out, (x,), bw, "take")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ContractError("concat: empty input list")
    ax = axis % ts[0].ndim
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return make_result(out, ts, lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("softmax: non-finite input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("log_softmax: non-finite input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), bw, "log_softmax")


def masked_softmax(x, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax restricted to ``mask``; rows with no admissible entry become zero."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"masked_softmax: mask {mask.shape} vs input {x.shape}")
    filled = np.where(mask, x.data, -np.inf)
    mx = filled.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(np.where(mask, x.data - mx, -np.inf))
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), bw, "masked_softmax")


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Standardize along the last axis (no affine part)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return make_result(y, (x,), bw, "layer_norm")


def binary_cross_entropy_with_logits(logits, target: np.ndarray) -> Tensor:
    """Elementwise ``softplus(z) - t*z``: stable BCE for a constant target."""
    z = as_tensor(logits)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != z.shape:
        raise DimensionError(f"bce: target {t.shape} vs logits {z.shape}")
    out = np.logaddexp(0.0, z.data) - t * z.data
    return make_result(out, (z,), lambda g: (g * (_sigmoid(z.data) - t),), "bce")


def l1_norm(x) -> Tensor:
    return sum(abs(x))


def l2_norm(x) -> Tensor:
    x = as_tensor(x)
    n = float(np.sqrt((x.data**2).sum()))
    xd = x.data
    return make_result(np.asarray(n), (x,), lambda g: (g * xd / n if n > 0 else np.zeros_like(xd),), "l2_norm")


def normalize(x, axis: int = -1) -> Tensor:
    """Scale vectors along ``axis`` to unit L2 norm; zero vectors are a contract error."""
    x = as_tensor(x)
    n = np.sqrt((x.data**2).sum(axis=axis, keepdims=True))
    if np.any(n == 0):
        raise ContractError("normalize: zero vector (cosine undefined)")
    y = x.data / n

    def bw(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)

    return make_result(y, (x,), bw, "normalize")


def cosine_similarity(a, b, axis: int = -1) -> Tensor:
    """Cosine between paired vectors along ``axis``."""
    return sum(mul(normalize(a, axis), normalize(b, axis)), axis=axis)


def cosine_matrix(a, b=None) -> Tensor:
    """All-pairs cosine between rows: ``[..., m, d] x [..., n, d] -> [..., m, n]``."""
    na = normalize(a, -1)
    nb = na if b is None else normalize(b, -1)
    return matmul(na, swap_last(nb))


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select elementwise with a constant boolean condition."""
    a, b = _pair(a, b, "where")
    cond = np.asarray(cond, dtype=bool)
    shape = broadcast_shape(a.shape, b.shape, "where")
    if cond.shape != shape:
        raise DimensionError(f"where: condition {cond.shape} vs operands {shape}")
    sa, sb = a.shape, b.shape
    return make_result(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (unbroadcast(np.where(cond, g, 0.0), sa), unbroadcast(np.where(cond, 0.0, g), sb)),
        "where",
    )
