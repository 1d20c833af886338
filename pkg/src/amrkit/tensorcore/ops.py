"""Differentiable operators.

Each function computes its forward value with numpy and registers the adjoint
rule on the result. Elementwise binary ops broadcast with numpy's
trailing-dimension rule; their adjoints sum the broadcast axes back out.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import InvalidArgumentError, ShapeError
from .tensor import Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for a {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("mul", a, b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return Tensor._from_op(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return Tensor._from_op(a.data**exponent, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.maximum(x.data, 0).astype(x.dtype, copy=False),
                           (x,), lambda g: (g * mask,), "relu")


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(v.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._from_op(t, (x,), lambda g: (g * (1 - t * t),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    (ax,) = _norm_axes(axis, x.ndim)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return Tensor._from_op(s, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    (ax,) = _norm_axes(axis, x.ndim)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidArgumentError(f"cross_entropy: labels must lie in [0, {c})")
    labels = labels.astype(np.int64)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return Tensor._from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward,
                           "cross_entropy")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: cannot broadcast batch dims of {a.shape} and {b.shape}") from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g @ weight.data) if x.requires_grad else None
        gw = (g2.T @ x.data.reshape(-1, weight.shape[1])) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if bias.requires_grad else None)

    return Tensor._from_op(out, parents, backward, "linear")


# ---------------------------------------------------------------------------
# convolution and normalisation


def _channel_matmul(w2: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # (O, K) x (N, K, P) -> (N, O, P); the transposed product tiles better in BLAS.
    return np.ascontiguousarray(np.matmul(cols.transpose(0, 2, 1), w2.T).transpose(0, 2, 1))


def _weight_grad(g3: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # sum_n g[n] @ cols[n].T, as (O, K).
    return np.matmul(cols, g3.transpose(0, 2, 1)).sum(axis=0).T


def _im2col(a: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, k*k, ho, wo) built from one contiguous slice copy per kernel offset.
    n, c = a.shape[:2]
    pad = k // 2
    ap = np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k * k, ho, wo), dtype=a.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i * k + j] = ap[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded 2-D cross-correlation over NCHW input.

    ``weight`` is (out, in, k, k) with odd k; output spatial size is
    ``ceil(H / stride)``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input {x.shape} has {c} channels, weight {weight.shape} wants {ci}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {weight.shape}")
    if stride not in (1, 2):
        raise InvalidArgumentError(f"conv2d: stride must be 1 or 2, got {stride}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {o} output channels")
    parents = (x, weight) if bias is None else (x, weight, bias)

    if kh == 1:
        xs = x.data if stride == 1 else x.data[:, :, ::stride, ::stride]
        ho, wo = xs.shape[2], xs.shape[3]
        w2 = weight.data.reshape(o, c)
        flat = xs.reshape(n, c, ho * wo)
        out = _channel_matmul(w2, flat)
        if bias is not None:
            out += bias.data[None, :, None]
        out = out.reshape(n, o, ho, wo)

        def backward(g):
            g3 = g.reshape(n, o, ho * wo)
            gx = gw = None
            if x.requires_grad:
                gxs = np.matmul(w2.T, g3).reshape(n, c, ho, wo)
                if stride == 1:
                    gx = gxs
                else:
                    gx = np.zeros_like(x.data)
                    gx[:, :, ::stride, ::stride] = gxs
            if weight.requires_grad:
                gw = _weight_grad(g3, flat).reshape(weight.shape)
            if bias is None:
                return gx, gw
            return gx, gw, (g3.sum(axis=(0, 2)) if bias.requires_grad else None)

        return Tensor._from_op(out, parents, backward, "conv2d")

    pad = kh // 2
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = _im2col(x.data, kh, stride, ho, wo)
    wm = weight.data.reshape(o, c * kh * kw)
    out = _channel_matmul(wm, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    def backward(g):
        g3 = g.reshape(n, o, ho * wo)
        gx = gw = None
        if weight.requires_grad:
            gw = _weight_grad(g3, cols).reshape(weight.shape)
        if x.requires_grad and stride == 1:
            # Stride-1 input gradient is a same-padded correlation with the flipped kernel.
            wf = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, o * kh * kw)
            gx = _channel_matmul(wf, _im2col(g, kh, 1, h, w)).reshape(n, c, h, w)
        elif x.requires_grad:
            dcols = np.matmul(wm.T, g3).reshape(n, c, kh * kw, ho, wo)
            gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i * kw + j]
            gx = gxp[:, :, pad:pad + h, pad:pad + w]
        if bias is None:
            return gx, gw
        return gx, gw, (g3.sum(axis=(0, 2)) if bias.requires_grad else None)

    return Tensor._from_op(out, parents, backward, "conv2d")


def _channel_sum(a: np.ndarray) -> np.ndarray:
    # Sum over every axis but 1; reducing the contiguous tail first is much faster.
    if a.ndim == 2:
        return a.sum(axis=0)
    return a.reshape(a.shape[0], a.shape[1], -1).sum(axis=2).sum(axis=0)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalisation over every axis except channel axis 1.

    In training mode batch statistics are used (biased variance) and the
    running buffers are updated in place with the unbiased variance.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm2d: input {x.shape} does not match {gamma.shape[0]} channels")
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = [1] * x.ndim
    bshape[1] = -1
    g_ = gamma.data.reshape(bshape)
    if training:
        m = x.data.size // x.shape[1]
        mean = (_channel_sum(x.data) / m).reshape(bshape)
        centered = x.data - mean
        var = (_channel_sum(centered * centered) / m).reshape(bshape)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        running_mean *= 1 - momentum
        running_mean += momentum * mean.reshape(-1)
        unbiased = var.reshape(-1) * (m / max(m - 1, 1))
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        m = None
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(bshape)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(bshape)) * inv_std
    out = g_ * xhat + beta.data.reshape(bshape)

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * g_
            if training:
                s1 = (_channel_sum(dxhat) / m).reshape(bshape)
                s2 = (_channel_sum(dxhat * xhat) / m).reshape(bshape)
                gx = inv_std * (dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv_std
        gg = _channel_sum(g * xhat) if gamma.requires_grad else None
        gb = _channel_sum(g) if beta.requires_grad else None
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward, "batchnorm2d")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape} do not match width {d}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            s1 = dxhat.sum(axis=-1, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
            gx = inv_std / d * (d * dxhat - s1 - xhat * s2)
        lead = tuple(range(x.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward, "layer_norm")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(x.data.transpose(axes), (x,),
                           lambda g: (g.transpose(inverse),), "transpose")


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}") from None
    return Tensor._from_op(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "expand")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise InvalidArgumentError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    (ax,) = _norm_axes(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax
        ):
            raise ShapeError(
                f"concat: shapes {[tt.shape for tt in tensors]} differ outside axis {ax}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                grads.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return grads

    return Tensor._from_op(out, tuple(tensors), backward, "concat")


def getitem(x: Tensor, key) -> Tensor:
    out = x.data[key]
    keys = key if isinstance(key, tuple) else (key,)
    advanced = any(isinstance(k, (list, np.ndarray, Tensor)) for k in keys)

    def backward(g):
        gx = np.zeros_like(x.data)
        if advanced:
            np.add.at(gx, key, g)
        else:
            gx[key] = g
        return (gx,)

    return Tensor._from_op(np.array(out, copy=advanced) if advanced else out, (x,),
                           backward, "getitem")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    (ax,) = _norm_axes(axis, x.ndim)
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split: sizes {list(sizes)} do not sum to {x.shape[ax]} on axis {ax}")
    parts, start = [], 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(start, start + s)
        parts.append(getitem(x, tuple(idx)))
        start += s
    return parts


# ---------------------------------------------------------------------------
# reductions


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return Tensor._from_op(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape),)

    return Tensor._from_op(np.asarray(out), (x,), backward, "mean")


def amax(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum over ``axis``; the adjoint goes to the first maximal element in row-major order."""
    axes = _norm_axes(axis, x.ndim)
    keep = [i for i in range(x.ndim) if i not in axes]
    perm = keep + list(axes)
    xt = x.data.transpose(perm)
    lead = xt.shape[: len(keep)]
    flat = xt.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)[..., None]
    vals = np.take_along_axis(flat, idx, axis=-1)[..., 0]
    out_shape = tuple(1 if i in axes else s for i, s in enumerate(x.shape)) if keepdims else lead
    out = vals.reshape(out_shape)
    inverse = np.argsort(perm)

    def backward(g):
        routed = np.zeros_like(flat)
        np.put_along_axis(routed, idx, g.reshape(lead)[..., None], axis=-1)
        return (routed.reshape(xt.shape).transpose(inverse),)

    return Tensor._from_op(np.asarray(out), (x,), backward, "max")


# ---------------------------------------------------------------------------
# pooling


_POOL_AXIS = {"height": "height", "h": "height", "width": "width", "w": "width"}


def directional_pool(x: Tensor, axis: str, mode: str = "avg") -> Tensor:
    """Coordinate pooling of a (C, H, W) or (N, C, H, W) map.

    ``axis="height"`` keeps the height axis and reduces across width, giving
    (..., H, 1); ``axis="width"`` keeps width, giving (..., 1, W).
    """
    if x.ndim not in (3, 4):
        raise ShapeError(f"directional_pool expects a 3-d or 4-d map, got {x.shape}")
    kept = _POOL_AXIS.get(str(axis).lower())
    if kept is None:
        raise ShapeError(f"directional_pool: axis must be 'height' or 'width', got {axis!r}")
    reduce_axis = x.ndim - 1 if kept == "height" else x.ndim - 2
    return _pool(x, reduce_axis, mode)


def global_pool(x: Tensor, mode: str = "avg") -> Tensor:
    """Pool all spatial positions of a (..., H, W) map to (..., 1, 1)."""
    if x.ndim < 2:
        raise ShapeError(f"global_pool expects at least 2 spatial axes, got {x.shape}")
    return _pool(x, (x.ndim - 2, x.ndim - 1), mode)


def adaptive_avg_pool_seq(x: Tensor) -> Tensor:
    """Average a (T, d) or (B, T, d) sequence over time."""
    if x.ndim not in (2, 3):
        raise ShapeError(f"adaptive_avg_pool_seq expects (T, d) or (B, T, d), got {x.shape}")
    return mean(x, axis=x.ndim - 2)


def _pool(x: Tensor, axes, mode: str) -> Tensor:
    if mode == "avg":
        return mean(x, axis=axes, keepdims=True)
    if mode == "max":
        return amax(x, axis=axes, keepdims=True)
    raise InvalidArgumentError(f"pool mode must be 'avg' or 'max', got {mode!r}")


# ---------------------------------------------------------------------------
# operator overloading


def _bind() -> None:
    Tensor.__add__ = lambda a, b: add(a, b)
    Tensor.__radd__ = lambda a, b: add(b, a)
    Tensor.__sub__ = lambda a, b: sub(a, b)
    Tensor.__rsub__ = lambda a, b: sub(b, a)
    Tensor.__mul__ = lambda a, b: mul(a, b)
    Tensor.__rmul__ = lambda a, b: mul(b, a)
    Tensor.__truediv__ = lambda a, b: div(a, b)
    Tensor.__rtruediv__ = lambda a, b: div(b, a)
    Tensor.__neg__ = neg
    Tensor.__pow__ = lambda a, p: power(a, p)
    Tensor.__matmul__ = lambda a, b: matmul(a, b)
    Tensor.__getitem__ = getitem
    Tensor.reshape = lambda self, *shape: reshape(
        self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)
    Tensor.transpose = lambda self, *axes: transpose(
        self, axes[0] if len(axes) == 1 and not isinstance(axes[0], int) else axes)
    Tensor.sum = lambda self, axis=None, keepdims=False: sum_(self, axis, keepdims)
    Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
    Tensor.max = lambda self, axis=None, keepdims=False: amax(self, axis, keepdims)
    Tensor.relu = relu
    Tensor.sigmoid = sigmoid
    Tensor.exp = exp
    Tensor.log = log
    Tensor.softmax = lambda self, axis=-1: softmax(self, axis)


_bind()
