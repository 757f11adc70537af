"""Differentiable array operations recorded on the active tape.

Every function takes and returns :class:`~wearml.tensor.Tensor` values,
computes the forward result with numpy, and registers a closure that
maps the output gradient to input gradients. Reductions accumulate in
float64 regardless of storage dtype, then cast back.

Convolutions are "valid" (no implicit padding): an input of length L
with kernel K and stride S produces floor((L - K) / S) + 1 frames. The
transposed convolution inverts that map, producing
(L - 1) * S + K + output_padding samples; output_padding (< S) only
appends zeros-initialized positions so mirrored stacks can restore an
input length that the strided forward pass truncated.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, active_tape

__all__ = [
    "add", "sub", "mul", "scale", "matmul", "transpose", "reshape",
    "concat", "sum_", "mean", "relu", "softmax", "dropout",
    "conv1d", "conv_transpose1d", "layer_norm", "batch_norm_train",
    "affine", "cross_entropy_logits", "mse", "conv1d_output_length",
    "conv_transpose1d_output_length",
]


def _emit(data, inputs, grad_fn, dtype) -> Tensor:
    out = Tensor(data, dtype=dtype)
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, grad_fn)
    return out


def _const(value, like: Tensor) -> np.ndarray:
    return np.asarray(value, dtype=like.data.dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(data, (a, b), grad_fn, data.dtype)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _emit(data, (a, b), grad_fn, data.dtype)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    a_data, b_data = a.data, b.data

    def grad_fn(g):
        return (_unbroadcast(g * b_data, a_data.shape),
                _unbroadcast(g * a_data, b_data.shape))

    return _emit(data, (a, b), grad_fn, data.dtype)


def scale(x: Tensor, factor: float) -> Tensor:
    c = _const(factor, x)
    data = x.data * c

    def grad_fn(g):
        return (g * c,)

    return _emit(data, (x,), grad_fn, data.dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2D @ 2D, 3D @ 3D (shared leading batch), or 3D @ 2D."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul inner dims {ad.shape} @ {bd.shape}")
        data = ad @ bd

        def grad_fn(g):
            return g @ bd.T, ad.T @ g

    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise DimensionError(f"batched matmul dims {ad.shape} @ {bd.shape}")
        data = np.matmul(ad, bd)

        def grad_fn(g):
            return (np.matmul(g, bd.transpose(0, 2, 1)),
                    np.matmul(ad.transpose(0, 2, 1), g))

    elif ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise DimensionError(f"matmul inner dims {ad.shape} @ {bd.shape}")
        data = np.matmul(ad, bd)

        def grad_fn(g):
            da = np.matmul(g, bd.T)
            db = ad.reshape(-1, ad.shape[2]).T @ g.reshape(-1, g.shape[2])
            return da, db

    else:
        raise DimensionError(f"unsupported matmul ranks {ad.ndim} and {bd.ndim}")
    return _emit(data, (a, b), grad_fn, data.dtype)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    data = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _emit(data, (x,), grad_fn, data.dtype)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.data.shape
    data = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(old),)

    return _emit(data, (x,), grad_fn, data.dtype)


def concat(tensors: list, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(sizes))
        )

    return _emit(data, tuple(tensors), grad_fn, data.dtype)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    data = data.astype(x.data.dtype)
    shape = x.data.shape

    def grad_fn(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, shape),)

    return _emit(data, (x,), grad_fn, data.dtype)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64)
    data = data.astype(x.data.dtype)
    shape = x.data.shape
    count = x.data.size if axis is None else np.prod(
        [shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def grad_fn(g):
        gg = g
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        return ((np.broadcast_to(gg, shape) / count).astype(g.dtype, copy=False),)

    return _emit(data, (x,), grad_fn, data.dtype)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    data = np.where(mask, x.data, 0)

    def grad_fn(g):
        return (np.where(mask, g, 0),)

    return _emit(data, (x,), grad_fn, x.data.dtype)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.data.dtype)

    def grad_fn(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _emit(data, (x,), grad_fn, x.data.dtype)


def dropout(x: Tensor, p: float, rng, training: bool) -> Tensor:
    """Inverted dropout: surviving units are scaled by 1/(1-p)."""
    if not training or p <= 0.0:
        data = x.data

        def grad_fn(g):
            return (g,)

        return _emit(data, (x,), grad_fn, x.data.dtype)
    if p >= 1.0:
        raise ValueError(f"dropout probability must be < 1, got {p}")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    keep = keep.astype(x.data.dtype, copy=False)
    data = x.data * keep

    def grad_fn(g):
        return (g * keep,)

    return _emit(data, (x,), grad_fn, x.data.dtype)


def conv1d_output_length(length: int, kernel: int, stride: int) -> int:
    if length < kernel:
        raise DimensionError(f"input length {length} shorter than kernel {kernel}")
    return (length - kernel) // stride + 1


def conv_transpose1d_output_length(length: int, kernel: int, stride: int,
                                   output_padding: int = 0) -> int:
    if not 0 <= output_padding < stride:
        raise DimensionError(
            f"output_padding must lie in [0, stride), got {output_padding} with stride {stride}"
        )
    return (length - 1) * stride + kernel + output_padding


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Valid cross-correlation of (N, C_in, L) with (C_out, C_in, K)."""
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise DimensionError("conv1d expects 3D input and weight")
    n, c_in, length = xd.shape
    c_out, c_in_w, kernel = wd.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv1d channels: input {c_in}, weight {c_in_w}")
    l_out = conv1d_output_length(length, kernel, stride)

    windows = np.lib.stride_tricks.sliding_window_view(xd, kernel, axis=2)
    cols = np.ascontiguousarray(windows[:, :, ::stride, :])       # (N, C_in, L_out, K)
    cols = cols.transpose(0, 1, 3, 2).reshape(n, c_in * kernel, l_out)
    w2 = wd.reshape(c_out, c_in * kernel)
    data = np.matmul(w2, cols) + bias.data[:, None]

    def grad_fn(g):
        db = g.sum(axis=(0, 2), dtype=np.float64).astype(g.dtype)
        dw2 = np.einsum("nol,nkl->ok", g, cols, optimize=True)
        dw = dw2.reshape(c_out, c_in, kernel).astype(g.dtype, copy=False)
        dcols = np.matmul(w2.T, g)                                # (N, C_in*K, L_out)
        dcols = dcols.reshape(n, c_in, kernel, l_out)
        dx = np.zeros_like(xd)
        pos = stride * np.arange(l_out)
        # For fixed k the target positions are distinct, so fancy-index
        # accumulation is safe; overlap across k is handled by the loop.
        for k in range(kernel):
            dx[:, :, pos + k] += dcols[:, :, k, :]
        return dx, dw, db

    return _emit(data, (x, weight, bias), grad_fn, xd.dtype)


def conv_transpose1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int,
                     output_padding: int = 0) -> Tensor:
    """Transposed convolution of (N, C_in, L) with weight (C_in, C_out, K)."""
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise DimensionError("conv_transpose1d expects 3D input and weight")
    n, c_in, length = xd.shape
    c_in_w, c_out, kernel = wd.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv_transpose1d channels: input {c_in}, weight {c_in_w}")
    l_out = conv_transpose1d_output_length(length, kernel, stride, output_padding)

    data = np.zeros((n, c_out, l_out), dtype=xd.dtype)
    pos = stride * np.arange(length)
    xt = xd.transpose(0, 2, 1)                                    # (N, L, C_in)
    for k in range(kernel):
        contrib = np.matmul(xt, wd[:, :, k])                      # (N, L, C_out)
        data[:, :, pos + k] += contrib.transpose(0, 2, 1)
    data += bias.data[None, :, None]

    def grad_fn(g):
        db = g.sum(axis=(0, 2), dtype=np.float64).astype(g.dtype)
        dx = np.zeros_like(xd)
        dw = np.zeros_like(wd)
        for k in range(kernel):
            gk = g[:, :, pos + k]                                 # (N, C_out, L)
            dx += np.einsum("nol,io->nil", gk, wd[:, :, k], optimize=True)
            dw[:, :, k] = np.einsum("nil,nol->io", xd, gk, optimize=True)
        return dx, dw, db

    return _emit(data, (x, weight, bias), grad_fn, xd.dtype)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the final axis, then apply the elementwise affine."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True, dtype=np.float64)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = ((xd - mu) * inv_std).astype(xd.dtype)
    data = gamma.data * xhat + beta.data
    d = xd.shape[-1]
    reduce_axes = tuple(range(xd.ndim - 1))

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=reduce_axes, dtype=np.float64).astype(g.dtype)
        dbeta = g.sum(axis=reduce_axes, dtype=np.float64).astype(g.dtype)
        gg = g * gamma.data
        gg_mean = gg.mean(axis=-1, keepdims=True)
        gx_mean = (gg * xhat).mean(axis=-1, keepdims=True)
        dx = inv_std * (gg - gg_mean - xhat * gx_mean)
        return dx.astype(g.dtype, copy=False), dgamma, dbeta

    _ = d
    return _emit(data, (x, gamma, beta), grad_fn, xd.dtype)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Training-mode batch norm over (N, C, L): stats per channel.

    Returns (out, batch_mean, batch_var) where the stats are plain
    float64 arrays (biased variance) for the caller's running update.
    """
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError("batch_norm_train expects (N, C, L) input")
    axes = (0, 2)
    m = xd.shape[0] * xd.shape[2]
    mu = xd.mean(axis=axes, keepdims=True, dtype=np.float64)
    var = ((xd - mu) ** 2).mean(axis=axes, keepdims=True, dtype=np.float64)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = ((xd - mu) * inv_std).astype(xd.dtype)
    gb = gamma.data[None, :, None]
    data = gb * xhat + beta.data[None, :, None]

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=axes, dtype=np.float64).astype(g.dtype)
        dbeta = g.sum(axis=axes, dtype=np.float64).astype(g.dtype)
        gg = g * gb
        gg_mean = gg.mean(axis=axes, keepdims=True)
        gx_mean = (gg * xhat).mean(axis=axes, keepdims=True)
        dx = inv_std * (gg - gg_mean - xhat * gx_mean)
        return dx.astype(g.dtype, copy=False), dgamma, dbeta

    _ = m
    out = _emit(data, (x, gamma, beta), grad_fn, xd.dtype)
    return out, mu.reshape(-1), var.reshape(-1)


def affine(x: Tensor, scale_arr: np.ndarray, shift_arr: np.ndarray) -> Tensor:
    """x * scale + shift with constant (non-learned) per-channel arrays.

    Used for evaluation-mode batch norm, where the normalization is a
    fixed affine map derived from running statistics.
    """
    data = x.data * scale_arr + shift_arr

    def grad_fn(g):
        return (g * scale_arr,)

    return _emit(data, (x,), grad_fn, data.dtype)


def cross_entropy_logits(logits: Tensor, targets: np.ndarray,
                         sample_weight: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax logits.

    With sample weights the result is the weighted mean
    sum(w * nll) / sum(w).
    """
    ld = logits.data
    if ld.ndim != 2:
        raise DimensionError("cross_entropy_logits expects (N, K) logits")
    n = ld.shape[0]
    t = np.asarray(targets)
    if t.shape != (n,):
        raise DimensionError(f"targets shape {t.shape} does not match batch {n}")
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True, dtype=np.float64))
    logp = shifted - logz.astype(ld.dtype)
    nll = -logp[np.arange(n), t]
    if sample_weight is None:
        w = np.ones(n, dtype=np.float64)
    else:
        w = np.asarray(sample_weight, dtype=np.float64)
    wsum = w.sum()
    data = np.asarray((nll.astype(np.float64) * w).sum() / wsum, dtype=ld.dtype)

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(n), t] -= 1.0
        p *= (w / wsum)[:, None]
        return (p * g, )

    return _emit(data, (logits,), grad_fn, ld.dtype)


def mse(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error; with a mask, averaged over unmasked entries only."""
    pd = pred.data
    t = np.asarray(target, dtype=pd.dtype)
    if t.shape != pd.shape:
        raise DimensionError(f"target shape {t.shape} does not match prediction {pd.shape}")
    diff = pd - t
    if mask is None:
        denom = float(pd.size)
        data = np.asarray((diff.astype(np.float64) ** 2).sum() / denom, dtype=pd.dtype)

        def grad_fn(g):
            return ((2.0 / denom) * diff * g,)

    else:
        m = np.asarray(mask, dtype=pd.dtype)
        if m.shape != pd.shape:
            raise DimensionError(f"mask shape {m.shape} does not match prediction {pd.shape}")
        denom = float(m.sum(dtype=np.float64))
        if denom == 0.0:
            raise ValueError("mse mask selects no entries")
        data = np.asarray((m * diff.astype(np.float64) ** 2).sum() / denom, dtype=pd.dtype)

        def grad_fn(g):
            return ((2.0 / denom) * diff * m * g,)

    return _emit(data, (pred,), grad_fn, pd.dtype)
