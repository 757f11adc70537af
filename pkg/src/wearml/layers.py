"""Neural network building blocks on top of the tape ops.

Modules hold parameters (tape tensors with requires_grad) and buffers
(plain arrays such as running statistics). ``state_entries`` walks the
tree in definition order and yields (dotted_name, array) pairs, which
is the canonical ordering used by checkpoints.

Weight initialization draws from a named RngStream split per layer, so
construction is reproducible regardless of call order elsewhere.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


def _glorot_uniform(rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """Minimal container: tracks parameters, buffers, children, train mode."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float32)
        self._buffers[name] = arr
        return arr

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in self._buffers:
            raise KeyError(name)
        self._buffers[name] = np.asarray(value, dtype=np.float32)

    def get_buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        super().__setattr__(name, value)

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_entries(self, prefix: str = ""):
        """(name, array) pairs: parameters then buffers, per module, depth-first."""
        for name, p in self._params.items():
            yield prefix + name, p.data
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.state_entries(prefix + cname + ".")

    def load_state(self, entries: dict, prefix: str = "") -> None:
        for name, p in self._params.items():
            key = prefix + name
            arr = np.asarray(entries[key], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"{key}: shape {arr.shape} != {p.data.shape}")
            p.data = np.ascontiguousarray(arr)
        for name in self._buffers:
            key = prefix + name
            arr = np.asarray(entries[key], dtype=np.float32)
            if arr.shape != self._buffers[name].shape:
                raise ValueError(f"{key}: shape {arr.shape} != {self._buffers[name].shape}")
            self._buffers[name] = arr
        for cname, child in self._children.items():
            child.load_state(entries, prefix + cname + ".")

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_param(
            "weight", _glorot_uniform(rng.split("weight"), (in_features, out_features),
                                      in_features, out_features))
        self.bias = self.add_param("bias", np.zeros(out_features, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, self.weight), self.bias)


class Conv1d(Module):
    """Valid strided convolution over (N, C_in, L)."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int, rng):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        self.weight = self.add_param(
            "weight", _glorot_uniform(rng.split("weight"),
                                      (out_channels, in_channels, kernel_size),
                                      fan_in, fan_out))
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.stride)

    def output_length(self, length: int) -> int:
        return ops.conv1d_output_length(length, self.kernel_size, self.stride)


class ConvTranspose1d(Module):
    """Strided transposed convolution over (N, C_in, L)."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int, rng, output_padding: int = 0):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.output_padding = output_padding
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        self.weight = self.add_param(
            "weight", _glorot_uniform(rng.split("weight"),
                                      (in_channels, out_channels, kernel_size),
                                      fan_in, fan_out))
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose1d(x, self.weight, self.bias, self.stride,
                                    self.output_padding)

    def output_length(self, length: int) -> int:
        return ops.conv_transpose1d_output_length(
            length, self.kernel_size, self.stride, self.output_padding)


class BatchNorm1d(Module):
    """Per-channel normalization of (N, C, L) with running statistics.

    Variance is biased (divide by the reduction count) both in the
    normalization and in the running estimate.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=np.float32))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=np.float32))
        self.add_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.add_buffer("running_var", np.ones(channels, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            out, batch_mean, batch_var = ops.batch_norm_train(
                x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.set_buffer("running_mean",
                            (1 - m) * self.get_buffer("running_mean") + m * batch_mean)
            self.set_buffer("running_var",
                            (1 - m) * self.get_buffer("running_var") + m * batch_var)
            return out
        rm = self.get_buffer("running_mean").astype(np.float64)
        rv = self.get_buffer("running_var").astype(np.float64)
        scale = (self.gamma.data / np.sqrt(rv + self.eps)).astype(x.data.dtype)
        shift = (self.beta.data - rm * scale).astype(x.data.dtype)
        return ops.affine(x, scale[None, :, None], shift[None, :, None])


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(dim, dtype=np.float32))
        self.beta = self.add_param("beta", np.zeros(dim, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention over (batch, length, dim)."""

    def __init__(self, dim: int, heads: int, dropout_p: float, rng):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.dropout_p = dropout_p
        self.wq = Linear(dim, dim, rng.split("wq"))
        self.wk = Linear(dim, dim, rng.split("wk"))
        self.wv = Linear(dim, dim, rng.split("wv"))
        self.wo = Linear(dim, dim, rng.split("wo"))

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        x = ops.reshape(x, (batch, length, self.heads, self.head_dim))
        x = ops.transpose(x, (0, 2, 1, 3))
        return ops.reshape(x, (batch * self.heads, length, self.head_dim))

    def __call__(self, x: Tensor, rng) -> Tensor:
        batch, length, _ = x.shape
        q = self._split_heads(self.wq(x), batch, length)
        k = self._split_heads(self.wk(x), batch, length)
        v = self._split_heads(self.wv(x), batch, length)
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))),
                           1.0 / np.sqrt(self.head_dim))
        attn = ops.softmax(scores, axis=-1)
        ctx = ops.matmul(attn, v)
        ctx = ops.reshape(ctx, (batch, self.heads, length, self.head_dim))
        ctx = ops.transpose(ctx, (0, 2, 1, 3))
        ctx = ops.reshape(ctx, (batch, length, self.dim))
        out = self.wo(ctx)
        return ops.dropout(out, self.dropout_p, rng.split("drop"), self.training)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, dropout_p: float, rng):
        super().__init__()
        self.dropout_p = dropout_p
        self.fc1 = Linear(dim, hidden, rng.split("fc1"))
        self.fc2 = Linear(hidden, dim, rng.split("fc2"))

    def __call__(self, x: Tensor, rng) -> Tensor:
        h = ops.relu(self.fc1(x))
        h = ops.dropout(h, self.dropout_p, rng.split("drop"), self.training)
        return self.fc2(h)


class TransformerBlock(Module):
    """Post-norm block: norm(x + attention(x)) then norm(x + feedforward(x))."""

    def __init__(self, dim: int, heads: int, ff_hidden: int, dropout_p: float, rng):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, dropout_p, rng.split("attn"))
        self.norm1 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_hidden, dropout_p, rng.split("ff"))
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor, rng) -> Tensor:
        x = self.norm1(ops.add(x, self.attn(x, rng.split("attn"))))
        x = self.norm2(ops.add(x, self.ff(x, rng.split("ff"))))
        return x
