"""Neural building blocks with exact forward semantics.

Convolution is cross-correlation (the usual deep-learning reading), the
transposed convolution is its adjoint run as a forward op, the LSTM uses the
standard gate recurrence, and attention is scaled dot-product over the full
window without positional encoding (the recurrent stage ahead of it already
injects order).

conv1d, tconv1d and the LSTM are single graph nodes with hand-written
backward passes; attention and dense layers compose from tensor primitives.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ConfigurationError, ContractError, ShapeError
from .rng import Rng
from .tensor import Tensor, custom_op

_ACTIVATIONS = {
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
    "none": lambda t: t,
}


def _activation(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown activation {name!r}") from None


def kaiming_uniform(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


def xavier_uniform(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


class DenseLayer:
    """y = activation(x @ W + b), applied over the last axis."""

    def __init__(self, in_dim: int, out_dim: int, activation: str, rng: Rng):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self._act = _activation(activation)
        if activation == "relu":
            w = kaiming_uniform(rng, (in_dim, out_dim), fan_in=in_dim)
        else:
            w = xavier_uniform(rng, (in_dim, out_dim), fan_in=in_dim, fan_out=out_dim)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"dense expects last dim {self.in_dim}, got {x.shape}")
        return self._act(T.add(T.matmul(x, self.weight), self.bias))


def conv1d_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


class Conv1dLayer:
    """1-D cross-correlation over (batch, channels, length) plus bias."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int, padding: int, activation: str, rng: Rng):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.activation = activation
        self._act = _activation(activation)
        fan_in = in_channels * kernel_size
        self.weight = Tensor(kaiming_uniform(rng, (out_channels, in_channels, kernel_size),
                                             fan_in=fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv1d expects (B, {self.in_channels}, L), got {x.shape}")
        out = conv1d(x, self.weight, self.bias, self.stride, self.padding)
        return self._act(out)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int, padding: int) -> Tensor:
    batch, c_in, length = x.shape
    c_out, c_in_w, kernel = weight.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d channels disagree: input {c_in}, weight {c_in_w}")
    l_out = conv1d_output_length(length, kernel, stride, padding)
    if l_out < 1:
        raise ShapeError(
            f"conv1d output length {l_out} < 1 for L={length}, k={kernel}, "
            f"stride={stride}, pad={padding}")

    if padding:
        xp = np.zeros((batch, c_in, length + 2 * padding))
        xp[:, :, padding:padding + length] = x.data
    else:
        xp = x.data
    windows = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride, :]  # (B,Ci,Lo,k)
    out = np.einsum("bitk,oik->bot", windows, weight.data, optimize=True)
    out += bias.data[None, :, None]

    def bwd(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.einsum("bot,bitk->oik", g, windows, optimize=True)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            spread = np.einsum("bot,oik->bitk", g, weight.data, optimize=True)
            for j in range(kernel):
                gxp[:, :, j:j + stride * l_out:stride] += spread[:, :, :, j]
            gx = gxp[:, :, padding:padding + length] if padding else gxp
        return gx, gw, gb

    return custom_op(out, (x, weight, bias), bwd)


class TConv1dLayer:
    """1-D transposed convolution: the adjoint of conv1d, run forward."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int, activation: str, rng: Rng):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.activation = activation
        self._act = _activation(activation)
        fan_in = in_channels * kernel_size
        self.weight = Tensor(kaiming_uniform(rng, (in_channels, out_channels, kernel_size),
                                             fan_in=fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def output_length(self, length: int) -> int:
        return (length - 1) * self.stride + self.kernel_size

    def forward(self, y: Tensor) -> Tensor:
        if y.ndim != 3 or y.shape[1] != self.in_channels:
            raise ShapeError(f"tconv1d expects (B, {self.in_channels}, L), got {y.shape}")
        out = tconv1d(y, self.weight, self.bias, self.stride)
        return self._act(out)


def tconv1d(y: Tensor, weight: Tensor, bias: Tensor, stride: int) -> Tensor:
    batch, c_in, length = y.shape
    c_in_w, c_out, kernel = weight.shape
    if c_in != c_in_w:
        raise ShapeError(f"tconv1d channels disagree: input {c_in}, weight {c_in_w}")
    l_out = (length - 1) * stride + kernel

    out = np.zeros((batch, c_out, l_out))
    for p in range(kernel):
        out[:, :, p:p + stride * length:stride] += np.einsum(
            "bil,io->bol", y.data, weight.data[:, :, p], optimize=True)
    out += bias.data[None, :, None]

    def bwd(g):
        gy = gw = gb = None
        if y.requires_grad:
            gy = np.zeros_like(y.data)
            for p in range(kernel):
                gy += np.einsum("bol,io->bil", g[:, :, p:p + stride * length:stride],
                                weight.data[:, :, p], optimize=True)
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for p in range(kernel):
                gw[:, :, p] = np.einsum("bil,bol->io", y.data,
                                        g[:, :, p:p + stride * length:stride], optimize=True)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gy, gw, gb

    return custom_op(out, (y, weight, bias), bwd)


class LstmLayer:
    """Standard LSTM over (batch, time, features), returning all hidden states.

    Gate order in the packed weights is (input, forget, candidate, output).
    The forget-gate bias starts at +1 so early training does not wipe state.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: Rng):
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        self.w_x = Tensor(xavier_uniform(rng, (input_size, 4 * h), input_size, h),
                          requires_grad=True)
        self.w_h = Tensor(xavier_uniform(rng, (h, 4 * h), h, h), requires_grad=True)
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def parameters(self):
        return [("w_x", self.w_x), ("w_h", self.w_h), ("bias", self.bias)]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"lstm expects (B, T, {self.input_size}), got {x.shape}")
        if x.shape[1] == 0:
            raise ContractError("lstm needs at least one time step")
        return lstm(x, self.w_x, self.w_h, self.bias)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-a))


def lstm(x: Tensor, w_x: Tensor, w_h: Tensor, bias: Tensor) -> Tensor:
    """Unrolled forward with hand-written backward-through-time."""
    batch, steps, _ = x.shape
    hidden = w_h.shape[0]

    # input projections for every step in one multiply
    pre_x = x.data.reshape(batch * steps, -1) @ w_x.data
    pre_x = pre_x.reshape(batch, steps, 4 * hidden) + bias.data

    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    hs = np.empty((batch, steps, hidden))
    cache = []
    for t in range(steps):
        a = pre_x[:, t] + h @ w_h.data
        i = _sigmoid(a[:, :hidden])
        f = _sigmoid(a[:, hidden:2 * hidden])
        g = np.tanh(a[:, 2 * hidden:3 * hidden])
        o = _sigmoid(a[:, 3 * hidden:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h_prev = h
        h = o * tc
        hs[:, t] = h
        cache.append((i, f, g, o, c_prev, tc, h_prev))

    def bwd(grad_h_seq):
        need_x = x.requires_grad
        gx = np.zeros_like(x.data) if need_x else None
        gwx = np.zeros_like(w_x.data) if w_x.requires_grad else None
        gwh = np.zeros_like(w_h.data) if w_h.requires_grad else None
        gb = np.zeros_like(bias.data) if bias.requires_grad else None
        dh = np.zeros((batch, hidden))
        dc = np.zeros((batch, hidden))
        da_seq = np.empty((batch, steps, 4 * hidden)) if (gwx is not None or need_x or gb is not None) else None
        for t in range(steps - 1, -1, -1):
            i, f, g, o, c_prev, tc, h_prev = cache[t]
            dh_t = grad_h_seq[:, t] + dh
            do = dh_t * tc
            dc = dc + dh_t * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            da = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            if da_seq is not None:
                da_seq[:, t] = da
            if gwh is not None:
                gwh += h_prev.T @ da
            dh = da @ w_h.data.T
            dc = dc * f
        if da_seq is not None:
            flat = da_seq.reshape(batch * steps, 4 * hidden)
            if gwx is not None:
                gwx = x.data.reshape(batch * steps, -1).T @ flat
            if gb is not None:
                gb = flat.sum(axis=0)
            if need_x:
                gx = (flat @ w_x.data.T).reshape(x.data.shape)
        return gx, gwx, gwh, gb

    return custom_op(hs, (x, w_x, w_h, bias), bwd)


class MhsaLayer:
    """Multi-head self-attention: per head softmax(Q Kᵀ / sqrt(head_dim)) V.

    Full attention over the window, no causal mask, no positional encoding.
    """

    def __init__(self, model_dim: int, n_heads: int, rng: Rng):
        if model_dim % n_heads != 0:
            raise ConfigurationError(
                f"model_dim {model_dim} not divisible by n_heads {n_heads}")
        self.model_dim = model_dim
        self.n_heads = n_heads
        self.head_dim = model_dim // n_heads
        d = model_dim
        self.w_q = Tensor(xavier_uniform(rng, (d, d), d, d), requires_grad=True)
        self.w_k = Tensor(xavier_uniform(rng, (d, d), d, d), requires_grad=True)
        self.w_v = Tensor(xavier_uniform(rng, (d, d), d, d), requires_grad=True)
        self.w_o = Tensor(xavier_uniform(rng, (d, d), d, d), requires_grad=True)

    def parameters(self):
        return [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v), ("w_o", self.w_o)]

    def _split_heads(self, t: Tensor, batch: int, steps: int) -> Tensor:
        return T.transpose(t.reshape((batch, steps, self.n_heads, self.head_dim)),
                           (0, 2, 1, 3))

    def attention_weights(self, x: Tensor) -> np.ndarray:
        """(B, heads, T, T) attention rows, for inspection and tests."""
        with T.no_grad():
            batch, steps, _ = x.shape
            q = self._split_heads(T.matmul(x, self.w_q), batch, steps)
            k = self._split_heads(T.matmul(x, self.w_k), batch, steps)
            scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
            return T.softmax(scores, axis=-1).data

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.model_dim:
            raise ShapeError(f"mhsa expects (B, T, {self.model_dim}), got {x.shape}")
        batch, steps, d = x.shape
        q = self._split_heads(T.matmul(x, self.w_q), batch, steps)
        k = self._split_heads(T.matmul(x, self.w_k), batch, steps)
        v = self._split_heads(T.matmul(x, self.w_v), batch, steps)
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)  # (B, h, T, hd)
        merged = T.transpose(ctx, (0, 2, 1, 3)).reshape((batch, steps, d))
        return T.matmul(merged, self.w_o)


class DropoutLayer:
    """Inverted dropout; active only while ``training`` is set."""

    def __init__(self, rate: float, rng: Rng):
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._rng = rng
        self.training = False

    def parameters(self):
        return []

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = (self._rng.uniform(x.shape) >= self.rate) / (1.0 - self.rate)
        return T.mul(x, Tensor(keep))
