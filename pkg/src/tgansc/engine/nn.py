"""Layers composing engine ops: affine, conv wrappers, batch norm, LSTM cell.

Layers are thin parameter holders: forward logic goes through the autodiff
ops so gradients come for free. Every layer exposes ``params()`` returning an
ordered name -> Tensor mapping used by optimizers and checkpoints.
"""

import numpy as np

from tgansc.engine import conv as C
from tgansc.engine import tensor as T
from tgansc.engine.rng import init_normal
from tgansc.errors import ContractError, ShapeError

WEIGHT_STDDEV = 0.02


def batch_norm(x, gamma, beta, eps=1e-5, channel_axis=None, _stats_out=None):
    """Standardize per channel over all remaining axes, then scale and shift.

    Uses the biased variance of the current batch; requires at least two
    values per channel. Forward and backward are fused into one graph node
    (the closed-form gradient), which matters in the training loop where
    norm layers would otherwise dominate the op count. ``_stats_out``, when
    given, receives the (mean, var) the call computed.
    """
    x = x if isinstance(x, T.Tensor) else T.Tensor(x)
    g = gamma if isinstance(gamma, T.Tensor) else T.Tensor(gamma)
    b = beta if isinstance(beta, T.Tensor) else T.Tensor(beta)
    if channel_axis is None:
        axes = tuple(range(x.ndim))
        count = x.size
        pshape = (1,) * max(x.ndim, 1)
    else:
        axes = tuple(i for i in range(x.ndim) if i != channel_axis)
        count = 1
        for ax in axes:
            count *= x.shape[ax]
        pshape = tuple(x.shape[i] if i == channel_axis else 1 for i in range(x.ndim))
    if count < 2:
        raise ContractError(
            f"batch_norm in training mode needs >= 2 values per channel, got {count}"
        )
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    if _stats_out is not None:
        _stats_out.append((mu.reshape(-1), var.reshape(-1)))
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x.data - mu) * inv
    gr = g.data.reshape(pshape) if g.ndim else g.data
    br = b.data.reshape(pshape) if b.ndim else b.data
    out = T._make((xhat * gr + br).astype(x.dtype, copy=False), (x, g, b), "batch_norm")
    if out.requires_grad:

        def _bw(grad):
            if g.requires_grad:
                g.accumulate_grad((grad * xhat).sum(axis=axes).reshape(g.shape))
            if b.requires_grad:
                b.accumulate_grad(grad.sum(axis=axes).reshape(b.shape))
            if x.requires_grad:
                gm = grad.mean(axis=axes, keepdims=True)
                gxm = (grad * xhat).mean(axis=axes, keepdims=True)
                x.accumulate_grad(gr * inv * (grad - gm - xhat * gxm))

        out._backward_fn = _bw
    return out


class Linear:
    def __init__(self, in_dim, out_dim, rng, bias=True, name="linear", stddev=WEIGHT_STDDEV):
        self.name = name
        self.weight = init_normal(rng, (in_dim, out_dim), stddev=stddev, requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_dim, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)

    def params(self):
        out = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            out[f"{self.name}.bias"] = self.bias
        return out


class BatchNorm:
    """Per-channel batch norm with running statistics for inference.

    Running stats are plain arrays (never part of the graph) updated with
    momentum 0.99 on every training-mode call.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.99, name="bn"):
        self.name = name
        self.eps = eps
        self.momentum = momentum
        self.gamma = T.Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = T.Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def __call__(self, x, training):
        if training:
            stats = []
            out = batch_norm(x, self.gamma, self.beta, eps=self.eps, channel_axis=1,
                             _stats_out=stats)
            batch_mean, batch_var = stats[0]
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1.0 - m) * batch_mean
            self.running_var *= m
            self.running_var += (1.0 - m) * batch_var
            return out
        shape = tuple(x.shape[i] if i == 1 else 1 for i in range(x.ndim))
        inv = (1.0 / np.sqrt(self.running_var + self.eps)).astype(np.float32)
        scale = T.reshape(self.gamma * inv, shape)
        shift = T.reshape(self.beta - self.gamma * (self.running_mean * inv), shape)
        return x * T.broadcast_to(scale, x.shape) + T.broadcast_to(shift, x.shape)

    def params(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def state_arrays(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}


class Conv3d:
    def __init__(self, in_ch, out_ch, kernel, stride, pad, rng, bias=True, name="conv3d"):
        self.name = name
        self.stride = stride
        self.pad = pad
        k = kernel if isinstance(kernel, tuple) else (kernel,) * 3
        self.weight = init_normal(rng, (out_ch, in_ch, *k), stddev=WEIGHT_STDDEV, requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        out = C.conv3d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = out + T.broadcast_to(T.reshape(self.bias, (1, -1, 1, 1, 1)), out.shape)
        return out

    def params(self):
        out = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            out[f"{self.name}.bias"] = self.bias
        return out


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel, stride, pad, rng, bias=True, name="conv2d"):
        self.name = name
        self.stride = stride
        self.pad = pad
        k = kernel if isinstance(kernel, tuple) else (kernel,) * 2
        self.weight = init_normal(rng, (out_ch, in_ch, *k), stddev=WEIGHT_STDDEV, requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        out = C.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = out + T.broadcast_to(T.reshape(self.bias, (1, -1, 1, 1)), out.shape)
        return out

    def params(self):
        out = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            out[f"{self.name}.bias"] = self.bias
        return out


class ConvTranspose3d:
    def __init__(self, in_ch, out_ch, kernel, stride, pad, rng, bias=True, name="convt3d"):
        self.name = name
        self.stride = stride
        self.pad = pad
        k = kernel if isinstance(kernel, tuple) else (kernel,) * 3
        self.weight = init_normal(rng, (in_ch, out_ch, *k), stddev=WEIGHT_STDDEV, requires_grad=True)
        self.bias = T.Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x):
        out = C.conv3d_transposed(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = out + T.broadcast_to(T.reshape(self.bias, (1, -1, 1, 1, 1)), out.shape)
        return out

    def params(self):
        out = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            out[f"{self.name}.bias"] = self.bias
        return out


class LSTMCell:
    """Single-layer LSTM cell; gate order in the packed weights is i, f, g, o."""

    def __init__(self, input_dim, hidden_dim, rng, name="lstm", stddev=WEIGHT_STDDEV):
        self.name = name
        self.hidden_dim = hidden_dim
        self.w_x = init_normal(rng, (input_dim, 4 * hidden_dim), stddev=stddev, requires_grad=True)
        self.w_h = init_normal(rng, (hidden_dim, 4 * hidden_dim), stddev=stddev, requires_grad=True)
        bias = np.zeros(4 * hidden_dim, dtype=np.float32)
        bias[hidden_dim:2 * hidden_dim] = 1.0  # forget gate starts open so early tokens survive
        self.bias = T.Tensor(bias, requires_grad=True)

    def step(self, x, h, c):
        if x.shape[1] != self.w_x.shape[0]:
            raise ShapeError(f"lstm input width {x.shape} does not match weights {self.w_x.shape}")
        gates = T.linear(x, self.w_x) + T.linear(h, self.w_h) + T.broadcast_to(
            T.reshape(self.bias, (1, -1)), (x.shape[0], 4 * self.hidden_dim)
        )
        hd = self.hidden_dim
        i = T.sigmoid(gates[:, 0 * hd:1 * hd])
        f = T.sigmoid(gates[:, 1 * hd:2 * hd])
        g = T.tanh(gates[:, 2 * hd:3 * hd])
        o = T.sigmoid(gates[:, 3 * hd:4 * hd])
        c_next = f * c + i * g
        h_next = o * T.tanh(c_next)
        return h_next, c_next

    def run(self, xs, batch, dtype=np.float32):
        """Run over a list of per-step inputs; returns the list of hidden states."""
        h = T.Tensor(np.zeros((batch, self.hidden_dim), dtype=dtype))
        c = T.Tensor(np.zeros((batch, self.hidden_dim), dtype=dtype))
        hs = []
        for x in xs:
            h, c = self.step(x, h, c)
            hs.append(h)
        return hs

    def params(self):
        return {
            f"{self.name}.w_x": self.w_x,
            f"{self.name}.w_h": self.w_h,
            f"{self.name}.bias": self.bias,
        }


def merge_params(*param_dicts):
    out = {}
    for d in param_dicts:
        for k, v in d.items():
            if k in out:
                raise ContractError(f"duplicate parameter name {k!r}")
            out[k] = v
    return out
