"""Strided cross-correlation (2D/3D) and transposed 3D convolution.

All three ops share one im2col core: the forward pass lowers patches to a
single matmul, the input gradient is the col2im scatter of ``grad @ kernel``,
and the transposed convolution *is* that scatter used as a forward op, which
makes it the exact adjoint of ``conv3d`` under the inner product.

Kernel layouts: conv takes (c_out, c_in, *k); the transposed op takes
(c_in, c_out, *k) where c_in counts its own input channels, so one array can
serve both sides of the adjoint identity unchanged.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from tgansc.engine.tensor import Tensor, _make, _wrap
from tgansc.errors import ShapeError


def _norm_tuple(v, rank, name):
    if isinstance(v, int):
        v = (v,) * rank
    v = tuple(int(x) for x in v)
    if len(v) != rank:
        raise ShapeError(f"{name} must have {rank} entries, got {v}")
    return v


def _pad_input(x, pad):
    if all(p == 0 for p in pad):
        return x
    widths = [(0, 0), (0, 0)] + [(p, p) for p in pad]
    return np.pad(x, widths)


def _patch_matrix(xp, ksize, stride, out_sp):
    """(B*prod(out_sp), C*prod(ksize)) matrix of sliding patches of ``xp``."""
    b, c = xp.shape[:2]
    sb, sc = xp.strides[:2]
    ssp = xp.strides[2:]
    shape = (b, *out_sp, c, *ksize)
    strides = (sb, *[s * st for s, st in zip(ssp, stride)], sc, *ssp)
    view = as_strided(xp, shape=shape, strides=strides)
    rows = b * int(np.prod(out_sp))
    cols = c * int(np.prod(ksize))
    return view.reshape(rows, cols)


def _conv_forward(x, k, stride, pad):
    rank = x.ndim - 2
    sp = x.shape[2:]
    ksize = k.shape[2:]
    out_sp = []
    for i in range(rank):
        padded = sp[i] + 2 * pad[i]
        if ksize[i] > padded:
            raise ShapeError(
                f"kernel {k.shape} larger than padded input {x.shape} (pad {pad}) along axis {i}"
            )
        out_sp.append((padded - ksize[i]) // stride[i] + 1)
    out_sp = tuple(out_sp)
    xp = _pad_input(x, pad)
    patches = _patch_matrix(xp, ksize, stride, out_sp)
    c_out = k.shape[0]
    out = patches @ k.reshape(c_out, -1).T
    out = out.reshape(x.shape[0], *out_sp, c_out)
    out = np.moveaxis(out, -1, 1)
    return np.ascontiguousarray(out), patches, out_sp


def _col2im(dpatches, b, c, sp, ksize, stride, pad, out_sp):
    """Scatter-add patch gradients back onto a (B, C, *sp) array."""
    rank = len(sp)
    padded_sp = tuple(sp[i] + 2 * pad[i] for i in range(rank))
    dxp = np.zeros((b, c, *padded_sp), dtype=dpatches.dtype)
    blocks = dpatches.reshape(b, *out_sp, c, *ksize)
    move_src = tuple(range(1, rank + 1))
    move_dst = tuple(range(2, rank + 2))
    for offs in np.ndindex(*ksize):
        block = blocks[(slice(None),) * (1 + rank) + (slice(None),) + offs]
        block = np.moveaxis(block, move_src, move_dst)  # (B, *out_sp, C) -> (B, C, *out_sp)
        target = [slice(None), slice(None)]
        for i in range(rank):
            start = offs[i]
            target.append(slice(start, start + out_sp[i] * stride[i], stride[i]))
        dxp[tuple(target)] += block
    if all(p == 0 for p in pad):
        return dxp
    trim = [slice(None), slice(None)]
    for i in range(rank):
        trim.append(slice(pad[i], padded_sp[i] - pad[i]))
    return dxp[tuple(trim)]


def _conv_input_grad(g, k, stride, pad, in_sp):
    """d(conv)/d(input) as a forward computation; also the transposed conv."""
    rank = g.ndim - 2
    ksize = k.shape[2:]
    out_sp = g.shape[2:]
    g_mat = np.moveaxis(g, 1, -1).reshape(-1, k.shape[0])
    dpatches = g_mat @ k.reshape(k.shape[0], -1)
    return _col2im(dpatches, g.shape[0], k.shape[1], in_sp, ksize, stride, pad, out_sp)


def _conv_kernel_grad(patches, g, kshape):
    g_mat = np.moveaxis(g, 1, -1).reshape(-1, kshape[0])
    return (g_mat.T @ patches).reshape(kshape)


def _with_batch(x, rank, name):
    if x.ndim == rank + 1:
        return x.reshape((1,) + x.shape), True
    if x.ndim == rank + 2:
        return x, False
    raise ShapeError(f"{name} expects a {rank + 1}D or batched {rank + 2}D input, got shape {x.shape}")


def _conv(x, k, stride, pad, rank, name):
    x, k = _wrap(x), _wrap(k)
    stride = _norm_tuple(stride, rank, "stride")
    pad = _norm_tuple(pad, rank, "pad")
    if any(s < 1 for s in stride) or any(p < 0 for p in pad):
        raise ShapeError(f"invalid stride {stride} or pad {pad}")
    if k.ndim != rank + 2:
        raise ShapeError(f"{name} kernel must be {rank + 2}D, got shape {k.shape}")
    xb, squeezed = _with_batch(x.data, rank, name)
    if xb.shape[1] != k.shape[1]:
        raise ShapeError(f"{name} channel mismatch: input {x.shape} vs kernel {k.shape}")
    out_data, patches, _ = _conv_forward(xb, k.data, stride, pad)
    if squeezed:
        out_data = out_data[0]
    out = _make(out_data, (x, k), name)
    if out.requires_grad:
        in_sp = xb.shape[2:]

        def _bw(g):
            gb = g.reshape((1,) + g.shape) if squeezed else g
            if x.requires_grad:
                dx = _conv_input_grad(gb, k.data, stride, pad, in_sp)
                x.accumulate_grad(dx[0] if squeezed else dx)
            if k.requires_grad:
                k.accumulate_grad(_conv_kernel_grad(patches, gb, k.shape))

        out._backward_fn = _bw
    return out


def conv2d(x, k, stride=1, pad=0):
    """Cross-correlate (c_in, h, w) or (b, c_in, h, w) with kernels (c_out, c_in, kh, kw)."""
    return _conv(x, k, stride, pad, 2, "conv2d")


def conv3d(x, k, stride=1, pad=0):
    """Cross-correlate (c_in, l, h, w) or batched input with kernels (c_out, c_in, kl, kh, kw)."""
    return _conv(x, k, stride, pad, 3, "conv3d")


def conv3d_transposed(x, k, stride=1, pad=0):
    """Adjoint of conv3d as a forward op; kernel layout (c_in, c_out, kl, kh, kw).

    Output extent per spatial axis: (n - 1) * stride - 2 * pad + k.
    """
    rank = 3
    x, k = _wrap(x), _wrap(k)
    stride = _norm_tuple(stride, rank, "stride")
    pad = _norm_tuple(pad, rank, "pad")
    if any(s < 1 for s in stride) or any(p < 0 for p in pad):
        raise ShapeError(f"invalid stride {stride} or pad {pad}")
    if k.ndim != rank + 2:
        raise ShapeError(f"conv3d_transposed kernel must be 5D, got shape {k.shape}")
    xb, squeezed = _with_batch(x.data, rank, "conv3d_transposed")
    if xb.shape[1] != k.shape[0]:
        raise ShapeError(
            f"conv3d_transposed channel mismatch: input {x.shape} vs kernel {k.shape}"
        )
    ksize = k.shape[2:]
    out_sp = tuple(
        (xb.shape[2 + i] - 1) * stride[i] - 2 * pad[i] + ksize[i] for i in range(rank)
    )
    if any(n < 1 for n in out_sp):
        raise ShapeError(
            f"conv3d_transposed output extent {out_sp} is nonpositive for input {x.shape}, "
            f"kernel {k.shape}, stride {stride}, pad {pad}"
        )
    out_data = _conv_input_grad(xb, k.data, stride, pad, out_sp)
    if squeezed:
        out_data = out_data[0]
    out = _make(out_data, (x, k), "conv3d_transposed")
    if out.requires_grad:

        def _bw(g):
            gb = g.reshape((1,) + g.shape) if squeezed else g
            if x.requires_grad:
                dx, _, _ = _conv_forward(gb, k.data, stride, pad)
                x.accumulate_grad(dx[0] if squeezed else dx)
            if k.requires_grad:
                gp = _pad_input(gb, pad)
                patches = _patch_matrix(gp, ksize, stride, xb.shape[2:])
                k.accumulate_grad(_conv_kernel_grad(patches, xb, k.shape))

        out._backward_fn = _bw
    return out
