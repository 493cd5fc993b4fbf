"""Reverse-mode autodiff over flat numpy storage.

A ``Tensor`` is simultaneously the value container and the graph node: it
carries ``data``, a lazily allocated ``grad`` of the same shape, an ``op_tag``
naming the producing operation, and ordered parent references. ``backward``
walks the graph once in reverse topological order and accumulates gradients
additively, so repeated calls without ``zero_grads`` sum their contributions.

Training arithmetic is float32 by default; every op preserves the dtype of
its inputs, so building a graph from float64 leaves yields a float64 graph
(used by the finite-difference checks).
"""

import numpy as np

from tgansc.errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op_tag", "parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None, parents=(), op_tag="leaf"):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op_tag = op_tag
        self.parents = parents
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op_tag}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """Same storage, no graph: gradients stop here."""
        return Tensor(self.data, requires_grad=False, op_tag="detach")

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op_tag):
    """Output node; backward machinery attaches only when a parent needs it."""
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op_tag=op_tag)
    if needs:
        out.parents = parents
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- graph traversal ---------------------------------------------------------


def backward(root):
    """Accumulate d(root)/d(node) into ``grad`` for every reachable node.

    ``root`` must be scalar-valued. Calling twice without clearing grads adds
    a second full contribution.
    """
    if not isinstance(root, Tensor):
        raise ContractError("backward expects a Tensor root")
    if root.size != 1:
        raise ContractError(f"backward root must be scalar-valued, got shape {root.shape}")
    if not root.requires_grad:
        return

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))

    root.accumulate_grad(np.ones_like(root.data))
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# -- elementwise -------------------------------------------------------------


def add(a, b):
    if not isinstance(b, Tensor) and not isinstance(a, Tensor):
        raise ContractError("add needs at least one Tensor operand")
    if not isinstance(b, Tensor):
        a = _wrap(a)
        out = _make(a.data + b, (a,), "add")
        if out.requires_grad:
            out._backward_fn = lambda g: a.accumulate_grad(_unbroadcast(g, a.shape))
        return out
    if not isinstance(a, Tensor):
        return add(b, a)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:

        def _bw(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.shape))

        out._backward_fn = _bw
    return out


def mul(a, b):
    if not isinstance(b, Tensor):
        a = _wrap(a)
        out = _make(a.data * b, (a,), "mul")
        if out.requires_grad:
            out._backward_fn = lambda g: a.accumulate_grad(_unbroadcast(g * b, a.shape))
        return out
    if not isinstance(a, Tensor):
        return mul(b, a)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:

        def _bw(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

        out._backward_fn = _bw
    return out


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data / b.data, (a, b), "div")
    if out.requires_grad:

        def _bw(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        out._backward_fn = _bw
    return out


def exp(x):
    x = _wrap(x)
    out = _make(np.exp(x.data), (x,), "exp")
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(g * out.data)
    return out


def log(x):
    x = _wrap(x)
    out = _make(np.log(x.data), (x,), "log")
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(g / x.data)
    return out


def sqrt(x):
    x = _wrap(x)
    out = _make(np.sqrt(x.data), (x,), "sqrt")
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(g * (0.5 / out.data))
    return out


def square(x):
    return mul(x, x)


def clamp(x, lo, hi):
    """Clip values into [lo, hi]; gradient passes only where unclipped."""
    x = _wrap(x)
    out = _make(np.clip(x.data, lo, hi), (x,), "clamp")
    if out.requires_grad:
        inside = (x.data >= lo) & (x.data <= hi)

        def _bw(g):
            x.accumulate_grad(g * inside)

        out._backward_fn = _bw
    return out


# -- activations --------------------------------------------------------------


def relu(x):
    x = _wrap(x)
    out = _make(np.maximum(x.data, 0), (x,), "relu")
    if out.requires_grad:
        mask = x.data > 0
        out._backward_fn = lambda g: x.accumulate_grad(g * mask)
    return out


def leaky_relu(x, slope=0.2):
    x = _wrap(x)
    out = _make(np.where(x.data > 0, x.data, x.data * x.data.dtype.type(slope)), (x,), "leaky_relu")
    if out.requires_grad:
        scale = np.where(x.data > 0, x.data.dtype.type(1), x.data.dtype.type(slope))
        out._backward_fn = lambda g: x.accumulate_grad(g * scale)
    return out


def sigmoid(x):
    x = _wrap(x)
    # evaluated in the two-branch form so large |x| cannot overflow exp
    d = x.data
    pos = d >= 0
    z = np.exp(np.where(pos, -d, d))
    val = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(d.dtype)
    out = _make(val, (x,), "sigmoid")
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(g * (out.data * (1.0 - out.data)))
    return out


def tanh(x):
    x = _wrap(x)
    out = _make(np.tanh(x.data), (x,), "tanh")
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(g * (1.0 - out.data * out.data))
    return out


# -- reductions ---------------------------------------------------------------


def tensor_sum(x, axis=None, keepdims=False):
    x = _wrap(x)
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum")
    if out.requires_grad:
        def _bw(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            x.accumulate_grad(np.broadcast_to(gg, x.shape).astype(x.dtype, copy=False))

        out._backward_fn = _bw
    return out


def mean(x, axis=None, keepdims=False):
    x = _wrap(x)
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= x.shape[ax]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- shape --------------------------------------------------------------------


def reshape(x, shape):
    x = _wrap(x)
    out = _make(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(g.reshape(x.shape))
    return out


def transpose(x, axes=None):
    x = _wrap(x)
    out = _make(np.transpose(x.data, axes), (x,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else tuple(np.argsort(axes))
        out._backward_fn = lambda g: x.accumulate_grad(np.transpose(g, inv))
    return out


def broadcast_to(x, shape):
    x = _wrap(x)
    out = _make(np.broadcast_to(x.data, shape).copy(), (x,), "broadcast")
    if out.requires_grad:
        out._backward_fn = lambda g: x.accumulate_grad(_unbroadcast(g, x.shape))
    return out


def concat(tensors, axis=0):
    tensors = tuple(_wrap(t) for t in tensors)
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def _bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(lo, hi)
                    t.accumulate_grad(g[tuple(sl)])

        out._backward_fn = _bw
    return out


def _index_is_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(x, index):
    """Indexing/slicing; integer-array indices scatter-add on backward."""
    x = _wrap(x)
    idx = index
    if isinstance(idx, list):
        idx = np.asarray(idx)
    out = _make(x.data[idx], (x,), "take")
    if out.requires_grad:
        advanced = _index_is_advanced(idx)

        def _bw(g):
            buf = np.zeros_like(x.data)
            if advanced:
                np.add.at(buf, idx, g)
            else:
                buf[idx] += g
            x.accumulate_grad(buf)

        out._backward_fn = _bw
    return out


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:

        def _bw(g):
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)

        out._backward_fn = _bw
    return out


def linear(x, w, bias=None):
    """Affine map ``x @ w (+ bias)`` for ``x`` of shape (n, a), ``w`` (a, b)."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear shapes incompatible: x {x.shape} vs w {w.shape}")
    out = matmul(x, w)
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (w.shape[1],):
            raise ShapeError(f"linear bias shape {bias.shape} does not match output width {w.shape[1]}")
        out = add(out, bias)
    return out


def cross_entropy_logits(logits, targets):
    """Per-row softmax cross-entropy; ``targets`` are integer class indices."""
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy_logits expects (n, k) logits and (n,) targets, got {logits.shape} / {t.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    softmax = ez / denom
    rows = np.arange(t.shape[0])
    losses = np.log(denom[:, 0]) - z[rows, t]
    out = _make(losses.astype(logits.dtype), (logits,), "cross_entropy")
    if out.requires_grad:

        def _bw(g):
            d = softmax.astype(logits.dtype).copy()
            d[rows, t] -= 1.0
            logits.accumulate_grad(d * g[:, None])

        out._backward_fn = _bw
    return out
