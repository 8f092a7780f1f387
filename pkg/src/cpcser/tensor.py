"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: every operation records its parents and a vector-Jacobian
product closure; ``backward()`` on a scalar walks the graph in reverse
topological order. The graph is rebuilt on every forward pass, which keeps
RNN unrolling trivially correct.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (frozen/eval forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ---- graph traversal ----

    def backward(self):
        """Populate ``grad`` on every reachable requires_grad leaf.

        The loss must be a scalar (size-1) tensor.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        topo = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                # leaf tensor: accumulate into .grad
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # ---- operator sugar ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data, parents, vjp):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Sum gradient over dimensions introduced or stretched by broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gdim, sdim) in enumerate(zip(g.shape, shape)):
        if sdim == 1 and gdim != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} are not broadcastable"
        ) from None


# ---- elementwise arithmetic ----

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def power(a, exponent):
    a = _as_tensor(a)
    exponent = float(exponent)
    out_data = a.data ** exponent
    return _make(
        out_data,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1.0),),
    )


def sqrt(a):
    return power(a, 0.5)


# ---- nonlinearities ----

def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a):
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, (a,), vjp)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def vjp(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return _make(out_data, (a,), vjp)


# ---- reductions ----

def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out_data, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def variance(a, axis=None, keepdims=False):
    """Population (divide-by-n) variance along an axis."""
    a = _as_tensor(a)
    centered = sub(a, mean(a, axis=axis, keepdims=True))
    return mean(mul(centered, centered), axis=axis, keepdims=keepdims)


# ---- structural ops ----

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul: expected 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ for {a.shape} and {b.shape}"
        )
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a, axes=None):
    a = _as_tensor(a)
    out_data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make(out_data, (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape):
    a = _as_tensor(a)
    return _make(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
    )


def broadcast_to(a, shape):
    a = _as_tensor(a)
    return _make(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (_unbroadcast(g, a.shape),),
    )


def concatenate(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis % len(base)
        ):
            raise ShapeError(
                f"concatenate: shapes {tensors[0].shape} and {t.shape} "
                f"differ off axis {axis}"
            )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        t = _as_tensor(t)
        expanded.append(reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]))
    return concatenate(expanded, axis=axis)


def getitem(a, key):
    a = _as_tensor(a)
    out_data = a.data[key]

    def vjp(g):
        da = np.zeros_like(a.data)
        np.add.at(da, key, g)
        return (da,)

    return _make(np.array(out_data, copy=True), (a,), vjp)


def gather_rows(a, indices):
    """Select rows of a 2-D tensor by integer index (duplicates allowed)."""
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out_data = a.data[indices]

    def vjp(g):
        da = np.zeros_like(a.data)
        # bincount per column: much faster than np.add.at for large gathers
        flat_idx = indices.reshape(-1)
        flat_g = g.reshape(-1, a.data.shape[1])
        for col in range(a.data.shape[1]):
            da[:, col] = np.bincount(
                flat_idx, weights=flat_g[:, col], minlength=a.data.shape[0]
            )
        return (da,)

    return _make(out_data, (a,), vjp)


# ---- 1-D convolution ----

def conv1d(x, w, b=None, stride=1):
    """Valid (unpadded) strided 1-D convolution.

    x: [B, C_in, L], w: [C_out, C_in, F], b: [C_out] or None.
    Output length = floor((L - F) / stride) + 1.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: expected 3-D operands, got {x.shape} and {w.shape}")
    batch, c_in, length = x.shape
    c_out, c_in_w, filt = w.shape
    if c_in != c_in_w:
        raise ShapeError(
            f"conv1d: input channels {c_in} != filter channels {c_in_w} "
            f"(input {x.shape}, filter {w.shape})"
        )
    if length < filt:
        raise ShapeError(
            f"conv1d: input length {length} shorter than filter {filt}"
        )
    l_out = (length - filt) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, filt, axis=2)
    windows = windows[:, :, :: stride, :]  # [B, C_in, L_out, F]
    out_data = np.einsum("bilf,oif->bol", windows, w.data, optimize=True)

    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (c_out,):
            raise ShapeError(f"conv1d: bias shape {b.shape} != ({c_out},)")
        out_data = out_data + b.data[None, :, None]
        parents.append(b)

    def vjp(g):
        dw = np.einsum("bilf,bol->oif", windows, g, optimize=True)
        dx = np.zeros((batch, c_in, length))
        offsets = stride * np.arange(l_out)
        contrib = np.einsum("bol,oif->bilf", g, w.data, optimize=True)
        for f in range(filt):
            # offsets + f are distinct positions, so fancy-index += is safe
            dx[:, :, offsets + f] += contrib[:, :, :, f]
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make(out_data, tuple(parents), vjp)


def conv1d_output_length(length, filt, stride):
    """Valid-convolution output length, the building block of shape arithmetic."""
    if length < filt:
        raise ShapeError(f"conv1d: input length {length} shorter than filter {filt}")
    return (length - filt) // stride + 1
