"""Dense float64 arrays with taped reverse-mode differentiation.

Every operation links its result to its inputs and stores a closure that
routes the incoming gradient, so calling :meth:`Tensor.backward` on a
scalar fills the gradients of all reachable leaves in one reverse sweep.
A tape belongs to a single forward pass and is never reused: running a
new forward builds a new graph. Everything is double precision.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import DegenerateBatchError, NumericError, ShapeError, StructureError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable gradient recording inside the block (inference passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def as_tensor(value) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 ndarray plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Reverse sweep from a scalar; fills grads of reachable leaves."""
        if self.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # elementwise arithmetic (numpy broadcasting rules)
    # ------------------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return _record(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        return _record(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return _record(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return _record(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other):
        return as_tensor(other).__truediv__(self)

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(-g)

        return _record(-a.data, (a,), backward)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a, c = self, float(exponent)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * c * a.data ** (c - 1.0))

        return _record(a.data ** c, (a,), backward)

    # ------------------------------------------------------------------
    # linear algebra and shape ops
    # ------------------------------------------------------------------

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError("matmul expects 2-D operands")
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul shapes do not chain: {a.data.shape} @ {b.data.shape}")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        # einsum (unoptimized) reduces every output element in a fixed
        # row-independent order, so equal input rows give bit-equal output
        # rows regardless of their position; BLAS does not guarantee that,
        # and the permutation-equivariance contract needs it. Gradients
        # have no such contract and keep the fast path.
        return _record(np.einsum("nd,dm->nm", a.data, b.data), (a, b), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.reshape(old))

        return _record(a.data.reshape(shape), (a,), backward)

    def transpose(self):
        if self.data.ndim != 2:
            raise ShapeError("transpose expects a 2-D tensor")
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.T)

        return _record(a.data.T.copy(), (a,), backward)

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        ndim = a.data.ndim

        def backward(g):
            if not a.requires_grad:
                return
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(x % ndim for x in axes):
                    gg = np.expand_dims(gg, ax)
            a._accumulate(np.broadcast_to(gg, a.data.shape).astype(np.float64, copy=False))

        return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ------------------------------------------------------------------
    # elementwise transcendentals
    # ------------------------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out_data)

        return _record(out_data, (a,), backward)

    def log(self):
        a = self
        if (a.data <= 0.0).any():
            raise NumericError("log of a non-positive value")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return _record(np.log(a.data), (a,), backward)

    def sqrt(self):
        a = self
        if (a.data < 0.0).any():
            raise NumericError("sqrt of a negative value")
        root = np.sqrt(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * 0.5 / root)

        return _record(root, (a,), backward)

    def clamp_min(self, floor: float):
        """Elementwise maximum with a constant; clamped entries get zero grad."""
        a = self
        passing = a.data >= floor

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * passing)

        return _record(np.maximum(a.data, floor), (a,), backward)

    # ------------------------------------------------------------------
    # gather / scatter / segment ops
    # ------------------------------------------------------------------

    def take_rows(self, indices):
        """Gather along axis 0. Backward scatter-adds into the source."""
        a = self
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1:
            raise ShapeError("take_rows expects a flat index list")

        def backward(g):
            if not a.requires_grad:
                return
            buf = np.zeros_like(a.data)
            rows = a.data.shape[0]
            # uniform-repeat pattern (segment gathers) reduces with a reshape
            if rows > 0 and idx.size % max(rows, 1) == 0 and idx.size >= rows:
                k = idx.size // rows
                if np.array_equal(idx, np.repeat(np.arange(rows), k)):
                    buf += g.reshape((rows, k) + a.data.shape[1:]).sum(axis=1)
                    a._accumulate(buf)
                    return
            np.add.at(buf, idx, g)
            a._accumulate(buf)

        return _record(a.data[idx], (a,), backward)

    def slice_rows(self, start: int, stop: int):
        a = self

        def backward(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[start:stop] = g
                a._accumulate(buf)

        return _record(a.data[start:stop].copy(), (a,), backward)

    def segment_max(self, segment_ids, num_segments: int):
        out, _ = segment_max_with_argmax(self, segment_ids, num_segments)
        return out


def _record(data: np.ndarray, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED:
        live = tuple(p for p in parents if p.requires_grad)
        if live:
            out.requires_grad = True
            out._parents = live
            out._backward = backward
    return out


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
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


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors; backward splits the gradient at the seams."""
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                t._accumulate(g[tuple(sl)])

    return _record(np.concatenate(datas, axis=axis), tuple(tensors), backward)


def scatter_rows(values: Tensor, indices, size: int) -> Tensor:
    """Scatter a flat vector into a zero vector of length ``size``.

    Indices must be unique; overlapping scatters are a caller bug.
    """
    values = as_tensor(values)
    idx = np.asarray(indices, dtype=np.intp)
    if values.data.ndim != 1 or idx.shape != values.data.shape:
        raise ShapeError("scatter_rows expects matching flat values and indices")
    out = np.zeros(size)
    out[idx] = values.data

    def backward(g):
        if values.requires_grad:
            values._accumulate(g[idx])

    return _record(out, (values,), backward)


def _segment_max_forward(x: np.ndarray, ids: np.ndarray, num_segments: int):
    rows, channels = x.shape
    counts = np.bincount(ids, minlength=num_segments)
    if counts.size > num_segments:
        raise StructureError("segment id outside [0, num_segments)")
    if (counts == 0).any():
        raise StructureError(f"segment {int(np.argmin(counts))} is empty")
    if rows % num_segments == 0:
        k = rows // num_segments
        if np.array_equal(ids, np.repeat(np.arange(num_segments), k)):
            blocks = x.reshape(num_segments, k, channels)
            local = blocks.argmax(axis=1)
            out = np.take_along_axis(blocks, local[:, None, :], axis=1)[:, 0, :]
            arg = local + (np.arange(num_segments) * k)[:, None]
            return out, arg
    order = np.argsort(ids, kind="stable")
    bounds = np.searchsorted(ids[order], np.arange(num_segments + 1))
    out = np.empty((num_segments, channels))
    arg = np.empty((num_segments, channels), dtype=np.intp)
    for seg in range(num_segments):
        seg_rows = order[bounds[seg]:bounds[seg + 1]]
        block = x[seg_rows]
        local = block.argmax(axis=0)
        out[seg] = block[local, np.arange(channels)]
        arg[seg] = seg_rows[local]
    return out, arg


def segment_max_with_argmax(x: Tensor, segment_ids, num_segments: int):
    """Per-segment, per-channel max over rows of a 2-D tensor.

    Ties go to the lowest row index, and the backward pass routes the
    incoming gradient only to that winning row.
    Returns the pooled tensor and the (segments, channels) argmax rows.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("segment_max expects a 2-D tensor")
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape != (x.data.shape[0],):
        raise ShapeError("segment ids must be one per row")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise StructureError("segment id outside [0, num_segments)")
    out, arg = _segment_max_forward(x.data, ids, num_segments)
    channels = x.data.shape[1]
    cols = np.broadcast_to(np.arange(channels), arg.shape)

    def backward(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            # (row, channel) pairs are unique because each row lives in
            # exactly one segment, so plain fancy add is safe
            buf[arg, cols] += g
            x._accumulate(buf)

    return _record(out, (x,), backward), arg


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """y = x for x >= 0 else slope * x, with a per-channel slope."""
    x = as_tensor(x)
    slope = as_tensor(slope)
    if x.data.shape[-1] != slope.data.shape[-1]:
        raise ShapeError(
            f"slope has {slope.data.shape[-1]} channels, input has {x.data.shape[-1]}")
    positive = x.data >= 0.0
    reduce_axes = tuple(range(x.data.ndim - 1))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.where(positive, g, g * slope.data))
        if slope.requires_grad:
            contrib = np.where(positive, 0.0, g * x.data)
            slope._accumulate(contrib.sum(axis=reduce_axes) if reduce_axes else contrib)

    return _record(np.where(positive, x.data, x.data * slope.data), (x, slope), backward)


def batchnorm_train(x: Tensor, scale: Tensor, shift: Tensor, eps: float):
    """Normalize per channel over rows with batch statistics.

    Returns the normalized-and-affine output together with the batch mean
    and biased variance so the caller can maintain running statistics.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("batchnorm expects a 2-D (rows, channels) tensor")
    rows = x.data.shape[0]
    if rows < 2:
        raise DegenerateBatchError(f"train-mode batch norm needs >= 2 rows, got {rows}")
    mean = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = xhat * scale.data + shift.data

    def backward(g):
        if shift.requires_grad:
            shift._accumulate(g.sum(axis=0))
        if scale.requires_grad:
            scale._accumulate((g * xhat).sum(axis=0))
        if x.requires_grad:
            dxhat = g * scale.data
            dx = (inv / rows) * (
                rows * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            x._accumulate(dx)

    return _record(out, (x, scale, shift), backward), mean, var
