"""Dense float64 tensors with reverse-mode differentiation.

Forward operations execute eagerly on numpy arrays.  While a
:class:`ComputationRecord` is active, every operation touching a tensor
with ``requires_grad=True`` appends a node (op kind, input node ids,
backward closure) to the record.  The node list is append-only, so the
inputs of a node always precede it; the backward sweep therefore walks
the list exactly once, in reverse.

Everything is 64-bit and row-major, and all arithmetic is plain numpy,
so identical inputs give bitwise identical outputs and gradients.
Records are confined to a single thread: one forward/backward pass per
record, no sharing.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit


class NumericsError(Exception):
    """Numerical evaluation failure (non-finite values, bad reduction)."""


class DimensionError(NumericsError):
    """Operands have incompatible shapes for the requested operation."""


_ACTIVE: list["ComputationRecord"] = []

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A float64 array plus its position on the active record, if any."""

    __slots__ = ("data", "requires_grad", "node_id", "record_ident")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = -1
        self.record_ident = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class ComputationRecord:
    """Append-only tape of operations for one forward/backward pass."""

    _next_ident = 0
    __slots__ = ("ident", "ops", "inputs", "backwards", "grads")

    def __init__(self):
        self.ident = ComputationRecord._next_ident
        ComputationRecord._next_ident += 1
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.backwards: list = []  # None for leaves
        self.grads: list | None = None

    def __len__(self) -> int:
        return len(self.ops)

    def __enter__(self) -> "ComputationRecord":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE.pop()
        assert popped is self, "computation records must nest strictly"

    def _append(self, op: str, input_ids: tuple[int, ...], backward) -> int:
        self.ops.append(op)
        self.inputs.append(input_ids)
        self.backwards.append(backward)
        return len(self.ops) - 1

    def watch(self, t: Tensor) -> int:
        """Register ``t`` as a leaf of this record and return its node id."""
        if t.record_ident == self.ident:
            return t.node_id
        t.node_id = self._append("leaf", (), None)
        t.record_ident = self.ident
        return t.node_id

    def backward(self, root: Tensor) -> None:
        """Accumulate gradients of the scalar ``root`` into every node.

        Each node's backward closure runs at most once; fan-out is handled
        by summing contributions as they arrive.
        """
        if root.record_ident != self.ident or root.node_id < 0:
            raise NumericsError("backward root does not belong to this record")
        if root.data.size != 1:
            raise DimensionError("backward expects a scalar root")
        if not np.all(np.isfinite(root.data)):
            raise NumericsError("backward root is not finite")
        grads: list = [None] * len(self.ops)
        grads[root.node_id] = np.ones_like(root.data)
        for nid in range(root.node_id, -1, -1):
            g = grads[nid]
            fn = self.backwards[nid]
            if g is None or fn is None:
                continue
            for iid, gi in zip(self.inputs[nid], fn(g)):
                if iid < 0 or gi is None:
                    continue
                grads[iid] = gi if grads[iid] is None else grads[iid] + gi
        self.grads = grads

    def grad(self, t: Tensor) -> np.ndarray | None:
        """Gradient of the last backward() root with respect to ``t``."""
        if self.grads is None:
            raise NumericsError("grad queried before backward")
        if t.record_ident != self.ident or t.node_id < 0:
            return None
        g = self.grads[t.node_id]
        if g is None:
            return None
        return np.broadcast_to(g, t.data.shape).astype(np.float64, copy=False)


def active_record() -> ComputationRecord | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _apply(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    rec = active_record()
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if rec is not None and needs:
        ids = tuple(rec.watch(t) if t.requires_grad else -1 for t in inputs)
        out.node_id = rec._append(op, ids, backward)
        out.record_ident = rec.ident
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _apply("add", out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _apply("sub", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _apply("mul", out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return _apply("neg", -a.data, (a,), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _apply("scale", a.data * c, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _apply("matmul", out, (a, b), backward)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _apply("transpose", a.data.transpose(axes), (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape

    def backward(g):
        return (g.reshape(orig),)

    return _apply("reshape", a.data.reshape(shape), (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    rec = active_record()
    needs = any(t.requires_grad for t in tensors)
    res = Tensor(out, requires_grad=needs)
    if rec is not None and needs:
        ids = tuple(rec.watch(t) if t.requires_grad else -1 for t in tensors)
        res.node_id = rec._append("concat", ids, backward)
        res.record_ident = rec.ident
    return res


def gather_flat(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick elements of flattened ``a`` at ``index``; output has index's shape.

    The backward pass scatter-adds, so repeated indices accumulate.
    """
    idx = np.asarray(index, dtype=np.int64)
    flat = a.data.reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= flat.size):
        raise DimensionError("gather index out of range")
    out = flat[idx]
    nelem = flat.size
    orig = a.data.shape

    def backward(g):
        buf = np.zeros(nelem, dtype=np.float64)
        np.add.at(buf, idx.reshape(-1), g.reshape(-1))
        return (buf.reshape(orig),)

    return _apply("gather", out, (a,), backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError("embedding table must be 2-d")
    rows, dim = table.data.shape
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise DimensionError("embedding id out of range")
    flat_idx = ids[..., None] * dim + np.arange(dim, dtype=np.int64)
    return gather_flat(table, flat_idx)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_reduce(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, a.data.ndim)
    out = a.data.sum(axis=ax, keepdims=keepdims)
    orig = a.data.shape

    def backward(g):
        if ax is None:
            return (np.broadcast_to(g, orig),)
        gg = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gg, orig),)

    return _apply("sum", out, (a,), backward)


def mean_reduce(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ax = _norm_axis(axis, a.data.ndim)
    out = a.data.mean(axis=ax, keepdims=keepdims)
    orig = a.data.shape
    if ax is None:
        count = a.data.size
    else:
        count = int(np.prod([orig[i] for i in ax]))

    def backward(g):
        if ax is None:
            return (np.broadcast_to(g, orig) / count,)
        gg = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gg, orig) / count,)

    return _apply("mean", out, (a,), backward)


def max_reduce(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient routes to the first argmax per slice."""
    ax = axis % a.data.ndim
    idx = np.argmax(a.data, axis=ax)
    out = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax).squeeze(ax)
    orig = a.data.shape

    def backward(g):
        buf = np.zeros(orig, dtype=np.float64)
        np.put_along_axis(buf, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
        return (buf,)

    return _apply("max", out, (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalizers


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(g):
        return (g * mask,)

    return _apply("relu", np.where(mask, a.data, 0.0), (a,), backward)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi

    def backward(g):
        dens = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * dens),)

    return _apply("gelu", out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _apply("sigmoid", y, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x)

    def backward(g):
        return (g * expit(x),)

    return _apply("softplus", out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax along ``axis``; rows sum to one."""
    ax = axis % a.data.ndim
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _apply("softmax", y, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ax = axis % a.data.ndim
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    y = shifted - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=ax, keepdims=True),)

    return _apply("log_softmax", y, (a,), backward)


def layer_norm_core(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _apply("layer_norm", y, (a,), backward)
