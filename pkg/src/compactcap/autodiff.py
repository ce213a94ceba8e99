"""Dense float64 tensors with reverse-mode differentiation.

Small by design: row-major numpy storage, an implicit DAG built as ops run,
and exactly the operations the captioner needs.  The one structural feature
that matters is parameter identity: a Parameter referenced from several graph
sites receives the sum of all per-site gradients, which is what makes
cross-layer and attention weight sharing trainable.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


class Tensor:
    """A node in the computation graph holding a float64 ndarray."""

    __slots__ = ("data", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """A named, trainable tensor; `.grad` persists across the backward pass."""

    __slots__ = ("name", "grad")

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name
        self.grad = None

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _result(data, parents, backward_fn, op: str) -> Tensor:
    # a NaN/Inf anywhere poisons the sum, so one reduction checks the tensor
    if not np.isfinite(data.sum()):
        raise FloatingPointError(f"non-finite value produced by {op}")
    if not _GRAD_ENABLED or not any(isinstance(p, Tensor) for p in parents):
        return Tensor(data)
    return Tensor(data, tuple(p for p in parents if isinstance(p, Tensor)), backward_fn)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), bwd, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), bwd, "mul")


def scale(x, c: float) -> Tensor:
    x = _as_tensor(x)
    return _result(x.data * c, (x,), lambda g, acc: acc(x, g * c), "scale")


def matmul(a, b) -> Tensor:
    """a @ b for 2-D operands, stacked (batched) operands, or stacked @ 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects >= 2-D operands")
    if b.data.ndim > 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(
            f"matmul batch dims differ: {a.data.shape} vs {b.data.shape}"
        )
    out_data = a.data @ b.data

    def bwd(g, acc):
        acc(a, g @ b.data.swapaxes(-1, -2))
        if b.data.ndim == 2:
            p, q = b.data.shape
            acc(b, a.data.reshape(-1, p).T @ g.reshape(-1, q))
        else:
            acc(b, a.data.swapaxes(-1, -2) @ g)

    return _result(out_data, (a, b), bwd, "matmul")


def affine(x, w, b=None) -> Tensor:
    """x @ w (+ bias broadcast over leading axes)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def relu(x) -> Tensor:
    x = _as_tensor(x)
    keep = x.data > 0.0
    return _result(x.data * keep, (x,), lambda g, acc: acc(x, g * keep), "relu")


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore"):  # log(0) -> -inf, caught by _result
        out_data = np.log(x.data)
    return _result(out_data, (x,), lambda g, acc: acc(x, g / x.data), "log")


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x is above the floor."""
    x = _as_tensor(x)
    keep = x.data > floor
    out_data = np.maximum(x.data, floor)
    return _result(out_data, (x,), lambda g, acc: acc(x, g * keep), "clip_min")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def bwd(g, acc):
        acc(x, g.reshape(x.data.shape))

    return _result(out_data, (x,), bwd, "reshape")


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    inverse = np.argsort(axes)

    def bwd(g, acc):
        acc(x, g.transpose(inverse))

    return _result(x.data.transpose(axes), (x,), bwd, "transpose")


def embedding(table, ids) -> Tensor:
    """Row gather: ids of any shape pick rows from a [rows x r] table."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"token id out of range for {table.data.shape[0]}-row table"
        )
    out_data = table.data[ids]

    def bwd(g, acc):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        acc(table, dt)

    return _result(out_data, (table,), bwd, "embedding")


def sum_all(x) -> Tensor:
    x = _as_tensor(x)

    def bwd(g, acc):
        acc(x, np.full(x.data.shape, float(g)))

    return _result(x.data.sum(), (x,), bwd, "sum_all")


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size

    def bwd(g, acc):
        acc(x, np.full(x.data.shape, float(g) / n))

    return _result(x.data.mean(), (x,), bwd, "mean_all")


# ---------------------------------------------------------------------------
# fused neural ops


def layer_normalize(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis, then scale and shift."""
    x, gain, shift = _as_tensor(x), _as_tensor(gain), _as_tensor(shift)
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out_data = xhat * gain.data + shift.data

    def bwd(g, acc):
        dxhat = g * gain.data
        # d/dx of (x - mean) * inv_std with mean/var both functions of x
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        acc(x, dx)
        red = tuple(range(g.ndim - 1))
        acc(gain, (g * xhat).sum(axis=red))
        acc(shift, g.sum(axis=red))

    return _result(out_data, (x, gain, shift), bwd, "layer_normalize")


def masked_softmax(logits, mask=None) -> Tensor:
    """Row softmax over the last axis; masked-out (False) positions get 0."""
    logits = _as_tensor(logits)
    z = logits.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        # validate on the un-broadcast mask; broadcasting repeats rows only
        if not mask.any(axis=-1).all():
            raise ValueError("no attendable position in some softmax row")
        z = np.where(mask, z, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=-1, keepdims=True)

    def bwd(g, acc):
        dot = (g * probs).sum(axis=-1, keepdims=True)
        acc(logits, probs * (g - dot))

    return _result(probs, (logits,), bwd, "masked_softmax")


def cross_entropy(logits, targets, ignore_index: int = -1) -> Tensor:
    """Mean negative log-likelihood over positions whose target is not ignored."""
    logits = _as_tensor(logits)
    z = logits.data
    n_classes = z.shape[-1]
    flat = z.reshape(-1, n_classes)
    tgt = np.asarray(targets).reshape(-1)
    valid = tgt != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every position is ignored")
    if tgt[valid].min() < 0 or tgt[valid].max() >= n_classes:
        raise IndexError("target id out of range")
    zmax = flat.max(axis=-1, keepdims=True)
    logsumexp = zmax + np.log(np.exp(flat - zmax).sum(axis=-1, keepdims=True))
    logp = flat - logsumexp
    rows = np.arange(flat.shape[0])
    loss = -logp[rows[valid], tgt[valid]].mean()

    def bwd(g, acc):
        probs = np.exp(logp)
        probs[rows[valid], tgt[valid]] -= 1.0
        probs[~valid] = 0.0
        acc(logits, (float(g) / n_valid) * probs.reshape(z.shape))

    return _result(loss, (logits,), bwd, "cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass


def _toposort(root: Tensor) -> list[Tensor]:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order  # parents precede children


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every Parameter reachable from a scalar loss.

    A parameter referenced from k graph sites receives the sum of its k
    per-site gradients.  Raises if any reachable parameter still carries a
    gradient from an earlier pass.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {loss.data.shape}")
    order = _toposort(loss)
    params = [n for n in order if isinstance(n, Parameter)]
    if any(p.grad is not None for p in params):
        raise RuntimeError("stale gradients: zero parameter gradients first")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(node, g):
        key = id(node)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = np.asarray(g, dtype=np.float64)

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):  # parameters are always leaves
            node.grad = g
        elif node._backward is not None:
            node._backward(g, acc)

    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def finite_difference(f, param: Parameter, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. every entry of `param`."""
    base = param.data.copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        param.data[idx] = base[idx] + h
        hi = float(f().data)
        param.data[idx] = base[idx] - h
        lo = float(f().data)
        param.data[idx] = base[idx]
        grad[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    param.data[...] = base
    return grad
