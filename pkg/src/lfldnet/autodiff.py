"""Dense tensors with tape-based reverse-mode differentiation.

Operations on tensors that track gradients are recorded on the innermost
active :class:`Tape`.  Outside a tape nothing is recorded, which is how
inference runs.  Typical use::

    with Tape() as tape:
        loss = mean_squared_error(model(x), y)
    grads = tape.backward(loss)

Only bias-row broadcasting is supported (``add(x[n, m], b[m])``); every
other primitive requires matching shapes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, ContractError, ShapeError, TapeStateError

LECUN_A = 1.7159
LECUN_B = 2.0 / 3.0

_default_dtype = np.dtype(np.float32)
_tape_stack: list = []


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported precision {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (``"float64"`` for gradient checks)."""
    old = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    """Dense real array, optionally participating in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = _default_dtype
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self.name = name

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor / tensor is not supported; divide by a constant")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


class _Node:
    __slots__ = ("parents", "outputs", "backward")

    def __init__(self, parents, outputs, backward):
        self.parents = parents
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Ordered record of the primitives applied to grad-tracked tensors."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor) -> dict:
        """Propagate d(loss) to every tracked tensor; returns ``{leaf: grad}``.

        Nodes are replayed exactly once, in reverse recording order.  Leaf
        gradients accumulate into ``.grad``; intermediates get theirs
        assigned.
        """
        if self.consumed:
            raise TapeStateError("backward already ran on this tape; call reset() first")
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", type(loss).__name__)
            raise ContractError(f"backward needs a scalar loss, got shape {shape}")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        seen = {id(loss): loss}
        produced = set()
        for node in reversed(self.nodes):
            outs = [grads.get(id(o)) for o in node.outputs]
            for o in node.outputs:
                produced.add(id(o))
            if all(g is None for g in outs):
                continue
            if len(node.outputs) == 1:
                pgrads = node.backward(outs[0])
            else:
                pgrads = node.backward(outs)
            for p, g in zip(node.parents, pgrads):
                if g is None or not isinstance(p, Tensor) or not p.requires_grad:
                    continue
                if g.shape != p.shape:
                    raise ShapeError(f"internal: gradient shape {g.shape} != operand shape {p.shape}")
                k = id(p)
                if k in grads:
                    grads[k] = grads[k] + g
                else:
                    grads[k] = g
                    seen[k] = p

        leaves = {}
        for k, t in seen.items():
            g = grads[k].astype(t.dtype, copy=False)
            if k in produced or t is loss:
                t.grad = g
            else:
                t.grad = g if t.grad is None else t.grad + g
                leaves[t] = t.grad
        self.consumed = True
        self.nodes = []
        return leaves


def current_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def no_tape():
    """Run a block without recording, even inside an active tape."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


def backward(loss: Tensor) -> dict:
    """Backward through the tape ``loss`` was recorded on."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", type(loss).__name__)
        raise ContractError(f"backward needs a scalar loss, got shape {shape}")
    if loss._tape is None:
        raise ContractError("loss is not connected to any tape")
    return loss._tape.backward(loss)


def custom_op(parents: Sequence, outputs: Sequence[np.ndarray], backward_fn: Callable):
    """Wrap raw output arrays as tensors and record ``backward_fn`` if needed.

    ``backward_fn`` receives the output gradient (a list of them for
    multi-output ops, ``None`` where an output is unused) and returns one
    gradient or ``None`` per parent.
    """
    tape = current_tape()
    track = tape is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    outs = [Tensor(o, requires_grad=track) for o in outputs]
    if track:
        for o in outs:
            o._tape = tape
        tape.nodes.append(_Node(tuple(parents), tuple(outs), backward_fn))
    return outs


def _unary(x: Tensor, y: np.ndarray, bwd):
    return custom_op((x,), (y,), bwd)[0]


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return custom_op((a, b), (ad @ bd,), bwd)[0]


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` as one recorded primitive."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear dimension mismatch: {x.shape} @ {w.shape}")
    xd, wd = x.data, w.data
    y = xd @ wd
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
        y = y + b.data
        parents.append(b)

    def bwd(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return custom_op(parents, (y,), bwd)[0]


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _is_row_broadcast(a: Tensor, b: Tensor) -> bool:
    return b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1] and a.shape != b.shape


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = as_tensor(a)
        return _unary(a, a.data + np.asarray(b, a.dtype), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    if _is_row_broadcast(a, b):
        m = b.shape[0]
        return custom_op((a, b), (a.data + b.data,),
                         lambda g: (g, g.reshape(-1, m).sum(axis=0)))[0]
    _check_same(a, b, "add")
    return custom_op((a, b), (a.data + b.data,), lambda g: (g, g))[0]


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add(a, -b)
    a, b = as_tensor(a), as_tensor(b)
    if _is_row_broadcast(a, b):
        m = b.shape[0]
        return custom_op((a, b), (a.data - b.data,),
                         lambda g: (g, -g.reshape(-1, m).sum(axis=0)))[0]
    _check_same(a, b, "sub")
    return custom_op((a, b), (a.data - b.data,), lambda g: (g, -g))[0]


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = as_tensor(a)
        c = np.asarray(b, a.dtype)
        return _unary(a, a.data * c, lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if _is_row_broadcast(a, b):
        m = b.shape[0]
        return custom_op((a, b), (ad * bd,),
                         lambda g: (g * bd, (g * ad).reshape(-1, m).sum(axis=0)))[0]
    _check_same(a, b, "mul")
    return custom_op((a, b), (ad * bd,), lambda g: (g * bd, g * ad))[0]


def neg(x) -> Tensor:
    return activation("neg", x)


def _lecun(x):
    t = np.tanh(LECUN_B * x)
    return LECUN_A * t, t


def _std_normal_cdf(x):
    # ndtr evaluates the erf-based normal CDF in double precision for both dtypes
    return special.ndtr(x)


def _std_normal_pdf(x):
    return np.exp(-0.5 * x * x) * x.dtype.type(1.0 / np.sqrt(2.0 * np.pi))


def lecun_tanh_np(x):
    return LECUN_A * np.tanh(LECUN_B * x)


def gelu_np(x):
    return x * _std_normal_cdf(x)


def sigmoid_np(x):
    return special.expit(x)


ACTIVATIONS = ("lecun_tanh", "gelu", "sigmoid", "tanh", "exp", "neg",
               "sin", "cos", "softplus", "identity", "square")


def activation(kind: str, x) -> Tensor:
    """Elementwise activation.  ``gelu`` is the exact ``x * Phi(x)`` form."""
    x = as_tensor(x)
    xd = x.data
    if kind == "lecun_tanh":
        y, t = _lecun(xd)
        return _unary(x, y, lambda g: (g * (LECUN_A * LECUN_B) * (1.0 - t * t),))
    if kind == "gelu":
        c = _std_normal_cdf(xd)
        return _unary(x, xd * c, lambda g: (g * (c + xd * _std_normal_pdf(xd)),))
    if kind == "sigmoid":
        y = special.expit(xd)
        return _unary(x, y, lambda g: (g * y * (1.0 - y),))
    if kind == "tanh":
        y = np.tanh(xd)
        return _unary(x, y, lambda g: (g * (1.0 - y * y),))
    if kind == "exp":
        y = np.exp(xd)
        return _unary(x, y, lambda g: (g * y,))
    if kind == "neg":
        return _unary(x, -xd, lambda g: (-g,))
    if kind == "sin":
        return _unary(x, np.sin(xd), lambda g: (g * np.cos(xd),))
    if kind == "cos":
        return _unary(x, np.cos(xd), lambda g: (-g * np.sin(xd),))
    if kind == "softplus":
        return _unary(x, np.logaddexp(0.0, xd).astype(xd.dtype), lambda g: (g * special.expit(xd),))
    if kind == "identity":
        return _unary(x, xd.copy(), lambda g: (g,))
    if kind == "square":
        return _unary(x, xd * xd, lambda g: (2.0 * g * xd,))
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def apply_activation(kind: str, x) -> Tensor:
    return activation(kind, x)


def lecun_tanh(x):
    return activation("lecun_tanh", x)


def gelu(x):
    return activation("gelu", x)


def sigmoid(x):
    return activation("sigmoid", x)


def tanh(x):
    return activation("tanh", x)


def exp(x):
    return activation("exp", x)


def sin(x):
    return activation("sin", x)


def cos(x):
    return activation("cos", x)


def softplus(x):
    return activation("softplus", x)


def square(x):
    return activation("square", x)


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    return _unary(x, np.asarray(x.data.sum(), x.dtype), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, max(x.size, 1)
    return _unary(x, np.asarray(x.data.mean(), x.dtype),
                  lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def mean_squared_error(pred, target) -> Tensor:
    """mean((pred - target)^2); ``target`` may be a plain array."""
    pred = as_tensor(pred)
    target = as_tensor(target, dtype=pred.dtype)
    _check_same(pred, target, "mean_squared_error")
    diff = pred.data - target.data
    n = max(diff.size, 1)
    val = np.asarray(np.mean(diff * diff), pred.dtype)

    def bwd(g):
        gd = (2.0 / n) * g * diff
        return gd, (-gd if target.requires_grad else None)

    return custom_op((pred, target), (val,), bwd)[0]


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _unary(x, x.data.reshape(shape), lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, cuts, axis=ax))

    return custom_op(ts, (np.concatenate([t.data for t in ts], axis=ax),), bwd)[0]


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    n = len(ts)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return custom_op(ts, (np.stack([t.data for t in ts], axis=axis),), bwd)[0]


def outer_concat(a, b) -> Tensor:
    """Rows ``concat(a[i], b[j])`` for every pair, ``i`` major: shape [Ra*Rb, p+q]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"outer_concat needs 2-D operands, got {a.shape} and {b.shape}")
    ra, p = a.shape
    rb, q = b.shape
    dtype = np.result_type(a.dtype, b.dtype)
    out = np.empty((ra, rb, p + q), dtype=dtype)
    out[:, :, :p] = a.data[:, None, :]
    out[:, :, p:] = b.data[None, :, :]

    def bwd(g):
        g3 = g.reshape(ra, rb, p + q)
        ga = g3[:, :, :p].sum(axis=1) if a.requires_grad else None
        gb = g3[:, :, p:].sum(axis=0) if b.requires_grad else None
        return ga, gb

    return custom_op((a, b), (out.reshape(ra * rb, p + q),), bwd)[0]


def mask_fill(x, mask: np.ndarray, value) -> Tensor:
    """Replace entries where ``mask`` is true by ``value``; no gradient flows there."""
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    keep = ~mask
    y = np.where(mask, np.asarray(value, x.dtype), x.data)
    return _unary(x, y, lambda g: (g * keep,))


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
