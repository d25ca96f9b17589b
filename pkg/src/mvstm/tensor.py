"""Dense tensors with taped reverse-mode differentiation.

Values are numpy float64 arrays (vectors, matrices, or scalars). A Tape
records every primitive applied to tensors that belong to it; because an
operand always exists before its result, the tape's creation order is a
valid topological order, and ``backward`` replays it once in reverse.

Tensors without a tape are constants: operations on them compute forward
values but record nothing. Mixing tensors from two different tapes is a
contract error.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, NumericError, ShapeError


class Tape:
    """Ordered record of one forward computation."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, values) -> "Tensor":
        """Register an input (parameter) tensor whose gradient is wanted."""
        t = Tensor(values, tape=self)
        return t

    def _register(self, t: "Tensor"):
        t.node_id = len(self._nodes)
        self._nodes.append(t)


class Tensor:
    """A dense float64 array, optionally recorded on a tape.

    ``_vjp`` maps the output gradient to ``(parent, contribution)`` pairs;
    it closes over whatever forward activations the backward rule needs.
    """

    __slots__ = ("data", "tape", "node_id", "_parents", "_vjp")

    def __init__(self, values, tape: Tape | None = None, parents=(), vjp=None):
        self.data = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.node_id = None
        self._parents = parents
        self._vjp = vjp
        if tape is not None:
            tape._register(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def is_leaf(self) -> bool:
        return self.tape is not None and not self._parents

    def __repr__(self):
        return f"Tensor(shape={self.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        return multiply(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(values) -> Tensor:
    """Tensor that participates in computation but receives no gradient."""
    return Tensor(values)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _common_tape(*tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands belong to different tapes")
    return tape


def _checked(values, op: str) -> np.ndarray:
    out = np.asarray(values, dtype=np.float64)
    # cheap screen: a finite array has a finite sum unless magnitudes are
    # astronomical, in which case the full scan below settles it
    if out.size and not math.isfinite(float(out.sum())):
        if not np.isfinite(out).all():
            raise NumericError(f"{op} produced non-finite values")
    return out


def _make(values, op: str, parents, vjp) -> Tensor:
    data = _checked(values, op)
    tape = _common_tape(*parents)
    if tape is None:
        return Tensor(data)
    return Tensor(data, tape=tape, parents=tuple(parents), vjp=vjp)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    """Elementwise sum; one operand may be a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        ga = g.sum() if a.shape == () and g.shape != () else g
        gb = g.sum() if b.shape == () and g.shape != () else g
        return [(a, ga), (b, gb)]

    return _make(a.data + b.data, "add", (a, b), vjp)


def multiply(a, b) -> Tensor:
    """Elementwise product; one operand may be a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"multiply: incompatible shapes {a.shape} and {b.shape}")
    adata, bdata = a.data, b.data

    def vjp(g):
        ga = g * bdata
        gb = g * adata
        if a.shape == () and ga.shape != ():
            ga = ga.sum()
        if b.shape == () and gb.shape != ():
            gb = gb.sum()
        return [(a, ga), (b, gb)]

    return _make(adata * bdata, "multiply", (a, b), vjp)


def scale(a, k: float) -> Tensor:
    """Multiply by a python float (not differentiated through k)."""
    a = _as_tensor(a)
    k = float(k)

    def vjp(g):
        return [(a, g * k)]

    return _make(a.data * k, "scale", (a,), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product for (m,n)@(n,p), (m,n)@(n,), and (n,)@(n,p)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.ndim + b.ndim < 3:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    adata, bdata = a.data, b.data

    def vjp(g):
        if a.ndim == 2 and b.ndim == 2:
            return [(a, g @ bdata.T), (b, adata.T @ g)]
        if a.ndim == 2 and b.ndim == 1:
            return [(a, np.outer(g, bdata)), (b, adata.T @ g)]
        # (n,) @ (n,p)
        return [(a, bdata @ g), (b, np.outer(adata, g))]

    return _make(adata @ bdata, "matmul", (a, b), vjp)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")

    def vjp(g):
        return [(a, g.T)]

    return _make(a.data.T, "transpose", (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}")
    old = a.shape

    def vjp(g):
        return [(a, g.reshape(old))]

    return _make(a.data.reshape(shape), "reshape", (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other dimensions must agree."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    ndim = ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch {ts[0].shape} and {t.shape}"
            )
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        out = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(lo, hi)
            out.append((t, g[tuple(idx)]))
        return out

    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from exc
    return _make(data, "concat", ts, vjp)


def slice_along(a, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice [start, stop) along ``axis``."""
    a = _as_tensor(a)
    if not (0 <= start <= stop <= a.shape[axis]):
        raise ShapeError(
            f"slice: [{start}, {stop}) out of bounds for shape {a.shape} axis {axis}"
        )
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    full_shape = a.shape

    def vjp(g):
        out = np.zeros(full_shape)
        out[idx] = g
        return [(a, out)]

    return _make(a.data[idx], "slice", (a,), vjp)


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return [(a, np.broadcast_to(g, shape).copy())]
        return [(a, np.broadcast_to(np.expand_dims(g, axis), shape).copy())]

    return _make(a.data.sum(axis=axis), "reduce_sum", (a,), vjp)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return [(a, g * out * (1.0 - out))]

    return _make(out, "sigmoid", (a,), vjp)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return [(a, g * (1.0 - out * out))]

    return _make(out, "tanh", (a,), vjp)


def relu(a) -> Tensor:
    """max(0, x); the gradient at exactly 0 is taken as 0."""
    a = _as_tensor(a)
    x = a.data
    mask = x > 0

    def vjp(g):
        return [(a, g * mask)]

    return _make(np.where(mask, x, 0.0), "relu", (a,), vjp)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably; strictly positive."""
    a = _as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return [(a, g * sig)]

    return _make(out, "softplus", (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction for stability."""
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return [(a, out * (g - dot))]

    return _make(out, "softmax", (a,), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar loss with respect to every tape node reached.

    Returns a map from node id to gradient array. Leaves that do not
    influence the loss get explicit zero gradients; intermediates that were
    never reached are omitted.
    """
    if loss.tape is not tape:
        raise ContractError("loss tensor does not belong to this tape")
    if loss.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones(())}
    for node in reversed(tape._nodes):
        g = grads.get(node.node_id)
        if g is None or node._vjp is None:
            continue
        for parent, contrib in node._vjp(g):
            if parent.tape is not tape:
                continue
            pid = parent.node_id
            if pid in grads:
                grads[pid] = grads[pid] + contrib
            else:
                grads[pid] = np.asarray(contrib, dtype=np.float64)

    for node in tape._nodes:
        if node.is_leaf() and node.node_id not in grads:
            grads[node.node_id] = np.zeros(node.shape)
    return grads


def check_gradient(build, point, h: float = 1e-5) -> float:
    """Compare taped gradients against central finite differences.

    ``build`` maps a tensor shaped like ``point`` to a scalar tensor. The
    analytic gradient comes from ``backward``; the numeric one perturbs each
    coordinate by ``±h`` and re-evaluates ``build`` on constants. Returns the
    worst relative error, with denominator max(1, |analytic|, |numeric|).
    """
    if h <= 0:
        raise ContractError("h must be positive")
    point = np.asarray(point, dtype=np.float64)

    tape = Tape()
    x = tape.leaf(point)
    loss = build(x)
    if loss.shape != ():
        raise ContractError("build must return a scalar tensor")
    analytic = backward(tape, loss).get(x.node_id, np.zeros(point.shape))

    worst = 0.0
    for idx in np.ndindex(point.shape if point.shape else (1,)):
        key = idx if point.shape else ()
        plus = point.copy()
        minus = point.copy()
        plus[key] += h
        minus[key] -= h
        f_plus = build(constant(plus)).item()
        f_minus = build(constant(minus)).item()
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = float(analytic[key]) if point.shape else float(analytic)
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
