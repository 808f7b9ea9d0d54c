"""Dense float64 tensors with tape-based reverse-mode differentiation.

Small enough to audit, big enough for GRUs, 1-D convolutions over token
sequences, softmax/cross-entropy and the loss algebra built on top. All
math is float64; gradient checking relies on that precision. Tensors are
treated as immutable while recorded on a tape; parameter updates happen
between tapes.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Input values lie outside the mathematical domain of the operation."""


class SequenceTooShortError(ShapeError):
    """Sequence shorter than the convolution filter width."""


class NonDeterministicError(RuntimeError):
    """Two forward passes of a supposedly deterministic function disagreed."""


class Tensor:
    """n-d float64 value, optionally carrying an accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; all dispatch to the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


TensorLike = Union[Tensor, float, int, Array]

# A recorded primitive: output, inputs, and a closure mapping the output
# gradient to per-input gradients (None for inputs that need none).
@dataclass
class TapeOp:
    out: Tensor
    inputs: tuple
    backward: Callable[[Array], Sequence[Optional[Array]]]


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Ops are appended in execution order, so a single reverse sweep visits
    each exactly once and respects data dependencies.
    """

    def __init__(self):
        self.ops: list[TapeOp] = []

    def __len__(self) -> int:
        return len(self.ops)

    def clear(self) -> None:
        """Drop all recorded ops, releasing the intermediates they hold."""
        self.ops.clear()

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


_tape_stack: list[Optional[Tape]] = []


@contextmanager
def recording(tape: Tape):
    """Route primitive recording onto `tape` for the duration of the block."""
    _tape_stack.append(tape)
    try:
        yield tape
    finally:
        _tape_stack.pop()


@contextmanager
def no_grad():
    """Disable recording; outputs created inside are detached."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


def _active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: Array, inputs: tuple, backward_fn) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.ops.append(TapeOp(out, inputs, backward_fn))
    return out


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Populate .grad for every requires_grad leaf on the tape.

    Repeated calls accumulate. Leaves the loss does not reach receive
    exactly-zero gradients. Intermediate gradients live only inside the
    sweep and are freed as soon as their producer is visited.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if tape is None:
        tape = _active_tape()
    if tape is None:
        raise RuntimeError("backward needs a tape (none active, none given)")

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    produced = {id(op.out) for op in tape.ops}
    for op in reversed(tape.ops):
        g_out = grads.pop(id(op.out), None)
        if g_out is None:
            continue
        for inp, g_in in zip(op.inputs, op.backward(g_out)):
            if g_in is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in

    seen: set[int] = set()
    for op in tape.ops:
        for t in op.inputs:
            key = id(t)
            if key in seen or key in produced or not t.requires_grad:
                continue
            seen.add(key)
            contrib = grads.get(key)
            if contrib is None:
                contrib = np.zeros_like(t.data)
            t.grad = contrib if t.grad is None else t.grad + contrib


# ---------------------------------------------------------------------------
# primitives


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def sigmoid(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    # exp may overflow to inf for very negative inputs; 1/(1+inf) is the
    # correct 0.0, so silence the warning rather than branch
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _record(out, (x,), bwd)


def tanh(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _record(out, (x,), bwd)


def relu(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        return (g * (x.data > 0),)

    return _record(out, (x,), bwd)


def exp(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return _record(out, (x,), bwd)


def log(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive input")
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return _record(out, (x,), bwd)


def softmax(x: TensorLike, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Temperature softmax along `axis`, stabilised by max subtraction."""
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    x = as_tensor(x)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner) / temperature,)

    return _record(out, (x,), bwd)


def sum_(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape),)

    return _record(out, (x,), bwd)


def mean_(x: TensorLike, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum_(x, axis=axis), 1.0 / n)


def reshape(x: TensorLike, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), bwd)


def broadcast_to(x: TensorLike, shape) -> Tensor:
    x = as_tensor(x)
    out = np.broadcast_to(x.data, shape).copy()

    def bwd(g):
        return (_unbroadcast(g, x.data.shape),)

    return _record(out, (x,), bwd)


def concat(parts: Sequence[TensorLike], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, parts, bwd)


def take_rows(table: TensorLike, ids: Array) -> Tensor:
    """Row lookup table[ids]; the embedding-table primitive.

    `ids` is a plain integer array (not differentiable); gradients
    scatter-add back into the table rows.
    """
    table = as_tensor(table)
    ids = np.asarray(ids)
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _record(out, (table,), bwd)


def take_along_last(x: TensorLike, idx: Array) -> Tensor:
    """Gather x[..., idx] along the last axis; idx shaped like x minus that axis."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        gx = np.zeros_like(x.data)
        grid = np.indices(idx.shape, sparse=True)
        np.add.at(gx, (*grid, idx), g)
        return (gx,)

    return _record(out, (x,), bwd)


def max_along(x: TensorLike, axis: int) -> Tensor:
    """Max over one axis; gradient routes to the first argmax position."""
    x = as_tensor(x)
    out = x.data.max(axis=axis)
    idx = x.data.argmax(axis=axis)

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return _record(out, (x,), bwd)


def unfold_windows(x: TensorLike, width: int) -> Tensor:
    """All length-`width` windows over the second-to-last axis.

    [..., L, D] -> [..., L-width+1, width*D]; the flattened-window layout
    convolution wants before a matmul against flattened filters.
    """
    x = as_tensor(x)
    length = x.data.shape[-2]
    if length < width:
        raise SequenceTooShortError(f"sequence length {length} shorter than filter width {width}")
    view = np.lib.stride_tricks.sliding_window_view(x.data, width, axis=-2)
    # view: [..., L-w+1, D, w] -> [..., L-w+1, w, D] flattened
    win = np.ascontiguousarray(np.swapaxes(view, -1, -2))
    n_win = length - width + 1
    out = win.reshape(*x.data.shape[:-2], n_win, width * x.data.shape[-1])

    def bwd(g):
        d = x.data.shape[-1]
        gw = g.reshape(*x.data.shape[:-2], n_win, width, d)
        gx = np.zeros_like(x.data)
        for j in range(width):
            gx[..., j:j + n_win, :] += gw[..., :, j, :]
        return (gx,)

    return _record(out, (x,), bwd)


def l2_norm(x: TensorLike) -> Tensor:
    """Euclidean norm of all entries; subgradient 0 at the origin."""
    x = as_tensor(x)
    n = float(np.sqrt((x.data * x.data).sum()))
    out = np.asarray(n)

    def bwd(g):
        if n == 0.0:
            return (np.zeros_like(x.data),)
        return (g * x.data / n,)

    return _record(out, (x,), bwd)


def clip(x: TensorLike, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is zero outside the open interval."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)

    def bwd(g):
        return (g * ((x.data > lo) & (x.data < hi)),)

    return _record(out, (x,), bwd)


def conv1d_maxpool(seq_emb: TensorLike, filters: TensorLike, bias: Optional[TensorLike] = None) -> Tensor:
    """Valid 1-d convolution over time followed by max-over-time pooling.

    seq_emb is [L, D] or [B, L, D]; filters is [width, D, C]. Returns one
    value per feature map: [C] or [B, C].
    """
    seq_emb = as_tensor(seq_emb)
    filters = as_tensor(filters)
    if filters.ndim != 3:
        raise ShapeError(f"filters must be [width, emb, maps], got {filters.shape}")
    width, d_emb, n_maps = filters.shape
    if seq_emb.shape[-1] != d_emb:
        raise ShapeError(f"embedding dims disagree: sequence {seq_emb.shape} vs filters {filters.shape}")
    squeeze = seq_emb.ndim == 2
    x = reshape(seq_emb, (1, *seq_emb.shape)) if squeeze else seq_emb
    batch, length = x.shape[0], x.shape[1]

    win = unfold_windows(x, width)                      # [B, P, w*D]
    flat = reshape(win, (batch * win.shape[1], width * d_emb))
    resp = matmul(flat, reshape(filters, (width * d_emb, n_maps)))
    resp = reshape(resp, (batch, length - width + 1, n_maps))
    if bias is not None:
        resp = add(resp, bias)
    pooled = max_along(resp, axis=1)                    # [B, C]
    return reshape(pooled, (n_maps,)) if squeeze else pooled


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-4,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar f against central differences.

    Relative error per entry is |a - n| / max(1, |a|, |n|). Raises
    NonDeterministicError if two forward passes of f disagree.
    """
    base = x.data.copy()

    def run() -> float:
        with no_grad():
            out = f(Tensor(base.copy()))
        if out.data.size != 1:
            raise ShapeError("grad_check expects a scalar-valued function")
        return float(out.data)

    if run() != run():
        raise NonDeterministicError("function is not deterministic across forward passes")

    probe = Tensor(base.copy(), requires_grad=True)
    tape = Tape()
    with recording(tape):
        loss = f(probe)
        backward(loss, tape)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        with no_grad():
            hi = float(f(Tensor(bumped.reshape(base.shape))).data)
        bumped[i] = flat[i] - step
        with no_grad():
            lo = float(f(Tensor(bumped.reshape(base.shape))).data)
        numeric[i] = (hi - lo) / (2.0 * step)
    numeric = numeric.reshape(base.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    max_rel = float((np.abs(analytic - numeric) / denom).max()) if base.size else 0.0
    return GradCheckReport(max_rel_err=max_rel, tol=tol, n_checked=base.size)
