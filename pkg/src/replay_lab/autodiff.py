"""Dense float64 tensors with a dynamic reverse-mode tape.

The graph is rebuilt on every forward pass: ops executed inside a
``with Tape() as tape:`` block append backward rules to the tape, and
``backward(loss, tape)`` replays them in reverse to fill the ``grad``
slot of every ``requires_grad`` tensor. Outside a tape block the same
ops are plain numpy computations.

Matrix products go through an einsum contraction instead of BLAS: the
result for a given row is then bit-identical regardless of batch size
or thread count, which the per-sample determinism guarantees rely on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_node_counter = itertools.count()
_tape_stack: list["Tape"] = []


class Tensor:
    """A dense float64 array with an optional gradient slot.

    Values are written once at creation; only the optimizer reassigns
    ``data`` (with a fresh array, never in place), so any reference taken
    from a forward pass stays valid.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A gradient-stopping view of the same values."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, what: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise DomainError(f"{what} contains non-finite values")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeEntry:
    name: str
    inputs: tuple[Tensor, ...]
    output_id: int
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """Ordered record of one forward pass.

    Entries are appended in execution order, so the list is already a
    topological order of the graph and the backward sweep visits each
    node exactly once.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._tracked: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack.pop()
        assert popped is self

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t.node_id in self._tracked


def _record(name: str, inputs: tuple[Tensor, ...], out: Tensor, backward) -> None:
    if not _tape_stack:
        return
    tape = _tape_stack[-1]
    if not any(tape._tracks(t) for t in inputs):
        return
    tape.entries.append(TapeEntry(name, inputs, out.node_id, backward))
    tape._tracked.add(out.node_id)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Repeated calls without ``zero_grad`` accumulate into existing grads.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output_id, None)
        if g is None:
            continue
        in_grads = entry.backward(g)
        for t, ig in zip(entry.inputs, in_grads):
            if ig is None or not tape._tracks(t):
                continue
            if t.requires_grad:
                t.grad = ig.copy() if t.grad is None else t.grad + ig
            if t.node_id in grads:
                grads[t.node_id] = grads[t.node_id] + ig
            else:
                grads[t.node_id] = ig


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(np.einsum("ik,kj->ij", a.data, b.data))

    def bwd(g):
        return (np.einsum("ij,kj->ik", g, b.data),   # g @ b.T
                np.einsum("ki,kj->ij", a.data, g))   # a.T @ g

    _record("matmul", (a, b), out, bwd)
    return out


def _binary(name: str, a, b, fwd, bwd_a, bwd_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from e
    out = Tensor(data)

    def bwd(g):
        return (_unbroadcast(bwd_a(g, a.data, b.data), a.shape),
                _unbroadcast(bwd_b(g, a.data, b.data), b.shape))

    _record(name, (a, b), out, bwd)
    return out


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0
    _record("relu", (a,), out, lambda g: (g * mask,))
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)
    _record("sigmoid", (a,), out, lambda g: (g * y * (1.0 - y),))
    return out


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    _record("exp", (a,), out, lambda g: (g * out.data,))
    return out


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    out = Tensor(np.log(a.data))
    _record("log", (a,), out, lambda g: (g / a.data,))
    return out


ELEMENTWISE_UNARY = {"relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log}
ELEMENTWISE_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise op by name (handy for parametrized checks)."""
    if op in ELEMENTWISE_UNARY:
        (a,) = args
        return ELEMENTWISE_UNARY[op](a)
    if op in ELEMENTWISE_BINARY:
        a, b = args
        return ELEMENTWISE_BINARY[op](a, b)
    raise ContractError(f"unknown elementwise op {op!r}")


def softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Row softmax of ``logits / temperature`` with a row-max overflow guard."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax expects batch x classes, got {logits.shape}")
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    x = logits.data / temperature
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((y * (g - dot)) / temperature,)

    _record("softmax", (logits,), out, bwd)
    return out


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    _record("sum", (a,), out, bwd)
    return out


def mean_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return mul(reduce_sum(a), 1.0 / a.size)


def col_select(a: Tensor, cols) -> Tensor:
    """Select columns by index; gradients scatter back to the source columns."""
    a = as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    if len(np.unique(cols)) != len(cols):
        raise ContractError("col_select indices must be unique")
    out = Tensor(a.data[:, cols])

    def bwd(g):
        z = np.zeros_like(a.data)
        z[:, cols] = g
        return (z,)

    _record("col_select", (a,), out, bwd)
    return out


def row_select(a: Tensor, rows) -> Tensor:
    """Select rows by index (repeats allowed; gradients scatter-add)."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    out = Tensor(a.data[rows])

    def bwd(g):
        z = np.zeros_like(a.data)
        np.add.at(z, rows, g)
        return (z,)

    _record("row_select", (a,), out, bwd)
    return out


def take_per_row(a: Tensor, col_index) -> Tensor:
    """out[i, 0] = a[i, col_index[i]]."""
    a = as_tensor(a)
    idx = np.asarray(col_index, dtype=np.intp)
    if idx.shape != (a.shape[0],):
        raise ShapeError(f"need one column index per row, got {idx.shape} for {a.shape}")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx][:, None])

    def bwd(g):
        z = np.zeros_like(a.data)
        z[rows, idx] = g[:, 0]
        return (z,)

    _record("take_per_row", (a,), out, bwd)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat_cols needs at least one tensor")
    rows = parts[0].shape[0]
    if any(p.data.ndim != 2 or p.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols needs 2-D tensors with equal row counts")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]

    def bwd(g):
        grads, at = [], 0
        for w in widths:
            grads.append(g[:, at:at + w])
            at += w
        return tuple(grads)

    _record("concat_cols", tuple(parts), out, bwd)
    return out


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp, keepdims, with the usual max shift."""
    a = as_tensor(a)
    m = a.data.max(axis=1, keepdims=True)  # constant shift; gradient is exact
    shifted = sub(a, Tensor(m))
    return add(log(reduce_sum(exp(shifted), axis=1, keepdims=True)), Tensor(m))
