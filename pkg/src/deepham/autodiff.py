"""Define-by-run reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation as it executes.  :class:`Tensor` is a
lightweight reference to one recorded node; arithmetic on tensors records new
nodes on the same tape.  ``Tape.backward`` sweeps the tape once in reverse and
returns the gradient of a scalar with respect to every node.

The op set is closed: ``matmul``, ``add``, ``mul``, ``scale``, ``tanh``, ``sum``,
``dot``, ``concat``, ``slice``, ``transpose``, ``reshape`` and ``sym_apply``
(a fixed symmetric linear map along the last axis, used for Gram solves).
Broadcasting is limited to a 0-d operand combined with a tensor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class AutodiffError(ValueError):
    """Raised for shape mismatches and misuse of the tape."""


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    attrs: dict


def _as_data(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise AutodiffError("tensor data must be finite (NaN/Inf rejected)")
    return arr


class Tensor:
    """Reference to a node on a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def op(self) -> str:
        return self.tape.nodes[self.index].op

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, index={self.index})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape.record("add", [self, self._lift(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * self._lift(other)

    def __rsub__(self, other):
        return self._lift(other) + (-1.0) * self

    def __neg__(self):
        return self.tape.record("scale", [self], factor=-1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return self.tape.record("scale", [self], factor=float(other))
        return self.tape.record("mul", [self, self._lift(other)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return self.tape.record("scale", [self], factor=1.0 / float(other))
        raise AutodiffError("division is only supported by a python scalar")

    def __matmul__(self, other):
        return self.tape.record("matmul", [self, self._lift(other)])

    def __rmatmul__(self, other):
        return self.tape.record("matmul", [self._lift(other), self])

    def __getitem__(self, key):
        return self.tape.record("slice", [self], key=key)

    @property
    def T(self):
        return self.tape.record("transpose", [self])

    def sum(self):
        return self.tape.record("sum", [self])

    def tanh(self):
        return self.tape.record("tanh", [self])

    def dot(self, other):
        return self.tape.record("dot", [self, self._lift(other)])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.record("reshape", [self], shape=tuple(shape))


def _is_scalar(arr: np.ndarray) -> bool:
    return arr.ndim == 0


def _forward(op: str, vals: Sequence[np.ndarray], attrs: dict) -> np.ndarray:
    if op == "add" or op == "mul":
        a, b = vals
        if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
            raise AutodiffError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
        return a + b if op == "add" else a * b
    if op == "scale":
        return vals[0] * attrs["factor"]
    if op == "matmul":
        a, b = vals
        if a.ndim not in (1, 2) or b.ndim not in (1, 2) or (a.ndim == 1 and b.ndim == 1):
            raise AutodiffError(f"matmul: unsupported ranks {a.shape} @ {b.shape} (use dot for vectors)")
        if a.shape[-1] != b.shape[0]:
            raise AutodiffError(f"matmul: shapes {a.shape} and {b.shape} do not align")
        return a @ b
    if op == "tanh":
        return np.tanh(vals[0])
    if op == "sum":
        return np.asarray(vals[0].sum())
    if op == "dot":
        a, b = vals
        if a.ndim != 1 or a.shape != b.shape:
            raise AutodiffError(f"dot: needs equal-length vectors, got {a.shape} and {b.shape}")
        return np.asarray(a @ b)
    if op == "concat":
        axis = attrs["axis"]
        try:
            return np.concatenate(vals, axis=axis)
        except ValueError as exc:
            raise AutodiffError(f"concat: {[v.shape for v in vals]} along axis {axis}: {exc}") from None
    if op == "slice":
        try:
            return np.array(vals[0][attrs["key"]], dtype=np.float64)
        except IndexError as exc:
            raise AutodiffError(f"slice: {exc}") from None
    if op == "transpose":
        if vals[0].ndim != 2:
            raise AutodiffError(f"transpose: needs a matrix, got shape {vals[0].shape}")
        return np.ascontiguousarray(vals[0].T)
    if op == "reshape":
        try:
            return vals[0].reshape(attrs["shape"])
        except ValueError as exc:
            raise AutodiffError(f"reshape: {exc}") from None
    if op == "sym_apply":
        out = np.asarray(attrs["fn"](vals[0]), dtype=np.float64)
        if out.shape != vals[0].shape:
            raise AutodiffError(f"sym_apply: map changed shape {vals[0].shape} -> {out.shape}")
        return out
    raise AutodiffError(f"unknown op {op!r}")


def _reduce_to(grad: np.ndarray, target: np.ndarray) -> np.ndarray:
    if _is_scalar(target) and not _is_scalar(grad):
        return np.asarray(grad.sum())
    return grad


def _vjp(node: _Node, parents: Sequence[np.ndarray], g: np.ndarray) -> list[np.ndarray]:
    op = node.op
    if op == "add":
        return [_reduce_to(g, parents[0]), _reduce_to(g, parents[1])]
    if op == "mul":
        a, b = parents
        return [_reduce_to(g * b, a), _reduce_to(g * a, b)]
    if op == "scale":
        return [g * node.attrs["factor"]]
    if op == "matmul":
        a, b = parents
        if a.ndim == 2 and b.ndim == 2:
            return [g @ b.T, a.T @ g]
        if a.ndim == 1:
            return [b @ g, np.outer(a, g)]
        return [np.outer(g, b), a.T @ g]
    if op == "tanh":
        y = node.value
        return [g * (1.0 - y * y)]
    if op == "sum":
        return [np.full(parents[0].shape, float(g))]
    if op == "dot":
        a, b = parents
        return [g * b, g * a]
    if op == "concat":
        axis = node.attrs["axis"]
        cuts = np.cumsum([p.shape[axis] for p in parents])[:-1]
        return list(np.split(g, cuts, axis=axis))
    if op == "slice":
        out = np.zeros(parents[0].shape)
        out[node.attrs["key"]] = g
        return [out]
    if op == "transpose":
        return [g.T]
    if op == "reshape":
        return [g.reshape(parents[0].shape)]
    if op == "sym_apply":
        return [np.asarray(node.attrs["fn"](g), dtype=np.float64)]
    raise AutodiffError(f"no gradient rule for {op!r}")


class Gradients:
    """Gradient map returned by :meth:`Tape.backward`, indexed by :class:`Tensor`."""

    def __init__(self, tape: "Tape", grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if not isinstance(t, Tensor) or t.tape is not self._tape:
            raise AutodiffError("tensor is not on the tape these gradients came from")
        g = self._grads[t.index] if t.index < len(self._grads) else None
        return np.zeros(t.shape) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return isinstance(t, Tensor) and t.tape is self._tape and t.index < len(self._grads)


class Tape:
    """Append-only record of operations; rebuilt for every forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.cache: dict = {}

    def __len__(self):
        return len(self.nodes)

    def __bool__(self):
        return True

    def _append(self, op, parents, value, attrs) -> Tensor:
        self.nodes.append(_Node(op, tuple(parents), value, attrs))
        return Tensor(self, len(self.nodes) - 1)

    def tensor(self, data) -> Tensor:
        """Differentiable leaf holding a copy of ``data``."""
        return self._append("leaf", (), _as_data(data), {})

    def constant(self, data) -> Tensor:
        """Leaf used for fixed data; gradients are still reported for it."""
        return self._append("const", (), _as_data(data), {})

    def record(self, op: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
        for t in inputs:
            if not isinstance(t, Tensor) or t.tape is not self:
                raise AutodiffError(f"{op}: every input must be a Tensor on this tape")
        vals = [self.nodes[t.index].value for t in inputs]
        value = _forward(op, vals, attrs)
        return self._append(op, [t.index for t in inputs], value, attrs)

    def concat(self, tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
        return self.record("concat", list(tensors), axis=axis)

    def sym_apply(self, x: Tensor, fn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
        """Apply a fixed *symmetric* linear map; its adjoint is the map itself."""
        return self.record("sym_apply", [x], fn=fn)

    def backward(self, loss: Tensor) -> Gradients:
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise AutodiffError("backward: loss is not on this tape")
        if loss.value.size != 1:
            raise AutodiffError(f"backward: loss must be scalar, got shape {loss.shape}")
        n = loss.index + 1
        grads: list = [None] * n
        grads[loss.index] = np.ones(loss.shape)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or not node.parents:
                continue
            parent_vals = [self.nodes[j].value for j in node.parents]
            for j, gp in zip(node.parents, _vjp(node, parent_vals, g)):
                grads[j] = gp if grads[j] is None else grads[j] + gp
        return Gradients(self, grads)

    def gradient_wrt_input(self, scalar: Tensor, x: Tensor) -> np.ndarray:
        """Gradient of ``scalar`` with respect to an input tensor, shaped like the input."""
        if not isinstance(x, Tensor) or x.tape is not self:
            raise AutodiffError("gradient_wrt_input: input is not on this tape")
        if x.index > scalar.index:
            raise AutodiffError("gradient_wrt_input: input was recorded after the scalar")
        return self.backward(scalar)[x]
