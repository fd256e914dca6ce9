"""Tape-based reverse-mode differentiation over dense 2-D arrays.

Every value on a tape is a 2-D ``float64`` array. Operations are evaluated
eagerly when recorded; ``Tape.backward`` then walks the records in reverse
and accumulates adjoints into every node that requires a gradient.

Only what the models and the attack need is supported. Sparse matrices may
appear as constant left operands of :meth:`Tape.spmm`, whose backward only
produces the gradient of the dense right operand.

Example
-------
>>> tape = Tape()
>>> x = tape.leaf(np.ones((2, 3)))
>>> loss = tape.sum(x * x)
>>> tape.backward(loss)
>>> x.grad
array([[2., 2., 2.],
       [2., 2., 2.]])
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["Node", "Tape", "ShapeError"]


class ShapeError(ValueError):
    """Raised when operands of a recorded operation have incompatible shapes."""


class Node:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index", "value", "requires_grad", "grad", "kind")

    def __init__(self, tape, index, value, requires_grad, kind):
        self.tape = tape
        self.index = index
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self.kind = kind

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.kind}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return self.tape.scale(self, float(other))
        return self.tape.mul(other, self)

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    @property
    def T(self):
        return self.tape.transpose(self)


def _as_2d(value, dtype):
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"tape values must be 2-D, got shape {arr.shape}")
    return arr


class Tape:
    """Records operations in evaluation order and differentiates them in reverse."""

    def __init__(self, dtype=np.float64):
        self.dtype = dtype
        self.nodes: list[Node] = []
        self._records: list[tuple[Node, tuple, object]] = []
        self._backward_done = False

    # ------------------------------------------------------------------ nodes
    def leaf(self, value, requires_grad=True) -> Node:
        node = Node(self, len(self.nodes), _as_2d(value, self.dtype), requires_grad, "leaf")
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        return self.leaf(value, requires_grad=False)

    def _wrap(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        return self.const(x)

    def _record(self, kind, value, inputs, vjp) -> Node:
        requires = any(i.requires_grad for i in inputs)
        node = Node(self, len(self.nodes), value, requires, kind)
        self.nodes.append(node)
        if requires:
            self._records.append((node, inputs, vjp))
        return node

    # --------------------------------------------------------------- backward
    def backward(self, loss: Node) -> None:
        """Populate ``.grad`` of every node that requires a gradient.

        ``loss`` must be a 1x1 node. Calling ``backward`` twice without
        :meth:`zero_grad` raises ``RuntimeError``.
        """
        if loss.tape is not self:
            raise ValueError("loss node belongs to a different tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        if self._backward_done:
            raise RuntimeError("backward already ran on this tape; call zero_grad() first")
        self._backward_done = True
        if not loss.requires_grad:
            return
        loss.grad = np.ones((1, 1), dtype=self.dtype)
        for out, inputs, vjp in reversed(self._records):
            if out.grad is None:
                continue
            needs = tuple(i.requires_grad for i in inputs)
            grads = vjp(out.grad, needs)
            for inp, need, g in zip(inputs, needs, grads):
                if not need or g is None:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(g, dtype=self.dtype, copy=True)
                else:
                    inp.grad += g

    def zero_grad(self) -> None:
        for node in self.nodes:
            node.grad = None
        self._backward_done = False

    # ------------------------------------------------------------ linear ops
    def matmul(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul {a.shape} @ {b.shape}")
        av, bv = a.value, b.value

        def vjp(g, needs):
            return (g @ bv.T if needs[0] else None,
                    av.T @ g if needs[1] else None)

        return self._record("matmul", av @ bv, (a, b), vjp)

    def spmm(self, matrix, b) -> Node:
        """Constant (sparse or dense) matrix times a node."""
        b = self._wrap(b)
        if matrix.shape[1] != b.shape[0]:
            raise ShapeError(f"spmm {matrix.shape} @ {b.shape}")
        out = matrix @ b.value
        out = np.asarray(out.toarray() if sp.issparse(out) else out, dtype=self.dtype)

        def vjp(g, needs):
            return (np.asarray(matrix.T @ g),)

        return self._record("spmm", out, (b,), vjp)

    def transpose(self, a) -> Node:
        a = self._wrap(a)

        def vjp(g, needs):
            return (g.T,)

        return self._record("transpose", np.ascontiguousarray(a.value.T), (a,), vjp)

    def add(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape != b.shape:
            raise ShapeError(f"add {a.shape} + {b.shape}")

        def vjp(g, needs):
            return g, g

        return self._record("add", a.value + b.value, (a, b), vjp)

    def sub(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape != b.shape:
            raise ShapeError(f"sub {a.shape} - {b.shape}")

        def vjp(g, needs):
            return g, (-g if needs[1] else None)

        return self._record("sub", a.value - b.value, (a, b), vjp)

    def mul(self, a, b) -> Node:
        a, b = self._wrap(a), self._wrap(b)
        if a.shape != b.shape:
            raise ShapeError(f"mul {a.shape} * {b.shape}")
        av, bv = a.value, b.value

        def vjp(g, needs):
            return (g * bv if needs[0] else None,
                    g * av if needs[1] else None)

        return self._record("mul", av * bv, (a, b), vjp)

    def scale(self, a, s: float) -> Node:
        a = self._wrap(a)

        def vjp(g, needs):
            return (g * s,)

        return self._record("scale", a.value * s, (a,), vjp)

    def add_row(self, a, row) -> Node:
        """``a + row`` with a 1 x c row broadcast over every row of ``a``."""
        a, row = self._wrap(a), self._wrap(row)
        if row.shape != (1, a.shape[1]):
            raise ShapeError(f"add_row {a.shape} + {row.shape}")

        def vjp(g, needs):
            return g, (g.sum(axis=0, keepdims=True) if needs[1] else None)

        return self._record("add_row", a.value + row.value, (a, row), vjp)

    def mul_col(self, a, col) -> Node:
        """``a * col`` with an r x 1 column broadcast over every column of ``a``."""
        a, col = self._wrap(a), self._wrap(col)
        if col.shape != (a.shape[0], 1):
            raise ShapeError(f"mul_col {a.shape} * {col.shape}")
        av, cv = a.value, col.value

        def vjp(g, needs):
            return (g * cv if needs[0] else None,
                    (g * av).sum(axis=1, keepdims=True) if needs[1] else None)

        return self._record("mul_col", av * cv, (a, col), vjp)

    def rowsum(self, a) -> Node:
        a = self._wrap(a)
        ncols = a.shape[1]

        def vjp(g, needs):
            return (np.repeat(g, ncols, axis=1),)

        return self._record("rowsum", a.value.sum(axis=1, keepdims=True), (a,), vjp)

    def sum(self, a) -> Node:
        a = self._wrap(a)
        shape = a.shape

        def vjp(g, needs):
            return (np.full(shape, g[0, 0]),)

        return self._record("sum", np.array([[a.value.sum()]]), (a,), vjp)

    def row_normalize(self, a) -> Node:
        """``y_i = x_i / sum_j x_ij``; every row sum must be strictly positive."""
        a = self._wrap(a)
        s = a.value.sum(axis=1, keepdims=True)
        bad = np.flatnonzero(~(s[:, 0] > 0))
        if bad.size:
            raise ValueError(f"row_normalize: nonpositive row sum at row {int(bad[0])}")
        y = a.value / s

        def vjp(g, needs):
            return ((g - (g * y).sum(axis=1, keepdims=True)) / s,)

        return self._record("row_normalize", y, (a,), vjp)

    def power(self, a, p: float) -> Node:
        a = self._wrap(a)
        av = a.value
        y = av ** p

        def vjp(g, needs):
            return (g * p * av ** (p - 1),)

        return self._record("power", y, (a,), vjp)

    # ------------------------------------------------------------ structure
    def slice(self, a, rows=slice(None), cols=slice(None)) -> Node:
        """Basic (contiguous) slicing ``a[rows, cols]``."""
        a = self._wrap(a)
        if not isinstance(rows, slice) or not isinstance(cols, slice):
            raise TypeError("slice takes python slices; use take() for index arrays")
        shape = a.shape

        def vjp(g, needs):
            out = np.zeros(shape)
            out[rows, cols] = g
            return (out,)

        return self._record("slice", a.value[rows, cols], (a,), vjp)

    def take(self, a, rows=None, cols=None) -> Node:
        """Gather rows and/or columns by integer index arrays."""
        a = self._wrap(a)
        val = a.value
        ri = None if rows is None else np.asarray(rows, dtype=np.intp)
        ci = None if cols is None else np.asarray(cols, dtype=np.intp)
        if ri is not None:
            val = val[ri]
        if ci is not None:
            val = val[:, ci]
        shape = a.shape

        def vjp(g, needs):
            out = np.zeros(shape)
            r = np.arange(shape[0]) if ri is None else ri
            c = np.arange(shape[1]) if ci is None else ci
            np.add.at(out, (r[:, None], c[None, :]), g)
            return (out,)

        return self._record("take", np.ascontiguousarray(val), (a,), vjp)

    def vstack(self, parts) -> Node:
        parts = tuple(self._wrap(p) for p in parts)
        widths = {p.shape[1] for p in parts}
        if len(widths) != 1:
            raise ShapeError(f"vstack column mismatch {[p.shape for p in parts]}")
        bounds = np.cumsum([0] + [p.shape[0] for p in parts])

        def vjp(g, needs):
            return tuple(g[bounds[i]:bounds[i + 1]] if needs[i] else None
                         for i in range(len(parts)))

        return self._record("vstack", np.vstack([p.value for p in parts]), parts, vjp)

    def hstack(self, parts) -> Node:
        parts = tuple(self._wrap(p) for p in parts)
        heights = {p.shape[0] for p in parts}
        if len(heights) != 1:
            raise ShapeError(f"hstack row mismatch {[p.shape for p in parts]}")
        bounds = np.cumsum([0] + [p.shape[1] for p in parts])

        def vjp(g, needs):
            return tuple(g[:, bounds[i]:bounds[i + 1]] if needs[i] else None
                         for i in range(len(parts)))

        return self._record("hstack", np.hstack([p.value for p in parts]), parts, vjp)

    # ------------------------------------------------------------ nonlinear
    def relu(self, a) -> Node:
        # subgradient at exactly 0 is 0
        a = self._wrap(a)
        pos = a.value > 0

        def vjp(g, needs):
            return (g * pos,)

        return self._record("relu", np.where(pos, a.value, 0.0), (a,), vjp)

    def dropout(self, a, mask) -> Node:
        """Multiply by a pre-sampled (already rescaled) mask."""
        a = self._wrap(a)
        mask = np.asarray(mask, dtype=self.dtype)
        if mask.shape != a.shape:
            raise ShapeError(f"dropout mask {mask.shape} vs {a.shape}")

        def vjp(g, needs):
            return (g * mask,)

        return self._record("dropout", a.value * mask, (a,), vjp)

    def log_softmax(self, a) -> Node:
        a = self._wrap(a)
        z = a.value - a.value.max(axis=1, keepdims=True)
        y = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(y)

        def vjp(g, needs):
            return (g - p * g.sum(axis=1, keepdims=True),)

        return self._record("log_softmax", y, (a,), vjp)

    def cross_entropy(self, logits, rows, labels) -> Node:
        """Mean negative log-likelihood of ``labels`` at ``rows`` of ``logits``."""
        logits = self._wrap(logits)
        rows = np.asarray(rows, dtype=np.intp)
        labels = np.asarray(labels, dtype=np.intp)
        if rows.shape != labels.shape or rows.ndim != 1 or rows.size == 0:
            raise ShapeError("cross_entropy needs equal-length, non-empty rows and labels")
        if labels.max() >= logits.shape[1] or labels.min() < 0:
            raise ShapeError("cross_entropy label out of range")
        z = logits.value[rows]
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -logp[np.arange(rows.size), labels].mean()
        shape = logits.shape

        def vjp(g, needs):
            sub = np.exp(logp)
            sub[np.arange(rows.size), labels] -= 1.0
            out = np.zeros(shape)
            np.add.at(out, rows, sub * (g[0, 0] / rows.size))
            return (out,)

        return self._record("cross_entropy", np.array([[loss]]), (logits,), vjp)

    def margin_loss(self, logits, row: int, label: int) -> Node:
        """``z[row, label] - max_{c != label} z[row, c]`` (ties: lowest index)."""
        logits = self._wrap(logits)
        if logits.shape[1] < 2:
            raise ShapeError("margin_loss needs at least two classes")
        z = logits.value[row]
        others = z.copy()
        others[label] = -np.inf
        runner_up = int(np.argmax(others))
        shape = logits.shape

        def vjp(g, needs):
            out = np.zeros(shape)
            out[row, label] += g[0, 0]
            out[row, runner_up] -= g[0, 0]
            return (out,)

        return self._record("margin_loss", np.array([[z[label] - z[runner_up]]]), (logits,), vjp)
