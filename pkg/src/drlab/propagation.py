"""Propagation (aggregation) operators for message passing on directed graphs.

Four operators are supported:

``sym``
    GCN renormalisation ``D^-1/2 (sym(A) + I) D^-1/2``.
``rw_out``
    Random walk along out-links, ``row_normalize(A + I)``.
``rw_in``
    Random walk along in-links, ``row_normalize(A^T + I)``.
``bbrw``
    Biased bidirectional walk, ``row_normalize(beta A + (1 - beta) A^T + I)``.

:func:`build_operator` returns a fixed ``scipy.sparse`` matrix for training
and inference. :class:`PatchPlan` builds the same operator on a
:class:`~drlab.autodiff.Tape` as a function of a continuous edge-flip
perturbation, so attack losses can be differentiated with respect to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import Node, Tape
from .graph import DirectedGraph

__all__ = [
    "PropagationSpec",
    "FixedOperator",
    "PatchPlan",
    "PatchedOperator",
    "weight_matrix",
    "build_operator",
    "build_differentiable_operator",
]

KINDS = ("sym", "rw_out", "rw_in", "bbrw")


@dataclass(frozen=True)
class PropagationSpec:
    kind: str = "sym"
    beta: float = 0.5
    add_self_loops: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown propagation kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 <= float(self.beta) <= 1.0):
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")

    @property
    def walk_beta(self):
        """Weight on out-links for the random-walk kinds, ``None`` for ``sym``."""
        return {"rw_out": 1.0, "rw_in": 0.0, "bbrw": float(self.beta)}.get(self.kind)

    @property
    def label(self) -> str:
        if self.kind == "bbrw":
            return f"BBRW(beta={self.beta:g})"
        return {"sym": "SymNorm", "rw_out": "RWout", "rw_in": "RWin"}[self.kind]

    def to_dict(self):
        return {"kind": self.kind, "beta": float(self.beta), "add_self_loops": self.add_self_loops}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d.get("beta", 0.5)), bool(d.get("add_self_loops", True)))


def _combine(a, at, spec):
    if spec.kind == "sym":
        return a.maximum(at)
    b = spec.walk_beta
    if b == 1.0:
        return a.copy()
    if b == 0.0:
        return at.copy()
    return b * a + (1.0 - b) * at


def weight_matrix(g: DirectedGraph, spec: PropagationSpec) -> sp.csr_matrix:
    """Unnormalised aggregation weights (self-loops included when enabled)."""
    w = _combine(g.out_adj, g.in_adj, spec)
    if spec.add_self_loops:
        w = w + sp.identity(g.n, format="csr")
    w = sp.csr_matrix(w)
    w.sort_indices()
    return w


def _safe_pow(d, p):
    out = np.zeros_like(d)
    pos = d > 0
    out[pos] = d[pos] ** p
    return out


def build_operator(g: DirectedGraph, spec: PropagationSpec) -> sp.csr_matrix:
    w = weight_matrix(g, spec)
    d = np.asarray(w.sum(axis=1)).ravel()
    if spec.kind == "sym":
        s = sp.diags(_safe_pow(d, -0.5))
        out = s @ w @ s
    else:
        out = sp.diags(_safe_pow(d, -1.0)) @ w
    out = sp.csr_matrix(out)
    out.sort_indices()
    return out


class FixedOperator:
    """A constant sparse propagation matrix usable in model forward passes."""

    def __init__(self, matrix):
        self.matrix = sp.csr_matrix(matrix)
        self.n = self.matrix.shape[0]

    @classmethod
    def from_graph(cls, g, spec):
        return cls(build_operator(g, spec))

    def apply(self, y: Node, rows=None) -> Node:
        m = self.matrix if rows is None else self.matrix[np.asarray(rows)]
        return y.tape.spmm(m, y)


class PatchPlan:
    """Constants for the perturbed operator of one graph / spec / candidate layout.

    Nodes are relabelled so that the ``k`` patched nodes ``U`` (every node with
    a candidate row or column) come first. Flip values live in two dense
    blocks: ``top`` (k x n, rows ``U``) and ``left`` ((n-k) x k, rows outside
    ``U``, columns ``U``). Entries outside both blocks are never perturbed, so
    the operator there equals the clean one and stays sparse.
    """

    def __init__(self, g: DirectedGraph, spec: PropagationSpec, candidates,
                 mask_top=None, mask_left=None):
        if candidates.n != g.n:
            raise ValueError(f"candidate layout is for n={candidates.n}, graph has n={g.n}")
        self.g = g
        self.spec = spec
        self.cand = candidates
        self.n = g.n
        self.k = k = candidates.k
        perm = candidates.perm
        a = g.out_adj[perm][:, perm].tocsr()
        self.a_top = a[:k].toarray()
        self.a_left = a[k:, :k].toarray()
        m_top = candidates.top_valid if mask_top is None else mask_top * candidates.top_valid
        m_left = candidates.left_valid if mask_left is None else mask_left * candidates.left_valid
        # d A~ / d P restricted to allowed entries: +1 adds an edge, -1 removes it
        self.flip_top = (1.0 - 2.0 * self.a_top) * m_top
        self.flip_left = (1.0 - 2.0 * self.a_left) * m_left
        w = weight_matrix(DirectedGraph.from_matrix(a), spec)
        self.w_vv = w[k:, k:].tocsr()
        self.rs_vv = np.asarray(self.w_vv.sum(axis=1)).reshape(-1, 1)
        self.eye_top = np.eye(k, self.n) if spec.add_self_loops else None

    def build(self, tape: Tape, p_top, p_left=None) -> "PatchedOperator":
        return PatchedOperator(self, tape, p_top, p_left)

    def leaves(self, tape: Tape, perturbation=None, requires_grad=True):
        """Fresh tape leaves for the two blocks (zeros when no perturbation)."""
        if perturbation is None:
            top = np.zeros((self.k, self.n))
            left = np.zeros((self.n - self.k, self.k))
        else:
            top, left = perturbation.top, perturbation.left
        return tape.leaf(top, requires_grad), tape.leaf(left, requires_grad)


class PatchedOperator:
    """The perturbed propagation operator expressed on a tape (permuted order)."""

    def __init__(self, plan: PatchPlan, tape: Tape, p_top: Node, p_left: Node | None):
        self.plan = plan
        self.tape = tape
        self.n = plan.n
        self.k = k = plan.k
        self.perm = plan.cand.perm
        self.p_top, self.p_left = p_top, p_left
        has_v = plan.n > k
        self.has_v = has_v

        at_top = tape.add(tape.mul(plan.flip_top, p_top), plan.a_top)
        at_left = tape.add(tape.mul(plan.flip_left, p_left), plan.a_left) if has_v else None
        self.adj_top, self.adj_left = at_top, at_left

        spec = plan.spec
        need_t = spec.kind == "sym" or spec.walk_beta < 1.0
        if need_t:
            uu = tape.slice(at_top, cols=slice(0, k))
            col_u = tape.vstack([uu, at_left]) if has_v else uu
            top_t = tape.transpose(col_u)
            left_t = tape.transpose(tape.slice(at_top, cols=slice(k, None))) if has_v else None

        if spec.kind == "sym":
            w_top = at_top + top_t - at_top * top_t
            w_left = (at_left + left_t - at_left * left_t) if has_v else None
        else:
            b = spec.walk_beta
            w_top = self._mix(at_top, top_t if need_t else None, b)
            w_left = self._mix(at_left, left_t if need_t else None, b) if has_v else None
        if plan.eye_top is not None:
            w_top = tape.add(w_top, plan.eye_top)
        self.w_top, self.w_left = w_top, w_left

        r_top = tape.rowsum(w_top)
        if has_v:
            r_bot = tape.add(tape.rowsum(w_left), plan.rs_vv)
            r = tape.vstack([r_top, r_bot])
        else:
            r = r_top
        # empty rows only occur without self-loops; they propagate zeros
        r = tape.add(r, (r.value == 0).astype(np.float64))
        self.row_sums = r
        self.scale = tape.power(r, -0.5 if spec.kind == "sym" else -1.0)

    def _mix(self, a, at, b):
        tape = self.tape
        if b == 1.0:
            return a
        if b == 0.0:
            return at
        return tape.add(tape.scale(a, b), tape.scale(at, 1.0 - b))

    def _raw(self, y: Node, rows=None) -> Node:
        """Unnormalised ``W @ y`` (all rows, or the given rows inside ``U``)."""
        tape = self.tape
        k = self.k
        if rows is not None:
            rows = np.asarray(rows)
            if rows.size and rows.max() >= k:
                raise ValueError("row subsets must lie inside the patched node block")
            return tape.take(self.w_top, rows=rows) @ y
        top = self.w_top @ y
        if not self.has_v:
            return top
        bot = tape.add(self.w_left @ tape.slice(y, rows=slice(0, k)),
                       tape.spmm(self.plan.w_vv, tape.slice(y, rows=slice(k, None))))
        return tape.vstack([top, bot])

    def apply(self, y: Node, rows=None) -> Node:
        """``S @ y`` in permuted node order, optionally only for ``rows``."""
        tape = self.tape
        if y.shape[0] != self.n:
            raise ValueError(f"operand has {y.shape[0]} rows, operator is {self.n}x{self.n}")
        s = self.scale
        s_rows = s if rows is None else tape.take(s, rows=rows)
        if self.plan.spec.kind == "sym":
            y = tape.mul_col(y, s)
        return tape.mul_col(self._raw(y, rows), s_rows)

    def matrix(self) -> Node:
        """The full n x n operator as a dense node (permuted order; small n only)."""
        tape = self.tape
        if self.has_v:
            bottom = tape.hstack([self.w_left, self.plan.w_vv.toarray()])
            w = tape.vstack([self.w_top, bottom])
        else:
            w = self.w_top
        out = tape.mul_col(w, self.scale)
        if self.plan.spec.kind == "sym":
            out = tape.transpose(tape.mul_col(tape.transpose(out), self.scale))
        return out

    def matrix_original_order(self) -> Node:
        inv = self.plan.cand.inv
        return self.tape.take(self.matrix(), rows=inv, cols=inv)


def build_differentiable_operator(g, spec, perturbation, tape, plan=None):
    """Perturbed operator on ``tape`` with leaves for the perturbation blocks.

    Returns the :class:`PatchedOperator`; its ``p_top`` / ``p_left`` leaves
    receive gradients after ``tape.backward``.
    """
    if perturbation.candidates.n != g.n:
        raise ValueError("perturbation and graph disagree on node count")
    plan = plan or PatchPlan(g, spec, perturbation.candidates,
                             perturbation.mask_top, perturbation.mask_left)
    p_top, p_left = plan.leaves(tape, perturbation)
    return plan.build(tape, p_top, p_left if plan.n > plan.k else None)
