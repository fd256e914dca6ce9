"""Candidate edge-flip sets, RDGA masks and continuous perturbations.

A :class:`CandidateSet` is described by two node sets: ``row_nodes`` (every
``(i, j)`` with ``i`` in the set is a candidate) and ``col_nodes`` (every
``(i, j)`` with ``j`` in the set is a candidate). The all-pairs policy puts
every node in ``row_nodes``. Diagonal pairs are never candidates.

Values are stored in the block layout used by
:class:`drlab.propagation.PatchPlan`: nodes are relabelled so the union
``U = row_nodes | col_nodes`` comes first, then a ``top`` block holds rows
``U`` against all columns and a ``left`` block holds the remaining rows
against columns ``U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import DirectedGraph

__all__ = ["CandidateSet", "Perturbation", "build_mask", "budget_for"]


@dataclass(frozen=True, eq=False)
class CandidateSet:
    n: int
    target: int
    row_nodes: np.ndarray
    col_nodes: np.ndarray
    perm: np.ndarray = field(repr=False)
    inv: np.ndarray = field(repr=False)
    k: int = 0
    top_valid: np.ndarray = field(default=None, repr=False)
    left_valid: np.ndarray = field(default=None, repr=False)

    @classmethod
    def build(cls, n, target, row_nodes, col_nodes=()):
        rows = np.unique(np.asarray(row_nodes, dtype=np.int64))
        cols = np.unique(np.asarray(col_nodes, dtype=np.int64))
        if not (0 <= target < n):
            raise ValueError(f"target {target} out of range")
        u = np.union1d(rows, cols)
        if target not in u:
            raise ValueError("the target must belong to the candidate node set")
        rest = np.setdiff1d(np.arange(n), u)
        perm = np.concatenate([u, rest]).astype(np.int64)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        k = u.size
        is_row = np.isin(perm, rows)
        is_col = np.isin(perm, cols)
        top = is_row[:k, None] | is_col[None, :]
        top[np.arange(k), np.arange(k)] = False
        left = np.broadcast_to(is_col[None, :k], (n - k, k)).copy()
        for arr in (perm, inv, top, left):
            arr.setflags(write=False)
        return cls(n, int(target), rows, cols, perm, inv, k, top, left)

    @classmethod
    def all_pairs(cls, n, target):
        return cls.build(n, target, np.arange(n))

    @classmethod
    def local(cls, g: DirectedGraph, target, hops=2):
        """Pairs with an endpoint within ``hops`` (undirected) of the target,
        plus every pair whose source is an out-neighbour of the target."""
        und = (g.out_adj + g.in_adj).tocsr()
        frontier = {int(target)}
        seen = {int(target)}
        for _ in range(hops):
            nxt = set()
            for v in frontier:
                nxt.update(int(u) for u in und.indices[und.indptr[v]:und.indptr[v + 1]])
            frontier = nxt - seen
            seen |= nxt
        near = np.array(sorted(seen), dtype=np.int64)
        rows = np.union1d(near, g.out_neighbors(target))
        return cls.build(g.n, target, rows, near)

    @property
    def shape_top(self):
        return (self.k, self.n)

    @property
    def shape_left(self):
        return (self.n - self.k, self.k)

    @property
    def size(self) -> int:
        return int(self.top_valid.sum() + self.left_valid.sum())

    def target_pos(self) -> int:
        return int(self.inv[self.target])

    def block_pairs(self, top_mask, left_mask):
        """Original-coordinate ``(i, j)`` pairs for True entries of the blocks."""
        r, c = np.nonzero(top_mask)
        out = [np.column_stack([self.perm[r], self.perm[c]])]
        if left_mask is not None and left_mask.size:
            r, c = np.nonzero(left_mask)
            out.append(np.column_stack([self.perm[r + self.k], self.perm[c]]))
        return np.concatenate(out).astype(np.int64).reshape(-1, 2)

    def pairs(self) -> np.ndarray:
        return self.block_pairs(self.top_valid, self.left_valid)

    def row_candidates(self, i) -> np.ndarray:
        """Top-block column positions of candidates whose source is node ``i``."""
        pos = int(self.inv[i])
        if pos >= self.k:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.top_valid[pos])


def budget_for(g: DirectedGraph, target, budget_rate) -> int:
    """``ceil(rate * (d_out + d_in))`` of the target; 0 for a 0 rate."""
    if budget_rate <= 0:
        return 0
    deg = int(g.d_out[target] + g.d_in[target])
    return max(1, math.ceil(budget_rate * deg - 1e-12))


def build_mask(g: DirectedGraph, t, masking_rate, seed, candidates=None):
    """RDGA mask over ``candidates`` (all pairs by default).

    Returns ``(mask_top, mask_left)`` float 0/1 blocks. With rate 1 every
    candidate ``(t, j)`` is masked; with rate ``r`` a seeded uniform subset of
    ``ceil(r * |row-t candidates|)`` of them is masked; for a fixed seed the
    masked set at a lower rate is contained in the one at a higher rate.
    """
    if not 0.0 <= masking_rate <= 1.0:
        raise ValueError(f"masking_rate must be in [0, 1], got {masking_rate}")
    cand = candidates if candidates is not None else CandidateSet.all_pairs(g.n, t)
    mask_top = cand.top_valid.astype(np.float64)
    mask_left = cand.left_valid.astype(np.float64)
    cols = cand.row_candidates(t)
    count = math.ceil(masking_rate * cols.size - 1e-12)
    if count:
        # a fixed seeded order makes masks nested across rates
        order = np.random.default_rng(seed).permutation(cols)
        mask_top[cand.target_pos(), order[:count]] = 0.0
    return mask_top, mask_left


@dataclass
class Perturbation:
    """Continuous flip probabilities over a candidate set, with mask and budget."""

    candidates: CandidateSet
    mask_top: np.ndarray
    mask_left: np.ndarray
    budget: int
    top: np.ndarray = None
    left: np.ndarray = None

    def __post_init__(self):
        if self.top is None:
            self.top = np.zeros(self.candidates.shape_top)
        if self.left is None:
            self.left = np.zeros(self.candidates.shape_left)
        self._free_top = np.flatnonzero(self.mask_top.ravel() > 0)
        self._free_left = np.flatnonzero(self.mask_left.ravel() > 0)

    @property
    def num_free(self) -> int:
        return self._free_top.size + self._free_left.size

    def free_values(self) -> np.ndarray:
        return np.concatenate([self.top.ravel()[self._free_top], self.left.ravel()[self._free_left]])

    def set_free(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        nt = self._free_top.size
        top = np.zeros(self.top.size)
        top[self._free_top] = values[:nt]
        left = np.zeros(self.left.size)
        left[self._free_left] = values[nt:]
        self.top = top.reshape(self.candidates.shape_top)
        self.left = left.reshape(self.candidates.shape_left)

    def free_gradient(self, g_top, g_left) -> np.ndarray:
        parts = [g_top.ravel()[self._free_top]]
        if g_left is not None:
            parts.append(g_left.ravel()[self._free_left])
        else:
            parts.append(np.zeros(self._free_left.size))
        return np.concatenate(parts)

    def layout_positions(self) -> np.ndarray:
        """Index of every free entry among all valid candidates (mask independent)."""
        c = self.candidates
        vt = np.flatnonzero(c.top_valid.ravel())
        vl = np.flatnonzero(c.left_valid.ravel())
        return np.concatenate([np.searchsorted(vt, self._free_top),
                               vt.size + np.searchsorted(vl, self._free_left)])

    def free_pairs(self) -> np.ndarray:
        """Original-coordinate pairs for the free entries, in ``free_values`` order."""
        c = self.candidates
        r, col = np.unravel_index(self._free_top, c.shape_top)
        top = np.column_stack([c.perm[r], c.perm[col]])
        if self._free_left.size:
            r, col = np.unravel_index(self._free_left, c.shape_left)
            left = np.column_stack([c.perm[r + c.k], c.perm[col]])
            return np.concatenate([top, left]).astype(np.int64)
        return top.astype(np.int64)

    def is_free(self, pairs) -> np.ndarray:
        """Whether each original-coordinate pair is an unmasked candidate entry."""
        c = self.candidates
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        r, col = c.inv[pairs[:, 0]], c.inv[pairs[:, 1]]
        out = np.zeros(len(pairs), dtype=bool)
        top = r < c.k
        out[top] = self.mask_top[r[top], col[top]] > 0
        left = ~top & (col < c.k)
        out[left] = self.mask_left[r[left] - c.k, col[left]] > 0
        return out

    def masked_pairs(self) -> np.ndarray:
        """Candidate pairs that the mask forbids."""
        c = self.candidates
        return c.block_pairs(c.top_valid & (self.mask_top == 0), c.left_valid & (self.mask_left == 0))

    def blocks_for(self, free_vector):
        """Top/left block arrays holding ``free_vector`` (e.g. a binary draw)."""
        saved = self.top, self.left
        self.set_free(free_vector)
        out = self.top, self.left
        self.top, self.left = saved
        return out

