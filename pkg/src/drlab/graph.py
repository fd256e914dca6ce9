"""Directed graph storage, file loading, symmetrization and edge flips."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import io as drio

log = logging.getLogger(__name__)

__all__ = [
    "DirectedGraph",
    "DataSplit",
    "EdgeListStats",
    "read_edge_list",
    "load_graph",
    "load_dataset",
    "symmetrize",
    "apply_perturbation",
    "validate_features",
    "validate_labels",
]


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Binary directed adjacency held as CSR (out-links) and CSR of the transpose.

    Build instances with :meth:`from_edges` or :meth:`from_matrix`; both drop
    self-loops and duplicate edges.
    """

    n: int
    out_adj: sp.csr_matrix
    in_adj: sp.csr_matrix
    d_out: np.ndarray
    d_in: np.ndarray

    @classmethod
    def from_edges(cls, n, src, dst) -> "DirectedGraph":
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("src and dst must have equal length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise ValueError(f"edge endpoint out of range for n={n}")
        keep = src != dst
        coo = sp.coo_matrix((np.ones(int(keep.sum())), (src[keep], dst[keep])), shape=(n, n))
        return cls.from_matrix(coo)

    @classmethod
    def from_matrix(cls, matrix) -> "DirectedGraph":
        coo = sp.coo_matrix(matrix)
        if coo.shape[0] != coo.shape[1]:
            raise ValueError(f"adjacency must be square, got {coo.shape}")
        keep = (coo.row != coo.col) & (coo.data != 0)
        a = sp.csr_matrix((np.ones(int(keep.sum())), (coo.row[keep], coo.col[keep])),
                          shape=coo.shape)
        a.sum_duplicates()
        a.data[:] = 1.0
        a.sort_indices()
        at = a.T.tocsr()
        at.sort_indices()
        d_out = np.diff(a.indptr).astype(np.int64)
        d_in = np.diff(at.indptr).astype(np.int64)
        for arr in (a.data, a.indices, a.indptr, at.data, at.indices, at.indptr):
            _frozen(arr)
        return cls(a.shape[0], a, at, _frozen(d_out), _frozen(d_in))

    @property
    def m(self) -> int:
        return int(self.out_adj.nnz)

    def edges(self) -> np.ndarray:
        """All edges as an (m, 2) array of ``(src, dst)`` in row-major order."""
        src = np.repeat(np.arange(self.n), self.d_out)
        return np.column_stack([src, self.out_adj.indices]).astype(np.int64)

    def has_edge(self, i, j) -> bool:
        row = self.out_adj.indices[self.out_adj.indptr[i]:self.out_adj.indptr[i + 1]]
        k = np.searchsorted(row, j)
        return bool(k < row.size and row[k] == j)

    def out_neighbors(self, i) -> np.ndarray:
        return self.out_adj.indices[self.out_adj.indptr[i]:self.out_adj.indptr[i + 1]]

    def in_neighbors(self, i) -> np.ndarray:
        return self.in_adj.indices[self.in_adj.indptr[i]:self.in_adj.indptr[i + 1]]

    def transpose(self) -> "DirectedGraph":
        return DirectedGraph(self.n, self.in_adj, self.out_adj, self.d_in, self.d_out)

    def dense(self) -> np.ndarray:
        return self.out_adj.toarray()

    def edge_set(self) -> set:
        return {(int(i), int(j)) for i, j in self.edges()}

    def reciprocal_count(self) -> int:
        """Number of ordered edges whose reverse is also present."""
        return int(self.out_adj.multiply(self.in_adj).nnz)

    def permute(self, perm) -> "DirectedGraph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return DirectedGraph.from_matrix(self.out_adj[perm][:, perm])

    def __eq__(self, other):
        if not isinstance(other, DirectedGraph):
            return NotImplemented
        return self.n == other.n and (self.out_adj != other.out_adj).nnz == 0


@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int = 0

    def __post_init__(self):
        parts = [np.asarray(p, dtype=np.int64) for p in (self.train, self.val, self.test)]
        union = np.concatenate(parts)
        if np.unique(union).size != union.size:
            raise ValueError("train/val/test must be disjoint")
        for name, arr in zip(("train", "val", "test"), parts):
            object.__setattr__(self, name, _frozen(arr))


@dataclass
class EdgeListStats:
    raw_lines: int = 0
    self_loops: int = 0
    duplicates: int = 0
    edges: int = 0
    extra: dict = field(default_factory=dict)


_SPLIT = re.compile(r"[\s,]+")


def read_edge_list(path):
    """Parse a whitespace/comma separated ``src dst`` file (0-based, '#' comments).

    Returns ``(src, dst, stats)`` with self-loops and duplicates removed.
    """
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tok = [t for t in _SPLIT.split(line) if t]
            if len(tok) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            try:
                pairs.append((int(tok[0]), int(tok[1])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer node id in {line!r}") from exc
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    stats = EdgeListStats(raw_lines=len(pairs))
    if arr.size and arr.min() < 0:
        raise ValueError(f"{path}: negative node index")
    loops = arr[:, 0] == arr[:, 1]
    stats.self_loops = int(loops.sum())
    arr = arr[~loops]
    uniq = np.unique(arr, axis=0) if arr.size else arr
    stats.duplicates = int(arr.shape[0] - uniq.shape[0])
    stats.edges = int(uniq.shape[0])
    return uniq[:, 0], uniq[:, 1], stats


def validate_features(x, n=None):
    if sp.issparse(x):
        data = x.data
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        data = x
    if n is not None and x.shape[0] != n:
        raise ValueError(f"feature rows ({x.shape[0]}) != node count ({n})")
    if not np.all(np.isfinite(data)):
        raise ValueError("features contain non-finite entries")
    return x


def validate_labels(y, n=None, num_classes=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    if n is not None and y.shape[0] != n:
        raise ValueError(f"label count ({y.shape[0]}) != node count ({n})")
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise ValueError(f"label {y.max()} >= class count {num_classes}")
    return y.astype(np.int64)


def load_graph(edge_list_path, feature_path, label_path):
    """Load ``(DirectedGraph, features, labels)`` from the on-disk layout.

    The node count comes from the feature matrix. Features and labels may be
    ``.csv`` or the binary ``.bin`` format of :mod:`drlab.io`.
    """
    x = drio.read_matrix(feature_path)
    y = drio.read_matrix(label_path)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    n = x.shape[0]
    x = validate_features(x, n)
    y = validate_labels(y, n)
    src, dst, stats = read_edge_list(edge_list_path)
    if src.size and max(src.max(), dst.max()) >= n:
        bad = int(max(src.max(), dst.max()))
        raise ValueError(f"{edge_list_path}: node index {bad} out of range for {n} nodes")
    if stats.self_loops:
        log.warning("%s: dropped %d self-loop(s)", edge_list_path, stats.self_loops)
    if stats.duplicates:
        log.info("%s: merged %d duplicate edge(s)", edge_list_path, stats.duplicates)
    g = DirectedGraph.from_edges(n, src, dst)
    log.info("%s: n=%d m=%d reciprocal=%d", edge_list_path, g.n, g.m, g.reciprocal_count())
    return g, x, y


def load_dataset(root):
    """Load ``<root>/edges.txt`` plus ``features.{bin,csv}`` and ``labels.{bin,csv}``."""
    root = Path(root)

    def pick(stem):
        for ext in (".bin", ".csv"):
            p = root / f"{stem}{ext}"
            if p.exists():
                return p
        raise FileNotFoundError(
            f"missing {root}/{stem}.bin or {stem}.csv "
            f"(expected layout: <name>/edges.txt, <name>/features.{{csv|bin}}, <name>/labels.{{csv|bin}})")

    edges = root / "edges.txt"
    if not edges.exists():
        raise FileNotFoundError(f"missing {edges} (expected layout: <name>/edges.txt, ...)")
    return load_graph(edges, pick("features"), pick("labels"))


def symmetrize(g: DirectedGraph) -> DirectedGraph:
    """Edge set ``{(i, j) : A_ij = 1 or A_ji = 1}``."""
    sym = g.out_adj.maximum(g.in_adj)
    return DirectedGraph.from_matrix(sym)


def apply_perturbation(g: DirectedGraph, flips) -> DirectedGraph:
    """Toggle every ordered pair in ``flips``: ``A_ij <- 1 - A_ij``."""
    flips = np.asarray(flips, dtype=np.int64).reshape(-1, 2)
    if flips.size == 0:
        return g
    if np.any(flips[:, 0] == flips[:, 1]):
        raise ValueError("flips may not contain self-loops")
    if flips.min() < 0 or flips.max() >= g.n:
        raise ValueError("flip endpoint out of range")
    if np.unique(flips, axis=0).shape[0] != flips.shape[0]:
        raise ValueError("duplicate flip of the same ordered pair")
    toggle = sp.csr_matrix((np.ones(len(flips)), (flips[:, 0], flips[:, 1])), shape=(g.n, g.n))
    base = g.out_adj.astype(np.float64)
    # |A - T| toggles: 1-1 -> 0, 0-1 -> 1
    new = abs(base - toggle)
    new.eliminate_zeros()
    return DirectedGraph.from_matrix(new)
