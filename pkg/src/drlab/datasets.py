"""Dataset materialisation: npz conversion, download, synthetic directed SBM.

All writers produce the directory layout read by
:func:`drlab.graph.load_dataset`::

    <root>/<name>/edges.txt
    <root>/<name>/features.bin
    <root>/<name>/labels.bin
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import urllib.request
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import io as drio
from .graph import DirectedGraph

log = logging.getLogger(__name__)

# npz files in the "adj_data/adj_indices/adj_indptr/attr_*/labels" layout
SOURCES = {
    "cora_ml": "https://github.com/SherylHYX/pytorch_geometric_signed_directed/raw/main/datasets/cora_ml.npz",
    "citeseer": "https://github.com/SherylHYX/pytorch_geometric_signed_directed/raw/main/datasets/citeseer.npz",
}

# Filled in when a verified copy is available; fetch compares against these.
CHECKSUMS: dict[str, str] = {}


def data_root(root=None) -> Path:
    return Path(root or os.environ.get("DRLAB_DATA_DIR", "data"))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(out_dir, g: DirectedGraph, x, y, meta=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges = g.edges()
    with open(out / "edges.txt", "w") as fh:
        fh.write(f"# n={g.n} m={g.m}\n")
        for i, j in edges:
            fh.write(f"{i} {j}\n")
    xd = x.toarray() if sp.issparse(x) else np.asarray(x)
    drio.write_bin(out / "features.bin", xd.astype(np.float32), "f")
    drio.write_bin(out / "labels.bin", np.asarray(y, dtype=np.int32), "i")
    info = {"n": g.n, "m": g.m, "features": int(xd.shape[1]), "classes": int(np.max(y) + 1),
            "reciprocal_edges": g.reciprocal_count()}
    info.update(meta or {})
    (out / "dataset.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    return out


def convert_npz(npz_path, out_dir, name=None) -> Path:
    """Convert a g2g/nettack-style ``.npz`` into the on-disk layout."""
    with np.load(npz_path, allow_pickle=True) as f:
        f = dict(f)
    adj = sp.csr_matrix((f["adj_data"], f["adj_indices"], f["adj_indptr"]), shape=tuple(f["adj_shape"]))
    if "attr_data" in f:
        x = sp.csr_matrix((f["attr_data"], f["attr_indices"], f["attr_indptr"]), shape=tuple(f["attr_shape"]))
    else:
        x = np.asarray(f["attr_matrix"])
    y = np.asarray(f["labels"]).astype(np.int64)
    coo = adj.tocoo()
    loops = int((coo.row == coo.col).sum())
    g = DirectedGraph.from_matrix(adj)
    meta = {"source": str(npz_path), "sha256": sha256(npz_path), "self_loops_dropped": loops,
            "name": name or Path(npz_path).stem}
    log.info("converted %s: n=%d m=%d self-loops dropped=%d reciprocal=%d",
             npz_path, g.n, g.m, loops, g.reciprocal_count())
    return write_dataset(out_dir, g, x, y, meta)


def fetch(name, root=None, source=None, expected_sha256=None) -> Path:
    """Download (or copy from ``source``) and convert a named dataset."""
    root = data_root(root)
    root.mkdir(parents=True, exist_ok=True)
    src = source or SOURCES.get(name)
    if src is None:
        raise KeyError(f"no known source for dataset {name!r}; pass source=")
    raw = root / f"{name}.npz"
    if Path(str(src)).exists():
        raw.write_bytes(Path(src).read_bytes())
    else:
        log.info("downloading %s", src)
        with urllib.request.urlopen(src, timeout=60) as resp:
            raw.write_bytes(resp.read())
    digest = sha256(raw)
    want = expected_sha256 or CHECKSUMS.get(name)
    if want and digest != want:
        raise ValueError(f"checksum mismatch for {raw}: got {digest}, expected {want}")
    return convert_npz(raw, root / name, name)


def directed_sbm(n=1000, num_classes=7, avg_out_degree=3.0, homophily=0.6, reciprocity=0.1,
                 n_features=400, words_per_node=18, feature_signal=0.32, seed=0):
    """Citation-like directed stochastic block model with bag-of-words features.

    Out-degrees are heavy tailed and destinations are chosen by a per-node
    popularity weight, within the source's class with probability
    ``homophily``. A fraction ``reciprocity`` of edges gets its reverse.
    Each node draws ``words_per_node`` words, from its class's topic
    vocabulary with probability ``feature_signal`` and uniformly otherwise.
    """
    rng = np.random.default_rng(seed)
    class_p = rng.dirichlet(np.full(num_classes, 8.0))
    y = rng.choice(num_classes, size=n, p=class_p)
    popularity = rng.pareto(2.0, size=n) + 1.0
    lam = avg_out_degree * rng.lognormal(0.0, 0.7, size=n) / np.exp(0.7 ** 2 / 2)
    deg = rng.poisson(lam)
    members = [np.flatnonzero(y == c) for c in range(num_classes)]
    src, dst = [], []
    everyone = np.arange(n)
    for i in range(n):
        for _ in range(deg[i]):
            pool = members[y[i]] if rng.random() < homophily else everyone
            w = popularity[pool]
            j = int(rng.choice(pool, p=w / w.sum()))
            if j != i:
                src.append(i)
                dst.append(j)
                if rng.random() < reciprocity:
                    src.append(j)
                    dst.append(i)
    g = DirectedGraph.from_edges(n, src, dst)

    topic_size = n_features // num_classes
    x = np.zeros((n, n_features), dtype=np.float32)
    for i in range(n):
        topic = np.arange(y[i] * topic_size, (y[i] + 1) * topic_size)
        on_topic = rng.random(words_per_node) < feature_signal
        words = np.where(on_topic, rng.choice(topic, size=words_per_node),
                         rng.integers(0, n_features, size=words_per_node))
        x[i, words] = 1.0
    return g, x, y.astype(np.int64)


def write_synthetic(root=None, name="sbm", **kwargs) -> Path:
    g, x, y = directed_sbm(**kwargs)
    meta = {"generator": "directed_sbm", "params": {k: v for k, v in kwargs.items()}}
    return write_dataset(data_root(root) / name, g, x, y, meta)
