"""MLP, GCN and APPNP node classifiers with pluggable propagation.

Every backbone is two dense layers (``d -> hidden -> C``). GCN propagates
before each layer's bias, APPNP runs ``K`` personalised-PageRank steps on
the MLP logits. The propagation operator is any object with an
``apply(node, rows=None)`` method: :class:`~drlab.propagation.FixedOperator`
for training or :class:`~drlab.propagation.PatchedOperator` during attacks.
"""

from __future__ import annotations

import itertools
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .autodiff import Tape
from .graph import DataSplit, DirectedGraph
from .propagation import FixedOperator, PropagationSpec

log = logging.getLogger(__name__)

__all__ = [
    "BACKBONES",
    "LR_GRID",
    "WD_GRID",
    "DROPOUT_GRID",
    "ModelConfig",
    "TrainedModel",
    "TrainingError",
    "forward",
    "predict",
    "train",
    "grid_search",
    "hyperparameter_grid",
    "save_model",
    "load_model",
]

BACKBONES = ("mlp", "gcn", "appnp")
LR_GRID = (0.05, 0.01, 0.005)
WD_GRID = (5e-4, 5e-5, 5e-6)
DROPOUT_GRID = (0.0, 0.5, 0.8)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "gcn"
    propagation: PropagationSpec = field(default_factory=PropagationSpec)
    hidden_dim: int = 64
    num_layers: int = 2
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    appnp_alpha: float = 0.1
    appnp_K: int = 10
    max_epochs: int = 1000
    patience: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.num_layers != 2:
            raise ValueError("only 2-layer architectures are supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def name(self) -> str:
        bb = self.backbone.upper()
        if bb == "MLP":
            return bb
        p = self.propagation
        if p.kind == "sym":
            return bb
        if p.kind == "bbrw":
            return f"BBRW-{bb}"
        return f"{bb}-{'RWout' if p.kind == 'rw_out' else 'RWin'}"

    @property
    def label(self) -> str:
        """``name``, with beta appended for BBRW models."""
        if self.backbone != "mlp" and self.propagation.kind == "bbrw":
            return f"{self.name}(beta={self.propagation.beta:g})"
        return self.name

    def with_propagation(self, propagation: PropagationSpec) -> "ModelConfig":
        return replace(self, propagation=propagation)

    def training_signature(self) -> dict:
        """Everything except the propagation operator."""
        d = self.to_dict()
        d.pop("propagation")
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["propagation"] = self.propagation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        d = dict(d)
        d["propagation"] = PropagationSpec.from_dict(d.get("propagation", {"kind": "sym"}))
        return cls(**d)


@dataclass
class TrainedModel:
    config: ModelConfig
    params: dict
    val_acc: float = float("nan")
    epochs: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def uses_graph(self) -> bool:
        return self.config.backbone != "mlp"

    def operator(self, g: DirectedGraph):
        if not self.uses_graph:
            return None
        return FixedOperator.from_graph(g, self.config.propagation)


def init_params(n_features, n_classes, config: ModelConfig, rng) -> dict:
    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    h = config.hidden_dim
    return {
        "W1": glorot(n_features, h),
        "b1": np.zeros((1, h)),
        "W2": glorot(h, n_classes),
        "b2": np.zeros((1, n_classes)),
    }


def _drop_features(x, p, rng):
    if p <= 0 or rng is None:
        return x
    keep = 1.0 - p
    if sp.issparse(x):
        x = x.tocsr(copy=True)
        x.data = x.data * ((rng.random(x.data.shape) < keep) / keep)
        return x
    return x * ((rng.random(x.shape) < keep) / keep)


def _dropout(tape, node, p, rng):
    if p <= 0 or rng is None:
        return node
    keep = 1.0 - p
    return tape.dropout(node, (rng.random(node.shape) < keep) / keep)


def forward(tape: Tape, params: dict, config: ModelConfig, operator, x, rows=None, rng=None, cache=None):
    """Logits (``n x C``, or ``len(rows) x C``) as a tape node.

    ``params`` maps names to tape nodes. Dropout is active only when ``rng``
    is given. ``x`` is a constant dense or sparse feature matrix. A ``cache``
    dict stores the graph-independent part (``X W1`` for GCN, the MLP head
    for APPNP) across calls with frozen weights; no gradient reaches the
    weights through a cached value.
    """
    p = config.dropout
    w1, b1, w2, b2 = params["W1"], params["b1"], params["W2"], params["b2"]
    if x.shape[1] != w1.shape[0]:
        raise ValueError(f"features have {x.shape[1]} columns, model expects {w1.shape[0]}")
    backbone = config.backbone
    if backbone != "mlp":
        if operator is None:
            raise ValueError(f"{config.name} needs a propagation operator")
        if operator.n != x.shape[0]:
            raise ValueError(f"operator is {operator.n}x{operator.n}, features have {x.shape[0]} rows")

    if backbone == "mlp":
        xs = x if rows is None else x[np.asarray(rows)]
        h = tape.relu(tape.add_row(tape.spmm(_drop_features(xs, p, rng), w1), b1))
        h = _dropout(tape, h, p, rng)
        return tape.add_row(h @ w2, b2)

    if backbone == "gcn":
        if cache is not None and "xw" in cache:
            xw = tape.const(cache["xw"])
        else:
            xw = tape.spmm(_drop_features(x, p, rng), w1)
            if cache is not None:
                cache["xw"] = xw.value
        h = tape.relu(tape.add_row(operator.apply(xw), b1))
        h = _dropout(tape, h, p, rng)
        return tape.add_row(operator.apply(h @ w2, rows=rows), b2)

    # appnp: dropout only inside the MLP head; propagation is deterministic
    if cache is not None and "h0" in cache:
        h0 = tape.const(cache["h0"])
    else:
        h = tape.relu(tape.add_row(tape.spmm(_drop_features(x, p, rng), w1), b1))
        h = _dropout(tape, h, p, rng)
        h0 = tape.add_row(h @ w2, b2)
        if cache is not None:
            cache["h0"] = h0.value
    alpha, steps = config.appnp_alpha, config.appnp_K
    if steps == 0:
        return h0 if rows is None else tape.take(h0, rows=rows)
    z = h0
    for step in range(steps):
        last = step == steps - 1
        r = rows if last else None
        h0_r = h0 if r is None else tape.take(h0, rows=r)
        z = tape.add(tape.scale(operator.apply(z, rows=r), 1.0 - alpha), tape.scale(h0_r, alpha))
    return z


def predict(model: TrainedModel, operator, x, rows=None) -> np.ndarray:
    """Inference-mode logits as a numpy array."""
    tape = Tape()
    params = {k: tape.const(v) for k, v in model.params.items()}
    return forward(tape, params, model.config, operator, x, rows=rows).value


def _accuracy(logits, y, idx):
    return float((logits[idx].argmax(axis=1) == y[idx]).mean())


def _nll(logits, y, idx):
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(idx)), y[idx]].mean())


def train(g: DirectedGraph, x, y, split: DataSplit, config: ModelConfig, num_classes=None) -> TrainedModel:
    """Full-batch AdamW training with early stopping on validation accuracy.

    Returns the best-validation checkpoint (ties broken by lower validation
    loss). Raises :class:`TrainingError` if the loss becomes non-finite.
    """
    y = np.asarray(y)
    c = int(num_classes or y.max() + 1)
    rng = np.random.default_rng(config.seed)
    params = init_params(x.shape[1], c, config, rng)
    operator = FixedOperator.from_graph(g, config.propagation) if config.backbone != "mlp" else None
    # AdamW state
    b1_, b2_, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    train_idx, val_idx = split.train, split.val
    best = None
    best_key = (-1.0, np.inf)
    since_best = 0
    history = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        tape = Tape()
        nodes = {k: tape.leaf(val) for k, val in params.items()}
        logits = forward(tape, nodes, config, operator, x, rng=rng)
        loss = tape.cross_entropy(logits, train_idx, y[train_idx])
        if not np.isfinite(loss.value[0, 0]):
            raise TrainingError(f"non-finite training loss at epoch {epoch} for config {config.to_dict()}")
        tape.backward(loss)
        for k in params:
            grad = nodes[k].grad
            m[k] = b1_ * m[k] + (1 - b1_) * grad
            v2[k] = b2_ * v2[k] + (1 - b2_) * grad * grad
            mhat = m[k] / (1 - b1_ ** epoch)
            vhat = v2[k] / (1 - b2_ ** epoch)
            params[k] = params[k] * (1 - config.lr * config.weight_decay) - config.lr * mhat / (np.sqrt(vhat) + eps)

        eval_logits = predict(TrainedModel(config, params), operator, x)
        val_acc = _accuracy(eval_logits, y, val_idx)
        val_loss = _nll(eval_logits, y, val_idx)
        key = (val_acc, -val_loss)
        if key > (best_key[0], -best_key[1]):
            best_key = (val_acc, val_loss)
            best = {k: val.copy() for k, val in params.items()}
            since_best = 0
            history.append({
                "epoch": epoch,
                "val_acc": val_acc,
                "val_loss": val_loss,
                "train_loss": _nll(eval_logits, y, train_idx),
            })
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return TrainedModel(config, best, best_key[0], epoch, history)


def hyperparameter_grid(base: ModelConfig):
    """The 27 (lr, weight decay, dropout) variants of ``base``."""
    for lr, wd, dp in itertools.product(LR_GRID, WD_GRID, DROPOUT_GRID):
        yield replace(base, lr=lr, weight_decay=wd, dropout=dp)


def _tie_key(cfg: ModelConfig):
    # lower lr, then higher weight decay, then lower dropout
    return (cfg.lr, -cfg.weight_decay, cfg.dropout)


def grid_search(g, x, y, split, backbone, propagation=None, base=None, return_trials=False):
    """Pick the grid config with the best validation accuracy."""
    base = base or ModelConfig(backbone=backbone)
    base = replace(base, backbone=backbone, propagation=propagation or base.propagation)
    trials = []
    for cfg in hyperparameter_grid(base):
        model = train(g, x, y, split, cfg)
        trials.append((cfg, model.val_acc))
        log.info("grid %s lr=%g wd=%g dropout=%g -> val %.4f", cfg.name, cfg.lr, cfg.weight_decay,
                 cfg.dropout, model.val_acc)
    best_acc = max(acc for _, acc in trials)
    best = min((cfg for cfg, acc in trials if acc == best_acc), key=_tie_key)
    return (best, trials) if return_trials else best


_CKPT_MAGIC = b"DRLCKPT1"


def save_model(path, model: TrainedModel) -> None:
    """Header (magic, JSON metadata) followed by named float64 arrays."""
    meta = json.dumps({
        "config": model.config.to_dict(),
        "val_acc": model.val_acc,
        "epochs": model.epochs,
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(model.params)))
        for name in sorted(model.params):
            arr = np.ascontiguousarray(model.params[name], dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<I", len(key)) + key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    off = 8
    (mlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    meta = json.loads(raw[off:off + mlen])
    off += mlen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + klen].decode()
        off += klen
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", raw, off)
        off += 8 * ndim
        size = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    return TrainedModel(ModelConfig.from_dict(meta["config"]), params, meta["val_acc"], meta["epochs"])
