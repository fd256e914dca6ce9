"""Experiment orchestration: splits, targets, robust-accuracy tables and sweeps.

An :class:`Experiment` binds an :class:`ExperimentPlan` to one dataset and
memoises trained models and attack runs, so the main table, the beta sweep
and the masking sweep share work (transfer perturbations from the surrogate
are computed once per split, target and budget).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import published
from .attack import CATEGORIES, AttackConfig, derive_seed, run_attack_suite
from .graph import DataSplit, DirectedGraph
from .models import ModelConfig, TrainedModel, grid_search, predict, train
from .propagation import PropagationSpec

log = logging.getLogger(__name__)

__all__ = [
    "MODEL_SPECS",
    "ExperimentPlan",
    "Experiment",
    "ResultTable",
    "make_splits",
    "sample_targets",
    "evaluate",
    "model_config",
    "run_table",
    "beta_sweep",
    "masking_sweep",
    "adversary_stats",
    "write_results",
]

MODEL_SPECS = {
    "mlp": ("mlp", "sym"),
    "gcn": ("gcn", "sym"),
    "appnp": ("appnp", "sym"),
    "gcn-rwout": ("gcn", "rw_out"),
    "gcn-rwin": ("gcn", "rw_in"),
    "appnp-rwout": ("appnp", "rw_out"),
    "appnp-rwin": ("appnp", "rw_in"),
    "bbrw-gcn": ("gcn", "bbrw"),
    "bbrw-appnp": ("appnp", "bbrw"),
}

BETA_GRID = tuple(round(0.1 * i, 1) for i in range(11))
MASK_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def model_config(name, beta=0.7, base: ModelConfig | None = None) -> ModelConfig:
    """Config for a model alias such as ``"gcn-rwout"`` or ``"bbrw-gcn"``."""
    try:
        backbone, kind = MODEL_SPECS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODEL_SPECS)}") from None
    prop = PropagationSpec(kind, beta if kind == "bbrw" else 0.5)
    base = base or ModelConfig(backbone=backbone)
    return replace(base, backbone=backbone, propagation=prop)


def _range_check(name, values, lo=0.0, hi=1.0):
    for v in values:
        if not lo <= float(v) <= hi:
            raise ValueError(f"{name} value {v} outside the valid range [{lo}, {hi}]")


@dataclass(frozen=True)
class ExperimentPlan:
    name: str = "default"
    dataset: str = "cora_ml"
    num_splits: int = 10
    targets_per_split: int = 20
    budgets: tuple = (0.0, 0.25, 0.5, 1.0)
    victims: tuple = ("mlp", "gcn", "gcn-rwout", "gcn-rwin", "appnp", "bbrw-gcn", "bbrw-appnp")
    surrogate: str = "gcn"
    modes: tuple = ("transfer", "adaptive")
    beta_grid: tuple = BETA_GRID
    masking_grid: tuple = MASK_GRID
    mask_betas: tuple = (0.5, 0.6, 0.7, 0.8, 0.9)
    mask_budget: float = 0.5
    bbrw_beta: float = 0.7
    masking_rate: float = 1.0
    master_seed: int = 0
    T: int = 200
    K: int = 100
    eta: float | None = None
    loss_kind: str = "margin"
    candidate_policy: str = "local"
    hops: int = 2
    tune: bool = True
    max_epochs: int = 1000
    patience: int = 100
    jobs: int = 1

    def __post_init__(self):
        for name in ("budgets", "victims", "modes", "beta_grid", "masking_grid", "mask_betas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        _range_check("budget", self.budgets)
        _range_check("beta", self.beta_grid + self.mask_betas + (self.bbrw_beta,))
        _range_check("masking rate", self.masking_grid + (self.masking_rate,))
        for v in self.victims + (self.surrogate,):
            model_config(v)
        if self.num_splits < 1 or self.targets_per_split < 1:
            raise ValueError("num_splits and targets_per_split must be positive")
        AttackConfig(0, loss_kind=self.loss_kind, candidate_policy=self.candidate_policy)

    def attack_config(self, masking_rate=None) -> AttackConfig:
        return AttackConfig(target=0, T=self.T, K=self.K, eta=self.eta, loss_kind=self.loss_kind,
                            masking_rate=self.masking_rate if masking_rate is None else masking_rate,
                            candidate_policy=self.candidate_policy, hops=self.hops)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown plan keys: {sorted(extra)}")
        return cls(**d)


def make_splits(n_labeled, num_splits, seed, nodes=None) -> list:
    """``num_splits`` seeded 10/10/80 train/val/test splits."""
    if n_labeled < 10:
        raise ValueError(f"need at least 10 labelled nodes, got {n_labeled}")
    nodes = np.arange(n_labeled) if nodes is None else np.asarray(nodes, dtype=np.int64)
    n_train = n_val = int(round(0.1 * n_labeled))
    out = []
    for i in range(num_splits):
        perm = np.random.default_rng([int(seed), i]).permutation(nodes)
        out.append(DataSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                             np.sort(perm[n_train + n_val:]), seed=int(seed)))
    return out


def sample_targets(split: DataSplit, k, seed, index=0) -> np.ndarray:
    """``k`` target nodes drawn uniformly without replacement from the test set."""
    rng = np.random.default_rng([int(seed), int(index), 17])
    return np.sort(rng.choice(split.test, size=min(k, split.test.size), replace=False))


def evaluate(model: TrainedModel, g: DirectedGraph, x, y, nodes) -> float:
    """Accuracy (%) of ``model`` on ``nodes`` of graph ``g``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("cannot evaluate on an empty node set")
    logits = predict(model, model.operator(g), x, rows=nodes)
    return 100.0 * float((logits.argmax(axis=1) == np.asarray(y)[nodes]).mean())


def aggregate(values):
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def _budget_col(b):
    return str(int(round(100 * b)))


@dataclass
class ResultTable:
    """Robust target accuracy per (victim, budget, mode), one value per split."""

    dataset: str
    num_splits: int
    cells: dict = field(default_factory=dict)
    clean_total: dict = field(default_factory=dict)
    clean_target: dict = field(default_factory=dict)

    def add(self, victim, budget, mode, value):
        self.cells.setdefault((victim, float(budget), mode), []).append(float(value))

    def cell(self, victim, budget, mode):
        return aggregate(self.cells[(victim, float(budget), mode)])

    def victims(self):
        seen = []
        for v, _, _ in self.cells:
            if v not in seen:
                seen.append(v)
        return seen

    def check(self):
        for key, vals in self.cells.items():
            if len(vals) != self.num_splits:
                raise AssertionError(f"cell {key} has {len(vals)} values, expected {self.num_splits}")

    def records(self) -> list:
        rows = []
        for v in self.victims():
            m, s = aggregate(self.clean_total[v])
            rows.append({"source": "computed", "model": v, "metric": "clean_total", "budget": "",
                         "mode": "", "mean": m, "std": s, "n": len(self.clean_total[v])})
            m, s = aggregate(self.clean_target[v])
            rows.append({"source": "computed", "model": v, "metric": "target", "budget": 0.0,
                         "mode": "clean", "mean": m, "std": s, "n": len(self.clean_target[v])})
        for (v, b, mode), vals in sorted(self.cells.items(), key=lambda kv: (self.victims().index(kv[0][0]),
                                                                               kv[0][1], kv[0][2])):
            m, s = aggregate(vals)
            rows.append({"source": "computed", "model": v, "metric": "target", "budget": b, "mode": mode,
                         "mean": m, "std": s, "n": len(vals)})
        try:
            ref = published.table(self.dataset)
        except KeyError:
            ref = {}
        for name, row in ref.items():
            for col, val in row.items():
                if val is None:
                    continue
                if col == "clean_total":
                    metric, b, mode = "clean_total", "", ""
                elif col == "target_0":
                    metric, b, mode = "target", 0.0, "clean"
                else:
                    mode, pct = col.split("_")
                    metric, b = "target", int(pct) / 100.0
                rows.append({"source": "paper", "model": name, "metric": metric, "budget": b, "mode": mode,
                             "mean": val[0], "std": val[1], "n": ""})
        return rows

    def wide(self) -> list:
        """Rows shaped like the published tables: one line per model."""
        out = []
        for v in self.victims():
            row = {"model": v, "source": "computed", "clean_total": aggregate(self.clean_total[v]),
                   "target_0": aggregate(self.clean_target[v])}
            for (vv, b, mode), vals in self.cells.items():
                if vv == v and b > 0:
                    row[f"{mode}_{_budget_col(b)}"] = aggregate(vals)
            out.append(row)
        return out

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "num_splits": self.num_splits,
            "aggregation": "mean and sample standard deviation over splits",
            "rows": self.records(),
            "per_split": [{"model": v, "budget": b, "mode": m, "values": vals}
                          for (v, b, m), vals in self.cells.items()],
            "clean": [{"model": v, "clean_total": self.clean_total[v], "clean_target": self.clean_target[v]}
                      for v in self.victims()],
        }


class Experiment:
    """An :class:`ExperimentPlan` bound to one dataset, with memoised work."""

    def __init__(self, plan: ExperimentPlan, g: DirectedGraph, x, y):
        self.plan = plan
        self.g, self.x, self.y = g, x, np.asarray(y, dtype=np.int64)
        self.splits = make_splits(g.n, plan.num_splits, plan.master_seed)
        self.targets = [sample_targets(s, plan.targets_per_split, plan.master_seed, i)
                        for i, s in enumerate(self.splits)]
        self.hparams = {}  # backbone -> tuned ModelConfig
        self.models = {}
        self.run_cache = {}
        self.runs = []

    def backbone_config(self, backbone) -> ModelConfig:
        """Hyperparameters for a backbone, tuned once on split 0 with SymNorm."""
        if backbone not in self.hparams:
            base = ModelConfig(backbone=backbone, max_epochs=self.plan.max_epochs, patience=self.plan.patience)
            if self.plan.tune:
                base = grid_search(self.g, self.x, self.y, self.splits[0], backbone, base=base)
            self.hparams[backbone] = base
        return self.hparams[backbone]

    def config(self, name, split, beta=None) -> ModelConfig:
        backbone = MODEL_SPECS[name][0]
        cfg = model_config(name, self.plan.bbrw_beta if beta is None else beta, self.backbone_config(backbone))
        return replace(cfg, seed=derive_seed(self.plan.master_seed, split, 1))

    def model(self, name, split, beta=None) -> TrainedModel:
        cfg = self.config(name, split, beta)
        key = json.dumps(cfg.to_dict(), sort_keys=True)
        if key not in self.models:
            self.models[key] = train(self.g, self.x, self.y, self.splits[split], cfg)
            log.info("trained %s split %d (val %.3f)", cfg.name, split, self.models[key].val_acc)
        return self.models[key]

    def suite(self, victims, split, budgets, mode, masking_rate=None):
        plan = self.plan
        surrogate = self.model(plan.surrogate, split) if mode == "transfer" else None
        runs = run_attack_suite(victims, surrogate, self.g, self.x, self.y, self.targets[split], budgets, mode,
                                base=plan.attack_config(masking_rate), master_seed=plan.master_seed,
                                split=split, cache=self.run_cache, jobs=plan.jobs)
        self.runs.extend(runs)
        return runs


def _accuracy(runs, victim_name, budget):
    hits = [r.evaluations[victim_name] for r in runs
            if r.config.budget_rate == budget and victim_name in r.evaluations]
    return 100.0 * float(np.mean(hits))


def run_table(exp: Experiment, victims=None) -> ResultTable:
    """Clean and robust target accuracy for every victim, budget and mode."""
    plan = exp.plan
    names = list(victims or plan.victims)
    table = ResultTable(plan.dataset, plan.num_splits)
    for s, split in enumerate(exp.splits):
        models = [exp.model(v, s) for v in names]
        for m in models:
            table.clean_total.setdefault(m.name, []).append(evaluate(m, exp.g, exp.x, exp.y, split.test))
            table.clean_target.setdefault(m.name, []).append(evaluate(m, exp.g, exp.x, exp.y, exp.targets[s]))
        for mode in plan.modes:
            runs = exp.suite(models, s, plan.budgets, mode)
            for m in models:
                for b in plan.budgets:
                    if b > 0:
                        table.add(m.name, b, mode, _accuracy(runs, m.name, b))
    table.check()
    return table


def beta_sweep(exp: Experiment, betas=None, budgets=None, modes=None, name="bbrw-gcn") -> list:
    """Robust accuracy of a BBRW model for each beta, budget and mode."""
    plan = exp.plan
    betas = plan.beta_grid if betas is None else betas
    budgets = plan.budgets if budgets is None else budgets
    modes = plan.modes if modes is None else modes
    rows = []
    for beta in betas:
        per = {}
        for s, split in enumerate(exp.splits):
            m = exp.model(name, s, beta=beta)
            per.setdefault(("clean_total", 0.0, "clean"), []).append(evaluate(m, exp.g, exp.x, exp.y, split.test))
            for mode in modes:
                runs = exp.suite([m], s, budgets, mode)
                for b in budgets:
                    per.setdefault(("target", b, mode), []).append(_accuracy(runs, m.name, b))
        for (metric, b, mode), vals in per.items():
            mean, std = aggregate(vals)
            rows.append({"beta": float(beta), "metric": metric, "budget": float(b), "mode": mode,
                         "mean": mean, "std": std, "values": vals})
    return rows


def masking_sweep(exp: Experiment, rates=None, budget=None, backbone="gcn", betas=None) -> list:
    """Adaptive robust accuracy across masking rates for a backbone and its BBRW variant."""
    plan = exp.plan
    rates = plan.masking_grid if rates is None else rates
    budget = plan.mask_budget if budget is None else budget
    betas = plan.mask_betas if betas is None else betas
    bbrw = f"bbrw-{backbone}"
    rows = []
    for rate in rates:
        def acc(name, beta=None):
            vals = []
            for s in range(len(exp.splits)):
                m = exp.model(name, s, beta=beta)
                runs = exp.suite([m], s, (budget,), "adaptive", masking_rate=rate)
                vals.append(_accuracy(runs, m.name, budget))
            return vals

        vals = acc(backbone)
        mean, std = aggregate(vals)
        rows.append({"model": model_config(backbone).name, "beta": "", "rate": float(rate), "budget": budget,
                     "mean": mean, "std": std, "values": vals, "best": False})
        scored = []
        for beta in betas:
            vals = acc(bbrw, beta)
            mean, std = aggregate(vals)
            scored.append({"model": model_config(bbrw).name, "beta": float(beta), "rate": float(rate),
                           "budget": budget, "mean": mean, "std": std, "values": vals, "best": False})
        # ties go to the first beta in grid order
        best = max(range(len(scored)), key=lambda i: (scored[i]["mean"], -i))
        scored[best]["best"] = True
        rows.extend(scored)
    return rows


def adversary_stats(runs, exclude_zero=True) -> list:
    """Share of flips in each category per (attacked model, mode, budget)."""
    groups = {}
    seen = set()
    for r in runs:
        key = (r.attacked, r.config.mode, float(r.config.budget_rate), float(r.config.masking_rate))
        ident = key + (r.split, int(r.config.target))
        if ident in seen:
            continue
        seen.add(ident)
        g = groups.setdefault(key, {"runs": 0, "budget": 0, **{c: 0 for c in CATEGORIES}})
        g["runs"] += 1
        g["budget"] += int(r.budget)
        for c in r.categories:
            g[c] += 1
    rows = []
    for (attacked, mode, b, rate), g in sorted(groups.items()):
        total = sum(g[c] for c in CATEGORIES)
        if exclude_zero and b == 0:
            continue
        row = {"attacked": attacked, "mode": mode, "budget": b, "masking_rate": rate, "runs": g["runs"],
               "flips": total, "budget_flips": g["budget"]}
        for c in CATEGORIES:
            row[c] = g[c] / total if total else 0.0
        rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def write_results(out_dir, plan: ExperimentPlan, table=None, beta_rows=None, mask_rows=None, stats=None, runs=None):
    """Write every available artefact under ``out_dir``; returns the paths written."""
    from .report import render_report

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if table is not None:
        _write_csv(out / "table.csv", table.records(),
                   ["source", "model", "metric", "budget", "mode", "mean", "std", "n"])
        (out / "table.json").write_text(json.dumps(table.to_json(), indent=1, sort_keys=True))
        written += [out / "table.csv", out / "table.json"]
    if beta_rows is not None:
        _write_csv(out / "sweep_beta.csv", beta_rows, ["beta", "metric", "budget", "mode", "mean", "std"])
        written.append(out / "sweep_beta.csv")
    if mask_rows is not None:
        _write_csv(out / "sweep_mask.csv", mask_rows, ["model", "beta", "rate", "budget", "mean", "std", "best"])
        written.append(out / "sweep_mask.csv")
    if stats is not None:
        _write_csv(out / "adversary_stats.csv", stats,
                   ["attacked", "mode", "budget", "masking_rate", "runs", "flips", "budget_flips", *CATEGORIES])
        written.append(out / "adversary_stats.csv")
    if runs is not None:
        with open(out / "runs.jsonl", "w") as fh:
            for r in sorted(runs, key=_run_order):
                fh.write(r.dumps() + "\n")
        written.append(out / "runs.jsonl")
    (out / "report.html").write_text(render_report(plan, table, beta_rows, mask_rows, stats))
    written.append(out / "report.html")
    return written


def _run_order(r):
    return (r.config.mode, r.attacked, r.split if r.split is not None else -1, float(r.config.masking_rate),
            float(r.config.budget_rate), int(r.config.target))
