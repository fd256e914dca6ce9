"""Restricted directed graph attack (RDGA) via projected gradient descent.

The attacker flips ordered node pairs ``(i, j)``. Flips whose source is the
target node are (partly) forbidden by a mask. A continuous relaxation
``p in [0, 1]`` of the flips is optimised by masked gradient steps, each
followed by projection onto ``{0 <= p <= 1, sum(p) <= budget}``; discrete
flips are then drawn from ``Bernoulli(p)`` and the feasible draw with the
lowest attack loss is kept.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import Tape
from .graph import DirectedGraph, apply_perturbation
from .models import TrainedModel, forward, predict
from .perturbation import CandidateSet, Perturbation, budget_for, build_mask
from .propagation import FixedOperator, PatchPlan

log = logging.getLogger(__name__)

__all__ = [
    "AttackConfig",
    "AttackRun",
    "AttackError",
    "CATEGORIES",
    "project_box_budget",
    "pgd_attack",
    "attack_loss_value",
    "classify_flips",
    "verify_run",
    "evaluate_flips",
    "run_attack_suite",
    "derive_seed",
    "build_mask",
    "budget_for",
]

CATEGORIES = ("DirectTarget", "IndirectNeighborOutLink", "Other")
LOSS_KINDS = ("margin", "neg-cross-entropy")
MODES = ("transfer", "adaptive")


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    target: int
    budget_rate: float = 0.5
    eta: float | None = None
    T: int = 200
    K: int = 100
    masking_rate: float = 1.0
    loss_kind: str = "margin"
    mode: str = "adaptive"
    seed: int = 0
    candidate_policy: str = "all"
    hops: int = 2

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.candidate_policy not in ("all", "local"):
            raise ValueError("candidate_policy must be 'all' or 'local'")
        if not 0.0 <= self.masking_rate <= 1.0:
            raise ValueError("masking_rate must be in [0, 1]")

    def step_size(self, budget) -> float:
        return self.eta if self.eta is not None else 0.1 * budget / math.sqrt(self.T)


@dataclass
class AttackRun:
    config: AttackConfig
    attacked: str
    budget: int
    flips: np.ndarray
    categories: list = field(default_factory=list)
    clean_loss: float = float("nan")
    final_loss: float = float("nan")
    loss_trajectory: list = field(default_factory=list, repr=False)
    success: bool | None = None
    evaluations: dict = field(default_factory=dict)
    split: int | None = None

    @property
    def target(self) -> int:
        return self.config.target

    def category_counts(self) -> dict:
        counts = {c: 0 for c in CATEGORIES}
        for c in self.categories:
            counts[c] += 1
        return counts

    def to_json(self) -> dict:
        return {
            "target": int(self.config.target),
            "split": self.split,
            "budget": float(self.config.budget_rate),
            "budget_flips": int(self.budget),
            "mode": self.config.mode,
            "masking_rate": float(self.config.masking_rate),
            "attacked": self.attacked,
            "flips": [[int(i), int(j)] for i, j in self.flips],
            "categories": list(self.categories),
            "losses": {"clean": float(self.clean_loss), "final": float(self.final_loss)},
            "success": None if self.success is None else bool(self.success),
            "evaluations": {k: bool(v) for k, v in sorted(self.evaluations.items())},
            "config": asdict(self.config),
        }

    @classmethod
    def from_json(cls, d) -> "AttackRun":
        cfg = AttackConfig(**d["config"])
        flips = np.array(d["flips"], dtype=np.int64).reshape(-1, 2)
        return cls(cfg, d["attacked"], d["budget_flips"], flips, list(d["categories"]),
                   d["losses"]["clean"], d["losses"]["final"], [], d["success"],
                   dict(d.get("evaluations", {})), d.get("split"))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def derive_seed(*parts) -> int:
    """Deterministic 32-bit seed from integers / floats (floats rounded to 1e-6)."""
    ints = [int(round(p * 1_000_000)) if isinstance(p, float) else int(p) for p in parts]
    return int(np.random.SeedSequence([abs(i) for i in ints]).generate_state(1)[0])


def project_box_budget(p, budget, tol=1e-9, max_iter=100):
    """Euclidean projection onto ``{0 <= q <= 1, sum(q) <= budget}``.

    If plain clipping already satisfies the budget it is returned unchanged;
    otherwise the shift ``mu`` in ``clip(p - mu, 0, 1)`` is found by bisection.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.clip(p, 0.0, 1.0)
    if q.sum() <= budget:
        return q
    # entries <= 0 stay at 0 for any shift mu >= 0
    pos = p[p > 0]
    lo, hi = 0.0, float(pos.max())
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s = np.clip(pos - mid, 0.0, 1.0).sum()
        if s > budget:
            lo = mid
        else:
            hi = mid
            if budget - s <= tol:
                break
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return np.clip(p - hi, 0.0, 1.0)


def _loss_node(tape, logits, row, label, kind):
    if kind == "margin":
        return tape.margin_loss(logits, row, label)
    # minimising -CE pushes the true-class probability down
    return tape.scale(tape.cross_entropy(logits, [row], [label]), -1.0)


def attack_loss_value(logits_row, label, kind="margin") -> float:
    z = np.asarray(logits_row, dtype=np.float64).ravel()
    if kind == "margin":
        others = z.copy()
        others[label] = -np.inf
        return float(z[label] - others.max())
    z = z - z.max()
    return float(z[label] - np.log(np.exp(z).sum()))


class _Victim:
    """Frozen model bound to a graph/candidate layout for fast repeated passes."""

    def __init__(self, model: TrainedModel, g, x, cand, mask_top, mask_left):
        self.model = model
        self.plan = PatchPlan(g, model.config.propagation, cand, mask_top, mask_left)
        self.x = x[cand.perm]
        self.pos = cand.target_pos()
        self.cache = {}

    def loss(self, top, left, label, kind, grad=False):
        tape = Tape()
        pt = tape.leaf(top, grad)
        pl = tape.leaf(left, grad)
        op = self.plan.build(tape, pt, pl if self.plan.n > self.plan.k else None)
        params = {k: tape.const(v) for k, v in self.model.params.items()}
        logits = forward(tape, params, self.model.config, op, self.x, rows=[self.pos], cache=self.cache)
        loss = _loss_node(tape, logits, 0, label, kind)
        if grad:
            tape.backward(loss)
            return loss.value[0, 0], pt.grad, pl.grad
        return loss.value[0, 0], logits.value[0]


def pgd_attack(model: TrainedModel, g: DirectedGraph, x, y, config: AttackConfig,
               candidates: CandidateSet | None = None, name=None) -> AttackRun:
    """Attack ``config.target`` on ``model`` (surrogate or victim; weights frozen)."""
    t = int(config.target)
    label = int(y[t])
    budget = budget_for(g, t, config.budget_rate)
    if budget == 0:
        raise ValueError("budget is 0: nothing to optimise (budget_rate must be > 0)")
    if candidates is None:
        candidates = (CandidateSet.all_pairs(g.n, t) if config.candidate_policy == "all"
                      else CandidateSet.local(g, t, config.hops))
    mask_top, mask_left = build_mask(g, t, config.masking_rate, derive_seed(config.seed, 7), candidates)
    pert = Perturbation(candidates, mask_top, mask_left, budget)
    free_pairs = pert.free_pairs()
    run = AttackRun(config, name or model.config.label, budget, np.zeros((0, 2), dtype=np.int64))

    if not model.uses_graph or pert.num_free == 0:
        # graph-independent model (or nothing to flip): any perturbation is a no-op
        logits = predict(model, model.operator(g), x, rows=[t])[0]
        run.clean_loss = run.final_loss = attack_loss_value(logits, label, config.loss_kind)
        run.success = bool(logits.argmax() != label)
        return run

    victim = _Victim(model, g, x, candidates, mask_top, mask_left)
    eta = config.step_size(budget)
    p = np.zeros(pert.num_free)
    traj = []
    for it in range(config.T):
        pert.set_free(p)
        loss, g_top, g_left = victim.loss(pert.top, pert.left, label, config.loss_kind, grad=True)
        grad = pert.free_gradient(g_top, g_left)
        if not np.all(np.isfinite(grad)):
            raise AttackError(f"non-finite gradient at iteration {it} (target {t}, loss {loss})")
        if it == 0:
            run.clean_loss = float(loss)
        traj.append(float(loss))
        p = project_box_budget(p - eta * grad, budget)
    run.loss_trajectory = traj

    # uniforms are drawn over the whole candidate layout so runs that differ
    # only in the mask share random numbers
    rng = np.random.default_rng(derive_seed(config.seed, 11))
    where = pert.layout_positions()
    cache = {}
    best_idx, best_loss = None, np.inf
    for _ in range(config.K):
        draw = np.flatnonzero(rng.random(candidates.size)[where] < p)
        if draw.size > budget:
            continue
        key = draw.tobytes()
        if key not in cache:
            cache[key] = _discrete_loss(victim, pert, draw, label, config.loss_kind)
        if cache[key] < best_loss:
            best_idx, best_loss = draw, cache[key]
    if best_idx is None:
        order = np.argsort(-p, kind="stable")[:budget]
        best_idx = np.sort(order[p[order] > 0])
        best_loss = _discrete_loss(victim, pert, best_idx, label, config.loss_kind)
    run.flips = free_pairs[best_idx].reshape(-1, 2)
    run.final_loss = float(best_loss)
    run.categories = classify_flips(run.flips, g, t)
    correct = evaluate_flips(model, g, x, y, t, run.flips)
    run.success = not correct
    return run


def _discrete_loss(victim, pert, idx, label, kind):
    v = np.zeros(pert.num_free)
    v[idx] = 1.0
    top, left = pert.blocks_for(v)
    return float(victim.loss(top, left, label, kind)[0])


def verify_run(run: AttackRun, g: DirectedGraph, candidates: CandidateSet | None = None) -> list:
    """Constraint violations of a finished run (empty list when it is valid)."""
    cfg = run.config
    t = int(cfg.target)
    flips = np.asarray(run.flips, dtype=np.int64).reshape(-1, 2)
    problems = []
    budget = budget_for(g, t, cfg.budget_rate)
    if len(flips) > budget:
        problems.append(f"{len(flips)} flips exceed budget {budget}")
    if len(flips) and np.any(flips[:, 0] == flips[:, 1]):
        problems.append("self-loop flip")
    if len(np.unique(flips, axis=0)) != len(flips):
        problems.append("duplicate flips")
    if cfg.masking_rate >= 1.0 and len(flips) and np.any(flips[:, 0] == t):
        problems.append("flip sourced at the target under a full mask")
    if len(flips) and budget:
        if candidates is None:
            candidates = (CandidateSet.all_pairs(g.n, t) if cfg.candidate_policy == "all"
                          else CandidateSet.local(g, t, cfg.hops))
        mask_top, mask_left = build_mask(g, t, cfg.masking_rate, derive_seed(cfg.seed, 7), candidates)
        free = Perturbation(candidates, mask_top, mask_left, budget).is_free(flips)
        bad = [(int(i), int(j)) for (i, j), ok in zip(flips, free) if not ok]
        if bad:
            problems.append(f"flips outside the unmasked candidate set: {bad[:5]}")
    return problems


def classify_flips(flips, g_clean: DirectedGraph, t) -> list:
    """Category of every flip relative to target ``t`` in the clean graph."""
    if isinstance(flips, AttackRun):
        flips = flips.flips
    out_nb = set(int(v) for v in g_clean.out_neighbors(t))
    cats = []
    for i, j in np.asarray(flips, dtype=np.int64).reshape(-1, 2):
        if i == t or j == t:
            cats.append("DirectTarget")
        elif int(i) in out_nb:
            cats.append("IndirectNeighborOutLink")
        else:
            cats.append("Other")
    return cats


def category_counts(flips, g_clean, t) -> dict:
    counts = {c: 0 for c in CATEGORIES}
    for c in classify_flips(flips, g_clean, t):
        counts[c] += 1
    return counts


def evaluate_flips(model: TrainedModel, g, x, y, t, flips) -> bool:
    """True if ``model`` classifies ``t`` correctly on ``g`` with ``flips`` applied."""
    op = None
    if model.uses_graph:
        gp = apply_perturbation(g, flips) if len(flips) else g
        op = FixedOperator.from_graph(gp, model.config.propagation)
    logits = predict(model, op, x, rows=[t])[0]
    return bool(logits.argmax() == y[t])


def run_attack_suite(victims, surrogate, g, x, y, targets, budgets, mode, base: AttackConfig | None = None,
                     master_seed=0, split=None, cache=None, jobs=1):
    """One :class:`AttackRun` per (target, budget) and attacked model.

    ``transfer`` attacks ``surrogate`` once per (target, budget) and evaluates
    every victim on the result. ``adaptive`` attacks each victim separately.
    Each run's ``evaluations`` maps victim names to "still correct". Runs are
    memoised in ``cache`` (keyed by attacked model, split, target, budget and
    masking rate) when one is given. Every run is checked with
    :func:`verify_run` and a violation raises :class:`AttackError`.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    for v in victims:
        if not isinstance(v, TrainedModel):
            raise TypeError(
                f"victim {getattr(v, 'name', v)!r} has no differentiable propagation path; "
                "it can only appear as a reference row")
    if mode == "transfer" and surrogate is None:
        raise ValueError("transfer mode needs a surrogate model")
    base = base or AttackConfig(target=0)
    attacked = [surrogate] if mode == "transfer" else list(victims)
    cache = {} if cache is None else cache
    todo = []
    for model in attacked:
        for t in targets:
            for b in budgets:
                cfg = _cfg(base, t, b, mode, master_seed)
                key = _run_key(model, split, cfg)
                if key not in cache:
                    todo.append((key, model, cfg))
    for key, run in zip([k for k, _, _ in todo],
                        _map(_attack_one, [(m, g, x, y, c) for _, m, c in todo], jobs)):
        problems = verify_run(run, g)
        if problems:
            raise AttackError(f"target {run.target}: " + "; ".join(problems))
        run.split = split
        cache[key] = run

    runs = []
    for model in attacked:
        evaluated = victims if mode == "transfer" else [model]
        for t in targets:
            for b in budgets:
                src = cache[_run_key(model, split, _cfg(base, t, b, mode, master_seed))]
                run = AttackRun(replace(src.config, mode=mode), src.attacked, src.budget, src.flips, src.categories,
                                src.clean_loss, src.final_loss, src.loss_trajectory, src.success,
                                {}, split)
                for v in evaluated:
                    run.evaluations[v.name] = evaluate_flips(v, g, x, y, int(t), run.flips)
                runs.append(run)
    return runs


def model_key(model: TrainedModel) -> str:
    return json.dumps(model.config.to_dict(), sort_keys=True)


def _run_key(model, split, cfg):
    # the mode only matters through which model is attacked
    return (model_key(model), split, int(cfg.target), float(cfg.budget_rate), float(cfg.masking_rate))


def _attack_one(args):
    model, g, x, y, cfg = args
    if budget_for(g, cfg.target, cfg.budget_rate) == 0:
        return AttackRun(cfg, model.config.label, 0, np.zeros((0, 2), dtype=np.int64))
    return pgd_attack(model, g, x, y, cfg)


def _map(fn, items, jobs=1):
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _cfg(base, t, budget_rate, mode, master_seed):
    d = asdict(base)
    d.update(target=int(t), budget_rate=float(budget_rate), mode=mode,
             seed=derive_seed(master_seed, int(t), float(budget_rate)))
    return AttackConfig(**d)
