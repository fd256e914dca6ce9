# %% [markdown]
# # One target, three victims
#
# Train GCN, GCN-RWout and BBRW-GCN on a synthetic directed SBM, pick a test
# node all three classify correctly and attack it with restricted flips: no
# edge may start at the target itself. The flip categories show where each
# attacker spends its budget.
#
# Usage: python demos/02_single_attack.py

# %%
import numpy as np

from drlab.attack import AttackConfig, classify_flips, evaluate_flips, pgd_attack
from drlab.datasets import directed_sbm
from drlab.harness import make_splits, model_config
from drlab.models import ModelConfig, predict, train
from drlab.propagation import FixedOperator

g, x, y = directed_sbm(n=400, seed=0)
split = make_splits(g.n, 1, seed=0)[0]
models = {name: train(g, x, y, split, model_config(name, base=ModelConfig("gcn", max_epochs=400, patience=50)))
          for name in ("gcn", "gcn-rwout", "bbrw-gcn")}


def correct(model, graph, t):
    op = FixedOperator.from_graph(graph, model.config.propagation)
    return int(np.argmax(predict(model, op, x, rows=[t])[0])) == y[t]


t = next(int(t) for t in split.test if g.d_in[t] >= 3 and all(correct(m, g, t) for m in models.values()))
print(f"target {t}: class {y[t]}, {g.d_out[t]} out-links, {g.d_in[t]} in-links")

# %% [markdown]
# ## Adaptive attacks
# The attacker differentiates through each victim. A GCN treats every edge
# as undirected, so adding in-links to the target is as good as rewiring
# it. GCN-RWout only reads out-links, which the attacker cannot touch at the
# target, so it works one hop away instead.

# %%
for budget in (0.5, 1.0):
    print(f"\nbudget {100 * budget:.0f}% of the target's degree")
    for name, model in models.items():
        cfg = AttackConfig(t, budget_rate=budget, seed=1, candidate_policy="local")
        run = pgd_attack(model, g, x, y, cfg)
        cats = classify_flips(run.flips, g, t)
        fooled = not evaluate_flips(model, g, x, y, t, run.flips)
        print(f"  {model.config.name:<22} {len(run.flips)} flips, loss {run.clean_loss:+.2f} -> "
              f"{run.final_loss:+.2f}, fooled={fooled}, "
              f"direct {cats.count('DirectTarget')}, neighbour out-links {cats.count('IndirectNeighborOutLink')}")

# %% [markdown]
# ## Transfer from a GCN surrogate
# Flips found against the GCN are replayed on the others. They nearly all
# land on the target's in-links, which GCN-RWout never reads.

# %%
cfg = AttackConfig(t, budget_rate=1.0, seed=1, candidate_policy="local")
run = pgd_attack(models["gcn"], g, x, y, cfg)
flips = [tuple(int(v) for v in f) for f in run.flips]
print(f"\nsurrogate flips: {flips}")
for name, model in models.items():
    print(f"  {model.config.name:<22} still correct: {evaluate_flips(model, g, x, y, t, run.flips)}")
