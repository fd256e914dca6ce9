# %% [markdown]
# # Propagation operators and reverse-mode gradients
#
# A five-node directed graph, the four propagation operators built from it,
# and a check that the tape's gradient of a GCN attack loss with respect to
# a relaxed edge flip agrees with a finite difference.
#
# Usage: python demos/01_operators_and_gradients.py

# %%
import numpy as np

from drlab.attack import attack_loss_value
from drlab.graph import DataSplit, DirectedGraph, apply_perturbation
from drlab.autodiff import Tape
from drlab.models import ModelConfig, forward, predict, train
from drlab.perturbation import CandidateSet, Perturbation, build_mask
from drlab.propagation import FixedOperator, PropagationSpec, build_differentiable_operator, build_operator

np.set_printoptions(precision=3, suppress=True)

# %% [markdown]
# Edges point from citing to cited node. Node 0 cites 1 and 2, node 3 cites
# 0, and 1 and 4 cite each other.

# %%
g = DirectedGraph.from_edges(5, [0, 0, 3, 1, 4], [1, 2, 0, 4, 1])
print("out-degrees", g.d_out, "in-degrees", g.d_in)

# %% [markdown]
# RW_out averages over the nodes a node points to, RW_in over the nodes
# pointing at it. BBRW mixes the two with weight beta on out-links, and both
# endpoints reduce to the plain random walks.

# %%
for spec in (PropagationSpec("sym"), PropagationSpec("rw_out"), PropagationSpec("rw_in"),
             PropagationSpec("bbrw", 0.7)):
    a = build_operator(g, spec).toarray()
    label = f"bbrw beta={spec.beta}" if spec.kind == "bbrw" else spec.kind
    print(f"\n{label}: row sums {a.sum(axis=1)}")
    print(a)

for beta, other in ((1.0, "rw_out"), (0.0, "rw_in")):
    diff = abs(build_operator(g, PropagationSpec("bbrw", beta)) - build_operator(g, PropagationSpec(other))).max()
    print(f"BBRW beta={beta:g} vs {other}: max difference {diff:.1e}")

# %% [markdown]
# ## Gradient of the attack loss
# Train a tiny GCN, relax every candidate flip around target 0 to a
# continuous value and compare one gradient entry with a central difference
# of the loss on the rebuilt graph.

# %%
rng = np.random.default_rng(0)
x = rng.normal(size=(5, 3))
y = np.array([0, 1, 1, 0, 1])
x[:, 0] += 2 * y
split = DataSplit(np.array([0, 1, 2]), np.array([3]), np.array([4]))
model = train(g, x, y, split, ModelConfig("gcn", hidden_dim=4, dropout=0.0, max_epochs=200, seed=0))

# The differentiable operator lives in the candidate layout, so features
# and the target row are permuted to match.

t = 0
cand = CandidateSet.all_pairs(g.n, t)
mt, ml = build_mask(g, t, 1.0, 0, cand)
pert = Perturbation(cand, mt, ml, budget=2)
xp, row = x[cand.perm], cand.target_pos()


def relaxed_loss(values, want_grad=False):
    pert.set_free(values)
    tape = Tape()
    op = build_differentiable_operator(g, model.config.propagation, pert, tape)
    params = {k: tape.const(v) for k, v in model.params.items()}
    loss = tape.margin_loss(forward(tape, params, model.config, op, xp, rows=[row]), 0, int(y[t]))
    if not want_grad:
        return loss.value[0, 0]
    tape.backward(loss)
    # with every node a candidate there is no left block
    g_left = np.zeros(pert.left.shape) if op.p_left is None else op.p_left.grad
    return loss.value[0, 0], pert.free_gradient(op.p_top.grad, g_left)


p = np.full(pert.num_free, 0.3)
loss, grad = relaxed_loss(p, want_grad=True)
print(f"\nloss at p=0.3: {loss:.4f}; first free gradients: {grad[:4]}")

i = int(np.argmax(abs(grad)))
pair = tuple(int(v) for v in pert.free_pairs()[i])
eps = 1e-6
e = np.zeros_like(p)
e[i] = eps
fd = (relaxed_loss(p + e) - relaxed_loss(p - e)) / (2 * eps)
print(f"steepest entry {pair}: finite difference {fd:.6f} vs tape {grad[i]:.6f}")

# %% [markdown]
# At a binary point the relaxed loss equals the loss on the edited graph.

# %%
one = np.zeros_like(p)
one[i] = 1.0
flip = [pair]
rebuilt = FixedOperator.from_graph(apply_perturbation(g, flip), model.config.propagation)
direct = attack_loss_value(predict(model, rebuilt, x, rows=[t])[0], y[t], "margin")
print(f"flip {flip[0]}: relaxed loss {relaxed_loss(one):.6f}, rebuilt graph {direct:.6f}")
