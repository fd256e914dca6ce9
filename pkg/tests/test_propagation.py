import time

import numpy as np
import pytest
import scipy.sparse as sp

from drlab.autodiff import Tape
from drlab.graph import DirectedGraph, symmetrize
from drlab.perturbation import CandidateSet, Perturbation, build_mask
from drlab.propagation import PatchPlan, PropagationSpec, build_differentiable_operator, build_operator

from conftest import random_digraph

WALKS = [PropagationSpec("rw_out"), PropagationSpec("rw_in"), PropagationSpec("bbrw", 0.3),
         PropagationSpec("bbrw", 0.7)]


def dense_reference(a, spec, p=None):
    """Operator from a dense (possibly fractional) adjacency; independent of the library."""
    a = np.asarray(a, dtype=float)
    if p is not None:
        a = a + (1.0 - 2.0 * a) * p
    n = a.shape[0]
    if spec.kind == "sym":
        w = a + a.T - a * a.T
    else:
        b = {"rw_out": 1.0, "rw_in": 0.0}.get(spec.kind, spec.beta)
        w = b * a + (1 - b) * a.T
    if spec.add_self_loops:
        w = w + np.eye(n)
    d = w.sum(axis=1)
    if spec.kind == "sym":
        s = np.where(d > 0, d, 1.0) ** -0.5
        return s[:, None] * w * s[None, :]
    return w / np.where(d > 0, d, 1.0)[:, None]


def operator_properties(g):
    """Every structural property of the fixed operators on one graph."""
    for spec in WALKS:
        s = build_operator(g, spec)
        assert np.max(np.abs(np.asarray(s.sum(axis=1)).ravel() - 1.0)) <= 1e-12
        assert s.min() >= 0
    d = lambda s: build_operator(g, s).toarray()
    assert np.array_equal(d(PropagationSpec("bbrw", 1.0)), d(PropagationSpec("rw_out")))
    assert np.array_equal(d(PropagationSpec("bbrw", 0.0)), d(PropagationSpec("rw_in")))
    sym = d(PropagationSpec("sym"))
    assert np.max(np.abs(sym - sym.T)) <= 1e-12
    gs = symmetrize(g)
    ref = build_operator(gs, PropagationSpec("bbrw", 0.5)).toarray()
    for b in (0.0, 0.2, 0.9, 1.0):
        assert np.max(np.abs(build_operator(gs, PropagationSpec("bbrw", b)).toarray() - ref)) <= 1e-12


def test_operator_property_suite_over_random_digraphs():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(120):
        operator_properties(random_digraph(rng, int(rng.integers(2, 51))))
    assert time.perf_counter() - start < 10.0


def test_isolated_nodes_without_self_loops_give_zero_rows():
    g = DirectedGraph.from_edges(4, [0], [1])
    s = build_operator(g, PropagationSpec("rw_out", add_self_loops=False)).toarray()
    assert np.array_equal(s[2], np.zeros(4)) and s[0, 1] == 1.0
    # node 1 has no out-links: with RWout and no self-loop it aggregates nothing
    assert np.array_equal(s[1], np.zeros(4))


@pytest.mark.parametrize("spec", [PropagationSpec("sym"), PropagationSpec("rw_out"), PropagationSpec("rw_in"),
                                  PropagationSpec("bbrw", 0.6),
                                  PropagationSpec("bbrw", 0.6, add_self_loops=False)])
def test_fixed_operator_matches_dense_reference(spec):
    rng = np.random.default_rng(1)
    g = random_digraph(rng, 15)
    assert np.allclose(build_operator(g, spec).toarray(), dense_reference(g.dense(), spec), atol=1e-14)


@pytest.mark.parametrize("policy", ["all", "local"])
@pytest.mark.parametrize("spec", [PropagationSpec("sym"), PropagationSpec("rw_out"), PropagationSpec("rw_in"),
                                  PropagationSpec("bbrw", 0.7)])
def test_patched_operator_matches_dense_reference(spec, policy):
    rng = np.random.default_rng(7)
    g = random_digraph(rng, 18, p=0.1)
    t = 3
    cand = CandidateSet.all_pairs(g.n, t) if policy == "all" else CandidateSet.local(g, t, hops=1)
    mt, ml = build_mask(g, t, 0.5, seed=1, candidates=cand)
    pert = Perturbation(cand, mt, ml, budget=5)
    pert.set_free(rng.uniform(0, 1, pert.num_free))
    tape = Tape()
    op = build_differentiable_operator(g, spec, pert, tape)
    got = op.matrix_original_order().value
    dense_p = np.zeros((g.n, g.n))
    vals = pert.free_values()
    for (i, j), v in zip(pert.free_pairs(), vals):
        dense_p[i, j] = v
    assert np.allclose(got, dense_reference(g.dense(), spec, dense_p), atol=1e-13)


def test_patched_operator_at_zero_is_clean_and_apply_agrees_with_matrix():
    rng = np.random.default_rng(3)
    g = random_digraph(rng, 16, p=0.15)
    spec = PropagationSpec("bbrw", 0.4)
    cand = CandidateSet.local(g, 0)
    plan = PatchPlan(g, spec, cand, cand.top_valid.astype(float), cand.left_valid.astype(float))
    tape = Tape()
    top, left = plan.leaves(tape)
    op = plan.build(tape, top, left if plan.n > plan.k else None)
    m = op.matrix().value
    clean = build_operator(g, spec).toarray()[np.ix_(cand.perm, cand.perm)]
    assert np.allclose(m, clean, atol=1e-14)
    y = rng.normal(size=(g.n, 3))
    assert np.allclose(op.apply(tape.const(y)).value, m @ y, atol=1e-13)
    rows = [0, 2]
    assert np.allclose(op.apply(tape.const(y), rows=rows).value, (m @ y)[rows], atol=1e-13)


def test_binary_flip_through_patch_equals_rebuilt_graph():
    from drlab.graph import apply_perturbation

    rng = np.random.default_rng(9)
    g = random_digraph(rng, 12, p=0.2)
    t = 5
    cand = CandidateSet.all_pairs(g.n, t)
    mt, ml = build_mask(g, t, 1.0, 0, cand)
    pert = Perturbation(cand, mt, ml, budget=3)
    pairs = pert.free_pairs()
    pick = rng.choice(len(pairs), 3, replace=False)
    v = np.zeros(pert.num_free)
    v[pick] = 1.0
    pert.set_free(v)
    for spec in (PropagationSpec("sym"), PropagationSpec("bbrw", 0.7)):
        got = build_differentiable_operator(g, spec, pert, Tape()).matrix_original_order().value
        want = build_operator(apply_perturbation(g, pairs[pick]), spec).toarray()
        assert np.allclose(got, want, atol=1e-13)


def test_spec_validation_and_labels():
    with pytest.raises(ValueError):
        PropagationSpec("bbrw", 1.5)
    with pytest.raises(ValueError):
        PropagationSpec("magnetic")
    assert PropagationSpec("bbrw", 0.7).label == "BBRW(beta=0.7)"
    spec = PropagationSpec("rw_in", add_self_loops=False)
    assert PropagationSpec.from_dict(spec.to_dict()) == spec


def test_operator_is_csr_sorted():
    g = random_digraph(np.random.default_rng(0), 10)
    s = build_operator(g, PropagationSpec("sym"))
    assert sp.isspmatrix_csr(s) and s.has_sorted_indices
