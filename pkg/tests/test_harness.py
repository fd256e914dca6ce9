import json

import numpy as np
import pytest

from drlab.datasets import directed_sbm
from drlab.graph import DirectedGraph
from drlab.harness import (Experiment, ExperimentPlan, ResultTable, adversary_stats, aggregate, beta_sweep,
                           evaluate, make_splits, masking_sweep, run_table, sample_targets, write_results)
from drlab.models import ModelConfig, TrainedModel, init_params


def tiny_plan(**kw):
    d = dict(name="tiny", dataset="sbm", num_splits=2, targets_per_split=3, budgets=(0.0, 0.5, 1.0),
             victims=("mlp", "gcn", "gcn-rwout", "bbrw-gcn"), T=8, K=6, tune=False, max_epochs=30, patience=10)
    d.update(kw)
    return ExperimentPlan(**d)


@pytest.fixture(scope="module")
def data():
    return directed_sbm(n=80, seed=3)


@pytest.fixture(scope="module")
def table_run(data):
    exp = Experiment(tiny_plan(), *data)
    return exp, run_table(exp)


def test_split_sizes_and_reproducibility():
    s = make_splits(100, 3, seed=5)
    assert [(len(x.train), len(x.val), len(x.test)) for x in s] == [(10, 10, 80)] * 3
    again = make_splits(100, 3, seed=5)
    assert all(np.array_equal(a.test, b.test) for a, b in zip(s, again))
    assert not np.array_equal(s[0].test, s[1].test)
    assert not np.array_equal(s[0].test, make_splits(100, 1, seed=6)[0].test)


def test_targets_are_test_nodes():
    split = make_splits(200, 1, seed=0)[0]
    t = sample_targets(split, 20, seed=0)
    assert len(t) == 20 and len(set(t)) == 20 and set(t) <= set(split.test)
    assert np.array_equal(t, sample_targets(split, 20, seed=0))


def test_evaluate_examples():
    cfg = ModelConfig("mlp", hidden_dim=2)
    params = init_params(2, 2, cfg, np.random.default_rng(0))
    params = {k: np.zeros_like(v) for k, v in params.items()}
    params["b2"] = np.array([[0.0, 1.0]])
    m = TrainedModel(cfg, params)
    g = DirectedGraph.from_edges(3, [], [])
    assert evaluate(m, g, np.ones((3, 2)), np.array([1, 1, 1]), [0, 1, 2]) == 100.0
    assert evaluate(m, g, np.ones((3, 2)), np.array([1, 0, 1]), [0, 1]) == 50.0
    with pytest.raises(ValueError, match="empty"):
        evaluate(m, g, np.ones((3, 2)), np.array([1, 1, 1]), [])


def test_aggregate_uses_sample_std():
    assert aggregate([1.0, 3.0]) == (2.0, pytest.approx(np.sqrt(2.0)))
    assert aggregate([5.0]) == (5.0, 0.0)


def test_plan_validation_and_round_trip():
    with pytest.raises(ValueError, match=r"outside the valid range \[0.0, 1.0\]"):
        tiny_plan(bbrw_beta=1.5)
    with pytest.raises(ValueError, match="unknown model"):
        tiny_plan(victims=("gat",))
    plan = tiny_plan()
    assert ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan
    with pytest.raises(ValueError, match="unknown plan keys"):
        ExperimentPlan.from_dict({"bogus": 1})


def test_table_shape_and_invariants(table_run):
    exp, table = table_run
    table.check()
    names = ["MLP", "GCN", "GCN-RWout", "BBRW-GCN"]
    assert table.victims() == names
    for v in names:
        for b in (0.5, 1.0):
            for mode in ("transfer", "adaptive"):
                mean, std = table.cell(v, b, mode)
                assert 0 <= mean <= 100 and std >= 0
                assert len(table.cells[(v, b, mode)]) == 2
    # the MLP never sees the graph, so every cell equals its clean target accuracy
    clean = aggregate(table.clean_target["MLP"])
    assert all(table.cell("MLP", b, m) == clean for b in (0.5, 1.0) for m in ("transfer", "adaptive"))


def test_every_run_is_verified_and_counts_add_up(table_run):
    exp, _ = table_run
    from drlab.attack import verify_run
    assert exp.runs
    assert all(verify_run(r, exp.g) == [] for r in exp.runs)
    # transfer: one surrogate run per (split, target, budget), evaluated on every victim
    transfer = [r for r in exp.runs if r.config.mode == "transfer"]
    assert len(transfer) == 2 * 3 * 3
    assert all(len(r.evaluations) == 4 for r in transfer)


def test_zero_budget_equals_clean_target_accuracy(table_run):
    exp, table = table_run
    for v in table.victims():
        per_split = []
        for s in range(2):
            hits = [r.evaluations[v] for r in exp.runs
                    if r.split == s and r.config.budget_rate == 0 and v in r.evaluations]
            per_split.append(100.0 * np.mean(hits))
        assert np.allclose(per_split, table.clean_target[v])


def test_records_label_sources(table_run):
    _, table = table_run
    recs = table.records()
    assert {r["source"] for r in recs} == {"computed"}  # no published table for "sbm"
    table.dataset = "cora_ml"
    try:
        recs = table.records()
    finally:
        table.dataset = "sbm"
    assert {r["source"] for r in recs} == {"computed", "paper"}
    assert not any(r["source"] == "paper" and r["n"] != "" for r in recs)


def test_full_rerun_is_identical_and_files_are_byte_deterministic(table_run, data, tmp_path):
    exp, table = table_run
    exp2 = Experiment(tiny_plan(), *data)
    table2 = run_table(exp2)
    assert json.dumps(table.to_json(), sort_keys=True) == json.dumps(table2.to_json(), sort_keys=True)
    stats = adversary_stats(exp.runs)
    a = write_results(tmp_path / "a", exp.plan, table=table, stats=stats, runs=exp.runs)
    b = write_results(tmp_path / "b", exp2.plan, table=table2, stats=adversary_stats(exp2.runs), runs=exp2.runs)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_adversary_stats_partition_flips(table_run):
    exp, _ = table_run
    for row in adversary_stats(exp.runs):
        if row["flips"]:
            total = row["DirectTarget"] + row["IndirectNeighborOutLink"] + row["Other"]
            assert total == pytest.approx(1.0)
        assert row["flips"] <= row["budget_flips"]


def test_beta_sweep_endpoints_reduce_to_random_walks(data):
    exp = Experiment(tiny_plan(num_splits=1), *data)
    rows = beta_sweep(exp, betas=(0.0, 1.0), budgets=(0.0, 0.5), modes=("adaptive",))
    assert {(r["beta"], r["metric"], r["budget"]) for r in rows} == {
        (b, m, bud) for b in (0.0, 1.0) for m, bud in (("clean_total", 0.0), ("target", 0.0), ("target", 0.5))}
    # BBRW(beta=1) and GCN-RWout share hyperparameters and an identical operator, hence identical weights
    a = exp.model("bbrw-gcn", 0, beta=1.0)
    b = exp.model("gcn-rwout", 0)
    c = exp.model("bbrw-gcn", 0, beta=0.0)
    d = exp.model("gcn-rwin", 0)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert all(np.array_equal(c.params[k], d.params[k]) for k in c.params)


def test_masking_sweep_rows_and_best_beta(data):
    exp = Experiment(tiny_plan(num_splits=1), *data)
    rows = masking_sweep(exp, rates=(0.5, 1.0), budget=0.5, betas=(0.6, 0.7))
    assert len(rows) == 2 * 3
    for rate in (0.5, 1.0):
        group = [r for r in rows if r["rate"] == rate]
        assert [r["beta"] for r in group] == ["", 0.6, 0.7]
        best = [r for r in group if r["best"]]
        assert len(best) == 1 and best[0]["mean"] == max(r["mean"] for r in group[1:])


def test_result_table_rejects_missing_splits():
    t = ResultTable("sbm", 2)
    t.add("GCN", 0.5, "adaptive", 50.0)
    with pytest.raises(AssertionError, match="expected 2"):
        t.check()
