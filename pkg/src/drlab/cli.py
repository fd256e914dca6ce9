"""``drlab`` command line: fetch, train, attack, evaluate, sweep, analyze.

Every command reads an optional JSON plan (``--config``) whose keys are the
fields of :class:`drlab.harness.ExperimentPlan`; flags override file values.
Outputs go to ``--out`` (default ``results/<plan name>``), which always holds
a ``manifest.json``.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import datasets
from .attack import AttackRun, run_attack_suite
from .graph import load_dataset
from .harness import (Experiment, ExperimentPlan, ResultTable, adversary_stats, beta_sweep, evaluate,
                      masking_sweep, model_config, write_results)
from .models import ModelConfig, load_model, save_model

log = logging.getLogger("drlab")


class ConfigError(Exception):
    code = 2


class MissingPrerequisite(Exception):
    code = 3


# ---------------------------------------------------------------- plumbing


def _csv_floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _csv_strs(s):
    return [v.strip().lower() for v in s.split(",") if v.strip()]


def _common(p):
    p.add_argument("--config", help="JSON plan file")
    p.add_argument("--dataset", help="dataset directory name under the data root")
    p.add_argument("--data-dir", help="dataset root (default: $DRLAB_DATA_DIR or ./data)")
    p.add_argument("--out", help="output directory (default: results/<plan name>)")
    p.add_argument("--name", help="plan name")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--splits", type=int, help="number of random splits")
    p.add_argument("--targets", type=int, help="target nodes per split")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--overwrite", action="store_true", help="allow writing into an existing run directory")
    p.add_argument("--no-tune", action="store_true", help="skip the hyperparameter grid search")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _attack_flags(p):
    p.add_argument("--budget", help="comma-separated budget rates, e.g. 0.25,0.5,1.0")
    p.add_argument("--mask-rate", type=float, help="masking rate of the target's out-links")
    p.add_argument("--T", type=int, help="PGD iterations")
    p.add_argument("--K", type=int, help="Bernoulli sampling trials")
    p.add_argument("--eta", type=float, help="PGD step size")
    p.add_argument("--loss", choices=["margin", "neg-cross-entropy"])
    p.add_argument("--candidates", choices=["all", "local"], help="candidate flip policy")


def build_parser():
    ap = argparse.ArgumentParser(prog="drlab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"drlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and convert a dataset, or generate a synthetic one")
    p.add_argument("name", nargs="?", help="cora_ml or citeseer")
    p.add_argument("--synthetic", choices=["sbm"], help="generate a directed SBM instead of downloading")
    p.add_argument("--source", help="local .npz path or URL overriding the built-in source")
    p.add_argument("--sha256", help="expected checksum of the raw download")
    p.add_argument("--data-dir")
    p.add_argument("--nodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--as", dest="as_name", help="directory name for a synthetic dataset")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("train", help="train models over all splits and write checkpoints")
    _common(p)
    p.add_argument("--model", help="comma-separated model names (e.g. gcn,bbrw-gcn)")
    p.add_argument("--beta", type=float, help="beta of BBRW models")

    p = sub.add_parser("attack", help="attack target nodes and write one run file per target")
    _common(p)
    _attack_flags(p)
    p.add_argument("--mode", choices=["transfer", "adaptive"], default="adaptive")
    p.add_argument("--model", help="comma-separated victims (default: plan victims)")
    p.add_argument("--beta", type=float)

    p = sub.add_parser("evaluate", help="aggregate run files into the result table")
    _common(p)
    p.add_argument("--model", help="comma-separated victims (default: plan victims)")

    p = sub.add_parser("sweep", help="beta or masking-rate sweep")
    _common(p)
    _attack_flags(p)
    p.add_argument("--param", choices=["beta", "mask"], required=True)
    p.add_argument("--values", help="comma-separated beta values or masking rates")

    p = sub.add_parser("analyze", help="adversary statistics and the HTML report")
    _common(p)
    return ap


def resolve_plan(args) -> ExperimentPlan:
    data = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    flags = {
        "dataset": "dataset", "name": "name", "seed": "master_seed", "splits": "num_splits",
        "targets": "targets_per_split", "jobs": "jobs", "max_epochs": "max_epochs", "patience": "patience",
        "mask_rate": "masking_rate", "T": "T", "K": "K", "eta": "eta", "loss": "loss_kind",
        "candidates": "candidate_policy", "beta": "bbrw_beta",
    }
    for flag, key in flags.items():
        v = getattr(args, flag, None)
        if v is not None:
            data[key] = v
    if getattr(args, "no_tune", False):
        data["tune"] = False
    if getattr(args, "budget", None):
        data["budgets"] = _csv_floats(args.budget)
    if getattr(args, "model", None):
        data["victims"] = _csv_strs(args.model)
    if "name" not in data and "dataset" in data:
        data["name"] = data["dataset"]
    # core settings not given explicitly are inherited from an existing run directory
    name = data.get("name", ExperimentPlan.name)
    manifest = (Path(args.out) if getattr(args, "out", None) else Path("results") / name) / "manifest.json"
    if manifest.exists():
        try:
            stored = json.loads(manifest.read_text()).get("core", {})
        except json.JSONDecodeError:
            stored = {}
        for key, v in stored.items():
            data.setdefault(key, v)
    try:
        return ExperimentPlan.from_dict(data)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None


def _out_dir(args, plan) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path("results") / plan.name


CORE_KEYS = ("dataset", "num_splits", "targets_per_split", "master_seed", "tune", "max_epochs", "patience")


def _manifest(out: Path, args, plan, command, overwrite):
    """Create or update ``manifest.json``; refuse silent reuse of a directory.

    A directory belongs to one core plan (dataset, splits, targets, seed and
    training settings). Re-running a completed command needs ``--overwrite``.
    """
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    now = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    core = {k: plan.to_dict()[k] for k in CORE_KEYS}
    old = json.loads(path.read_text()) if path.exists() else {}
    if old and not overwrite:
        if old.get("core") != core:
            raise ConfigError(f"{out} was created for a different plan ({old.get('core')}); "
                              "pass --overwrite or choose another --out")
        if command in old.get("completed", []):
            raise ConfigError(f"{out} already holds '{command}' outputs; pass --overwrite to replace them")
    if old.get("core") != core:
        old = {}
    manifest = {
        "tool": "drlab",
        "version": __version__,
        "config_path": getattr(args, "config", None),
        "artifact_dir": str(out),
        "master_seed": plan.master_seed,
        "core": core,
        "plan": plan.to_dict(),
        "created": old.get("created", now),
        "updated": now,
        "completed": old.get("completed", []),
        "history": old.get("history", []) + [{"command": command, "time": now, "argv": sys.argv[1:],
                                              "plan": plan.to_dict()}],
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def _complete(out: Path, command):
    path = out / "manifest.json"
    m = json.loads(path.read_text())
    if command not in m["completed"]:
        m["completed"].append(command)
    m["updated"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    path.write_text(json.dumps(m, indent=1, sort_keys=True))


def _load_data(args, plan):
    root = datasets.data_root(getattr(args, "data_dir", None)) / plan.dataset
    try:
        return load_dataset(root)
    except FileNotFoundError as e:
        raise MissingPrerequisite(
            f"dataset {plan.dataset!r} not found: {e}. Run `drlab fetch {plan.dataset}` "
            "(or `drlab fetch --synthetic sbm`) or set DRLAB_DATA_DIR.") from None


def _experiment(args, plan, out):
    g, x, y = _load_data(args, plan)
    exp = Experiment(plan, g, x, y)
    hp = out / "hparams.json"
    if hp.exists():
        for backbone, cfg in json.loads(hp.read_text()).items():
            exp.hparams[backbone] = ModelConfig.from_dict(cfg)
    return exp


def _save_hparams(exp, out):
    (out / "hparams.json").write_text(json.dumps({k: v.to_dict() for k, v in sorted(exp.hparams.items())},
                                                 indent=1, sort_keys=True))


def _ckpt_dir(out, cfg: ModelConfig):
    return out / "checkpoints" / cfg.label.replace("(", "_").replace(")", "").replace("=", "")


def _load_models(exp, out, name, beta=None):
    """Checkpointed models of ``name`` for every split (exit 3 when missing)."""
    backbone = model_config(name).backbone
    if backbone not in exp.hparams:
        raise MissingPrerequisite(f"no tuned {backbone} hyperparameters in {out / 'hparams.json'}; "
                                  f"run `drlab train --model {name}` first")
    models = []
    for s in range(len(exp.splits)):
        cfg = exp.config(name, s, beta)
        path = _ckpt_dir(out, cfg) / f"split_{s:02d}.ckpt"
        if not path.exists():
            raise MissingPrerequisite(f"missing checkpoint {path}; run `drlab train --model {name}` first")
        model = load_model(path)
        exp.models[json.dumps(model.config.to_dict(), sort_keys=True)] = model
        models.append(model)
    return models


# ---------------------------------------------------------------- commands


def cmd_fetch(args):
    root = datasets.data_root(args.data_dir)
    if args.synthetic:
        name = args.as_name or args.synthetic
        path = datasets.write_synthetic(root, name, n=args.nodes, seed=args.seed)
        print(f"wrote synthetic dataset to {path}")
        return 0
    if not args.name:
        raise ConfigError("fetch needs a dataset name or --synthetic sbm")
    if args.name not in datasets.SOURCES and not args.source:
        raise ConfigError(f"unknown dataset {args.name!r}; known: {sorted(datasets.SOURCES)}")
    try:
        path = datasets.fetch(args.name, root, args.source, args.sha256)
    except OSError as e:
        raise MissingPrerequisite(f"could not obtain {args.name}: {e}. Download the .npz manually and pass "
                                  "--source PATH") from None
    print(f"wrote {args.name} to {path}")
    return 0


def cmd_train(args):
    plan = resolve_plan(args)
    out = _out_dir(args, plan)
    command = f"train-{','.join(plan.victims)}-beta{plan.bbrw_beta:g}"
    _manifest(out, args, plan, command, args.overwrite)
    exp = _experiment(args, plan, out)
    names = list(plan.victims)
    if plan.surrogate not in names:
        names.append(plan.surrogate)
    for name in names:
        metrics = []
        for s, split in enumerate(exp.splits):
            model = exp.model(name, s)
            d = _ckpt_dir(out, model.config)
            d.mkdir(parents=True, exist_ok=True)
            save_model(d / f"split_{s:02d}.ckpt", model)
            metrics.append({"split": s, "val_acc": model.val_acc, "epochs": model.epochs,
                            "test_acc": evaluate(model, exp.g, exp.x, exp.y, split.test)})
        (d / "metrics.json").write_text(json.dumps(
            {"model": model.config.label, "config": model.config.to_dict(), "splits": metrics},
            indent=1, sort_keys=True))
        accs = [m["test_acc"] for m in metrics]
        print(f"{model.config.label}: test accuracy {np.mean(accs):.1f} +/- "
              f"{np.std(accs, ddof=1) if len(accs) > 1 else 0.0:.1f} over {len(accs)} split(s)")
        _save_hparams(exp, out)
    _complete(out, command)
    return 0


def _run_path(out, run: AttackRun):
    c = run.config
    tag = run.attacked.replace("(", "_").replace(")", "").replace("=", "")
    return (out / "runs" / c.mode / tag / f"split_{run.split:02d}" /
            f"t{c.target}_b{c.budget_rate:g}_m{c.masking_rate:g}.json")


def cmd_attack(args):
    plan = resolve_plan(args)
    out = _out_dir(args, plan)
    if not (out / "manifest.json").exists():
        raise MissingPrerequisite(f"{out} has no manifest; run `drlab train` first")
    command = f"attack-{args.mode}-b{','.join(f'{b:g}' for b in plan.budgets)}-m{plan.masking_rate:g}"
    _manifest(out, args, plan, command, args.overwrite)
    exp = _experiment(args, plan, out)
    victims = {name: _load_models(exp, out, name) for name in plan.victims}
    surrogate = _load_models(exp, out, plan.surrogate) if args.mode == "transfer" else None
    count = 0
    for s in range(len(exp.splits)):
        vs = [victims[name][s] for name in plan.victims]
        runs = run_attack_suite(vs, surrogate[s] if surrogate else None, exp.g, exp.x, exp.y, exp.targets[s],
                                plan.budgets, args.mode, base=plan.attack_config(),
                                master_seed=plan.master_seed, split=s, cache=exp.run_cache, jobs=plan.jobs)
        for run in runs:
            path = _run_path(out, run)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(run.to_json(), indent=1, sort_keys=True))
            count += 1
    print(f"wrote {count} attack runs under {out / 'runs' / args.mode}")
    _complete(out, command)
    return 0


def _read_runs(out):
    files = sorted((out / "runs").glob("*/*/split_*/*.json")) if (out / "runs").exists() else []
    return [AttackRun.from_json(json.loads(f.read_text())) for f in files]


def cmd_evaluate(args):
    plan = resolve_plan(args)
    out = _out_dir(args, plan)
    runs = _read_runs(out)
    if not runs:
        raise MissingPrerequisite(f"no attack runs under {out / 'runs'}; run `drlab attack` first")
    _manifest(out, args, plan, "evaluate", True)
    exp = _experiment(args, plan, out)
    table = ResultTable(plan.dataset, plan.num_splits)
    names = {}
    for name in plan.victims:
        try:
            models = _load_models(exp, out, name)
        except MissingPrerequisite as e:
            log.warning("skipping %s: %s", name, e)
            continue
        for s, model in enumerate(models):
            names[name] = model.name
            table.clean_total.setdefault(model.name, []).append(
                evaluate(model, exp.g, exp.x, exp.y, exp.splits[s].test))
            table.clean_target.setdefault(model.name, []).append(
                evaluate(model, exp.g, exp.x, exp.y, exp.targets[s]))
    groups = {}
    for r in runs:
        if r.config.masking_rate != plan.masking_rate:
            continue
        for victim, correct in r.evaluations.items():
            groups.setdefault((victim, r.config.budget_rate, r.config.mode, r.split), []).append(correct)
    for (victim, b, mode, s), hits in sorted(groups.items()):
        if b > 0 and victim in names.values():
            table.add(victim, b, mode, 100.0 * float(np.mean(hits)))
    if not names:
        raise MissingPrerequisite(f"no trained victims under {out / 'checkpoints'}")
    try:
        table.check()
    except AssertionError as e:
        raise MissingPrerequisite(f"incomplete attack runs: {e}") from None
    write_results(out, plan, table=table)
    for row in table.wide():
        cells = "  ".join(f"{k}={v[0]:.1f}+/-{v[1]:.1f}" for k, v in row.items() if isinstance(v, tuple))
        print(f"{row['model']:<12} {cells}")
    _complete(out, "evaluate")
    return 0


def cmd_sweep(args):
    plan = resolve_plan(args)
    out = _out_dir(args, plan)
    _manifest(out, args, plan, f"sweep-{args.param}", args.overwrite)
    exp = _experiment(args, plan, out)
    values = tuple(_csv_floats(args.values)) if args.values else None
    try:
        if args.param == "beta":
            rows = beta_sweep(exp, betas=values)
            write_results(out, plan, beta_rows=rows)
            n_beta = len({r["beta"] for r in rows})
            n_budget = len({r["budget"] for r in rows if r["metric"] == "target"})
            print(f"beta sweep: {n_beta} beta values x {n_budget} budgets x {len(plan.modes)} modes")
        else:
            rows = masking_sweep(exp, rates=values)
            write_results(out, plan, mask_rows=rows)
            for r in rows:
                if r["beta"] == "" or r["best"]:
                    label = r["model"] if r["beta"] == "" else f"{r['model']} (best beta {r['beta']:g})"
                    print(f"rate {r['rate']:g} {label}: {r['mean']:.1f} +/- {r['std']:.1f}")
    except ValueError as e:
        raise ConfigError(str(e)) from None
    _save_hparams(exp, out)
    (out / f"sweep_{args.param}_runs.jsonl").write_text("".join(r.dumps() + "\n" for r in exp.runs))
    _complete(out, f"sweep-{args.param}")
    return 0


def _read_csv(path):
    import csv

    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            try:
                r[k] = float(v)
            except (TypeError, ValueError):
                pass
        if "best" in r:
            r["best"] = r["best"] in ("True", 1.0)
    return rows


def cmd_analyze(args):
    plan = resolve_plan(args)
    out = _out_dir(args, plan)
    runs = _read_runs(out)
    for extra in sorted(out.glob("sweep_*_runs.jsonl")):
        runs += [AttackRun.from_json(json.loads(line)) for line in extra.read_text().splitlines() if line]
    beta_rows = _read_csv(out / "sweep_beta.csv") if (out / "sweep_beta.csv").exists() else None
    mask_rows = _read_csv(out / "sweep_mask.csv") if (out / "sweep_mask.csv").exists() else None
    if not runs and beta_rows is None and mask_rows is None:
        raise MissingPrerequisite(f"nothing to analyze in {out}; run `drlab attack` or `drlab sweep` first")
    _manifest(out, args, plan, "analyze", True)
    table = None
    if (out / "table.json").exists():
        table = _table_from_json(json.loads((out / "table.json").read_text()))
    stats = adversary_stats(runs) if runs else []
    write_results(out, plan, table=table, beta_rows=beta_rows, mask_rows=mask_rows, stats=stats)
    for r in stats:
        print(f"{r['attacked']:<22} {r['mode']:<9} {100 * r['budget']:>4.0f}% mask {r['masking_rate']:g}  "
              + "  ".join(f"{c}={100 * r[c]:.1f}%" for c in ("DirectTarget", "IndirectNeighborOutLink", "Other")))
    if beta_rows:
        grid = (len({r["beta"] for r in beta_rows}),
                len({r["budget"] for r in beta_rows if r["metric"] == "target"}),
                len({r["mode"] for r in beta_rows if r["metric"] == "target" and r["mode"] != "clean"}))
        print(f"beta sweep grid: {grid[0]} beta x {grid[1]} budgets x {grid[2]} modes")
    print(f"report: {out / 'report.html'}")
    _complete(out, "analyze")
    return 0


def _table_from_json(d):
    table = ResultTable(d["dataset"], d["num_splits"])
    for c in d["per_split"]:
        table.cells[(c["model"], float(c["budget"]), c["mode"])] = list(c["values"])
    for r in d.get("clean", []):
        table.clean_total[r["model"]] = r["clean_total"]
        table.clean_target[r["model"]] = r["clean_target"]
    return table


COMMANDS = {"fetch": cmd_fetch, "train": cmd_train, "attack": cmd_attack, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "analyze": cmd_analyze}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MissingPrerequisite) as e:
        print(f"drlab {args.command}: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
