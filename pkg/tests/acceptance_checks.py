"""Criterion checks over a results directory written by the pipeline.

Each check returns ``(passed, detail)``; missing inputs fail with a reason.
"""

import csv
import json
from pathlib import Path

from scipy.stats import spearmanr


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return v


class Results:
    def __init__(self, root):
        self.root = Path(root)

    def exists(self, name):
        return (self.root / name).exists()

    def cell(self, model, budget, mode):
        for r in json.loads((self.root / "table.json").read_text())["rows"]:
            if (r["source"] == "computed" and r["model"] == model and r["metric"] == "target"
                    and r["mode"] == mode and float(r["budget"] or 0) == budget):
                return r["mean"]
        raise KeyError((model, budget, mode))

    def plan(self):
        return json.loads((self.root / "table.json").read_text())

    def rows(self, name):
        return [{k: _num(v) for k, v in r.items()} for r in _csv(self.root / name)]


def need(res, *names):
    missing = [n for n in names if not res.exists(n)]
    if missing:
        return f"missing {', '.join(missing)} under {res.root}"
    return None


def robustness_ordering(res, margin=5.0):
    if (why := need(res, "table.json")):
        return False, why
    c = {m: res.cell(m, 0.5, "adaptive") for m in ("BBRW-GCN", "MLP", "GCN", "GCN-RWout", "GCN-RWin")}
    checks = {
        "BBRW-GCN > MLP + 5": c["BBRW-GCN"] >= c["MLP"] + margin,
        "MLP > GCN + 5": c["MLP"] >= c["GCN"] + margin,
        "BBRW-GCN >= GCN + 30": c["BBRW-GCN"] >= c["GCN"] + 30,
        "GCN-RWout < MLP - 5": c["GCN-RWout"] <= c["MLP"] - margin,
        "GCN-RWin <= 10": c["GCN-RWin"] <= 10,
    }
    detail = ", ".join(f"{k}={v:.1f}" for k, v in c.items())
    failed = [k for k, ok in checks.items() if not ok]
    return not failed, detail + ("" if not failed else f"; violated: {'; '.join(failed)}")


def transfer_noop(res):
    if (why := need(res, "table.json")):
        return False, why
    t = res.plan()
    per = _targets_per_split(res)
    clean = next(c["clean_target"] for c in t["clean"] if c["model"] == "GCN-RWout")
    # per-split accuracies are percentages over ``per`` targets; compare summed counts
    base = round(sum(clean) * per / 100)
    parts, ok = [], True
    cells = sorted((c["budget"], c["values"]) for c in t["per_split"]
                   if c["model"] == "GCN-RWout" and c["mode"] == "transfer")
    for b, vals in cells:
        cnt = round(sum(vals) * per / 100)
        ok &= abs(cnt - base) <= 1
        parts.append(f"{100 * b:.0f}%: {cnt}")
    if not parts:
        return False, "no transfer cells for GCN-RWout"
    return ok, f"correct targets out of {len(clean) * per} at 0%: {base}; transfer " + ", ".join(parts)


def _targets_per_split(res):
    runs = res.root / "runs.jsonl"
    if runs.exists():
        seen = {}
        for line in runs.read_text().splitlines():
            d = json.loads(line)
            seen.setdefault(d["split"], set()).add(d["target"])
        return max(len(v) for v in seen.values())
    return 20


def adversary_shares(res):
    if (why := need(res, "adversary_stats.csv")):
        return False, why
    rows = res.rows("adversary_stats.csv")

    def share(model, mode, cat):
        for r in rows:
            if r["attacked"] == model and r["mode"] == mode and r["budget"] == 0.5 and r["masking_rate"] == 1.0:
                return r[cat]
        raise KeyError((model, mode))

    direct = share("GCN", "adaptive", "DirectTarget")
    indirect = share("GCN-RWout", "adaptive", "IndirectNeighborOutLink")
    ok = direct >= 0.8 and indirect >= 0.5
    return ok, f"GCN DirectTarget {100 * direct:.1f}% (>= 80), GCN-RWout IndirectNeighborOutLink {100 * indirect:.1f}% (>= 50)"


def beta_shape(res, adaptive_budget=0.5):
    if (why := need(res, "sweep_beta.csv")):
        return False, why
    rows = [r for r in res.rows("sweep_beta.csv") if r["metric"] == "target"]
    tr = sorted((r["beta"], r["mean"]) for r in rows if r["mode"] == "transfer" and r["budget"] == 1.0)
    ad = dict((r["beta"], r["mean"]) for r in rows if r["mode"] == "adaptive" and r["budget"] == adaptive_budget)
    if len(tr) < 3 or len(ad) < 3:
        return False, "beta sweep lacks transfer 100% or adaptive rows"
    rho = spearmanr([b for b, _ in tr], [m for _, m in tr]).statistic
    peak = max(ad, key=lambda b: (ad[b], -b))
    drop = ad[peak] - ad[1.0]
    ok = rho > 0.8 and 0.5 <= peak <= 0.9 and drop >= 20
    return ok, (f"transfer 100% Spearman rho {rho:.2f} (> 0.8); adaptive {100 * adaptive_budget:.0f}% peak at beta "
                f"{peak:g} (in [0.5, 0.9]), drop to beta 1 {drop:.1f} points (>= 20)")


def masking_shape(res):
    if (why := need(res, "sweep_mask.csv")):
        return False, why
    rows = res.rows("sweep_mask.csv")
    backbone = sorted((r["rate"], r["mean"]) for r in rows if r["beta"] == "")
    best = sorted((r["rate"], r["mean"]) for r in rows if r["best"] in ("True", True))
    constant = len({round(m, 9) for _, m in backbone}) == 1
    vals = [m for _, m in best]
    rho = spearmanr([r for r, _ in best], vals).statistic if len(set(vals)) > 1 else 0.0
    trend = vals[-1] >= vals[0] and (rho > 0 or len(set(vals)) == 1)
    return bool(constant and trend), (
        "backbone " + "/".join(f"{m:.1f}" for _, m in backbone) + (" (constant)" if constant else " (not constant)")
        + "; BBRW best-beta " + "/".join(f"{m:.1f}" for m in vals)
        + f" (first {vals[0]:.1f}, last {vals[-1]:.1f}, Spearman {rho:.2f})")
