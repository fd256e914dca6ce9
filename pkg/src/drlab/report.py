"""Static HTML report with inline SVG charts (no scripts, no external assets)."""

from __future__ import annotations

import html

from .attack import CATEGORIES

_COLORS = ["#1b6ca8", "#d1495b", "#edae49", "#66a182", "#8d6a9f", "#2e4057"]
_CAT_COLORS = {"DirectTarget": "#edae49", "IndirectNeighborOutLink": "#d1495b", "Other": "#8c8c8c"}


def _e(s):
    return html.escape(str(s))


def _cell(v):
    if v is None:
        return "\\"
    m, s = v
    return f"{m:.1f}&plusmn;{s:.1f}"


def line_chart(series, title, xlabel, ylabel, width=420, height=260, ymin=0.0, ymax=100.0):
    """``series`` maps a legend label to a list of ``(x, y)`` points."""
    left, right, top, bottom = 48, 120, 28, 40
    pw, ph = width - left - right, height - top - bottom
    xs = sorted({x for pts in series.values() for x, _ in pts}) or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    x1 = x1 if x1 > x0 else x0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{left}" y="16" font-weight="bold">{_e(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>']
    for k in range(6):
        yv = ymin + k * (ymax - ymin) / 5
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.0f}</text>')
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{py(yv):.1f}" y2="{py(yv):.1f}" stroke="#eee"/>')
    for xv in xs:
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 14}" text-anchor="middle">{xv:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">{_e(xlabel)}</text>')
    out.append(f'<text x="12" y="{top + ph / 2}" transform="rotate(-90 12 {top + ph / 2})" '
               f'text-anchor="middle">{_e(ylabel)}</text>')
    for i, (label, pts) in enumerate(series.items()):
        c = _COLORS[i % len(_COLORS)]
        pts = sorted(pts)
        path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.5" fill="{c}"/>')
        ly = top + 12 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" x2="{left + pw + 26}" y1="{ly}" y2="{ly}" stroke="{c}" '
                   f'stroke-width="2"/><text x="{left + pw + 30}" y="{ly + 4}">{_e(label)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def stacked_bars(rows, title, width=520):
    """Horizontal 100% bars of flip categories, one per stats row."""
    bar_h, gap, left, top = 16, 6, 230, 28
    height = top + len(rows) * (bar_h + gap) + 30
    pw = width - left - 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="8" y="16" font-weight="bold">{_e(title)}</text>']
    for i, r in enumerate(rows):
        y = top + i * (bar_h + gap)
        label = f'{r["attacked"]} / {r["mode"]} / {100 * r["budget"]:.0f}%'
        out.append(f'<text x="{left - 6}" y="{y + 12}" text-anchor="end">{_e(label)}</text>')
        x = left
        for c in CATEGORIES:
            w = pw * r[c]
            if w > 0:
                out.append(f'<rect x="{x:.1f}" y="{y}" width="{w:.1f}" height="{bar_h}" fill="{_CAT_COLORS[c]}">'
                           f'<title>{c}: {100 * r[c]:.1f}%</title></rect>')
            x += w
    ly = top + len(rows) * (bar_h + gap) + 10
    for j, c in enumerate(CATEGORIES):
        lx = left + j * 130
        out.append(f'<rect x="{lx}" y="{ly}" width="10" height="10" fill="{_CAT_COLORS[c]}"/>'
                   f'<text x="{lx + 14}" y="{ly + 9}">{c}</text>')
    out.append("</svg>")
    return "\n".join(out)


def _table_html(table):
    from .published import COLUMNS, table as ref_table

    head = "".join(f"<th>{_e(c)}</th>" for c in ("model", "source") + COLUMNS)
    body = []
    for row in table.wide():
        cells = "".join(f"<td>{_cell(row.get(c))}</td>" for c in COLUMNS)
        body.append(f"<tr><td>{_e(row['model'])}</td><td>computed</td>{cells}</tr>")
    try:
        ref = ref_table(table.dataset)
    except KeyError:
        ref = {}
    for name, row in ref.items():
        cells = "".join(f"<td>{_cell(row.get(c))}</td>" for c in COLUMNS)
        body.append(f'<tr class="ref"><td>{_e(name)}</td><td>paper</td>{cells}</tr>')
    return f"<table><tr>{head}</tr>{''.join(body)}</table>"


def render_report(plan, table=None, beta_rows=None, mask_rows=None, stats=None) -> str:
    parts = [
        "<!DOCTYPE html><html><head><meta charset='utf-8'>",
        f"<title>{_e(plan.name)}: {_e(plan.dataset)}</title>",
        "<style>body{font-family:sans-serif;margin:24px;max-width:1100px}"
        "table{border-collapse:collapse;font-size:12px}td,th{border:1px solid #ccc;padding:3px 6px}"
        "tr.ref{color:#777}h2{margin-top:28px}</style></head><body>",
        f"<h1>{_e(plan.name)} ({_e(plan.dataset)})</h1>",
        f"<p>{plan.num_splits} splits, {plan.targets_per_split} targets per split, master seed "
        f"{plan.master_seed}. Cells are mean &plusmn; sample standard deviation over splits. Reference "
        "&plusmn; values are shown as published; their magnitudes suggest standard deviations "
        "rather than variances. Grey rows are published reference numbers "
        "(source: paper) and are never mixed with computed cells.</p>",
    ]
    if table is not None:
        parts += ["<h2>Robust target accuracy (%)</h2>", _table_html(table)]
    if beta_rows:
        parts.append("<h2>Beta sweep</h2>")
        modes = sorted({r["mode"] for r in beta_rows if r["metric"] == "target" and r["mode"] != "clean"})
        for mode in modes:
            series = {}
            for r in beta_rows:
                if r["metric"] == "target" and r["mode"] == mode:
                    series.setdefault(f"{100 * r['budget']:.0f}%", []).append((r["beta"], r["mean"]))
            parts.append(line_chart(series, f"BBRW-GCN, {mode} attack", "beta", "target accuracy (%)"))
    if mask_rows:
        parts.append("<h2>Masking-rate sweep (adaptive)</h2>")
        rates = sorted({r["rate"] for r in mask_rows})
        series = {}
        best = {}
        for r in mask_rows:
            if r["beta"] == "":
                series.setdefault(r["model"], []).append((r["rate"], r["mean"]))
            elif r["best"]:
                series.setdefault(f"{r['model']} (best beta)", []).append((r["rate"], r["mean"]))
                best[r["rate"]] = r["beta"]
        parts.append(line_chart(series, "Robust accuracy vs masking rate", "masking rate", "target accuracy (%)"))
        parts.append("<table><tr><th>rate</th>" + "".join(f"<td>{x:g}</td>" for x in rates) + "</tr>"
                     "<tr><th>best beta</th>" + "".join(f"<td>{best.get(x, '')}</td>" for x in rates)
                     + "</tr></table>")
    if stats:
        parts += ["<h2>Adversarial flip categories</h2>", stacked_bars(stats, "Share of flips per category")]
    parts.append("</body></html>\n")
    return "\n".join(parts)
