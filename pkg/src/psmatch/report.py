"""Run report: canonical JSON, text rendering and emitted-file helpers."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

# volatile fields excluded from the determinism hash
RUNTIME_KEY = "runtime"
HASH_KEY = "determinism_hash"

# column name -> parser, for every CSV the CLI can emit
CSV_LAYOUTS = {
    "pairs.csv": {
        "pair_id": int, "treated_row": int, "control_row": int,
        "ps_treated": float, "ps_control": float, "distance": float,
    },
    "balance.csv": {
        "panel": str, "covariate": str, "kind": str, "treated": float, "treated_sd": float,
        "control": float, "control_sd": float, "smd": float, "abs_smd": float,
    },
    "loveplot.csv": {"covariate": str, "smd_before": float, "smd_after": float, "threshold": float},
    "ps_histograms.csv": {
        "group": str, "panel": str, "bin": int, "bin_low": float, "bin_high": float, "count": int,
    },
}


def clean(obj):
    """Recursively replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return clean(obj.item())
    return obj


def canonical_json(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def deterministic_view(report: dict) -> dict:
    view = copy.deepcopy(report)
    view.pop(HASH_KEY, None)
    view.get("provenance", {}).pop(RUNTIME_KEY, None)
    return view


def determinism_hash(report: dict) -> str:
    return hashlib.sha256(canonical_json(deterministic_view(report)).encode("utf-8")).hexdigest()


def finalize(report: dict) -> dict:
    report = clean(report)
    report[HASH_KEY] = determinism_hash(report)
    return report


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temporary sibling file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_emitted_csv(path) -> list[dict]:
    """Parse an emitted CSV using its documented layout; empty cells become None."""
    path = Path(path)
    layout = CSV_LAYOUTS[path.name]
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(layout):
            raise ValueError(f"{path.name}: header {reader.fieldnames} != {list(layout)}")
        return [{k: (layout[k](v) if v != "" else None) for k, v in row.items()} for row in reader]


# -- text rendering -----------------------------------------------------------

def _table(head: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    rule = "-" * max(len(fmt(head)), 1)
    return "\n".join([rule, fmt(head), rule] + [fmt(r) for r in rows] + [rule])


def _f(v, digits: int) -> str:
    return "NA" if v is None else f"{v:.{digits}f}"


def render_descriptive(d: dict) -> str:
    strata = d["strata"]
    head = ["Variable"] + [f"{s['label']} (N = {s['n']})" for s in strata]
    rows = []
    for var in d["variables"]:
        cells = []
        for s in strata:
            st = var["stats"][s["label"]]
            if var["kind"] == "binary":
                cells.append(f"{st['count']} ({_f(st['percent'], 2)})")
            else:
                cells.append(f"{_f(st['mean'], 2)} ({_f(st['sd'], 2)})")
        label = f"{var['name']} = 1 (%)" if var["kind"] == "binary" else f"{var['name']}, mean (SD)"
        rows.append([label] + cells)
    return _table(head, rows)


def render_balance(b: dict) -> str:
    def cells(row):
        if row is None:
            return ["-", "-", "-"]
        if row["kind"] == "binary":
            return [_f(row["treated"], 3), _f(row["control"], 3), _f(row["abs_smd"], 3)]
        return [f"{_f(row['treated'], 2)} ({_f(row['treated_sd'], 2)})",
                f"{_f(row['control'], 2)} ({_f(row['control_sd'], 2)})", _f(row["abs_smd"], 3)]

    after = {r["covariate"]: r for r in b["after"]}
    nb, na = b["n_before"], b["n_after"]
    head = ["Feature", f"Treated (n={nb['treated']})", f"Control (n={nb['control']})", "|SMD| before",
            f"Treated (n={na['treated']})", f"Control (n={na['control']})", "|SMD| after"]
    rows = [[r["covariate"], *cells(r), *cells(after.get(r["covariate"]))] for r in b["before"]]
    tail = f"threshold {b['threshold']}; balanced: {b['balanced']}; max |SMD| after: {_f(b['max_after_smd'], 3)}"
    return _table(head, rows) + "\n" + tail


def render_effects(e: dict) -> str:
    if not e.get("computed"):
        return f"Effects not computed: {e.get('reason', 'unknown')}"
    head = ["", "Estimate", "Standard Error", "95% CI", "p-value"]
    rows = []
    for est in e["estimates"]:
        p = est["p_value"]
        rows.append([est["estimand"], _f(est["estimate"], 3), _f(est["standard_error"], 3),
                     f"{_f(est['ci_low'], 3)}  {_f(est['ci_high'], 3)}",
                     "< 0.001" if p is not None and p < 0.001 else _f(p, 3)])
    note = "OR standard error is on the log-odds scale; ATE/ATT/ATC intervals are percentile bootstrap."
    return _table(head, rows) + "\n" + note


def render_text(report: dict) -> str:
    m = report["matching"]
    parts = [
        "Descriptive statistics",
        render_descriptive(report["descriptive"]),
        "",
        "Propensity model: converged={converged} iterations={iterations} log-likelihood={ll:.4f}".format(
            converged=report["propensity_model"]["converged"],
            iterations=report["propensity_model"]["iterations"],
            ll=report["propensity_model"]["log_likelihood"]),
        "Matching: {pairs} pairs, {ut} treated and {uc} control unmatched; caliper {mult} x SD = {w:.6f} ({scale} scale)".format(
            pairs=m["pairs"], ut=m["unmatched_treated"], uc=m["unmatched_control"],
            mult=m["caliper_multiplier"], w=m["caliper_width"], scale=m["caliper_scale"]),
        "",
        "Covariate balance",
        render_balance(report["balance"]),
        "",
        "Effect estimates",
        render_effects(report["effects"]),
        "",
        f"determinism hash: {report.get(HASH_KEY, '')}",
    ]
    return "\n".join(parts) + "\n"
