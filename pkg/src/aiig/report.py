"""Summaries across run directories: one row per (mode, variant), plus directional gaps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .config import MODES, VARIANTS

TAIL_FRACTION = 0.2
SUMMARY_COLUMNS = ("mode", "variant", "runs", "train_protagonist_reward",
                   "eval_protagonist_reward", "eval_opponent_reward", "rho", "active_k")


@dataclass
class RunSummary:
    run_dir: Path
    mode: str
    variant: str
    train_reward: Optional[float]
    eval_r_p: Optional[float]
    eval_r_o: Optional[float]
    rho: Optional[float]
    active_k: Optional[int]


def tail_mean(values: list[float], fraction: float = TAIL_FRACTION) -> Optional[float]:
    """Mean over the final ``fraction`` of entries (at least one)."""
    if not values:
        return None
    n = max(1, math.ceil(fraction * len(values)))
    return float(np.mean(values[-n:]))


def read_metrics(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize_run(run_dir) -> RunSummary:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    rows = read_metrics(run_dir / "metrics.csv")
    train = [float(r["protagonist_reward"]) for r in rows if r["protagonist_reward"] != ""]
    r_p = r_o = rho = None
    k = len(manifest.get("active", [])) or None
    eval_path = run_dir / "evaluation.json"
    if eval_path.exists():
        ev = json.loads(eval_path.read_text(encoding="utf-8"))
        r_p, r_o, rho, k = ev["r_p"], ev["r_o"], ev["rho"], ev["K"]
    return RunSummary(run_dir, manifest["mode"], manifest["variant"], tail_mean(train),
                      r_p, r_o, rho, k)


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if not isinstance(v, int) else str(v)


def build_table(runs: Iterable[RunSummary]) -> list[dict]:
    """Full mode x variant grid; cells without runs stay blank."""
    runs = list(runs)
    table = []
    for mode in MODES:
        for variant in VARIANTS:
            group = [r for r in runs if r.mode == mode and r.variant == variant]
            table.append({
                "mode": mode, "variant": variant, "runs": len(group),
                "train_protagonist_reward": _mean(r.train_reward for r in group),
                "eval_protagonist_reward": _mean(r.eval_r_p for r in group),
                "eval_opponent_reward": _mean(r.eval_r_o for r in group),
                "rho": _mean(r.rho for r in group),
                "active_k": _mean(r.active_k for r in group),
            })
    return table


def _cell(table, mode, variant, key="eval_protagonist_reward"):
    for row in table:
        if row["mode"] == mode and row["variant"] == variant:
            return row[key]
    return None


GAPS = (
    ("ensemble vs single model", ("no_EO", "single_gamma")),
    ("ensemble optimization (full vs no_EO)", ("full", "no_EO")),
    ("ensemble + evolution (no_EO vs no_EO_no_CE)", ("no_EO", "no_EO_no_CE")),
)


def observations(table) -> list[str]:
    lines = []
    for mode in MODES:
        for label, (a, b) in GAPS:
            va, vb = _cell(table, mode, a), _cell(table, mode, b)
            if va is None or vb is None:
                lines.append(f"[{mode}] {label}: gap unavailable (missing evaluation)")
                continue
            gap = va - vb
            word = "higher" if gap > 0 else "lower" if gap < 0 else "equal"
            lines.append(f"[{mode}] {label}: evaluation reward gap {gap:+.3f} ({a} {word})")
    vb, vr = _cell(table, "belief", "full"), _cell(table, "recurrent", "full")
    if vb is not None and vr is not None:
        gap = vb - vr
        lines.append(f"[full] belief vs recurrent: evaluation reward gap {gap:+.3f} "
                     f"(belief {'higher' if gap > 0 else 'lower' if gap < 0 else 'equal'})")
    return lines


def write_report(run_dirs, out_dir) -> tuple[list[dict], list[str]]:
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ValueError("report needs at least one run directory")
    summaries = [summarize_run(d) for d in run_dirs]
    table = build_table(summaries)
    notes = observations(table)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in table:
            w.writerow([_fmt(row[c]) if c not in ("mode", "variant") else row[c]
                        for c in SUMMARY_COLUMNS])
    text = [f"# training reward = mean over the final {int(TAIL_FRACTION * 100)}% of epochs",
            "# evaluation reward = frozen protagonist vs a freshly trained evaluation opponent",
            "# blank cells are missing runs, not zeros", ""]
    text.append(f"{'mode':<10} {'variant':<12} {'runs':>4} {'train':>9} {'eval':>9} "
                f"{'eval_opp':>9} {'rho':>9} {'K':>5}")
    for row in table:
        def f(key, spec="9.3f"):
            v = row[key]
            return format(v, spec) if v is not None else " " * int(spec.split(".")[0])
        text.append(f"{row['mode']:<10} {row['variant']:<12} {row['runs']:>4} "
                    f"{f('train_protagonist_reward')} {f('eval_protagonist_reward')} "
                    f"{f('eval_opponent_reward')} {f('rho')} {f('active_k', '5.2f')}")
    text += ["", "Directional observations (signs are reported, not asserted):"]
    text += ["  " + n for n in notes]
    (out / "summary.txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    return table, notes
