"""Aggregate reporting over harness run directories.

Reads the per-run summary CSVs written by the tabular sweep (and, when
present, correlation scatter files), validates their schemas, and writes a
combined summary.csv / summary.json. Duplicate (mdp_seed, variant) cells
across input dirs are flagged, never silently averaged.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import DegenerateInputError
from .metrics import correlation

SWEEP_COLUMNS = ["mdp_seed", "variant", "k", "variability", "return_iqm",
                 "return_ci_low", "return_ci_high", "spearman_k_vs_v"]
SCATTER_COLUMNS = ["mdp_index", "early_disagreement", "cross_seed_dispersion"]


class SchemaError(ValueError):
    pass


def _read_csv_checked(path: str, expected_columns: list[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != expected_columns:
            missing = set(expected_columns) - set(reader.fieldnames or [])
            extra = set(reader.fieldnames or []) - set(expected_columns)
            raise SchemaError(
                f"{path}: column mismatch (missing {sorted(missing)}, "
                f"unexpected {sorted(extra)})")
        return list(reader)


def metrics_report(run_dirs: list[str], out_dir: str) -> list[str]:
    """Aggregate sweep summaries from run_dirs into out_dir.

    Returns the list of files written.
    """
    if not run_dirs:
        raise ValueError("metrics_report needs at least one run directory")
    rows = []
    scatter = []
    for d in run_dirs:
        sweep_path = os.path.join(d, "summary.csv")
        if os.path.exists(sweep_path):
            rows.extend(_read_csv_checked(sweep_path, SWEEP_COLUMNS))
        scatter_path = os.path.join(d, "correlation_scatter.csv")
        if os.path.exists(scatter_path):
            scatter.extend(_read_csv_checked(scatter_path, SCATTER_COLUMNS))
        if not os.path.exists(sweep_path) and not os.path.exists(scatter_path):
            raise SchemaError(f"{d}: no conforming summary.csv or "
                              "correlation_scatter.csv found")

    seen = set()
    duplicates = []
    for row in rows:
        key = (row["mdp_seed"], row["variant"])
        if key in seen:
            duplicates.append(key)
        seen.add(key)

    # Per-variant aggregation over MDPs.
    variants: dict[str, list[dict]] = {}
    for row in rows:
        variants.setdefault(row["variant"], []).append(row)
    agg_rows = []
    for variant in sorted(variants,
                          key=lambda v: (variants[v][0]["k"] != "",
                                         float(variants[v][0]["k"] or 0.0))):
        cells = variants[variant]
        vs = [float(c["variability"]) for c in cells]
        iqms = [float(c["return_iqm"]) for c in cells]
        agg_rows.append({
            "variant": variant,
            "k": cells[0]["k"],
            "num_cells": len(cells),
            "mean_variability": repr(float(np.mean(vs))),
            "mean_return_iqm": repr(float(np.mean(iqms))),
        })

    k_rows = [r for r in agg_rows if r["k"] != ""]
    spearman_k_v = ""
    if len(k_rows) >= 3:
        try:
            spearman_k_v = repr(correlation(
                [float(r["k"]) for r in k_rows],
                [float(r["mean_variability"]) for r in k_rows], "spearman"))
        except DegenerateInputError:
            spearman_k_v = "nan"
    for r in agg_rows:
        r["spearman_k_vs_v"] = spearman_k_v

    corr_summary = {}
    if len(scatter) >= 3:
        x = [float(r["early_disagreement"]) for r in scatter]
        y = [float(r["cross_seed_dispersion"]) for r in scatter]
        try:
            r_val = correlation(x, y, "pearson")
            corr_summary = {"pearson_r": r_val, "r_squared": r_val * r_val,
                            "num_points": len(scatter)}
        except DegenerateInputError:
            corr_summary = {"error": "degenerate scatter series"}

    os.makedirs(out_dir, exist_ok=True)
    written = []
    csv_path = os.path.join(out_dir, "summary.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "k", "num_cells",
                                                "mean_variability",
                                                "mean_return_iqm",
                                                "spearman_k_vs_v"])
        writer.writeheader()
        writer.writerows(agg_rows)
    written.append(csv_path)

    json_path = os.path.join(out_dir, "summary.json")
    with open(json_path, "w") as fh:
        json.dump({
            "per_variant": agg_rows,
            "per_cell": rows,
            "duplicates_flagged": [list(d) for d in duplicates],
            "correlation_study": corr_summary,
        }, fh, indent=2)
    written.append(json_path)
    return written
