"""The five figure kinds and their CSV schemas.

Every renderer is read-only over its inputs, deterministic for fixed
inputs (Agg backend, fixed style, no RNG), and returns the counts of the
visual elements it drew so callers can cross-check them against the input
row structure.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("kl-return-scatter", "variance-bars", "toy-panels",
         "training-curves", "correlation-scatter")

SCHEMAS = {
    "kl-return-scatter": ["mdp_seed", "variant", "k", "variability",
                          "return_iqm", "return_ci_low", "return_ci_high",
                          "spearman_k_vs_v"],
    "variance-bars": ["mdp_seed", "variant", "k", "variability",
                      "return_iqm", "return_ci_low", "return_ci_high",
                      "spearman_k_vs_v"],
    "toy-panels": ["step", "grid_point", "q1", "q2", "q_min",
                   "policy_density", "alpha"],
    "training-curves": ["mdp_seed", "variant", "step", "return_iqm",
                        "return_ci_low", "return_ci_high"],
    "correlation-scatter": ["mdp_index", "early_disagreement",
                            "cross_seed_dispersion"],
}

_STYLE = {"figure.dpi": 100, "font.size": 9, "axes.grid": True,
          "grid.alpha": 0.3, "svg.hashsalt": "maxentlab-plots"}

# Deterministic output: no embedded timestamps or tool versions. The
# metadata keys differ per backend.
_SAVEFIG_METADATA = {".png": {"Software": None},
                     ".svg": {"Date": None},
                     ".pdf": {"CreationDate": None, "Producer": None,
                              "Creator": None}}


class PlotSchemaError(ValueError):
    pass


@dataclass
class FigureSpec:
    """What to draw: figure kind, input CSVs, output image, label overrides."""

    kind: str
    inputs: list[str]
    output: str
    title: str | None = None
    xlabel: str | None = None
    ylabel: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotSchemaError(f"unknown figure kind {self.kind!r}; "
                                  f"expected one of {KINDS}")
        if not self.inputs:
            raise PlotSchemaError("figure spec needs at least one input CSV")

    @classmethod
    def from_json(cls, path: str) -> "FigureSpec":
        with open(path) as fh:
            doc = json.load(fh)
        allowed = {"kind", "inputs", "output", "title", "xlabel", "ylabel"}
        for key in doc:
            if key not in allowed:
                raise PlotSchemaError(f"unknown figure-spec key {key!r}")
        return cls(**doc)


def read_rows(path: str, kind: str) -> list[dict]:
    """Read one CSV, enforcing the exact documented header for the kind."""
    expected = SCHEMAS[kind]
    if not os.path.exists(path):
        raise PlotSchemaError(f"{path}: input file does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        got = reader.fieldnames or []
        if got != expected:
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            raise PlotSchemaError(
                f"{path}: header mismatch for {kind!r} "
                f"(missing {missing}, unexpected {extra})")
        return list(reader)


def _finish(fig, ax_or_axes, spec: FigureSpec, default_title: str):
    first = ax_or_axes if not isinstance(ax_or_axes, (list, np.ndarray)) \
        else np.asarray(ax_or_axes).ravel()[0]
    fig.suptitle(spec.title or default_title)
    if spec.xlabel:
        first.set_xlabel(spec.xlabel)
    if spec.ylabel:
        first.set_ylabel(spec.ylabel)
    out_dir = os.path.dirname(spec.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    ext = os.path.splitext(spec.output)[1].lower()
    fig.savefig(spec.output, metadata=_SAVEFIG_METADATA.get(ext, {}))
    plt.close(fig)


def _render_kl_return(spec: FigureSpec) -> dict:
    rows = [r for p in spec.inputs for r in read_rows(p, spec.kind)]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.set_xscale("log")
        ax.set_xlabel("inter-run variability V (symmetric KL)")
        ax.set_ylabel("return (IQM)")
        markers = 0
        for row in rows:
            v = float(row["variability"])
            y = float(row["return_iqm"])
            lo, hi = float(row["return_ci_low"]), float(row["return_ci_high"])
            label = row["variant"] if row["k"] == "" else f'{row["variant"]}'
            ax.errorbar([v], [y], yerr=[[y - lo], [hi - y]], fmt="o",
                        capsize=3, label=label)
            markers += 1
        if markers:
            ax.legend(fontsize=6, ncol=2)
        _finish(fig, ax, spec, "Variability vs return")
    return {"markers": markers, "rows": len(rows)}


def _render_variance_bars(spec: FigureSpec) -> dict:
    rows = [r for p in spec.inputs for r in read_rows(p, spec.kind)]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        labels = [f'{r["variant"]}/m{r["mdp_seed"]}' for r in rows]
        heights = [float(r["variability"]) for r in rows]
        ax.bar(np.arange(len(rows)), heights)
        ax.set_xticks(np.arange(len(rows)))
        ax.set_xticklabels(labels, rotation=75, fontsize=5)
        ax.set_ylabel("inter-run variability V")
        _finish(fig, ax, spec, "Variability by temperature schedule")
    return {"bars": len(rows), "rows": len(rows)}


def _render_toy_panels(spec: FigureSpec) -> dict:
    rows = [r for p in spec.inputs for r in read_rows(p, spec.kind)]
    groups: dict[int, list[dict]] = {}
    for row in rows:
        groups.setdefault(int(row["step"]), []).append(row)
    steps = sorted(groups)
    n = max(len(steps), 1)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, n, figsize=(3 * n, 3), squeeze=False,
                                 sharey=True)
        for ax, step in zip(axes[0], steps):
            grp = groups[step]
            grid = np.array([float(r["grid_point"]) for r in grp])
            order = np.argsort(grid)
            grid = grid[order]
            q_min = np.array([float(r["q_min"]) for r in grp])[order]
            dens = np.array([float(r["policy_density"]) for r in grp])[order]
            ax.plot(grid, q_min, label="min(Q1, Q2)")
            twin = ax.twinx()
            twin.plot(grid, dens, color="tab:orange", alpha=0.7, label="pi(a)")
            twin.set_yticks([])
            ax.set_title(f"step {step} (alpha={float(grp[0]['alpha']):g})",
                         fontsize=7)
            ax.set_xlabel("action")
        if not steps:
            axes[0][0].set_xlabel("action")
        axes[0][0].set_ylabel("Q value")
        _finish(fig, axes[0].tolist(), spec, "Q landscape and policy evolution")
    return {"panels": len(steps), "rows": len(rows)}


def _render_training_curves(spec: FigureSpec) -> dict:
    rows = [r for p in spec.inputs for r in read_rows(p, spec.kind)]
    series: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        series.setdefault((row["mdp_seed"], row["variant"]), []).append(row)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (mdp_seed, variant), pts in sorted(series.items()):
            pts = sorted(pts, key=lambda r: int(r["step"]))
            x = [int(r["step"]) for r in pts]
            y = [float(r["return_iqm"]) for r in pts]
            lo = [float(r["return_ci_low"]) for r in pts]
            hi = [float(r["return_ci_high"]) for r in pts]
            line, = ax.plot(x, y, label=f"{variant}/m{mdp_seed}")
            ax.fill_between(x, lo, hi, alpha=0.2, color=line.get_color())
        ax.set_xlabel("training step")
        ax.set_ylabel("greedy return (IQM, 95% CI)")
        if series:
            ax.legend(fontsize=5, ncol=2)
        _finish(fig, ax, spec, "Training curves")
    return {"curves": len(series), "rows": len(rows)}


def _render_correlation_scatter(spec: FigureSpec) -> dict:
    rows = [r for p in spec.inputs for r in read_rows(p, spec.kind)]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        x = [float(r["early_disagreement"]) for r in rows]
        y = [float(r["cross_seed_dispersion"]) for r in rows]
        ax.scatter(x, y)
        for row, xi, yi in zip(rows, x, y):
            ax.annotate(row["mdp_index"], (xi, yi), fontsize=6,
                        textcoords="offset points", xytext=(3, 3))
        ax.set_xlabel("early double-critic disagreement")
        ax.set_ylabel("cross-seed value dispersion")
        _finish(fig, ax, spec, "Disagreement predicts dispersion")
    return {"markers": len(rows), "rows": len(rows)}


_RENDERERS = {
    "kl-return-scatter": _render_kl_return,
    "variance-bars": _render_variance_bars,
    "toy-panels": _render_toy_panels,
    "training-curves": _render_training_curves,
    "correlation-scatter": _render_correlation_scatter,
}


def render(spec: FigureSpec) -> dict:
    """Draw the figure and return element counts, e.g. {"markers": 12, ...}."""
    counts = _RENDERERS[spec.kind](spec)
    counts["output"] = spec.output
    return counts
