"""Experiment orchestration CLI.

Subcommands: verify-thm1, verify-thm2, coupled, tabular-qed, toy, report.
Config files are strict JSON: unknown keys are rejected with their key path.
Exit codes: 0 = all checks passed, 2 = checks ran with bound violations,
1 = operational failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .coupled import run_coupled
from .mdp import QTable, random_mdp
from .experiments import (run_convergence_suite, run_correlation_diagnostic,
                          run_kl_bound_suite, run_tabular_sweep,
                          run_toy_experiment, write_curve_summary,
                          write_sweep_summary)
from .temperature import QedConfig
from .toy import ToyConfig

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VIOLATIONS = 2

KINDS = ("verify-thm1", "verify-thm2", "coupled", "tabular-qed", "toy",
         "metrics-report")


class ConfigError(ValueError):
    pass


# Per-kind parameter schemas: key -> (type, default). A None default marks a
# required key.
_SCHEMAS = {
    "verify-thm1": {
        "num_tuples": (int, 1000),
        "num_actions_min": (int, 2),
        "num_actions_max": (int, 16),
        "q_low": (float, -10.0),
        "q_high": (float, 10.0),
        "kappa_low": (float, 0.01),
        "kappa_high": (float, 10.0),
        "alpha_min": (float, 0.01),
    },
    "verify-thm2": {
        "num_mdps": (int, 100),
        "max_states": (int, 20),
        "max_actions": (int, 5),
        "gammas": (list, [0.9, 0.95]),
        "iterations": (int, 200),
        "kappa": (float, 1.0),
        "alpha_min": (float, 0.01),
        "write_traces": (bool, False),
    },
    "coupled": {
        "num_states": (int, 10),
        "num_actions": (int, 4),
        "gamma": (float, 0.9),
        "kappa": (float, 1.0),
        "alpha_min": (float, 0.01),
        "iterations": (int, 200),
        "q_init_scale": (float, 2.0),
    },
    "tabular-qed": {
        "mdp_seeds": (list, [1, 2, 3, 4, 5]),
        "ks": (list, [0.1, 0.2, 0.4, 0.8]),
        "baseline_alpha": (float, 0.05),
        "num_states": (int, 10),
        "num_actions": (int, 4),
        "discount": (float, 0.9),
        "steps": (int, 800),
        "batch_size": (int, 32),
        "learning_rate": (float, 0.1),
        "alpha_max": (float, 2.0),
        "tau": (float, 0.9),
        "num_action_samples": (int, 8),
        "correlation_study": (bool, False),
        "correlation_num_mdps": (int, 12),
    },
    "toy": {
        "alpha_mode": (str, "fixed"),
        "alpha": (float, 0.1),
        "k": (float, 0.4),
        "tau": (float, 0.9),
        "num_action_samples": (int, 8),
        "alpha_max": (float, 0.2),
        "steps": (int, 2000),
        "batch_size": (int, 256),
        "lr": (float, 1e-3),
        "snapshot_every": (int, 100),
        "prefill_n": (int, 1000),
        "prefill_low": (float, -3.0),
        "prefill_high": (float, 0.0),
        "reward_mode": (str, "density"),
    },
    "metrics-report": {
        "run_dirs": (list, None),
    },
}

_POSITIVE_KEYS = {"num_tuples", "num_mdps", "iterations", "steps",
                  "batch_size", "kappa", "alpha_min", "baseline_alpha",
                  "learning_rate", "lr", "alpha", "k", "alpha_max",
                  "num_action_samples", "prefill_n", "snapshot_every"}


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    seeds: list[int]
    out_dir: str

    def canonical_json(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params,
                           "seeds": self.seeds, "out_dir": self.out_dir},
                          sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _validate_params(kind: str, raw: dict) -> dict:
    schema = _SCHEMAS[kind]
    params = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key 'params.{key}' for kind {kind!r}")
        expected, _ = schema[key]
        if expected is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, expected):
            raise ConfigError(f"'params.{key}' must be {expected.__name__}")
        if key in _POSITIVE_KEYS and isinstance(value, (int, float)) and value <= 0:
            raise ConfigError(f"'params.{key}' must be positive")
        params[key] = value
    for key, (expected, default) in schema.items():
        if key not in params:
            if default is None:
                raise ConfigError(f"missing required key 'params.{key}'")
            params[key] = default
    return params


def parse_config_dict(doc: dict) -> ExperimentConfig:
    allowed_top = {"kind", "params", "seeds", "out_dir"}
    for key in doc:
        if key not in allowed_top:
            raise ConfigError(f"unknown key '{key}'")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"'kind' must be one of {KINDS}, got {kind!r}")
    seeds = doc.get("seeds", [0])
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) for s in seeds)
            or len(set(seeds)) != len(seeds)):
        raise ConfigError("'seeds' must be a non-empty list of distinct integers")
    out_dir = doc.get("out_dir", ".")
    if not isinstance(out_dir, str):
        raise ConfigError("'out_dir' must be a string path")
    params = _validate_params(kind, doc.get("params", {}))
    return ExperimentConfig(kind=kind, params=params, seeds=list(seeds),
                            out_dir=out_dir)


def parse_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config_dict(doc)


def emit_canonical_config(config: ExperimentConfig) -> str:
    return config.canonical_json()


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    kind: str
    output_files: list[str] = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    violations: int = 0
    wall_clock_seconds: float = 0.0
    error: str | None = None

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump({
                "config_hash": self.config_hash,
                "code_version": self.code_version,
                "kind": self.kind,
                "output_files": self.output_files,
                "checks": self.checks,
                "violations": self.violations,
                "wall_clock_seconds": self.wall_clock_seconds,
                "error": self.error,
            }, fh, indent=2)
        return path


def run_experiment(config: ExperimentConfig) -> RunManifest:
    """Dispatch to the producing module, write artifacts, fill the manifest."""
    os.makedirs(config.out_dir, exist_ok=True)
    manifest = RunManifest(config_hash=config.config_hash(),
                           code_version=__version__, kind=config.kind)
    start = time.monotonic()
    p = config.params
    out = config.out_dir

    if config.kind == "verify-thm1":
        result = run_kl_bound_suite(
            num_tuples=p["num_tuples"], seed=config.seeds[0],
            num_actions_range=(p["num_actions_min"], p["num_actions_max"]),
            q_range=(p["q_low"], p["q_high"]),
            kappa_range=(p["kappa_low"], p["kappa_high"]),
            alpha_min=p["alpha_min"], keep_rows=True)
        path = os.path.join(out, "thm1.csv")
        with open(path, "w") as fh:
            fh.write("tuple_index,num_actions,kappa,kl_12,kl_21,kl_sym,bound\n")
            for row in result.rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")
        manifest.output_files.append(path)
        manifest.checks = {
            "satisfied": result.num_tuples - result.violations,
            "total": result.num_tuples,
            "max_kl_over_bound": result.max_ratio,
        }
        manifest.violations = result.violations

    elif config.kind == "verify-thm2":
        trace_dir = out if p["write_traces"] else None
        result = run_convergence_suite(
            num_mdps=p["num_mdps"], seed=config.seeds[0],
            max_states=p["max_states"], max_actions=p["max_actions"],
            gammas=tuple(p["gammas"]), iterations=p["iterations"],
            kappa=p["kappa"], alpha_min=p["alpha_min"], out_dir=trace_dir)
        if trace_dir:
            manifest.output_files.extend(
                os.path.join(out, f"coupled_trace_{i:03d}.csv")
                for i in range(p["num_mdps"]))
        manifest.checks = {
            "bound_violations": result.total_bound_violations,
            "contraction_violations": result.total_contraction_violations,
            "kl_violations": result.total_kl_violations,
            "num_mdps": len(result.cases),
        }
        manifest.violations = (result.total_bound_violations
                               + result.total_contraction_violations
                               + result.total_kl_violations)

    elif config.kind == "coupled":
        rng = np.random.default_rng(config.seeds[0])
        mdp = random_mdp(p["num_states"], p["num_actions"], p["gamma"], rng)
        shape = (p["num_states"], p["num_actions"])
        q1 = QTable(rng.uniform(-p["q_init_scale"], p["q_init_scale"], shape))
        q2 = QTable(rng.uniform(-p["q_init_scale"], p["q_init_scale"], shape))
        trace = run_coupled(mdp, q1, q2, p["kappa"], p["alpha_min"],
                            p["iterations"])
        path = os.path.join(out, "coupled_trace.csv")
        trace.to_csv(path)
        manifest.output_files.append(path)
        viol = sum(1 for t in range(len(trace))
                   if trace.err_run1[t] > trace.bound_run1[t] + 1e-9
                   or trace.err_run2[t] > trace.bound_run2[t] + 1e-9)
        manifest.checks = {"bound_violations": viol, "rows": len(trace)}
        manifest.violations = viol

    elif config.kind == "tabular-qed":
        result = run_tabular_sweep(
            mdp_seeds=[int(s) for s in p["mdp_seeds"]], seeds=config.seeds,
            ks=[float(k) for k in p["ks"]],
            baseline_alpha=p["baseline_alpha"], num_states=p["num_states"],
            num_actions=p["num_actions"], discount=p["discount"],
            steps=p["steps"], batch_size=p["batch_size"],
            learning_rate=p["learning_rate"], alpha_max=p["alpha_max"],
            tau=p["tau"], num_action_samples=p["num_action_samples"],
            out_dir=out)
        summary_path = write_sweep_summary(result, out)
        manifest.output_files.append(summary_path)
        manifest.output_files.append(os.path.join(out, "summary.json"))
        manifest.output_files.append(write_curve_summary(result, out))
        direction_ok = sum(
            1 for ms in result.mdp_seeds()
            if result.variability_by_k(ms).get(0.2, float("inf"))
            < result.baseline_variability(ms)
            and result.spearman_k_vs_variability(ms) > 0)
        manifest.checks = {
            "mdps_with_expected_direction": direction_ok,
            "num_mdps": len(result.mdp_seeds()),
        }
        if p["correlation_study"]:
            study = run_correlation_diagnostic(
                num_mdps=p["correlation_num_mdps"], out_dir=out)
            manifest.output_files.append(
                os.path.join(out, "correlation_scatter.csv"))
            manifest.checks["correlation_r"] = study.r
            manifest.checks["correlation_r_squared"] = study.r_squared

    elif config.kind == "toy":
        qed = None
        if p["alpha_mode"] == "qed":
            qed = QedConfig(k=p["k"], tau=p["tau"],
                            num_action_samples=p["num_action_samples"],
                            alpha_max=p["alpha_max"], action_dim=1)
        base = ToyConfig(alpha_mode=p["alpha_mode"], alpha=p["alpha"],
                         qed=qed, steps=p["steps"],
                         batch_size=p["batch_size"], lr=p["lr"],
                         snapshot_every=p["snapshot_every"],
                         prefill_n=p["prefill_n"],
                         prefill_low=p["prefill_low"],
                         prefill_high=p["prefill_high"],
                         reward_mode=p["reward_mode"])
        result = run_toy_experiment(p["alpha"], config.seeds, config=base,
                                    out_dir=out)
        manifest.output_files.extend(
            os.path.join(out, f"toy_alpha{p['alpha']:g}_seed{s}.csv")
            for s in config.seeds)
        manifest.checks = {
            "final_means": result.final_means,
            "successes": result.successes,
            "num_seeds": len(config.seeds),
        }

    elif config.kind == "metrics-report":
        from .report import metrics_report
        paths = metrics_report([str(d) for d in p["run_dirs"]], out)
        manifest.output_files.extend(paths)

    manifest.wall_clock_seconds = time.monotonic() - start
    for path in manifest.output_files:
        if not (os.path.exists(path) and os.path.getsize(path) > 0):
            raise RuntimeError(f"declared output file missing or empty: {path}")
    manifest.write(out)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="maxentlab",
        description="Verification and experiment harness for "
                    "disagreement-scaled maximum-entropy RL.")
    sub = parser.add_subparsers(dest="command", required=True)
    names = {"verify-thm1": "verify-thm1", "verify-thm2": "verify-thm2",
             "coupled": "coupled", "tabular-qed": "tabular-qed",
             "toy": "toy", "report": "metrics-report"}
    for cmd in names:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="JSON config path")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seeds", default=None,
                        help="comma-separated seed list")
        sp.add_argument("--parallel", type=int, default=1,
                        help="accepted for interface compatibility; cells "
                             "run sequentially for determinism")
        if cmd == "report":
            sp.add_argument("run_dirs", nargs="*", default=[])

    args = parser.parse_args(argv)
    kind = names[args.command]
    try:
        if args.config is not None:
            config = parse_config(args.config)
            if config.kind != kind:
                raise ConfigError(f"config kind {config.kind!r} does not match "
                                  f"subcommand {args.command!r}")
        else:
            doc = {"kind": kind}
            if kind == "metrics-report":
                doc["params"] = {"run_dirs": list(args.run_dirs)}
            config = parse_config_dict(doc)
        if args.out is not None:
            config.out_dir = args.out
        if args.seeds is not None:
            config.seeds = [int(s) for s in args.seeds.split(",")]
            if len(set(config.seeds)) != len(config.seeds):
                raise ConfigError("--seeds must be distinct")
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    try:
        manifest = run_experiment(config)
    except Exception as exc:  # operational failure -> exit 1
        os.makedirs(config.out_dir, exist_ok=True)
        RunManifest(config_hash=config.config_hash(), code_version=__version__,
                    kind=config.kind, error=str(exc)).write(config.out_dir)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    print(json.dumps(manifest.checks, indent=2))
    if manifest.violations > 0:
        print(f"{manifest.violations} bound violation(s)", file=sys.stderr)
        return EXIT_VIOLATIONS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
