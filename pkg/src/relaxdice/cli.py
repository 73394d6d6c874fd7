"""Command-line front end: gen-data, train, eval, sweep, verify.

Every option can come from a flat `key = value` config file (via --config)
instead of a flag; explicit flags win over the file, the file wins over
defaults.  Keys use underscores or dashes interchangeably and `#` starts a
comment.  List-valued options (alphas, seeds, levels, variants, baselines,
etas, hidden) are comma separated in both forms.

gen-data  writes a benchmark cell's expert/union datasets, an env.json
          sidecar describing the gridworld, and optionally the MDP container.
train     fits a dual on two dataset files and saves the solution directory.
eval      scores a saved solution on the env.json gridworld.
sweep     runs the benchmark grid and writes scores.csv, meta.json, plots.
verify    runs the numeric consistency battery; nonzero exit on failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .datasets import load_dataset, load_mdp, save_mdp
from .experiments import (
    ExperimentConfig,
    ResultRow,
    SweepConfig,
    build_env,
    normalized_score,
    reference_returns,
    run_sweep,
    save_benchmark_datasets,
    write_scores_csv,
)
from .extraction import extract_policy
from .mdp import exact_return
from .solver import SolverConfig, load_solution, save_solution, solve
from .verification import run_battery

GEN_DEFAULTS = {
    "width": 10, "height": 10, "slip": 0.1, "gamma": 0.99,
    "expert_temperature": 0.4, "level": "L2", "num_random": 8000,
    "seed": 0, "save_mdp": False,
}
TRAIN_DEFAULTS = {
    "variant": "relaxdice", "alpha": 0.2, "beta": 2.0, "beta_mode": "fixed",
    "estimator": "exact-tabular", "smoothing": 0.5, "mode": "auto",
    "steps": 5000, "batch_size": 256, "lr": 3e-4, "gp_coefficient": 1e-4,
    "hidden": "256,256", "seed": 0, "max_iters": 300, "grad_tol": 1e-8,
    "record_weight_trace": False,
}
SWEEP_DEFAULTS = {
    "width": 10, "height": 10, "slip": 0.1, "gamma": 0.99,
    "expert_temperature": 0.4, "num_random": 8000, "smoothing": 0.5,
    "beta": 2.0, "beta_mode": "fixed", "estimator": "exact-tabular",
    "alphas": "0.05,0.1,0.2,0.3,0.4,0.5",
    "variants": "relaxdice,relaxdice-drc,demodice-limit",
    "baselines": "", "etas": "0.5", "levels": "L2", "seeds": "0,1,2",
    "timings": False, "no_plots": False, "quiet": False,
}
VERIFY_DEFAULTS = {"fast": False, "seed": 0}


def read_config_file(path) -> dict[str, str]:
    """Flat key = value lines; '#' comments; dashes fold to underscores."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(raw: str, default):
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def resolve_options(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flag > config-file > default for every known option."""
    file_values: dict[str, str] = {}
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        unknown = sorted(set(file_values) - set(defaults))
        if unknown:
            raise ValueError(
                f"unknown config keys {unknown}; known: {sorted(defaults)}")
    merged = {}
    for key, default in defaults.items():
        from_cli = getattr(args, key, None)
        if from_cli is not None:
            merged[key] = from_cli
        elif key in file_values:
            merged[key] = _coerce(file_values[key], default)
        else:
            merged[key] = default
    return merged


def _add_options(parser: argparse.ArgumentParser, defaults: dict) -> None:
    parser.add_argument("--config", help="flat key = value options file")
    for key, default in defaults.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            parser.add_argument(flag, action="store_true", default=None,
                                help="(default: off)")
        else:
            parser.add_argument(flag, type=type(default), default=None,
                                help=f"(default: {default})")


def _floats(csv: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in csv.split(",") if tok.strip())


def _ints(csv: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in csv.split(",") if tok.strip())


def _names(csv: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in csv.split(",") if tok.strip())


def _write_env_json(path, config: ExperimentConfig, refs) -> None:
    payload = {
        "env": config.env_name,
        "width": config.width,
        "height": config.height,
        "slip": config.slip,
        "gamma": config.gamma,
        "expert_temperature": config.expert_temperature,
        "level": config.level,
        "seed": config.seed,
        "references": {"random": refs[0], "expert": refs[1]},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_gen_data(args: argparse.Namespace) -> int:
    opts = resolve_options(args, GEN_DEFAULTS)
    config = ExperimentConfig(
        width=opts["width"], height=opts["height"], slip=opts["slip"],
        gamma=opts["gamma"], expert_temperature=opts["expert_temperature"],
        level=opts["level"], num_random=opts["num_random"], seed=opts["seed"])
    paths = save_benchmark_datasets(config, args.out)
    grid = build_env(config)
    refs = reference_returns(grid)
    env_path = os.path.join(args.out, "env.json")
    _write_env_json(env_path, config, refs)
    print(f"expert dataset: {paths['expert']}")
    print(f"union dataset:  {paths['union']}")
    print(f"environment:    {env_path}")
    if opts["save_mdp"]:
        mdp_path = os.path.join(args.out, f"{config.env_name}.rdxm")
        save_mdp(grid.mdp, mdp_path)
        print(f"mdp container:  {mdp_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    opts = resolve_options(args, TRAIN_DEFAULTS)
    expert = load_dataset(args.expert)
    union = load_dataset(args.union)
    mdp = load_mdp(args.mdp) if args.mdp else None
    config = SolverConfig(
        variant=opts["variant"], alpha=opts["alpha"], beta=opts["beta"],
        beta_mode=opts["beta_mode"], estimator=opts["estimator"],
        smoothing=opts["smoothing"], mode=opts["mode"], steps=opts["steps"],
        batch_size=opts["batch_size"], lr=opts["lr"],
        gp_coefficient=opts["gp_coefficient"],
        hidden=_ints(opts["hidden"]), seed=opts["seed"],
        max_iters=opts["max_iters"], grad_tol=opts["grad_tol"],
        record_weight_trace=opts["record_weight_trace"])
    solution = solve(config, expert, union, mdp=mdp)
    if union.space.kind == "tabular":
        solution.policy = extract_policy(solution, union)
    save_solution(solution, args.out)
    print(f"saved solution to {args.out}")
    print(f"converged={solution.converged} iterations={len(solution.trace)} "
          f"final_grad_norm={solution.final_grad_norm:.3e} "
          f"beta_used={solution.beta_used:.6g}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_solution(args.solution)
    with open(args.env) as fh:
        env = json.load(fh)
    config = ExperimentConfig(
        width=env["width"], height=env["height"], slip=env["slip"],
        gamma=env["gamma"], expert_temperature=env["expert_temperature"],
        level=env.get("level", "L2"), seed=env.get("seed", 0))
    grid = build_env(config)
    refs = reference_returns(grid)
    if checkpoint.policy is None:
        raise ValueError("the solution directory has no saved policy")
    raw = exact_return(grid.mdp, checkpoint.policy, grid.reward)
    score = normalized_score(raw, refs[0], refs[1])
    print(f"raw_return={raw:.6f}")
    print(f"normalized_score={score:.6f}")
    if args.csv:
        row = ResultRow(
            env=env.get("env", config.env_name), level=config.level,
            variant=checkpoint.config.variant, alpha=checkpoint.config.alpha,
            beta_mode=checkpoint.config.beta_mode, seed=checkpoint.config.seed,
            raw_return=raw, normalized_score=score, wall_seconds=0.0)
        write_scores_csv(args.csv, [row])
        print(f"wrote {args.csv}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    opts = resolve_options(args, SWEEP_DEFAULTS)
    base = ExperimentConfig(
        width=opts["width"], height=opts["height"], slip=opts["slip"],
        gamma=opts["gamma"], expert_temperature=opts["expert_temperature"],
        num_random=opts["num_random"], smoothing=opts["smoothing"],
        beta=opts["beta"], beta_mode=opts["beta_mode"],
        estimator=opts["estimator"])
    sweep = SweepConfig(
        base=base,
        alphas=_floats(opts["alphas"]),
        variants=_names(opts["variants"]),
        baselines=_names(opts["baselines"]),
        etas=_floats(opts["etas"]),
        levels=_names(opts["levels"]),
        seeds=_ints(opts["seeds"]))
    progress = None
    if not opts["quiet"]:
        progress = lambda row: print(row.csv_line(record_timings=True))
    rows = run_sweep(sweep, args.out, record_timings=opts["timings"],
                     make_plots=not opts["no_plots"], progress=progress)
    print(f"wrote {len(rows)} rows to {os.path.join(args.out, 'scores.csv')}")
    for level in sweep.levels:
        for variant in sweep.variants + sweep.baselines:
            scores = [r.normalized_score for r in rows
                      if r.level == level and r.variant == variant]
            if scores:
                print(f"  {level} {variant:16s} mean {np.mean(scores):7.2f} "
                      f"over {len(scores)} runs")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    opts = resolve_options(args, VERIFY_DEFAULTS)
    results = run_battery(fast=opts["fast"], seed=opts["seed"])
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaxdice",
        description="occupancy-matching imitation from mixed-quality data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write one benchmark cell's datasets")
    p.add_argument("--out", required=True, help="output directory")
    _add_options(p, GEN_DEFAULTS)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a dual on dataset files")
    p.add_argument("--expert", required=True, help="expert dataset (.rdx)")
    p.add_argument("--union", required=True, help="union dataset (.rdx)")
    p.add_argument("--out", required=True, help="solution output directory")
    p.add_argument("--mdp", help="MDP container (.rdxm) for the exact estimator")
    _add_options(p, TRAIN_DEFAULTS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved solution")
    p.add_argument("--solution", required=True, help="solution directory")
    p.add_argument("--env", required=True, help="env.json from gen-data")
    p.add_argument("--csv", help="also write a one-row scores CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the benchmark grid")
    p.add_argument("--out", required=True, help="output directory")
    _add_options(p, SWEEP_DEFAULTS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="numeric consistency battery")
    _add_options(p, VERIFY_DEFAULTS)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
