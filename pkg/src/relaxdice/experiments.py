"""Gridworld benchmark harness: data generation, training, scoring, sweeps.

The benchmark mirrors the limited-expert setting the solvers target.  Per
seed, an expert pool and a uniform-random pool are rolled out on a slippery
gridworld; a mixture level (L1 highest expert share down to L4 lowest) fixes
how many expert records enter the union dataset, and the standalone expert
dataset is exactly those records.  Each method trains on (expert, union),
the resulting policy is scored by its exact discounted return, and scores
are normalized so random is 0 and the data-generating expert is 100.

Result rows serialize to a fixed nine-column CSV.  For the eta-mixture
cloning baselines the `alpha` column carries eta, their single strength
knob.  Wall-clock times are measured but written as 0.000 unless timings
are requested, so repeated runs of the same configuration are byte
identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datasets import (
    TransitionDataset,
    mix_datasets,
    mix_spec_for_level,
    save_dataset,
)
from .extraction import bc_drc_eta, bc_eta, extract_policy
from .mdp import (
    Gridworld,
    GridworldSpec,
    TabularPolicy,
    exact_return,
    make_gridworld,
    sample_trajectories,
)
from .solver import DiceSolution, SolverConfig, solve

DICE_VARIANTS = ("relaxdice", "relaxdice-drc", "demodice-limit")
BC_VARIANTS = ("bc", "bc-drc")
CSV_HEADER = ("env,level,variant,alpha,beta_mode,seed,"
              "raw_return,normalized_score,wall_seconds")
DEFAULT_ALPHAS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class ExperimentConfig:
    """One benchmark cell: environment, mixture level, method, seed."""

    width: int = 10
    height: int = 10
    slip: float = 0.1
    gamma: float = 0.99
    expert_temperature: float = 0.4
    level: str = "L2"
    num_random: int = 8000
    variant: str = "relaxdice"
    alpha: float = 0.2
    beta: float = 2.0
    beta_mode: str = "fixed"
    eta: float = 0.5
    smoothing: float = 0.5
    estimator: str = "exact-tabular"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in DICE_VARIANTS + BC_VARIANTS:
            raise ValueError(
                f"variant must be one of {DICE_VARIANTS + BC_VARIANTS}")

    @property
    def env_name(self) -> str:
        return f"grid{self.width}x{self.height}"

    def grid_spec(self) -> GridworldSpec:
        return GridworldSpec(
            width=self.width,
            height=self.height,
            slip=self.slip,
            gamma=self.gamma,
            expert_temperature=self.expert_temperature,
        )


@dataclass
class ResultRow:
    """One scored run, in CSV column order."""

    env: str
    level: str
    variant: str
    alpha: float
    beta_mode: str
    seed: int
    raw_return: float
    normalized_score: float
    wall_seconds: float

    def csv_line(self, record_timings: bool = False) -> str:
        wall = self.wall_seconds if record_timings else 0.0
        return (f"{self.env},{self.level},{self.variant},{self.alpha:.6g},"
                f"{self.beta_mode},{self.seed},{self.raw_return:.6f},"
                f"{self.normalized_score:.6f},{wall:.3f}")


@dataclass
class ExperimentResult:
    row: ResultRow
    policy: TabularPolicy
    solution: DiceSolution | None = None


def normalized_score(raw: float, random_ref: float, expert_ref: float) -> float:
    """100 (raw - random) / (expert - random); demands expert beats random."""
    if expert_ref <= random_ref:
        raise ValueError(
            f"reference returns are degenerate: expert {expert_ref} <= "
            f"random {random_ref}")
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)


def build_env(config: ExperimentConfig) -> Gridworld:
    return make_gridworld(config.grid_spec())


def generate_pools(
    config: ExperimentConfig, grid: Gridworld | None = None
) -> tuple[TransitionDataset, TransitionDataset]:
    """Expert and uniform-random rollout pools for this seed.

    The expert pool is sized at half the union target so level subsampling
    always has headroom; the random pool at the union target plus slack.
    """
    grid = grid if grid is not None else build_env(config)
    expert_steps = max(config.num_random // 2, 1000)
    random_steps = config.num_random + config.num_random // 4
    expert_pool = sample_trajectories(
        grid.mdp, grid.expert, num_steps=expert_steps, seed=config.seed * 1000 + 1)
    random_pool = sample_trajectories(
        grid.mdp, grid.uniform, num_steps=random_steps, seed=config.seed * 1000 + 2)
    expert_pool = replace(expert_pool, role="expert")
    return expert_pool, random_pool


def build_datasets(
    config: ExperimentConfig,
    grid: Gridworld | None = None,
    pools: tuple[TransitionDataset, TransitionDataset] | None = None,
) -> tuple[TransitionDataset, TransitionDataset]:
    """The (expert, union) pair for one cell.

    The expert dataset is the exact subsample that enters the union, so the
    mixture level controls both the contamination of the union and the size
    of the expert dataset, as in the limited-demonstration setting.
    """
    if pools is None:
        pools = generate_pools(config, grid)
    expert_pool, random_pool = pools
    spec = mix_spec_for_level(config.level, config.num_random)
    rng = np.random.default_rng(config.seed * 1000 + 3)
    chosen = rng.choice(len(expert_pool), size=spec.num_expert, replace=False)
    expert_ds = expert_pool.subset(np.sort(chosen))
    union = mix_datasets(expert_ds, random_pool, spec, seed=config.seed * 1000 + 4)
    return expert_ds, union


def solver_config_for(config: ExperimentConfig) -> SolverConfig:
    return SolverConfig(
        variant=config.variant,
        alpha=config.alpha,
        beta=config.beta,
        beta_mode=config.beta_mode,
        estimator=config.estimator,
        smoothing=config.smoothing,
        seed=config.seed,
    )


def run_experiment(
    config: ExperimentConfig,
    grid: Gridworld | None = None,
    datasets: tuple[TransitionDataset, TransitionDataset] | None = None,
    references: tuple[float, float] | None = None,
) -> ExperimentResult:
    """Train one method on one cell and score it exactly.

    `references` are the (random, expert) returns; pass them when scoring
    many cells on the same grid to avoid recomputing the solves.
    """
    grid = grid if grid is not None else build_env(config)
    if datasets is None:
        datasets = build_datasets(config, grid)
    expert_ds, union_ds = datasets
    if references is None:
        references = reference_returns(grid)
    random_ref, expert_ref = references
    solution = None
    started = time.perf_counter()
    with warnings.catch_warnings():
        # Sparse levels legitimately leave some states unvisited; the uniform
        # fallback is the intended behavior, not a per-cell alarm.
        warnings.simplefilter("ignore", RuntimeWarning)
        if config.variant == "bc":
            policy = bc_eta(expert_ds, union_ds, config.eta)
        elif config.variant == "bc-drc":
            policy = bc_drc_eta(
                expert_ds, union_ds, config.eta, smoothing=config.smoothing)
        else:
            solution = solve(
                solver_config_for(config), expert_ds, union_ds, mdp=grid.mdp)
            policy = extract_policy(solution, union_ds)
    wall = time.perf_counter() - started
    raw = exact_return(grid.mdp, policy, grid.reward)
    row = ResultRow(
        env=config.env_name,
        level=config.level,
        variant=config.variant,
        alpha=config.eta if config.variant in BC_VARIANTS else config.alpha,
        beta_mode=config.beta_mode if config.variant in DICE_VARIANTS else "fixed",
        seed=config.seed,
        raw_return=raw,
        normalized_score=normalized_score(raw, random_ref, expert_ref),
        wall_seconds=wall,
    )
    return ExperimentResult(row=row, policy=policy, solution=solution)


def reference_returns(grid: Gridworld) -> tuple[float, float]:
    """(random, expert) exact returns used for normalization."""
    random_ref = exact_return(grid.mdp, grid.uniform, grid.reward)
    expert_ref = exact_return(grid.mdp, grid.expert, grid.reward)
    return random_ref, expert_ref


def write_scores_csv(path, rows, record_timings: bool = False) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_line(record_timings=record_timings) + "\n")


def read_scores_csv(path) -> list[ResultRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected scores header: {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            rows.append(ResultRow(
                env=parts[0], level=parts[1], variant=parts[2],
                alpha=float(parts[3]), beta_mode=parts[4], seed=int(parts[5]),
                raw_return=float(parts[6]), normalized_score=float(parts[7]),
                wall_seconds=float(parts[8])))
    return rows


@dataclass
class SweepConfig:
    """A grid of benchmark cells sharing pools per (seed, level)."""

    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    variants: tuple[str, ...] = ("relaxdice", "relaxdice-drc", "demodice-limit")
    baselines: tuple[str, ...] = ()
    etas: tuple[float, ...] = (0.5,)
    levels: tuple[str, ...] = ("L2",)
    seeds: tuple[int, ...] = (0, 1, 2)


def sweep_digest(sweep: SweepConfig) -> str:
    """Stable identity of a sweep request, for the metadata sidecar."""
    payload = {
        "base": asdict(sweep.base),
        "alphas": list(sweep.alphas),
        "variants": list(sweep.variants),
        "baselines": list(sweep.baselines),
        "etas": list(sweep.etas),
        "levels": list(sweep.levels),
        "seeds": list(sweep.seeds),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def run_sweep(
    sweep: SweepConfig,
    out_dir,
    record_timings: bool = False,
    make_plots: bool = True,
    progress=None,
) -> list[ResultRow]:
    """Run the full grid, write scores.csv, meta.json, and per-level plots.

    Rollout pools are generated once per (seed, level) and shared by every
    method and every alpha, so methods differ only in what they do with the
    same data.  Rows come out in deterministic (level, seed, variant, knob)
    order.
    """
    os.makedirs(out_dir, exist_ok=True)
    grid = build_env(sweep.base)
    refs = reference_returns(grid)
    rows: list[ResultRow] = []
    for level in sweep.levels:
        for seed in sweep.seeds:
            cell = replace(sweep.base, level=level, seed=seed)
            pools = generate_pools(cell, grid)
            datasets = build_datasets(cell, grid, pools)
            for variant in sweep.variants:
                for alpha in sweep.alphas:
                    config = replace(cell, variant=variant, alpha=alpha)
                    result = run_experiment(config, grid, datasets, refs)
                    rows.append(result.row)
                    if progress is not None:
                        progress(result.row)
            for baseline in sweep.baselines:
                for eta in sweep.etas:
                    config = replace(cell, variant=baseline, eta=eta)
                    result = run_experiment(config, grid, datasets, refs)
                    rows.append(result.row)
                    if progress is not None:
                        progress(result.row)
    write_scores_csv(os.path.join(out_dir, "scores.csv"), rows,
                     record_timings=record_timings)
    meta = {
        "sweep_sha256": sweep_digest(sweep),
        "env": sweep.base.env_name,
        "rows": len(rows),
        "references": {"random": refs[0], "expert": refs[1]},
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if make_plots:
        for level in sweep.levels:
            plot_sweep_level(
                [r for r in rows if r.level == level],
                os.path.join(out_dir, f"sweep_{level}.png"),
                title=f"{sweep.base.env_name} {level}")
    return rows


def plot_sweep_level(rows: list[ResultRow], path, title: str = "") -> None:
    """Mean normalized score against the strength knob, one line per variant."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    variants = sorted({r.variant for r in rows})
    for variant in variants:
        sub = [r for r in rows if r.variant == variant]
        knobs = sorted({r.alpha for r in sub})
        means = [float(np.mean([r.normalized_score for r in sub if r.alpha == k]))
                 for k in knobs]
        if len(knobs) > 1:
            ax.plot(knobs, means, marker="o", label=variant)
        else:
            ax.axhline(means[0], linestyle="--", alpha=0.7,
                       label=f"{variant} (eta={knobs[0]:g})")
    ax.set_xlabel("alpha (eta for cloning baselines)")
    ax.set_ylabel("normalized score")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_benchmark_datasets(config: ExperimentConfig, out_dir) -> dict:
    """Materialize one cell's datasets to disk; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    grid = build_env(config)
    expert_ds, union_ds = build_datasets(config, grid)
    paths = {
        "expert": os.path.join(
            out_dir, f"{config.env_name}_{config.level}_seed{config.seed}_expert.rdx"),
        "union": os.path.join(
            out_dir, f"{config.env_name}_{config.level}_seed{config.seed}_union.rdx"),
    }
    save_dataset(expert_ds, paths["expert"])
    save_dataset(union_ds, paths["union"])
    return paths
