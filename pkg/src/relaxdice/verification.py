"""Self-contained consistency battery behind the `verify` command.

Each check recomputes a quantity two independent ways (closed form against
grid search, analytic gradient against finite differences, dual optimum
against the primal at the induced occupancy, sampler frequencies against the
exact occupancy) and reports the measured discrepancy with its tolerance.
The battery is the fast field version of the test suite: something to run
after an install or on new hardware to catch numeric drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .divergence import (
    Generator,
    RelaxedDivergenceSpec,
    f_divergence,
    relaxed_f_divergence,
)
from .mdp import (
    TabularPolicy,
    occupancy_of_policy,
    random_mdp,
    sample_trajectories,
)
from .oracles import GridSpec, central_difference, grid_argmax_weight, grid_argmax_weight_drc
from .solver import (
    SolverConfig,
    build_tabular_problem,
    closed_form_weight,
    closed_form_weight_demodice,
    closed_form_weight_drc,
    solve,
    tabular_loss,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return (f"[{status}] {self.name}: measured {self.measured:.3e} "
                f"<= tol {self.tolerance:.1e}{extra}")


def _check_closed_form_grid(rng: np.random.Generator, n: int) -> CheckResult:
    spec = GridSpec(points=20000)
    worst = 0.0
    for _ in range(n):
        e = rng.uniform(-5.0, 8.0)
        alpha = rng.uniform(0.01, 2.0)
        beta = rng.uniform(1.001, 10.0)
        w_grid, _ = grid_argmax_weight(e, alpha, beta, spec)
        res = closed_form_weight(np.array([e]), alpha, beta)
        worst = max(worst, abs(res.omega[0] - w_grid) / max(w_grid, 1e-12))
    return CheckResult("closed-form weight vs grid search", worst <= 1e-3,
                       worst, 1e-3, f"{n} tuples")


def _check_closed_form_grid_drc(rng: np.random.Generator, n: int) -> CheckResult:
    spec = GridSpec(points=20000)
    worst = 0.0
    for _ in range(n):
        e = rng.uniform(-5.0, 8.0)
        log_r = rng.uniform(-3.0, 3.0)
        alpha = rng.uniform(0.01, 2.0)
        beta = rng.uniform(1.001, 10.0)
        w_grid, _ = grid_argmax_weight_drc(e, log_r, alpha, beta, spec)
        res = closed_form_weight_drc(np.array([e]), np.array([log_r]), alpha, beta)
        worst = max(worst, abs(res.omega[0] - w_grid) / max(w_grid, 1e-12))
    return CheckResult("ratio-corrected weight vs grid search", worst <= 1e-3,
                       worst, 1e-3, f"{n} tuples")


def _check_threshold(rng: np.random.Generator, n: int) -> CheckResult:
    worst = 0.0
    for _ in range(n):
        alpha = rng.uniform(0.05, 1.5)
        beta = rng.uniform(1.05, 6.0)
        e_thr = (1.0 + alpha) * (np.log(beta) + 1.0)
        for eps in (0.0, 1e-9, -1e-9):
            res = closed_form_weight(np.array([e_thr + eps]), alpha, beta)
            worst = max(worst, abs(res.omega[0] - beta))
    return CheckResult("branch continuity at the threshold", worst <= 1e-6,
                       worst, 1e-6)


def _check_drc_reduction(rng: np.random.Generator, n: int) -> CheckResult:
    e = rng.uniform(-5.0, 8.0, size=n)
    alpha = 0.3
    beta = 2.0
    plain = closed_form_weight(e, alpha, beta)
    corrected = closed_form_weight_drc(e, np.zeros(n), alpha, beta)
    worst = float(max(np.max(np.abs(plain.omega - corrected.omega)),
                      np.max(np.abs(plain.value - corrected.value))))
    return CheckResult("correction vanishes at unit ratio", worst <= 1e-12,
                       worst, 1e-12)


def _check_demodice_branch(rng: np.random.Generator, n: int) -> CheckResult:
    e = rng.uniform(-5.0, 8.0, size=n)
    alpha = 0.2
    res = closed_form_weight_demodice(e, alpha)
    expected = np.exp(e / (1.0 + alpha) - 1.0)
    worst = float(np.max(np.abs(res.omega - expected)))
    passed = worst <= 1e-12 and bool(res.upper.all())
    return CheckResult("limit variant stays on the generator branch",
                       passed, worst, 1e-12)


def _check_zero_iff(rng: np.random.Generator, n: int) -> CheckResult:
    worst = 0.0
    ok = True
    for _ in range(n):
        k = int(rng.integers(3, 8))
        q = rng.dirichlet(np.ones(k))
        p = rng.dirichlet(np.ones(k))
        max_ratio = float(np.max(p / q))
        spec_loose = RelaxedDivergenceSpec(beta=max_ratio + 0.5)
        spec_exact = RelaxedDivergenceSpec(beta=max(max_ratio, 1.0 + 1e-9))
        loose = relaxed_f_divergence(spec_loose, p, q)
        exact = relaxed_f_divergence(spec_exact, p, q)
        worst = max(worst, abs(loose), abs(exact))
        if max_ratio > 1.0 + 1e-6:
            tight = RelaxedDivergenceSpec(beta=1.0 + (max_ratio - 1.0) * 0.5)
            if relaxed_f_divergence(tight, p, q) <= 0.0:
                ok = False
        if f_divergence(Generator.KL, p, q) < 0.0:
            ok = False
    return CheckResult("relaxed divergence zero exactly up to the bound",
                       ok and worst <= 1e-12, worst, 1e-12)


def _duality_datasets(seed: int):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(5, 3, 0.9, seed=seed + 17, deterministic_start=True)
    logits = rng.normal(0.0, 1.0, (5, 3))
    pe = np.exp(logits)
    pe /= pe.sum(axis=1, keepdims=True)
    pe = 0.8 * pe + 0.2 / 3.0
    expert = sample_trajectories(mdp, TabularPolicy(pe), num_steps=6000,
                                 seed=seed + 1)
    behavior = sample_trajectories(mdp, TabularPolicy(0.5 * pe + 0.5 / 3.0),
                                   num_steps=12000, seed=seed + 2)
    return mdp, expert, behavior


def _check_duality(seed: int) -> CheckResult:
    mdp, expert, behavior = _duality_datasets(seed)
    config = SolverConfig(alpha=0.2, beta=2.0, smoothing=0.0)
    solution = solve(config, expert, behavior, mdp=mdp)
    s, a = mdp.num_states, mdp.num_actions
    d_u = np.zeros((s, a))
    np.add.at(d_u, (behavior.states, behavior.actions), 1.0)
    d_u /= d_u.sum()
    d_e = np.zeros((s, a))
    np.add.at(d_e, (expert.states, expert.actions), 1.0)
    d_e /= d_e.sum()
    candidate = solution.weight_table * d_u
    spec = RelaxedDivergenceSpec(beta=config.beta)
    primal = (-f_divergence(Generator.KL, candidate, d_e)
              - config.alpha * relaxed_f_divergence(spec, candidate, d_u))
    gap = abs(primal - solution.trace[-1].loss)
    return CheckResult("dual optimum equals primal at induced occupancy",
                       gap <= 1e-8, gap, 1e-8)


def _check_loss_gradient(seed: int) -> CheckResult:
    mdp, expert, behavior = _duality_datasets(seed)
    config = SolverConfig(alpha=0.2, beta=2.0, smoothing=0.0)
    problem = build_tabular_problem(expert, behavior, config, mdp=mdp)
    rng = np.random.default_rng(seed)
    v = rng.normal(0.0, 1.0, mdp.num_states)
    res = tabular_loss(v, problem, config, config.beta)
    worst = 0.0
    for i in range(mdp.num_states):
        def slice_loss(x, i=i):
            probe = v.copy()
            probe[i] = x
            return tabular_loss(probe, problem, config, config.beta,
                                need_grad=False).loss
        fd = central_difference(slice_loss, v[i])
        worst = max(worst, abs(res.grad[i] - fd) / max(abs(fd), 1e-8))
    return CheckResult("dual gradient vs finite differences", worst <= 1e-5,
                       worst, 1e-5)


def _check_sampler(seed: int, num_steps: int, tol: float) -> CheckResult:
    mdp = random_mdp(4, 2, 0.9, seed=seed + 3)
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(2), size=4)
    policy = TabularPolicy(probs)
    exact = occupancy_of_policy(mdp, policy)
    data = sample_trajectories(mdp, policy, num_steps=num_steps, seed=seed + 4)
    emp = np.zeros((4, 2))
    np.add.at(emp, (data.states, data.actions), 1.0)
    emp /= emp.sum()
    l1 = float(np.abs(emp - exact.d).sum())
    return CheckResult("rollout frequencies vs exact occupancy", l1 <= tol,
                       l1, tol, f"{num_steps} steps")


def run_battery(fast: bool = False, seed: int = 0) -> list[CheckResult]:
    """All checks; `fast` trims the sampled counts for a quick smoke run."""
    rng = np.random.default_rng(seed)
    n_grid = 20 if fast else 120
    n_alg = 200 if fast else 2000
    results = [
        _check_closed_form_grid(rng, n_grid),
        _check_closed_form_grid_drc(rng, n_grid),
        _check_threshold(rng, 10 if fast else 50),
        _check_drc_reduction(rng, n_alg),
        _check_demodice_branch(rng, n_alg),
        _check_zero_iff(rng, 20 if fast else 100),
        _check_duality(seed),
        _check_loss_gradient(seed),
        _check_sampler(seed, 100_000 if fast else 1_000_000,
                       0.05 if fast else 0.02),
    ]
    return results
