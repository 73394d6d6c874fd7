"""Closed-form inner maxima, the tabular dual solve, and its duality gap."""

import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from relaxdice.divergence import (
    Generator,
    RelaxedDivergenceSpec,
    f_divergence,
    relaxed_f_divergence,
)
from relaxdice.mdp import (
    TabularPolicy,
    flow_residual,
    random_mdp,
    sample_trajectories,
)
from relaxdice.oracles import grid_argmax_weight, grid_argmax_weight_drc, GridSpec
from relaxdice.ratio import pair_counts, tabular_ratio
from relaxdice.solver import (
    DEMODICE_BETA,
    AutoBetaState,
    SolverConfig,
    advantage_exact,
    advantage_sampled,
    auto_beta_update,
    build_tabular_problem,
    closed_form_weight,
    closed_form_weight_demodice,
    closed_form_weight_drc,
    continuity_constant,
    flow_operator,
    inner_weight,
    load_solution,
    save_solution,
    solve,
    tabular_loss,
)


def _mixture_policy(rng, num_states, num_actions, mix=0.3):
    probs = rng.dirichlet(np.ones(num_actions), size=num_states)
    return TabularPolicy((1.0 - mix) * probs + mix / num_actions)


def _sampled_pair(seed=0, num_states=5, num_actions=3, gamma=0.9,
                  n_expert=6000, n_behavior=12000):
    mdp = random_mdp(num_states, num_actions, gamma, seed=seed,
                     deterministic_start=True)
    rng = np.random.default_rng(seed + 100)
    expert_pi = _mixture_policy(rng, num_states, num_actions)
    behavior_pi = TabularPolicy(
        0.5 * expert_pi.probs + 0.5 / num_actions)
    expert = sample_trajectories(mdp, expert_pi, n_expert, seed=seed + 1)
    behavior = sample_trajectories(mdp, behavior_pi, n_behavior, seed=seed + 2)
    expert = dataclasses.replace(expert, role="expert")
    behavior = dataclasses.replace(behavior, role="behavior")
    return mdp, expert, behavior


# --- pointwise closed forms -------------------------------------------------

def test_frozen_closed_form_values():
    r = closed_form_weight(np.array([3.0]), 0.2, 2.0)
    assert_allclose(r.omega[0], 4.4816890703380645, rtol=1e-14)
    assert_allclose(r.value[0], 5.316656320517666, rtol=1e-14)
    assert r.upper[0]
    r = closed_form_weight(np.array([1.0]), 0.2, 2.0)
    assert_allclose(r.omega[0], 0.712746518279897, rtol=1e-14)
    assert_allclose(r.value[0], 1.0513759543918861, rtol=1e-14)
    assert not r.upper[0]
    r = closed_form_weight_drc(np.array([3.0]), np.array([math.log(4.0)]), 0.2, 2.0)
    assert_allclose(r.omega[0], 5.26652400788766, rtol=1e-14)
    assert_allclose(r.value[0], 6.621041752335616, rtol=1e-14)


def test_closed_form_matches_grid_oracle():
    rng = np.random.default_rng(0)
    grid = GridSpec(points=20000)
    for _ in range(20):
        e = rng.uniform(-5.0, 8.0)
        alpha = rng.uniform(0.01, 2.0)
        beta = rng.uniform(1.0001, 10.0)
        w_ref, h_ref = grid_argmax_weight(e, alpha, beta, grid)
        got = closed_form_weight(np.array([e]), alpha, beta)
        assert_allclose(got.omega[0], w_ref, rtol=1e-3)
        assert got.value[0] >= h_ref - 1e-6


def test_closed_form_drc_matches_grid_oracle():
    rng = np.random.default_rng(1)
    grid = GridSpec(points=20000)
    for _ in range(20):
        e = rng.uniform(-5.0, 8.0)
        log_r = rng.uniform(-3.0, 3.0)
        alpha = rng.uniform(0.01, 2.0)
        beta = rng.uniform(1.0001, 10.0)
        w_ref, h_ref = grid_argmax_weight_drc(e, log_r, alpha, beta, grid)
        got = closed_form_weight_drc(np.array([e]), np.array([log_r]), alpha, beta)
        assert_allclose(got.omega[0], w_ref, rtol=1e-3)
        assert got.value[0] >= h_ref - 1e-6


def test_drc_reduces_to_plain_at_unit_ratio():
    e = np.linspace(-4.0, 6.0, 101)
    zeros = np.zeros_like(e)
    for alpha in (0.05, 0.2, 1.0):
        for beta in (1.5, 2.0, 5.0):
            plain = closed_form_weight(e, alpha, beta)
            drc = closed_form_weight_drc(e, zeros, alpha, beta)
            assert np.max(np.abs(plain.omega - drc.omega)) <= 1e-12
            assert np.max(np.abs(plain.value - drc.value)) <= 1e-12
            assert np.array_equal(plain.upper, drc.upper)


def test_threshold_weight_equals_beta():
    for alpha, beta in [(0.1, 1.5), (0.3, 2.5), (1.0, 4.0)]:
        e = (1.0 + alpha) * (math.log(beta) + 1.0)
        r = closed_form_weight(np.array([e]), alpha, beta)
        assert abs(r.omega[0] - beta) <= 1e-9
        assert not r.upper[0]  # exact ties resolve to the lower branch


def test_threshold_weight_drc_equals_beta_times_ratio():
    for alpha, beta, ratio in [(0.2, 2.0, 1.7), (0.5, 3.0, 0.4)]:
        log_r = math.log(ratio)
        e = (1.0 + alpha) * (math.log(beta) + 1.0) + log_r
        r = closed_form_weight_drc(np.array([e]), np.array([log_r]), alpha, beta)
        assert abs(r.omega[0] - beta * ratio) <= 1e-9
        assert not r.upper[0]


def test_branches_agree_at_threshold():
    # both branch formulas evaluate to omega = beta at the crossover, so the
    # weight is continuous in e there
    alpha, beta = 0.2, 2.0
    thr_e = (1.0 + alpha) * (math.log(beta) + 1.0)
    eps = 1e-10
    below = closed_form_weight(np.array([thr_e - eps]), alpha, beta)
    above = closed_form_weight(np.array([thr_e + eps]), alpha, beta)
    assert not below.upper[0] and above.upper[0]
    assert abs(below.omega[0] - above.omega[0]) <= 1e-8


def test_exp_clip_caps_weight_and_flattens_derivative():
    e = np.array([80.0])
    r = closed_form_weight(e, 0.2, 2.0, exp_clip=30.0)
    assert r.clipped[0]
    assert_allclose(r.omega[0], math.exp(30.0))
    assert r.domega_de[0] == 0.0
    # the reported value is the definitional h at the capped weight
    w = r.omega[0]
    c = continuity_constant(2.0)
    expected = w * 80.0 - w * math.log(w) - 0.2 * (w * math.log(w) + c)
    assert_allclose(r.value[0], expected, rtol=1e-12)


def test_exp_clip_drc_uses_definitional_value():
    e = np.array([80.0])
    log_r = np.array([math.log(3.0)])
    r = closed_form_weight_drc(e, log_r, 0.2, 2.0, exp_clip=30.0)
    assert r.clipped[0]
    assert_allclose(r.omega[0], math.exp(30.0))
    w, ratio = r.omega[0], 3.0
    u = w / ratio
    c = continuity_constant(2.0)
    expected = (w * 80.0 - w * math.log(w)
                - 0.2 * ratio * (u * math.log(u) + c))
    assert_allclose(r.value[0], expected, rtol=1e-12)
    assert r.domega_de[0] == 0.0


def test_demodice_is_tiny_beta_upper_branch():
    e = np.linspace(-10.0, 10.0, 201)
    limit = closed_form_weight_demodice(e, 0.2)
    tiny = closed_form_weight(e, 0.2, DEMODICE_BETA)
    assert np.all(tiny.upper)  # every e here clears log(1e-6) + 1
    assert np.array_equal(limit.omega, tiny.omega)
    assert np.array_equal(limit.value, tiny.value)
    assert np.all(limit.upper)


def test_inner_weight_dispatch():
    e = np.array([1.0, 3.0])
    log_r = np.array([0.2, -0.1])
    cfg = SolverConfig(variant="relaxdice")
    assert_allclose(inner_weight(e, None, cfg, 2.0).omega,
                    closed_form_weight(e, cfg.alpha, 2.0).omega)
    cfg = SolverConfig(variant="demodice-limit")
    assert_allclose(inner_weight(e, None, cfg, 2.0).omega,
                    closed_form_weight_demodice(e, cfg.alpha).omega)
    cfg = SolverConfig(variant="relaxdice-drc")
    assert_allclose(inner_weight(e, log_r, cfg, 2.0).omega,
                    closed_form_weight_drc(e, log_r, cfg.alpha, 2.0).omega)
    with pytest.raises(ValueError):
        inner_weight(e, None, cfg, 2.0)


# --- advantage terms --------------------------------------------------------

def test_advantage_exact_shapes_and_total():
    mdp = random_mdp(4, 2, 0.9, seed=0)
    rng = np.random.default_rng(1)
    v = rng.normal(size=4)
    log_ratio = rng.normal(size=(4, 2))
    term = advantage_exact(mdp, v, log_ratio)
    assert term.total.shape == (4, 2)
    expected = (log_ratio
                + 0.9 * np.einsum("sap,p->sa", mdp.transition, v)
                - v[:, None])
    assert_allclose(term.total, expected, atol=1e-12)


def test_advantage_sampled_mean_matches_exact():
    mdp = random_mdp(6, 3, 0.9, seed=2)
    rng = np.random.default_rng(3)
    v = rng.normal(size=6)
    log_ratio = rng.normal(size=(6, 3))
    exact = advantage_exact(mdp, v, log_ratio)
    draws = 100_000
    for s, a in [(0, 0), (2, 1), (5, 2)]:
        nxt = rng.choice(6, size=draws, p=mdp.transition[s, a])
        sampled = advantage_sampled(
            np.full(draws, v[s]), v[nxt],
            np.full(draws, log_ratio[s, a]), 0.9)
        assert abs(float(sampled.total.mean()) - exact.total[s, a]) <= 1e-2


def test_advantage_validation():
    mdp = random_mdp(4, 2, 0.9, seed=0)
    with pytest.raises(ValueError):
        advantage_exact(mdp, np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        advantage_exact(mdp, np.zeros(4), np.zeros((4, 3)))


# --- auto beta --------------------------------------------------------------

def test_auto_beta_starts_at_first_batch_max():
    state = AutoBetaState(decay=0.99, floor=1.001)
    assert auto_beta_update(state, np.array([1.0, 3.5, 2.0])) == 3.5


def test_auto_beta_constant_max_is_fixed_point():
    state = AutoBetaState(decay=0.9, floor=1.001)
    for _ in range(50):
        beta = auto_beta_update(state, np.array([2.5, 1.0]))
    assert_allclose(beta, 2.5, rtol=1e-12)


def test_auto_beta_zero_decay_tracks_latest():
    state = AutoBetaState(decay=0.0, floor=1.001)
    auto_beta_update(state, np.array([5.0]))
    assert auto_beta_update(state, np.array([2.0])) == 2.0


def test_auto_beta_floor():
    state = AutoBetaState(decay=0.99, floor=1.001)
    assert auto_beta_update(state, np.array([0.3])) == 1.001
    assert state.average == 0.3  # the raw average keeps tracking below floor


def test_auto_beta_empty_batch_raises():
    with pytest.raises(ValueError):
        auto_beta_update(AutoBetaState(), np.array([]))


# --- tabular losses ---------------------------------------------------------

def test_flow_operator_rows():
    mdp = random_mdp(3, 2, 0.8, seed=4)
    flow = flow_operator(mdp)
    assert flow.shape == (6, 3)
    for s in range(3):
        for a in range(2):
            row = 0.8 * mdp.transition[s, a].copy()
            row[s] -= 1.0
            assert_allclose(flow[s * 2 + a], row)


def test_loss_gradient_constant_shift_identity():
    # along the all-ones direction, dL/dc = (1 - gamma)(1 - sum du omega)
    mdp, expert, behavior = _sampled_pair(seed=5)
    cfg = SolverConfig(variant="relaxdice", alpha=0.2, beta=2.0)
    problem = build_tabular_problem(expert, behavior, cfg, mdp=mdp)
    rng = np.random.default_rng(6)
    v = rng.normal(scale=0.5, size=5)
    res = tabular_loss(v, problem, cfg, beta=2.0)
    analytic = float(res.grad.sum())
    expected = (1.0 - 0.9) * (1.0 - float(problem.du_weights @ res.weights))
    assert_allclose(analytic, expected, atol=1e-10)
    eps = 1e-6
    ones = np.ones(5)
    up = tabular_loss(v + eps * ones, problem, cfg, 2.0, need_grad=False)
    dn = tabular_loss(v - eps * ones, problem, cfg, 2.0, need_grad=False)
    assert abs((up.loss - dn.loss) / (2 * eps) - analytic) <= 1e-6


def test_weights_normalize_at_optimum():
    mdp, expert, behavior = _sampled_pair(seed=7)
    for variant in ("relaxdice", "relaxdice-drc", "demodice-limit"):
        cfg = SolverConfig(variant=variant, alpha=0.2, beta=2.0)
        sol = solve(cfg, expert, behavior, mdp=mdp)
        assert sol.converged
        problem = build_tabular_problem(expert, behavior, cfg, mdp=mdp)
        total = float(problem.du_weights @ sol.weight_table.ravel())
        assert abs(total - 1.0) <= 1e-7


def test_loss_chord_convexity():
    mdp, expert, behavior = _sampled_pair(seed=8)
    rng = np.random.default_rng(9)
    for estimator in ("exact-tabular", "single-point"):
        cfg = SolverConfig(variant="relaxdice", alpha=0.2, beta=2.0,
                           estimator=estimator)
        problem = build_tabular_problem(expert, behavior, cfg, mdp=mdp)
        for _ in range(10):
            v1 = rng.normal(size=5)
            v2 = rng.normal(size=5)
            l1 = tabular_loss(v1, problem, cfg, 2.0, need_grad=False).loss
            l2 = tabular_loss(v2, problem, cfg, 2.0, need_grad=False).loss
            mid = tabular_loss(0.5 * (v1 + v2), problem, cfg, 2.0,
                               need_grad=False).loss
            assert mid <= 0.5 * (l1 + l2) + 1e-9


def test_newton_converges_all_variants_and_estimators():
    mdp, expert, behavior = _sampled_pair(seed=10, num_states=8, gamma=0.9)
    for variant in ("relaxdice", "relaxdice-drc", "demodice-limit"):
        for estimator in ("exact-tabular", "single-point"):
            cfg = SolverConfig(variant=variant, alpha=0.2, beta=2.0,
                               estimator=estimator)
            sol = solve(cfg, expert, behavior,
                        mdp=mdp if estimator == "exact-tabular" else None)
            assert sol.converged, (variant, estimator)
            assert sol.final_grad_norm <= cfg.grad_tol
            assert len(sol.trace) >= 2
            assert len(sol.record_weights) == len(behavior)
            if estimator == "exact-tabular":
                assert sol.weight_table.shape == (8, 3)


def test_duality_gap_on_sampled_mdp():
    # the dual optimum equals the regularized primal at d = omega d_behavior
    # when the ratio estimate is the exact empirical ratio (no smoothing)
    mdp, expert, behavior = _sampled_pair(seed=11)
    alpha, beta = 0.2, 2.0
    cfg = SolverConfig(variant="relaxdice", alpha=alpha, beta=beta,
                       smoothing=0.0)
    sol = solve(cfg, expert, behavior, mdp=mdp)
    assert sol.converged
    emp_e = pair_counts(expert) / len(expert)
    emp_u = pair_counts(behavior) / len(behavior)
    d = sol.weight_table * emp_u
    spec = RelaxedDivergenceSpec(beta=beta, generator=Generator.KL)
    primal = (-f_divergence(Generator.KL, d.ravel(), emp_e.ravel())
              - alpha * relaxed_f_divergence(spec, d.ravel(), emp_u.ravel()))
    dual = sol.trace[-1].loss
    assert abs(dual - primal) <= 1e-8
    # the candidate also satisfies the true flow constraints, because the
    # start state is deterministic and the operator is exact
    assert np.max(np.abs(flow_residual(mdp, d))) <= 1e-9


def test_resolve_beta_auto_uses_dataset_maximum():
    mdp, expert, behavior = _sampled_pair(seed=12)
    cfg = SolverConfig(variant="relaxdice", beta_mode="auto", smoothing=0.5)
    sol = solve(cfg, expert, behavior, mdp=mdp)
    est = tabular_ratio(expert, behavior, smoothing=0.5, clip=cfg.ratio_clip)
    expected = float(est.ratio(behavior.states, behavior.actions).max())
    assert_allclose(sol.beta_used, max(expected, cfg.auto_beta_floor), rtol=1e-12)


def test_demodice_limit_ignores_beta_mode():
    mdp, expert, behavior = _sampled_pair(seed=13)
    cfg = SolverConfig(variant="demodice-limit", beta_mode="auto")
    sol = solve(cfg, expert, behavior, mdp=mdp)
    assert sol.beta_used == DEMODICE_BETA


def test_record_weight_trace():
    mdp, expert, behavior = _sampled_pair(seed=14)
    cfg = SolverConfig(variant="relaxdice", record_weight_trace=True)
    sol = solve(cfg, expert, behavior, mdp=mdp)
    assert sol.weight_trace is not None
    assert len(sol.weight_trace) == len(sol.trace)
    assert sol.weight_trace[0].shape == sol.weight_trace[-1].shape


def test_save_load_solution_roundtrip(tmp_path):
    mdp, expert, behavior = _sampled_pair(seed=15)
    cfg = SolverConfig(variant="relaxdice-drc", alpha=0.3, beta=2.5)
    sol = solve(cfg, expert, behavior, mdp=mdp)
    from relaxdice.extraction import extract_policy
    sol.policy = extract_policy(sol, behavior)
    save_solution(sol, tmp_path / "ckpt")
    loaded = load_solution(tmp_path / "ckpt")
    assert loaded.config == cfg
    assert loaded.beta_used == sol.beta_used
    assert loaded.converged == sol.converged
    assert_allclose(loaded.v, sol.v, rtol=0, atol=0)
    assert_allclose(loaded.policy.probs, sol.policy.probs, rtol=0, atol=0)
    assert len(loaded.trace) == len(sol.trace)
    assert loaded.trace[-1].loss == sol.trace[-1].loss  # repr round trip


def test_neural_mode_runs_on_tabular_data():
    mdp, expert, behavior = _sampled_pair(seed=16)
    cfg = SolverConfig(variant="relaxdice", mode="neural", steps=200,
                       batch_size=64, hidden=(16,), log_interval=50, seed=3)
    sol = solve(cfg, expert, behavior, mdp=mdp)
    assert len(sol.record_weights) == len(behavior)
    assert np.all(sol.record_weights >= 0.0)
    again = solve(cfg, expert, behavior, mdp=mdp)
    assert_allclose(sol.record_weights, again.record_weights, rtol=0, atol=0)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(variant="nope")
    with pytest.raises(ValueError):
        SolverConfig(estimator="nope")
    with pytest.raises(ValueError):
        SolverConfig(beta_mode="sometimes")
    with pytest.raises(ValueError):
        SolverConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SolverConfig(beta=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(mode="magic")
    SolverConfig(beta=0.5)  # small beta is legal, it approaches the limit case


def test_solve_validation_errors():
    mdp, expert, behavior = _sampled_pair(seed=17)
    with pytest.raises(ValueError, match="MDP"):
        solve(SolverConfig(estimator="exact-tabular"), expert, behavior)
    empty_pool = dataclasses.replace(
        behavior, initial_states=np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError, match="initial-state pool"):
        solve(SolverConfig(), expert, empty_pool, mdp=mdp)
    stripped = dataclasses.replace(behavior, provenance={})
    with pytest.raises(ValueError, match="gamma"):
        solve(SolverConfig(estimator="single-point"), expert, stripped)
