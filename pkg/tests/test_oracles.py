"""Reference maximizers: grid search agreement, boundary handling, gradients."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from relaxdice.divergence import Generator, RelaxedDivergenceSpec
from relaxdice.mdp import TabularPolicy, occupancy_of_policy, random_mdp
from relaxdice.oracles import (
    GridSpec,
    OracleGridError,
    central_difference,
    grid_argmax_weight,
    grid_argmax_weight_drc,
    pointwise_objective,
    pointwise_objective_drc,
    primal_objective,
)

# Grid-plus-golden outputs frozen before the closed forms were written.
FROZEN = [
    # (e, alpha, beta) -> (w, h)
    ((3.0, 0.2, 2.0), (4.4816890552038515, 5.316656320517667)),
    ((1.0, 0.2, 2.0), (0.7127465087191653, 1.0513759543918861)),
]
FROZEN_DRC = [
    # (e, log_ratio, alpha, beta) -> (w, h)
    ((3.0, math.log(4.0), 0.2, 2.0), (5.266523852000778, 6.621041752335613)),
    ((0.5, math.log(0.5), 0.2, 2.0), (0.4323026060350879, 0.601617333996183)),
]


def test_frozen_argmax_values():
    for (e, alpha, beta), (w_ref, h_ref) in FROZEN:
        w, h = grid_argmax_weight(e, alpha, beta)
        assert_allclose(w, w_ref, rtol=1e-9)
        assert_allclose(h, h_ref, rtol=1e-9)


def test_frozen_argmax_values_drc():
    for (e, lr, alpha, beta), (w_ref, h_ref) in FROZEN_DRC:
        w, h = grid_argmax_weight_drc(e, lr, alpha, beta)
        assert_allclose(w, w_ref, rtol=1e-9)
        assert_allclose(h, h_ref, rtol=1e-9)


def test_refined_argmax_matches_first_order_condition():
    # at the maximizer the derivative of h vanishes; check it by central
    # difference rather than by any closed-form expression
    for e, alpha, beta in [(2.0, 0.1, 1.5), (-1.0, 0.5, 3.0), (0.8, 0.2, 2.0)]:
        w, _ = grid_argmax_weight(e, alpha, beta, GridSpec(points=20000))
        fn = lambda x: float(pointwise_objective(x, e, alpha, beta)[0])
        slope = central_difference(lambda x: fn(x), np.array([w]), step=1e-7 * w)
        assert abs(slope[0]) <= 1e-5


def test_objective_concave_along_grid():
    w = np.logspace(-4, 4, 4001)
    vals = pointwise_objective(w, 1.3, 0.2, 2.0)
    peak = int(np.argmax(vals))
    assert np.all(np.diff(vals[: peak + 1]) >= -1e-12)
    assert np.all(np.diff(vals[peak:]) <= 1e-12)
    vals_drc = pointwise_objective_drc(w, 1.3, math.log(2.0), 0.2, 2.0)
    peak = int(np.argmax(vals_drc))
    assert np.all(np.diff(vals_drc[: peak + 1]) >= -1e-12)
    assert np.all(np.diff(vals_drc[peak:]) <= 1e-12)


def test_grid_expansion_recovers_out_of_range_maximizer():
    # exp(10 / 1.2 - 1) ~ 1.5e3 sits beyond hi = 1e2; one expansion finds it
    small = GridSpec(lo=1e-2, hi=1e2, points=2000)
    w, _ = grid_argmax_weight(10.0, 0.2, 2.0, small)
    w_big, _ = grid_argmax_weight(10.0, 0.2, 2.0, GridSpec(points=200000))
    assert_allclose(w, w_big, rtol=1e-6)


def test_grid_error_when_expansion_still_too_small():
    small = GridSpec(lo=1e-2, hi=1e2, points=2000)
    with pytest.raises(OracleGridError):
        grid_argmax_weight(30.0, 0.2, 2.0, small)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(lo=0.0)
    with pytest.raises(ValueError):
        GridSpec(lo=2.0, hi=1.0)
    with pytest.raises(ValueError):
        GridSpec(points=10)


def test_central_difference_on_quadratic():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    fn = lambda x: float(x @ a @ x)
    x0 = np.array([0.3, -1.2])
    grad = central_difference(fn, x0)
    assert_allclose(grad, 2.0 * a @ x0, atol=1e-6)


def test_central_difference_preserves_shape():
    fn = lambda x: float((x**2).sum())
    x0 = np.arange(6, dtype=float).reshape(2, 3)
    grad = central_difference(fn, x0)
    assert grad.shape == (2, 3)
    assert_allclose(grad, 2.0 * x0, atol=1e-6)


def test_primal_objective_zero_at_expert_with_covered_behavior():
    mdp = random_mdp(5, 3, 0.9, seed=0)
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(3), size=5)
    policy = TabularPolicy(probs)
    d_exp = occupancy_of_policy(mdp, policy).d
    uniform = np.full_like(d_exp, 1.0 / d_exp.size)
    d_beh = 0.5 * d_exp + 0.5 * uniform  # pointwise ratio stays under 2
    spec = RelaxedDivergenceSpec(beta=2.0, generator=Generator.KL)
    value = primal_objective(mdp, policy, d_exp, d_beh, alpha=0.3, spec=spec)
    assert abs(value) <= 1e-12


def test_primal_objective_negative_away_from_expert():
    mdp = random_mdp(5, 3, 0.9, seed=2)
    rng = np.random.default_rng(3)
    expert = TabularPolicy(rng.dirichlet(np.ones(3), size=5))
    other = TabularPolicy(rng.dirichlet(np.ones(3), size=5))
    d_exp = occupancy_of_policy(mdp, expert).d
    uniform = np.full_like(d_exp, 1.0 / d_exp.size)
    d_beh = 0.5 * d_exp + 0.5 * uniform
    spec = RelaxedDivergenceSpec(beta=2.0, generator=Generator.KL)
    at_expert = primal_objective(mdp, expert, d_exp, d_beh, 0.3, spec)
    away = primal_objective(mdp, other, d_exp, d_beh, 0.3, spec)
    assert away < at_expert - 1e-3
