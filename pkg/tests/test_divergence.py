"""Relaxed generator and divergence behavior, including the zero region."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from relaxdice.divergence import (
    ConcentrabilityBound,
    Generator,
    RelaxedDivergenceSpec,
    SupportViolationError,
    f_divergence,
    f_tilde,
    generator_derivative,
    generator_value,
    preserves_optimum_check,
    relaxed_f_divergence,
)


def test_generator_values_and_zero_extension():
    u = np.array([0.0, 1.0, np.e])
    assert_allclose(generator_value(Generator.KL, u), [0.0, 0.0, np.e])
    assert_allclose(generator_derivative(Generator.KL, np.array([1.0, np.e])),
                    [1.0, 2.0])


def test_spec_validation_rejects_beta_at_or_below_one():
    for beta in (1.0, 0.5, 0.0, -2.0, np.inf, np.nan):
        with pytest.raises(ValueError):
            RelaxedDivergenceSpec(beta=beta)


def test_continuity_constant_frozen_value():
    # C(f, 2) = -2 log 2 + (log 2 + 1)(2 - 1) = 1 - log 2
    spec = RelaxedDivergenceSpec(beta=2.0)
    assert_allclose(spec.c_f_beta, 0.3068528194400547, rtol=1e-12)
    assert_allclose(spec.f_prime_beta, np.log(2.0) + 1.0, rtol=1e-12)


def test_f_tilde_frozen_values():
    spec = RelaxedDivergenceSpec(beta=2.0)
    assert_allclose(f_tilde(spec, np.array([3.0])), [3.6026896854443838],
                    rtol=1e-12)
    assert_allclose(f_tilde(spec, np.array([0.5])), [-0.8465735902799726],
                    rtol=1e-12)
    # at u = 1 the linear piece vanishes by construction
    assert_allclose(f_tilde(spec, np.array([1.0])), [0.0], atol=1e-15)


def test_f_tilde_continuous_at_beta():
    rng = np.random.default_rng(0)
    for _ in range(20):
        beta = float(rng.uniform(1.01, 9.0))
        spec = RelaxedDivergenceSpec(beta=beta)
        below, at, above = f_tilde(
            spec, np.array([beta - 1e-9, beta, beta + 1e-9]))
        assert abs(at - below) < 1e-7
        assert abs(above - at) < 1e-7


def test_f_tilde_rejects_negative_input():
    spec = RelaxedDivergenceSpec(beta=2.0)
    with pytest.raises(ValueError):
        f_tilde(spec, np.array([-0.1, 1.0]))


def test_kl_frozen_value():
    value = f_divergence(Generator.KL, np.array([0.75, 0.25]),
                         np.array([0.5, 0.5]))
    assert_allclose(value, 0.13081203594113697, rtol=1e-12)


def test_kl_nonnegative_and_zero_at_equality():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = rng.dirichlet(np.ones(6))
        p = rng.dirichlet(np.ones(6))
        assert f_divergence(Generator.KL, p, q) >= -1e-14
        assert abs(f_divergence(Generator.KL, q, q)) < 1e-14


def _pair_with_max_ratio(rng, k, target):
    # p matches q off atom j and carries ratio exactly `target` > 1 at j.
    q = rng.dirichlet(np.ones(k) * 2.0)
    j = int(np.argmin(q))
    cap = 0.9 / target
    if q[j] > cap:  # keep target * q_j < 1 so p stays a distribution
        q[int(np.argmax(q))] += q[j] - cap
        q[j] = cap
    p = np.empty_like(q)
    p[j] = target * q[j]
    others = np.delete(np.arange(k), j)
    p[others] = (1.0 - p[j]) * q[others] / q[others].sum()
    return p, q


def test_zero_below_bound_positive_above():
    rng = np.random.default_rng(2)
    for _ in range(200):
        beta = float(rng.uniform(1.05, 8.0))
        spec = RelaxedDivergenceSpec(beta=beta)
        p, q = _pair_with_max_ratio(
            rng, int(rng.integers(3, 9)),
            1.0 + (beta - 1.0) * float(rng.uniform(0.05, 0.95)))
        assert abs(relaxed_f_divergence(spec, p, q)) <= 1e-12
        p, q = _pair_with_max_ratio(rng, int(rng.integers(3, 9)),
                                    beta * float(rng.uniform(1.01, 3.0)))
        assert relaxed_f_divergence(spec, p, q) > 1e-12


def test_zero_holds_with_equality_at_beta():
    rng = np.random.default_rng(3)
    for _ in range(50):
        beta = float(rng.uniform(1.1, 6.0))
        spec = RelaxedDivergenceSpec(beta=beta)
        p, q = _pair_with_max_ratio(rng, 5, beta)
        assert abs(relaxed_f_divergence(spec, p, q)) <= 1e-12
        # the same pair is strictly KL-separated
        assert f_divergence(Generator.KL, p, q) > 1e-6


def test_divergence_monotone_in_beta():
    rng = np.random.default_rng(4)
    betas = (1.1, 1.5, 2.0, 4.0, 8.0)
    for _ in range(30):
        q = rng.dirichlet(np.ones(7))
        p = rng.dirichlet(np.ones(7) * 0.5)
        values = [relaxed_f_divergence(RelaxedDivergenceSpec(beta=b), p, q)
                  for b in betas]
        for lo, hi in zip(values[1:], values[:-1]):
            assert lo <= hi + 1e-12


def test_relaxed_bounded_by_plain_plus_constant():
    rng = np.random.default_rng(5)
    for _ in range(30):
        beta = float(rng.uniform(1.1, 5.0))
        spec = RelaxedDivergenceSpec(beta=beta)
        q = rng.dirichlet(np.ones(6))
        p = rng.dirichlet(np.ones(6) * 0.7)
        relaxed = relaxed_f_divergence(spec, p, q)
        plain = f_divergence(Generator.KL, p, q)
        assert relaxed <= plain + spec.c_f_beta + 1e-12


def test_pair_checks():
    spec = RelaxedDivergenceSpec(beta=2.0)
    with pytest.raises(ValueError):
        relaxed_f_divergence(spec, np.array([0.5, 0.5]), np.array([1.0]))
    with pytest.raises(ValueError):
        relaxed_f_divergence(spec, np.array([-0.1, 1.1]), np.array([0.5, 0.5]))
    with pytest.raises(SupportViolationError):
        relaxed_f_divergence(spec, np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    # mass where q vanishes is fine for q-weighted sums only when p is zero too
    assert abs(relaxed_f_divergence(
        spec, np.array([1.0, 0.0]), np.array([1.0, 0.0]))) < 1e-12


def test_concentrability_measure():
    p = np.array([0.6, 0.4])
    q = np.array([0.5, 0.5])
    bound = ConcentrabilityBound.measure(p, q, beta=1.5)
    assert_allclose(bound.bound, 1.2)
    assert bound.holds
    assert not ConcentrabilityBound.measure(p, q, beta=1.1).holds


def test_preserves_optimum_report():
    rng = np.random.default_rng(6)
    p, q = _pair_with_max_ratio(rng, 6, 1.8)
    spec = RelaxedDivergenceSpec(beta=2.0)
    report = preserves_optimum_check(spec, p, q)
    assert report.relaxed_zero
    assert report.f_positive
    assert report.ratio_bound <= 2.0


def test_preserves_optimum_raises_with_index():
    rng = np.random.default_rng(7)
    p, q = _pair_with_max_ratio(rng, 6, 3.0)
    spec = RelaxedDivergenceSpec(beta=2.0)
    with pytest.raises(ValueError, match="flat index"):
        preserves_optimum_check(spec, p, q)
