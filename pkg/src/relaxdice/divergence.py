"""Asymmetrically relaxed f-divergences over finite supports.

Given a convex generator f with f(1) = 0 and a relaxation level beta > 1,
the relaxed generator keeps f above beta and replaces it below beta by the
tangent line at beta, shifted so the two pieces meet:

    f~_beta(u) = f(u) + C(f, beta)      if u >= beta
               = f'(beta) * (u - 1)     if u <  beta

with C(f, beta) = -f(beta) + f'(beta) * (beta - 1).  The induced divergence
D(p || q) = sum_x q(x) f~_beta(p(x) / q(x)) is zero exactly when the ratio
p / q stays at or below beta everywhere: on that set the terms telescope to
f'(beta) * (sum p - sum q) = 0 for normalized p and q, while any excursion
above beta pays the strict convexity gap of f.  Only the KL generator
f(u) = u log u ships; the generator is enumerated so others can be added.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class SupportViolationError(ValueError):
    """p puts mass where q has none, so the ratio p / q is undefined."""


class Generator(str, Enum):
    KL = "kl"


def generator_value(generator: Generator, u: np.ndarray) -> np.ndarray:
    """f(u) elementwise, with the continuous extension f(0) = 0."""
    u = np.asarray(u, dtype=float)
    if Generator(generator) is Generator.KL:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(u > 0.0, u * np.log(np.where(u > 0.0, u, 1.0)), 0.0)
    raise ValueError(f"unknown generator {generator!r}")


def generator_derivative(generator: Generator, u: np.ndarray) -> np.ndarray:
    """f'(u) elementwise; for KL this is log u + 1."""
    u = np.asarray(u, dtype=float)
    if Generator(generator) is Generator.KL:
        return np.log(u) + 1.0
    raise ValueError(f"unknown generator {generator!r}")


@dataclass(frozen=True)
class RelaxedDivergenceSpec:
    """A generator together with its relaxation level beta > 1."""

    beta: float
    generator: Generator = Generator.KL

    def __post_init__(self) -> None:
        if not np.isfinite(self.beta) or self.beta <= 1.0:
            raise ValueError(f"beta must be finite and > 1, got {self.beta}")
        Generator(self.generator)

    @property
    def f_prime_beta(self) -> float:
        """Slope f'(beta) of the linear piece."""
        return float(generator_derivative(self.generator, self.beta))

    @property
    def c_f_beta(self) -> float:
        """Continuity constant -f(beta) + f'(beta) * (beta - 1)."""
        f_beta = float(generator_value(self.generator, self.beta))
        return -f_beta + self.f_prime_beta * (self.beta - 1.0)


def f_tilde(spec: RelaxedDivergenceSpec, u: np.ndarray) -> np.ndarray:
    """The relaxed generator f~_beta evaluated elementwise on u >= 0."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0.0):
        raise ValueError("f_tilde is only defined for u >= 0")
    upper = generator_value(spec.generator, u) + spec.c_f_beta
    lower = spec.f_prime_beta * (u - 1.0)
    return np.where(u >= spec.beta, upper, lower)


def _check_pair(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: p has {p.shape}, q has {q.shape}")
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise ValueError("distributions must be nonnegative")
    bad = np.nonzero((p > 0.0) & (q == 0.0))[0] if p.ndim == 1 else None
    if bad is None:
        bad = np.argwhere((p > 0.0) & (q == 0.0))
    if len(bad) > 0:
        first = bad[0] if np.ndim(bad[0]) == 0 else tuple(int(i) for i in bad[0])
        raise SupportViolationError(
            f"p has mass at index {first} where q is zero"
        )
    return p, q


def relaxed_f_divergence(
    spec: RelaxedDivergenceSpec, p: np.ndarray, q: np.ndarray
) -> float:
    """D_{f~_beta}(p || q) = sum_x q(x) f~_beta(p(x) / q(x)).

    Atoms with p = q = 0 contribute nothing.  Zero-iff behaviour (zero
    exactly when max p / q <= beta) presumes p and q are normalized.
    """
    p, q = _check_pair(p, q)
    mask = q > 0.0
    ratio = p[mask] / q[mask]
    return float(np.dot(q[mask], f_tilde(spec, ratio)))


def f_divergence(generator: Generator, p: np.ndarray, q: np.ndarray) -> float:
    """Plain D_f(p || q) = sum_x q(x) f(p(x) / q(x)); KL for the KL generator."""
    p, q = _check_pair(p, q)
    mask = q > 0.0
    ratio = p[mask] / q[mask]
    return float(np.dot(q[mask], generator_value(generator, ratio)))


@dataclass(frozen=True)
class ConcentrabilityBound:
    """Sup ratio B = max_x p(x) / q(x) and whether it sits at or below beta."""

    bound: float
    holds: bool

    @classmethod
    def measure(
        cls, p: np.ndarray, q: np.ndarray, beta: float
    ) -> "ConcentrabilityBound":
        p, q = _check_pair(p, q)
        mask = q > 0.0
        bound = float(np.max(p[mask] / q[mask])) if mask.any() else 0.0
        return cls(bound=bound, holds=bool(bound <= beta))


@dataclass(frozen=True)
class OptimumPreservationReport:
    """Outcome of checking that the relaxation does not move the optimum."""

    ratio_bound: float
    relaxed_value: float
    f_value: float
    relaxed_zero: bool
    f_positive: bool


def preserves_optimum_check(
    spec: RelaxedDivergenceSpec,
    d_star: np.ndarray,
    d_u: np.ndarray,
    tol: float = 1e-12,
) -> OptimumPreservationReport:
    """Report that D_{f~_beta}(d* || d^U) vanishes while D_f(d* || d^U) does not.

    Requires the concentrability bound max d* / d^U <= beta; violating inputs
    raise with the offending index.  The plain divergence is positive unless
    d* equals d^U, in which case the report simply records zero.
    """
    d_star = np.asarray(d_star, dtype=float)
    d_u = np.asarray(d_u, dtype=float)
    bound = ConcentrabilityBound.measure(d_star.ravel(), d_u.ravel(), spec.beta)
    if not bound.holds:
        mask = d_u.ravel() > 0.0
        ratios = np.where(mask, d_star.ravel() / np.where(mask, d_u.ravel(), 1.0), 0.0)
        idx = int(np.argmax(ratios))
        raise ValueError(
            f"ratio bound {bound.bound:.6g} exceeds beta={spec.beta:.6g} "
            f"at flat index {idx}"
        )
    relaxed = relaxed_f_divergence(spec, d_star.ravel(), d_u.ravel())
    plain = f_divergence(spec.generator, d_star.ravel(), d_u.ravel())
    return OptimumPreservationReport(
        ratio_bound=bound.bound,
        relaxed_value=relaxed,
        f_value=plain,
        relaxed_zero=bool(abs(relaxed) <= tol),
        f_positive=bool(plain > tol),
    )
