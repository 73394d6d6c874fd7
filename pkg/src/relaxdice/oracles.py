"""Brute-force reference computations for cross-checking the closed forms.

The pointwise objectives maximized here are written out from their
definitions, independently of the solver module, so that agreement with the
closed-form maximizers is evidence rather than tautology:

    h(w)        = w e - w log w - alpha f~_beta(w)
    h_drc(w)    = w e - w log w - alpha r f~_beta(w / r)

The search is a log-spaced grid scan followed by golden-section refinement
inside the bracketing cells; both objectives are strictly concave in w, so
they are unimodal and the refinement is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class OracleGridError(RuntimeError):
    """The maximizer fell on the grid boundary even after one expansion."""


@dataclass(frozen=True)
class GridSpec:
    """Log-spaced search grid over candidate weights w > 0."""

    lo: float = 1e-8
    hi: float = 1e8
    points: int = 1_000_000

    def __post_init__(self) -> None:
        if self.lo <= 0.0 or self.hi <= self.lo:
            raise ValueError("grid needs 0 < lo < hi")
        if self.points < 1000:
            raise ValueError("grid needs at least 1000 points")

    def expanded(self) -> "GridSpec":
        return GridSpec(self.lo / 1e4, self.hi * 1e4, self.points)


def _relaxed_generator(u: np.ndarray, beta: float) -> np.ndarray:
    # Written from the definition; deliberately not the divergence module.
    u = np.asarray(u, dtype=float)
    c = -beta * math.log(beta) + (math.log(beta) + 1.0) * (beta - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ulogu = np.where(u > 0.0, u * np.log(np.where(u > 0.0, u, 1.0)), 0.0)
    return np.where(u >= beta, ulogu + c, (math.log(beta) + 1.0) * (u - 1.0))


def pointwise_objective(
    w: np.ndarray, e: float, alpha: float, beta: float
) -> np.ndarray:
    """h(w) = w e - w log w - alpha f~_beta(w), from the definition."""
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        wlogw = np.where(w > 0.0, w * np.log(np.where(w > 0.0, w, 1.0)), 0.0)
    return w * e - wlogw - alpha * _relaxed_generator(w, beta)


def pointwise_objective_drc(
    w: np.ndarray, e: float, log_ratio: float, alpha: float, beta: float
) -> np.ndarray:
    """h_drc(w) = w e - w log w - alpha r f~_beta(w / r) with r = exp(log_ratio)."""
    w = np.asarray(w, dtype=float)
    r = math.exp(log_ratio)
    with np.errstate(divide="ignore", invalid="ignore"):
        wlogw = np.where(w > 0.0, w * np.log(np.where(w > 0.0, w, 1.0)), 0.0)
    return w * e - wlogw - alpha * r * _relaxed_generator(w / r, beta)


def _golden_refine(
    fn: Callable[[float], float], lo: float, hi: float, iters: int = 200
) -> float:
    # Golden-section in log space; fn is unimodal on [lo, hi].
    a, b = math.log(lo), math.log(hi)
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = fn(math.exp(c)), fn(math.exp(d))
    for _ in range(iters):
        if b - a < 1e-14:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = fn(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = fn(math.exp(d))
    w = math.exp((a + b) / 2.0)
    return w


def _grid_argmax(
    fn: Callable[[np.ndarray], np.ndarray], grid: GridSpec
) -> tuple[float, float]:
    spec = grid
    for attempt in range(2):
        w = np.logspace(math.log10(spec.lo), math.log10(spec.hi), spec.points)
        values = fn(w)
        best = int(np.argmax(values))
        if 0 < best < spec.points - 1:
            refined = _golden_refine(
                lambda x: float(fn(np.asarray([x]))[0]), w[best - 1], w[best + 1])
            return refined, float(fn(np.asarray([refined]))[0])
        spec = spec.expanded()
    raise OracleGridError(
        f"maximizer stuck at the boundary of [{spec.lo:g}, {spec.hi:g}]"
    )


def grid_argmax_weight(
    e: float, alpha: float, beta: float, grid: GridSpec | None = None
) -> tuple[float, float]:
    """Grid-plus-golden maximizer of h(w); returns (w, h(w))."""
    grid = grid if grid is not None else GridSpec()
    return _grid_argmax(lambda w: pointwise_objective(w, e, alpha, beta), grid)


def grid_argmax_weight_drc(
    e: float,
    log_ratio: float,
    alpha: float,
    beta: float,
    grid: GridSpec | None = None,
) -> tuple[float, float]:
    """Grid-plus-golden maximizer of h_drc(w); returns (w, h_drc(w))."""
    grid = grid if grid is not None else GridSpec()
    return _grid_argmax(
        lambda w: pointwise_objective_drc(w, e, log_ratio, alpha, beta), grid)


def central_difference(
    fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    for i in range(x.size):
        bump = np.zeros_like(x).ravel()
        bump[i] = step
        bump = bump.reshape(x.shape)
        flat[i] = (fn(x + bump) - fn(x - bump)) / (2.0 * step)
    return grad


def primal_objective(mdp, policy, d_expert, d_behavior, alpha: float, spec) -> float:
    """-KL(d || d_expert) - alpha * D_{f~_beta}(d || d_behavior) at the policy's
    exact occupancy d.  Support violations propagate as errors."""
    from .divergence import Generator, f_divergence, relaxed_f_divergence
    from .mdp import occupancy_of_policy

    occ = occupancy_of_policy(mdp, policy)
    d = occ.d.ravel()
    kl = f_divergence(Generator.KL, d, np.asarray(d_expert, dtype=float).ravel())
    relaxed = relaxed_f_divergence(
        spec, d, np.asarray(d_behavior, dtype=float).ravel())
    return -kl - alpha * relaxed
