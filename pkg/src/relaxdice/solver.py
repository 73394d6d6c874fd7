"""Dual solvers for occupancy matching with relaxed-divergence regularization.

For a dual variable v over states, each state-action pair carries the
advantage-like quantity

    e_v(s, a) = log r(s, a) + gamma (T v)(s, a) - v(s),

where r estimates d_expert / d_behavior.  The dual objective is

    L(v) = (1 - gamma) E_{p0}[v] + E_{behavior}[h(omega*_v)],

where omega*_v maximizes h(w) = w e_v - w log w - alpha f~_beta(w) pointwise.
That inner maximum has a two-branch closed form; with a correction ratio it
becomes h_drc(w) = w e_v - w log w - alpha r f~_beta(w / r) and a matching
two-branch form.  Both branches have envelope derivative dh/de = omega*, so
L is convex in v and smooth enough for a damped Newton solve in the tabular
case; the function-approximation path trains a scalar-head net on the same
objective with minibatches.  The demodice-limit variant is the beta -> 0
limit: the first branch everywhere, with a tiny internal beta standing in
for the vanished relaxation level.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import TransitionDataset
from .mdp import TabularMDP, TabularPolicy
from .nets import (
    AdamState,
    Mlp,
    backward,
    forward,
    gradient_penalty,
    interleave_grads,
    load_net,
    optimizer_step,
    save_net,
)
from .ratio import DensityRatioEstimate, tabular_ratio

VARIANTS = ("relaxdice", "relaxdice-drc", "demodice-limit")
ESTIMATORS = ("exact-tabular", "single-point")
DEMODICE_BETA = 1e-6


@dataclass
class SolverConfig:
    """Everything that determines a solve, including the neural-mode knobs."""

    variant: str = "relaxdice"
    alpha: float = 0.2
    beta: float = 2.0
    beta_mode: str = "fixed"  # "fixed" | "auto"
    estimator: str = "exact-tabular"
    exp_clip: float = 30.0
    smoothing: float = 0.0
    ratio_clip: tuple[float, float] = (1e-4, 1e4)
    grad_tol: float = 1e-8
    max_iters: int = 300
    auto_beta_decay: float = 0.99
    auto_beta_floor: float = 1.001
    record_weight_trace: bool = False
    seed: int = 0
    # function-approximation mode
    mode: str = "auto"  # "auto" | "exact" | "neural"
    steps: int = 5000
    batch_size: int = 256
    lr: float = 3e-4
    gp_coefficient: float = 1e-4
    hidden: tuple[int, ...] = (256, 256)
    log_interval: int = 100

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.beta_mode not in ("fixed", "auto"):
            raise ValueError("beta_mode must be 'fixed' or 'auto'")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.beta_mode == "fixed" and self.variant != "demodice-limit":
            # beta <= 1 defeats the relaxation's purpose but the closed form
            # is well defined for any beta > 0, and the beta -> 0 limit is
            # exactly the demodice-limit reduction, so only nonpositive
            # values are rejected.
            if self.beta <= 0.0:
                raise ValueError("fixed beta must be positive")
        if self.mode not in ("auto", "exact", "neural"):
            raise ValueError("mode must be 'auto', 'exact', or 'neural'")


def continuity_constant(beta: float) -> float:
    """C(f, beta) = -f(beta) + f'(beta)(beta - 1) for the KL generator.

    Valid for any beta > 0 so the demodice-limit beta can use it too.
    """
    return -beta * math.log(beta) + (math.log(beta) + 1.0) * (beta - 1.0)


def _h_definition(
    omega: np.ndarray, e: np.ndarray, alpha: float, beta: float,
    log_ratio: np.ndarray | None = None,
) -> np.ndarray:
    # h (or h_drc when log_ratio is given) straight from the definition; used
    # only where the exp clip detaches the closed-form display values.
    omega = np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        wlogw = np.where(omega > 0, omega * np.log(np.where(omega > 0, omega, 1.0)), 0.0)
    if log_ratio is None:
        u = omega
        scale = 1.0
    else:
        scale = np.exp(log_ratio)
        u = omega / scale
    c = continuity_constant(beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        ulogu = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
    f_t = np.where(u >= beta, ulogu + c, (math.log(beta) + 1.0) * (u - 1.0))
    return omega * e - wlogw - alpha * scale * f_t


@dataclass
class WeightResult:
    """Pointwise inner maximum: weights, attained values, branch bookkeeping."""

    omega: np.ndarray
    value: np.ndarray
    upper: np.ndarray  # True where the generator branch (ratio above beta) won
    clipped: np.ndarray
    domega_de: np.ndarray


def closed_form_weight(
    e: np.ndarray, alpha: float, beta: float, exp_clip: float = 30.0
) -> WeightResult:
    """Maximizer of h(w) = w e - w log w - alpha f~_beta(w) over w >= 0.

    Upper branch when e / (1 + alpha) > log beta + 1 (ties take the lower
    branch): omega = exp(e / (1 + alpha) - 1) with value
    (1 + alpha) omega - alpha C(f, beta).  Otherwise omega =
    exp(e - 1 - alpha (log beta + 1)) with value omega + alpha (log beta + 1).
    Exponent arguments are capped at exp_clip; capped entries fall back to the
    definitional h at the capped weight and are flagged.
    """
    e = np.asarray(e, dtype=float)
    thr = math.log(beta) + 1.0
    upper = e / (1.0 + alpha) > thr
    arg = np.where(upper, e / (1.0 + alpha) - 1.0, e - 1.0 - alpha * thr)
    clipped = arg > exp_clip
    omega = np.exp(np.minimum(arg, exp_clip))
    c = continuity_constant(beta)
    value = np.where(upper, (1.0 + alpha) * omega - alpha * c, omega + alpha * thr)
    if clipped.any():
        value = np.where(clipped, _h_definition(omega, e, alpha, beta), value)
    domega = np.where(clipped, 0.0, np.where(upper, omega / (1.0 + alpha), omega))
    return WeightResult(omega=omega, value=value, upper=upper,
                        clipped=clipped, domega_de=domega)


def closed_form_weight_demodice(
    e: np.ndarray, alpha: float, exp_clip: float = 30.0
) -> WeightResult:
    """The beta -> 0 limit: the upper branch unconditionally."""
    e = np.asarray(e, dtype=float)
    arg = e / (1.0 + alpha) - 1.0
    clipped = arg > exp_clip
    omega = np.exp(np.minimum(arg, exp_clip))
    c = continuity_constant(DEMODICE_BETA)
    value = (1.0 + alpha) * omega - alpha * c
    if clipped.any():
        value = np.where(clipped, _h_definition(omega, e, alpha, DEMODICE_BETA), value)
    domega = np.where(clipped, 0.0, omega / (1.0 + alpha))
    return WeightResult(omega=omega, value=value,
                        upper=np.ones_like(omega, dtype=bool),
                        clipped=clipped, domega_de=domega)


def closed_form_weight_drc(
    e: np.ndarray,
    log_ratio: np.ndarray,
    alpha: float,
    beta: float,
    exp_clip: float = 30.0,
) -> WeightResult:
    """Maximizer of h_drc(w) = w e - w log w - alpha r f~_beta(w / r).

    Upper branch when (e - log r) / (1 + alpha) > log beta + 1 (ties lower):
    omega = exp((e + alpha log r) / (1 + alpha) - 1) with value
    (1 + alpha) omega - alpha C(f, beta) r.  Otherwise omega =
    exp(e - 1 - alpha (log beta + 1)) with value
    omega + alpha (log beta + 1) r.  At r = 1 both branches reduce exactly to
    the uncorrected closed form.
    """
    e = np.asarray(e, dtype=float)
    log_ratio = np.broadcast_to(np.asarray(log_ratio, dtype=float), e.shape)
    thr = math.log(beta) + 1.0
    upper = (e - log_ratio) / (1.0 + alpha) > thr
    arg = np.where(
        upper, (e + alpha * log_ratio) / (1.0 + alpha) - 1.0, e - 1.0 - alpha * thr)
    clipped = arg > exp_clip
    omega = np.exp(np.minimum(arg, exp_clip))
    r = np.exp(log_ratio)
    c = continuity_constant(beta)
    value = np.where(
        upper, (1.0 + alpha) * omega - alpha * c * r, omega + alpha * thr * r)
    if clipped.any():
        value = np.where(
            clipped, _h_definition(omega, e, alpha, beta, log_ratio), value)
    domega = np.where(clipped, 0.0, np.where(upper, omega / (1.0 + alpha), omega))
    return WeightResult(omega=omega, value=value, upper=upper,
                        clipped=clipped, domega_de=domega)


def inner_weight(
    e: np.ndarray, log_ratio: np.ndarray | None, config: SolverConfig, beta: float
) -> WeightResult:
    """Variant dispatch for the pointwise inner maximum."""
    if config.variant == "relaxdice":
        return closed_form_weight(e, config.alpha, beta, config.exp_clip)
    if config.variant == "demodice-limit":
        return closed_form_weight_demodice(e, config.alpha, config.exp_clip)
    if log_ratio is None:
        raise ValueError("the ratio-corrected variant needs log-ratio values")
    return closed_form_weight_drc(e, log_ratio, config.alpha, beta, config.exp_clip)


@dataclass
class AdvantageTerm:
    """e_v with its three pieces kept separate for diagnostics."""

    log_ratio: np.ndarray
    future: np.ndarray  # gamma (T v) exactly, or gamma v(s') from a sample
    current: np.ndarray  # -v(s)

    @property
    def total(self) -> np.ndarray:
        return self.log_ratio + self.future + self.current


def advantage_exact(
    mdp: TabularMDP, v: np.ndarray, log_ratio: np.ndarray
) -> AdvantageTerm:
    """Per-pair e_v using the exact transition operator."""
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.num_states,):
        raise ValueError(f"v has shape {v.shape}, expected ({mdp.num_states},)")
    log_ratio = np.asarray(log_ratio, dtype=float)
    if log_ratio.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("log_ratio must be a full (S, A) table")
    future = mdp.gamma * np.einsum("sap,p->sa", mdp.transition, v)
    current = np.broadcast_to(-v[:, None], log_ratio.shape).copy()
    return AdvantageTerm(log_ratio=log_ratio, future=future, current=current)


def advantage_sampled(
    v_state: np.ndarray,
    v_next: np.ndarray,
    log_ratio: np.ndarray,
    gamma: float,
) -> AdvantageTerm:
    """Single-sample e_v = log r + gamma v(s') - v(s) per record.

    Unbiased for e_v only through the linear v(s') term; plugging it into the
    exponential closed form is biased on stochastic dynamics, which is the
    documented cost of the single-point estimator.
    """
    return AdvantageTerm(
        log_ratio=np.asarray(log_ratio, dtype=float),
        future=gamma * np.asarray(v_next, dtype=float),
        current=-np.asarray(v_state, dtype=float),
    )


@dataclass
class AutoBetaState:
    """Running average of per-minibatch maximum ratios, floor-clamped."""

    decay: float = 0.99
    floor: float = 1.001
    average: float | None = None

    @property
    def beta(self) -> float:
        if self.average is None:
            return self.floor
        return max(self.average, self.floor)


def auto_beta_update(state: AutoBetaState, batch_ratios: np.ndarray) -> float:
    """Fold one minibatch of ratio values into the running beta estimate.

    The average starts at the first batch maximum, then decays geometrically,
    so a constant maximum is a fixed point and decay 0 tracks the latest max.
    """
    batch_ratios = np.asarray(batch_ratios, dtype=float)
    if batch_ratios.size == 0:
        raise ValueError("auto-beta update needs a nonempty batch")
    peak = float(np.max(batch_ratios))
    if state.average is None:
        state.average = peak
    else:
        state.average = state.decay * state.average + (1.0 - state.decay) * peak
    return state.beta


@dataclass
class TraceRow:
    step: int
    loss: float
    grad_norm: float
    beta: float
    upper_fraction: float


@dataclass
class TabularProblem:
    """Dataset-derived quantities the tabular losses consume."""

    num_states: int
    num_actions: int
    gamma: float
    p0_weights: np.ndarray
    estimator: str
    ratio: DensityRatioEstimate
    log_ratio_table: np.ndarray
    # exact-tabular pieces
    flow: np.ndarray | None = None  # (S A, S) rows gamma T - delta_s
    du_weights: np.ndarray | None = None  # (S A,)
    log_ratio_flat: np.ndarray | None = None
    # single-point pieces
    states: np.ndarray | None = None
    next_states: np.ndarray | None = None
    rec_log_ratio: np.ndarray | None = None
    record_states: np.ndarray | None = None
    record_actions: np.ndarray | None = None


def flow_operator(mdp: TabularMDP) -> np.ndarray:
    """Rows of gamma T(. | s, a) - delta_s, flattened to (S A, S)."""
    s = mdp.num_states
    rows = mdp.gamma * mdp.transition.copy()
    idx = np.arange(s)
    rows[idx, :, idx] -= 1.0
    return rows.reshape(s * mdp.num_actions, s)


def build_tabular_problem(
    expert: TransitionDataset,
    behavior: TransitionDataset,
    config: SolverConfig,
    mdp: TabularMDP | None = None,
    ratio_estimate: DensityRatioEstimate | None = None,
) -> TabularProblem:
    if behavior.space.kind != "tabular":
        raise ValueError("tabular problems need tabular datasets")
    if len(behavior.initial_states) == 0:
        raise ValueError("the behavior dataset has an empty initial-state pool")
    s, a = behavior.space.num_states, behavior.space.num_actions
    if ratio_estimate is None:
        ratio_estimate = tabular_ratio(
            expert, behavior, smoothing=config.smoothing, clip=config.ratio_clip)
    log_table = np.log(ratio_estimate.ratio_table())
    p0 = np.bincount(behavior.initial_states, minlength=s).astype(float)
    p0 /= p0.sum()
    problem = TabularProblem(
        num_states=s,
        num_actions=a,
        gamma=mdp.gamma if mdp is not None else _gamma_from(config, behavior),
        p0_weights=p0,
        estimator=config.estimator,
        ratio=ratio_estimate,
        log_ratio_table=log_table,
    )
    if config.estimator == "exact-tabular":
        if mdp is None:
            raise ValueError("the exact-tabular estimator needs the MDP")
        counts = np.zeros(s * a)
        np.add.at(counts, behavior.states * a + behavior.actions, 1.0)
        problem.flow = flow_operator(mdp)
        problem.du_weights = counts / counts.sum()
        problem.log_ratio_flat = log_table.reshape(-1)
    else:
        problem.states = behavior.states
        problem.next_states = behavior.next_states
        problem.rec_log_ratio = ratio_estimate.log_ratio(
            behavior.states, behavior.actions)
    problem.record_states = behavior.states
    problem.record_actions = behavior.actions
    return problem


def _gamma_from(config: SolverConfig, behavior: TransitionDataset) -> float:
    gamma = behavior.provenance.get("gamma")
    if gamma is None:
        raise ValueError(
            "single-point solves without an MDP need gamma in the dataset provenance")
    return float(gamma)


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    hessian: np.ndarray | None
    upper_fraction: float
    clip_fraction: float
    weights: np.ndarray  # omega per (s, a) cell (exact) or per record


def tabular_loss(
    v: np.ndarray,
    problem: TabularProblem,
    config: SolverConfig,
    beta: float,
    need_hessian: bool = False,
    need_grad: bool = True,
) -> LossResult:
    """L(v), its gradient, and optionally the exact Hessian.

    The envelope property dh/de = omega makes the gradient
    (1 - gamma) p0 + Flow^T (weights * omega); the Hessian reuses the same
    rows with the branch-dependent d omega / d e, hence is PSD and L convex.
    """
    v = np.asarray(v, dtype=float)
    gamma = problem.gamma
    if problem.estimator == "exact-tabular":
        e = problem.flow @ v + problem.log_ratio_flat
        w = inner_weight(e, problem.log_ratio_flat, config, beta)
        du = problem.du_weights
        loss = (1.0 - gamma) * problem.p0_weights @ v + du @ w.value
        upper_fraction = float(du @ w.upper)
        clip_fraction = float(du @ w.clipped)
        grad = hess = None
        if need_grad:
            grad = (1.0 - gamma) * problem.p0_weights + problem.flow.T @ (du * w.omega)
        if need_hessian:
            c2 = du * w.domega_de
            hess = problem.flow.T @ (c2[:, None] * problem.flow)
        return LossResult(float(loss), grad, hess, upper_fraction,
                          clip_fraction, w.omega)

    n = len(problem.states)
    e = problem.rec_log_ratio + gamma * v[problem.next_states] - v[problem.states]
    w = inner_weight(e, problem.rec_log_ratio, config, beta)
    loss = (1.0 - gamma) * problem.p0_weights @ v + float(w.value.mean())
    grad = hess = None
    if need_grad:
        grad = (1.0 - gamma) * problem.p0_weights.copy()
        np.add.at(grad, problem.next_states, gamma * w.omega / n)
        np.add.at(grad, problem.states, -w.omega / n)
    if need_hessian:
        c2 = w.domega_de / n
        hess = np.zeros((problem.num_states, problem.num_states))
        np.add.at(hess, (problem.states, problem.states), c2)
        np.add.at(hess, (problem.next_states, problem.next_states),
                  gamma * gamma * c2)
        np.add.at(hess, (problem.states, problem.next_states), -gamma * c2)
        np.add.at(hess, (problem.next_states, problem.states), -gamma * c2)
    return LossResult(float(loss), grad, hess, float(w.upper.mean()),
                      float(w.clipped.mean()), w.omega)


@dataclass
class DiceSolution:
    """A trained dual variable with its weights, trace, and extraction hook."""

    config: SolverConfig
    beta_used: float
    v: np.ndarray | Mlp
    trace: list[TraceRow]
    converged: bool
    final_grad_norm: float
    record_weights: np.ndarray
    weight_table: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    policy: TabularPolicy | Mlp | None = None
    weight_trace: list[np.ndarray] | None = None


def _resolve_beta(config: SolverConfig, problem: TabularProblem) -> float:
    if config.variant == "demodice-limit":
        return DEMODICE_BETA
    if config.beta_mode == "fixed":
        return float(config.beta)
    # Full-batch auto mode: one batch, so the running average is its maximum.
    state = AutoBetaState(decay=config.auto_beta_decay, floor=config.auto_beta_floor)
    ratios = problem.ratio.ratio(problem.record_states, problem.record_actions)
    return auto_beta_update(state, ratios)


def _minimize_newton(
    problem: TabularProblem, config: SolverConfig, beta: float
) -> tuple[np.ndarray, list[TraceRow], bool, float, list[np.ndarray] | None, LossResult]:
    s = problem.num_states
    v = np.zeros(s)
    trace: list[TraceRow] = []
    weight_trace: list[np.ndarray] | None = (
        [] if config.record_weight_trace else None)
    converged = False
    res = tabular_loss(v, problem, config, beta, need_hessian=True)
    grad_norm = float(np.max(np.abs(res.grad)))
    for it in range(config.max_iters):
        trace.append(TraceRow(it, res.loss, grad_norm, beta, res.upper_fraction))
        if weight_trace is not None:
            weight_trace.append(res.weights.copy())
        if grad_norm <= config.grad_tol:
            converged = True
            break
        ridge = 1e-12 * (1.0 + np.trace(res.hessian) / s)
        try:
            step = np.linalg.solve(res.hessian + ridge * np.eye(s), -res.grad)
        except np.linalg.LinAlgError:
            step = -res.grad
        slope = float(res.grad @ step)
        if not np.isfinite(slope) or slope >= 0.0:
            step = -res.grad
            slope = float(res.grad @ step)
        t = 1.0
        accepted = False
        while t >= 1e-12:
            probe = tabular_loss(v + t * step, problem, config, beta,
                                 need_grad=False)
            if probe.loss <= res.loss + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break  # stuck below float resolution; report the last grad norm
        v = v + t * step
        res = tabular_loss(v, problem, config, beta, need_hessian=True)
        grad_norm = float(np.max(np.abs(res.grad)))
    else:
        trace.append(TraceRow(config.max_iters, res.loss, grad_norm, beta,
                              res.upper_fraction))
        if weight_trace is not None:
            weight_trace.append(res.weights.copy())
        converged = grad_norm <= config.grad_tol
    return v, trace, converged, grad_norm, weight_trace, res


def solve(
    config: SolverConfig,
    expert: TransitionDataset,
    behavior: TransitionDataset,
    mdp: TabularMDP | None = None,
    ratio_estimate: DensityRatioEstimate | None = None,
) -> DiceSolution:
    """Fit the dual variable on the given datasets and return the solution.

    Tabular spaces solve exactly (damped Newton on the convex dual until the
    gradient's max-norm falls below grad_tol); continuous spaces, or
    mode="neural", train a scalar-head net on minibatches.
    """
    if expert.space != behavior.space:
        raise ValueError("expert and behavior datasets live in different spaces")
    if len(behavior.initial_states) == 0:
        raise ValueError("the behavior dataset has an empty initial-state pool")
    mode = config.mode
    if mode == "auto":
        mode = "exact" if behavior.space.kind == "tabular" else "neural"
    if mode == "exact":
        problem = build_tabular_problem(
            expert, behavior, config, mdp=mdp, ratio_estimate=ratio_estimate)
        beta = _resolve_beta(config, problem)
        v, trace, converged, grad_norm, weight_trace, final = _minimize_newton(
            problem, config, beta)
        if not np.all(np.isfinite([row.loss for row in trace])):
            raise FloatingPointError("objective trace contains non-finite values")
        if problem.estimator == "exact-tabular":
            table = final.weights.reshape(problem.num_states, problem.num_actions)
            record_weights = table[problem.record_states, problem.record_actions]
        else:
            table = None
            record_weights = final.weights
        return DiceSolution(
            config=config,
            beta_used=beta,
            v=v,
            trace=trace,
            converged=converged,
            final_grad_norm=grad_norm,
            record_weights=record_weights,
            weight_table=table,
            diagnostics={
                "upper_fraction": final.upper_fraction,
                "clip_fraction": final.clip_fraction,
            },
            weight_trace=weight_trace,
        )
    if mdp is not None:
        gamma = mdp.gamma
    else:
        gamma = behavior.provenance.get("gamma")
        if gamma is None:
            raise ValueError(
                "neural solves need gamma, either from the MDP or the dataset "
                "provenance")
    return _solve_neural(config, expert, behavior, ratio_estimate, float(gamma))


def _state_features(dataset: TransitionDataset, states: np.ndarray) -> np.ndarray:
    if dataset.space.kind == "tabular":
        n = len(states)
        feats = np.zeros((n, dataset.space.num_states))
        feats[np.arange(n), np.asarray(states, dtype=int)] = 1.0
        return feats
    return np.atleast_2d(np.asarray(states, dtype=float))


def _solve_neural(
    config: SolverConfig,
    expert: TransitionDataset,
    behavior: TransitionDataset,
    ratio_estimate: DensityRatioEstimate | None,
    gamma: float,
) -> DiceSolution:
    if ratio_estimate is None:
        if behavior.space.kind != "tabular":
            raise ValueError(
                "continuous solves need a pretrained ratio estimate; train the "
                "classifier first and pass it in")
        ratio_estimate = tabular_ratio(
            expert, behavior, smoothing=config.smoothing, clip=config.ratio_clip)
    rng = np.random.default_rng(config.seed)
    dim = (behavior.space.num_states if behavior.space.kind == "tabular"
           else behavior.space.state_dim)
    net = Mlp.create([dim, *config.hidden, 1], activation="relu",
                     head="scalar", seed=config.seed)
    opt = AdamState.for_net(net, lr=config.lr)
    auto_state = AutoBetaState(
        decay=config.auto_beta_decay, floor=config.auto_beta_floor)
    n = len(behavior)
    m = len(behavior.initial_states)
    trace: list[TraceRow] = []
    beta = DEMODICE_BETA if config.variant == "demodice-limit" else float(config.beta)
    for step in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        idx0 = rng.integers(0, m, size=config.batch_size)
        s_b = behavior.states[idx]
        a_b = behavior.actions[idx]
        n_b = behavior.next_states[idx]
        log_r = ratio_estimate.log_ratio(s_b, a_b)
        if config.beta_mode == "auto" and config.variant != "demodice-limit":
            beta = auto_beta_update(auto_state, np.exp(log_r))
        x0 = _state_features(behavior, behavior.initial_states[idx0])
        xs = _state_features(behavior, s_b)
        xn = _state_features(behavior, n_b)
        stacked = np.vstack([x0, xs, xn])
        out, cache = forward(net, stacked)
        vals = out[:, 0]
        b = config.batch_size
        v0, vs, vn = vals[:b], vals[b:2 * b], vals[2 * b:]
        e = log_r + gamma * vn - vs
        w = inner_weight(e, log_r, config, beta)
        loss = (1.0 - gamma) * float(v0.mean()) + float(w.value.mean())
        dout = np.empty((3 * b, 1))
        dout[:b, 0] = (1.0 - gamma) / b
        dout[b:2 * b, 0] = -w.omega / b
        dout[2 * b:, 0] = gamma * w.omega / b
        dw, db, _ = backward(net, cache, dout)
        if config.gp_coefficient > 0.0:
            pen, pw, pb = gradient_penalty(net, xs)
            loss += config.gp_coefficient * pen
            dw = [g + config.gp_coefficient * p for g, p in zip(dw, pw)]
            db = [g + config.gp_coefficient * p for g, p in zip(db, pb)]
        grads = interleave_grads(dw, db)
        if step % config.log_interval == 0 or step == config.steps - 1:
            gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
            trace.append(TraceRow(step, loss, gnorm, beta, float(w.upper.mean())))
        optimizer_step(opt, net, grads)
    # Final weights over the whole behavior dataset at the trained v.
    log_r_all = ratio_estimate.log_ratio(behavior.states, behavior.actions)
    xs_all = _state_features(behavior, behavior.states)
    xn_all = _state_features(behavior, behavior.next_states)
    vs_all, _ = forward(net, xs_all)
    vn_all, _ = forward(net, xn_all)
    e_all = log_r_all + gamma * vn_all[:, 0] - vs_all[:, 0]
    w_all = inner_weight(e_all, log_r_all, config, beta)
    return DiceSolution(
        config=config,
        beta_used=beta,
        v=net,
        trace=trace,
        converged=True,
        final_grad_norm=trace[-1].grad_norm if trace else float("nan"),
        record_weights=w_all.omega,
        diagnostics={
            "upper_fraction": float(w_all.upper.mean()),
            "clip_fraction": float(w_all.clipped.mean()),
        },
    )


def save_solution(solution: DiceSolution, directory) -> None:
    """Checkpoint: config echo (JSON), trace CSV, v, and the policy if set."""
    os.makedirs(directory, exist_ok=True)
    meta = {
        "config": asdict(solution.config),
        "beta_used": solution.beta_used,
        "converged": solution.converged,
        "final_grad_norm": solution.final_grad_norm,
        "diagnostics": solution.diagnostics,
        "v_kind": "net" if isinstance(solution.v, Mlp) else "vector",
        "policy_kind": (
            None if solution.policy is None
            else "net" if isinstance(solution.policy, Mlp) else "table"),
    }
    with open(os.path.join(directory, "config.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "trace.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "grad_norm", "beta", "upper_fraction"])
        for row in solution.trace:
            writer.writerow([row.step, repr(row.loss), repr(row.grad_norm),
                             repr(row.beta), repr(row.upper_fraction)])
    if isinstance(solution.v, Mlp):
        save_net(solution.v, os.path.join(directory, "v.ckpt"))
    else:
        np.save(os.path.join(directory, "v.npy"), solution.v)
    if solution.policy is not None:
        if isinstance(solution.policy, Mlp):
            save_net(solution.policy, os.path.join(directory, "policy.ckpt"))
        else:
            np.save(os.path.join(directory, "policy.npy"), solution.policy.probs)


@dataclass
class SolutionCheckpoint:
    """What load_solution recovers: enough to evaluate and inspect."""

    config: SolverConfig
    beta_used: float
    converged: bool
    final_grad_norm: float
    v: np.ndarray | Mlp
    policy: TabularPolicy | Mlp | None
    trace: list[TraceRow]


def load_solution(directory) -> SolutionCheckpoint:
    with open(os.path.join(directory, "config.json")) as fh:
        meta = json.load(fh)
    raw = dict(meta["config"])
    raw["ratio_clip"] = tuple(raw["ratio_clip"])
    raw["hidden"] = tuple(raw["hidden"])
    config = SolverConfig(**raw)
    if meta["v_kind"] == "net":
        v = load_net(os.path.join(directory, "v.ckpt"))
    else:
        v = np.load(os.path.join(directory, "v.npy"))
    policy = None
    if meta["policy_kind"] == "table":
        policy = TabularPolicy(np.load(os.path.join(directory, "policy.npy")))
    elif meta["policy_kind"] == "net":
        policy = load_net(os.path.join(directory, "policy.ckpt"))
    trace = []
    with open(os.path.join(directory, "trace.csv"), newline="") as fh:
        for rec in csv.DictReader(fh):
            trace.append(TraceRow(
                step=int(rec["step"]), loss=float(rec["loss"]),
                grad_norm=float(rec["grad_norm"]), beta=float(rec["beta"]),
                upper_fraction=float(rec["upper_fraction"])))
    return SolutionCheckpoint(
        config=config,
        beta_used=float(meta["beta_used"]),
        converged=bool(meta["converged"]),
        final_grad_norm=float(meta["final_grad_norm"]),
        v=v,
        policy=policy,
        trace=trace,
    )
