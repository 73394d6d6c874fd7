"""Policies from weighted data: closed-form tabular extraction and weighted BC.

A solved dual gives every behavior record a weight omega approximating
d*(s, a) / d_behavior(s, a).  In tabular spaces the weighted empirical
conditional

    pi(a | s) proportional to sum_i omega_i 1[s_i = s, a_i = a]

is the exact maximum-likelihood policy under the reweighted data, so
extraction is a normalization, not a training run.  The neural path minimizes
the same weighted negative log-likelihood with minibatches, which also covers
continuous actions via a diagonal-Gaussian head.

The eta-mixture behavioral-cloning baselines live here too: they skip the
dual solve and mix expert and union empirical conditionals directly, with an
optional per-pair density-ratio factor on the union side.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datasets import TransitionDataset
from .mdp import TabularPolicy
from .nets import (
    AdamState,
    Mlp,
    backward,
    forward,
    gaussian_policy_logprob,
    interleave_grads,
    optimizer_step,
)
from .ratio import DensityRatioEstimate, tabular_ratio

UNVISITED_MESSAGE = "states with no weighted visits fall back to uniform"


def weighted_action_counts(
    states: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
    num_states: int,
    num_actions: int,
) -> np.ndarray:
    """Sum of per-record weights into an (S, A) table."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0.0):
        raise ValueError("extraction weights must be nonnegative")
    if len(weights) != len(states):
        raise ValueError("one weight per record required")
    table = np.zeros((num_states, num_actions))
    np.add.at(table, (np.asarray(states, dtype=int), np.asarray(actions, dtype=int)),
              weights)
    return table


def policy_from_weighted_counts(counts: np.ndarray) -> TabularPolicy:
    """Row-normalize a nonnegative table; empty rows become uniform (warned)."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0.0):
        raise ValueError("counts must be nonnegative")
    row_sums = counts.sum(axis=1)
    empty = row_sums <= 0.0
    if empty.any():
        warnings.warn(
            f"{int(empty.sum())} of {len(counts)} {UNVISITED_MESSAGE}",
            RuntimeWarning, stacklevel=2)
    probs = np.where(
        empty[:, None],
        1.0 / counts.shape[1],
        counts / np.where(empty, 1.0, row_sums)[:, None])
    return TabularPolicy(probs)


def extract_policy(solution, behavior: TransitionDataset) -> TabularPolicy:
    """Closed-form weighted-BC policy from a solved dual on tabular data.

    `solution` only needs a record_weights attribute aligned with `behavior`.
    """
    if behavior.space.kind != "tabular":
        raise ValueError("closed-form extraction needs a tabular dataset")
    counts = weighted_action_counts(
        behavior.states, behavior.actions, solution.record_weights,
        behavior.space.num_states, behavior.space.num_actions)
    return policy_from_weighted_counts(counts)


def _empirical_conditionals(
    dataset: TransitionDataset, per_record: np.ndarray | None = None
) -> np.ndarray:
    s, a = dataset.space.num_states, dataset.space.num_actions
    w = np.ones(len(dataset)) if per_record is None else per_record
    return weighted_action_counts(dataset.states, dataset.actions, w, s, a) / max(
        len(dataset), 1)


def bc_eta(
    expert: TransitionDataset, behavior: TransitionDataset, eta: float
) -> TabularPolicy:
    """Behavioral cloning on the eta-mixture of expert and union data.

    pi(a | s) proportional to eta c_E(s, a) / N_E + (1 - eta) c_U(s, a) / N_U.
    eta = 1 clones the expert alone; eta = 0 clones the union alone.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if expert.space != behavior.space or expert.space.kind != "tabular":
        raise ValueError("bc_eta needs matching tabular spaces")
    mix = eta * _empirical_conditionals(expert) \
        + (1.0 - eta) * _empirical_conditionals(behavior)
    return policy_from_weighted_counts(mix)


def bc_drc_eta(
    expert: TransitionDataset,
    behavior: TransitionDataset,
    eta: float,
    ratio_estimate: DensityRatioEstimate | None = None,
    smoothing: float = 0.0,
    clip: tuple[float, float] = (1e-4, 1e4),
) -> TabularPolicy:
    """bc_eta with the union side reweighted by the density ratio.

    Union records count r(s, a) each, steering the (1 - eta) share toward
    expert-like pairs instead of the raw union frequencies.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if expert.space != behavior.space or expert.space.kind != "tabular":
        raise ValueError("bc_drc_eta needs matching tabular spaces")
    if ratio_estimate is None:
        ratio_estimate = tabular_ratio(
            expert, behavior, smoothing=smoothing, clip=clip)
    ratios = ratio_estimate.ratio(behavior.states, behavior.actions)
    mix = eta * _empirical_conditionals(expert) \
        + (1.0 - eta) * _empirical_conditionals(behavior, per_record=ratios)
    return policy_from_weighted_counts(mix)


@dataclass
class BcTrainConfig:
    """Minibatch weighted-BC settings for the function-approximation path."""

    hidden: tuple[int, ...] = (256, 256)
    steps: int = 5000
    batch_size: int = 256
    lr: float = 3e-5
    seed: int = 0
    normalization: str = "self"  # "self" | "none"
    activation: str = "relu"
    log_interval: int = 500

    def __post_init__(self) -> None:
        if self.normalization not in ("self", "none"):
            raise ValueError("normalization must be 'self' or 'none'")


@dataclass
class BcTrainResult:
    net: Mlp
    loss_trace: list[tuple[int, float]]


def _state_features(dataset: TransitionDataset, states: np.ndarray) -> np.ndarray:
    if dataset.space.kind == "tabular":
        n = len(states)
        feats = np.zeros((n, dataset.space.num_states))
        feats[np.arange(n), np.asarray(states, dtype=int)] = 1.0
        return feats
    return np.atleast_2d(np.asarray(states, dtype=float))


def train_weighted_bc(
    dataset: TransitionDataset,
    weights: np.ndarray,
    config: BcTrainConfig = BcTrainConfig(),
) -> BcTrainResult:
    """Minimize weighted negative log-likelihood of recorded actions.

    Self-normalization divides each minibatch by its own weight sum, so the
    scale of the weights cancels; "none" uses plain weight-times-loss means,
    keeping the scale (useful when weights are already calibrated ratios).
    Tabular spaces get a logits head over actions, continuous ones a
    diagonal-Gaussian head.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0.0):
        raise ValueError("weights must be nonnegative")
    if len(weights) != len(dataset):
        raise ValueError("one weight per record required")
    tabular = dataset.space.kind == "tabular"
    in_dim = dataset.space.num_states if tabular else dataset.space.state_dim
    if tabular:
        out_dim = dataset.space.num_actions
        head = "logits"
    else:
        out_dim = 2 * dataset.space.action_dim
        head = "gaussian"
    net = Mlp.create([in_dim, *config.hidden, out_dim],
                     activation=config.activation, head=head, seed=config.seed)
    opt = AdamState.for_net(net, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    trace: list[tuple[int, float]] = []
    for step in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        w = weights[idx]
        if config.normalization == "self":
            denom = float(w.sum())
            if denom <= 0.0:
                continue  # nothing to learn from an all-zero batch
            scale = w / denom
        else:
            scale = w / config.batch_size
        xs = _state_features(dataset, dataset.states[idx])
        if tabular:
            logits, cache = forward(net, xs)
            shifted = logits - logits.max(axis=1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
            acts = dataset.actions[idx]
            logp = logits[np.arange(len(idx)), acts] - logz
            loss = -float(scale @ logp)
            soft = np.exp(logits - logz[:, None])
            dlogits = soft * scale[:, None]
            dlogits[np.arange(len(idx)), acts] -= scale
            dw, db, _ = backward(net, cache, dlogits)
        else:
            lp = gaussian_policy_logprob(net, xs, dataset.actions[idx])
            loss = -float(scale @ lp.values)
            dout = -scale[:, None] * lp.dout
            dw, db, _ = backward(net, lp.cache, dout)
        optimizer_step(opt, net, interleave_grads(dw, db))
        if step % config.log_interval == 0 or step == config.steps - 1:
            trace.append((step, loss))
    return BcTrainResult(net=net, loss_trace=trace)


def policy_from_net(net: Mlp, num_states: int) -> TabularPolicy:
    """Tabulate a logits-head net over one-hot states into a policy."""
    if net.head != "logits":
        raise ValueError("policy_from_net needs a logits head")
    eye = np.eye(num_states)
    logits, _ = forward(net, eye)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return TabularPolicy(probs)
