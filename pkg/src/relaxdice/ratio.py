"""Density-ratio estimation r = d_expert / d_behavior over state-action pairs.

Two estimators share one interface: exact tabular counting with optional
additive smoothing, and a logistic classifier c(x) trained to separate
expert from behavior samples, mapped through the link r = c / (1 - c).
Stored tabular ratios are exact (so expectations under the behavior measure
telescope to 1); clipping to [r_min, r_max] is applied where ratios feed
logarithms, and always on the classifier path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import SpaceDescriptor, TransitionDataset
from .divergence import SupportViolationError
from .nets import (
    AdamState,
    Mlp,
    backward,
    forward,
    gradient_penalty,
    interleave_grads,
    optimizer_step,
)

DEFAULT_CLIP = (1e-4, 1e4)


def one_hot_features(
    states: np.ndarray, actions: np.ndarray, num_states: int, num_actions: int
) -> np.ndarray:
    """Concatenated one-hot encodings of (s, a) pairs."""
    n = len(states)
    feats = np.zeros((n, num_states + num_actions))
    feats[np.arange(n), np.asarray(states, dtype=int)] = 1.0
    feats[np.arange(n), num_states + np.asarray(actions, dtype=int)] = 1.0
    return feats


def pair_features(dataset: TransitionDataset) -> np.ndarray:
    """Classifier inputs for a dataset: one-hots (tabular) or raw vectors."""
    if dataset.space.kind == "tabular":
        return one_hot_features(
            dataset.states, dataset.actions,
            dataset.space.num_states, dataset.space.num_actions)
    return np.hstack([dataset.states, dataset.actions])


@dataclass
class DensityRatioEstimate:
    """Either an exact (S, A) ratio table or a trained classifier.

    `table` holds unclipped values in tabular mode; accessors clip so that
    log-ratios stay finite.  The classifier path always clips after the link.
    """

    space: SpaceDescriptor
    clip: tuple[float, float] = DEFAULT_CLIP
    table: np.ndarray | None = None
    classifier: Mlp | None = None
    raw_features: bool = False  # classifier trained on bare feature arrays
    trace: list[tuple[int, float]] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if (self.table is None) == (self.classifier is None):
            raise ValueError("exactly one of table or classifier must be set")
        lo, hi = self.clip
        if not (0.0 < lo < hi):
            raise ValueError("clip bounds must satisfy 0 < r_min < r_max")

    @property
    def mode(self) -> str:
        return "tabular" if self.table is not None else "classifier"

    def ratio(self, states: np.ndarray, actions: np.ndarray | None = None) -> np.ndarray:
        """Clipped ratio values per (s, a) pair (or per feature row when the
        classifier was trained on bare arrays)."""
        lo, hi = self.clip
        if self.table is not None:
            raw = self.table[np.asarray(states, dtype=int),
                             np.asarray(actions, dtype=int)]
            return np.clip(raw, lo, hi)
        feats = self._features(states, actions)
        logits, _ = forward(self.classifier, feats)
        c = _sigmoid(logits[:, 0])
        return np.clip(link(c), lo, hi)

    def log_ratio(self, states: np.ndarray, actions: np.ndarray | None = None) -> np.ndarray:
        return np.log(self.ratio(states, actions))

    def ratio_table(self) -> np.ndarray:
        """Clipped (S, A) table; materializes the classifier on tabular spaces."""
        if self.space.kind != "tabular":
            raise ValueError("ratio_table needs a tabular space")
        s, a = self.space.num_states, self.space.num_actions
        grid_s, grid_a = np.divmod(np.arange(s * a), a)
        return self.ratio(grid_s, grid_a).reshape(s, a)

    def _features(self, states, actions) -> np.ndarray:
        if self.raw_features:
            feats = np.asarray(states, dtype=float)
            return feats.reshape(len(feats), -1)
        if self.space.kind == "tabular":
            return one_hot_features(
                states, actions, self.space.num_states, self.space.num_actions)
        s = np.atleast_2d(np.asarray(states, dtype=float))
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        return np.hstack([s, a])


def pair_counts(dataset: TransitionDataset) -> np.ndarray:
    """Visit counts per (s, a) cell."""
    s, a = dataset.space.num_states, dataset.space.num_actions
    counts = np.zeros((s, a))
    np.add.at(counts, (dataset.states, dataset.actions), 1.0)
    return counts


def tabular_ratio(
    expert: TransitionDataset,
    behavior: TransitionDataset,
    smoothing: float = 0.0,
    clip: tuple[float, float] = DEFAULT_CLIP,
) -> DensityRatioEstimate:
    """Counting estimate r(s, a) = p_expert(s, a) / p_behavior(s, a).

    With additive smoothing lam the estimate is
    ((c_E + lam) / (N_E + lam S A)) / ((c_U + lam) / (N_U + lam S A)).
    With smoothing 0, a pair the expert visits but the behavior data never
    does has no finite ratio and raises; pairs absent from both datasets get
    ratio 0 (the expert density there is 0, and such pairs never enter
    behavior-side expectations).
    """
    if expert.space != behavior.space or expert.space.kind != "tabular":
        raise ValueError("tabular_ratio needs two datasets on one tabular space")
    if smoothing < 0.0:
        raise ValueError("smoothing must be nonnegative")
    if len(expert) == 0 or len(behavior) == 0:
        raise ValueError("datasets must be nonempty")
    counts_e = pair_counts(expert)
    counts_u = pair_counts(behavior)
    cells = counts_e.size
    if smoothing == 0.0:
        orphan = (counts_e > 0) & (counts_u == 0)
        if orphan.any():
            s, a = np.argwhere(orphan)[0]
            raise SupportViolationError(
                f"pair (s={s}, a={a}) appears in the expert data but never in "
                "the behavior data; use smoothing > 0 or widen the behavior pool"
            )
        p_e = counts_e / len(expert)
        p_u = counts_u / len(behavior)
        table = np.zeros_like(p_e)
        seen = counts_u > 0
        table[seen] = p_e[seen] / p_u[seen]
    else:
        p_e = (counts_e + smoothing) / (len(expert) + smoothing * cells)
        p_u = (counts_u + smoothing) / (len(behavior) + smoothing * cells)
        table = p_e / p_u
    return DensityRatioEstimate(space=expert.space, clip=clip, table=table)


def link(c: np.ndarray) -> np.ndarray:
    """Map classifier probability c to the ratio c / (1 - c)."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0.0) or np.any(c > 1.0):
        raise ValueError("classifier outputs must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return np.where(c < 1.0, c / (1.0 - c), np.inf)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def classification_loss(net: Mlp, x_expert: np.ndarray, x_behavior: np.ndarray) -> float:
    """E_expert[-log c] + E_behavior[-log (1 - c)] for a scalar-logit net."""
    z_e, _ = forward(net, x_expert)
    z_u, _ = forward(net, x_behavior)
    return float(_softplus(-z_e[:, 0]).mean() + _softplus(z_u[:, 0]).mean())


def analytic_optimal_loss(p_expert: np.ndarray, p_behavior: np.ndarray) -> float:
    """Classification loss at the Bayes classifier c* = p_E / (p_E + p_U):
    the sum of the two cross-entropy terms against c* and 1 - c*."""
    p_e = np.asarray(p_expert, dtype=float).ravel()
    p_u = np.asarray(p_behavior, dtype=float).ravel()
    total = p_e + p_u
    mask_e = p_e > 0
    mask_u = p_u > 0
    loss_e = -np.dot(p_e[mask_e], np.log(p_e[mask_e] / total[mask_e]))
    loss_u = -np.dot(p_u[mask_u], np.log(p_u[mask_u] / total[mask_u]))
    return float(loss_e + loss_u)


def train_classifier(
    expert,
    behavior,
    hidden: tuple[int, ...] = (256, 256),
    gp_coefficient: float = 10.0,
    steps: int = 2000,
    batch_size: int = 256,
    lr: float = 3e-4,
    seed: int = 0,
    clip: tuple[float, float] = DEFAULT_CLIP,
    space: SpaceDescriptor | None = None,
    log_interval: int = 100,
) -> DensityRatioEstimate:
    """Train the logistic classifier and wrap it as a ratio estimate.

    `expert` and `behavior` are TransitionDatasets or raw feature arrays.
    Minibatches are balanced: half of each batch from each dataset.  The
    penalty is gp_coefficient times the mean squared input-gradient norm of
    the logit at the batch's own points.
    """
    raw = False
    if isinstance(expert, TransitionDataset):
        if space is None:
            space = expert.space
        x_e = pair_features(expert)
    else:
        x_e = np.asarray(expert, dtype=float)
        x_e = x_e.reshape(len(x_e), -1)
    if isinstance(behavior, TransitionDataset):
        x_u = pair_features(behavior)
    else:
        x_u = np.asarray(behavior, dtype=float)
        x_u = x_u.reshape(len(x_u), -1)
    if space is None:
        # Bare feature arrays: the descriptor records the feature width only.
        space = SpaceDescriptor("continuous", x_e.shape[1], 1)
        raw = True
    if x_e.shape[1] != x_u.shape[1]:
        raise ValueError("expert and behavior features disagree in dimension")

    rng = np.random.default_rng(seed)
    net = Mlp.create([x_e.shape[1], *hidden, 1], activation="relu",
                     head="scalar", seed=seed)
    opt = AdamState.for_net(net, lr=lr)
    half = max(batch_size // 2, 1)
    trace: list[tuple[int, float]] = []
    for step in range(steps):
        idx_e = rng.integers(0, len(x_e), size=half)
        idx_u = rng.integers(0, len(x_u), size=half)
        be, bu = x_e[idx_e], x_u[idx_u]
        z_e, cache_e = forward(net, be)
        z_u, cache_u = forward(net, bu)
        loss = float(_softplus(-z_e[:, 0]).mean() + _softplus(z_u[:, 0]).mean())
        # d loss / d z: -sigmoid(-z) on expert rows, sigmoid(z) on behavior rows.
        dz_e = (-_sigmoid(-z_e[:, 0]) / half)[:, None]
        dz_u = (_sigmoid(z_u[:, 0]) / half)[:, None]
        dw_e, db_e, _ = backward(net, cache_e, dz_e)
        dw_u, db_u, _ = backward(net, cache_u, dz_u)
        dw = [a + b for a, b in zip(dw_e, dw_u)]
        db = [a + b for a, b in zip(db_e, db_u)]
        if gp_coefficient > 0.0:
            pen, pw, pb = gradient_penalty(net, np.vstack([be, bu]))
            loss += gp_coefficient * pen
            dw = [a + gp_coefficient * b for a, b in zip(dw, pw)]
            db = [a + gp_coefficient * b for a, b in zip(db, pb)]
        optimizer_step(opt, net, interleave_grads(dw, db))
        if step % log_interval == 0 or step == steps - 1:
            trace.append((step, loss))
    return DensityRatioEstimate(
        space=space, clip=clip, classifier=net, raw_features=raw, trace=trace)
