"""Plain-numpy multilayer perceptrons with manual backpropagation.

Heads: "scalar" (final width 1, squeezed by callers), "logits" (raw vector,
softmax applied downstream), "gaussian" (mean and log-std halves for a
diagonal Gaussian policy, log-std clamped to [-5, 2]).  Activations: relu
(default) and tanh.  Input-gradient penalties get exact parameter gradients
via a second backward pass that carries the activation's second derivative
(identically zero for relu), so penalty training needs no autodiff library.
Everything is float64 and deterministic under a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .datasets import DatasetFormatError, _Reader

NET_MAGIC = b"RDXN"
NET_VERSION = 1
ACTIVATIONS = ("relu", "tanh")
HEADS = ("scalar", "logits", "gaussian")
LOG_STD_RANGE = (-5.0, 2.0)


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act1(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(float)
    t = np.tanh(z)
    return 1.0 - t * t


def _act2(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.zeros_like(z)
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


@dataclass
class Mlp:
    """Fully connected net; weights[l] has shape (fan_out, fan_in)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    head: str = "scalar"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty and aligned")
        if self.head == "scalar" and self.weights[-1].shape[0] != 1:
            raise ValueError("scalar head needs a final layer of width 1")
        if self.head == "gaussian" and self.weights[-1].shape[0] % 2 != 0:
            raise ValueError("gaussian head needs an even final width (mean, log-std)")

    @classmethod
    def create(
        cls,
        layer_sizes: list[int],
        activation: str = "relu",
        head: str = "scalar",
        seed: int = 0,
    ) -> "Mlp":
        """He-initialized (relu) or Xavier-initialized (tanh) net."""
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output size")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            scale = np.sqrt((2.0 if activation == "relu" else 1.0) / fan_in)
            weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases, activation=activation, head=head)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def action_dim(self) -> int:
        if self.head != "gaussian":
            raise ValueError("action_dim is only defined for the gaussian head")
        return self.weights[-1].shape[0] // 2


@dataclass
class ForwardCache:
    x: np.ndarray
    zs: list[np.ndarray]
    activations: list[np.ndarray] = field(default_factory=list)


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Raw final-layer outputs (N, out) plus the cache needed for backward."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    zs, acts = [], []
    a = x
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        zs.append(z)
        if l < len(net.weights) - 1:
            a = _act(net.activation, z)
            acts.append(a)
    return zs[-1], ForwardCache(x=x, zs=zs, activations=acts)


def scalar_output(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    out, cache = forward(net, x)
    return out[:, 0], cache


def backward(
    net: Mlp, cache: ForwardCache, dout: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Parameter gradients (dW, db) and input gradients for a seeded output grad."""
    dout = np.atleast_2d(np.asarray(dout, dtype=float))
    num_layers = len(net.weights)
    dw = [None] * num_layers
    db = [None] * num_layers
    delta = dout
    for l in range(num_layers - 1, -1, -1):
        a_prev = cache.x if l == 0 else cache.activations[l - 1]
        dw[l] = delta.T @ a_prev
        db[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l]
        if l > 0:
            delta = delta * _act1(net.activation, cache.zs[l - 1])
    return dw, db, delta


def input_gradient(net: Mlp, x: np.ndarray) -> np.ndarray:
    """d out / d x for a scalar-head net, one row per input."""
    out, cache = forward(net, x)
    if out.shape[1] != 1:
        raise ValueError("input_gradient expects a scalar head")
    _, _, dinput = backward(net, cache, np.ones_like(out))
    return dinput


def gradient_penalty(
    net: Mlp, x: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared input-gradient norm of a scalar-head net, with exact
    parameter gradients.

    The input gradient g = d out / d x is itself a chain of linear maps and
    activation slopes; backpropagating ||g||^2 through that chain needs the
    activation's second derivative wherever a slope depends on the
    pre-activations.  For relu that term vanishes and the penalty gradient
    reduces to the linear-chain part.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    num_layers = len(net.weights)
    out, cache = forward(net, x)
    if out.shape[1] != 1:
        raise ValueError("gradient_penalty expects a scalar head")
    n = x.shape[0]
    zs = cache.zs

    # Chain u[l] = d out / d z_l, t[l] = d out / d a_l, g = d out / d x.
    u = [None] * num_layers
    t = [None] * num_layers
    u[num_layers - 1] = np.ones((n, 1))
    for l in range(num_layers - 2, -1, -1):
        t[l] = u[l + 1] @ net.weights[l + 1]
        u[l] = t[l] * _act1(net.activation, zs[l])
    g = u[0] @ net.weights[0]
    penalty = float((g * g).sum(axis=1).mean())

    dw = [np.zeros_like(w) for w in net.weights]
    db = [np.zeros_like(b) for b in net.biases]

    # Adjoints through the chain, treating z-dependence separately via zbar.
    gbar = 2.0 * g / n
    dw[0] += u[0].T @ gbar
    ubar = gbar @ net.weights[0].T
    zbar = [None] * max(num_layers - 1, 0)
    for l in range(num_layers - 1):
        slope = _act1(net.activation, zs[l])
        zbar[l] = ubar * t[l] * _act2(net.activation, zs[l])
        tbar = ubar * slope
        dw[l + 1] += u[l + 1].T @ tbar
        ubar = tbar @ net.weights[l + 1].T

    # zbar flows through the ordinary forward graph.
    flow = None
    for l in range(num_layers - 2, -1, -1):
        total = zbar[l] if flow is None else zbar[l] + flow
        a_prev = cache.x if l == 0 else cache.activations[l - 1]
        dw[l] += total.T @ a_prev
        db[l] += total.sum(axis=0)
        if l > 0:
            flow = (total @ net.weights[l]) * _act1(net.activation, zs[l - 1])
    return penalty, dw, db


@dataclass
class GaussianLogProb:
    """Log-density values with the backward seed d logp / d raw outputs."""

    values: np.ndarray
    dout: np.ndarray
    cache: ForwardCache
    clipped_fraction: float


def gaussian_policy_logprob(
    net: Mlp, states: np.ndarray, actions: np.ndarray
) -> GaussianLogProb:
    """Diagonal-Gaussian log pi(a | s) for a gaussian-head net.

    Gradients through clamped log-std coordinates are zero; the fraction of
    clamped coordinates is reported so silent saturation is visible.
    """
    if net.head != "gaussian":
        raise ValueError("gaussian_policy_logprob needs a gaussian head")
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    out, cache = forward(net, states)
    k = net.action_dim
    if actions.shape[1] != k:
        raise ValueError(f"actions have dimension {actions.shape[1]}, net has {k}")
    mean = out[:, :k]
    log_std_raw = out[:, k:]
    log_std = np.clip(log_std_raw, *LOG_STD_RANGE)
    clipped = (log_std_raw < LOG_STD_RANGE[0]) | (log_std_raw > LOG_STD_RANGE[1])
    std = np.exp(log_std)
    z = (actions - mean) / std
    values = (-0.5 * z * z - log_std - 0.5 * np.log(2.0 * np.pi)).sum(axis=1)
    dout = np.empty_like(out)
    dout[:, :k] = z / std
    dout[:, k:] = np.where(clipped, 0.0, z * z - 1.0)
    return GaussianLogProb(
        values=values,
        dout=dout,
        cache=cache,
        clipped_fraction=float(clipped.mean()),
    )


def parameter_names(net: Mlp) -> list[str]:
    names = []
    for l in range(len(net.weights)):
        names += [f"W{l}", f"b{l}"]
    return names


def parameters(net: Mlp) -> list[np.ndarray]:
    """Live references, interleaved [W0, b0, W1, b1, ...]."""
    out = []
    for w, b in zip(net.weights, net.biases):
        out += [w, b]
    return out


def interleave_grads(dw: list[np.ndarray], db: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    for w, b in zip(dw, db):
        out += [w, b]
    return out


@dataclass
class AdamState:
    """Adaptive-moment optimizer state; one slot per parameter array."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 3e-4) -> "AdamState":
        params = parameters(net)
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def optimizer_step(state: AdamState, net: Mlp, grads: list[np.ndarray]) -> None:
    """One in-place adaptive-moment update.  Non-finite gradients raise with
    the offending parameter's name."""
    params = parameters(net)
    names = parameter_names(net)
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for name, g in zip(names, grads):
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name}")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def save_net(net: Mlp, path) -> None:
    """Versioned binary checkpoint: header, sizes, tags, params as f64 LE."""
    out = bytearray()
    out += NET_MAGIC
    out += struct.pack("<H", NET_VERSION)
    out += struct.pack("<BB", ACTIVATIONS.index(net.activation), HEADS.index(net.head))
    sizes = net.layer_sizes
    out += struct.pack("<I", len(net.weights))
    out += struct.pack(f"<{len(sizes)}I", *sizes)
    for w, b in zip(net.weights, net.biases):
        out += np.asarray(w, dtype="<f8").tobytes()
        out += np.asarray(b, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_net(path) -> Mlp:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    try:
        magic = r.take(4)
    except DatasetFormatError as exc:
        raise DatasetFormatError(f"net checkpoint too short: {exc}") from exc
    if magic != NET_MAGIC:
        raise DatasetFormatError("bad magic bytes, not a net checkpoint")
    (version,) = r.unpack("<H")
    if version != NET_VERSION:
        raise DatasetFormatError(
            f"unsupported net checkpoint version {version}, expected {NET_VERSION}")
    act_code, head_code = r.unpack("<BB")
    if act_code >= len(ACTIVATIONS) or head_code >= len(HEADS):
        raise DatasetFormatError("unknown activation or head tag")
    (num_layers,) = r.unpack("<I")
    sizes = r.unpack(f"<{num_layers + 1}I")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(r.take(fan_out * fan_in * 8), dtype="<f8")
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(np.frombuffer(r.take(fan_out * 8), dtype="<f8").copy())
    if r.pos != len(data):
        raise DatasetFormatError("trailing bytes after net parameters")
    return Mlp(
        weights=weights,
        biases=biases,
        activation=ACTIVATIONS[act_code],
        head=HEADS[head_code],
    )
