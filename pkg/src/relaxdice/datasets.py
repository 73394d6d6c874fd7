"""Transition datasets, dataset mixing, and the on-disk container formats.

A dataset is a flat list of (state, action, next_state) records plus a pool
of observed initial states.  Tabular records are integer indices; continuous
records are float vectors.  Serialization is deterministic and bit-exact:
magic "RDXD", version u16, space descriptor, record count u64, records as
little-endian i64 (tabular) or f64 (continuous), initial-state block, an
optional canonical-JSON provenance block, and a CRC32 trailer.  MDP tensors
travel in a sibling "RDXM" container.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

DATASET_MAGIC = b"RDXD"
MDP_MAGIC = b"RDXM"
FORMAT_VERSION = 1

ROLES = ("unspecified", "expert", "behavior")

# Mixture levels: ratio of expert to random records in the behavior dataset.
LEVEL_RATIOS = {"L1": 0.20, "L2": 0.15, "L3": 0.10, "L4": 0.05}


class DatasetFormatError(ValueError):
    """Raised for malformed, truncated, or corrupted container bytes."""


@dataclass(frozen=True)
class SpaceDescriptor:
    """Shape of the state-action space: tabular indices or continuous vectors."""

    kind: str  # "tabular" | "continuous"
    state_dim: int  # num_states when tabular
    action_dim: int  # num_actions when tabular

    def __post_init__(self) -> None:
        if self.kind not in ("tabular", "continuous"):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.state_dim <= 0 or self.action_dim <= 0:
            raise ValueError("space dimensions must be positive")

    @property
    def num_states(self) -> int:
        if self.kind != "tabular":
            raise ValueError("num_states is only defined for tabular spaces")
        return self.state_dim

    @property
    def num_actions(self) -> int:
        if self.kind != "tabular":
            raise ValueError("num_actions is only defined for tabular spaces")
        return self.action_dim


def tabular_space(num_states: int, num_actions: int) -> SpaceDescriptor:
    return SpaceDescriptor("tabular", num_states, num_actions)


def continuous_space(state_dim: int, action_dim: int) -> SpaceDescriptor:
    return SpaceDescriptor("continuous", state_dim, action_dim)


@dataclass
class TransitionDataset:
    """Records (s, a, s') with an initial-state pool and free-form provenance."""

    space: SpaceDescriptor
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    initial_states: np.ndarray
    role: str = "unspecified"
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.space.kind == "tabular":
            self.states = np.asarray(self.states, dtype=np.int64)
            self.actions = np.asarray(self.actions, dtype=np.int64)
            self.next_states = np.asarray(self.next_states, dtype=np.int64)
            self.initial_states = np.asarray(self.initial_states, dtype=np.int64)
            for name, arr in (("states", self.states), ("actions", self.actions),
                              ("next_states", self.next_states),
                              ("initial_states", self.initial_states)):
                if arr.ndim != 1:
                    raise ValueError(f"{name} must be 1-d for tabular data")
            hi = self.space.num_states
            for name, arr in (("states", self.states),
                              ("next_states", self.next_states),
                              ("initial_states", self.initial_states)):
                if arr.size and (arr.min() < 0 or arr.max() >= hi):
                    raise ValueError(f"{name} contains indices outside [0, {hi})")
            if self.actions.size and (self.actions.min() < 0
                                      or self.actions.max() >= self.space.num_actions):
                raise ValueError("actions contain indices outside the action space")
        else:
            self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
            self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
            self.next_states = np.atleast_2d(
                np.asarray(self.next_states, dtype=np.float64))
            self.initial_states = np.asarray(
                self.initial_states, dtype=np.float64).reshape(-1, self.space.state_dim)
            if self.states.shape[1] != self.space.state_dim:
                raise ValueError("state vectors do not match the space descriptor")
            if self.actions.shape[1] != self.space.action_dim:
                raise ValueError("action vectors do not match the space descriptor")
            if self.next_states.shape[1] != self.space.state_dim:
                raise ValueError("next-state vectors do not match the space descriptor")
        n = len(self.states)
        if len(self.actions) != n or len(self.next_states) != n:
            raise ValueError("records must have equal numbers of s, a, s' entries")

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionDataset):
            return NotImplemented
        return (self.space == other.space
                and self.role == other.role
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.next_states, other.next_states)
                and np.array_equal(self.initial_states, other.initial_states)
                and _canonical_json(self.provenance) == _canonical_json(other.provenance))

    def subset(self, indices: np.ndarray) -> "TransitionDataset":
        """New dataset keeping the selected records and the whole initial pool."""
        idx = np.asarray(indices)
        return replace(
            self,
            states=self.states[idx],
            actions=self.actions[idx],
            next_states=self.next_states[idx],
            initial_states=self.initial_states.copy(),
            provenance=dict(self.provenance),
        )


def _canonical_json(obj: dict[str, Any]) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dataset_bytes(dataset: TransitionDataset) -> bytes:
    """Serialize to the RDXD container.  Deterministic for equal datasets."""
    if dataset.role == "behavior" and len(dataset.initial_states) == 0:
        raise DatasetFormatError(
            "behavior datasets must carry a nonempty initial-state pool")
    out = bytearray()
    out += DATASET_MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    kind = 0 if dataset.space.kind == "tabular" else 1
    out += struct.pack("<BB", kind, ROLES.index(dataset.role))
    out += struct.pack("<II", dataset.space.state_dim, dataset.space.action_dim)
    out += struct.pack("<Q", len(dataset))
    if kind == 0:
        recs = np.column_stack([dataset.states, dataset.actions, dataset.next_states])
        out += recs.astype("<i8").tobytes()
        out += struct.pack("<Q", len(dataset.initial_states))
        out += dataset.initial_states.astype("<i8").tobytes()
    else:
        recs = np.hstack([dataset.states, dataset.actions, dataset.next_states])
        out += recs.astype("<f8").tobytes()
        out += struct.pack("<Q", len(dataset.initial_states))
        out += dataset.initial_states.astype("<f8").tobytes()
    prov = _canonical_json(dataset.provenance) if dataset.provenance else b""
    out += struct.pack("<I", len(prov))
    out += prov
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatasetFormatError(
                f"truncated container: wanted {n} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} remain"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def dataset_from_bytes(data: bytes) -> TransitionDataset:
    """Parse an RDXD container, checking structure and the CRC32 trailer."""
    if len(data) < 4:
        raise DatasetFormatError("container shorter than the magic header")
    crc_stored = struct.unpack("<I", data[-4:])[0]
    crc_actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if crc_stored != crc_actual:
        raise DatasetFormatError(
            f"checksum mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
        )
    r = _Reader(data[:-4])
    if r.take(4) != DATASET_MAGIC:
        raise DatasetFormatError("bad magic bytes, not an RDXD container")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported format version {version}, expected {FORMAT_VERSION}"
        )
    kind_code, role_code = r.unpack("<BB")
    if kind_code not in (0, 1) or role_code >= len(ROLES):
        raise DatasetFormatError("unknown space or role tag")
    d1, d2 = r.unpack("<II")
    space = SpaceDescriptor("tabular" if kind_code == 0 else "continuous", d1, d2)
    (n,) = r.unpack("<Q")
    if kind_code == 0:
        recs = np.frombuffer(r.take(n * 3 * 8), dtype="<i8").reshape(n, 3)
        states, actions, nexts = recs[:, 0], recs[:, 1], recs[:, 2]
        (m,) = r.unpack("<Q")
        initial = np.frombuffer(r.take(m * 8), dtype="<i8")
    else:
        width = 2 * d1 + d2
        recs = np.frombuffer(r.take(n * width * 8), dtype="<f8").reshape(n, width)
        states = recs[:, :d1]
        actions = recs[:, d1:d1 + d2]
        nexts = recs[:, d1 + d2:]
        (m,) = r.unpack("<Q")
        initial = np.frombuffer(r.take(m * d1 * 8), dtype="<f8").reshape(m, d1)
    (prov_len,) = r.unpack("<I")
    prov_raw = r.take(prov_len)
    if r.pos != len(r.data):
        raise DatasetFormatError(f"{len(r.data) - r.pos} trailing bytes after payload")
    provenance = json.loads(prov_raw.decode("utf-8")) if prov_len else {}
    role = ROLES[role_code]
    if role == "behavior" and m == 0:
        raise DatasetFormatError(
            "behavior dataset has an empty initial-state pool"
        )
    return TransitionDataset(
        space=space,
        states=states.copy(),
        actions=actions.copy(),
        next_states=nexts.copy(),
        initial_states=initial.copy(),
        role=role,
        provenance=provenance,
    )


def save_dataset(dataset: TransitionDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(dataset))


def load_dataset(path) -> TransitionDataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


@dataclass(frozen=True)
class MixSpec:
    """Target record counts for a behavior mixture, with an optional level tag."""

    num_expert: int
    num_random: int
    level: str = ""

    def __post_init__(self) -> None:
        if self.num_expert < 0 or self.num_random < 0:
            raise ValueError("mixture sizes must be nonnegative")


def mix_spec_for_level(level: str, num_random: int) -> MixSpec:
    """MixSpec with the expert share implied by a named mixture level."""
    if level not in LEVEL_RATIOS:
        raise ValueError(f"unknown mixture level {level!r}, known: {sorted(LEVEL_RATIOS)}")
    return MixSpec(
        num_expert=int(round(LEVEL_RATIOS[level] * num_random)),
        num_random=num_random,
        level=level,
    )


def mix_datasets(
    expert_pool: TransitionDataset,
    random_pool: TransitionDataset,
    spec: MixSpec,
    seed: int,
) -> TransitionDataset:
    """Subsample both pools without replacement and shuffle into one mixture.

    The result is role "behavior"; its initial-state pool is the concatenation
    of both pools' initial states (all are draws from the same p0).  Provenance
    records the mix sizes, the realized expert share, and the seed.
    """
    if expert_pool.space != random_pool.space:
        raise ValueError("pools live in different spaces")
    if spec.num_expert > len(expert_pool):
        raise ValueError(
            f"requested {spec.num_expert} expert records, pool has {len(expert_pool)}"
        )
    if spec.num_random > len(random_pool):
        raise ValueError(
            f"requested {spec.num_random} random records, pool has {len(random_pool)}"
        )
    rng = np.random.default_rng(seed)
    take_e = rng.choice(len(expert_pool), size=spec.num_expert, replace=False)
    take_r = rng.choice(len(random_pool), size=spec.num_random, replace=False)
    states = np.concatenate([expert_pool.states[take_e], random_pool.states[take_r]])
    actions = np.concatenate([expert_pool.actions[take_e], random_pool.actions[take_r]])
    nexts = np.concatenate(
        [expert_pool.next_states[take_e], random_pool.next_states[take_r]])
    order = rng.permutation(len(states))
    total = max(len(states), 1)
    provenance = {
        "kind": "mixture",
        "level": spec.level,
        "num_expert": spec.num_expert,
        "num_random": spec.num_random,
        "realized_expert_share": spec.num_expert / total,
        "seed": seed,
    }
    return TransitionDataset(
        space=expert_pool.space,
        states=states[order],
        actions=actions[order],
        next_states=nexts[order],
        initial_states=np.concatenate(
            [expert_pool.initial_states, random_pool.initial_states]),
        role="behavior",
        provenance=provenance,
    )


def mdp_bytes(mdp) -> bytes:
    """Serialize a tabular MDP (sizes, gamma, p0, transition tensor) to RDXM."""
    out = bytearray()
    out += MDP_MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    s, a = mdp.num_states, mdp.num_actions
    out += struct.pack("<II", s, a)
    out += struct.pack("<d", float(mdp.gamma))
    out += np.asarray(mdp.p0, dtype="<f8").tobytes()
    out += np.asarray(mdp.transition, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def mdp_from_bytes(data: bytes):
    from .mdp import TabularMDP  # local import, mdp.py imports this module

    if len(data) < 4:
        raise DatasetFormatError("container shorter than the magic header")
    crc_stored = struct.unpack("<I", data[-4:])[0]
    if crc_stored != (zlib.crc32(data[:-4]) & 0xFFFFFFFF):
        raise DatasetFormatError("checksum mismatch in MDP container")
    r = _Reader(data[:-4])
    if r.take(4) != MDP_MAGIC:
        raise DatasetFormatError("bad magic bytes, not an RDXM container")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported format version {version}")
    s, a = r.unpack("<II")
    (gamma,) = r.unpack("<d")
    p0 = np.frombuffer(r.take(s * 8), dtype="<f8").copy()
    transition = np.frombuffer(r.take(s * a * s * 8), dtype="<f8").reshape(s, a, s).copy()
    if r.pos != len(r.data):
        raise DatasetFormatError("trailing bytes after MDP payload")
    return TabularMDP(transition=transition, p0=p0, gamma=gamma)


def save_mdp(mdp, path) -> None:
    with open(path, "wb") as fh:
        fh.write(mdp_bytes(mdp))


def load_mdp(path):
    with open(path, "rb") as fh:
        return mdp_from_bytes(fh.read())
