"""Replay memories: a uniform ring buffer and a proportional prioritized buffer.

Both buffers store transitions column-wise in preallocated numpy arrays and
draw randomness only from a caller-supplied ``numpy.random.Generator``, so a
batch sequence is a pure function of (contents, seed, draw count).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, NamedTuple, Optional, Union

import numpy as np

from .sumtree import SumTree


class ReplayError(ValueError):
    pass


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class Batch:
    """Column-wise view of sampled transitions.

    ``generations`` records the write count of each slot at sampling time so
    priority updates can detect slots that were overwritten in between.
    """

    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    is_weights: np.ndarray
    generations: np.ndarray
    probabilities: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.indices)

    def transition(self, j: int) -> Transition:
        return Transition(
            self.states[j], int(self.actions[j]), float(self.rewards[j]), self.next_states[j], bool(self.terminals[j])
        )


@dataclass
class PerConfig:
    """Proportional prioritization parameters.

    ``beta`` is annealed linearly from ``beta_start`` to ``beta_end`` over
    ``beta_steps`` sampling calls.  With ``stratified`` the total mass is split
    into one segment per batch element; otherwise every element is a root draw.
    """

    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    beta_steps: int = 100_000
    epsilon_priority: float = 1e-6
    stratified: bool = True

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ReplayError(f"alpha must be >= 0, got {self.alpha}")
        if not (0.0 <= self.beta_start <= 1.0 and 0.0 <= self.beta_end <= 1.0):
            raise ReplayError("beta values must lie in [0, 1]")
        if self.epsilon_priority <= 0:
            raise ReplayError("epsilon_priority must be > 0")
        if self.beta_steps < 1:
            raise ReplayError("beta_steps must be >= 1")

    def beta_at(self, step: int) -> float:
        frac = min(max(step, 0) / self.beta_steps, 1.0)
        return self.beta_start + frac * (self.beta_end - self.beta_start)

    def priority(self, td_errors) -> np.ndarray:
        return (np.abs(np.asarray(td_errors, dtype=np.float64)) + self.epsilon_priority) ** self.alpha

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "PerConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ReplayError(f"unknown PER config keys: {sorted(unknown)}")
        return cls(**data)


class UniformBuffer:
    """FIFO ring buffer sampled uniformly with replacement."""

    kind = "uniform"

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ReplayError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.states = np.zeros((self.capacity, self.state_dim), dtype=np.float64)
        self.next_states = np.zeros((self.capacity, self.state_dim), dtype=np.float64)
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity, dtype=np.float64)
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self.generations = np.zeros(self.capacity, dtype=np.int64)
        self.cursor = 0
        self.size = 0
        self.writes = 0

    def __len__(self) -> int:
        return self.size

    def push(self, transition: Transition) -> int:
        state = np.asarray(transition.state, dtype=np.float64)
        next_state = np.asarray(transition.next_state, dtype=np.float64)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ReplayError(
                f"state dimension mismatch: buffer holds {self.state_dim}, got {state.shape} / {next_state.shape}"
            )
        slot = self.cursor
        self.states[slot] = state
        self.next_states[slot] = next_state
        self.actions[slot] = int(transition.action)
        self.rewards[slot] = float(transition.reward)
        self.terminals[slot] = bool(transition.terminal)
        self.writes += 1
        self.generations[slot] = self.writes
        self.cursor = (slot + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def _check_available(self, n: int) -> None:
        if n < 1:
            raise ReplayError(f"batch size must be positive, got {n}")
        if self.size < n:
            raise ReplayError(f"buffer underfilled: requested {n} transitions, {self.size} available")

    def gather(self, indices: np.ndarray, is_weights: Optional[np.ndarray] = None, probabilities=None) -> Batch:
        indices = np.asarray(indices, dtype=np.int64)
        if is_weights is None:
            is_weights = np.ones(len(indices), dtype=np.float64)
        return Batch(
            indices=indices,
            states=self.states[indices],
            actions=self.actions[indices],
            rewards=self.rewards[indices],
            next_states=self.next_states[indices],
            terminals=self.terminals[indices],
            is_weights=is_weights,
            generations=self.generations[indices].copy(),
            probabilities=probabilities,
        )

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        self._check_available(n)
        # floor(u * size) so equal-priority root draws in PrioritizedBuffer pick the same slots
        return np.minimum((rng.random(n) * self.size).astype(np.int64), self.size - 1)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        return self.gather(self.sample_indices(n, rng))

    def transitions(self):
        """Stored transitions, oldest first."""
        start = self.cursor if self.size == self.capacity else 0
        for k in range(self.size):
            i = (start + k) % self.capacity
            yield Transition(
                self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                self.next_states[i].copy(), bool(self.terminals[i]),
            )


class PrioritizedBuffer(UniformBuffer):
    """Ring buffer with a sum-tree over priorities ``(|delta| + eps) ** alpha``."""

    kind = "per"

    def __init__(self, capacity: int, state_dim: int, config: Optional[PerConfig] = None):
        super().__init__(capacity, state_dim)
        self.config = config or PerConfig()
        self.tree = SumTree(self.capacity)
        self.sample_calls = 0
        self.stale_updates = 0

    def max_priority(self) -> float:
        if self.size == 0:
            return 1.0
        return float(np.max(self.tree.leaves[: self.size]))

    def push(self, transition: Transition) -> int:
        priority = self.max_priority()
        slot = super().push(transition)
        self.tree.update(slot, priority)
        return slot

    def sample(self, n: int, rng: np.random.Generator, beta: Optional[float] = None) -> Batch:
        self._check_available(n)
        total = self.tree.total
        if not total > 0.0:
            raise ReplayError("cannot sample: total priority is zero")
        if beta is None:
            beta = self.config.beta_at(self.sample_calls)
        self.sample_calls += 1
        if self.config.stratified:
            segment = total / n
            u = (np.arange(n) + rng.random(n)) * segment
        else:
            u = rng.random(n) * total
        indices = self.tree.find(u)
        # guard against the unused tail when rounding lands past the last stored leaf
        indices = np.minimum(indices, self.size - 1)
        probs = self.tree.leaves[indices] / total
        return self.gather(indices, is_weights=self.is_weights(indices, beta), probabilities=probs)

    def is_weights(self, indices, beta: float) -> np.ndarray:
        """``(M * P(i)) ** -beta`` normalized by the batch maximum."""
        probs = self.tree.leaves[np.asarray(indices, dtype=np.int64)] / self.tree.total
        weights = (self.size * probs) ** (-beta)
        return weights / np.max(weights)

    def update_priorities(self, indices, td_errors, generations=None) -> int:
        """Write new priorities; returns how many updates were skipped as stale."""
        indices = np.asarray(indices, dtype=np.int64)
        priorities = self.config.priority(td_errors)
        if priorities.shape != indices.shape:
            raise ReplayError("indices and td_errors must have equal lengths")
        skipped = 0
        for k, (i, p) in enumerate(zip(indices, priorities)):
            if not 0 <= i < self.size:
                raise ReplayError(f"index {i} outside stored range [0, {self.size})")
            if generations is not None and self.generations[i] != generations[k]:
                skipped += 1
                continue
            self.tree.update(int(i), float(p))
        self.stale_updates += skipped
        return skipped


def compose_per_pbwl(is_weights, omegas) -> np.ndarray:
    """Element-wise product of importance-sampling weights and PBWL weights."""
    a = np.asarray(is_weights, dtype=np.float64)
    b = np.asarray(getattr(omegas, "omega", omegas), dtype=np.float64)
    if a.shape != b.shape:
        raise ReplayError(f"length mismatch: {a.shape} IS weights vs {b.shape} PBWL weights")
    return a * b


def make_buffer(kind: str, capacity: int, state_dim: int, per_config: Optional[PerConfig] = None):
    if kind == "uniform":
        return UniformBuffer(capacity, state_dim)
    if kind == "per":
        return PrioritizedBuffer(capacity, state_dim, per_config)
    raise ReplayError(f"unknown buffer kind {kind!r}")


# --- snapshots -------------------------------------------------------------

SNAPSHOT_MAGIC = b"RWRB"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sHBIIQQ")  # magic, version, kind, capacity, state_dim, size, writes
_KIND_CODES = {"uniform": 0, "per": 1}


def _record_struct(state_dim: int) -> struct.Struct:
    return struct.Struct(f"<{state_dim}dqd{state_dim}d?qd")


def save_snapshot(buffer: UniformBuffer, fh: Union[BinaryIO, str]) -> None:
    """Write the buffer as a versioned little-endian binary snapshot.

    See ``docs/snapshot_format.md`` for the layout.
    """
    if isinstance(fh, str):
        with open(fh, "wb") as f:
            return save_snapshot(buffer, f)
    rec = _record_struct(buffer.state_dim)
    fh.write(
        _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, _KIND_CODES[buffer.kind],
                     buffer.capacity, buffer.state_dim, buffer.size, buffer.writes)
    )
    fh.write(struct.pack("<Q", buffer.cursor))
    is_per = isinstance(buffer, PrioritizedBuffer)
    for i in range(buffer.size):
        priority = buffer.tree[i] if is_per else 0.0
        payload = rec.pack(
            *buffer.states[i], int(buffer.actions[i]), float(buffer.rewards[i]),
            *buffer.next_states[i], bool(buffer.terminals[i]), int(buffer.generations[i]), priority,
        )
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
    if is_per:
        fh.write(struct.pack("<qq", buffer.sample_calls, buffer.stale_updates))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ReplayError(f"truncated snapshot: wanted {n} bytes, got {len(data)}")
    return data


def load_snapshot(fh: Union[BinaryIO, str, bytes], per_config: Optional[PerConfig] = None) -> UniformBuffer:
    if isinstance(fh, bytes):
        fh = io.BytesIO(fh)
    if isinstance(fh, str):
        with open(fh, "rb") as f:
            return load_snapshot(f, per_config)
    magic, version, kind_code, capacity, state_dim, size, writes = _HEADER.unpack(_read_exact(fh, _HEADER.size))
    if magic != SNAPSHOT_MAGIC:
        raise ReplayError(f"not a replay snapshot (magic {magic!r})")
    if version != SNAPSHOT_VERSION:
        raise ReplayError(f"unsupported snapshot version {version}")
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise ReplayError(f"unknown buffer kind code {kind_code}")
    (cursor,) = struct.unpack("<Q", _read_exact(fh, 8))
    buffer = make_buffer(kinds[kind_code], capacity, state_dim, per_config)
    rec = _record_struct(state_dim)
    d = state_dim
    for i in range(size):
        (length,) = struct.unpack("<I", _read_exact(fh, 4))
        if length != rec.size:
            raise ReplayError(f"record {i}: length {length} does not match state_dim {state_dim}")
        fields = rec.unpack(_read_exact(fh, length))
        buffer.states[i] = fields[:d]
        buffer.actions[i] = fields[d]
        buffer.rewards[i] = fields[d + 1]
        buffer.next_states[i] = fields[d + 2 : 2 * d + 2]
        buffer.terminals[i] = fields[2 * d + 2]
        buffer.generations[i] = fields[2 * d + 3]
        if isinstance(buffer, PrioritizedBuffer):
            buffer.tree.update(i, fields[2 * d + 4])
    buffer.size = size
    buffer.cursor = cursor
    buffer.writes = writes
    if isinstance(buffer, PrioritizedBuffer):
        buffer.sample_calls, buffer.stale_updates = struct.unpack("<qq", _read_exact(fh, 16))
    return buffer
