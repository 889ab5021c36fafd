"""Array-backed sum-tree for proportional sampling."""

from __future__ import annotations

import numpy as np


class SumTree:
    """Complete binary tree whose internal nodes hold the sums of their children.

    Node 0 is the root; the children of node ``i`` are ``2i + 1`` and ``2i + 2``.
    The leaf count is rounded up to a power of two so every leaf sits at the
    same depth.  Unused leaves hold zero and are never returned by ``find``.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        leaves = 1
        while leaves < self.capacity:
            leaves *= 2
        self.n_leaves = leaves
        self.nodes = np.zeros(2 * leaves - 1, dtype=np.float64)
        self.depth = leaves.bit_length() - 1

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    @property
    def leaves(self) -> np.ndarray:
        """View of the priorities of the ``capacity`` usable leaves."""
        start = self.n_leaves - 1
        return self.nodes[start : start + self.capacity]

    def __getitem__(self, index: int) -> float:
        return float(self.nodes[self.n_leaves - 1 + index])

    def update(self, index: int, value: float) -> None:
        """Set one leaf and refresh its ancestors in O(log n)."""
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf {index} out of range [0, {self.capacity})")
        if not value >= 0.0 or not np.isfinite(value):
            raise ValueError(f"priority must be finite and non-negative, got {value!r}")
        node = self.n_leaves - 1 + index
        self.nodes[node] = value
        # recompute from children rather than adding deltas: no drift
        while node > 0:
            node = (node - 1) // 2
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]

    def rebuild(self) -> None:
        for level_start in range(self.n_leaves // 2 - 1, -1, -1):
            self.nodes[level_start] = self.nodes[2 * level_start + 1] + self.nodes[2 * level_start + 2]

    def find(self, values) -> np.ndarray:
        """Leaf indices whose prefix-sum interval contains each value.

        Leaf ``i`` owns ``[sum(p[:i]), sum(p[:i+1]))``.  Values are clipped into
        ``[0, total)`` and zero-mass subtrees are never entered.
        """
        v = np.array(values, dtype=np.float64, ndmin=1)
        node = np.zeros(v.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * node + 1
            right = left + 1
            left_sum = self.nodes[left]
            go_right = (v >= left_sum) & (self.nodes[right] > 0.0)
            go_right |= left_sum <= 0.0
            v = np.where(go_right, v - left_sum, v)
            node = np.where(go_right, right, left)
        return node - (self.n_leaves - 1)

    def max_relative_inconsistency(self) -> float:
        """Largest relative gap between an internal node and its children's sum."""
        internal = np.arange(self.n_leaves - 1)
        if internal.size == 0:
            return 0.0
        child_sum = self.nodes[2 * internal + 1] + self.nodes[2 * internal + 2]
        scale = np.maximum(np.abs(child_sum), 1e-300)
        return float(np.max(np.abs(self.nodes[internal] - child_sum) / scale))
