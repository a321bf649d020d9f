"""Per-agent prioritized replay on a sum-tree, plus cross-agent batch sizing."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numerics import ContractError, Rng

__all__ = [
    "Transition",
    "SumTree",
    "compute_priority",
    "agent_priorities",
    "allocate_minibatch",
]

log = logging.getLogger(__name__)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float  # shaped reward stored for learning
    next_state: np.ndarray
    priority: float
    access_count: int = 0
    born_iter: int = 0
    td_error: float = 0.0  # |Q - r| at the last priority refresh

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("state", "action", "next_state"):
            d[k] = np.asarray(d[k]).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        d = dict(d)
        for k in ("state", "action", "next_state"):
            d[k] = np.asarray(d[k], dtype=np.float64)
        return cls(**d)


def compute_priority(q_value: float, reward: float, access_count: float,
                     total_access: float, delta: float) -> float:
    """``|Q - r| + rho / sum(rho) + delta``; never below ``delta``."""
    if delta <= 0:
        raise ContractError("delta must be positive")
    return abs(q_value - reward) + access_count / max(total_access, 1.0) + delta


class SumTree:
    """Binary sum-tree over a FIFO ring of transitions.

    Leaves are padded to a power of two; parent sums are recomputed from
    their children on every write, so node sums never drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.n_leaves = 1 << (self.capacity - 1).bit_length()
        self.tree = np.zeros(2 * self.n_leaves - 1)
        self.data: list[Transition | None] = [None] * self.capacity
        self.cursor = 0
        self.size = 0
        self.total_access = 0

    def __len__(self) -> int:
        return self.size

    @property
    def root(self) -> float:
        return float(self.tree[0])

    def _leaf(self, index: int) -> int:
        return index + self.n_leaves - 1

    def update(self, index: int, priority: float) -> None:
        if not 0 <= index < self.capacity:
            raise IndexError(index)
        node = self._leaf(index)
        self.tree[node] = priority
        if self.data[index] is not None:
            self.data[index].priority = float(priority)
        while node > 0:
            node = (node - 1) // 2
            self.tree[node] = self.tree[2 * node + 1] + self.tree[2 * node + 2]

    def push(self, tr: Transition) -> int:
        """Write at the cursor, replacing the oldest entry once full."""
        old = self.data[self.cursor]
        if old is not None:
            self.total_access -= old.access_count
        index = self.cursor
        self.data[index] = tr
        self.total_access += tr.access_count
        self.update(index, tr.priority)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return index

    def find(self, value: float) -> int:
        """Leaf index whose cumulative priority interval contains ``value``."""
        node = 0
        while node < self.n_leaves - 1:
            left, right = 2 * node + 1, 2 * node + 2
            if value < self.tree[left] or self.tree[right] <= 0.0:
                node = left
            else:
                value -= self.tree[left]
                node = right
        return node - (self.n_leaves - 1)

    def sample(self, count: int, rng: Rng, uniform: bool = False) -> list[tuple[int, Transition]]:
        """Draw ``count`` leaves with replacement, proportional to priority.

        ``uniform=True`` ignores priorities (ablation path).  Access counts
        of the drawn leaves are incremented.
        """
        if count <= 0:
            return []
        if self.size == 0:
            log.warning("sampling from an empty replay buffer")
            return []
        u = rng.uniform(count)
        out = []
        for x in u:
            if uniform:
                index = min(int(x * self.size), self.size - 1)
            else:
                index = self.find(x * self.tree[0])
            tr = self.data[index]
            tr.access_count += 1
            self.total_access += 1
            out.append((index, tr))
        return out

    def priorities(self) -> np.ndarray:
        return self.tree[self.n_leaves - 1:self.n_leaves - 1 + self.capacity].copy()

    def transitions(self) -> list[Transition]:
        return [t for t in self.data if t is not None]

    def dump(self, path) -> None:
        """JSON lines; the first line holds the ring metadata."""
        with Path(path).open("w") as f:
            f.write(json.dumps({"capacity": self.capacity, "cursor": self.cursor, "size": self.size}) + "\n")
            for i, t in enumerate(self.data):
                if t is not None:
                    f.write(json.dumps({"slot": i, **t.to_dict()}) + "\n")

    @classmethod
    def restore(cls, path) -> "SumTree":
        lines = Path(path).read_text().splitlines()
        meta = json.loads(lines[0])
        tree = cls(meta["capacity"])
        for line in lines[1:]:
            d = json.loads(line)
            slot = d.pop("slot")
            tr = Transition.from_dict(d)
            tree.data[slot] = tr
            tree.total_access += tr.access_count
            tree.update(slot, tr.priority)
        tree.cursor = meta["cursor"]
        tree.size = meta["size"]
        return tree


def agent_priorities(roots, normalize_by=None) -> np.ndarray:
    """Softmax over root sums; optionally divide roots by live counts first."""
    phi = np.asarray(roots, dtype=np.float64)
    if phi.ndim != 1 or phi.size < 1:
        raise ContractError("need at least one root value")
    if normalize_by is not None:
        phi = phi / np.maximum(np.asarray(normalize_by, dtype=np.float64), 1.0)
    z = np.exp(phi - phi.max())
    return z / z.sum()


def allocate_minibatch(q, total: int, occupancy=None) -> np.ndarray:
    """Split ``total`` draws across agents as ``floor(q_i M)`` plus top-ups.

    Leftover draws go by largest remainder (lowest index wins ties).  With
    ``occupancy`` given, no agent gets more than it holds and the surplus
    moves to agents with room, so the sum is ``min(total, sum(occupancy))``.
    """
    q = np.asarray(q, dtype=np.float64)
    n = q.size
    cap = np.full(n, np.iinfo(np.int64).max) if occupancy is None else np.asarray(occupancy, dtype=np.int64)
    target = int(min(total, cap.sum()))
    if target == 0:
        if total > 0:
            log.warning("all replay buffers are empty; nothing to sample")
        return np.zeros(n, dtype=np.int64)
    share = q * total
    counts = np.floor(share + 1e-9).astype(np.int64)
    remainder = share - counts
    for i in sorted(range(n), key=lambda j: (-remainder[j], j))[:max(total - counts.sum(), 0)]:
        counts[i] += 1
    counts = np.minimum(counts, cap)
    while counts.sum() < target:
        room = [j for j in range(n) if counts[j] < cap[j]]
        j = min(room, key=lambda j: (-(share[j] - counts[j]), j))
        counts[j] += 1
    return counts
