"""Index algebra of the complete binary tree of depth D (1-based node ids)."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property


@dataclass(frozen=True)
class TreeTopology:
    D: int

    def __post_init__(self):
        if int(self.D) != self.D or self.D < 1:
            raise ValueError(f"depth must be an integer >= 1, got {self.D!r}")

    @property
    def T(self) -> int:
        return 2 ** (self.D + 1) - 1

    @cached_property
    def branch_nodes(self) -> tuple[int, ...]:
        return tuple(range(1, 2 ** self.D))

    @cached_property
    def leaf_nodes(self) -> tuple[int, ...]:
        return tuple(range(2 ** self.D, self.T + 1))

    @cached_property
    def left_nodes(self) -> tuple[int, ...]:
        """Non-root nodes reached through a left branch (even ids)."""
        return tuple(range(2, self.T + 1, 2))

    @cached_property
    def right_nodes(self) -> tuple[int, ...]:
        """Non-root nodes reached through a right branch (odd ids)."""
        return tuple(range(3, self.T + 1, 2))

    @cached_property
    def levels(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(range(2 ** s, 2 ** (s + 1))) for s in range(self.D + 1))

    @property
    def nodes(self) -> range:
        return range(1, self.T + 1)

    def parent(self, t: int) -> int:
        if not 2 <= t <= self.T:
            raise ValueError(f"node {t} has no parent")
        return t // 2

    def children(self, t: int) -> tuple[int, int]:
        if not self.is_branch(t):
            raise ValueError(f"node {t} is not a branch node")
        return 2 * t, 2 * t + 1

    def is_branch(self, t: int) -> bool:
        return 1 <= t < 2 ** self.D

    def is_leaf(self, t: int) -> bool:
        return 2 ** self.D <= t <= self.T

    def level(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ValueError(f"node {t} outside 1..{self.T}")
        return t.bit_length() - 1

    def ancestor_at_level(self, t: int, s: int) -> int:
        """Node at level ``s`` on the root-to-``t`` path."""
        lt = self.level(t)
        if not 0 <= s <= lt:
            raise ValueError(f"level {s} is below node {t} (level {lt})")
        return t >> (lt - s)

    def path(self, t: int) -> list[int]:
        """Node ids from the root down to ``t``."""
        return [self.ancestor_at_level(t, s) for s in range(self.level(t) + 1)]

    def subtree(self, t: int) -> list[int]:
        out, frontier = [], [t]
        while frontier:
            u = frontier.pop()
            out.append(u)
            if self.is_branch(u):
                frontier.extend(self.children(u))
        return sorted(out)


def build_topology(D: int) -> TreeTopology:
    return TreeTopology(D)
