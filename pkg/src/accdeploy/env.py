"""Discrete route-cluster x time-of-day environment space."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

HOURS_PER_DAY = 24.0


@dataclass(frozen=True)
class TimeGrid:
    """Half-open clock-time groups ``[b[k-1], b[k])`` covering one day."""

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2:
            raise ValueError("a time grid needs at least two boundaries")
        if b[0] != 0.0 or b[-1] != HOURS_PER_DAY:
            raise ValueError(f"boundaries must run from 0 to 24, got {b[0]}..{b[-1]}")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing: {b}")

    @classmethod
    def equal(cls, group_count: int = 8) -> TimeGrid:
        if group_count < 1:
            raise ValueError("group_count must be positive")
        step = HOURS_PER_DAY / group_count
        inner = [k * step for k in range(1, group_count)]
        return cls((0.0, *inner, HOURS_PER_DAY))

    @property
    def group_count(self) -> int:
        return len(self.boundaries) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))

    def group_of(self, t: float) -> int:
        return time_group_of(t, self)


class Environment(NamedTuple):
    """A deployment cell; both indices are 1-based."""

    e1: int
    e2: int


@dataclass(frozen=True)
class EnvironmentSpace:
    cluster_count: int
    grid: TimeGrid

    def __post_init__(self):
        if self.cluster_count < 1:
            raise ValueError("cluster_count must be positive")

    @classmethod
    def default(cls, cluster_count: int = 16, group_count: int = 8) -> EnvironmentSpace:
        return cls(cluster_count, TimeGrid.equal(group_count))

    @property
    def group_count(self) -> int:
        return self.grid.group_count

    @property
    def shape(self) -> tuple[int, int]:
        return (self.cluster_count, self.group_count)

    @property
    def size(self) -> int:
        return self.cluster_count * self.group_count

    def __len__(self) -> int:
        return self.size

    def contains(self, env: Environment) -> bool:
        return 1 <= env.e1 <= self.cluster_count and 1 <= env.e2 <= self.group_count

    def check(self, env: Environment) -> None:
        if not self.contains(env):
            raise ValueError(f"{env} is outside a {self.cluster_count}x{self.group_count} space")

    # Flat cell indices follow enumerate_environments order.
    def index_of(self, env: Environment) -> int:
        self.check(env)
        return (env.e1 - 1) * self.group_count + (env.e2 - 1)

    def env_at(self, index: int) -> Environment:
        if not 0 <= index < self.size:
            raise IndexError(index)
        c, k = divmod(int(index), self.group_count)
        return Environment(c + 1, k + 1)


def enumerate_environments(space: EnvironmentSpace) -> list[Environment]:
    """All cells in row-major order, cluster outer and time group inner."""
    return [
        Environment(c, k)
        for c in range(1, space.cluster_count + 1)
        for k in range(1, space.group_count + 1)
    ]


def time_group_of(t: float, grid: TimeGrid) -> int:
    if not 0.0 <= t < HOURS_PER_DAY:
        raise ValueError(f"clock time must lie in [0, 24), got {t}")
    # bisect_right gives the count of boundaries <= t, which is the 1-based group.
    return int(np.searchsorted(grid.boundaries, t, side="right"))
