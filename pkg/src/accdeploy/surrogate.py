"""Piecewise-constant-intensity NHPP surrogate for per-cell risk.

The surrogate predicts ``theta1[c] * (theta2_0 + Lambda(t_k))`` for route
cluster ``c`` and time group ``k``, where ``Lambda`` is the cumulative
intensity sampled at the left edge of the group. The last group's intensity
is never a free parameter: it is recomputed so that ``Lambda(24) == 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from accdeploy.env import HOURS_PER_DAY, Environment, EnvironmentSpace, TimeGrid


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Theta:
    theta1: np.ndarray
    theta2_0: float
    lambdas: np.ndarray

    def __post_init__(self):
        t1 = _frozen(self.theta1).ravel()
        lam = _frozen(self.lambdas).ravel()
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "theta2_0", float(self.theta2_0))
        if t1.size < 1:
            raise ValueError("theta1 needs at least one cluster multiplier")
        if np.any(t1 < 0):
            raise ValueError("spatial multipliers must be nonnegative")

    @classmethod
    def flat(cls, cluster_count: int, group_count: int, base: float = 0.0) -> Theta:
        return cls(np.ones(cluster_count), base, np.zeros(group_count - 1))

    @property
    def cluster_count(self) -> int:
        return self.theta1.size

    @property
    def group_count(self) -> int:
        return self.lambdas.size + 1

    @property
    def n_params(self) -> int:
        return self.cluster_count + self.group_count

    @property
    def temporal(self) -> np.ndarray:
        """``[theta2_0, lambda_1, ..., lambda_{m2-1}]``"""
        return np.concatenate(([self.theta2_0], self.lambdas))

    def to_dict(self) -> dict:
        return {
            "theta1": [float(x) for x in self.theta1],
            "theta2_0": self.theta2_0,
            "lambdas": [float(x) for x in self.lambdas],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Theta:
        return cls(d["theta1"], d["theta2_0"], d["lambdas"])

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return (
            np.array_equal(self.theta1, other.theta1)
            and self.theta2_0 == other.theta2_0
            and np.array_equal(self.lambdas, other.lambdas)
        )

    __hash__ = None


def closure_lambda(lambdas, grid: TimeGrid) -> float:
    """Intensity of the last group that brings the daily cumulative back to zero."""
    lam = np.asarray(lambdas, dtype=float)
    widths = grid.widths
    if lam.size != grid.group_count - 1:
        raise ValueError(f"expected {grid.group_count - 1} free intensities, got {lam.size}")
    return float(-np.dot(lam, widths[:-1]) / widths[-1])


def full_lambdas(lambdas, grid: TimeGrid) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    return np.append(lam, closure_lambda(lam, grid))


def temporal_design(grid: TimeGrid) -> np.ndarray:
    """Matrix ``A`` with ``A @ [theta2_0, lambdas] == theta2_0 + Lambda(left edge of k)``.

    Row ``k`` is ``[1, w_1, ..., w_{k-1}, 0, ...]``; the closure intensity never
    enters because every group starts at or before the last boundary it needs.
    """
    m2 = grid.group_count
    widths = grid.widths
    A = np.zeros((m2, m2))
    A[:, 0] = 1.0
    for k in range(1, m2):
        A[k, 1 : k + 1] = widths[:k]
    return A


@dataclass(frozen=True, eq=False)
class IntensityModel:
    theta: Theta
    grid: TimeGrid

    def __post_init__(self):
        if self.theta.group_count != self.grid.group_count:
            raise ValueError(
                f"theta has {self.theta.group_count} time groups, grid has {self.grid.group_count}"
            )

    @property
    def intensities(self) -> np.ndarray:
        return full_lambdas(self.theta.lambdas, self.grid)

    def knots(self) -> np.ndarray:
        """Cumulative intensity at every grid boundary, length m2 + 1."""
        areas = self.intensities * self.grid.widths
        return np.concatenate(([0.0], np.cumsum(areas)))

    def group_offsets(self) -> np.ndarray:
        return self.knots()[:-1]

    def temporal_levels(self) -> np.ndarray:
        """``theta2_0 + Lambda`` per time group, before the spatial multiplier."""
        return self.theta.theta2_0 + self.group_offsets()

    def raw_table(self) -> np.ndarray:
        return np.outer(self.theta.theta1, self.temporal_levels())

    def table(self) -> np.ndarray:
        return np.clip(self.raw_table(), 0.0, 1.0)


def cumulative_intensity(model: IntensityModel, t: float) -> float:
    if not 0.0 <= t <= HOURS_PER_DAY:
        raise ValueError(f"clock time must lie in [0, 24], got {t}")
    b = np.asarray(model.grid.boundaries)
    knots = model.knots()
    if t == HOURS_PER_DAY:
        return float(knots[-1])
    k = int(np.searchsorted(b, t, side="right"))  # 1-based group containing t
    return float(knots[k - 1] + model.intensities[k - 1] * (t - b[k - 1]))


def group_offset(model: IntensityModel, e2: int) -> float:
    if not 1 <= e2 <= model.grid.group_count:
        raise ValueError(f"time group {e2} out of range")
    return float(model.knots()[e2 - 1])


def predict_raw(model: IntensityModel, env: Environment) -> float:
    """Unclamped surrogate value; fitting residuals use this."""
    th = model.theta
    if not (1 <= env.e1 <= th.cluster_count and 1 <= env.e2 <= th.group_count):
        raise ValueError(f"{env} outside model dimensions")
    return float(th.theta1[env.e1 - 1] * (th.theta2_0 + group_offset(model, env.e2)))


def predict(model: IntensityModel, env: Environment) -> float:
    return min(max(predict_raw(model, env), 0.0), 1.0)


def predict_all(model: IntensityModel, space: EnvironmentSpace) -> np.ndarray:
    """Clamped predictions as an ``(m1, m2)`` array indexed ``[e1 - 1, e2 - 1]``."""
    if model.theta.cluster_count != space.cluster_count or model.grid != space.grid:
        raise ValueError("model dimensions do not match the environment space")
    return model.table()
