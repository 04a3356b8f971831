"""Least-squares fit of the surrogate to a deployment history.

The surrogate is bilinear in the spatial multipliers and the temporal block
``[theta2_0, lambdas]``, so the fit alternates two exact least-squares
solves. Observations are first pooled per cell; the L2 residual over the raw
history is the pooled weighted residual plus the within-cell scatter, which
is what makes each round independent of the history length.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from accdeploy.env import Environment, EnvironmentSpace
from accdeploy.surrogate import Theta, temporal_design

log = logging.getLogger(__name__)


class DeploymentHistory:
    """Ordered ``(Environment, observed risk)`` pairs; repeats allowed."""

    def __init__(self, entries: Iterable[tuple[Environment, float]] = ()):
        self._e1 = np.zeros(64, dtype=np.int64)
        self._e2 = np.zeros(64, dtype=np.int64)
        self._y = np.zeros(64)
        self._n = 0
        for env, value in entries:
            self.append(env, value)

    def append(self, env: Environment, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite observation {value!r} at {env}")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"observed risk must lie in [0, 1], got {value}")
        if self._n == self._y.size:
            for name in ("_e1", "_e2", "_y"):
                old = getattr(self, name)
                setattr(self, name, np.concatenate((old, np.zeros_like(old))))
        self._e1[self._n] = env[0]
        self._e2[self._n] = env[1]
        self._y[self._n] = value
        self._n += 1

    def copy(self) -> DeploymentHistory:
        new = DeploymentHistory()
        new._e1, new._e2, new._y = self._e1.copy(), self._e2.copy(), self._y.copy()
        new._n = self._n
        return new

    def __len__(self) -> int:
        return self._n

    def __iter__(self):
        for i in range(self._n):
            yield Environment(int(self._e1[i]), int(self._e2[i])), float(self._y[i])

    def __getitem__(self, i: int) -> tuple[Environment, float]:
        if not -self._n <= i < self._n:
            raise IndexError(i)
        i %= self._n
        return Environment(int(self._e1[i]), int(self._e2[i])), float(self._y[i])

    @property
    def values(self) -> np.ndarray:
        return self._y[: self._n]

    def cells(self, space: EnvironmentSpace) -> np.ndarray:
        """Flat cell index of every entry (row-major, 0-based)."""
        e1, e2 = self._e1[: self._n], self._e2[: self._n]
        m1, m2 = space.shape
        if self._n and (e1.min() < 1 or e1.max() > m1 or e2.min() < 1 or e2.max() > m2):
            raise ValueError(f"history contains environments outside a {m1}x{m2} space")
        return (e1 - 1) * m2 + (e2 - 1)

    def latest(self, space: EnvironmentSpace) -> tuple[np.ndarray, np.ndarray]:
        """``(observed_mask, latest_value)`` per flat cell."""
        cells = self.cells(space)
        mask = np.zeros(space.size, dtype=bool)
        last = np.zeros(space.size)
        if self._n:
            rev = cells[::-1]
            uniq, first_in_rev = np.unique(rev, return_index=True)
            mask[uniq] = True
            last[uniq] = self.values[::-1][first_in_rev]
        return mask, last


@dataclass(frozen=True)
class FitConfig:
    max_als_rounds: int = 200
    als_tolerance: float = 1e-10
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.max_als_rounds < 1 or self.als_tolerance <= 0 or self.restarts < 0 or self.seed < 0:
            raise ValueError(f"invalid FitConfig {self}")


@dataclass(frozen=True)
class FitResult:
    theta: Theta
    residual_z: float
    avg_uncertainty: float
    als_rounds: int
    converged: bool
    n: int
    init_residual: float
    trace: tuple[float, ...] = field(repr=False, default=())
    stalled_clusters: tuple[int, ...] = ()
    start_index: int = 0


def avg_uncertainty(residual_z: float, n: int) -> float:
    if n < 1:
        raise ValueError("average uncertainty needs at least one deployment")
    return residual_z / n


@dataclass
class _CellStats:
    """Per-cell pooled history on an ``(m1, m2)`` grid."""

    counts: np.ndarray
    means: np.ndarray
    scatter: float  # sum of squared deviations from the cell means
    n: int

    @classmethod
    def from_history(cls, history: DeploymentHistory, space: EnvironmentSpace) -> _CellStats:
        cells = history.cells(space)
        y = history.values
        counts = np.bincount(cells, minlength=space.size).astype(float)
        sums = np.bincount(cells, weights=y, minlength=space.size)
        means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
        scatter = float(np.sum((y - means[cells]) ** 2))
        shape = space.shape
        return cls(counts.reshape(shape), means.reshape(shape), scatter, len(history))

    def objective(self, theta1: np.ndarray, levels: np.ndarray) -> float:
        return _objective(self.counts, self.means, self.scatter, theta1, levels)


@njit(cache=True)
def _objective(counts, means, scatter, theta1, levels):
    total = scatter
    m1, m2 = counts.shape
    for c in range(m1):
        for k in range(m2):
            if counts[c, k] > 0:
                d = means[c, k] - theta1[c] * levels[k]
                total += counts[c, k] * d * d
    return total


@njit(cache=True)
def _temporal_step(counts, means, theta1, A, beta_ref):
    # Collapses to per-group targets r/u with weights u; solved as a
    # minimum-norm correction to beta_ref so unconstrained directions keep
    # their reference value.
    m1, m2 = counts.shape
    u = np.zeros(m2)
    r = np.zeros(m2)
    for c in range(m1):
        for k in range(m2):
            w = counts[c, k] * theta1[c]
            u[k] += w * theta1[c]
            r[k] += w * means[c, k]
    rows = np.flatnonzero(u > 0)
    if rows.size == 0:
        return beta_ref.copy()
    X = np.empty((rows.size, m2))
    target = np.empty(rows.size)
    for i in range(rows.size):
        k = rows[i]
        su = np.sqrt(u[k])
        X[i] = su * A[k]
        target[i] = r[k] / su - np.dot(X[i], beta_ref)
    delta = np.linalg.lstsq(X, target)[0]
    return beta_ref + delta


@njit(cache=True)
def _spatial_step(counts, means, levels, theta1_prev):
    m1, m2 = counts.shape
    theta1 = theta1_prev.copy()
    stalled = np.zeros(m1, dtype=np.bool_)
    for c in range(m1):
        num = 0.0
        den = 0.0
        seen = False
        for k in range(m2):
            if counts[c, k] > 0:
                seen = True
                num += counts[c, k] * means[c, k] * levels[k]
                den += counts[c, k] * levels[k] * levels[k]
        if den > 0:
            theta1[c] = max(num / den, 0.0)
        elif seen:
            stalled[c] = True
    return theta1, stalled


@njit(cache=True)
def _normalize(theta1, beta):
    s = theta1.mean()
    if s <= 0:
        # Every prediction is zero; unit multipliers with a zero temporal block reproduce that.
        return np.ones_like(theta1), np.zeros_like(beta)
    return theta1 / s, beta * s


@njit(cache=True)
def _run_als(counts, means, scatter, A, theta1, beta, max_rounds, tol):
    theta1, beta = _normalize(theta1, beta)
    trace = np.empty(max_rounds + 1)
    trace[0] = np.sqrt(max(_objective(counts, means, scatter, theta1, A @ beta), 0.0))
    stalled = np.zeros(theta1.size, dtype=np.bool_)
    converged = False
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        beta = _temporal_step(counts, means, theta1, A, beta)
        theta1, stalled = _spatial_step(counts, means, A @ beta, theta1)
        theta1, beta = _normalize(theta1, beta)
        z = np.sqrt(max(_objective(counts, means, scatter, theta1, A @ beta), 0.0))
        z_prev = trace[rounds - 1]
        trace[rounds] = z
        if z <= 1e-15 or abs(z_prev - z) <= tol * max(z_prev, 1e-300):
            converged = True
            break
    return theta1, beta, trace[: rounds + 1], rounds, converged, stalled


def _validate(history: DeploymentHistory, space: EnvironmentSpace) -> DeploymentHistory:
    if not isinstance(history, DeploymentHistory):
        history = DeploymentHistory(history)
    if len(history) == 0:
        raise ValueError("cannot fit an empty deployment history")
    if not np.all(np.isfinite(history.values)):
        raise ValueError("history contains non-finite observations")
    history.cells(space)
    return history


def fit(
    history,
    space: EnvironmentSpace,
    config: FitConfig = FitConfig(),
    warm_start: Theta | None = None,
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Minimize the L2 residual between observed and predicted risk.

    Candidate starts, in tie-break order: the warm start (if any), the flat
    initialization (unit multipliers, zero intensities, base = mean
    observation), then ``config.restarts`` log-uniform draws of the
    multipliers on [0.25, 4]. The lowest final residual wins.
    """
    history = _validate(history, space)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    m1, m2 = space.shape
    A = temporal_design(space.grid)
    stats = _CellStats.from_history(history, space)

    flat_beta = np.zeros(m2)
    flat_beta[0] = float(history.values.mean())
    init_residual = math.sqrt(max(stats.objective(np.ones(m1), A @ flat_beta), 0.0))

    starts = []
    if warm_start is not None:
        if warm_start.cluster_count != m1 or warm_start.group_count != m2:
            raise ValueError("warm start dimensions do not match the space")
        starts.append((warm_start.theta1.copy(), warm_start.temporal))
    starts.append((np.ones(m1), flat_beta))
    for _ in range(config.restarts):
        starts.append((np.exp(rng.uniform(np.log(0.25), np.log(4.0), m1)), flat_beta))

    best = None
    for idx, (t1, beta) in enumerate(starts):
        out = _run_als(
            stats.counts, stats.means, stats.scatter, A,
            np.ascontiguousarray(t1, dtype=float), np.array(beta, dtype=float),
            config.max_als_rounds, config.als_tolerance,
        )
        if best is None or out[2][-1] < best[1][2][-1]:
            best = (idx, out)
    idx, (theta1, beta, trace, rounds, converged, stalled) = best
    stalled = np.flatnonzero(stalled)
    if stalled.size:
        log.debug("clusters %s have observations but a zero temporal level", stalled + 1)
    z = float(trace[-1])
    return FitResult(
        theta=Theta(theta1, beta[0], beta[1:]),
        residual_z=z,
        avg_uncertainty=avg_uncertainty(z, stats.n),
        als_rounds=int(rounds),
        converged=bool(converged),
        n=stats.n,
        init_residual=init_residual,
        trace=tuple(float(x) for x in trace),
        stalled_clusters=tuple(int(c) + 1 for c in stalled),
        start_index=idx,
    )


def initial_theta(history, space: EnvironmentSpace) -> Theta:
    """The flat initialization used as the fit's reference start."""
    history = _validate(history, space)
    return Theta.flat(space.cluster_count, space.group_count, float(history.values.mean()))


def temporal_substep(history, theta1_fixed, space: EnvironmentSpace, reference: Theta | None = None):
    """Exact least-squares temporal block for fixed multipliers.

    Returns ``(theta2_0, lambdas)``. Directions the data cannot pin take the
    minimum-norm value relative to ``reference`` (zero when omitted).
    """
    history = _validate(history, space)
    theta1 = np.ascontiguousarray(theta1_fixed, dtype=float)
    if theta1.shape != (space.cluster_count,):
        raise ValueError("theta1 length does not match the cluster count")
    stats = _CellStats.from_history(history, space)
    A = temporal_design(space.grid)
    ref = np.zeros(space.group_count) if reference is None else reference.temporal
    beta = _temporal_step(stats.counts, stats.means, theta1, A, np.array(ref, dtype=float))
    return float(beta[0]), beta[1:]


def spatial_substep(history, temporal_fixed, space: EnvironmentSpace, previous=None) -> np.ndarray:
    """Per-cluster closed-form multipliers, projected to be nonnegative.

    ``temporal_fixed`` is ``(theta2_0, lambdas)``. Unobserved clusters, and
    observed clusters whose temporal levels are all zero, keep ``previous``.
    """
    history = _validate(history, space)
    theta2_0, lambdas = temporal_fixed
    beta = np.concatenate(([float(theta2_0)], np.asarray(lambdas, dtype=float)))
    stats = _CellStats.from_history(history, space)
    prev = np.ones(space.cluster_count) if previous is None else np.array(previous, dtype=float)
    theta1, stalled = _spatial_step(stats.counts, stats.means, temporal_design(space.grid) @ beta, prev)
    stalled = np.flatnonzero(stalled)
    if stalled.size:
        log.warning("clusters %s unchanged: all observed temporal levels are zero", list(stalled + 1))
    return theta1
