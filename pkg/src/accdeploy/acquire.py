"""Learning gain, confidence-weighted feasible region and next-cell selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from accdeploy.env import Environment, EnvironmentSpace, enumerate_environments
from accdeploy.fit import DeploymentHistory
from accdeploy.surrogate import IntensityModel, predict, predict_all

DEFAULT_TAU = 7.5e-4


@dataclass(frozen=True)
class AcquireConfig:
    xi: float = 0.02
    kappa: float = 1.0 / DEFAULT_TAU
    tie_seed: int = 0

    def __post_init__(self):
        if not 0 < self.xi <= 1:
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class Selection:
    environment: Environment
    gain: float
    alpha_used: float
    feasible_count: int
    fallback: bool
    risk_score: float  # alpha * prediction + (1 - alpha) * z at the chosen cell
    predicted: float


def alpha_of(avg_uncertainty: float, prev_alpha: float | None, config: AcquireConfig) -> float:
    """Risk-aversion weight, nondecreasing across calls and 1 at zero uncertainty."""
    if avg_uncertainty < 0:
        raise ValueError("average uncertainty must be nonnegative")
    fresh = math.exp(-config.kappa * avg_uncertainty)
    return fresh if prev_alpha is None else max(prev_alpha, fresh)


def gain_table(
    space: EnvironmentSpace,
    history: DeploymentHistory,
    model_now: IntensityModel,
    model_prev: IntensityModel,
) -> np.ndarray:
    """Learning gain for every flat cell.

    Observed cells score the gap between their latest observation and the
    current prediction; unobserved cells score how much the prediction moved
    in the last refit.
    """
    now = predict_all(model_now, space).ravel()
    prev = predict_all(model_prev, space).ravel()
    seen, latest = history.latest(space)
    return np.where(seen, np.abs(latest - now), np.abs(now - prev))


def learning_gain(
    env: Environment,
    history: DeploymentHistory,
    model_now: IntensityModel,
    model_prev: IntensityModel,
) -> float:
    now = predict(model_now, env)
    latest = None
    for e, y in history:
        if e == env:
            latest = y
    if latest is not None:
        return abs(latest - now)
    return abs(now - predict(model_prev, env))


def risk_scores(predictions, alpha: float, avg_uncertainty: float) -> np.ndarray:
    return alpha * np.asarray(predictions, dtype=float) + (1.0 - alpha) * avg_uncertainty


def feasible_mask(predictions, alpha: float, avg_uncertainty: float, xi: float) -> np.ndarray:
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return risk_scores(predictions, alpha, avg_uncertainty) <= xi


def feasible_set(
    space: EnvironmentSpace,
    model: IntensityModel,
    alpha: float,
    avg_uncertainty: float,
    config: AcquireConfig,
) -> list[Environment]:
    mask = feasible_mask(predict_all(model, space).ravel(), alpha, avg_uncertainty, config.xi)
    envs = enumerate_environments(space)
    return [envs[i] for i in np.flatnonzero(mask)]


def _pick(candidates: np.ndarray, rng: np.random.Generator) -> int:
    if candidates.size == 1:
        return int(candidates[0])
    return int(candidates[rng.integers(candidates.size)])


def choose(
    space: EnvironmentSpace,
    gains,
    predictions,
    alpha: float,
    avg_uncertainty: float,
    xi: float,
    rng: np.random.Generator,
) -> Selection:
    """Arg-max of gain over the feasible cells, from precomputed flat tables.

    With no feasible cell, the safest cell (lowest risk score) is returned
    and flagged as a fallback. Exact ties are broken uniformly with ``rng``.
    """
    gains = np.asarray(gains, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    scores = risk_scores(predictions, alpha, avg_uncertainty)
    mask = feasible_mask(predictions, alpha, avg_uncertainty, xi)
    count = int(mask.sum())
    if count:
        idx = np.flatnonzero(mask)
        best = gains[idx].max()
        pick = _pick(idx[gains[idx] == best], rng)
    else:
        pick = _pick(np.flatnonzero(scores == scores.min()), rng)
    return Selection(
        environment=space.env_at(pick),
        gain=float(gains[pick]),
        alpha_used=float(alpha),
        feasible_count=count,
        fallback=count == 0,
        risk_score=float(scores[pick]),
        predicted=float(predictions[pick]),
    )


def select_next(
    space: EnvironmentSpace,
    history: DeploymentHistory,
    model_now: IntensityModel,
    model_prev: IntensityModel,
    alpha: float,
    avg_uncertainty: float,
    config: AcquireConfig,
    rng: np.random.Generator | None = None,
) -> Selection:
    if rng is None:
        rng = np.random.default_rng(config.tie_seed)
    gains = gain_table(space, history, model_now, model_prev)
    preds = predict_all(model_now, space).ravel()
    return choose(space, gains, preds, alpha, avg_uncertainty, config.xi, rng)
