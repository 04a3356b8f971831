"""Sequential deployment engine for the accelerated and random strategies."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Literal, TextIO, Union

import numpy as np

from accdeploy import rng as rngmod
from accdeploy.acquire import DEFAULT_TAU, AcquireConfig, alpha_of, choose, gain_table
from accdeploy.env import Environment, EnvironmentSpace
from accdeploy.fit import DeploymentHistory, FitConfig, FitResult, fit, initial_theta
from accdeploy.surrogate import IntensityModel, Theta, predict_all
from accdeploy.world import Exact, MonteCarlo, ObservationMode, RiskTable, observe

Strategy = Literal["accelerated", "random"]
STRATEGIES = ("accelerated", "random")
LOG_COLUMNS = ("n", "e1", "e2", "f_obs", "z_n", "avg_z", "alpha", "feasible_count", "fallback", "gain")
TOLERANCE_MET = "tolerance-met"
MAX_ITERS = "max-iters"


@dataclass(frozen=True)
class RunConfig:
    strategy: Strategy = "accelerated"
    xi: float = 0.02
    tau: float = 7.5e-4
    n_min: int = 100
    n_init: int = 25
    max_iters: int = 5000
    observation: ObservationMode = Exact()
    seed: int = 0
    kappa: float | None = None  # None means 1 / tau
    fit: FitConfig = FitConfig()

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.n_init < 1 or self.n_min < self.n_init:
            raise ValueError("need 1 <= n_init <= n_min")
        if self.max_iters < self.n_init:
            raise ValueError("max_iters must be at least n_init")
        # tau == 0 is allowed: it makes the tolerance unreachable.
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    @property
    def acquire(self) -> AcquireConfig:
        if self.kappa is not None:
            kappa = self.kappa
        else:
            kappa = 1.0 / (self.tau if self.tau > 0 else DEFAULT_TAU)
        return AcquireConfig(xi=self.xi, kappa=kappa, tie_seed=self.seed)

    def with_strategy(self, strategy: Strategy) -> RunConfig:
        return replace(self, strategy=strategy)


@dataclass(frozen=True)
class IterationRecord:
    n: int
    environment: Environment
    f_obs: float
    z_n: float
    avg_z: float
    alpha: float | None = None
    feasible_count: int | None = None
    fallback: bool = False
    gain: float | None = None
    # Not part of the CSV log; kept for in-memory replay of the constraint.
    predicted: float | None = field(default=None, compare=False)
    theta: Theta | None = field(default=None, compare=False, repr=False)

    def row(self) -> list[str]:
        def num(x):
            return "" if x is None else repr(float(x))

        return [
            str(self.n),
            str(self.environment.e1),
            str(self.environment.e2),
            num(self.f_obs),
            num(self.z_n),
            num(self.avg_z),
            num(self.alpha),
            "" if self.feasible_count is None else str(self.feasible_count),
            "1" if self.fallback else "0",
            num(self.gain),
        ]


@dataclass
class RunResult:
    strategy: Strategy
    records: list[IterationRecord]
    terminated_by: str
    final_theta: Theta
    seed: int
    world_digest: str

    @property
    def n_star(self) -> int:
        return len(self.records)

    @property
    def observed(self) -> np.ndarray:
        return np.array([r.f_obs for r in self.records])

    @property
    def avg_z_curve(self) -> np.ndarray:
        return np.array([r.avg_z for r in self.records])

    @property
    def final_avg_z(self) -> float:
        return self.records[-1].avg_z

    def summary(self) -> dict:
        f = self.observed
        z = self.avg_z_curve
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "world_digest": self.world_digest,
            "n_star": self.n_star,
            "terminated_by": self.terminated_by,
            "mean_f": float(f.mean()),
            "std_f": float(f.std()),
            "final_avg_z": float(z[-1]),
            "mean_avg_z": float(z.mean()),
            "fallback_count": int(sum(r.fallback for r in self.records)),
            "final_theta": self.final_theta.to_dict(),
        }

    def write_log(self, dest: Union[str, os.PathLike, TextIO]) -> None:
        write_log(self.records, dest)

    def write_summary(self, dest: Union[str, os.PathLike, TextIO]) -> None:
        text = json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            dest.write(text)


def write_log(records, dest: Union[str, os.PathLike, TextIO]) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_log(records, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in records:
        w.writerow(r.row())


def read_log(src: Union[str, os.PathLike, TextIO]) -> list[IterationRecord]:
    if isinstance(src, (str, os.PathLike)):
        with open(src, newline="", encoding="utf-8") as fh:
            return read_log(fh)

    def opt(x, cast=float):
        return None if x == "" else cast(x)

    reader = csv.DictReader(src)
    if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
        raise ValueError(f"run log header must be {','.join(LOG_COLUMNS)}")
    return [
        IterationRecord(
            n=int(row["n"]),
            environment=Environment(int(row["e1"]), int(row["e2"])),
            f_obs=float(row["f_obs"]),
            z_n=float(row["z_n"]),
            avg_z=float(row["avg_z"]),
            alpha=opt(row["alpha"]),
            feasible_count=opt(row["feasible_count"], int),
            fallback=row["fallback"] == "1",
            gain=opt(row["gain"]),
        )
        for row in reader
    ]


@dataclass
class Streams:
    """Independent generators for each stochastic component of a run."""

    init: np.random.Generator
    observe: np.random.Generator
    ties: np.random.Generator
    restarts: np.random.Generator
    random_pick: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> Streams:
        return cls(
            init=rngmod.stream(seed, "init"),
            observe=rngmod.stream(seed, "observe"),
            ties=rngmod.stream(seed, "ties"),
            restarts=rngmod.stream(seed, "restarts"),
            random_pick=rngmod.stream(seed, "random-pick"),
        )


def initialize(
    world: RiskTable,
    n_init: int,
    rng: np.random.Generator,
    mode: ObservationMode = Exact(),
    obs_rng: np.random.Generator | None = None,
) -> DeploymentHistory:
    """Observe ``n_init`` distinct cells drawn uniformly without replacement."""
    space = world.space
    if n_init > space.size:
        raise ValueError(f"cannot draw {n_init} distinct cells from {space.size}")
    obs_rng = obs_rng if obs_rng is not None else rng
    history = DeploymentHistory()
    for idx in rng.choice(space.size, size=n_init, replace=False):
        env = space.env_at(int(idx))
        history.append(env, observe(world, env, mode, obs_rng))
    return history


def should_terminate(n: int, avg_z: float, config: RunConfig) -> bool:
    if n < 1:
        raise ValueError("n must be at least 1")
    return avg_z <= config.tau and n >= config.n_min


@dataclass
class RunState:
    history: DeploymentHistory
    current: FitResult
    previous_theta: Theta
    alpha: float | None = None

    @property
    def n(self) -> int:
        return len(self.history)


def _refit(history, space, config: RunConfig, warm: Theta | None, streams: Streams) -> FitResult:
    return fit(history, space, config.fit, warm_start=warm, rng=streams.restarts)


def step(state: RunState, world: RiskTable, config: RunConfig, streams: Streams):
    """Select, observe and refit once; returns ``(state', record)``."""
    space = world.space
    model_now = IntensityModel(state.current.theta, space.grid)
    z_now = state.current.avg_uncertainty
    alpha = gain = feasible = predicted = None
    fallback = False
    if config.strategy == "accelerated":
        alpha = alpha_of(z_now, state.alpha, config.acquire)
        model_prev = IntensityModel(state.previous_theta, space.grid)
        preds = predict_all(model_now, space).ravel()
        gains = gain_table(space, state.history, model_now, model_prev)
        sel = choose(space, gains, preds, alpha, z_now, config.xi, streams.ties)
        env, gain, feasible, fallback, predicted = (
            sel.environment, sel.gain, sel.feasible_count, sel.fallback, sel.predicted
        )
    else:
        env = space.env_at(int(streams.random_pick.integers(space.size)))
    value = observe(world, env, config.observation, streams.observe)
    history = state.history
    history.append(env, value)
    result = _refit(history, space, config, state.current.theta, streams)
    record = IterationRecord(
        n=len(history),
        environment=env,
        f_obs=value,
        z_n=result.residual_z,
        avg_z=result.avg_uncertainty,
        alpha=alpha,
        feasible_count=feasible,
        fallback=fallback,
        gain=gain,
        predicted=predicted,
        theta=result.theta,
    )
    new_state = RunState(history, result, state.current.theta, alpha if alpha is not None else state.alpha)
    return new_state, record


def run(config: RunConfig, world: RiskTable, streams: Streams | None = None) -> RunResult:
    space = world.space
    streams = streams or Streams.from_seed(config.seed)
    initial = initialize(world, config.n_init, streams.init, config.observation, streams.observe)

    # Fit every prefix of the initial sample so each record carries its own fit.
    history = DeploymentHistory()
    records: list[IterationRecord] = []
    previous = None
    current = None
    for env, value in initial:
        history.append(env, value)
        warm = current.theta if current is not None else None
        result = _refit(history, space, config, warm, streams)
        previous = current.theta if current is not None else initial_theta(history, space)
        current = result
        records.append(
            IterationRecord(
                n=len(history), environment=env, f_obs=value,
                z_n=result.residual_z, avg_z=result.avg_uncertainty, theta=result.theta,
            )
        )
    state = RunState(history, current, previous)

    terminated_by = MAX_ITERS
    while True:
        if should_terminate(state.n, state.current.avg_uncertainty, config):
            terminated_by = TOLERANCE_MET
            break
        if state.n >= config.max_iters:
            break
        state, record = step(state, world, config, streams)
        records.append(record)
    return RunResult(
        strategy=config.strategy,
        records=records,
        terminated_by=terminated_by,
        final_theta=state.current.theta,
        seed=config.seed,
        world_digest=world.digest(),
    )


def replay_violations(result: RunResult, space: EnvironmentSpace, xi: float, atol: float = 1e-12) -> list[int]:
    """Indices ``n`` of non-fallback selections whose risk score exceeds ``xi``.

    Recomputes the prediction from the fit preceding each selection, so it
    checks the log independently of the selection code path.
    """
    bad = []
    for prev, rec in zip(result.records, result.records[1:]):
        if rec.alpha is None or rec.fallback:
            continue
        pred = predict_all(IntensityModel(prev.theta, space.grid), space)[rec.environment.e1 - 1, rec.environment.e2 - 1]
        lhs = rec.alpha * pred + (1.0 - rec.alpha) * prev.avg_z
        if not lhs <= xi + atol:
            bad.append(rec.n)
    return bad


def config_dict(config: RunConfig) -> dict:
    d = asdict(config)
    obs = config.observation
    d["observation"] = "exact" if isinstance(obs, Exact) else f"montecarlo:{obs.sample_count}"
    return d


def parse_observation(text: str) -> ObservationMode:
    text = text.strip().lower()
    if text == "exact":
        return Exact()
    if text.startswith("montecarlo:"):
        return MonteCarlo(int(text.split(":", 1)[1]))
    raise ValueError(f"observation mode must be 'exact' or 'montecarlo:N', got {text!r}")

