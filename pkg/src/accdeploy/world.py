"""Ground-truth risk tables and the observation channel."""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass
from typing import TextIO, Union

import numpy as np

from accdeploy.env import HOURS_PER_DAY, Environment, EnvironmentSpace, TimeGrid

CSV_HEADER = ("cluster", "time_group", "risk")


@dataclass(frozen=True, eq=False)
class RiskTable:
    """True risky-event probability for every cell of a space."""

    values: np.ndarray
    space: EnvironmentSpace

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.space.shape:
            raise ValueError(f"table shape {v.shape} does not match space {self.space.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise ValueError("risk values must be finite probabilities in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, env: Environment) -> float:
        self.space.check(env)
        return float(self.values[env.e1 - 1, env.e2 - 1])

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.space.shape, dtype=np.int64).tobytes())
        h.update(np.asarray(self.space.grid.boundaries).tobytes())
        h.update(self.values.tobytes())
        return h.hexdigest()

    def write_csv(self, dest: Union[str, os.PathLike, TextIO]) -> None:
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                self.write_csv(fh)
            return
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(CSV_HEADER)
        m1, m2 = self.space.shape
        for c in range(m1):
            for k in range(m2):
                w.writerow((c + 1, k + 1, repr(float(self.values[c, k]))))

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, src: Union[str, os.PathLike, TextIO], grid: TimeGrid | None = None) -> RiskTable:
        """Load ``cluster,time_group,risk`` rows; dimensions come from the max indices.

        ``grid`` defaults to equal-width groups.
        """
        if isinstance(src, (str, os.PathLike)):
            with open(src, newline="", encoding="utf-8") as fh:
                return cls.read_csv(fh, grid)
        reader = csv.reader(src)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"risk table header must be {','.join(CSV_HEADER)}, got {header}")
        cells: dict[tuple[int, int], float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                c, k, p = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            if (c, k) in cells:
                raise ValueError(f"line {lineno}: duplicate cell ({c}, {k})")
            cells[(c, k)] = p
        if not cells:
            raise ValueError("risk table has no rows")
        m1 = max(c for c, _ in cells)
        m2 = max(k for _, k in cells)
        if len(cells) != m1 * m2 or min(min(ck) for ck in cells) < 1:
            raise ValueError(f"risk table does not cover a full {m1}x{m2} grid")
        grid = grid or TimeGrid.equal(m2)
        values = np.zeros((m1, m2))
        for (c, k), p in cells.items():
            values[c - 1, k - 1] = p
        return cls(values, EnvironmentSpace(m1, grid))


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    base_risk: float = 1.5e-3
    diurnal_amplitude: float = 2.0e-3
    cluster_spread: tuple[float, float] = (0.2, 5.0)
    noise_sigma: float = 0.25
    floor: float = 1e-5
    ceiling: float = 0.05

    def __post_init__(self):
        lo, hi = self.cluster_spread
        object.__setattr__(self, "cluster_spread", (float(lo), float(hi)))
        if not 0 <= self.floor < self.ceiling <= 1:
            raise ValueError("need 0 <= floor < ceiling <= 1")
        if self.diurnal_amplitude < 0 or self.noise_sigma < 0 or self.base_risk < 0:
            raise ValueError("base risk, amplitude and sigma must be nonnegative")
        if not 0 < lo <= hi:
            raise ValueError("cluster spread must satisfy 0 < low <= high")


@dataclass(frozen=True)
class Exact:
    """Deployments reveal the true cell risk."""


@dataclass(frozen=True)
class MonteCarlo:
    """Deployments reveal the risky fraction of ``sample_count`` encounters."""

    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")


ObservationMode = Union[Exact, MonteCarlo]

# (centre hour, width in hours, height): morning and evening peaks plus a
# smaller late-night bump, so overnight risk does not simply track traffic.
_DAY_BUMPS = ((8.0, 1.8, 1.0), (17.5, 2.2, 0.9), (2.5, 1.5, 0.45))


def _bumps(hours) -> np.ndarray:
    h = np.asarray(hours, dtype=float)
    out = np.zeros_like(h)
    for centre, width, height in _DAY_BUMPS:
        d = np.abs(h - centre) % HOURS_PER_DAY
        d = np.minimum(d, HOURS_PER_DAY - d)
        out += height * np.exp(-0.5 * (d / width) ** 2)
    return out


_DAY_MAX = float(_bumps(np.linspace(0, HOURS_PER_DAY, 24 * 60, endpoint=False)).max())


def day_shape(hours) -> np.ndarray:
    """Relative diurnal risk in [0, 1], periodic over 24 hours."""
    return _bumps(hours) / _DAY_MAX


def diurnal_profile(grid: TimeGrid, points_per_group: int = 64) -> np.ndarray:
    """Group-averaged day shape, one value per time group."""
    out = np.empty(grid.group_count)
    b = grid.boundaries
    for k in range(grid.group_count):
        ts = b[k] + (np.arange(points_per_group) + 0.5) * (b[k + 1] - b[k]) / points_per_group
        out[k] = day_shape(ts).mean()
    return out


def generate_world(
    space: EnvironmentSpace, config: WorldConfig = WorldConfig(), rng: np.random.Generator | None = None
) -> RiskTable:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    lo, hi = config.cluster_spread
    multipliers = np.exp(rng.uniform(np.log(lo), np.log(hi), space.cluster_count))
    temporal = config.base_risk + config.diurnal_amplitude * diurnal_profile(space.grid)
    noise = np.exp(config.noise_sigma * rng.standard_normal(space.shape))
    values = np.outer(multipliers, temporal) * noise
    return RiskTable(np.clip(values, config.floor, config.ceiling), space)


def tiered_world(
    space: EnvironmentSpace, tier_of_cluster, tier_levels, grid_profile: bool = True
) -> RiskTable:
    """Deterministic world where each cluster belongs to a risk tier.

    Cell risk is the tier level scaled by the normalized diurnal profile
    (mean 1 across groups) when ``grid_profile`` is set.
    """
    tiers = np.asarray(tier_of_cluster, dtype=int)
    levels = np.asarray(tier_levels, dtype=float)
    if tiers.shape != (space.cluster_count,):
        raise ValueError("need one tier per cluster")
    profile = np.ones(space.group_count)
    if grid_profile:
        shape = 0.5 + diurnal_profile(space.grid)
        profile = shape / shape.mean()
    return RiskTable(np.clip(np.outer(levels[tiers], profile), 0.0, 1.0), space)


def empirical_rate(risky: int, total: int) -> float:
    if total < 1:
        raise ValueError("need at least one sample")
    return risky / total


def observe(table: RiskTable, env: Environment, mode: ObservationMode, rng: np.random.Generator) -> float:
    p = table[env]
    if isinstance(mode, Exact):
        return p
    if isinstance(mode, MonteCarlo):
        # A binomial count is the sum of sample_count Bernoulli(p) indicators.
        return empirical_rate(int(rng.binomial(mode.sample_count, p)), mode.sample_count)
    raise TypeError(f"unknown observation mode {mode!r}")

