"""Paired accelerated/random replications and their summary table."""

from __future__ import annotations

import csv
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import TextIO, Union

import numpy as np

from accdeploy import rng as rngmod
from accdeploy.deploy import MAX_ITERS, TOLERANCE_MET, RunConfig, RunResult, run
from accdeploy.env import EnvironmentSpace
from accdeploy.world import WorldConfig, generate_world

ARMS = ("accelerated", "random")
CURVE_HEADER = ("replication", "arm", "n", "avg_z", "f_obs")


@dataclass(frozen=True)
class BenchConfig:
    replications: int = 1000
    seed: int = 0
    world: WorldConfig = WorldConfig()
    run: RunConfig = RunConfig()
    cluster_count: int = 16
    group_count: int = 8

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    @property
    def space(self) -> EnvironmentSpace:
        return EnvironmentSpace.default(self.cluster_count, self.group_count)


@dataclass
class Pair:
    replication: int
    world_seed: int
    world_digest: str
    accelerated: RunResult | None
    random: RunResult | None
    error: str | None = None

    def arm(self, name: str) -> RunResult | None:
        return self.accelerated if name == "accelerated" else self.random


def replication_seeds(base_seed: int, replication: int) -> dict[str, int]:
    return {
        "world": rngmod.derive_seed(base_seed, "world", replication),
        "accelerated": rngmod.derive_seed(base_seed, "run", replication, "accelerated"),
        "random": rngmod.derive_seed(base_seed, "run", replication, "random"),
    }


def run_pair(config: BenchConfig, replication: int) -> Pair:
    seeds = replication_seeds(config.seed, replication)
    world_cfg = replace(config.world, seed=seeds["world"])
    try:
        world = generate_world(config.space, world_cfg)
        results = {
            arm: run(replace(config.run, strategy=arm, seed=seeds[arm]), world) for arm in ARMS
        }
    except Exception:  # noqa: BLE001 - a failed replication is reported, not fatal
        return Pair(replication, seeds["world"], "", None, None, traceback.format_exc())
    return Pair(replication, seeds["world"], world.digest(), results["accelerated"], results["random"])


def _pair_job(args):
    config, r = args
    return run_pair(config, r)


def replicate(config: BenchConfig, jobs: int | None = 1, progress=None) -> list[Pair]:
    """All replications, ordered by index regardless of scheduling."""
    indices = range(config.replications)
    jobs = jobs or os.cpu_count() or 1
    if jobs == 1:
        pairs = []
        for r in indices:
            pairs.append(run_pair(config, r))
            if progress:
                progress(r + 1, config.replications)
        return pairs
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        pairs = list(pool.map(_pair_job, [(config, r) for r in indices], chunksize=1))
    return sorted(pairs, key=lambda p: p.replication)


@dataclass
class ArmStats:
    runs: int
    mean_f: float  # over every deployment in the arm
    std_f: float
    mean_run_f: float  # mean of per-run means
    mean_final_z: float
    mean_n_star: float
    median_n_star: float
    tolerance_met: int | None = None
    max_iters: int | None = None


@dataclass
class BenchSummary:
    replications: int
    failed: int
    accelerated: ArmStats
    random: ArmStats
    acceleration_ratio: float
    median_pair_ratio: float
    frac_acc_lower_f: float
    world_pairing_ok: bool | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            f"{'Strategy':<22}{'Avg f':>12}{'Std f':>12}{'Avg z':>12}{'n*':>10}{'Acc. ratio':>12}",
            _row("Accelerated", self.accelerated, f"{self.acceleration_ratio:.2f}"),
            _row("Random", self.random, "1.00"),
            f"median per-pair ratio {self.median_pair_ratio:.2f}; "
            f"accelerated mean f lower in {100 * self.frac_acc_lower_f:.1f}% of {self.replications - self.failed} pairs",
        ]
        return "\n".join(rows)


def _row(name: str, s: ArmStats, ratio: str) -> str:
    return f"{name:<22}{s.mean_f:>12.3e}{s.std_f:>12.3e}{s.mean_final_z:>12.3e}{s.mean_n_star:>10.1f}{ratio:>12}"


# A curve is the (f_obs, avg_z) sequence of one run; the summary depends on nothing else.
Curves = dict[int, dict[str, tuple[np.ndarray, np.ndarray]]]


def _arm_stats(curves: list[tuple[np.ndarray, np.ndarray]]) -> ArmStats:
    all_f = np.concatenate([f for f, _ in curves])
    n_star = np.array([f.size for f, _ in curves], dtype=float)
    return ArmStats(
        runs=len(curves),
        mean_f=float(all_f.mean()),
        std_f=float(all_f.std()),
        mean_run_f=float(np.mean([f.mean() for f, _ in curves])),
        mean_final_z=float(np.mean([z[-1] for _, z in curves])),
        mean_n_star=float(n_star.mean()),
        median_n_star=float(np.median(n_star)),
    )


def summarize_curves(curves: Curves, failed: int = 0) -> BenchSummary:
    reps = sorted(r for r in curves if all(a in curves[r] for a in ARMS))
    if not reps:
        raise ValueError("no complete replication pairs to summarize")
    acc = [curves[r]["accelerated"] for r in reps]
    rnd = [curves[r]["random"] for r in reps]
    sa, sr = _arm_stats(acc), _arm_stats(rnd)
    pair_ratio = [b[0].size / a[0].size for a, b in zip(acc, rnd)]
    lower = [a[0].mean() < b[0].mean() for a, b in zip(acc, rnd)]
    return BenchSummary(
        replications=len(reps) + failed,
        failed=failed,
        accelerated=sa,
        random=sr,
        acceleration_ratio=sr.mean_n_star / sa.mean_n_star,
        median_pair_ratio=float(np.median(pair_ratio)),
        frac_acc_lower_f=float(np.mean(lower)),
    )


def pairs_to_curves(pairs: list[Pair]) -> Curves:
    out: Curves = {}
    for p in pairs:
        if p.error is not None:
            continue
        out[p.replication] = {
            arm: (p.arm(arm).observed, p.arm(arm).avg_z_curve) for arm in ARMS
        }
    return out


def summarize(pairs: list[Pair]) -> BenchSummary:
    if not pairs:
        raise ValueError("no pairs to summarize")
    failed = sum(p.error is not None for p in pairs)
    summary = summarize_curves(pairs_to_curves(pairs), failed)
    ok = [p for p in pairs if p.error is None]
    for arm in ARMS:
        stats = getattr(summary, arm)
        stats.tolerance_met = sum(p.arm(arm).terminated_by == TOLERANCE_MET for p in ok)
        stats.max_iters = sum(p.arm(arm).terminated_by == MAX_ITERS for p in ok)
    summary.world_pairing_ok = all(
        p.accelerated.world_digest == p.random.world_digest == p.world_digest for p in ok
    )
    return summary


def export_curves(pairs: list[Pair], destination: Union[str, os.PathLike, TextIO]) -> int:
    """Write long-format curves; returns the number of data rows."""
    if not pairs:
        raise ValueError("no pairs to export")
    if isinstance(destination, (str, os.PathLike)):
        try:
            with open(destination, "w", newline="", encoding="utf-8") as fh:
                return export_curves(pairs, fh)
        except OSError as exc:
            raise OSError(f"cannot write curves to {os.fspath(destination)}: {exc.strerror or exc}") from exc
    w = csv.writer(destination, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    rows = 0
    for rep, arms in sorted(pairs_to_curves(pairs).items()):
        for arm in ARMS:
            f, z = arms[arm]
            for i, (fi, zi) in enumerate(zip(f, z), start=1):
                w.writerow((rep, arm, i, repr(float(zi)), repr(float(fi))))
                rows += 1
    return rows


def read_curves(src: Union[str, os.PathLike, TextIO]) -> Curves:
    if isinstance(src, (str, os.PathLike)):
        with open(src, newline="", encoding="utf-8") as fh:
            return read_curves(fh)
    reader = csv.reader(src)
    header = next(reader, None)
    if header is None or tuple(header) != CURVE_HEADER:
        raise ValueError(f"curve header must be {','.join(CURVE_HEADER)}")
    acc: dict[int, dict[str, list[tuple[int, float, float]]]] = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5 or row[1] not in ARMS:
            raise ValueError(f"line {line}: malformed curve row {row}")
        acc.setdefault(int(row[0]), {}).setdefault(row[1], []).append((int(row[2]), float(row[3]), float(row[4])))
    out: Curves = {}
    for rep, arms in acc.items():
        out[rep] = {}
        for arm, pts in arms.items():
            pts.sort()
            out[rep][arm] = (np.array([p[2] for p in pts]), np.array([p[1] for p in pts]))
    return out
