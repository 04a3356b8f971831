"""Encounter logs to a cluster x time-group risk table.

Pipeline: parse the CSV log, flag risky encounters, count per route and
time group, cluster routes with k-means on (risk, log exposure), then pool
counts per cluster and group.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import TextIO, Union

import numpy as np

from accdeploy.env import HOURS_PER_DAY, EnvironmentSpace, TimeGrid, time_group_of
from accdeploy.world import RiskTable

LOG_HEADER = ("route_id", "timestamp_h", "range_ft", "range_rate_ftps")
CLUSTER_HEADER = ("route_id", "cluster")


class LogParseError(ValueError):
    def __init__(self, line: int, field_name: str | None, message: str):
        self.line = line
        self.field = field_name
        where = f"line {line}" + (f", field {field_name}" if field_name else "")
        super().__init__(f"{where}: {message}")


class EmptyCellWarning(UserWarning):
    """A cluster/time-group cell had no encounters and took the global rate."""


@dataclass(frozen=True)
class EncounterRecord:
    route_id: str
    timestamp: float  # clock hours in [0, 24)
    range: float  # ft
    range_rate: float  # ft/s, negative when closing

    def __post_init__(self):
        if not 0.0 <= self.timestamp < HOURS_PER_DAY:
            raise ValueError(f"timestamp {self.timestamp} outside [0, 24)")
        if self.range < 0:
            raise ValueError(f"negative range {self.range}")


@dataclass(frozen=True)
class RiskyEventCriteria:
    max_range: float = 10.0
    rate_threshold: float = 0.0

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")


def is_risky(record: EncounterRecord, criteria: RiskyEventCriteria = RiskyEventCriteria()) -> bool:
    """Close (range at most max_range) and closing (rate strictly below threshold)."""
    return record.range <= criteria.max_range and record.range_rate < criteria.rate_threshold


def _float_field(value: str, line: int, name: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise LogParseError(line, name, f"not a number: {value!r}") from None
    if not math.isfinite(x):
        raise LogParseError(line, name, f"not finite: {value!r}")
    return x


def parse_log(source: Union[str, os.PathLike, TextIO, Iterable[str]]) -> list[EncounterRecord]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_log(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != LOG_HEADER:
        raise LogParseError(1, None, f"header must be {','.join(LOG_HEADER)}, got {header}")
    out = []
    for line, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(LOG_HEADER):
            raise LogParseError(line, None, f"expected {len(LOG_HEADER)} fields, got {len(row)}")
        route = row[0].strip()
        if not route:
            raise LogParseError(line, "route_id", "empty route id")
        t = _float_field(row[1], line, "timestamp_h")
        r = _float_field(row[2], line, "range_ft")
        rate = _float_field(row[3], line, "range_rate_ftps")
        if not 0.0 <= t < HOURS_PER_DAY:
            raise LogParseError(line, "timestamp_h", f"{t} outside [0, 24)")
        if r < 0:
            raise LogParseError(line, "range_ft", f"negative range {r}")
        out.append(EncounterRecord(route, t, r, rate))
    return out


@dataclass
class RouteAggregate:
    route_id: str
    totals: np.ndarray  # per time group
    risky: np.ndarray

    @property
    def total_count(self) -> int:
        return int(self.totals.sum())

    @property
    def risky_count(self) -> int:
        return int(self.risky.sum())

    @property
    def group_rates(self) -> np.ndarray:
        """Risky fraction per group; NaN marks groups with no encounters."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.totals > 0, self.risky / np.maximum(self.totals, 1), np.nan)

    @property
    def overall_rate(self) -> float:
        return self.risky_count / self.total_count if self.total_count else math.nan

    def rate(self, group: int) -> float | None:
        """Rate of 1-based ``group``, or None when it has no encounters."""
        if self.totals[group - 1] == 0:
            return None
        return float(self.risky[group - 1] / self.totals[group - 1])


def aggregate(
    records: Iterable[EncounterRecord], grid: TimeGrid, criteria: RiskyEventCriteria = RiskyEventCriteria()
) -> list[RouteAggregate]:
    """Per-route counts, sorted by route id."""
    m2 = grid.group_count
    by_route: dict[str, RouteAggregate] = {}
    for rec in records:
        agg = by_route.get(rec.route_id)
        if agg is None:
            agg = by_route[rec.route_id] = RouteAggregate(rec.route_id, np.zeros(m2, int), np.zeros(m2, int))
        k = time_group_of(rec.timestamp, grid) - 1
        agg.totals[k] += 1
        if is_risky(rec, criteria):
            agg.risky[k] += 1
    return [by_route[r] for r in sorted(by_route)]


@dataclass
class RouteClustering:
    assignment: dict[str, int]
    k: int
    centroids: np.ndarray  # standardized feature space, row c-1 is cluster c
    objective_trace: list[float] = field(default_factory=list)

    def clusters(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {c: [] for c in range(1, self.k + 1)}
        for route, c in self.assignment.items():
            out[c].append(route)
        return out

    def write_csv(self, dest: Union[str, os.PathLike, TextIO]) -> None:
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                self.write_csv(fh)
            return
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(CLUSTER_HEADER)
        for route in sorted(self.assignment):
            w.writerow((route, self.assignment[route]))


def read_clustering(src: Union[str, os.PathLike, TextIO]) -> dict[str, int]:
    if isinstance(src, (str, os.PathLike)):
        with open(src, newline="", encoding="utf-8") as fh:
            return read_clustering(fh)
    reader = csv.reader(src)
    header = next(reader, None)
    if header is None or tuple(header) != CLUSTER_HEADER:
        raise ValueError(f"clustering header must be {','.join(CLUSTER_HEADER)}")
    return {row[0]: int(row[1]) for row in reader if row}


def route_features(aggregates: list[RouteAggregate]) -> np.ndarray:
    """Standardized ``(overall rate, log10 total count)`` per route."""
    X = np.array([[a.overall_rate, math.log10(a.total_count)] for a in aggregates], dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # Remaining points coincide with chosen centres; take any unused one.
            unused = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(unused))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _assign(X, centroids):
    d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, float(d2[np.arange(X.shape[0]), labels].sum())


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, max_iters: int = 100):
    """Lloyd iterations from k-means++ centres.

    Returns ``(labels, centroids, objective_trace)``; the trace holds the
    within-cluster sum of squares after every assignment step.
    """
    centroids = kmeans_plusplus(X, k, rng)
    labels, obj = _assign(X, centroids)
    trace = [obj]
    for _ in range(max_iters):
        new = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
        for c in range(k):
            if not np.any(labels == c):
                # Re-seed with the point farthest from its current centre,
                # taken from a cluster that can spare it.
                sizes = np.bincount(labels, minlength=k)
                spare = sizes[labels] > 1
                dist = np.sum((X - new[labels]) ** 2, axis=1)
                dist[~spare] = -1.0
                far = int(np.argmax(dist))
                new[c] = X[far]
                labels[far] = c
        new_labels, obj = _assign(X, new)
        trace.append(obj)
        centroids = new
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centroids, trace


def cluster_routes(aggregates: list[RouteAggregate], k: int, seed: int = 0, max_iters: int = 100) -> RouteClustering:
    """k-means over routes; cluster 1 has the lowest-risk centroid."""
    if k < 1:
        raise ValueError("k must be positive")
    if len(aggregates) < k:
        raise ValueError(f"cannot form {k} clusters from {len(aggregates)} routes")
    if any(a.total_count == 0 for a in aggregates):
        raise ValueError("every route needs at least one encounter")
    X = route_features(aggregates)
    labels, centroids, trace = kmeans(X, k, np.random.default_rng(seed), max_iters)
    order = np.lexsort((centroids[:, 1], centroids[:, 0]))
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(1, k + 1)
    assignment = {a.route_id: int(relabel[l]) for a, l in zip(aggregates, labels)}
    return RouteClustering(assignment, k, centroids[order], trace)


def build_risk_table(
    aggregates: list[RouteAggregate], clustering: RouteClustering, grid: TimeGrid
) -> RiskTable:
    """Pooled risky/total per cluster and group.

    Empty cells take the global pooled rate and raise ``EmptyCellWarning``.
    """
    k, m2 = clustering.k, grid.group_count
    totals = np.zeros((k, m2))
    risky = np.zeros((k, m2))
    for a in aggregates:
        if a.route_id not in clustering.assignment:
            raise ValueError(f"route {a.route_id!r} has no cluster assignment")
        c = clustering.assignment[a.route_id] - 1
        totals[c] += a.totals
        risky[c] += a.risky
    if totals.sum() == 0:
        raise ValueError("no encounters to pool")
    global_rate = risky.sum() / totals.sum()
    values = np.full((k, m2), global_rate)
    seen = totals > 0
    values[seen] = risky[seen] / totals[seen]
    empty = np.argwhere(~seen)
    if empty.size:
        cells = ", ".join(f"({c + 1},{g + 1})" for c, g in empty)
        warnings.warn(f"no encounters in cells {cells}; using global rate {global_rate:.6g}", EmptyCellWarning)
    return RiskTable(values, EnvironmentSpace(k, grid))
