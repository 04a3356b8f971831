"""Regenerate the 1000-row golden encounter log and its expected aggregates.

Counts are scripted below; everything in golden_expected.json is derived from
these tables with integer arithmetic, never from the package under test.

    python3 tests/fixtures/make_golden.py
"""

import csv
import itertools
import json
import random
from fractions import Fraction
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
GROUP_HOURS = 3.0  # eight equal groups

# Four low-risk routes (L*) and four high-risk routes (H*), 125 rows each.
# Every low route skips group 8 entirely, so pooled cell (1, 8) is empty.
# H2 skips group 3, which the other high routes still cover.
TOTALS = {
    "L1": [20, 15, 15, 20, 15, 20, 20, 0],
    "L2": [20, 15, 15, 20, 15, 20, 20, 0],
    "L3": [20, 15, 15, 20, 15, 20, 20, 0],
    "L4": [20, 15, 15, 20, 15, 20, 20, 0],
    "H1": [15, 15, 15, 15, 15, 15, 15, 20],
    "H2": [15, 15, 0, 30, 15, 15, 15, 20],
    "H3": [15, 15, 15, 15, 15, 15, 15, 20],
    "H4": [15, 15, 15, 15, 15, 15, 15, 20],
}
RISKY = {
    "L1": [1, 0, 0, 1, 0, 0, 0, 0],
    "L2": [0, 1, 0, 0, 0, 1, 0, 0],
    "L3": [0, 0, 0, 0, 1, 0, 0, 0],
    "L4": [1, 0, 1, 0, 0, 0, 1, 0],
    "H1": [3, 4, 3, 2, 4, 3, 3, 5],
    "H2": [4, 3, 0, 7, 3, 2, 4, 4],
    "H3": [2, 3, 4, 3, 3, 4, 2, 6],
    "H4": [3, 3, 3, 4, 2, 3, 4, 5],
}
CLUSTER = {r: 1 if r.startswith("L") else 2 for r in TOTALS}

# (range_ft, range_rate_ftps); the first entry of each list is a boundary case.
RISKY_KINDS = [(10.0, -0.1), (9.5, -1.0), (3.25, -4.5)]
SAFE_KINDS = [(9.0, 0.0), (10.5, -2.0), (25.0, 3.0), (40.0, -1.0)]


def rows():
    out = []
    for route, totals in TOTALS.items():
        for g, (total, risky) in enumerate(zip(totals, RISKY[route])):
            start = g * GROUP_HOURS
            for j in range(total):
                # j = 0 sits exactly on the group's left boundary
                t = start + (j % 30) * 0.1
                kind = RISKY_KINDS[j % 3] if j < risky else SAFE_KINDS[j % 4]
                out.append((route, f"{t:.1f}", repr(kind[0]), repr(kind[1])))
    random.Random(7).shuffle(out)
    return out


def features():
    pts = []
    for r in TOTALS:
        n = sum(TOTALS[r])
        pts.append([sum(RISKY[r]) / n, np.log10(n)])
    X = np.array(pts)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - X.mean(axis=0)) / sd


def check_partition_is_optimal():
    """Exhaustive search over 2-partitions confirms the scripted clusters."""
    X = features()
    routes = list(TOTALS)
    best = None
    for labels in itertools.product([0, 1], repeat=len(routes)):
        if len(set(labels)) < 2:
            continue
        lab = np.array(labels)
        sse = sum(((X[lab == g] - X[lab == g].mean(axis=0)) ** 2).sum() for g in (0, 1))
        if best is None or sse < best[0] - 1e-12:
            best = (sse, lab)
    groups = {frozenset(r for r, l in zip(routes, best[1]) if l == g) for g in (0, 1)}
    scripted = {frozenset(r for r in routes if CLUSTER[r] == c) for c in (1, 2)}
    assert groups == scripted, groups


def expected():
    m2 = 8
    pooled = {}
    all_risky = sum(sum(v) for v in RISKY.values())
    all_total = sum(sum(v) for v in TOTALS.values())
    empty = []
    for c in (1, 2):
        for g in range(m2):
            t = sum(TOTALS[r][g] for r in TOTALS if CLUSTER[r] == c)
            k = sum(RISKY[r][g] for r in TOTALS if CLUSTER[r] == c)
            if t == 0:
                empty.append([c, g + 1])
                pooled[f"{c},{g + 1}"] = [all_risky, all_total]
            else:
                pooled[f"{c},{g + 1}"] = [k, t]
    # A cell where pooling differs from averaging per-route rates.
    c, g = 2, 4
    members = [r for r in TOTALS if CLUSTER[r] == c]
    mean_of_rates = sum(Fraction(RISKY[r][g - 1], TOTALS[r][g - 1]) for r in members) / len(members)
    pooled_rate = Fraction(*pooled[f"{c},{g}"])
    assert mean_of_rates != pooled_rate
    return {
        "rows": all_total,
        "totals": TOTALS,
        "risky": RISKY,
        "clusters": CLUSTER,
        "pooled": pooled,
        "empty_cells": empty,
        "pooling_differs": {"cell": [c, g], "mean_of_rates": [mean_of_rates.numerator, mean_of_rates.denominator]},
    }


def main():
    check_partition_is_optimal()
    data = rows()
    assert len(data) == 1000
    with open(HERE / "golden_log.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("route_id", "timestamp_h", "range_ft", "range_rate_ftps"))
        w.writerows(data)
    with open(HERE / "golden_expected.json", "w", encoding="utf-8") as fh:
        json.dump(expected(), fh, indent=1, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main()
