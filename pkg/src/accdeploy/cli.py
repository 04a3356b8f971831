"""Command-line entry point.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error,
3 run stopped at max_iters without meeting the tolerance.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

from accdeploy import bench as benchmod
from accdeploy import deploy, ingest
from accdeploy.env import EnvironmentSpace, TimeGrid
from accdeploy.fit import FitConfig
from accdeploy.world import RiskTable, WorldConfig, generate_world

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3

log = logging.getLogger("accdeploy")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    type: type
    default: object
    help: str

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")

    @property
    def dest(self) -> str:
        return f"{self.section}__{self.key}"


def _observation(text: str) -> str:
    deploy.parse_observation(text)
    return text.strip().lower()


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


# Single source of truth for config keys, flags and documented defaults.
OPTIONS = (
    Option("general", "seed", int, 0, "master seed; every random stream is derived from it"),
    Option("space", "cluster_count", int, 16, "number of route clusters"),
    Option("space", "time_groups", int, 8, "number of equal-width time-of-day groups"),
    Option("world", "base_risk", float, 1.5e-3, "base risk level of the synthetic world"),
    Option("world", "diurnal_amplitude", float, 2.0e-3, "scale of the day-shaped risk pattern"),
    Option("world", "spread_low", float, 0.2, "lower end of the log-uniform cluster multiplier"),
    Option("world", "spread_high", float, 5.0, "upper end of the log-uniform cluster multiplier"),
    Option("world", "noise_sigma", float, 0.25, "log-sd of the per-cell lognormal noise"),
    Option("world", "floor", float, 1e-5, "lower clamp for cell risk"),
    Option("world", "ceiling", float, 0.05, "upper clamp for cell risk"),
    Option("run", "strategy", str, "accelerated", "accelerated or random"),
    Option("run", "xi", float, 0.02, "risk tolerance of the feasible region"),
    Option("run", "tau", float, 7.5e-4, "tolerance on the average estimation error"),
    Option("run", "n_min", int, 100, "minimum number of deployments"),
    Option("run", "n_init", int, 25, "initial random deployments"),
    Option("run", "max_iters", int, 5000, "hard cap on deployments"),
    Option("run", "observation", _observation, "exact", "exact or montecarlo:N"),
    Option("run", "kappa", _optional_float, None, "alpha-schedule steepness (none = 1/tau)"),
    Option("fit", "max_als_rounds", int, 200, "alternating least-squares rounds per start"),
    Option("fit", "als_tolerance", float, 1e-10, "relative residual change that stops ALS"),
    Option("fit", "restarts", int, 3, "random restarts per fit"),
    Option("bench", "replications", int, 1000, "paired replications"),
    Option("bench", "jobs", int, 0, "concurrent replications (0 = all cores)"),
    Option("ingest", "k", int, 16, "route clusters for k-means"),
    Option("ingest", "max_range", float, 10.0, "risky if range (ft) is at most this"),
    Option("ingest", "rate_threshold", float, 0.0, "risky if range rate (ft/s) is below this"),
    Option("ingest", "kmeans_iters", int, 100, "maximum Lloyd iterations"),
)
_BY_DEST = {o.dest: o for o in OPTIONS}
_BY_SECTION_KEY = {(o.section, o.key): o for o in OPTIONS}

# Which option sections each command exposes as flags.
_COMMAND_SECTIONS = {
    "gen-world": ("general", "space", "world"),
    "ingest": ("general", "ingest", "space"),
    "run": ("general", "space", "world", "run", "fit"),
    "bench": ("general", "space", "world", "run", "fit", "bench"),
    "report": (),
}


def defaults_table() -> str:
    """Markdown table of every option; mirrored in the README."""
    lines = ["| section | key | flag | default |", "|---|---|---|---|"]
    for o in OPTIONS:
        lines.append(f"| {o.section} | {o.key} | `{o.flag}` | {o.default!r} |")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="accdeploy",
        description="Risk-constrained adaptive deployment simulator.",
        epilog="Exit codes: 0 ok, 1 runtime/I-O failure, 2 usage error, 3 stopped at max-iters.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    cmds = {
        "gen-world": sub.add_parser("gen-world", help="generate a synthetic risk table"),
        "ingest": sub.add_parser("ingest", help="encounter log to risk table and route clusters"),
        "run": sub.add_parser("run", help="one deployment run"),
        "bench": sub.add_parser("bench", help="paired accelerated/random replications"),
        "report": sub.add_parser("report", help="re-summarize an exported curves file"),
    }
    for name, p in cmds.items():
        p.add_argument("--config", type=Path, help="INI file with [section] key = value entries")
        for o in OPTIONS:
            if o.section in _COMMAND_SECTIONS[name]:
                p.add_argument(
                    o.flag, dest=o.dest, type=o.type, default=None,
                    help=f"{o.help} (default: {o.default}; config [{o.section}] {o.key})",
                )

    cmds["gen-world"].add_argument("--out", type=Path, required=True, help="risk table CSV to write")

    p = cmds["ingest"]
    p.add_argument("--input", type=Path, required=True, help="encounter log CSV")
    p.add_argument("--out-table", type=Path, required=True, help="risk table CSV to write")
    p.add_argument("--out-clusters", type=Path, required=True, help="route clustering CSV to write")

    p = cmds["run"]
    src = p.add_mutually_exclusive_group()
    src.add_argument("--world", type=Path, help="risk table CSV to deploy against")
    src.add_argument("--gen", type=int, metavar="SEED", help="generate the world from this seed")
    p.add_argument("--log", type=Path, required=True, help="per-iteration CSV to write")
    p.add_argument("--summary", type=Path, required=True, help="run summary JSON to write")

    p = cmds["bench"]
    p.add_argument("--summary", type=Path, required=True, help="summary JSON to write")
    p.add_argument("--curves", type=Path, required=True, help="long-format curves CSV to write")

    p = cmds["report"]
    p.add_argument("--curves", type=Path, required=True, help="curves CSV from a previous bench")
    p.add_argument("--summary", type=Path, help="optional summary JSON to write")
    return parser


def load_config_file(path: Path | None) -> dict[str, object]:
    """Values keyed by option dest; unknown sections or keys are usage errors."""
    if path is None:
        return {}
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            opt = _BY_SECTION_KEY.get((section, key))
            if opt is None:
                raise UsageError(f"{path}: unknown key [{section}] {key}")
            try:
                out[opt.dest] = opt.type(raw)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{path}: bad value for [{section}] {key}: {exc}") from exc
    return out


def resolve(args: argparse.Namespace) -> dict[str, object]:
    """Defaults, then config file, then flags."""
    values = {o.dest: o.default for o in OPTIONS}
    values.update(load_config_file(getattr(args, "config", None)))
    for dest in _BY_DEST:
        flag_value = getattr(args, dest, None)
        if flag_value is not None:
            values[dest] = flag_value
    return values


def _space(v) -> EnvironmentSpace:
    try:
        return EnvironmentSpace(v["space__cluster_count"], TimeGrid.equal(v["space__time_groups"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def world_config(v) -> WorldConfig:
    return WorldConfig(
        seed=v["general__seed"],
        base_risk=v["world__base_risk"],
        diurnal_amplitude=v["world__diurnal_amplitude"],
        cluster_spread=(v["world__spread_low"], v["world__spread_high"]),
        noise_sigma=v["world__noise_sigma"],
        floor=v["world__floor"],
        ceiling=v["world__ceiling"],
    )


def run_config(v) -> deploy.RunConfig:
    return deploy.RunConfig(
        strategy=v["run__strategy"],
        xi=v["run__xi"],
        tau=v["run__tau"],
        n_min=v["run__n_min"],
        n_init=v["run__n_init"],
        max_iters=v["run__max_iters"],
        observation=deploy.parse_observation(v["run__observation"]),
        seed=v["general__seed"],
        kappa=v["run__kappa"],
        fit=FitConfig(
            max_als_rounds=v["fit__max_als_rounds"],
            als_tolerance=v["fit__als_tolerance"],
            restarts=v["fit__restarts"],
        ),
    )


def cmd_gen_world(args, v) -> int:
    space = _space(v)
    try:
        table = generate_world(space, world_config(v))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    table.write_csv(args.out)
    vals = table.values
    print(f"wrote {args.out}: {space.size} cells, mean {vals.mean():.4e}, min {vals.min():.4e}, max {vals.max():.4e}")
    return EXIT_OK


def cmd_ingest(args, v) -> int:
    grid = TimeGrid.equal(v["space__time_groups"])
    try:
        criteria = ingest.RiskyEventCriteria(v["ingest__max_range"], v["ingest__rate_threshold"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not args.input.exists():
        print(f"error: input log not found: {args.input}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        records = ingest.parse_log(args.input)
    except ingest.LogParseError as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    aggregates = ingest.aggregate(records, grid, criteria)
    k = v["ingest__k"]
    if len(aggregates) < k:
        raise UsageError(f"--k {k} exceeds the number of routes ({len(aggregates)})")
    clustering = ingest.cluster_routes(aggregates, k, v["general__seed"], v["ingest__kmeans_iters"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ingest.EmptyCellWarning)
        table = ingest.build_risk_table(aggregates, clustering, grid)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    table.write_csv(args.out_table)
    clustering.write_csv(args.out_clusters)
    print(f"{len(records)} encounters, {len(aggregates)} routes, {k} clusters -> {args.out_table}, {args.out_clusters}")
    return EXIT_OK


def cmd_run(args, v) -> int:
    try:
        config = run_config(v)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.world is not None:
        grid = TimeGrid.equal(v["space__time_groups"])
        world = RiskTable.read_csv(args.world, grid)
    else:
        seed = args.gen if args.gen is not None else v["general__seed"]
        world = generate_world(_space(v), replace(world_config(v), seed=seed))
    result = deploy.run(config, world)
    result.write_log(args.log)
    result.write_summary(args.summary)
    s = result.summary()
    print(
        f"{config.strategy}: n*={s['n_star']} ({s['terminated_by']}), mean f {s['mean_f']:.4e}, "
        f"final avg z {s['final_avg_z']:.4e}"
    )
    return EXIT_NONCONVERGED if result.terminated_by == deploy.MAX_ITERS else EXIT_OK


def _write_summary(path: Path, summary: benchmod.BenchSummary, extra: dict | None = None) -> None:
    payload = summary.to_dict()
    if extra:
        payload["config"] = extra
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_bench(args, v) -> int:
    try:
        cfg = benchmod.BenchConfig(
            replications=v["bench__replications"],
            seed=v["general__seed"],
            world=world_config(v),
            run=run_config(v),
            cluster_count=v["space__cluster_count"],
            group_count=v["space__time_groups"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    jobs = v["bench__jobs"] or None
    pairs = benchmod.replicate(cfg, jobs=jobs)
    failed = [p for p in pairs if p.error is not None]
    for p in failed:
        print(f"replication {p.replication} failed:\n{p.error}", file=sys.stderr)
    if len(failed) == len(pairs):
        return EXIT_RUNTIME
    summary = benchmod.summarize(pairs)
    benchmod.export_curves(pairs, args.curves)
    _write_summary(args.summary, summary, {o.dest: v[o.dest] for o in OPTIONS if o.section != "ingest"})
    print(summary.table())
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_report(args, v) -> int:
    try:
        curves = benchmod.read_curves(args.curves)
    except FileNotFoundError:
        print(f"error: curves file not found: {args.curves}", file=sys.stderr)
        return EXIT_RUNTIME
    summary = benchmod.summarize_curves(curves)
    if args.summary:
        _write_summary(args.summary, summary)
    print(summary.table())
    return EXIT_OK


COMMANDS = {
    "gen-world": cmd_gen_world,
    "ingest": cmd_ingest,
    "run": cmd_run,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        values = resolve(args)
        return COMMANDS[args.command](args, values)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
