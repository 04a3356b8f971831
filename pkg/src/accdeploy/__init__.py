"""Risk-constrained adaptive deployment with an NHPP surrogate risk model."""

from accdeploy.env import Environment, EnvironmentSpace, TimeGrid, enumerate_environments, time_group_of
from accdeploy.surrogate import IntensityModel, Theta, predict, predict_all
from accdeploy.fit import DeploymentHistory, FitConfig, FitResult, fit
from accdeploy.acquire import AcquireConfig, Selection, select_next
from accdeploy.world import Exact, MonteCarlo, RiskTable, WorldConfig, generate_world, observe
from accdeploy.deploy import RunConfig, RunResult, run
from accdeploy.bench import BenchConfig, BenchSummary, replicate, summarize

__all__ = [
    "AcquireConfig", "BenchConfig", "BenchSummary", "DeploymentHistory", "Environment",
    "EnvironmentSpace", "Exact", "FitConfig", "FitResult", "IntensityModel", "MonteCarlo",
    "RiskTable", "RunConfig", "RunResult", "Selection", "Theta", "TimeGrid", "WorldConfig",
    "enumerate_environments", "fit", "generate_world", "observe", "predict", "predict_all",
    "replicate", "run", "select_next", "summarize", "time_group_of",
]
__version__ = "0.1.0"
