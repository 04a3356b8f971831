import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accdeploy.env import Environment, EnvironmentSpace
from accdeploy.fit import (
    DeploymentHistory,
    FitConfig,
    avg_uncertainty,
    fit,
    initial_theta,
    spatial_substep,
    temporal_substep,
)
from accdeploy.surrogate import IntensityModel, Theta, predict_all

from oracles import brute_force_fit, exact_instance


def history_from(cells, values):
    return DeploymentHistory((Environment(c + 1, k), y) for (c, k), y in zip(cells, values))


def test_constant_data():
    space = EnvironmentSpace.default(3, 4)
    h = DeploymentHistory([(Environment(1, 1), 0.004), (Environment(3, 2), 0.004), (Environment(2, 4), 0.004)])
    res = fit(h, space)
    np.testing.assert_allclose(res.theta.theta1, 1.0, atol=1e-12)
    np.testing.assert_allclose(res.theta.lambdas, 0.0, atol=1e-15)
    assert res.theta.theta2_0 == pytest.approx(0.004, abs=1e-15)
    assert res.residual_z <= 1e-15


def test_single_observation():
    space = EnvironmentSpace.default(1, 8)
    res = fit(DeploymentHistory([(Environment(1, 1), 0.005)]), space)
    assert res.theta.theta2_0 == pytest.approx(0.005, abs=1e-15)
    assert res.residual_z <= 1e-15
    assert res.avg_uncertainty * res.n == pytest.approx(res.residual_z)


def test_exact_4x4_recovery():
    space = EnvironmentSpace.default(4, 4)
    *_, cells, values, truth = exact_instance(np.random.default_rng(3), 4, 4)
    res = fit(history_from(cells, values), space)
    assert res.residual_z <= 1e-9
    np.testing.assert_allclose(predict_all(IntensityModel(res.theta, space.grid), space), truth, atol=1e-6)


@pytest.mark.parametrize("m1,m2", [(2, 2), (4, 4)])
def test_oracle_equivalence_exact(m1, m2):
    rng = np.random.default_rng(100 + m1)
    space = EnvironmentSpace.default(m1, m2)
    for _ in range(25):
        *_, widths, cells, values, truth = exact_instance(rng, m1, m2, extra=int(rng.integers(0, 6)))
        res = fit(history_from(cells, values), space)
        r_oracle, pred_oracle = brute_force_fit(cells, values, (m1, m2), widths, grid_points=41 if m1 == 2 else 9)
        assert abs(res.residual_z - r_oracle) <= 1e-8
        pred = predict_all(IntensityModel(res.theta, space.grid), space)
        np.testing.assert_allclose(pred, truth, atol=1e-6)
        np.testing.assert_allclose(pred_oracle, truth, atol=1e-6)


def test_oracle_equivalence_noisy_2x2():
    # Off-model data: the residual is positive, so this checks the ALS optimum is global.
    rng = np.random.default_rng(7)
    space = EnvironmentSpace.default(2, 2)
    for _ in range(20):
        *_, widths, cells, values, _truth = exact_instance(rng, 2, 2, extra=3)
        values = np.clip(values * np.exp(rng.normal(0, 0.4, values.size)), 0, 1)
        res = fit(history_from(cells, values), space)
        r_oracle, _ = brute_force_fit(cells, values, (2, 2), widths, grid_points=201)
        assert res.residual_z <= r_oracle + 1e-8
        assert res.residual_z == pytest.approx(r_oracle, abs=1e-8)


def random_history(rng, space, n):
    h = DeploymentHistory()
    for _ in range(n):
        h.append(space.env_at(int(rng.integers(space.size))), float(rng.uniform(0, 0.02)))
    return h


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 80))
def test_fit_invariants(seed, n):
    rng = np.random.default_rng(seed)
    space = EnvironmentSpace.default(5, 4)
    res = fit(random_history(rng, space, n), space, FitConfig(seed=seed))
    assert abs(res.theta.theta1.mean() - 1.0) <= 1e-12
    assert res.residual_z <= res.init_residual + 1e-15
    assert res.avg_uncertainty * n == pytest.approx(res.residual_z, rel=1e-12, abs=1e-300)
    trace = np.array(res.trace)
    assert np.all(np.diff(trace) <= 1e-12 * max(trace[0], 1e-300))


def test_scaled_truth_same_residual():
    rng = np.random.default_rng(11)
    space = EnvironmentSpace.default(3, 4)
    cells = [space.env_at(int(i)) for i in rng.integers(0, space.size, 40)]
    theta = Theta(rng.uniform(0.5, 2, 3), 0.004, rng.normal(0, 2e-4, 3))
    s = 3.7
    scaled = Theta(theta.theta1 * s, theta.theta2_0 / s, theta.lambdas / s)
    noise = rng.normal(0, 5e-4, len(cells))

    def residual(th):
        table = IntensityModel(th, space.grid).table()
        h = DeploymentHistory((e, float(np.clip(table[e.e1 - 1, e.e2 - 1] + d, 0, 1))) for e, d in zip(cells, noise))
        return fit(h, space).residual_z

    assert residual(theta) == pytest.approx(residual(scaled), abs=1e-12)


def test_duplicates_weight_the_fit():
    space = EnvironmentSpace.default(1, 2)
    once = DeploymentHistory([(Environment(1, 1), 0.01), (Environment(1, 1), 0.03)])
    res = fit(once, space)
    assert res.theta.theta2_0 == pytest.approx(0.02)
    assert res.residual_z == pytest.approx(np.sqrt(2) * 0.01)


def test_warm_start_fills_unobserved():
    space = EnvironmentSpace.default(3, 2)
    warm = Theta([0.5, 1.0, 1.5], 0.004, [1e-4])
    h = DeploymentHistory([(Environment(1, 1), 0.002), (Environment(2, 1), 0.004), (Environment(2, 2), 0.0064)])
    res = fit(h, space, FitConfig(restarts=0), warm_start=warm)
    assert res.start_index == 0
    assert res.residual_z <= 1e-15
    # cluster 3 is never observed: its multiplier keeps the warm value (after normalization)
    t1 = res.theta.theta1
    assert t1[2] / t1[1] == pytest.approx(1.5, rel=1e-9)


def test_errors():
    space = EnvironmentSpace.default(2, 2)
    with pytest.raises(ValueError):
        fit(DeploymentHistory(), space)
    with pytest.raises(ValueError):
        DeploymentHistory([(Environment(1, 1), float("nan"))])
    with pytest.raises(ValueError):
        DeploymentHistory([(Environment(1, 1), 1.5)])
    with pytest.raises(ValueError):
        fit(DeploymentHistory([(Environment(3, 1), 0.1)]), space)
    with pytest.raises(ValueError):
        FitConfig(max_als_rounds=0)


def test_temporal_substep_constant():
    space = EnvironmentSpace.default(2, 4)
    h = DeploymentHistory([(Environment(1, 1), 0.003), (Environment(2, 3), 0.003)])
    base, lam = temporal_substep(h, np.ones(2), space)
    assert base == pytest.approx(0.003)
    np.testing.assert_allclose(lam, 0.0, atol=1e-15)


def test_temporal_substep_offset():
    # groups 1 and 2 on one cluster, offset d: base = y1, lambda_1 * w_1 = d
    space = EnvironmentSpace.default(1, 2)
    d = 0.0024
    h = DeploymentHistory([(Environment(1, 1), 0.001), (Environment(1, 2), 0.001 + d)])
    base, lam = temporal_substep(h, np.ones(1), space)
    assert base == pytest.approx(0.001, abs=1e-15)
    assert lam[0] * 12.0 == pytest.approx(d, abs=1e-15)


def test_temporal_substep_min_norm():
    # only group 1 observed: lambdas are unconstrained and take the minimum-norm value
    space = EnvironmentSpace.default(1, 4)
    h = DeploymentHistory([(Environment(1, 1), 0.002)])
    base, lam = temporal_substep(h, np.ones(1), space)
    assert base == pytest.approx(0.002)
    np.testing.assert_array_equal(lam, 0.0)
    ref = Theta([1.0], 0.0, [1e-4, 2e-4, 3e-4])
    base, lam = temporal_substep(h, np.ones(1), space, reference=ref)
    np.testing.assert_allclose(lam, [1e-4, 2e-4, 3e-4])


def test_spatial_substep_examples(caplog):
    space = EnvironmentSpace.default(3, 2)
    # temporal levels: group 1 -> 0.002, group 2 -> 0.002 + 12 * lam
    h = DeploymentHistory([(Environment(1, 1), 0.004), (Environment(2, 1), 0.0)])
    t1 = spatial_substep(h, (0.002, [0.0]), space, previous=[9.0, 9.0, 7.0])
    assert t1[0] == pytest.approx(2.0)
    assert t1[1] == 0.0
    assert t1[2] == 7.0  # unobserved keeps previous

    # negative closed form is projected to zero
    t1 = spatial_substep(DeploymentHistory([(Environment(1, 2), 0.001)]), (0.002, [-0.0005]), space)
    assert t1[0] == 0.0

    # zero temporal level for an observed cluster: unchanged and flagged
    with caplog.at_level(logging.WARNING):
        t1 = spatial_substep(DeploymentHistory([(Environment(1, 1), 0.001)]), (0.0, [0.0]), space, previous=[3, 1, 1])
    assert t1[0] == 3.0
    assert "unchanged" in caplog.text


def test_initial_theta():
    space = EnvironmentSpace.default(2, 2)
    th = initial_theta(DeploymentHistory([(Environment(1, 1), 0.002), (Environment(2, 2), 0.004)]), space)
    assert th == Theta([1, 1], 0.003, [0.0])


@pytest.mark.parametrize(
    "z,n,expected",
    [(0.1, 100, 0.001), (0.0, 7, 0.0), (5.94e-2, 100, 5.94e-4)],
)
def test_avg_uncertainty(z, n, expected):
    assert avg_uncertainty(z, n) == pytest.approx(expected, rel=1e-12)


def test_avg_uncertainty_rejects_zero():
    with pytest.raises(ValueError):
        avg_uncertainty(0.1, 0)


def test_history_latest():
    space = EnvironmentSpace.default(2, 2)
    h = DeploymentHistory([(Environment(1, 1), 0.1), (Environment(2, 2), 0.2), (Environment(1, 1), 0.3)])
    seen, last = h.latest(space)
    np.testing.assert_array_equal(seen, [True, False, False, True])
    np.testing.assert_array_equal(last, [0.3, 0, 0, 0.2])
    assert len(h) == 3 and h[-1] == (Environment(1, 1), 0.3)
    for i in range(200):
        h.append(Environment(1, 2), 0.0)
    assert len(h.copy()) == 203
