import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bisis.dynamics import (
    BiState,
    IntegrationError,
    IntegratorConfig,
    VirusParams,
    bisis_rhs,
    integrate,
    integrate_many,
    integrate_sis,
    sis_rhs,
    write_trajectory_csv,
)
from bisis.generators import complete_graph, random_connected_graph, star_graph

from .conftest import FAST, fixture_graph
from .oracles import lsoda_sis_equilibrium, scalar_bisis_field, star_sis_equilibrium


def test_params_tau_and_realization():
    p = VirusParams.from_tau(0.25, delta=4.0)
    assert (p.beta, p.delta, p.tau) == (1.0, 4.0, 0.25)
    with pytest.raises(ValueError):
        VirusParams(0.0, 1.0)
    with pytest.raises(ValueError):
        VirusParams(1.0, -1.0)


@pytest.mark.parametrize(
    "x, y",
    [([0.6], [0.5]), ([-0.1], [0.0]), ([0.2, 0.1], [0.1]), ([np.nan], [0.0])],
)
def test_state_validation(x, y):
    with pytest.raises(ValueError):
        BiState(np.array(x), np.array(y))


def test_state_accepts_rounding_noise_on_the_simplex_face():
    BiState(np.array([0.5 + 5e-13]), np.array([0.5]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_field_matches_scalar_sums(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    g_a = random_connected_graph(n, 0.5, rng)
    g_b = random_connected_graph(n, 0.5, rng)
    w = rng.dirichlet([1, 1, 1], size=n)
    b1, d1, b2, d2 = rng.uniform(0.1, 3.0, 4)
    dx, dy = bisis_rhs(BiState(w[:, 0], w[:, 1]), VirusParams(b1, d1), VirusParams(b2, d2), g_a, g_b)
    ox, oy = scalar_bisis_field(w[:, 0], w[:, 1], b1, d1, b2, d2, sorted(g_a.edges), sorted(g_b.edges))
    np.testing.assert_allclose(dx, ox, atol=1e-13)
    np.testing.assert_allclose(dy, oy, atol=1e-13)


def test_sis_field_is_bisis_without_second_virus():
    g = fixture_graph("corridor_a")
    x = np.linspace(0.1, 0.6, g.node_count)
    p = VirusParams(0.7, 1.3)
    dx, dy = bisis_rhs(BiState(x, np.zeros_like(x)), p, p, g, g)
    np.testing.assert_allclose(sis_rhs(x, p, g), dx)
    assert not dy.any()


def test_origin_converges_immediately():
    g = complete_graph(4)
    p = VirusParams.from_tau(1.0)
    res = integrate(BiState.zeros(4), p, p, g, g)
    assert res.converged and res.steps == 0 and res.elapsed == 0.0 and res.residual == 0.0


def test_integrate_sis_reaches_star_closed_form():
    g = star_graph(6)
    tau = 0.8
    hub, leaf = star_sis_equilibrium(tau, 6)
    res = integrate_sis(np.full(7, 0.3), VirusParams.from_tau(tau), g, IntegratorConfig(convergence_tol=1e-12))
    assert res.converged
    np.testing.assert_allclose(res.final.x, [hub] + [leaf] * 6, atol=1e-11)


def test_integrate_sis_matches_lsoda():
    g = fixture_graph("corridor_b")
    tau = 1.1
    res = integrate_sis(np.full(6, 0.5), VirusParams.from_tau(tau), g, IntegratorConfig(convergence_tol=1e-12))
    ref = lsoda_sis_equilibrium(tau, sorted(g.edges), 6)
    np.testing.assert_allclose(res.final.x, ref, atol=1e-9)


def test_time_scale_depends_on_beta_delta_but_limit_does_not():
    g = fixture_graph("corridor_a")
    x0 = np.full(6, 0.2)
    slow = integrate_sis(x0, VirusParams.from_tau(0.5, delta=1.0), g, IntegratorConfig(convergence_tol=1e-11))
    fast = integrate_sis(x0, VirusParams.from_tau(0.5, delta=4.0), g, IntegratorConfig(convergence_tol=1e-11))
    np.testing.assert_allclose(slow.final.x, fast.final.x, atol=1e-10)
    assert fast.elapsed < slow.elapsed / 2


def test_batch_results_match_single_runs():
    g_a, g_b = fixture_graph("corridor_a"), fixture_graph("corridor_b")
    p1, p2 = VirusParams.from_tau(1.7), VirusParams.from_tau(3.0)
    rng = np.random.default_rng(5)
    w = rng.dirichlet([1, 1, 1], size=(3, 6))
    starts = [BiState(w[k, :, 0], w[k, :, 1]) for k in range(3)]
    batch = integrate_many(starts, p1, p2, g_a, g_b, FAST)
    for s, r in zip(starts, batch):
        one = integrate(s, p1, p2, g_a, g_b, FAST)
        assert one.steps == r.steps
        np.testing.assert_array_equal(one.final.x, r.final.x)


def test_trajectory_stays_in_simplex_and_logs_samples():
    g_a, g_b = fixture_graph("corridor_a"), fixture_graph("corridor_b")
    cfg = IntegratorConfig(convergence_tol=1e-8, step_fraction=0.05, log_interval=0.5)
    res = integrate(BiState(np.full(6, 0.5), np.full(6, 0.5)), VirusParams.from_tau(1.7), VirusParams.from_tau(3.0),
                    g_a, g_b, cfg)
    times = [t for t, _, _ in res.trajectory]
    assert times[0] == 0.0 and times[-1] == pytest.approx(res.elapsed)
    assert np.all(np.diff(times) > 0)
    for _, x, y in res.trajectory:
        assert x.min() >= 0 and y.min() >= 0 and (x + y).max() <= 1 + 1e-12


def test_oversized_step_is_reported():
    g = complete_graph(5)
    p = VirusParams.from_tau(50.0)
    with pytest.raises(IntegrationError, match="smaller than dt"):
        integrate(BiState(np.full(5, 0.01), np.full(5, 0.01)), p, p, g, g, IntegratorConfig(step=1.0, max_time=10))


def test_not_converged_by_horizon():
    g = complete_graph(4)
    p = VirusParams.from_tau(1.0)
    res = integrate(BiState(np.full(4, 0.1), np.full(4, 0.1)), p, p, g, g, IntegratorConfig(max_time=0.5))
    assert not res.converged
    assert res.residual > 1e-10


def test_both_die_below_threshold():
    g = complete_graph(4)
    p = VirusParams.from_tau(0.3)
    res = integrate(BiState(np.full(4, 0.4), np.full(4, 0.4)), p, p, g, g, IntegratorConfig(convergence_tol=1e-12))
    assert res.converged and res.final.x.max() < 1e-11 and res.final.y.max() < 1e-11


def test_trajectory_csv_columns(tmp_path):
    traj = [(0.0, np.array([0.1, 0.2]), np.array([0.3, 0.4])), (0.5, np.array([0.15, 0.25]), np.array([0.3, 0.35]))]
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "x_0", "x_1", "y_0", "y_1"]
    assert [float(v) for v in rows[2]] == [0.5, 0.15, 0.25, 0.3, 0.35]
    with pytest.raises(ValueError):
        write_trajectory_csv([], path)


def test_dimension_mismatch_rejected():
    g = complete_graph(4)
    p = VirusParams.from_tau(1.0)
    with pytest.raises(ValueError, match="entries"):
        integrate(BiState.zeros(3), p, p, g, g)


@pytest.mark.parametrize("kwargs", [{"step": 0.0}, {"convergence_tol": -1.0}, {"log_interval": 0.0}])
def test_integrator_config_validation(kwargs):
    with pytest.raises(ValueError):
        IntegratorConfig(**kwargs)
