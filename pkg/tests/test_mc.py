import numpy as np
import pytest

from stochreach import (
    CaptureBox,
    ExponentialLaw,
    GaussianLaw,
    GridSpec,
    LtiSystem,
    UniformLaw,
    empirical_capture,
    empirical_density_grid,
    gaussian_fsrpd,
    simulate,
    simulate_all,
)
from stochreach.errors import ShapeError, ValidationError
from stochreach.mc import CHUNK, stream

from conftest import PM_MEAN, PM_SIGMA


def test_no_input_gives_deterministic_cloud():
    A = np.array([[1.0, 0.1], [0.0, 0.9]])
    sys = LtiSystem(A, np.zeros((2, 2)), 5)
    cloud = simulate(sys, GaussianLaw([0, 0], np.eye(2)), [1.0, 2.0], 4, 100, seed=1)
    expected = np.linalg.matrix_power(A, 4) @ [1.0, 2.0]
    np.testing.assert_allclose(cloud.particles, np.tile(expected, (100, 1)), atol=1e-14)


def test_point_mass_sample_mean(pm_problem):
    p = pm_problem
    cloud = simulate(p.system, p.law, p.x0, 5, 500_000, seed=0)
    np.testing.assert_allclose(cloud.position_samples.mean(axis=0), [-1.7, 0.3], atol=0.01)


def test_particles_are_trajectory_endpoints(di_problem):
    # rebuild each endpoint from the documented stream keys: x = A^tau x0 + C_tau W
    p = di_problem
    tau, N = 3, 10
    cloud = simulate(p.system, p.law, p.x0, tau, N, seed=42)
    A, B = p.system.A, p.system.B
    expected = np.tile(np.linalg.matrix_power(A, tau) @ p.x0, (N, 1))
    for t in range(tau):
        w = p.law.sample(stream(42, 0, t), N)
        expected += w @ (np.linalg.matrix_power(A, tau - 1 - t) @ B).T
    np.testing.assert_allclose(cloud.particles, expected, atol=1e-12)


def test_exponential_draw_means():
    law = ExponentialLaw([0.25, 0.45])
    s = law.sample(stream(0, 0, 0), 500_000)
    np.testing.assert_allclose(s.mean(axis=0), [4.0, 1 / 0.45], rtol=0.01)


def test_seed_determinism_and_sensitivity(pm_problem):
    p = pm_problem
    a = simulate(p.system, p.law, p.x0, 3, 1000, seed=5)
    b = simulate(p.system, p.law, p.x0, 3, 1000, seed=5)
    c = simulate(p.system, p.law, p.x0, 3, 1000, seed=6)
    assert np.array_equal(a.particles, b.particles)
    assert not np.array_equal(a.particles, c.particles)


def test_prefix_consistency_across_horizons(pm_problem):
    p = pm_problem
    clouds = simulate_all(p.system, p.law, p.x0, 6, 500, seed=3)
    assert [c.tau for c in clouds] == list(range(1, 7))
    short = simulate(p.system, p.law, p.x0, 4, 500, seed=3)
    assert np.array_equal(clouds[3].particles, short.particles)


def test_chunks_do_not_depend_on_total_count(pm_problem):
    # the first CHUNK particles are the same whatever N is
    p = pm_problem
    small = simulate(p.system, p.law, p.x0, 2, CHUNK, seed=9)
    large = simulate(p.system, p.law, p.x0, 2, CHUNK + 100, seed=9)
    assert np.array_equal(small.particles, large.particles[:CHUNK])


def test_simulate_validation(pm_problem):
    p = pm_problem
    with pytest.raises(ValidationError):
        simulate(p.system, p.law, p.x0, 2, 0)
    with pytest.raises(ValidationError):
        simulate(p.system, p.law, p.x0, 0, 10)
    with pytest.raises(ShapeError):
        simulate(p.system, p.law, [0.0], 2, 10)
    with pytest.raises(ShapeError):
        simulate(p.system, ExponentialLaw([1.0]), p.x0, 2, 10)


# --- capture estimates -------------------------------------------------------

def test_capture_of_enclosing_box_is_one(pm_problem):
    p = pm_problem
    cloud = simulate(p.system, p.law, p.x0, 2, 1000, seed=0)
    pts = cloud.position_samples
    half = np.max(np.abs(pts)) + 1
    assert empirical_capture(cloud, CaptureBox([0.0, 0.0], half)) == (1.0, 0.0)


def test_point_mass_best_box(pm_problem):
    p = pm_problem
    cloud = simulate(p.system, p.law, p.x0, 5, 500_000, seed=1)
    est, se = empirical_capture(cloud, CaptureBox([-1.8, 0.0], 0.25))
    assert abs(est - 0.219) <= 3 * se
    assert se == pytest.approx(np.sqrt(est * (1 - est) / 500_000))


def test_double_integrator_best_box(di_problem):
    p = di_problem
    cloud = simulate(p.system, p.law, p.x0, 2, 500_000, seed=1)
    est, se = empirical_capture(cloud, CaptureBox([1.9, 0.55], 0.25))
    assert abs(est - 0.6044) <= 3 * se


# --- density histograms --------------------------------------------------------

def test_uniform_cloud_gives_flat_histogram():
    sys = LtiSystem(np.eye(2), np.eye(2), 1)
    cloud = simulate(sys, UniformLaw([0, 0], [1, 1]), [0, 0], 1, 400_000, seed=2)
    # cells centred on the grid points tile [0, 1]^2 exactly
    grid = GridSpec([0.05, 0.05], [0.95, 0.95], 10)
    dens = empirical_density_grid(cloud, grid)
    se = np.sqrt((1 / 100) / 400_000) / grid.cell_volume
    assert np.all(np.abs(dens - 1.0) < 5 * se)


def test_histogram_mode_near_closed_form_mode(pm_problem):
    p = pm_problem
    g = gaussian_fsrpd(p.system, PM_MEAN, PM_SIGMA, p.x0, 3)
    cloud = simulate(p.system, p.law, p.x0, 3, 500_000, seed=4)
    sd = np.sqrt(np.diag(g.cov))
    grid = GridSpec(g.mean - 4 * sd, g.mean + 4 * sd, 41)
    dens = empirical_density_grid(cloud, grid)
    idx = np.unravel_index(np.argmax(dens), dens.shape)
    mode_idx = np.round((g.mean - grid.lower) / grid.spacing)
    assert np.all(np.abs(np.array(idx) - mode_idx) <= 1)


def test_sparse_cloud_warns_on_low_coverage(pm_problem):
    p = pm_problem
    cloud = simulate(p.system, p.law, p.x0, 3, 100, seed=0)
    grid = GridSpec([-2.0, -0.5], [-1.5, 0.5], 11)
    with pytest.warns(RuntimeWarning, match="grid holds only"):
        empirical_density_grid(cloud, grid)


def test_histogram_grid_dimension_checked(pm_problem):
    p = pm_problem
    cloud = simulate(p.system, p.law, p.x0, 1, 10)
    with pytest.raises(ShapeError):
        empirical_density_grid(cloud, GridSpec([0.0], [1.0], 5))
