import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from stochreach import (
    DiracLaw,
    ExponentialLaw,
    GaussianLaw,
    GridSpec,
    LtiSystem,
    Polytope,
    QuadConfig,
    UniformLaw,
    concat_matrix,
    density_at,
    double_integrator,
    fsr_set,
    fsrpd,
    gaussian_fsrpd,
    iterative_fsrpd_oracle,
    point_mass,
    prune_by_support,
    simulate,
    state_cf,
)
from stochreach.errors import AccuracyError, ShapeError, UnsupportedError
from stochreach.fsr import default_grid, density_result
from stochreach.randvec import gaussian_cf

from conftest import DI_RATES, DI_X0, PM_MEAN, PM_SIGMA, PM_X0, make_di_problem, make_pm_problem


def exp_cf(rates, a):
    rates = np.asarray(rates, dtype=float)
    return np.prod(rates / (rates - 1j * np.asarray(a)), axis=-1)


# --- characteristic function of the state ----------------------------------

def test_state_cf_at_zero_is_one(pm_problem, di_problem):
    for p in (pm_problem, di_problem):
        for tau in (1, 3):
            f = state_cf(p.system, p.law, p.x0, tau)
            assert f.cf(np.zeros(p.system.n)) == 1


def test_state_cf_without_input_is_deterministic(rng):
    A = np.array([[0.9, 0.2], [-0.1, 1.1]])
    sys = LtiSystem(A, np.zeros((2, 2)), 5)
    x0 = np.array([1.0, -2.0])
    f = state_cf(sys, GaussianLaw([0.0, 0.0], np.eye(2)), x0, 4)
    a = rng.standard_normal((10, 2))
    traj = np.linalg.matrix_power(A, 4) @ x0
    np.testing.assert_allclose(f.cf(a), np.exp(1j * a @ traj), atol=1e-14)


def test_state_cf_one_step_gaussian_pushforward(rng):
    B = np.array([[1.0, 0.5], [0.0, 2.0]])
    sys = LtiSystem(np.eye(2), B, 3)
    x0 = np.array([0.3, 0.4])
    f = state_cf(sys, GaussianLaw(PM_MEAN, PM_SIGMA), x0, 1)
    a = rng.standard_normal((10, 2))
    np.testing.assert_allclose(f.cf(a), gaussian_cf(x0 + B @ PM_MEAN, B @ PM_SIGMA @ B.T, a), atol=1e-14)


def test_state_cf_double_integrator_two_steps(rng):
    Ts = 0.2
    A = np.array([[1, Ts, 0, 0], [0, 1, 0, 0], [0, 0, 1, Ts], [0, 0, 0, 1]])
    B = np.array([[Ts**2 / 2, 0], [Ts, 0], [0, Ts**2 / 2], [0, Ts]])
    f = state_cf(double_integrator(Ts, 9), ExponentialLaw(DI_RATES), DI_X0, 2)
    beta = rng.standard_normal((20, 4))
    for b in beta:
        want = np.exp(1j * b @ (A @ A @ DI_X0)) * exp_cf(DI_RATES, B.T @ A.T @ b) * exp_cf(DI_RATES, B.T @ b)
        assert abs(f.cf(b) - want) < 1e-13


def test_state_cf_matches_gaussian_closed_form(rng, pm_problem):
    p = pm_problem
    for tau in (1, 4, 11):
        f = state_cf(p.system, p.law, p.x0, tau)
        g = gaussian_fsrpd(p.system, PM_MEAN, PM_SIGMA, p.x0, tau)
        a = rng.standard_normal((50, 2))
        assert np.max(np.abs(f.cf(a) - g.cf(a))) < 1e-10


def test_state_cf_rejects_bad_inputs(pm_problem):
    p = pm_problem
    with pytest.raises(ShapeError):
        state_cf(p.system, p.law, [0.0, 0.0, 0.0], 1)
    with pytest.raises(ShapeError):
        state_cf(p.system, ExponentialLaw([1.0]), p.x0, 1)


# --- Gaussian closed form ----------------------------------------------------

def test_gaussian_one_step_identity():
    sys = LtiSystem(np.eye(2), np.eye(2), 3)
    g = gaussian_fsrpd(sys, PM_MEAN, PM_SIGMA, [1.0, 1.0], 1)
    np.testing.assert_allclose(g.mean, [2.3, 1.3])
    np.testing.assert_allclose(g.cov, PM_SIGMA)


def test_gaussian_mean_at_best_step(pm_problem):
    g = gaussian_fsrpd(pm_problem.system, PM_MEAN, PM_SIGMA, PM_X0, 5)
    np.testing.assert_allclose(g.mean, [-1.7, 0.3], atol=1e-12)


def test_gaussian_covariance_against_simulation(pm_problem):
    p = pm_problem
    g = gaussian_fsrpd(p.system, PM_MEAN, PM_SIGMA, p.x0, 3)
    cloud = simulate(p.system, p.law, p.x0, 3, 1_000_000, seed=7)
    sample = np.cov(cloud.particles.T)
    np.testing.assert_allclose(sample, g.cov, rtol=0.02)


def test_gaussian_density_at_mean_is_peak(pm_problem):
    g = fsrpd(pm_problem.system, pm_problem.law, PM_X0, 6)
    peak = 1 / (2 * math.pi * math.sqrt(np.linalg.det(g.cov)))
    assert density_at(g, g.mean) == pytest.approx(peak, rel=1e-12)


def test_degenerate_gaussian_density_off_support_is_zero():
    sys = double_integrator(0.2, 5)
    law = GaussianLaw([0.0, 0.0], np.eye(2))
    g = fsrpd(sys, law, np.zeros(4), 1)
    assert g.degenerate and g.rank == 2
    on = sys.B @ np.array([0.3, -0.4])
    assert density_at(g, on) > 0
    assert density_at(g, on + np.array([0.0, 1.0, 0.0, 0.0])) == 0.0


# --- density inversion -------------------------------------------------------

def test_density_standard_normal_inversion():
    sys = LtiSystem(np.eye(1), np.eye(1), 1, position_indices=(0,))
    f = state_cf(sys, GaussianLaw([0.0], [[1.0]]), [0.0], 1)
    assert abs(density_at(f, [0.0]) - 1 / math.sqrt(2 * math.pi)) < 1e-6


def test_density_cf_route_matches_closed_form(pm_problem):
    p = pm_problem
    f = state_cf(p.system, p.law, p.x0, 3)
    g = gaussian_fsrpd(p.system, PM_MEAN, PM_SIGMA, p.x0, 3)
    for y in (g.mean, g.mean + [0.2, -0.3], g.mean + [-0.5, 0.4]):
        assert abs(density_at(f, y) - float(g.pdf(y))) < 1e-5


def test_density_exponential_position_marginal_against_histogram(di_problem):
    p = di_problem
    tau, h = 3, 0.05
    pos = state_cf(p.system, p.law, p.x0, tau).position_marginal()
    cloud = simulate(p.system, p.law, p.x0, tau, 500_000, seed=3)
    xy = cloud.position_samples
    center = np.median(xy, axis=0)
    inside = np.all(np.abs(xy - center) <= h / 2, axis=1)
    frac = inside.mean()
    est = frac / h**2
    se = math.sqrt(frac * (1 - frac) / cloud.N) / h**2
    r = density_result(pos, center, QuadConfig(tol=1e-6))
    assert abs(r.value - est) <= 3 * se + r.residual


def test_density_needs_square_integrable_law():
    sys = double_integrator(0.2, 5)
    f = state_cf(sys, ExponentialLaw(DI_RATES), DI_X0, 1)
    assert not f.square_integrable
    with pytest.raises(UnsupportedError):
        density_at(f, DI_X0)
    # the planar position marginal has full-rank mixing even at one step
    assert f.position_marginal().square_integrable


def test_density_rejects_wrong_dimension(pm_problem):
    g = fsrpd(pm_problem.system, pm_problem.law, PM_X0, 1)
    with pytest.raises(ShapeError):
        density_at(g, [0.0, 0.0, 0.0])


# --- log-concavity -----------------------------------------------------------

def _log_concavity_gaps(f, points, rng, q=None):
    gaps = []
    for _ in range(len(points) // 2):
        i, j = rng.choice(len(points), 2, replace=False)
        a, b = points[i], points[j]
        th = rng.uniform()
        vals = [density_result(f, y, q) if q else None for y in (a, b, th * a + (1 - th) * b)]
        if q is None:
            pa, pb, pm = (float(f.pdf(y)) for y in (a, b, th * a + (1 - th) * b))
            slack = 0.0
        else:
            pa, pb, pm = (v.value for v in vals)
            slack = sum(v.residual for v in vals)
        gaps.append(pm - pa**th * pb ** (1 - th) + slack)
    return np.array(gaps)


def test_gaussian_density_is_log_concave(rng, pm_problem):
    p = pm_problem
    g = fsrpd(p.system, p.law, p.x0, 8)
    pts = g.mean + rng.standard_normal((200, 2)) * 2.0
    assert np.all(_log_concavity_gaps(g, pts, rng) >= -1e-9)


def test_exponential_position_density_is_log_concave(rng, di_problem):
    p = di_problem
    pos = state_cf(p.system, p.law, p.x0, 3).position_marginal()
    pts = simulate(p.system, p.law, p.x0, 3, 200, seed=11).position_samples
    gaps = _log_concavity_gaps(pos, pts, rng, QuadConfig(tol=1e-6))
    assert np.all(gaps >= -1e-9)


# --- FSR sets ----------------------------------------------------------------

def test_gaussian_fsr_set_is_whole_space(pm_problem):
    p = pm_problem
    for tau in (1, 5, 20):
        s = fsr_set(p.system, p.law, p.x0, tau)
        assert s.kind == "whole_space" and s.is_convex
        assert not prune_by_support(s, Polytope.from_box([100, 100], [101, 101]))


def test_exponential_fsr_set_is_shifted_orthant(di_problem):
    p = di_problem
    for tau in (2, 5, 9):
        s = fsr_set(p.system, p.law, p.x0, tau)
        assert s.kind == "cone"
        np.testing.assert_allclose(s.generators, np.eye(4))
        np.testing.assert_allclose(s.offset, np.linalg.matrix_power(p.system.A, tau) @ p.x0)


def test_exponential_fsr_set_one_step_cone(di_problem):
    p = di_problem
    s = fsr_set(p.system, p.law, p.x0, 1)
    np.testing.assert_allclose(s.generators, p.system.B)
    np.testing.assert_allclose(s.offset, p.system.A @ p.x0)


def test_deterministic_system_fsr_set_is_point():
    sys = LtiSystem(np.eye(2), np.zeros((2, 2)), 3)
    s = fsr_set(sys, ExponentialLaw([1.0, 1.0]), [1.0, 2.0], 3)
    assert s.kind == "polytope"
    assert s.contains([1.0, 2.0]) and not s.contains([1.0, 2.1])
    d = fsr_set(point_mass(0.2, 3), DiracLaw([1.0, 0.0]), [0.0, 0.0], 2)
    assert d.contains([0.4, 0.0]) and not d.contains([0.4, 0.01])


def test_box_support_fsr_set_is_interval_hull(rng):
    sys = LtiSystem(np.array([[1.0, 0.3], [0.0, 0.8]]), np.eye(2), 4)
    law = UniformLaw([-1.0, 0.0], [1.0, 0.5])
    s = fsr_set(sys, law, [0.5, 0.5], 3)
    assert s.kind == "polytope"
    cloud = simulate(sys, law, [0.5, 0.5], 3, 5000, seed=1)
    assert all(s.contains(x) for x in cloud.particles[:500])


def test_prune_examples(di_problem):
    p = di_problem
    one = fsr_set(p.system, p.law, p.x0, 1)
    y_floor = one.offset[2]
    below = Polytope.from_box([-10, -10, y_floor - 1.0, -10], [10, 10, y_floor - 0.5, 10])
    assert prune_by_support(one, below)
    origin_cone = fsr_set(LtiSystem(np.eye(2), np.eye(2), 2), ExponentialLaw([1.0, 1.0]), [0, 0], 2)
    assert not prune_by_support(origin_cone, Polytope.from_box([1, 1], [2, 2]))
    assert prune_by_support(origin_cone, Polytope.from_box([-2, 1], [-1, 2]))


def test_unsupported_support_class():
    law = ExponentialLaw([1.0, 1.0])
    law.support = SimpleNamespace(kind="halfplane", lower=None, upper=None)
    with pytest.raises(UnsupportedError):
        fsr_set(point_mass(0.2, 3), law, [0, 0], 1)


def _in_next_step_set(prev, sys, law, x):
    """LP: x = A (offset + G z) + B w with z >= 0 and w in the law's support."""
    G = prev.generators
    nz, p = G.shape[1], sys.p
    lower = law.support.lower if law.support.lower is not None else np.full(p, -np.inf)
    bounds = [(0, None)] * nz + [(lo if np.isfinite(lo) else None, None) for lo in lower]
    res = linprog(np.zeros(nz + p), A_eq=np.hstack([sys.A @ G, sys.B]),
                  b_eq=x - sys.A @ prev.offset, bounds=bounds)
    return res.status == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_fsr_set_obeys_one_step_recursion(tau, seed):
    p = make_di_problem()
    rng = np.random.default_rng(seed)
    cur = fsr_set(p.system, p.law, p.x0, tau)
    prev = fsr_set(p.system, p.law, p.x0, tau - 1)
    # points sampled from the true support must lie in both the set and its recursion bound
    cloud = simulate(p.system, p.law, p.x0, tau, 20, seed=seed % 1000)
    for x in cloud.particles:
        assert cur.contains(x)
        assert _in_next_step_set(prev, p.system, p.law, x)
    # points of the over-approximation stay consistent with the recursion when C >= 0 has full rank
    z = rng.exponential(size=(5, cur.generators.shape[1]))
    for x in cur.offset + z @ cur.generators.T:
        assert cur.contains(x)


def test_particles_lie_in_fsr_set(di_problem):
    p = di_problem
    for tau in (1, 2, 6):
        s = fsr_set(p.system, p.law, p.x0, tau)
        cloud = simulate(p.system, p.law, p.x0, tau, 200, seed=tau)
        assert all(s.contains(x) for x in cloud.particles)


# --- iterative oracle --------------------------------------------------------

@pytest.fixture(scope="module")
def pm_oracle():
    p = make_pm_problem()
    out = {}
    for tau in (1, 4):
        grid = default_grid(p.system, p.law, p.x0, tau, 61)
        out[tau] = (grid, iterative_fsrpd_oracle(p.system, p.law, p.x0, tau, grid))
    return p, out


def test_oracle_one_step_is_sampled_kernel(pm_oracle):
    p, out = pm_oracle
    grid, res = out[1]
    g = gaussian_fsrpd(p.system, PM_MEAN, PM_SIGMA, p.x0, 1)
    np.testing.assert_allclose(res.density, g.pdf(grid.points()), atol=1e-12)


def test_oracle_four_steps_matches_closed_form(pm_oracle):
    p, out = pm_oracle
    grid, res = out[4]
    g = gaussian_fsrpd(p.system, PM_MEAN, PM_SIGMA, p.x0, 4)
    assert np.max(np.abs(res.density - g.pdf(grid.points()))) < 1e-3


def test_oracle_mass_conserved(pm_oracle):
    _, out = pm_oracle
    for _, res in out.values():
        assert all(0.99 <= m <= 1.01 for m in res.masses)


def test_oracle_rejects_singular_a():
    sys = LtiSystem(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2), 3)
    grid = GridSpec([-5, -5], [5, 5], 21)
    with pytest.raises(UnsupportedError):
        iterative_fsrpd_oracle(sys, GaussianLaw([0, 0], np.eye(2)), [0, 0], 2, grid)


def test_oracle_flags_too_narrow_grid(pm_problem):
    p = pm_problem
    g = gaussian_fsrpd(p.system, PM_MEAN, PM_SIGMA, p.x0, 3)
    grid = GridSpec(g.mean - 0.2, g.mean + 0.2, 21)
    with pytest.raises(AccuracyError):
        iterative_fsrpd_oracle(p.system, p.law, p.x0, 3, grid)


def test_grid_spec_validation():
    with pytest.raises(Exception):
        GridSpec([0, 0], [0, 1], 5)
    g = GridSpec([0, 0], [1, 2], (3, 5))
    np.testing.assert_allclose(g.spacing, [0.5, 0.5])
    assert g.cell_volume == pytest.approx(0.25)
    assert g.points().shape == (3, 5, 2)


def test_concat_matrix_shape(di_problem):
    C = concat_matrix(di_problem.system, 3)
    assert C.shape == (4, 6)
