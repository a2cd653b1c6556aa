import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from restop.fixedpoint import random_monotone_function, solve
from restop.model import DelayLaw, reference_model
from restop.operators import DARK, LIT, PiTransform, crossing_z0
from restop.valuefn import ValueFunction, is_discretely_convex, is_nondecreasing, log_grid, weighted_distance

GRID = log_grid()


@pytest.fixture(scope="module")
def pi(ref_model):
    return PiTransform(ref_model)


def smooth(z):
    return np.sqrt(1.0 + z * z)


def pi_by_quad(model, fn, z):
    """Independent oracle: adaptive quadrature of the lognormal expectation
    for a Dirac(t0) delay."""
    c = model.constants
    t0 = model.delay.t0
    mean, sd = (c.z_drift - 0.5 * c.beta_sq) * t0, math.sqrt(c.beta_sq * t0)
    dens = lambda x: math.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    e = integrate.quad(lambda x: fn(z * math.exp(x)) * dens(x), mean - 12 * sd, mean + 12 * sd, epsabs=0, epsrel=1e-12, limit=200)[0]
    p = model.p
    return math.exp(-c.disc * t0) * (p * (1 + z * math.exp(c.z_drift * t0)) + (1 - p) * e)


def test_zero_function_closed_form(ref_model, pi):
    c = ref_model.constants
    z = np.array([1e-3, 0.1, 1.0, 10.0, 500.0])
    exact = 0.5 * math.exp(-c.disc) * (1 + z * math.exp(c.z_drift))
    assert np.allclose(pi.apply_pi(None, z), exact, rtol=1e-14)
    assert np.allclose(pi.apply_pi_derivative(None, z), 0.5 * ref_model.m1, rtol=1e-14)


@pytest.mark.parametrize(
    "delay", [DelayLaw.dirac(1.0), DelayLaw.exponential(2.0), DelayLaw.capped_exponential(2.0, 1.0), DelayLaw.mixture(0.3, DelayLaw.dirac(1.0))]
)
def test_affine_fixed_point(delay):
    m = reference_model(delay=delay)
    pi = PiTransform(m)
    c0, c1 = m.tail_coefficients()
    g = ValueFunction.affine(GRID, c0, c1)
    z = GRID[GRID >= 1e-2]
    assert np.max(np.abs(pi.apply_pi(g, z) - (c0 + c1 * z)) / (1 + z)) <= 1e-10
    assert np.allclose(pi.apply_pi_derivative(g, z[::50]), 0.5 * m.m1 + 0.5 * m.m1 * c1, rtol=1e-10)


def test_matches_quadrature_oracle(ref_model, pi):
    g = ValueFunction.from_callable(GRID, smooth, tail=(0.0, 1.0))
    for z in (1e-3, 0.05, 0.3, 1.0, 7.0, 100.0):
        assert pi.apply_pi(g, z) == pytest.approx(pi_by_quad(ref_model, smooth, z), rel=2e-6)


def test_hermite_agrees_with_linear(ref_model):
    g = ValueFunction.from_callable(GRID, smooth, tail=(0.0, 1.0))
    z = np.array([0.01, 0.1, 1.0, 10.0])
    lin = PiTransform(ref_model).apply_pi(g, z)
    her = PiTransform(ref_model, gh_nodes=128, method="hermite").apply_pi(g, z)
    assert np.allclose(lin, her, rtol=1e-5)


def test_value_at_zero_below_lit(ref_model, pi):
    g = ValueFunction.constant(GRID, 1.0)
    v = pi.apply_pi(g, GRID[0])
    assert v == pytest.approx(ref_model.m0, rel=1e-3)
    assert v < 1.0


def test_derivative_matches_finite_differences(ref_result, pi):
    rng = np.random.default_rng(3)
    z = np.exp(rng.uniform(math.log(1e-3), math.log(1e2), 50))
    h = 1e-5 * z
    fd = (pi.apply_pi(ref_result.u, z + h) - pi.apply_pi(ref_result.u, z - h)) / (2 * h)
    d = pi.apply_pi_derivative(ref_result.u, z)
    assert np.all(np.abs(fd - d) <= 1e-6 * np.abs(d))


def test_payoff_and_region(pi):
    g = ValueFunction.constant(GRID, 1.0)
    z0 = pi.crossing_z0(g, GRID[0], GRID[-1])
    assert pi.payoff(g, 0.5 * z0) == 1.0
    assert pi.payoff_region(g, 0.5 * z0) == LIT
    assert pi.payoff_region(g, 2 * z0) == DARK


def test_zero_delay_payoff_dominates(zero_delay_model):
    from restop.fixedpoint import solve

    res = solve(zero_delay_model)
    pi = PiTransform(zero_delay_model)
    G = pi.payoff(res.u, GRID)
    assert np.all(G >= 1.0)
    assert np.allclose(pi.apply_pi(res.u, GRID), 0.5 * (1 + GRID) + 0.5 * res.u.values, rtol=1e-13)


def test_affine_tail_of_payoff(ref_result, pi):
    c0, c1 = ref_result.u.tail
    z = np.array([2e2, 5e2, 1e3, 1e4])
    assert np.allclose(pi.payoff(ref_result.u, z), c0 + c1 * z, rtol=1e-6)


def test_crossing_cases(ref_model, zero_delay_model, pi):
    c = ref_model.constants
    z0 = pi.crossing_z0(None, 1e-4, 1e3)
    exact = (math.exp(c.disc) / 0.5 - 1) * math.exp(-c.z_drift)
    assert z0 == pytest.approx(exact, rel=1e-10)
    assert z0 == pytest.approx(1.1136229, rel=1e-7)
    g = ValueFunction.affine(GRID, *zero_delay_model.tail_coefficients())
    assert crossing_z0(PiTransform(zero_delay_model), g) is None
    assert crossing_z0(pi, ValueFunction.constant(GRID, 1.0)) > 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_monotone_and_convex_preservation(seed):
    m = reference_model()
    pi = PiTransform(m)
    g = random_monotone_function(GRID, np.random.default_rng(seed))
    assert is_nondecreasing(g) and is_discretely_convex(g)
    Pg = g.with_values(pi.apply_pi(g, GRID))
    assert is_nondecreasing(Pg, tol=1e-13)
    assert is_discretely_convex(Pg, rel_tol=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(seed, alpha, beta):
    m = reference_model()
    pi = PiTransform(m)
    rng = np.random.default_rng(seed)
    g, h = random_monotone_function(GRID, rng), random_monotone_function(GRID, rng)
    mix = ValueFunction(GRID, alpha * g.values + beta * h.values, tuple(alpha * np.array(g.tail) + beta * np.array(h.tail)))
    z = GRID[::97]
    p0 = pi.apply_pi(None, z)
    lhs = pi.apply_pi(mix, z) - p0
    rhs = alpha * (pi.apply_pi(g, z) - p0) + beta * (pi.apply_pi(h, z) - p0)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12 * (1 + z))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_contraction_precursor(seed):
    m = reference_model()
    pi = PiTransform(m)
    rng = np.random.default_rng(seed)
    g, h = random_monotone_function(GRID, rng), random_monotone_function(GRID, rng)
    d_in = weighted_distance(g, h)
    d_out = weighted_distance(g.with_values(pi.apply_pi(g, GRID)), h.with_values(pi.apply_pi(h, GRID)))
    assert d_out <= 0.5 * d_in * (1 + 1e-8)
