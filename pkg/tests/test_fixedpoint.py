import math

import numpy as np
import pytest

from restop.errors import MaxIterations
from restop.fbsolver import apply_gamma_tilde
from restop.fixedpoint import (
    SolverOptions,
    boundary_slopes,
    contraction_certificate,
    immediate_dark,
    random_monotone_function,
    solve,
    u_at_zero_check,
)
from restop.model import reference_model
from restop.operators import PiTransform
from restop.valuefn import ValueFunction, log_grid, weighted_distance


def test_zero_delay_closed_form(zero_delay_model):
    assert immediate_dark(zero_delay_model)
    res = solve(zero_delay_model)
    assert res.closed_form and res.a_star is None and res.b_star is None and res.z0 == 0.0
    z = res.u.grid
    assert np.max(np.abs(res.u.values - (1 + z)) / (1 + z)) <= 1e-12
    assert u_at_zero_check(res)["ok"]


def test_reference_structure(ref_result):
    r = ref_result
    assert 0 < r.a_star < r.z0 < r.b_star < math.inf
    assert r.residual <= 1e-9
    assert r.iterations <= r.iteration_bound() + 2


def test_empirical_contraction(ref_result):
    h = ref_result.history
    assert all(h[i + 1] <= 0.5 * h[i] * (1 + 1e-6) for i in range(len(h) - 1))


def test_reapplication_stability(ref_result):
    _, cand, _ = apply_gamma_tilde(ref_result.pi, ref_result.u, (ref_result.a_star, ref_result.b_star))
    assert cand.a == pytest.approx(ref_result.a_star, rel=1e-6)
    assert cand.b == pytest.approx(ref_result.b_star, rel=1e-6)


def test_value_bounds(ref_result):
    u, grid = ref_result.u.values, ref_result.u.grid
    G = np.maximum(1.0, ref_result.pi.apply_pi(ref_result.u, grid))
    scale = 1 + grid
    assert np.all(u >= 1.0 - 1e-12)
    assert np.all(u - G >= -1e-8 * scale)
    outside = (grid <= ref_result.a_star) | (grid >= ref_result.b_star)
    assert np.max(np.abs(u - G)[outside] / scale[outside]) <= 1e-9
    inside = (grid > ref_result.a_star * 1.001) & (grid < ref_result.b_star * 0.999)
    assert np.all(u[inside] > G[inside])


def test_monotone_iterates(ref_model):
    grid = log_grid()
    pi = PiTransform(ref_model)
    g = ValueFunction.constant(grid, 1.0)
    guess = None
    for _ in range(8):
        g_next, cand, _ = apply_gamma_tilde(pi, g, guess)
        assert np.all(g_next.values >= g.values - 1e-9 * (1 + grid))
        g, guess = g_next, (cand.a, cand.b)


def test_b_star_decreases_in_p():
    b = [solve(reference_model(p=p)).b_star for p in (0.3, 0.5, 0.7, 0.9)]
    assert all(x > y for x, y in zip(b, b[1:]))


def test_u_at_zero(ref_result, ref_model):
    rep = u_at_zero_check(ref_result)
    assert rep["ok"]
    assert rep["pi_u_zmin"] < 1.0
    assert rep["pi_u_zmin"] == pytest.approx(ref_model.m0, rel=1e-3)


def test_z_min_sweep(ref_model, ref_result):
    opts = SolverOptions(z_min=5e-5, n_grid=int(round(2000 * math.log(1e3 / 5e-5) / math.log(1e7))) + 1)
    r2 = solve(ref_model, opts)
    assert r2.a_star == pytest.approx(ref_result.a_star, rel=1e-6)
    assert r2.b_star == pytest.approx(ref_result.b_star, rel=1e-6)
    assert float(r2.u.eval(1e-4)) == pytest.approx(1.0, abs=1e-6)


def test_smooth_fit(ref_result):
    s = boundary_slopes(ref_result)
    assert abs(s["a_right"]) <= 1e-6
    assert abs(s["b_left"] - s["b_right"]) <= 1e-6 * (1 + ref_result.b_star)
    assert s["b_right"] == pytest.approx(s["b_right_fd"], rel=1e-6)
    assert abs(s["value_gap_b"]) <= 1e-8 * (1 + ref_result.b_star)


def test_certificate_small(ref_model):
    rep = contraction_certificate(ref_model, trials=8, seed=5)
    assert rep["max_ratio"] <= rep["bound"]


def test_shift_along_weight(ref_model):
    grid = log_grid()
    pi = PiTransform(ref_model)
    g = random_monotone_function(grid, np.random.default_rng(4))
    eps = 0.01
    h = ValueFunction(grid, g.values + eps * (1 + grid), (g.tail[0] + eps, g.tail[1] + eps), left_slope=eps)
    ratio = weighted_distance(apply_gamma_tilde(pi, g)[0], apply_gamma_tilde(pi, h)[0]) / weighted_distance(g, h)
    assert 0.4 < ratio <= 0.5 * (1 + 1e-6)


def test_max_iterations(ref_model):
    with pytest.raises(MaxIterations) as exc:
        solve(ref_model, SolverOptions(max_iter=3))
    assert len(exc.value.history) == 3


def test_result_json(ref_result):
    d = ref_result.to_json()
    assert len(d["b_star_sequence"]) == ref_result.iterations
    assert d["b_star_sequence"][-1] == ref_result.b_star
