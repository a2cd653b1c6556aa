import math

import numpy as np
import pytest

from restop.errors import DegenerateExercise, DomainError
from restop.model import DelayLaw, reference_model
from restop.oracle import (
    BermudanConfig,
    _exercise_structure,
    _Transition,
    bermudan_solve,
    dt_sweep,
    hitting_time_check,
    observed_order,
    richardson,
    transition_kernel,
)
from restop.valuefn import ValueFunction, is_discretely_convex, is_nondecreasing

CFG = BermudanConfig(n_grid=1000)


def test_zero_delay_immediate_exercise(zero_delay_model):
    grid = CFG.grid()
    src = ValueFunction.affine(grid, 1.0, 1.0)
    r = bermudan_solve(zero_delay_model, src, CFG)
    assert r.a is None and r.b is None and r.sweeps == 1
    assert np.max(np.abs(r.w.values - (1 + grid)) / (1 + grid)) <= 1e-12
    full = bermudan_solve(zero_delay_model, cfg=CFG)
    assert full.a is None
    assert np.max(np.abs(full.w.values - (1 + grid)) / (1 + grid)) <= 1e-9


def test_lit_only_payoff(ref_model):
    grid = CFG.grid()
    r = bermudan_solve(ref_model, cfg=CFG, payoff=(np.ones(len(grid)), (1.0, 0.0)))
    assert r.a is None and np.all(r.w.values == 1.0)


def test_kernel_rows_sum_to_one(ref_model):
    grid = CFG.grid()
    tr = _Transition(ref_model, grid, 1e-3)
    rows = tr.row_sums()
    assert np.allclose(rows[50:-50], 1.0, atol=1e-12)


def test_kernel_reproduces_cubics():
    # cubic Lagrange weights integrate polynomials of degree three exactly
    h, mean, sd = 0.01, 0.0003, 0.03
    offs, w = transition_kernel(mean, sd, h)
    for k in range(4):
        exact = {0: 1.0, 1: mean, 2: mean**2 + sd**2, 3: mean**3 + 3 * mean * sd**2}[k]
        assert np.dot(w, (offs * h) ** k) == pytest.approx(exact, rel=1e-8, abs=1e-14)


def test_bermudan_value_shape(ref_model):
    r = bermudan_solve(ref_model, cfg=CFG)
    w = r.w
    assert is_nondecreasing(w, tol=1e-12)
    assert is_discretely_convex(w, rel_tol=1e-8)
    assert 0 < r.a < r.b
    assert r.a_mid == pytest.approx(r.a, rel=2 * (w.grid[1] / w.grid[0] - 1))


def test_sweep_order_is_half(ref_model):
    # a fine grid keeps the spatial error below the time-step error
    sw = dt_sweep(ref_model, cfg=BermudanConfig(n_grid=4000))
    assert 0.3 < sw.order_a < 0.8 and 0.3 < sw.order_b < 0.8
    errs = [abs(r.b - sw.b) for r in sw.results]
    assert errs[0] > errs[1] > errs[2]


def test_richardson_exact_on_model_data():
    dts = [4e-3, 2e-3, 1e-3]
    vals = [0.3 + 0.7 * math.sqrt(d) - 2.0 * d for d in dts]
    assert richardson(dts, vals) == pytest.approx(0.3, rel=1e-12)
    assert observed_order(dts, [0.3 + 0.7 * math.sqrt(d) for d in dts]) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(DomainError):
        richardson(dts[:2], vals[:2])


def test_exercise_structure_checks():
    assert _exercise_structure(np.array([False, True, True, False])) == (0, 3)
    assert _exercise_structure(np.zeros(4, bool)) == (None, None)
    with pytest.raises(DegenerateExercise):
        _exercise_structure(np.array([False, True, False, True, False]))
    with pytest.raises(DegenerateExercise):
        _exercise_structure(np.array([True, True, False]))


def test_hitting_at_start(ref_model):
    r = hitting_time_check(ref_model, 0.5, 0.5, n_paths=100, seed=1)
    assert r.estimate == 1.0 and r.closed_form == 1.0


@pytest.mark.parametrize("factor", [0.5, 2.0])
def test_hitting_closed_form(ref_model, factor):
    z0 = 0.1
    r = hitting_time_check(ref_model, factor * z0, z0, n_paths=100_000, seed=2)
    c = ref_model.constants
    q = c.q1 if factor < 1 else c.q2
    assert r.closed_form == pytest.approx(factor**q, rel=1e-14)
    assert abs(r.z_score) <= 3.0


def test_hitting_rejects_bad_input(ref_model):
    with pytest.raises(DomainError):
        hitting_time_check(ref_model, 0.0, 1.0)
