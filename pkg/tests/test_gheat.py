import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbessel.core import BandError, VolatilityBand
from gbessel.gheat import (CFLError, DomainError, HeatProblem, classical_error, heat_solve,
                           decay_bound, supersolution_residual, verify_decay_bound, write_field_csv)

WIDE = VolatilityBand(1.0, 2.0)


def test_cfl_violation_names_cfl():
    prob = HeatProblem(WIDE, 5, "radial", ds=0.05, n_time=10)
    with pytest.raises(CFLError, match="CFL"):
        prob.validate()
    with pytest.raises(CFLError):
        heat_solve(prob)


def test_small_domain_is_rejected():
    with pytest.raises(DomainError):
        HeatProblem(WIDE, 5, "radial", domain_radius=2.0, n_space=50).validate()


def test_mode_dimension_rules():
    with pytest.raises(ValueError):
        HeatProblem(WIDE, 3, "line", ds=0.1)
    with pytest.raises(ValueError):
        HeatProblem(WIDE, 1, "radial", ds=0.1)
    with pytest.raises(ValueError):
        HeatProblem(WIDE, 5, "radial", ds=0.1, kappa=0.5)


def test_default_step_count_meets_cfl():
    prob = HeatProblem(WIDE, 5, "radial", ds=0.05)
    assert prob.dt <= prob.cfl_dt()
    prob.validate()


def test_zero_data_stays_zero():
    fld = heat_solve(HeatProblem(WIDE, 5, "radial", ds=0.1, zero_data=True))
    assert np.all(fld.values == 0.0)


def test_solution_is_bounded_by_initial_max():
    fld = heat_solve(HeatProblem(WIDE, 5, "radial", ds=0.05, n=4.0))
    assert fld.values.max() <= 1.0
    assert fld.values.min() >= 0.0
    assert np.all(np.diff(fld.at_center()) <= 1e-15)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 4.0), st.floats(1.05, 3.0))
def test_comparison_principle(n, factor):
    # sharper data lies below pointwise and must stay below
    kw = dict(band=WIDE, d=5, mode="radial", ds=0.1, t_end=0.5, domain_radius=14.0, n_space=140)
    u = heat_solve(HeatProblem(n=n, **kw))
    v = heat_solve(HeatProblem(n=n * factor, **kw))
    assert np.all(v.values <= u.values + 1e-15)


def test_classical_convergence_is_second_order():
    band = VolatilityBand(1.0, 1.0)
    errs = [classical_error(heat_solve(HeatProblem(band, 3, "radial", ds=ds, t_end=0.5)))
            for ds in (0.08, 0.04, 0.02)]
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_bound_values_and_range():
    assert decay_bound(1.0, 3.0, 0.0, WIDE) == 1.0
    assert np.isclose(decay_bound(1.0, 1.0, 5.0, WIDE), 2.0 ** (-5 / 8))
    with pytest.raises(ValueError):
        decay_bound(1.0, 1.0, 6.0, WIDE, d=5)
    with pytest.raises(ValueError):
        decay_bound(1.0, 1.0, -0.1, WIDE)


def test_bound_check_example_and_dimension_guard():
    prob = HeatProblem(WIDE, 5, "radial", n=4.0, ds=0.04)
    rep = verify_decay_bound(heat_solve(prob), prob, 5.0)
    assert rep.passed
    assert rep.to_dict()["pass"] is True
    low = HeatProblem(WIDE, 4, "radial", ds=0.1)
    with pytest.raises(BandError):
        verify_decay_bound(heat_solve(low), low, 2.0)


def test_gaussian_supersolution_residual():
    # strictly inside c < d the residual is nonnegative; at c = d it is -O(ds^2)
    assert supersolution_residual(HeatProblem(WIDE, 5, "radial", ds=0.05), 2.5) >= 0.0
    res = [supersolution_residual(HeatProblem(WIDE, 5, "radial", ds=ds), 5.0) for ds in (0.1, 0.05)]
    assert -res[0] / -res[1] > 3.5


def test_field_csv(tmp_path):
    prob = HeatProblem(VolatilityBand(1, 1), 1, "line", ds=0.2, t_end=0.1, n_save=3, a_offset=2.0)
    fld = heat_solve(prob)
    path = tmp_path / "f.csv"
    write_field_csv(fld, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "s", "u"]
    assert len(rows) == 1 + fld.values.size
    assert float(rows[1][1]) == pytest.approx(2.0 - prob.domain_radius)
