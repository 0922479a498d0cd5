import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nsvtp.dvfs import (
    DEFAULT_PARAMS,
    CyclePattern,
    DvfsModelParams,
    allocate_cores,
    baseline_cycle_energy,
    core_power,
    eta,
    log_grid,
    low_power_ratio,
    nsvtp_cycle_energy,
    sweep_eta,
)
from nsvtp.errors import FrequencyOutOfRange, InfeasibleTweakWindow, LoadOutOfRange

from conftest import PROPERTY_CASES

mpmath.mp.dps = 40


def mp_r(p: DvfsModelParams, n=3):
    P0, P3 = mpmath.mpf(p.P0), mpmath.mpf(p.P3)
    return (P0 + P3 * (mpmath.mpf(p.f_min) / mpmath.mpf(p.f_max)) ** n) / (P0 + P3)


def mp_eta(p, rho, d, n=3):
    """Oracle: ratio of the two per-cycle energies, in 40-digit arithmetic."""
    r, rho, d = mp_r(p, n), mpmath.mpf(rho), mpmath.mpf(d)
    base = 1 + 1 / rho
    tweaked = (1 + 2 * d) + r * (1 / rho - 2 * d)
    return tweaked / base


# -- strategies --------------------------------------------------------------

positive = st.floats(1e-3, 1e3, allow_nan=False)


@st.composite
def params(draw):
    f_min = draw(st.floats(0.1, 5))
    return DvfsModelParams(
        P0=draw(st.floats(0, 500)),
        P3=draw(st.floats(1e-3, 500)),
        f_min=f_min,
        f_max=f_min * draw(st.floats(1, 10)),
        n_dvfs=3.0,
        l_max=draw(st.floats(0.1, 10)),
    )


@st.composite
def cycles(draw):
    t_comp = draw(positive)
    rho = draw(st.floats(1e-2, 1e2))
    delta = draw(st.floats(0, 0.5)) * t_comp / rho
    return CyclePattern(t_comp, rho, delta)


# -- oracles -----------------------------------------------------------------


def test_low_power_ratio_oracle():
    assert mpmath.nstr(mp_r(DEFAULT_PARAMS), 12) == "0.58477037037"
    assert low_power_ratio(DEFAULT_PARAMS) == pytest.approx(float(mp_r(DEFAULT_PARAMS)), rel=1e-15)


def test_eta_oracle_values():
    assert eta(DEFAULT_PARAMS, CyclePattern(1, 1, 0)) == pytest.approx(0.7923851851851852, rel=1e-15)
    for rho, d in [(1, 0.01), (0.1, 0.001), (10, 0.04), (2, 0.25)]:
        got = eta(DEFAULT_PARAMS, CyclePattern(1.0, rho, d))
        assert got == pytest.approx(float(mp_eta(DEFAULT_PARAMS, rho, d)), rel=1e-14)


def test_full_power_point():
    assert core_power(DEFAULT_PARAMS, 3.0, 3.0) == 250.0
    assert core_power(DEFAULT_PARAMS, 3.0, 0.0) == 0.0
    assert core_power(DEFAULT_PARAMS, 1.0, 3.0) == pytest.approx(146.19259259259259, rel=1e-15)


def test_power_range_checks():
    with pytest.raises(FrequencyOutOfRange):
        core_power(DEFAULT_PARAMS, 3.5, 1)
    with pytest.raises(LoadOutOfRange):
        core_power(DEFAULT_PARAMS, 2, 4)


def test_infeasible_window():
    c = CyclePattern(1.0, 2.0, 0.2501)
    assert not c.feasible
    with pytest.raises(InfeasibleTweakWindow):
        eta(DEFAULT_PARAMS, c)
    assert eta(DEFAULT_PARAMS, CyclePattern(1.0, 2.0, 0.25)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize(
    "kwargs",
    [{"P0": -1}, {"P0": 0, "P3": 0}, {"f_min": 0}, {"f_min": 4}, {"n_dvfs": 0}, {"l_max": 0}, {"P3": math.inf}],
)
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        DvfsModelParams(**kwargs)


def test_generalized_exponent():
    p = DvfsModelParams(n_dvfs=2)
    assert low_power_ratio(p) == pytest.approx(float(mp_r(p, 3)), rel=1e-15)
    assert low_power_ratio(p, generalized=True) == pytest.approx(float(mp_r(p, 2)), rel=1e-15)


# -- properties --------------------------------------------------------------


@settings(max_examples=PROPERTY_CASES)
@given(params(), cycles())
def test_eta_matches_energy_ratio(p, c):
    ratio = nsvtp_cycle_energy(p, c) / baseline_cycle_energy(p, c)
    assert abs(eta(p, c) - ratio) <= 1e-12 * ratio


@settings(max_examples=PROPERTY_CASES)
@given(params(), cycles())
def test_eta_bounds(p, c):
    r = low_power_ratio(p)
    d = c.delta / c.t_comp
    value = eta(p, c)
    tol = 1e-12
    assume(r < 1 - 1e-9)
    assert r < value <= 1 + 2 * d * (1 - r) + tol


@settings(max_examples=PROPERTY_CASES)
@given(params(), cycles(), st.floats(1.0001, 10))
def test_eta_monotone_in_rho_and_delta(p, c, k):
    assume(low_power_ratio(p) < 1 - 1e-9)
    value = eta(p, c)
    # larger rho (shorter exchange window) at fixed delta, if still feasible
    bigger_rho = CyclePattern(c.t_comp, c.rho * k, c.delta)
    if bigger_rho.feasible:
        assert eta(p, bigger_rho) >= value - 1e-12
    smaller_delta = CyclePattern(c.t_comp, c.rho, c.delta / k)
    assert eta(p, smaller_delta) <= value + 1e-12


@settings(max_examples=PROPERTY_CASES)
@given(params(), cycles())
def test_equal_frequencies_give_unit_eta(p, c):
    same = DvfsModelParams(p.P0, p.P3, p.f_max, p.f_max, p.n_dvfs, p.l_max)
    assert eta(same, c) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=PROPERTY_CASES)
@given(params(), st.floats(1e-2, 1e2))
def test_zero_latency_closed_form(p, rho):
    r = low_power_ratio(p)
    assert abs(eta(p, CyclePattern(1.0, rho, 0.0)) - (rho + r) / (rho + 1)) <= 1e-14


# -- allocation --------------------------------------------------------------


@pytest.mark.parametrize(
    "workload, capacity, cores, util",
    [(1, 3, 1, 1 / 3), (2.4, 1, 3, 0.8), (0.1, 100, 1, 0.001), (2.5, 1, 4, 0.625), (3, 1.25, 3, 0.8)],
)
def test_allocate_cores(workload, capacity, cores, util):
    got = allocate_cores(workload, capacity)
    assert got.cores == cores
    assert got.utilization == pytest.approx(util, rel=1e-15)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_allocation_is_minimal(workload, capacity):
    got = allocate_cores(workload, capacity)
    assert got.utilization <= 0.8 + 1e-12
    if got.cores > 1:
        assert workload / ((got.cores - 1) * capacity) > 0.8 - 1e-12


# -- sweep -------------------------------------------------------------------


def test_sweep_grid_and_csv():
    grid = sweep_eta(DEFAULT_PARAMS, log_grid(0.1, 10, 3), log_grid(1, 100, 3))
    assert grid.eta.shape == (3, 3)
    assert not grid.feasible[2, 0] and np.isnan(grid.eta[2, 0])
    lines = grid.to_csv().splitlines()
    assert lines[0] == "rho,tcomp_over_delta,eta,feasible"
    assert len(lines) == 10
    assert lines[1].startswith("0.1,1,")


def test_sweep_25x25_is_fast():
    start = time.perf_counter()
    sweep_eta(DEFAULT_PARAMS, log_grid(0.1, 10, 25), log_grid(10, 1000, 25))
    assert time.perf_counter() - start < 1.0
