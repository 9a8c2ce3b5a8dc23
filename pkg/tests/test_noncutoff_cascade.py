import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinbound.errors import InvalidKappa, InvalidSchedule
from kinbound.kernel import power_law_kernel
from kinbound.noncutoff import (K_threshold, Schedule, ScheduleConfig, certify_noncutoff, epsilon_formula_log,
                                epsilon_n, exponent_K, hypothesis_chain_damping, schedule_delta,
                                uniformize_stretched)
from kinbound.upheaval import UniversalConstants

UNIT = UniversalConstants(source="unit")
FIXTURE = ScheduleConfig(kappa=4.5, beta=2.25, alpha_sched=0.5)


@pytest.mark.parametrize("nu", [1.0, 0.5, 0.0])
def test_schedule_sums_to_one(nu):
    s = Schedule(FIXTURE, nu)
    assert s.total(40) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("nu", [1.0, 0.0])
def test_schedule_tail_bound_uniform(nu):
    s = Schedule(FIXTURE, nu)
    ratios = [s.tail_ratio(n) for n in range(41)]
    assert max(ratios) < 1.2 and min(ratios) >= 1.0


def test_geometric_schedule_first_step():
    cfg = ScheduleConfig(beta_geo=0.3)
    sigma = sum(0.3 ** (k - 1) for k in range(200))
    assert schedule_delta(cfg, 0.0, 0) == pytest.approx(1 / sigma, rel=1e-12)


def test_schedule_validation():
    with pytest.raises(InvalidKappa):
        FIXTURE.__class__(kappa=3.9).validate(1.0)
    with pytest.raises(InvalidSchedule):
        ScheduleConfig(kappa=4.5, beta=2.6).validate(1.0)
    with pytest.raises(InvalidSchedule):
        ScheduleConfig(beta_geo=1.5).validate(0.0)


def test_exponent_and_threshold():
    assert exponent_K(1.0, 4.5) == pytest.approx(math.log(4.5) / math.log(math.sqrt(2)), rel=1e-14)
    assert exponent_K(1.0, 4.5) == pytest.approx(4.3399, abs=1e-4)
    assert K_threshold(1.0) == pytest.approx(4.0)
    assert exponent_K(0.0) == 2.0
    with pytest.raises(InvalidKappa, match="K must exceed"):
        exponent_K(1.0, 3.9)


def test_splitting_angle_power_law():
    k = power_law_kernel(3, 0.0, 0.0)
    a = epsilon_formula_log(math.log(1e-3), 0.0, 0.0, 0.0, k)
    b = epsilon_formula_log(math.log(0.5e-3), 0.0, 0.0, 0.0, k)
    assert math.exp(b - a) == pytest.approx(0.5, rel=1e-12)


def test_splitting_angle_near_strongest_singularity():
    k = power_law_kernel(3, 0.0, 1.9)
    le, flags = epsilon_n(-50.0, 0.0, 0.0, 0.0, k)
    assert math.isfinite(le) and le < -900


def test_splitting_angle_clamped():
    k = power_law_kernel(3, 0.0, 1.0)
    le, flags = epsilon_n(0.0, 10.0, 0.0, 0.0, k)
    assert flags.get("clamped") and le < math.log(math.pi / 4)


def test_damping_on_hypothesis_chain():
    k = power_law_kernel(3, 0.5, 1.0)
    d = hypothesis_chain_damping(k, 16.0, FIXTURE, 0.3)
    assert all(b <= a for a, b in zip(d, d[1:]))
    assert d[40] < 1e-6


def test_damping_geometric_case_bounded():
    k = power_law_kernel(3, 0.5, 0.0)
    d = hypothesis_chain_damping(k, 16.0, ScheduleConfig(beta_geo=0.05), 0.3)
    assert max(d) < 10 and d[40] < d[10]


def test_anchor_identity_and_quadratic_case(nc_kernel, nc_bounds):
    cert, tr, seed = certify_noncutoff(nc_kernel, nc_bounds, 0.5, FIXTURE, UNIT)
    p = cert.provenance
    C2, K, la = p["C2_before_uniformization"], cert.K, p["alpha_log"]
    for n in range(0, 12):
        r = tr.c_delta * 2 ** (n / 2)
        assert -C2 * r ** K == pytest.approx(la * 4.5 ** n, rel=1e-12)
    # the recorded trace sits above the anchored envelope
    for n in range(len(tr.log_a) - 1):
        assert tr.log_a[n + 1] >= la * 4.5 ** n
    eps = tr.log_eps[:20]
    assert all(b < a for a, b in zip(eps, eps[1:]))


def test_quadratic_exponent_path(nc_bounds):
    k = power_law_kernel(3, 0.5, 0.0)
    cert, tr, _ = certify_noncutoff(k, nc_bounds, 0.5, ScheduleConfig(), UNIT)
    p = cert.provenance
    assert cert.K == 2.0
    assert p["C2_before_uniformization"] == pytest.approx(-p["alpha_log"] / tr.c_delta ** 2, rel=1e-12)


def test_damping_free_step_limit(nc_kernel, nc_bounds):
    # with D_n -> 0 the step reduces to tau Delta a^2 S / 2
    from kinbound.noncutoff import _context, step_noncutoff
    from kinbound.upheaval import upheaval_noncutoff
    seed = upheaval_noncutoff(nc_kernel, nc_bounds, 0.5, UNIT)
    ctx = _context(nc_kernel, seed, UNIT, FIXTURE, 1e-300, Schedule(FIXTURE, 1.0), 1.0)
    from kinbound.cutoff import log_spreading
    la, le, D, flags, lD = step_noncutoff(-5.0, 0.1, 3, ctx)
    bare = (math.log(seed.tau) + ctx["schedule"].log_delta(4) - 10.0
            + log_spreading(nc_kernel, 0.1, 4 * math.log(0.5), 1.0, 1.0, ctx["exponent"]) - math.log(2))
    assert D < 1e-200 and la == pytest.approx(bare, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(2.0, 6.0), st.floats(1e-3, 1e3), st.floats(0.0, 3.0), st.floats(-5, 5), st.floats(0, 1))
def test_stretched_uniformization(K, C2, R0, x, frac):
    lc, c2 = uniformize_stretched(0.0, C2, K, R0)
    v = np.array([x, 0.0, 0.5])
    vbar = np.array([0.0, frac * R0, 0.0])
    lhs = -C2 * float(np.linalg.norm(v - vbar)) ** K
    rhs = lc - c2 * float(np.linalg.norm(v)) ** K
    assert lhs >= rhs - 1e-9 * max(1.0, abs(rhs))


def test_noncutoff_deterministic(nc_kernel, nc_bounds):
    a, _, _ = certify_noncutoff(nc_kernel, nc_bounds, 0.5, FIXTURE, UNIT)
    b, _, _ = certify_noncutoff(nc_kernel, nc_bounds, 0.5, FIXTURE, UNIT)
    assert a.to_json() == b.to_json()
