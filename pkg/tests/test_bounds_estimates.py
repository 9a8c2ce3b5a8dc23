import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinbound.bounds import (AprioriBounds, analytic_cst_s, calibrate_loss_cst, japanese, loss_bound_CL,
                             loss_evaluate, lp_conditions, q1_bound_coefficient, s_bound_CS, s_operator_factor)
from kinbound.errors import InvalidBounds, MissingLpBound, MissingWBound
from kinbound.grid import (GridDistribution, load_grid, local_functionals, maxwellian, save_grid)
from kinbound.kernel import (angular_mass_nb, hard_spheres, maxwell_molecules, momentum_transfer_mb,
                             power_law_kernel, split_kernel)


def test_maxwellian_moments_on_grid():
    g = GridDistribution.from_function(maxwellian, 3, 64, 8.0)
    fn = local_functionals(g)
    assert fn["rho"] == pytest.approx(1.0, abs=1e-3)
    assert fn["e"] == pytest.approx(3.0, abs=1e-3)
    # entropy of the unit Maxwellian: N/2 log(2 pi) + N/2
    assert fn["h"] == pytest.approx(1.5 * math.log(2 * math.pi) + 1.5, abs=1e-3)


def test_zero_grid_functionals():
    g = GridDistribution(3, 8, 2.0, np.zeros((8, 8, 8)))
    fn = local_functionals(g, p=2.0)
    assert all(fn[k] == 0 for k in ("rho", "e", "eprime", "h", "w", "lp"))


def test_ball_indicator_energy():
    g = GridDistribution.from_function(lambda v: (np.sum(v * v, axis=-1) <= 1.0).astype(float), 3, 96, 1.2)
    g = g.with_values(g.values / g.mass())
    assert local_functionals(g)["e"] == pytest.approx(3 / 5, rel=1e-2)


def test_grid_roundtrip(tmp_path):
    g = GridDistribution.from_function(maxwellian, 2, 10, 3.0)
    save_grid(g, tmp_path / "g.bin")
    h = load_grid(tmp_path / "g.bin")
    assert h.M == 10 and h.V_max == 3.0 and np.array_equal(h.values, g.values)


def test_grid_rejects_negative_values():
    with pytest.raises(ValueError):
        GridDistribution(2, 2, 1.0, -np.ones((2, 2)))


def test_loss_constant_hard_spheres():
    b = AprioriBounds(rho_min=1.0, E=4.0)
    assert loss_bound_CL(hard_spheres(3), b, 1.0) == pytest.approx(16 * math.pi, rel=1e-10)


def test_loss_constant_maxwell_molecules():
    k = maxwell_molecules(3, b=0.3, C_phi=2.0)
    b = AprioriBounds(rho_min=1.0, E=5.5)
    assert loss_bound_CL(k, b, 1.0) == pytest.approx(angular_mass_nb(k) * 2.0 * 5.5, rel=1e-12)


def test_loss_constant_soft_needs_lp():
    k = hard_spheres(3, gamma=-1.0)
    with pytest.raises(MissingLpBound):
        loss_bound_CL(k, AprioriBounds(rho_min=1.0, E=4.0), 1.0)
    val = loss_bound_CL(k, AprioriBounds(rho_min=1.0, E=4.0, Lp_value=2.0, p_exponent=2.0), 1.0)
    assert val == pytest.approx(4 * math.pi * 6.0)
    # mollified kernels stay in the first case
    km = hard_spheres(3, gamma=-1.0, mollified=True)
    assert loss_bound_CL(km, AprioriBounds(rho_min=1.0, E=4.0), 1.0) == pytest.approx(16 * math.pi)


def test_cancellation_bound_scales_like_eps():
    k = power_law_kernel(3, 0.0, 1.0)
    b = AprioriBounds(rho_min=1.0, E=4.0)
    vals = [s_bound_CS(k, b, 1e-2 / 2 ** j, 1.0) for j in range(5)]
    ratios = [vals[j + 1] / vals[j] for j in range(4)]
    assert all(v2 < v1 for v1, v2 in zip(vals, vals[1:]))
    assert np.allclose(ratios, 0.5, rtol=1e-3)


def test_cancellation_bound_is_restriction():
    k = power_law_kernel(3, 0.5, 0.5)
    b = AprioriBounds(rho_min=1.0, E=4.0)
    assert s_bound_CS(k, b, math.pi / 4 - 1e-9, 1.0) <= momentum_transfer_mb(k) * k.C_phi * 4.0


def test_cancellation_bound_very_soft():
    k = power_law_kernel(3, -2.5, 1.0)
    # integrability of |z|^{-2.5} against L^p needs p > N/(N + gamma) = 6
    with pytest.raises(MissingLpBound):
        s_bound_CS(k, AprioriBounds(rho_min=1.0, E=4.0, Lp_value=1.0, p_exponent=3.0), 0.1, 1.0)
    val = s_bound_CS(k, AprioriBounds(rho_min=1.0, E=4.0, Lp_value=1.0, p_exponent=7.0), 0.1, 1.0)
    assert val == pytest.approx(split_kernel(k, 0.1)[1] * 5.0, rel=1e-12)
    cond = lp_conditions(k, AprioriBounds(rho_min=1.0, E=4.0, Lp_value=1.0, p_exponent=7.0))
    assert cond["loss_threshold"] == pytest.approx(6.0) and cond["satisfied"]


def test_q1_coefficient():
    k = power_law_kernel(3, 0.0, 1.0, mollified=True)
    b = AprioriBounds(rho_min=1.0, E=4.0, Eprime=4.0, W=2.0)
    assert q1_bound_coefficient(k, b, None, 1.0, m_bR=0.1) == pytest.approx(1.6)
    assert q1_bound_coefficient(k, AprioriBounds(1.0, 4.0, 4.0, W=0.0), 0.1, 1.0) == 0.0
    with pytest.raises(MissingWBound):
        q1_bound_coefficient(k, AprioriBounds(1.0, 4.0, 4.0), 0.1, 1.0)
    c = [q1_bound_coefficient(k, b, e, 1.0) for e in (1e-2, 1e-3, 1e-4)]
    assert c[1] / c[0] == pytest.approx(0.1, rel=1e-3) and c[2] / c[1] == pytest.approx(0.1, rel=1e-3)


def test_loss_evaluate_hard_spheres_mean_speed():
    g = GridDistribution.from_function(maxwellian, 3, 64, 8.0)
    val = loss_evaluate(hard_spheres(3), g, np.zeros(3))
    assert val == pytest.approx(4 * math.pi * math.sqrt(8 / math.pi), rel=1e-3)
    assert loss_evaluate(hard_spheres(3), g.with_values(np.zeros_like(g.values)), np.zeros(3)) == 0.0


def test_loss_evaluate_maxwell_molecules_is_mass():
    g = GridDistribution.from_function(lambda v: maxwellian(v, 1.0, 0.5), 3, 32, 5.0)
    assert loss_evaluate(maxwell_molecules(3), g, np.array([1.0, 0.0, 0.0])) == pytest.approx(
        4 * math.pi * g.mass(), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 4.0), st.floats(0.4, 2.0))
def test_loss_bound_dominates_quadrature(speed, theta):
    k = hard_spheres(3)
    g = GridDistribution.from_function(lambda v: maxwellian(v, 1.0, theta), 3, 24, 7.0)
    fn = local_functionals(g)
    v = np.array([speed, 0.0, 0.0])
    CL = loss_bound_CL(k, AprioriBounds(rho_min=fn["rho"], E=fn["rho"] + fn["e"]), 1.0)
    assert loss_evaluate(k, g, v) <= CL * japanese(v) ** k.gamma_plus * (1 + 1e-12)


def test_loss_calibration_hard_spheres():
    cst, rec = calibrate_loss_cst(hard_spheres(3), M=16, V_max=6.0)
    assert 0 < cst <= 1.5 and len(rec) > 0
    assert cst == pytest.approx(1.5 * max(r["ratio"] for r in rec))


def test_cancellation_angular_constant():
    # chord bound cos^{-(N+gamma)}(t/2) - 1 <= c (1 - cos t) on [0, pi/2]
    k = power_law_kernel(3, 0.5, 1.0)
    c = analytic_cst_s(k)
    t = np.linspace(1e-6, math.pi / 2, 2001)
    lhs = np.cos(t / 2) ** (-3.5) - 1
    assert np.all(lhs <= c * (1 - np.cos(t)) * (1 + 1e-12))
    assert s_operator_factor(k, 0.1) <= c * split_kernel(k, 0.1)[1] * (1 + 1e-9)


def test_bounds_validation():
    with pytest.raises(InvalidBounds):
        AprioriBounds(rho_min=0.0, E=4.0).validate()
    with pytest.raises(InvalidBounds):
        AprioriBounds(rho_min=2.0, E=1.0).validate()
