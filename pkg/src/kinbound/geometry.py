"""Spreading of ball indicators under the gain operator Q+.

Q+(g, f)(v) = int dv_* int dsigma B(|v - v_*|, cos theta) g(v'_*) f(v')
with v' = (v + v_*)/2 + |v - v_*| sigma / 2 and v'_* = (v + v_*)/2 - |v - v_*| sigma / 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import DegenerateSample, InsufficientSamples, InvalidGeometry
from .kernel import CollisionKernel, angular_infimum_ellb, ball_volume, sphere_area

MIN_SAMPLES = 10_000
MAX_REL_SE = 0.05


@dataclass(frozen=True)
class CarlemanGeometry:
    a: float = math.sqrt(2.0) - 1.0
    b_geo: float = math.sqrt(2.0) + 1.0

    @property
    def lam(self):
        return (self.b_geo - self.a) / (self.b_geo + self.a)

    @classmethod
    def from_angles(cls):
        # cot(3pi/8) and cot(pi/8) evaluated through tan
        return cls(1.0 / math.tan(3 * math.pi / 8), 1.0 / math.tan(math.pi / 8))


GEOMETRY = CarlemanGeometry()


@dataclass(frozen=True)
class SpreadingResult:
    coefficient: float
    radius: float
    center: tuple = field(default=())


def xi_exponent(N, mode):
    """Power of xi in the spreading height.

    'lemma' is N/2 - 1 as in the quadratic spreading statement; 'sharp' is
    N/2 + 1, the rate at which Q+ of two balls actually vanishes at the edge
    of the spread ball (and the power carried by the cascade recursion).
    """
    if mode == "lemma":
        return N / 2.0 - 1.0
    if mode == "sharp":
        return N / 2.0 + 1.0
    raise ValueError(f"unknown xi exponent mode {mode!r}")


def kinetic_lower_factor(kernel, R):
    """Lower bound of Phi / c_phi over relative speeds |z| <= 2R, up to 2^gamma for gamma >= 0.

    gamma >= 0 enters through homogeneity, R^gamma.  For gamma < 0 the kernel
    is bounded below by its value at |z| = 2R (and by c_phi itself below
    |z| = 1 in the mollified form).
    """
    g = kernel.gamma
    if g >= 0:
        return R ** g
    if kernel.mollified:
        return min(1.0, (2.0 * R) ** g)
    return (2.0 * R) ** g


def spreading_bound(kernel, r, R, xi, cst_spread, ell_b=None, center=None, exponent_mode="lemma"):
    if not (0 < r <= R):
        raise InvalidGeometry(f"need 0 < r <= R, got r = {r}, R = {R}")
    if not (0 < xi < 1):
        raise InvalidGeometry(f"xi = {xi} outside (0, 1)")
    if ell_b is None:
        ell_b = angular_infimum_ellb(kernel)
    N = kernel.dimension
    coef = (cst_spread * ell_b * kernel.c_phi * r ** (N - 3) * R ** 3
            * kinetic_lower_factor(kernel, R) * xi ** xi_exponent(N, exponent_mode))
    c = tuple(float(x) for x in center) if center is not None else (0.0,) * N
    return SpreadingResult(coef, math.sqrt(r * r + R * R) * (1.0 - xi), c)


# --- Monte Carlo oracle ---------------------------------------------------------

def _unit_vectors(rng, n, N):
    x = rng.standard_normal((n, N))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _band_cdf(t, N):
    """P(<e, sigma> <= t) for sigma uniform on S^{N-1}."""
    a = (N - 1) / 2.0
    return special.betainc(a, a, np.clip((1.0 + t) / 2.0, 0.0, 1.0))


def _band_ppf(u, N):
    a = (N - 1) / 2.0
    return 2.0 * special.betaincinv(a, a, u) - 1.0


def _perp_unit(rng, e):
    """Uniform unit vectors orthogonal to the rows of e."""
    w = rng.standard_normal(e.shape)
    w -= np.sum(w * e, axis=1, keepdims=True) * e
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def _stratified_uniform(rng, n):
    return (np.arange(n) + rng.random(n)) / n


def qplus_indicator_quadrature(kernel, r, R, v, samples=MIN_SAMPLES, seed=0, center=None,
                               form="lower", theta_min=None, check=True):
    """Q+(1_{B(c,R)}, 1_{B(c,r)})(v): estimate and standard error.

    v_* is drawn uniformly (radially stratified, antithetic +-) in the ball
    allowed by energy conservation, and sigma is drawn only from the band of
    directions sending v' into B(c,r) and v'_* into B(c,R); the band
    probability is exact.  theta_min truncates the angular kernel (cutoff part).
    """
    if samples < MIN_SAMPLES:
        raise InsufficientSamples(f"at least {MIN_SAMPLES} samples required, got {samples}")
    N = kernel.dimension
    v = np.asarray(v, dtype=float)
    c = np.zeros(N) if center is None else np.asarray(center, dtype=float)
    v = v - c
    rad2 = r * r + R * R - float(v @ v)
    if rad2 <= 0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    half = (samples + 1) // 2
    rs = math.sqrt(rad2) * _stratified_uniform(rng, half) ** (1.0 / N)
    dirs = _unit_vectors(rng, half, N)
    vs = np.concatenate([rs[:, None] * dirs, -rs[:, None] * dirs])[:samples]
    m = 0.5 * (v + vs)
    u = v - vs
    q = 0.5 * np.linalg.norm(u, axis=1)
    mn = np.linalg.norm(m, axis=1)
    base = mn ** 2 + q ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (r * r - base) / (2 * q * mn)
        t_lo = -(R * R - base) / (2 * q * mn)
    deg = (mn < 1e-14) | (q < 1e-14)
    t_hi = np.where(deg, np.where(base <= r * r, 1.0, -2.0), np.clip(t_hi, -2.0, 2.0))
    t_lo = np.where(deg, np.where(base <= R * R, -1.0, 2.0), np.clip(t_lo, -2.0, 2.0))
    lo = np.maximum(t_lo, -1.0)
    hi = np.minimum(t_hi, 1.0)
    ok = hi > lo
    p_lo = _band_cdf(lo, N)
    p_hi = _band_cdf(hi, N)
    mass = np.where(ok, p_hi - p_lo, 0.0)
    uu = rng.random(samples)
    t = _band_ppf(np.clip(p_lo + uu * (p_hi - p_lo), 0.0, 1.0), N)
    t = np.clip(t, -1.0, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mhat = np.where(mn[:, None] > 1e-14, m / np.maximum(mn, 1e-300)[:, None], _unit_vectors(rng, samples, N))
    sigma = t[:, None] * mhat + np.sqrt(1.0 - t * t)[:, None] * _perp_unit(rng, mhat)
    un = np.linalg.norm(u, axis=1)
    uhat = u / np.maximum(un, 1e-300)[:, None]
    cos_t = np.clip(np.sum(sigma * uhat, axis=1), -1.0, 1.0)
    theta = np.arccos(cos_t)
    bval = np.where(theta > 0, kernel.b(np.maximum(theta, 1e-300)), 0.0)
    if theta_min is not None:
        bval = np.where(theta >= theta_min, bval, 0.0)
    w = np.where(ok, sphere_area(N - 1) * mass * kernel.phi(un, form) * bval, 0.0)
    vol = ball_volume(N, math.sqrt(rad2))
    est = vol * float(np.mean(w))
    # antithetic pairs are correlated: estimate the error from pair means
    if samples >= 2 * half:
        pairs = 0.5 * (w[:half] + w[half:])
        se = vol * float(np.std(pairs, ddof=1)) / math.sqrt(half)
    else:
        se = vol * float(np.std(w, ddof=1)) / math.sqrt(samples)
    if check and est > 0 and se > MAX_REL_SE * est:
        raise InsufficientSamples(f"standard error {se:.3g} exceeds 5% of estimate {est:.3g}")
    return est, se


def qplus_mc(kernel, g, f, v, samples, rng, proposal_scale=1.0, proposal_center=None, form="lower"):
    """Q+(g, f)(v) for callables g, f of (n, N) arrays, with a Gaussian proposal for v_*.

    Returns (estimate, standard error).
    """
    N = kernel.dimension
    v = np.asarray(v, dtype=float)
    c = np.zeros(N) if proposal_center is None else np.asarray(proposal_center, dtype=float)
    z = rng.standard_normal((samples, N))
    vs = c + proposal_scale * z
    logp = -0.5 * np.sum(z * z, axis=1) - N * math.log(proposal_scale) - 0.5 * N * math.log(2 * math.pi)
    sigma = _unit_vectors(rng, samples, N)
    u = v - vs
    un = np.linalg.norm(u, axis=1)
    m = 0.5 * (v + vs)
    vp = m + 0.5 * un[:, None] * sigma
    vps = m - 0.5 * un[:, None] * sigma
    cos_t = np.clip(np.sum(sigma * u, axis=1) / np.maximum(un, 1e-300), -1.0, 1.0)
    theta = np.arccos(cos_t)
    bval = np.where(theta > 0, kernel.b(np.maximum(theta, 1e-300)), 0.0)
    w = sphere_area(N - 1) * kernel.phi(un, form) * bval * g(vps) * f(vp) * np.exp(-logp)
    return float(np.mean(w)), float(np.std(w, ddof=1) / math.sqrt(samples))


# --- reduced Carleman integral ------------------------------------------------

def sin_half_power_min(gamma):
    """min of (sin(theta/2))^{-gamma} over theta in [pi/4, 3pi/4]."""
    return min(math.sin(math.pi / 8) ** (-gamma), math.sin(3 * math.pi / 8) ** (-gamma))


def _rho_power_integral(lo, hi, gamma):
    if gamma == -1:
        return math.log(hi / lo)
    return (hi ** (gamma + 1) - lo ** (gamma + 1)) / (gamma + 1)


def carleman_reduced_integral(kernel, p, z, ell_b=None, geometry=GEOMETRY):
    """Reduced lower-bound integral for Q+(1_{B(0,1)}, 1_{B(0,p)}) at |v| = z.

    ell_b * min (sin theta/2)^{-gamma} * c_phi times
    int dy (1 - y^2/z^2)^{(N-3)/2} (1 - y^2)^{(N-1)/2} int drho rho^gamma,
    integrated in y = z sin(u).  Returns 0 when the domain is empty.
    """
    if not (0 < p <= 1):
        raise InvalidGeometry(f"p = {p} outside (0, 1]")
    if z <= 0:
        raise InvalidGeometry("z must be positive")
    N, gam = kernel.dimension, kernel.gamma
    a, bg, lam = geometry.a, geometry.b_geo, geometry.lam
    if z * z >= 1 + p * p:
        return 0.0
    y_lo = 0.0
    if z > p:
        y_lo = math.sqrt(z * z - p * p)
    w = (1 - lam * lam * z * z) / (1 - lam * lam)
    if w > 0:
        y_lo = max(y_lo, math.sqrt(w))
    y_hi = min(1.0, z)
    if y_hi <= y_lo:
        return 0.0

    def inner(y):
        s = p * p - z * z + y * y
        if s < 0:
            return 0.0
        r1 = math.sqrt(max(z * z - y * y, 0.0))
        r2 = math.sqrt(max(1 - y * y, 0.0))
        lo = max(y - math.sqrt(s), a * (r1 + r2))
        hi = min(y + math.sqrt(s), bg * (r1 - r2))
        if hi <= lo or lo <= 0:
            return 0.0
        return _rho_power_integral(lo, hi, gam)

    def integrand(uu):
        y = z * math.sin(uu)
        return inner(y) * z * math.cos(uu) ** (N - 2) * (1 - y * y) ** ((N - 1) / 2.0)

    u_lo, u_hi = math.asin(min(y_lo / z, 1.0)), math.asin(min(y_hi / z, 1.0))
    val, _ = integrate.quad(integrand, u_lo, u_hi, epsabs=0.0, epsrel=1e-10, limit=200)
    if ell_b is None:
        ell_b = angular_infimum_ellb(kernel)
    return ell_b * sin_half_power_min(gam) * kernel.c_phi * val


# --- calibration ----------------------------------------------------------------

def default_sample_plan(N, n_v=4, xis=(0.1, 0.25, 0.5, 0.75), ratios=(1.0, 0.5), seed=0):
    """(r, R, xi, v) tuples with v spread over the certified ball, edge included."""
    rng = np.random.default_rng(seed)
    plan = []
    for rr in ratios:
        for xi in xis:
            r, R = rr, 1.0
            rad = math.sqrt(r * r + R * R) * (1 - xi)
            for k in range(n_v):
                d = _unit_vectors(rng, 1, N)[0]
                frac = 1.0 if k == 0 else (k / n_v) ** (1.0 / N)
                plan.append((r, R, xi, tuple(float(x) for x in frac * rad * d)))
    return plan


def calibration_kernel(kernel):
    """Kernel used to calibrate the spreading constant.

    gamma < 0 is reduced to the gamma = 0 kinetic factor (the lower bound
    then carries the explicit factor from kinetic_lower_factor).
    """
    if kernel.gamma >= 0:
        return kernel
    return CollisionKernel(kernel.dimension, 0.0, kernel.nu, kernel.b0, kernel.c_phi, kernel.C_phi,
                           False, kernel.profile, kernel.profile_name, kernel.lipschitz, kernel.rtol)


def calibrate_spreading_cst(kernel, sample_plan, samples=20_000, seed=0, exponent_mode="sharp",
                            safety=1.5, theta_min=None):
    """min over the plan of Q+ / (ell_b c_phi r^{N-3} R^{3+gamma} xi^e), divided by safety.

    Returns (cst, records).
    """
    if not sample_plan:
        raise DegenerateSample("empty sample plan")
    k = calibration_kernel(kernel)
    ell_b = angular_infimum_ellb(kernel)
    records = []
    best = math.inf
    for i, (r, R, xi, v) in enumerate(sample_plan):
        formula = spreading_bound(k, r, R, xi, 1.0, ell_b, exponent_mode=exponent_mode).coefficient
        if formula <= 0:
            raise DegenerateSample(f"sample {i}: formula denominator is {formula}")
        est, se = qplus_indicator_quadrature(k, r, R, v, samples, seed + i, form="lower",
                                             theta_min=theta_min)
        ratio = est / formula
        best = min(best, ratio)
        records.append({"r": r, "R": R, "xi": xi, "v": list(v), "qplus": est, "se": se,
                        "formula": formula, "ratio": ratio})
    return best / safety, records
