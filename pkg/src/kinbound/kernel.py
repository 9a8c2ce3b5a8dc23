"""Collision kernels B = Phi(|z|) b(cos theta) and their angular integrals.

Profiles are vectorized callables of the deviation angle theta in (0, pi].
All angular integrals reduce to one-dimensional integrals in theta weighted by
sin^{N-2}(theta) and the surface measure of S^{N-2}.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import (InvalidEps, NonIntegrableAngular, NonPositiveInfimum,
                     QuadratureFailure)

DEFAULT_RTOL = 1e-10
# below this angle the grazing integrals switch to the power-law tail form
EPS_TAIL = 1e-6
ELL_B_POINTS = 4096


def sphere_area(n):
    """Surface measure of the unit sphere S^n in R^{n+1}; S^0 has measure 2."""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / math.gamma((n + 1) / 2.0)


def ball_volume(N, R=1.0):
    return math.pi ** (N / 2.0) / math.gamma(N / 2.0 + 1.0) * R ** N


def one_minus_cos(theta):
    return 2.0 * np.sin(0.5 * theta) ** 2


# --- angular profiles -------------------------------------------------------

def constant_profile(value=1.0):
    def b(theta):
        return np.full(np.shape(theta), float(value))
    return b


def power_law_profile(N, nu, b0):
    """b0 theta^{-1-nu} cos^2(theta/2) / (2 sin(theta/2))^{N-2}.

    Then b(theta) sin^{N-2}(theta) = b0 theta^{-1-nu} cos^N(theta/2): the
    grazing singularity is exact and the profile vanishes smoothly at pi.
    """
    def b(theta):
        theta = np.asarray(theta, dtype=float)
        return (b0 * theta ** (-1.0 - nu) * np.cos(0.5 * theta) ** 2
                / (2.0 * np.sin(0.5 * theta)) ** (N - 2))
    return b


def tabulated_profile(thetas, values):
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    if thetas.ndim != 1 or thetas.shape != values.shape or len(thetas) < 2:
        raise ValueError("tabulated profile needs two equal-length columns")
    if np.any(np.diff(thetas) <= 0):
        raise ValueError("tabulated profile angles must be strictly increasing")

    def b(theta):
        return np.interp(theta, thetas, values)
    return b


def load_profile_table(path):
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (theta, b)")
    return tabulated_profile(data[:, 0], data[:, 1])


def inverse_power_law_exponents(s, N=3):
    """(gamma, nu) for interaction potentials 1/r^{s-1} in dimension N."""
    return (s - (2 * N - 1)) / (s - 1), (N - 1) / (s - 1)


# --- the kernel ---------------------------------------------------------------

@dataclass(frozen=True)
class CollisionKernel:
    dimension: int
    gamma: float
    nu: float
    b0: float
    c_phi: float = 1.0
    C_phi: float = 1.0
    mollified: bool = False
    profile: Callable = field(default=None, compare=False, repr=False)
    profile_name: str = "custom"
    lipschitz: float | None = None
    rtol: float = DEFAULT_RTOL

    def __post_init__(self):
        N = self.dimension
        if int(N) != N or N < 2:
            raise ValueError("dimension must be an integer >= 2")
        if not (-N < self.gamma <= 1):
            raise ValueError("gamma must lie in (-N, 1]")
        if not self.nu < 2:
            raise ValueError("nu must be < 2")
        if not (0 < self.c_phi <= self.C_phi):
            raise ValueError("need 0 < c_phi <= C_phi")
        if self.b0 <= 0:
            raise ValueError("b0 must be positive")
        if self.profile is None:
            raise ValueError("an angular profile is required")

    @property
    def gamma_plus(self):
        return max(self.gamma, 0.0)

    @property
    def gamma_tilde(self):
        return max(2.0 + self.gamma, 0.0)

    @property
    def cutoff(self):
        return self.nu < 0

    def b(self, theta):
        return self.profile(theta)

    def phi(self, r, form="upper"):
        """Kinetic factor; 'upper' uses C_phi and 'lower' uses c_phi."""
        c = self.C_phi if form == "upper" else self.c_phi
        r = np.asarray(r, dtype=float)
        if self.mollified:
            return c * np.where(r >= 1.0, np.maximum(r, 1.0) ** self.gamma, 1.0)
        with np.errstate(divide="ignore"):
            return c * r ** self.gamma

    def scaled(self, factor):
        """Same kernel with the angular profile multiplied by factor."""
        prof = self.profile
        return CollisionKernel(
            self.dimension, self.gamma, self.nu, self.b0 * factor, self.c_phi,
            self.C_phi, self.mollified, lambda t: factor * prof(t),
            self.profile_name, None if self.lipschitz is None else self.lipschitz * factor,
            self.rtol)

    def truncated(self, theta_min):
        """Kernel with b set to 0 below theta_min (the cutoff part)."""
        prof = self.profile
        return CollisionKernel(
            self.dimension, self.gamma, -1.0, self.b0, self.c_phi, self.C_phi,
            self.mollified, lambda t: np.where(np.asarray(t) >= theta_min, prof(t), 0.0),
            self.profile_name + f"|theta>={theta_min:g}", self.lipschitz, self.rtol)


def hard_spheres(N=3, b=1.0, gamma=1.0, **kw):
    # b sin^{N-2} theta ~ b theta^{N-2} near 0, i.e. nu = -(N-1)
    return CollisionKernel(N, gamma, -(N - 1.0), b, profile=constant_profile(b),
                           profile_name="constant", **kw)


def maxwell_molecules(N=3, b=1.0, **kw):
    return hard_spheres(N, b, gamma=0.0, **kw)


def power_law_kernel(N, gamma, nu, b0=1.0, **kw):
    return CollisionKernel(N, gamma, nu, b0, profile=power_law_profile(N, nu, b0),
                           profile_name="power_law", **kw)


# --- quadrature ---------------------------------------------------------------

def _quad(fun, lo, hi, rtol):
    val, err = integrate.quad(fun, lo, hi, epsabs=0.0, epsrel=rtol * 0.1, limit=400)
    if not np.isfinite(val) or err > rtol * abs(val) and err > 1e-300:
        raise QuadratureFailure(f"angular quadrature on [{lo}, {hi}]: value {val}, error {err}")
    return val, err


def angular_integral(kernel, lo=0.0, hi=math.pi, weight=None, rtol=None):
    """|S^{N-2}| * int_lo^hi b(theta) w(theta) sin^{N-2} theta dtheta.

    The part below theta = 1 is integrated in s = log(theta), which turns every
    integrable power singularity at 0 into an exponentially decaying tail.
    """
    rtol = kernel.rtol if rtol is None else rtol
    N = kernel.dimension
    w = weight if weight is not None else (lambda t: 1.0)

    def g(t):
        return float(kernel.b(t) * w(t) * math.sin(t) ** (N - 2))

    def gs(s):
        return g(math.exp(s)) * math.exp(s)

    total = 0.0
    split = min(1.0, hi)
    if lo > 0 and lo < split:
        total += _quad(gs, math.log(lo), math.log(split), rtol)[0]
    elif lo == 0:
        # integrate down to t0 and close with the power-law tail g t0 / rate,
        # pushing t0 lower until the tail is negligible
        s0 = math.log(split) - 20.0
        main = _quad(gs, s0, math.log(split), rtol)[0]
        while True:
            f0, f1, f2 = gs(s0), gs(s0 - 1.0), gs(s0 - 2.0)
            rate = math.log(f0 / f1) if f0 > 0 and f1 > 0 else math.inf
            if not rate > 0:
                raise QuadratureFailure("angular integrand not integrable at theta = 0")
            tail = f0 / rate
            # a pure power law below s0 makes the closed-form tail exact
            rate2 = math.log(f1 / f2) if f1 > 0 and f2 > 0 else math.inf
            if tail <= 1e-3 * rtol * abs(main) or abs(rate2 - rate) <= 1e-3 * rtol * rate or s0 < -600:
                break
            s_new = s0 - max(40.0, 30.0 / rate)
            s_new = max(s_new, -650.0)
            main += _quad(gs, s_new, s0, rtol)[0]
            s0 = s_new
        total += main + tail
    if hi > max(lo, 1.0):
        v, _ = _quad(g, max(lo, 1.0), hi, rtol)
        total += v
    return sphere_area(N - 2) * total


def angular_mass_nb(kernel):
    if kernel.nu >= 0:
        raise NonIntegrableAngular(
            f"n_b diverges for nu = {kernel.nu} >= 0; split the kernel first")
    return angular_integral(kernel)


def momentum_transfer_mb(kernel):
    return angular_integral(kernel, weight=lambda t: one_minus_cos(t))


def _tail_ratio(kernel):
    """max of b sin^{N-2} theta^{1+nu} / b0 sampled below EPS_TAIL (at least 1)."""
    th = np.geomspace(EPS_TAIL * 1e-6, EPS_TAIL, 64)
    r = kernel.b(th) * np.sin(th) ** (kernel.dimension - 2) * th ** (1 + kernel.nu) / kernel.b0
    return max(1.0, float(np.max(r)))


def split_kernel(kernel, eps):
    """(n of b 1_{theta>=eps}, m of b 1_{theta<=eps})."""
    if not (0 < eps < math.pi / 4):
        raise InvalidEps(f"eps = {eps} outside (0, pi/4)")
    if not (0 <= kernel.nu < 2):
        raise NonIntegrableAngular("split_kernel needs nu in [0, 2)")
    n_S = angular_integral(kernel, eps, math.pi)
    m_R = angular_integral(kernel, 0.0, eps, weight=one_minus_cos)
    return n_S, m_R


@functools.lru_cache(maxsize=64)
def _reference_mass(kernel):
    return angular_integral(kernel, EPS_TAIL, math.pi)


def split_kernel_log(kernel, log_eps):
    """log n_S and log m_R for eps = exp(log_eps), valid for arbitrarily small eps.

    Below EPS_TAIL the quadrature is replaced by upper bounds from the power
    law b sin^{N-2} <= ratio * b0 theta^{-1-nu} and 1 - cos <= theta^2 / 2.
    """
    if log_eps >= math.log(EPS_TAIL):
        n_S, m_R = split_kernel(kernel, math.exp(log_eps))
        return math.log(n_S), math.log(m_R)
    nu = kernel.nu
    area = sphere_area(kernel.dimension - 2)
    coef = area * kernel.b0 * _tail_ratio(kernel)
    n_ref = _reference_mass(kernel)
    lt = math.log(EPS_TAIL)
    if nu == 0:
        extra = math.log(coef * (lt - log_eps))
    else:
        # coef (eps^{-nu} - EPS_TAIL^{-nu}) / nu in log form
        extra = math.log(coef / nu) - nu * log_eps + math.log1p(-math.exp(nu * (log_eps - lt)))
    log_n = float(np.logaddexp(math.log(n_ref), extra))
    log_m = math.log(coef / (2.0 * (2.0 - nu))) + (2.0 - nu) * log_eps
    return log_n, log_m


def split_asymptotics(kernel, eps):
    """Leading small-eps forms of (n_S, m_R) for b sin^{N-2} ~ b0 theta^{-1-nu}."""
    area = sphere_area(kernel.dimension - 2)
    nu, b0 = kernel.nu, kernel.b0
    n = area * b0 * (abs(math.log(eps)) if nu == 0 else eps ** (-nu) / nu)
    m = area * b0 * eps ** (2 - nu) / (2.0 * (2.0 - nu))
    return n, m


def grazing_coefficient(kernel):
    """A with m_R(eps) ~ A eps^{2-nu}."""
    return sphere_area(kernel.dimension - 2) * kernel.b0 * _tail_ratio(kernel) / (2.0 * (2.0 - kernel.nu))


def angular_infimum_ellb(kernel, npts=ELL_B_POINTS):
    """Certified lower bound for inf of b over [pi/4, 3pi/4]."""
    th = np.linspace(math.pi / 4, 3 * math.pi / 4, npts)
    vals = np.asarray(kernel.b(th), dtype=float) * np.ones_like(th)
    lo = float(vals.min())
    if not lo > 0:
        raise NonPositiveInfimum(f"sampled minimum of b on [pi/4, 3pi/4] is {lo}")
    h = th[1] - th[0]
    if kernel.lipschitz is not None:
        L = kernel.lipschitz
    else:
        L = 2.0 * float(np.max(np.abs(np.diff(vals)))) / h
    cert = lo - L * h / 2.0
    if not cert > 0:
        raise NonPositiveInfimum(f"b on [pi/4, 3pi/4] too close to 0 to certify ({lo}, margin {L * h / 2})")
    return cert


def singularity_amplitude_check(kernel, thetas=(1e-3, 1e-4, 1e-5), rtol=0.05):
    """Sampled b sin^{N-2} theta^{1+nu} / b0 near 0; True if all within rtol of 1."""
    th = np.asarray(thetas, dtype=float)
    r = kernel.b(th) * np.sin(th) ** (kernel.dimension - 2) * th ** (1 + kernel.nu) / kernel.b0
    return bool(np.all(np.abs(r - 1) <= rtol)), r


def positivity_flags(kernel, npts=2048):
    """Angles in (0, pi) where the profile is not positive (flagged, not rejected)."""
    th = np.linspace(0, math.pi, npts + 2)[1:-1]
    vals = np.asarray(kernel.b(th)) * np.ones_like(th)
    return th[vals <= 0]


def kernel_summary(kernel):
    return {
        "dimension": kernel.dimension, "gamma": kernel.gamma, "nu": kernel.nu,
        "b0": kernel.b0, "c_phi": kernel.c_phi, "C_phi": kernel.C_phi,
        "mollified": kernel.mollified, "profile": kernel.profile_name,
    }

