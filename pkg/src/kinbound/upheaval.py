"""Seeds for the spreading cascades: a ball B(vbar, delta0) with vbar in B(0, R0)
on which the solution is bounded below by a0 after a waiting time tau.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bounds import (analytic_cst_loss, analytic_cst_s, l1_weighted_bound, loss_bound_CL,
                     q1_bound_coefficient, s_bound_CS, uses_lp_case)
from .errors import InvalidBounds, NoAdmissibleEps
from .kernel import ball_volume, split_kernel_log


@dataclass(frozen=True)
class UniversalConstants:
    """Numeric values for the universal constants of the lower-bound lemmas."""
    cst_CL: float = 1.0
    cst_spread: float = 1.0
    cst_up: float = 1.0
    cst_S: float = 1.0
    cst_Q1: float = 1.0
    source: str = "unspecified"

    def to_dict(self):
        return asdict(self)


def analytic_constants(kernel, bounds, cst_spread, cst_up, cst_Q1=1.0, source="analytic"):
    """Loss and grazing-cancellation constants from the elementary inequalities in bounds."""
    cL = analytic_cst_loss(kernel, bounds.p_exponent if uses_lp_case(kernel) else None)
    return UniversalConstants(cL, cst_spread, cst_up, cL * analytic_cst_s(kernel), cst_Q1, source)


@dataclass(frozen=True)
class DeltaRule:
    """How the seed radius delta0 is chosen in the cutoff regime.

    'user': delta0 = value.
    'entropy': delta0 = R0 exp(-kappa1 (H + kappa0 E) / rho_min), a heuristic
    whose validity is checked against actual solutions, not proved.
    """
    kind: str = "entropy"
    value: float | None = None
    kappa0: float = 0.5
    kappa1: float = 0.5

    def delta0(self, R0, bounds):
        if self.kind == "user":
            if self.value is None or not self.value > 0:
                raise InvalidBounds("user delta0 rule needs a positive value")
            return float(self.value)
        if self.kind == "entropy":
            if bounds.H is None:
                raise InvalidBounds("entropy delta0 rule needs the entropy bound H")
            return R0 * math.exp(-self.kappa1 * (bounds.H + self.kappa0 * bounds.E) / bounds.rho_min)
        raise ValueError(f"unknown delta0 rule {self.kind!r}")

    def to_dict(self):
        d = asdict(self)
        d["heuristic"] = self.kind == "entropy"
        return d


@dataclass(frozen=True)
class UpheavalSeed:
    R0: float
    delta0: float
    eta0: float
    a0: float
    tau: float
    regime: str
    eps0: float | None = None
    tau_max: float | None = None
    notes: dict = field(default_factory=dict)
    log_a0: float | None = None

    def __post_init__(self):
        # a0 may underflow to 0 for long waiting times; log_a0 is then authoritative
        if self.log_a0 is None:
            if not self.a0 > 0:
                raise InvalidBounds(f"seed field a0 = {self.a0} must be positive")
            object.__setattr__(self, "log_a0", math.log(self.a0))
        if not math.isfinite(self.log_a0):
            raise InvalidBounds(f"seed log_a0 = {self.log_a0} must be finite")
        for name in ("R0", "delta0", "eta0", "tau"):
            if not getattr(self, name) > 0:
                raise InvalidBounds(f"seed field {name} = {getattr(self, name)} must be positive")
        if self.log_a0 > math.log(self.eta0) + 1e-12:
            raise InvalidBounds(f"seed a0 = {self.a0} exceeds eta0 = {self.eta0}")
        if self.delta0 > self.R0 * (1 + 1e-12):
            raise InvalidBounds(f"seed delta0 = {self.delta0} exceeds R0 = {self.R0}")
        if self.regime == "noncutoff":
            if self.eps0 is None or self.tau_max is None or self.tau > self.tau_max * (1 + 1e-12):
                raise InvalidBounds("non-cutoff seed needs eps0, tau_max and tau <= tau_max")

    def to_dict(self):
        return asdict(self)


def bracket(x):
    """<x> = sqrt(1 + x^2)."""
    return math.sqrt(1.0 + x * x)


def localization_radius(kernel, bounds):
    R0 = math.sqrt(2.0 * bounds.E / bounds.rho_min)
    if kernel.gamma < 0:
        R0 = max(R0, 1.0)
    return R0


def double_duhamel_factor(c, tau):
    """e^{-c tau} (1 - e^{-c tau/2})^2 / (2 c^2), with its c -> 0 limit tau^2/8."""
    if c * tau < 1e-8:
        return tau * tau / 8.0 * math.exp(-c * tau)
    return math.exp(-c * tau) * math.expm1(-0.5 * c * tau) ** 2 / (2.0 * c * c)


def log_double_duhamel_factor(c, tau):
    if c * tau < 1e-8:
        return 2.0 * math.log(tau) - math.log(8.0) - c * tau
    return -c * tau + 2.0 * math.log(-math.expm1(-0.5 * c * tau)) - math.log(2.0 * c * c)


def upheaval_cutoff(kernel, bounds, tau, csts, delta_rule=None, n_b=None, ell_b=None):
    from .kernel import angular_infimum_ellb, angular_mass_nb
    bounds.validate()
    if not tau > 0:
        raise InvalidBounds("tau must be positive")
    delta_rule = delta_rule or DeltaRule()
    n_b = angular_mass_nb(kernel) if n_b is None else n_b
    ell_b = angular_infimum_ellb(kernel) if ell_b is None else ell_b
    N, g = kernel.dimension, kernel.gamma
    R0 = localization_radius(kernel, bounds)
    delta0 = min(delta_rule.delta0(R0, bounds), R0)
    eta0 = csts.cst_up * ell_b * kernel.c_phi * R0 ** (g - (3 * N - 1)) * delta0 ** (2 * N)
    C_L = loss_bound_CL(kernel, bounds, csts.cst_CL, n_b)
    # the seed ball lies in B(0, R0 + delta0)
    c = C_L * bracket(R0 + delta0) ** kernel.gamma_plus
    log_a0 = log_double_duhamel_factor(c, tau) + math.log(eta0)
    a0 = math.exp(log_a0)
    notes = {"C_L": C_L, "n_b": n_b, "ell_b": ell_b, "damping_rate": c,
             "delta0_rule": delta_rule.to_dict(), "weight_radius": "R0 + delta0",
             }
    return UpheavalSeed(R0, delta0, eta0, a0, tau, "cutoff", notes=notes, log_a0=log_a0)


def assemble_Cf(kernel, bounds, csts):
    """C_f with L <= C_f n_S <v>^{gamma+}, S <= C_f m_R <v>^{gamma+}, |Q1| <= C_f m_R <v>^{gamma~}.

    Each estimate is linear in its angular quantity, so C_f is the maximum of
    the three coefficients per unit n_S or m_R.
    """
    parts = {
        "loss": loss_bound_CL(kernel, bounds, csts.cst_CL, n_b=1.0),
        "cancellation": s_bound_CS(kernel, bounds, None, csts.cst_S, m_bR=1.0),
        "q1": q1_bound_coefficient(kernel, bounds, None, csts.cst_Q1, m_bR=1.0),
    }
    return max(parts.values()), parts


def largest_admissible_eps(kernel, log_target, eps_max=math.pi / 4 * (1 - 1e-9), log_eps_min=-700.0,
                           log_eps_max=None):
    """Largest eps <= eps_max with log m_R(eps) <= log_target, by bisection on log eps (returns log eps)."""
    hi = math.log(eps_max) if log_eps_max is None else log_eps_max
    if split_kernel_log(kernel, hi)[1] <= log_target:
        return hi
    lo = log_eps_min
    if split_kernel_log(kernel, lo)[1] > log_target:
        raise NoAdmissibleEps(f"m_R(eps) exceeds the target even at eps = exp({lo})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if split_kernel_log(kernel, mid)[1] <= log_target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, abs(lo)):
            break
    return lo


def upheaval_noncutoff(kernel, bounds, tau_request, csts, C_f=None):
    bounds.validate()
    if bounds.W is None:
        from .errors import MissingWBound
        raise MissingWBound("the non-cutoff seed needs the W^{2,inf} bound W")
    if not (0 <= kernel.nu < 2):
        raise InvalidBounds("non-cutoff seed needs nu in [0, 2)")
    l1_weighted_bound(bounds)
    N = kernel.dimension
    if C_f is None:
        C_f, parts = assemble_Cf(kernel, bounds, csts)
    else:
        parts = {}
    R0 = localization_radius(kernel, bounds)
    vol = ball_volume(N, R0)
    delta0 = bounds.rho_min / (4.0 * vol * bounds.W) if bounds.W > 0 else math.inf
    delta0 = min(delta0, R0)
    eta = bounds.rho_min / (4.0 * vol)
    w = bracket(R0 + delta0) ** kernel.gamma_plus
    omega = bracket(R0 + delta0) ** kernel.gamma_tilde
    # C_f m_R(eps0) omega <= eta / 4
    log_eps0 = largest_admissible_eps(kernel, math.log(eta / (4.0 * C_f * omega)))
    log_n, log_m = split_kernel_log(kernel, log_eps0)
    tau_max = math.log(2.0) / (C_f * (math.exp(log_m) + math.exp(log_n)) * w)
    tau = min(tau_request, tau_max, 1.0)
    notes = {"C_f": C_f, "C_f_parts": parts, "eta": eta, "weight_w": w, "weight_omega": omega,
             "log_eps0": log_eps0, "m_R_eps0": math.exp(log_m), "n_S_eps0": math.exp(log_n),
             "tau_request": tau_request, "tau_infeasible": tau_request > tau_max,
             "tau_clamped_to_one": tau_request > 1.0 and tau_max > 1.0}
    # post-hoc checks of the two smallness conditions
    notes["check_grazing"] = C_f * math.exp(log_m) * omega <= eta / 4.0 * (1 + 1e-9)
    notes["check_damping"] = math.exp(-C_f * (math.exp(log_m) + math.exp(log_n)) * w * tau) >= 0.5 * (1 - 1e-12)
    return UpheavalSeed(R0, delta0, eta / 4.0, eta / 4.0, tau, "noncutoff",
                        eps0=math.exp(log_eps0), tau_max=tau_max, notes=notes)


def calibrate_upheaval_cst(kernel, fixtures=None, delta_rule=None, radii=24, samples=4000,
                           outer_samples=20_000, probes=4, seed=0, safety=1.5):
    """Sampled value of the triple-gain constant on radial Maxwellian fixtures.

    For g = rho M_theta (radial), Q+(Q+(g1, g1), g1) is radial, so vbar = 0
    realizes the seed ball.  The inner Q+ is tabulated on a radial grid; the
    outer one is sampled at probe points of B(0, delta0).  Returns (cst, records).
    """
    from .geometry import qplus_mc
    from .kernel import angular_infimum_ellb
    from .bounds import AprioriBounds
    from .grid import maxwellian
    if fixtures is None:
        fixtures = [(1.0, 1.0), (1.0, 0.5), (2.0, 1.5)]
    delta_rule = delta_rule or DeltaRule()
    N = kernel.dimension
    ell_b = angular_infimum_ellb(kernel)
    rng = np.random.default_rng(seed)
    records = []
    best = math.inf
    for rho, theta in fixtures:
        e = rho * N * theta
        H = abs(rho * (N / 2.0 * math.log(2 * math.pi * theta) + N / 2.0 - math.log(rho)))
        bnd = AprioriBounds(rho_min=rho, E=rho + e, H=H)
        R0 = localization_radius(kernel, bnd)
        d0 = min(delta_rule.delta0(R0, bnd), R0)

        def g(x, rho=rho, theta=theta, R0=R0):
            return maxwellian(x, rho, theta) * (np.sum(x * x, axis=-1) <= R0 * R0)

        rgrid = np.linspace(0.0, math.sqrt(2.0) * R0, radii)
        inner = np.empty(radii)
        for i, r in enumerate(rgrid):
            v = np.zeros(N)
            v[0] = r
            inner[i] = max(qplus_mc(kernel, g, g, v, samples, rng, math.sqrt(theta))[0], 0.0)

        def F(x, rgrid=rgrid, inner=inner):
            return np.interp(np.linalg.norm(x, axis=-1), rgrid, inner, right=0.0)

        eta_formula = ell_b * kernel.c_phi * R0 ** (kernel.gamma - (3 * N - 1)) * d0 ** (2 * N)
        for k in range(probes):
            v = np.zeros(N)
            v[-1] = d0 * k / max(probes - 1, 1)
            val, se = qplus_mc(kernel, F, g, v, outer_samples, rng, math.sqrt(theta))
            # a conservative value: estimate minus three standard errors
            low = max(val - 3 * se, 0.0)
            ratio = low / eta_formula
            best = min(best, ratio)
            records.append({"rho": rho, "theta": theta, "R0": R0, "delta0": d0,
                            "v": v.tolist(), "value": val, "se": se, "ratio": ratio})
    return best / safety, records
