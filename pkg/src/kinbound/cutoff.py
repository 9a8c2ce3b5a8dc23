"""Spreading cascade for cutoff kernels and the Maxwellian certificate it yields.

Heights are tracked as logarithms: they decay doubly exponentially.
Step n -> n+1 (interval [tau - tau/2^{n+1}, tau] shrinks by half):

    a_{n+1} = C_e (tau / 2^{n+2}) a_n^2 S(delta_n, xi_n)
    delta_{n+1} = sqrt(2) delta_n (1 - xi_n),   xi_n = xi^{n+1}

with S the spreading height for two balls of radius delta_n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import loss_bound_CL
from .certificate import Certificate
from .errors import DegenerateEnvelope, InvalidBounds, NonContraction
from .geometry import xi_exponent
from .kernel import angular_infimum_ellb, angular_mass_nb, kernel_summary
from .upheaval import DeltaRule, UpheavalSeed, bracket, upheaval_cutoff

ALPHA_CAP = 1.0 - 1e-6


@dataclass(frozen=True)
class CascadeConfig:
    xi: float = 0.5
    n_max: int = 48
    xi_exponent_mode: str = "stated"
    early_stop: bool = True

    def __post_init__(self):
        if not (0 < self.xi < 1):
            raise ValueError("xi must lie in (0, 1)")
        if self.n_max < 8:
            raise ValueError("n_max must be at least 8")
        if self.xi_exponent_mode not in ("stated", "proofstep"):
            raise ValueError("xi_exponent_mode must be 'stated' or 'proofstep'")

    def exponent(self, N):
        return xi_exponent(N, "sharp" if self.xi_exponent_mode == "stated" else "lemma")


@dataclass
class CascadeTrace:
    log_a: list
    delta: list
    c_delta: float
    log_C_e: float
    log_alpha: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.log_a) - 1

    def rows(self):
        return [(i, la, d) for i, (la, d) in enumerate(zip(self.log_a, self.delta))]

    def to_csv(self, extra=None):
        cols = ["n", "log_a_n", "delta_n"] + (list(extra) if extra else [])
        lines = [",".join(cols)]
        for i, (la, d) in enumerate(zip(self.log_a, self.delta)):
            vals = [str(i), repr(float(la)), repr(float(d))]
            if extra:
                vals += [repr(float(extra[c][i])) for c in extra]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def A_n(n):
    """Exponent bookkeeping constant 2^n - (n + 1)."""
    return 2 ** n - (n + 1)


def euler_product(xi, tol=1e-18):
    """prod_{k>=1} (1 - xi^k), summed in log form until terms drop below tol."""
    s = 0.0
    k = 1
    while True:
        t = xi ** k
        s += math.log1p(-t)
        if t < tol:
            break
        k += 1
    return math.exp(s)


def radii(delta0, xi, n_max):
    d = [float(delta0)]
    for n in range(n_max):
        d.append(math.sqrt(2.0) * d[-1] * (1.0 - xi ** (n + 1)))
    return d


def log_kinetic_factor(kernel, R):
    g = kernel.gamma
    if g >= 0:
        return g * math.log(R)
    lr = g * math.log(2.0 * R)
    return min(0.0, lr) if kernel.mollified else lr


def log_spreading(kernel, delta, log_xi_n, cst_spread, ell_b, exponent):
    """log of cst ell_b c_phi delta^N K(delta) xi_n^e (quadratic spreading height)."""
    N = kernel.dimension
    return (math.log(cst_spread * ell_b * kernel.c_phi) + N * math.log(delta)
            + log_kinetic_factor(kernel, delta) + exponent * log_xi_n)


def ce_terms(seed, gamma_plus, n_max=48):
    """2^{-(n+1)} <R0 + delta0 2^{(n+1)/2}>^{gamma+} for n = 0..n_max+63."""
    return [2.0 ** (-(n + 1)) * bracket(seed.R0 + seed.delta0 * 2.0 ** ((n + 1) / 2.0)) ** gamma_plus
            for n in range(n_max + 64)]


def ce_constant(seed, kernel, bounds, csts, n_b=None, n_max=48):
    """Uniform lower bound of the per-step damping exp(-C_L <v>^{gamma+} tau / 2^{n+1}).

    On step n the velocity lies in B(0, R0 + delta_{n+1}) with delta_{n+1} <=
    delta0 2^{(n+1)/2}; the sup over n sits at n = 0 because
    <R0 + sqrt(2) x> <= sqrt(2) <R0 + x> and gamma+ <= 1.
    """
    C_L = loss_bound_CL(kernel, bounds, csts.cst_CL, n_b)
    return math.exp(-C_L * seed.tau * max(ce_terms(seed, kernel.gamma_plus, n_max)))


def ce_constant_bare(C_L, R0, delta0, tau, gamma_plus):
    """The form exp(-C_L <R0>^{gamma+} tau delta0^{gamma+} / 2), which omits the ball growth."""
    return math.exp(-C_L * bracket(R0) ** gamma_plus * tau * delta0 ** gamma_plus / 2.0)


def sup_location(gamma_plus, n_range=65):
    """argmax over n of 2^{n gamma+/2 - n - 1}."""
    vals = [2.0 ** (n * gamma_plus / 2.0 - n - 1) for n in range(n_range)]
    return int(np.argmax(vals))


def cutoff_step(log_a, delta, n, p):
    """One recursion step in log space; p holds kernel, constants and mode."""
    log_xi_n = (n + 1) * math.log(p["xi"])
    return (p["log_C_e"] + math.log(p["tau"]) - (n + 2) * math.log(2.0) + 2.0 * log_a
            + log_spreading(p["kernel"], delta, log_xi_n, p["cst_spread"], p["ell_b"], p["exponent"]))


def step_params(kernel, seed, csts, config, log_C_e, ell_b):
    return {"kernel": kernel, "xi": config.xi, "tau": seed.tau, "log_C_e": log_C_e,
            "cst_spread": csts.cst_spread, "ell_b": ell_b, "exponent": config.exponent(kernel.dimension)}


def run_cascade(seed: UpheavalSeed, kernel, bounds, config: CascadeConfig, csts, n_b=None, ell_b=None):
    if seed.regime != "cutoff":
        raise InvalidBounds("run_cascade needs a cutoff seed")
    n_b = angular_mass_nb(kernel) if n_b is None else n_b
    ell_b = angular_infimum_ellb(kernel) if ell_b is None else ell_b
    C_L = loss_bound_CL(kernel, bounds, csts.cst_CL, n_b)
    terms = ce_terms(seed, kernel.gamma_plus, config.n_max)
    j = int(np.argmax(terms))
    log_C_e = -C_L * seed.tau * terms[j]
    p = step_params(kernel, seed, csts, config, log_C_e, ell_b)
    delta = radii(seed.delta0, config.xi, config.n_max)
    log_a = [seed.log_a0]
    prev_alpha = None
    stopped = None
    for n in range(config.n_max):
        log_a.append(cutoff_step(log_a[-1], delta[n], n, p))
        if config.early_stop and n >= 8:
            la = shifted_log_alpha(log_a, 2.0)
            if prev_alpha is not None and abs(la - prev_alpha) <= 1e-12 * abs(la):
                stopped = n + 1
                break
            prev_alpha = la
    delta = delta[:len(log_a)]
    c_delta = seed.delta0 * euler_product(config.xi)
    meta = {"C_L": C_L, "C_e": math.exp(log_C_e), "log_C_e": log_C_e, "C_e_argmax_n": j,
            "C_e_bare_form": ce_constant_bare(C_L, seed.R0, seed.delta0, seed.tau, kernel.gamma_plus),
            "dimension": kernel.dimension,
            "xi": config.xi, "xi_exponent": p["exponent"], "xi_exponent_mode": config.xi_exponent_mode,
            "n_max": config.n_max, "early_stop_at": stopped, "ell_b": ell_b, "n_b": n_b}
    return CascadeTrace(log_a, delta, c_delta, log_C_e, None, meta)


def shifted_log_alpha(log_a, base):
    """min(log a_0, min_n log a_{n+1} / base^n) over the recorded trace."""
    vals = [log_a[0]] + [log_a[n + 1] / base ** n for n in range(len(log_a) - 1)]
    return min(vals)


def tail_log_alpha(trace, kernel, config, csts, tau):
    """Lower bound for log a_{n+1} / 2^n over all n beyond the trace.

    With l_n = log a_n / 2^n, l_{n+1} = l_n + c_n / 2^{n+1} and c_n >= A + B n
    for explicit A, B (delta_n >= c_delta 2^{n/2} for the growing factor,
    delta_n <= delta0 2^{n/2} for the decaying one), so
    inf_{m >= n} l_m >= l_n + (min(A,0) + min(B,0)(n+1)) / 2^n.
    """
    N, g = kernel.dimension, kernel.gamma
    ell_b = trace.meta["ell_b"]
    e = config.exponent(N)
    lx = math.log(config.xi)
    cd, d0 = trace.c_delta, trace.delta[0]
    # c_n = log C_e + log tau - (n+2) log2 + log(cst ell_b c_phi) + N log delta_n + logK(delta_n) + e (n+1) log xi
    A = trace.log_C_e + math.log(tau) - 2 * math.log(2) + math.log(csts.cst_spread * ell_b * kernel.c_phi) + e * lx
    B = -math.log(2) + e * lx
    A += N * math.log(cd)
    B += N * 0.5 * math.log(2)
    if g >= 0:
        A += g * math.log(cd)
        B += g * 0.5 * math.log(2)
    elif kernel.mollified:
        # min(0, gamma log(2 delta)) >= gamma log(2 delta0) + gamma (n/2) log 2 when that is negative
        A += min(0.0, g * math.log(2 * d0))
        B += g * 0.5 * math.log(2)
    else:
        A += g * math.log(2 * d0)
        B += g * 0.5 * math.log(2)
    n = trace.n
    l_n = trace.log_a[n] / 2.0 ** n
    lower_l = l_n + (min(A, 0.0) + min(B, 0.0) * (n + 1)) / 2.0 ** n
    # log a_{m+1} / 2^m = 2 l_{m+1}
    return 2.0 * lower_l


def envelope(trace: CascadeTrace, seed, config, kernel=None, csts=None, grid_points=4096):
    """Maxwellian (rho, theta) below the step envelope of the trace.

    alpha satisfies a_0 >= alpha and a_{n+1} >= alpha^{2^n} for every n
    (recorded steps plus the tail bound), so with
    exp(-c_delta^2 / (2 theta)) = alpha and peak min(a_0, 1) the Maxwellian
    stays below a_n on every shell delta_{n-1} < |v - vbar| <= delta_n.
    Returns dict with log_rho, theta, log_alpha, shrink, branch flags.
    """
    if not trace.c_delta > 0 or not math.isfinite(seed.log_a0):
        raise DegenerateEnvelope("c_delta and a0 must be positive")
    N = kernel.dimension if kernel is not None else trace.meta["dimension"]
    la = shifted_log_alpha(trace.log_a, 2.0)
    if kernel is not None and csts is not None:
        la = min(la, tail_log_alpha(trace, kernel, config, csts, seed.tau))
    branch = {}
    if la >= math.log(ALPHA_CAP):
        la = math.log(ALPHA_CAP)
        branch["alpha_clamped"] = True
    if not math.isfinite(la):
        raise DegenerateEnvelope("cascade heights underflowed to zero")
    theta = trace.c_delta ** 2 / (2.0 * (-la))
    log_peak = min(seed.log_a0, 0.0)
    log_rho = log_peak + 0.5 * N * math.log(2 * math.pi * theta)
    shrink = domination_shrink(trace, log_peak, theta, grid_points)
    log_rho -= math.log(shrink)
    # provenance: the closed-form contraction factor lambda = 2^{(gamma+N)/2} xi^{N/2+1} / 2
    gam = kernel.gamma if kernel is not None else 0.0
    lam = 2.0 ** ((gam + N) / 2.0) * config.xi ** (N / 2.0 + 1.0) / 2.0
    branch["lambda_closed_form"] = lam
    branch["lambda_gt_1"] = lam > 1
    trace.log_alpha = la
    return {"log_rho": log_rho, "theta": theta, "log_alpha": la, "shrink": shrink,
            "log_peak": log_peak - math.log(shrink), "branch": branch}


def step_envelope_log(log_a, delta, s):
    """log of max{a_n : delta_n >= s} (the cascade's radial lower bound), -inf beyond."""
    la = np.asarray(log_a, dtype=float)
    d = np.asarray(delta, dtype=float)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.full(s.shape, -np.inf)
    for n in range(len(la)):
        out = np.where(s <= d[n], np.maximum(out, la[n]), out)
    return out


def domination_shrink_profile(log_a, delta, log_profile, grid_points=4096):
    """Largest ratio profile / step envelope on a radial grid out to max delta_n (>= 1).

    The grid holds the anchors delta_n themselves plus a uniform sampling.
    """
    d = np.asarray(delta, dtype=float)
    s = np.concatenate([np.linspace(0.0, d.max(), grid_points), d])
    env = step_envelope_log(log_a, d, s)
    excess = float(np.max(log_profile(s) - env))
    if excess <= 0:
        return 1.0
    return math.exp(excess) if excess < 709 else math.inf


def domination_shrink(trace, log_peak, theta, grid_points=4096):
    return domination_shrink_profile(trace.log_a, trace.delta,
                                     lambda s: log_peak - s * s / (2 * theta), grid_points)


def uniformize(log_rho, theta, R0, N):
    """(log rho', theta') with theta' = theta/2, rho' = rho e^{-R0^2/theta} / 2^{N/2}."""
    return log_rho - R0 * R0 / theta - 0.5 * N * math.log(2.0), theta / 2.0


def check_trace(trace, log_alpha, base=2.0, shift=1):
    """Indices n >= shift where log a_n < base^{n - shift} log alpha (empty when the claim holds).

    shift = 1 checks the shifted chain a_{n+1} >= alpha^{base^n} used by the
    envelope; shift = 0 checks a_n >= alpha^{base^n}.
    """
    bad = []
    if trace.log_a[0] < log_alpha:
        bad.append(0)
    for n in range(max(shift, 1), len(trace.log_a)):
        if trace.log_a[n] < base ** (n - shift) * log_alpha:
            bad.append(n)
    return bad


def certify_cutoff(kernel, bounds, tau, config=None, csts=None, delta_rule=None):
    from .upheaval import UniversalConstants
    if kernel.nu >= 0:
        raise InvalidBounds("the Maxwellian certificate needs a cutoff kernel (nu < 0)")
    config = config or CascadeConfig()
    csts = csts or UniversalConstants()
    bounds.validate()
    n_b = angular_mass_nb(kernel)
    ell_b = angular_infimum_ellb(kernel)
    seed = upheaval_cutoff(kernel, bounds, tau, csts, delta_rule, n_b, ell_b)
    trace = run_cascade(seed, kernel, bounds, config, csts, n_b, ell_b)
    env = envelope(trace, seed, config, kernel, csts)
    bad = check_trace(trace, env["log_alpha"])
    if bad:
        raise NonContraction(f"a_n below alpha^(2^n) at n = {bad}")
    log_rho_p, theta_p = uniformize(env["log_rho"], env["theta"], seed.R0, kernel.dimension)
    prov = {
        "kernel": kernel_summary(kernel), "bounds": bounds.to_dict(), "constants": csts.to_dict(),
        "delta0_rule": (delta_rule or DeltaRule()).to_dict(), "seed": seed.to_dict(),
        "xi": config.xi, "n_max": config.n_max, "xi_exponent_mode": config.xi_exponent_mode,
        "alpha_log": env["log_alpha"], "c_delta": trace.c_delta, "theta": env["theta"],
        "log_rho": env["log_rho"], "domination_shrink": env["shrink"], "branch_flags": env["branch"],
        "cascade": trace.meta, "valid_for": "t >= tau under time-uniform bounds",
        "vbar": "any point of B(0, R0)",
    }
    cert = Certificate("maxwellian", kernel.dimension, tau, seed.R0, log_rho_prime=log_rho_p,
                       theta_prime=theta_p, provenance=prov)
    return cert, trace, seed
