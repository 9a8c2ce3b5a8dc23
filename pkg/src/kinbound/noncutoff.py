"""Cascade for non-cutoff kernels (0 <= nu < 2) and its stretched-exponential certificate.

Each step splits b at an angle eps_n chosen so the grazing remainder costs at
most half of the spreading gain, and spends a fraction Delta_{n+1} of the
waiting time tau:

    a_{n+1} = tau Delta_{n+1} exp(-D_n) a_n^2 S(delta_n, xi_n) / 2
    D_n = C_f (m_R(eps_n) + n_S(eps_n)) <R0 + delta_{n+1}>^{gamma+} tau sum_{k > n} Delta_k

Everything is carried in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .certificate import Certificate
from .cutoff import ALPHA_CAP, domination_shrink_profile, euler_product, log_spreading, radii
from .errors import DegenerateEnvelope, InvalidKappa, InvalidSchedule, NonContraction
from .geometry import xi_exponent
from .kernel import angular_infimum_ellb, grazing_coefficient, kernel_summary, split_kernel_log
from .upheaval import (UniversalConstants, assemble_Cf, bracket, largest_admissible_eps,
                       upheaval_noncutoff)

EPS_MAX = math.pi / 4 * (1 - 1e-9)
LOG_HUGE = 1e250


def kappa_threshold(nu):
    return 2.0 + 2.0 * nu / (2.0 - nu)


def exponent_K(nu, kappa=None):
    """K = log kappa / log sqrt(2) (nu > 0), K = 2 (nu = 0)."""
    if nu == 0:
        return 2.0
    if kappa is None or not kappa > kappa_threshold(nu):
        raise InvalidKappa(f"kappa = {kappa} must exceed 2 + 2 nu/(2 - nu) = {kappa_threshold(nu):.6g}; "
                           f"equivalently K must exceed {K_threshold(nu):.6g}")
    K = math.log(kappa) / math.log(math.sqrt(2.0))
    if not K > K_threshold(nu):
        raise InvalidKappa(f"K = {K} does not exceed the threshold {K_threshold(nu)}")
    return K


def K_threshold(nu):
    """2 log(2 + 2 nu/(2 - nu)) / log 2."""
    return 2.0 * math.log(kappa_threshold(nu)) / math.log(2.0)


@dataclass(frozen=True)
class ScheduleConfig:
    kappa: float = 4.5
    beta: float = 2.25
    alpha_sched: float = 0.5
    beta_geo: float = 0.1
    n_max: int = 48
    xi: float = 0.5
    xi_exponent_mode: str = "stated"

    def validate(self, nu):
        if not (0 < self.xi < 1):
            raise InvalidSchedule("xi must lie in (0, 1)")
        if self.n_max < 8:
            raise InvalidSchedule("n_max must be at least 8")
        if self.xi_exponent_mode not in ("stated", "proofstep"):
            raise InvalidSchedule("xi_exponent_mode must be 'stated' or 'proofstep'")
        if nu == 0:
            if not (0 < self.beta_geo < 1):
                raise InvalidSchedule("beta_geo must lie in (0, 1)")
            return self
        exponent_K(nu, self.kappa)
        lo = 2.0 * nu / (2.0 - nu)
        if not (lo < self.beta < self.kappa - 2.0):
            raise InvalidSchedule(f"beta = {self.beta} must lie in ({lo:.6g}, kappa - 2 = {self.kappa - 2:.6g})")
        if not (0 < self.alpha_sched < 1):
            raise InvalidSchedule("alpha_sched must lie in (0, 1)")
        return self

    def exponent(self, N):
        return xi_exponent(N, "sharp" if self.xi_exponent_mode == "stated" else "lemma")


class Schedule:
    """Time fractions Delta_n (n >= 0) summing to 1, in log form.

    nu > 0: Delta_{n+1} = alpha^{beta kappa^n} / Sigma, Delta_0 = alpha^{beta/kappa} / Sigma,
            Sigma = sum_{k>=0} alpha^{beta kappa^{k-1}}.
    nu = 0: Delta_{n+1} = beta^n / Sigma with Sigma = sum_{k>=0} beta^{k-1}, i.e.
            Delta_{n+1} = beta^{n+1} (1 - beta), Delta_0 = 1 - beta.
    """

    def __init__(self, config: ScheduleConfig, nu, alpha=None):
        self.nu = nu
        self.config = config
        if nu == 0:
            self.lb = math.log(config.beta_geo)
            self.log1mb = math.log1p(-config.beta_geo)
        else:
            a = config.alpha_sched if alpha is None else alpha
            if not (0 < a < 1):
                raise InvalidSchedule("schedule base alpha must lie in (0, 1)")
            self.L = -math.log(a)
            self.log_sigma = self._log_terms_sum(-1)

    def _log_term(self, k):
        # log alpha^{beta kappa^{k-1}}
        return -self.config.beta * self.config.kappa ** (k - 1) * self.L

    def _log_terms_sum(self, k0):
        """log sum_{k >= k0 + 1} alpha^{beta kappa^{k-1}}."""
        terms = []
        k = k0 + 1
        while True:
            t = self._log_term(k)
            terms.append(t)
            if t - terms[0] < -745 or len(terms) > 400:
                break
            k += 1
        return float(logsumexp(terms))

    def log_delta(self, n):
        """log Delta_n."""
        if self.nu == 0:
            return self.log1mb + n * self.lb
        return self._log_term(n) - self.log_sigma

    def log_tail(self, n):
        """log sum_{k >= n} Delta_k."""
        if n == 0:
            return 0.0
        if self.nu == 0:
            return n * self.lb
        return self._log_terms_sum(n - 1) - self.log_sigma

    def total(self, n_terms=None):
        """sum_{n < n_terms} Delta_n + tail: 1 up to rounding."""
        n_terms = n_terms or self.config.n_max
        s = math.fsum(math.exp(self.log_delta(n)) for n in range(n_terms))
        return s + math.exp(self.log_tail(n_terms))

    def tail_ratio(self, n):
        """sum_{k >= n+1} Delta_k / Delta_{n+1}."""
        return math.exp(self.log_tail(n + 1) - self.log_delta(n + 1))


def schedule_delta(config, nu, n):
    """Delta_{n+1}."""
    return math.exp(Schedule(config.validate(nu), nu).log_delta(n + 1))


def epsilon_formula_log(log_a, log_S, log_Cf, log_omega, kernel):
    """log eps with C_f A eps^{2-nu} omega = a^2 S / 2, A the small-angle coefficient of m_R."""
    A = grazing_coefficient(kernel)
    return (2 * log_a + log_S - math.log(2.0) - log_Cf - log_omega - math.log(A)) / (2.0 - kernel.nu)


def epsilon_n(log_a, log_S, log_Cf, log_omega, kernel):
    """Splitting angle for one step: (log eps, flags).

    The power-law choice is kept when the actual m_R honours the budget,
    otherwise eps is shrunk by bisection; eps is clamped below pi/4.
    """
    flags = {}
    log_eps = epsilon_formula_log(log_a, log_S, log_Cf, log_omega, kernel)
    if log_eps >= math.log(EPS_MAX):
        log_eps = math.log(EPS_MAX)
        flags["clamped"] = True
    log_target = 2 * log_a + log_S - math.log(2.0) - log_Cf - log_omega
    if split_kernel_log(kernel, log_eps)[1] > log_target:
        log_eps = largest_admissible_eps(kernel, log_target, log_eps_max=log_eps,
                                         log_eps_min=min(-700.0, 2 * log_eps - 10.0))
        flags["shrunk"] = True
    return log_eps, flags


@dataclass
class NoncutoffTrace:
    log_a: list
    delta: list
    log_eps: list
    log_Delta: list
    damping: list
    c_delta: float
    alpha_sched: float | None
    meta: dict = field(default_factory=dict)

    def to_csv(self):
        lines = ["n,log_a_n,delta_n,log_eps_n,log_Delta_n,damping_n"]
        for i in range(len(self.log_a)):
            row = [i, self.log_a[i], self.delta[i]]
            row += [self.log_eps[i], self.log_Delta[i], self.damping[i]] if i < len(self.log_eps) else ["", "", ""]
            lines.append(",".join(str(x) if isinstance(x, (int, str)) else repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


def step_noncutoff(log_a, delta, n, ctx):
    """One step: returns (log a_{n+1}, log eps_n, damping D_n, flags)."""
    kernel = ctx["kernel"]
    lx = (n + 1) * math.log(ctx["xi"])
    log_S = log_spreading(kernel, delta, lx, ctx["cst_spread"], ctx["ell_b"], ctx["exponent"])
    d_next = math.sqrt(2.0) * delta * (1.0 - ctx["xi"] ** (n + 1))
    wb = bracket(ctx["R0"] + d_next)
    log_eps, flags = epsilon_n(log_a, log_S, ctx["log_Cf"], kernel.gamma_tilde * math.log(wb), kernel)
    log_nS, log_mR = split_kernel_log(kernel, log_eps)
    sched = ctx["schedule"]
    log_D = (ctx["log_Cf"] + float(np.logaddexp(log_nS, log_mR)) + kernel.gamma_plus * math.log(wb)
             + math.log(ctx["tau"]) + sched.log_tail(n + 1))
    D = math.exp(log_D) if log_D < 700 else math.inf
    la = math.log(ctx["tau"]) + sched.log_delta(n + 1) - D + 2 * log_a + log_S - math.log(2.0)
    return la, log_eps, D, flags, log_D


def _context(kernel, seed, csts, config, C_f, schedule, ell_b):
    return {"kernel": kernel, "xi": config.xi, "tau": seed.tau, "R0": seed.R0, "log_Cf": math.log(C_f),
            "cst_spread": csts.cst_spread, "ell_b": ell_b, "exponent": config.exponent(kernel.dimension),
            "schedule": schedule}


def run_noncutoff(seed, kernel, config, csts, C_f, alpha=None, n_steps=None, ell_b=None, stop_log=LOG_HUGE):
    """Iterate the recursion n_steps times (default config.n_max)."""
    ell_b = angular_infimum_ellb(kernel) if ell_b is None else ell_b
    sched = Schedule(config, kernel.nu, alpha)
    ctx = _context(kernel, seed, csts, config, C_f, sched, ell_b)
    n_steps = config.n_max if n_steps is None else n_steps
    log_a = [seed.log_a0]
    delta = [seed.delta0]
    log_eps, log_Delta, damping, log_damping = [], [], [], []
    clamps, shrinks = [], []
    for n in range(n_steps):
        la, le, D, flags, lD = step_noncutoff(log_a[-1], delta[-1], n, ctx)
        if not math.isfinite(la) or -la > stop_log:
            break
        log_a.append(la)
        delta.append(math.sqrt(2.0) * delta[-1] * (1.0 - config.xi ** (n + 1)))
        log_eps.append(le)
        log_Delta.append(sched.log_delta(n + 1))
        damping.append(D)
        log_damping.append(lD)
        if flags.get("clamped"):
            clamps.append(n)
        if flags.get("shrunk"):
            shrinks.append(n)
    meta = {"C_f": C_f, "ell_b": ell_b, "eps_clamped_at": clamps, "eps_shrunk_at": shrinks,
            "log_damping": log_damping, "xi": config.xi, "xi_exponent": ctx["exponent"],
            "log_Delta0": sched.log_delta(0), "dimension": kernel.dimension}
    c_delta = seed.delta0 * euler_product(config.xi)
    return NoncutoffTrace(log_a, delta, log_eps, log_Delta, damping, c_delta,
                          None if kernel.nu == 0 else (alpha if alpha is not None else config.alpha_sched), meta)


def growth_base(nu, config):
    return 2.0 if nu == 0 else config.kappa


def continuation_steps(config, nu, L):
    """Steps until base^n L reaches LOG_HUGE (the log-space horizon)."""
    base = growth_base(nu, config)
    return int(math.floor(math.log(LOG_HUGE / max(L, 1e-300)) / math.log(base)))


def hypothesis_holds(trace, L, base):
    """a_n >= exp(-L base^n) on every recorded step."""
    return all(la >= -L * base ** n for n, la in enumerate(trace.log_a))


def select_alpha(seed, kernel, config, csts, C_f, ell_b=None, iters=60):
    """Largest schedule base alpha <= min(alpha_sched, a0) whose cascade keeps a_n >= alpha^{kappa^n}
    out to the log-space horizon (bisection on L = log 1/alpha).  Returns (alpha, trace, tries)."""
    kappa = config.kappa
    L0 = max(-math.log(config.alpha_sched), -seed.log_a0)

    def trial(L):
        n = continuation_steps(config, kernel.nu, L)
        tr = run_noncutoff(seed, kernel, config, csts, C_f, math.exp(-L), n, ell_b)
        return (len(tr.log_a) > n and hypothesis_holds(tr, L, kappa)), tr

    ok, tr = trial(L0)
    tries = 1
    if ok:
        return math.exp(-L0), tr, tries
    lo, hi = L0, L0
    good = None
    for _ in range(40):
        hi *= 4.0
        ok, tr = trial(hi)
        tries += 1
        if ok:
            good = (hi, tr)
            break
        lo = hi
    if good is None:
        raise NonContraction("no schedule base keeps a_n >= alpha^(kappa^n); damping does not settle")
    for _ in range(iters):
        mid = 0.5 * (lo + good[0])
        ok, tr = trial(mid)
        tries += 1
        if ok:
            good = (mid, tr)
        else:
            lo = mid
        if good[0] - lo <= 1e-6 * good[0]:
            break
    return math.exp(-good[0]), good[1], tries


def certificate_log_alpha(log_a, base):
    """min(log a_0, min_n log a_{n+1} / base^n) over a continued trace."""
    vals = [log_a[0]] + [log_a[n + 1] / base ** n for n in range(len(log_a) - 1)]
    return min(vals)


def hypothesis_chain_damping(kernel, C_f, config, c_delta, n_range=41, alpha=None, form="stated"):
    """Damping arguments along the induction hypothesis a_n = alpha^{kappa^n}, delta_n = c_delta 2^{n/2}.

    form 'stated': [C_f a_n^2 delta_n^{N+gamma-gamma~} xi_n^{N/2-1}]^{-nu/(2-nu)}
                   (sum_{k>n} Delta_k) delta_{n+1}^{gamma+}
    (nu = 0: -log[...] in place of the power).  Returns the list of values.
    """
    nu = kernel.nu
    N, g = kernel.dimension, kernel.gamma
    sched = Schedule(config, nu, alpha)
    L = -math.log(alpha if alpha is not None else config.alpha_sched)
    base = growth_base(nu, config)
    out = []
    for n in range(n_range):
        log_an = -L * base ** n
        ld = math.log(c_delta) + 0.5 * n * math.log(2.0)
        ld1 = math.log(c_delta) + 0.5 * (n + 1) * math.log(2.0)
        inner = (math.log(C_f) + 2 * log_an + (N + g - kernel.gamma_tilde) * ld
                 + (N / 2 - 1) * (n + 1) * math.log(config.xi))
        tail = sched.log_tail(n + 1) + kernel.gamma_plus * ld1
        if nu == 0:
            out.append(abs(inner) * math.exp(tail))
        else:
            lv = -nu / (2 - nu) * inner + tail
            out.append(math.exp(lv) if lv < 700 else math.inf)
    return out


def envelope_noncutoff(trace, seed, config, kernel, grid_points=4096):
    """(log C1, C2, K) from anchors |v| = c_delta 2^{n/2} with heights alpha^{base^n}."""
    if not trace.c_delta > 0 or not math.isfinite(seed.log_a0):
        raise DegenerateEnvelope("c_delta and a0 must be positive")
    nu = kernel.nu
    base = growth_base(nu, config)
    K = exponent_K(nu, config.kappa if nu > 0 else None)
    la = certificate_log_alpha(trace.log_a, base)
    # a hair below the computed minimum to absorb rounding in the continued trace
    la *= 1.0 + 1e-9
    branch = {}
    if la >= math.log(ALPHA_CAP):
        la = math.log(ALPHA_CAP)
        branch["alpha_clamped"] = True
    C2 = -la / trace.c_delta ** K
    log_C1 = min(seed.log_a0, 0.0)
    n_dom = min(len(trace.log_a), config.n_max + 1)
    shrink = domination_shrink_profile(trace.log_a[:n_dom], trace.delta[:n_dom],
                                       lambda s: log_C1 - C2 * s ** K, grid_points)
    log_C1 -= math.log(shrink)
    return {"log_C1": log_C1, "C2": C2, "K": K, "log_alpha": la, "shrink": shrink, "branch": branch}


def uniformize_stretched(log_C1, C2, K, R0):
    """|v - vbar|^K <= 2^{K-1}(|v|^K + R0^K): C2' = 2^{K-1} C2, log C1' = log C1 - 2^{K-1} C2 R0^K."""
    c = 2.0 ** (K - 1.0)
    return log_C1 - c * C2 * R0 ** K, c * C2


def certify_noncutoff(kernel, bounds, tau, config=None, csts=None):
    config = config or ScheduleConfig()
    csts = csts or UniversalConstants()
    nu = kernel.nu
    config.validate(nu)
    bounds.validate()
    C_f, parts = assemble_Cf(kernel, bounds, csts)
    seed = upheaval_noncutoff(kernel, bounds, tau, csts, C_f)
    ell_b = angular_infimum_ellb(kernel)
    if nu == 0:
        L = max(-seed.log_a0, 1.0)
        n = continuation_steps(config, nu, L)
        trace = run_noncutoff(seed, kernel, config, csts, C_f, None, n, ell_b)
        alpha_s, tries = None, 1
    else:
        alpha_s, trace, tries = select_alpha(seed, kernel, config, csts, C_f, ell_b)
    env = envelope_noncutoff(trace, seed, config, kernel)
    log_C1p, C2p = uniformize_stretched(env["log_C1"], env["C2"], env["K"], seed.R0)
    n_rec = min(len(trace.log_a), config.n_max + 1)
    prov = {
        "kernel": kernel_summary(kernel), "bounds": bounds.to_dict(), "constants": csts.to_dict(),
        "C_f": C_f, "C_f_parts": parts, "C_f_assembly": "max of per-unit loss, cancellation and Q1 coefficients",
        "seed": seed.to_dict(), "schedule": {"kappa": config.kappa, "beta": config.beta,
                                             "alpha_sched_requested": config.alpha_sched,
                                             "alpha_sched_used": alpha_s, "beta_geo": config.beta_geo,
                                             "selection_trials": tries},
        "xi": config.xi, "n_max": config.n_max, "xi_exponent_mode": config.xi_exponent_mode,
        "continued_steps": len(trace.log_a) - 1, "alpha_log": env["log_alpha"], "c_delta": trace.c_delta,
        "C1_log_before_uniformization": env["log_C1"], "C2_before_uniformization": env["C2"],
        "domination_shrink": env["shrink"], "branch_flags": env["branch"],
        "eps_clamped_at": [i for i in trace.meta["eps_clamped_at"] if i < n_rec],
        "eps_shrunk_at": [i for i in trace.meta["eps_shrunk_at"] if i < n_rec],
        "max_damping": max(trace.damping) if trace.damping else 0.0,
        "valid_for": "t >= tau under time-uniform bounds", "vbar": "any point of B(0, R0)",
    }
    cert = Certificate("stretched_exp", kernel.dimension, seed.tau, seed.R0, log_C1=log_C1p, C2=C2p,
                       K=env["K"], provenance=prov)
    return cert, trace, seed
