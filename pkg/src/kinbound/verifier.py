"""Ground truth for certificates: the BKW exact solution and a small homogeneous solver.

BKW (Maxwell molecules, unit mass and temperature):

    f(t, v) = (2 pi S)^{-N/2} e^{-|v|^2/(2S)} [(N+2)/2 - N/(2S) + (1-S)|v|^2/(2S^2)]
    S(t) = 1 - (1 - S0) e^{-rate t},  rate = (1/4) int b sin^2 theta dsigma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.ndimage import map_coordinates, spline_filter
from scipy.special import ndtri
from scipy.stats import qmc

from .bounds import AprioriBounds
from .errors import InvalidS, UnstableStep
from .geometry import _unit_vectors
from .grid import GridDistribution, local_functionals, maxwellian, w_surrogate
from .kernel import angular_integral, angular_mass_nb, maxwell_molecules, sphere_area


def bkw_rate(kernel):
    """(1/4) int_{S^{N-1}} b sin^2 theta dsigma."""
    return 0.25 * angular_integral(kernel, 0.0, math.pi, weight=lambda t: math.sin(t) ** 2)


def normalized_maxwell_kernel(N=3):
    """Maxwell molecules with constant b scaled so that the BKW rate is 1."""
    k = maxwell_molecules(N, b=1.0)
    return maxwell_molecules(N, b=1.0 / bkw_rate(k))


@dataclass(frozen=True)
class BKWState:
    dimension: int = 3
    S0: float = 0.72
    rate: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        N = self.dimension
        if not (N / (N + 2.0) <= self.S0 <= 1.0):
            raise InvalidS(f"S0 = {self.S0} outside [N/(N+2), 1] = [{N / (N + 2.0):.6g}, 1]")
        if not self.rate > 0:
            raise InvalidS("rate must be positive")

    def S(self, t):
        return 1.0 - (1.0 - self.S0) * math.exp(-(t + self.t0) * self.rate)


def bkw_profile(S, N, v):
    if S < N / (N + 2.0) * (1 - 1e-15):
        raise InvalidS(f"S = {S} below N/(N+2)")
    v = np.asarray(v, dtype=float)
    s2 = np.sum(v * v, axis=-1)
    return bkw_radial(S, N, np.sqrt(s2))


def bkw_radial(S, N, r):
    r2 = np.asarray(r, dtype=float) ** 2
    poly = (N + 2) / 2.0 - N / (2.0 * S) + (1.0 - S) * r2 / (2.0 * S * S)
    return (2 * math.pi * S) ** (-N / 2.0) * np.exp(-r2 / (2 * S)) * poly


def bkw_evaluate(state: BKWState, t, v):
    return bkw_profile(state.S(t), state.dimension, v)


def bkw_solution(state):
    """Callable (t, v) -> values."""
    return lambda t, v: bkw_evaluate(state, t, v)


def _radial_moment(fun, N, power=0.0, rmax=60.0):
    area = sphere_area(N - 1)
    val, _ = integrate.quad(lambda r: fun(r) * r ** (N - 1 + power), 0.0, rmax, limit=400,
                            epsabs=0.0, epsrel=1e-12)
    return area * val


def bkw_entropy(S, N):
    """h = -int f log f for the BKW profile at shape S."""
    def integrand(r):
        f = float(bkw_radial(S, N, r))
        return -f * math.log(f) if f > 0 else 0.0
    return _radial_moment(integrand, N)


def bkw_bounds(state: BKWState, t_start=0.0, M=48, V_max=8.0, t_horizon=50.0, n_times=64, margin=1e-9):
    """Uniform bounds on [t_start, infinity) for the BKW solution.

    rho_min = 1 and E = 1 + N exactly; H is the largest |h| over a time grid
    (S(t) is monotone so the grid includes both ends), with a relative margin;
    W is the largest grid surrogate over the same times and the equilibrium
    (the profile sharpens as S -> 1, so its value at t_start is not an upper
    bound); E' is the |v|^2 moment N.
    """
    N = state.dimension
    ts = np.concatenate([[t_start], t_start + np.geomspace(1e-3, t_horizon, n_times - 1)])
    Ss = [state.S(t) for t in ts] + [1.0]
    H = max(abs(bkw_entropy(S, N)) for S in Ss)
    W = max(w_surrogate(GridDistribution.from_function(lambda v, S=S: bkw_profile(S, N, v), N, M, V_max))
            for S in Ss[::4] + [Ss[-1]])
    return AprioriBounds(rho_min=1.0, E=1.0 + N, Eprime=float(N), H=H * (1 + margin), W=W * (1 + margin))


# --- homogeneous solver ---------------------------------------------------------

@dataclass
class SolverResult:
    times: list
    snapshots: list
    mass_drift: list = field(default_factory=list)
    energy_drift: list = field(default_factory=list)
    clamped_mass: float = 0.0
    path: str = "radial"

    def total_mass_drift(self):
        m0 = self.snapshots[0].mass()
        return abs(self.snapshots[-1].mass() - m0) / m0

    def report(self):
        return {"times": self.times, "mass_drift_per_step": self.mass_drift,
                "energy_drift_per_step": self.energy_drift, "clamped_mass": self.clamped_mass,
                "total_mass_drift": self.total_mass_drift(), "path": self.path}


def max_loss(kernel, f: GridDistribution, n_b=None):
    """sup over the grid of L[f] (upper form); n_b C_phi rho for Maxwell molecules."""
    n_b = angular_mass_nb(kernel) if n_b is None else n_b
    if kernel.gamma == 0 and not kernel.mollified:
        return n_b * kernel.C_phi * f.mass()
    from .bounds import loss_evaluate
    v = f.velocities().reshape(-1, f.dimension)
    idx = np.linspace(0, len(v) - 1, min(len(v), 64)).astype(int)
    far = np.zeros(f.dimension)
    far[0] = f.V_max
    probes = list(v[idx]) + [far]
    return max(loss_evaluate(kernel, f, p, "upper", n_b) for p in probes)


def radial_keys(f: GridDistribution):
    """Integer keys sum (2 i + 1)^2 identifying node radii exactly, and the radii."""
    M = f.M
    k1 = (2 * np.arange(M) - M + 1) ** 2
    key = np.zeros((M,) * f.dimension, dtype=np.int64)
    for d in range(f.dimension):
        shape = [1] * f.dimension
        shape[d] = M
        key = key + k1.reshape(shape)
    uniq, inv = np.unique(key.ravel(), return_inverse=True)
    radii = 0.5 * f.h * np.sqrt(uniq.astype(float))
    return radii, inv


def is_radial(f: GridDistribution, rtol=1e-10):
    radii, inv = radial_keys(f)
    vals = f.values.ravel()
    hi = np.full(len(radii), -np.inf)
    lo = np.full(len(radii), np.inf)
    np.maximum.at(hi, inv, vals)
    np.minimum.at(lo, inv, vals)
    return bool(np.all(hi - lo <= rtol * max(float(vals.max()), 1e-300)))


class RadialProfile:
    """log f as a cubic spline in r^2 through the node radii (not-a-knot ends, so the
    short stretch below the first node is extrapolated smoothly), extended beyond the
    last node linearly in r^2."""

    def __init__(self, radii, values):
        self.r2 = radii ** 2
        self.logf = np.log(np.maximum(values, 1e-300))
        self.spline = CubicSpline(self.r2, self.logf) if len(radii) >= 4 else None
        self.slope = 0.0
        if len(radii) >= 2:
            self.slope = min((self.logf[-1] - self.logf[-2]) / (self.r2[-1] - self.r2[-2]), 0.0)

    def __call__(self, w):
        s2 = np.sum(w * w, axis=-1)
        if self.spline is None:
            inside = np.interp(s2, self.r2, self.logf)
        else:
            inside = self.spline(np.minimum(s2, self.r2[-1]))
        beyond = self.logf[-1] + self.slope * (s2 - self.r2[-1])
        return np.exp(np.where(s2 > self.r2[-1], beyond, inside))


def _gain_radial(kernel, prof, radii, z, sigma, scale, chunk=16, control=None):
    """Q+(f, f)(r e_1) for every node radius, with common samples.

    control = (pair, exact) subtracts the sampled Q+(M, M), with
    pair(|v|^2 + |v_*|^2) = M(v') M(v'_*), and adds its exact value
    exact(radii); with M the Maxwellian of matching moments this removes
    most of the variance near equilibrium.
    """
    N = kernel.dimension
    S = len(z)
    vs = scale * z
    logq = -0.5 * np.sum(z * z, axis=1) - N * math.log(scale) - 0.5 * N * math.log(2 * math.pi)
    iq = np.exp(-logq)
    vs2 = np.sum(vs * vs, axis=1)
    out = np.empty(len(radii))
    area = sphere_area(N - 1)
    for i0 in range(0, len(radii), chunk):
        r = radii[i0:i0 + chunk]
        v = np.zeros((len(r), 1, N))
        v[:, 0, 0] = r
        u = v - vs[None]
        un = np.linalg.norm(u, axis=-1)
        m = 0.5 * (v + vs[None])
        half = 0.5 * un[..., None] * sigma[None]
        vp = m + half
        vps = m - half
        cos_t = np.clip(np.sum(sigma[None] * u, axis=-1) / np.maximum(un, 1e-300), -1.0, 1.0)
        theta = np.arccos(cos_t)
        bval = np.where(theta > 0, kernel.b(np.maximum(theta, 1e-300)), 0.0)
        pair = prof(vps) * prof(vp)
        if control is not None:
            # M(v') M(v'_*) depends only on |v|^2 + |v_*|^2 by energy conservation
            pair = pair - control[0](r[:, None] ** 2 + vs2[None])
        w = area * kernel.phi(un, "upper") * bval * pair * iq[None]
        out[i0:i0 + chunk] = w.mean(axis=1)
    if control is not None:
        out += control[1](radii)
    return out


def _loss_radial(kernel, prof, radii, z, scale, n_b, rho, chunk=16):
    if kernel.gamma == 0 and not kernel.mollified:
        return np.full(len(radii), n_b * kernel.C_phi * rho)
    N = kernel.dimension
    vs = scale * z
    logq = -0.5 * np.sum(z * z, axis=1) - N * math.log(scale) - 0.5 * N * math.log(2 * math.pi)
    fq = prof(vs) * np.exp(-logq)
    out = np.empty(len(radii))
    for i0 in range(0, len(radii), chunk):
        r = radii[i0:i0 + chunk]
        v = np.zeros((len(r), 1, N))
        v[:, 0, 0] = r
        un = np.linalg.norm(v - vs[None], axis=-1)
        with np.errstate(divide="ignore"):
            out[i0:i0 + chunk] = n_b * np.mean(kernel.phi(un, "upper") * fq[None], axis=1)
    return out


def _grid_interpolator(f: GridDistribution):
    # cubic B-spline: trilinear moves gain from the peaks to the tails (O(h^2)
    # bias), enough to pull a grid Maxwellian visibly off equilibrium
    coef = spline_filter(f.values, order=3, mode="constant")

    def ev(w):
        coords = (w + f.V_max) / f.h - 0.5
        shp = w.shape[:-1]
        pts = coords.reshape(-1, f.dimension).T
        vals = map_coordinates(coef, pts, order=3, mode="constant", cval=0.0, prefilter=False)
        return np.maximum(vals, 0.0).reshape(shp)
    return ev


def _gain_general(kernel, f, z, sigma, scale, center, chunk=64):
    N = kernel.dimension
    ev = _grid_interpolator(f)
    vs = center + scale * z
    logq = -0.5 * np.sum(z * z, axis=1) - N * math.log(scale) - 0.5 * N * math.log(2 * math.pi)
    iq = np.exp(-logq)
    area = sphere_area(N - 1)
    nodes = f.velocities().reshape(-1, N)
    out = np.empty(len(nodes))
    for i0 in range(0, len(nodes), chunk):
        v = nodes[i0:i0 + chunk][:, None, :]
        u = v - vs[None]
        un = np.linalg.norm(u, axis=-1)
        m = 0.5 * (v + vs[None])
        half = 0.5 * un[..., None] * sigma[None]
        cos_t = np.clip(np.sum(sigma[None] * u, axis=-1) / np.maximum(un, 1e-300), -1.0, 1.0)
        theta = np.arccos(cos_t)
        bval = np.where(theta > 0, kernel.b(np.maximum(theta, 1e-300)), 0.0)
        w = area * kernel.phi(un, "upper") * bval * ev(m - half) * ev(m + half) * iq[None]
        out[i0:i0 + chunk] = w.mean(axis=1)
    return out.reshape(f.values.shape)


def _loss_general(kernel, f, n_b):
    if kernel.gamma == 0 and not kernel.mollified:
        return np.full(f.values.shape, n_b * kernel.C_phi * f.mass())
    # convolution with Phi on the doubled grid by FFT
    from scipy.signal import fftconvolve
    N, M, h = f.dimension, f.M, f.h
    ax = (np.arange(2 * M - 1) - (M - 1)) * h
    grids = np.meshgrid(*([ax] * N), indexing="ij")
    r = np.sqrt(sum(g * g for g in grids))
    with np.errstate(divide="ignore"):
        phi = kernel.phi(r, "upper")
    if kernel.gamma < 0 and not kernel.mollified:
        from .kernel import ball_volume
        r_eq = (f.cell_volume / ball_volume(N)) ** (1.0 / N)
        phi[(r == 0)] = kernel.C_phi * N / (N + kernel.gamma) * r_eq ** kernel.gamma
    conv = fftconvolve(f.values, phi, mode="same")
    return n_b * conv * f.cell_volume


def collision_samples(rng, samples, N, sampling="qmc"):
    """Standard normal v_* offsets and unit sigma vectors.

    'qmc' uses a scrambled Sobol sequence of 2N dimensions (samples rounded up
    to a power of two) mapped through the normal quantile; 'mc' plain draws.
    """
    if sampling == "mc":
        return rng.standard_normal((samples, N)), _unit_vectors(rng, samples, N)
    m = int(math.ceil(math.log2(samples)))
    u = qmc.Sobol(2 * N, scramble=True, seed=rng).random_base2(m)
    u = np.clip(u, 1e-16, 1 - 1e-16)
    g = ndtri(u)
    sig = g[:, N:]
    return g[:, :N], sig / np.linalg.norm(sig, axis=1, keepdims=True)


def solve_homogeneous(kernel, f0: GridDistribution, t_end, dt, samples=20_000, seed=0, path="auto",
                      snapshot_every=1, sampling="qmc"):
    """Explicit Euler for d f/dt = Q+(f, f) - L[f] f on a velocity grid.

    Radially symmetric data use the radial path: f is tabulated on the node
    radii and Q+ is sampled once per radius with a Gaussian proposal at the
    solution's temperature (the importance ratio is nearly constant close to
    equilibrium).  Other data use trilinear interpolation at every node.
    Negative values are clamped to 0 and the clamped mass is accumulated.
    """
    if not kernel.cutoff:
        raise ValueError("solve_homogeneous needs a cutoff kernel")
    n_b = angular_mass_nb(kernel)
    lmax = max_loss(kernel, f0, n_b)
    if dt > 0.5 / lmax:
        raise UnstableStep(f"dt = {dt} exceeds 0.5 / max_loss = {0.5 / lmax:.4g}")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a multiple of dt")
    if path == "auto":
        path = "radial" if is_radial(f0) else "general"
    rng = np.random.default_rng(seed)
    N = f0.dimension
    f = f0
    res = SolverResult([0.0], [f0], path=path)
    if path == "radial":
        radii, inv = radial_keys(f0)
        vals = np.zeros(len(radii))
        vals[inv] = f0.values.ravel()
    for step in range(n_steps):
        fn = local_functionals(f)
        rho, e = fn["rho"], fn["e"]
        temp = max(e / (N * rho), 1e-6)
        scale = math.sqrt(temp)
        z, sigma = collision_samples(rng, samples, N, sampling)
        if path == "radial":
            prof = RadialProfile(radii, vals)
            control = None
            if kernel.gamma == 0 and not kernel.mollified:
                # Q+(M, M) = Q-(M, M) = n_b C_phi rho M for Maxwell molecules
                norm = rho * rho / (2 * math.pi * temp) ** N

                def pair(s2, norm=norm, temp=temp):
                    return norm * np.exp(-s2 / (2 * temp))

                def exact(r, rho=rho, temp=temp):
                    return n_b * kernel.C_phi * rho * rho * np.exp(-r * r / (2 * temp)) / (2 * math.pi * temp) ** (N / 2)
                control = (pair, exact)
            gain = _gain_radial(kernel, prof, radii, z, sigma, scale, control=control)
            loss = _loss_radial(kernel, prof, radii, z, scale, n_b, rho)
            new = vals + dt * (gain - loss * vals)
            neg = new < 0
            counts = np.bincount(inv, minlength=len(radii))
            res.clamped_mass += float(-(new[neg] * counts[neg]).sum() * f.cell_volume)
            vals = np.maximum(new, 0.0)
            g = f.with_values(vals[inv].reshape(f.values.shape))
        else:
            mean = (f.values[..., None] * f.velocities()).sum(axis=tuple(range(N))) * f.cell_volume / rho
            gain = _gain_general(kernel, f, z, sigma, scale, mean)
            loss = _loss_general(kernel, f, n_b)
            new = f.values + dt * (gain - loss * f.values)
            res.clamped_mass += float(-new[new < 0].sum() * f.cell_volume)
            g = f.with_values(np.maximum(new, 0.0))
        m_old, m_new = f.mass(), g.mass()
        drift = abs(m_new - m_old) / m_old
        gn = local_functionals(g)
        res.mass_drift.append(drift)
        res.energy_drift.append(abs(gn["e"] - e) / e)
        if drift > 1e-3:
            raise UnstableStep(f"mass drift {drift:.3g} > 1e-3 at step {step}")
        f = g
        if (step + 1) % snapshot_every == 0 or step + 1 == n_steps:
            res.times.append((step + 1) * dt)
            res.snapshots.append(f)
    return res


def relative_sup_error(num: GridDistribution, exact_fn, radius=4.0):
    """max |f_num - f_exact| / max |f_exact| over nodes with |v| <= radius."""
    v = num.velocities()
    mask = num.speed2() <= radius * radius
    ex = exact_fn(v)
    return float(np.max(np.abs(num.values - ex)[mask]) / np.max(np.abs(ex)[mask]))


# --- domination check -----------------------------------------------------------

def check_domination(cert, solution, times, vgrid, tolerance=0.0):
    """margin(t, v) = solution(t, v) - certificate(v) over times x vgrid.

    solution is a callable (t, v) -> values on (..., N) arrays.  The report
    also carries the smallest log ratio log solution - log certificate, which
    stays meaningful when the certified height underflows.
    """
    if cert.tau > min(times) * (1 + 1e-12):
        raise ValueError(f"certificate valid from tau = {cert.tau}, earlier time requested")
    vgrid = np.asarray(vgrid, dtype=float)
    pts = vgrid.reshape(-1, vgrid.shape[-1])
    cert_log = cert.log_value(pts)
    cert_val = np.exp(cert_log)
    best = None
    min_log_ratio = math.inf
    for t in times:
        sol = np.asarray(solution(t, pts), dtype=float).reshape(-1)
        margin = sol - cert_val
        i = int(np.argmin(margin))
        if best is None or margin[i] < best[0]:
            best = (float(margin[i]), float(t), [float(x) for x in pts[i]])
        with np.errstate(divide="ignore"):
            lr = np.log(np.maximum(sol, 0.0)) - cert_log
        min_log_ratio = min(min_log_ratio, float(np.min(lr)))
    return {"min_margin": best[0], "argmin_t": best[1], "argmin_v": best[2],
            "min_log_ratio": min_log_ratio, "tolerance": tolerance,
            "pass": bool(best[0] >= -tolerance)}


def grid_solution(result: SolverResult):
    """Callable (t, v) over solver snapshots; v must be the snapshot nodes (flattened)."""
    def sol(t, v):
        i = int(np.argmin([abs(s - t) for s in result.times]))
        return result.snapshots[i].values.reshape(-1)
    return sol
