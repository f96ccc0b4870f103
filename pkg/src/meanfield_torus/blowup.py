"""Blow-up laboratory: glued concentration profiles and their energies.

The test profile phi_eps concentrates a planar bubble of scale eps at a
point p and glues it to the torus Green function across a matching
annulus.  In geodesic polar coordinates (r, theta) around p:

    inner  (r <= a):        -2 log(r^2 + eps) + log eps,
    middle (a <= r <= 2a):  G - eta * beta + C + log eps,
    outer  (r >= 2a):       G + C + log eps,

with a = alpha sqrt(eps), beta = G + 4 log r - A_v (the smooth remainder
of the Green function), eta a quintic smoothstep in log r that is 1 below
a and 0 above 2a, and the matching constant

    C = -2 log((alpha^2 + 1)/alpha^2) - A_v,

which makes the three pieces agree exactly at r = a and r = 2a.  The
gluing scale follows alpha^4 eps = 1/log(-log eps) unless overridden.

Energies are evaluated by hybrid quadrature: panelled Gauss-Legendre in
(r, theta) near p, and grid quadrature of the smoothly windowed remainder
far from p, with the window chi identically 1 over the whole glued zone.
The target J(phi_eps) approaches its blow-up threshold linearly in the
regressor eps * (-log eps); fit_asymptote recovers intercept and slope.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .functional import EnergyBreakdown
from .green import green_eval, green_eval_with_grad, green_field, robin_constant
from .quadrature import (
    RadialCutoff,
    geometric_breakpoints,
    polar_quadrature_nodes,
    smoothstep,
    smoothstep_prime,
)
from .torus import Field, FlatTorus, eval_at_points, sample_function, wrap_displacement

__all__ = [
    "TestFunctionSpec",
    "AsymptoteFit",
    "GridResolutionError",
    "default_alpha",
    "bubble_profile",
    "inner_dirichlet_closed",
    "TestProfileLab",
    "build_test_function",
    "eval_J_testfunction",
    "energy_sweep",
    "fit_asymptote",
    "profile_deviation",
    "green_deviation",
]

EIGHT_PI = 8.0 * np.pi


class GridResolutionError(ValueError):
    """Raised when a concentration scale cannot be represented on the grid."""


def default_alpha(eps: float) -> float:
    """Gluing scale from alpha^4 eps = 1 / log(-log eps)."""
    if not 0.0 < eps < np.exp(-np.e):
        raise ValueError("eps must lie in (0, exp(-e)) for the default rule")
    return float((1.0 / (eps * np.log(-np.log(eps)))) ** 0.25)


@dataclass(frozen=True)
class TestFunctionSpec:
    """Parameters of the glued profile.

    alpha=None selects the default rule; h_p is carried for bookkeeping
    (the profile itself does not depend on the weight).
    """

    p: tuple = (0.0, 0.0)
    eps: float = 1e-6
    alpha: float | None = None
    h_p: float | None = None
    cutoff: str = "quintic smoothstep in log r"

    def resolved_alpha(self) -> float:
        return default_alpha(self.eps) if self.alpha is None else float(self.alpha)


def bubble_profile(x, h_p: float):
    """Entire planar bubble -2 log(1 + pi h_p |x|^2); x has shape (..., 2)."""
    if h_p <= 0:
        raise ValueError("h_p must be positive")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    out = -2.0 * np.log1p(np.pi * h_p * r2)
    return float(out) if out.ndim == 0 else out


def inner_dirichlet_closed(alpha: float) -> float:
    """Exact Dirichlet integral of the inner bubble piece over its ball:
    16 pi [log(alpha^2 + 1) - alpha^2/(alpha^2 + 1)], independent of eps."""
    a2 = alpha * alpha
    return float(16.0 * np.pi * (np.log1p(a2) - a2 / (a2 + 1.0)))


def _eta(r, r_a, r_b):
    """Quintic smoothstep in log r: 1 below r_a, 0 above r_b."""
    t = np.log(np.asarray(r, dtype=float) / r_a) / np.log(r_b / r_a)
    return 1.0 - smoothstep(t, order=2)


def _eta_prime(r, r_a, r_b):
    r = np.asarray(r, dtype=float)
    t = np.log(r / r_a) / np.log(r_b / r_a)
    return -smoothstep_prime(t, order=2) / (np.log(r_b / r_a) * r)


class TestProfileLab:
    """Evaluator for one (torus, p, h) triple; grid caches are shared
    across eps values, so parameter sweeps stay cheap."""

    def __init__(self, h: Field, p=(0.0, 0.0), tol: float = 1e-12,
                 n_theta: int = 96, deg: int = 16, per_decade: int = 6):
        if h.values.min() <= 0:
            raise ValueError("weight h must be positive everywhere")
        self.h = h
        self.torus = h.torus
        self.p = (float(p[0]), float(p[1]))
        self.tol = tol
        self.n_theta = n_theta
        self.deg = deg
        self.per_decade = per_decade
        self.v = self.torus.v
        self.sqrt_v = np.sqrt(self.v)
        self.A = robin_constant(self.v, tol)
        self.inj = self.torus.injectivity_radius
        self._grid_cache = None

    # -- geometry helpers ------------------------------------------------

    def _polar_points(self, r, theta):
        """Flat coordinates of geodesic polar points around p."""
        x = self.p[0] + self.sqrt_v * r * np.cos(theta)
        y = self.p[1] + self.sqrt_v * r * np.sin(theta)
        return x, y

    def _h_at(self, x, y):
        return eval_at_points(self.h, x, y)

    def matching_constant(self, alpha: float) -> float:
        a2 = alpha * alpha
        return float(-2.0 * np.log((a2 + 1.0) / a2) - self.A)

    # -- grid-side cache -------------------------------------------------

    def _grid_side(self):
        """Green values, gradient magnitude^2, and geodesic radii on the grid."""
        if self._grid_cache is None:
            t = self.torus
            X, Y = t.mesh()
            dx, dy = wrap_displacement(t, X, Y, self.p)
            rho = np.hypot(dx, dy)
            r = rho / self.sqrt_v
            gf = green_field(t, self.p, self.tol)
            mask = rho >= 1e-12
            grad2 = np.zeros_like(rho)
            z = dx[mask] + 1j * dy[mask]
            _, gx, gy = green_eval_with_grad(z, self.v, self.tol)
            grad2[mask] = self.v * (gx * gx + gy * gy)
            self._grid_cache = (r, gf.values, grad2)
        return self._grid_cache

    # -- pointwise profile (polar, geodesic normal coordinates) -----------

    def _regions(self, eps: float, alpha: float):
        r_a = alpha * np.sqrt(eps)
        r_b = 2.0 * r_a
        if r_a >= 0.5 * self.inj:
            raise ValueError(
                f"gluing radius {r_a:.3g} exceeds half the injectivity radius "
                f"{self.inj:.3g}; decrease eps or alpha"
            )
        return r_a, r_b

    def profile_polar(self, r, theta, eps: float, alpha: float | None = None):
        """phi_eps at geodesic polar points (vectorised)."""
        alpha = default_alpha(eps) if alpha is None else alpha
        r_a, r_b = self._regions(eps, alpha)
        C = self.matching_constant(alpha)
        r = np.asarray(r, dtype=float)
        theta = np.broadcast_to(np.asarray(theta, dtype=float), r.shape)
        out = np.empty_like(r)
        inner = r <= r_a
        out[inner] = -2.0 * np.log(r[inner] ** 2 + eps) + np.log(eps)
        rest = ~inner
        if np.any(rest):
            x, y = self._polar_points(r[rest], theta[rest])
            z = (x - self.p[0]) + 1j * (y - self.p[1])
            G = green_eval(z, self.v, self.tol)
            beta = G + 4.0 * np.log(r[rest]) - self.A
            eta = np.where(r[rest] < r_b, _eta(r[rest], r_a, r_b), 0.0)
            out[rest] = G - eta * beta + C + np.log(eps)
        return out

    # -- energy ----------------------------------------------------------

    def energy(self, eps: float, alpha: float | None = None) -> EnergyBreakdown:
        """J(phi_eps) by hybrid quadrature (grid part cached across eps)."""
        alpha = default_alpha(eps) if alpha is None else float(alpha)
        r_a, r_b = self._regions(eps, alpha)
        C = self.matching_constant(alpha)
        log_eps = np.log(eps)
        se = np.sqrt(eps)

        # window: chi == 1 over the whole glued zone, 0 near the far edge
        chi1 = max(1.2 * r_b, 0.35 * self.inj)
        chi2 = 0.95 * self.inj
        if chi1 >= chi2:
            raise ValueError("gluing zone leaves no room for the far window")
        chi = RadialCutoff(chi1, chi2, order=4)

        dirichlet = 0.0
        lin_int = 0.0    # int phi dvol
        mass = 0.0       # int h e^phi dvol

        # inner ball: radial bubble
        bp = np.concatenate([[0.0], geometric_breakpoints(
            min(se * 1e-2, r_a * 0.5), r_a, scale=se, per_decade=self.per_decade)])
        R, T, W = polar_quadrature_nodes(np.unique(bp), self.n_theta, self.deg)
        phi = -2.0 * np.log(R * R + eps) + log_eps
        gsq = 16.0 * R * R / (R * R + eps) ** 2
        xh, yh = self._polar_points(R, T)
        hval = self._h_at(xh, yh)
        dirichlet += float(np.sum(W * gsq))
        lin_int += float(np.sum(W * phi))
        mass += float(np.sum(W * hval * np.exp(phi)))

        # middle annulus: Green function minus windowed remainder
        bp = geometric_breakpoints(r_a, r_b, per_decade=max(self.per_decade, 8))
        R, T, W = polar_quadrature_nodes(bp, self.n_theta, self.deg)
        x, y = self._polar_points(R, T)
        z = (x - self.p[0]) + 1j * (y - self.p[1])
        G, gx, gy = green_eval_with_grad(z, self.v, self.tol)
        beta = G + 4.0 * np.log(R) - self.A
        eta = _eta(R, r_a, r_b)
        etap = _eta_prime(R, r_a, r_b)
        # normal-coordinate radial/tangential derivatives of G
        ct, st = np.cos(T), np.sin(T)
        G_r = self.sqrt_v * (gx * ct + gy * st)
        G_t = self.sqrt_v * (-gx * st + gy * ct)
        beta_r = G_r + 4.0 / R
        d_r = G_r - eta * beta_r - beta * etap
        d_t = (1.0 - eta) * G_t
        phi = G - eta * beta + C + log_eps
        hval = self._h_at(x, y)
        dirichlet += float(np.sum(W * (d_r**2 + d_t**2)))
        lin_int += float(np.sum(W * phi))
        mass += float(np.sum(W * hval * np.exp(phi)))

        # far annulus (polar side of the window): pure Green tail
        bp = geometric_breakpoints(r_b, chi2, per_decade=self.per_decade)
        R, T, W = polar_quadrature_nodes(bp, self.n_theta, self.deg)
        x, y = self._polar_points(R, T)
        z = (x - self.p[0]) + 1j * (y - self.p[1])
        G, gx, gy = green_eval_with_grad(z, self.v, self.tol)
        w = W * chi(R)
        phi = G + C + log_eps
        hval = self._h_at(x, y)
        dirichlet += float(np.sum(w * self.v * (gx * gx + gy * gy)))
        lin_int += float(np.sum(w * phi))
        mass += float(np.sum(w * hval * np.exp(phi)))

        # grid side: smoothly windowed remainder, same outer formulas
        r_grid, G_grid, grad2_grid = self._grid_side()
        wgt = 1.0 - chi(r_grid)
        dirichlet += float(np.mean(wgt * grad2_grid))
        lin_int += float(np.mean(wgt * (G_grid + C + log_eps)))
        mass += float(np.mean(wgt * self.h.values * np.exp(G_grid + C + log_eps)))

        d_half = 0.5 * dirichlet
        linear = EIGHT_PI * lin_int
        logterm = -EIGHT_PI * float(np.log(mass))
        return EnergyBreakdown(
            dirichlet_half=d_half, linear=linear, logterm=logterm,
            total=d_half + linear + logterm, eps=0.0,
        )

    # -- grid sampling ---------------------------------------------------

    def field(self, eps: float, alpha: float | None = None) -> Field:
        """Sample phi_eps on the grid (only when the grid resolves it)."""
        alpha = default_alpha(eps) if alpha is None else float(alpha)
        r_a, _ = self._regions(eps, alpha)
        t = self.torus
        h_geo = max(t.hx, t.hy) / self.sqrt_v
        if np.sqrt(eps) < 2.0 * h_geo or r_a < 4.0 * h_geo:
            raise GridResolutionError(
                f"concentration scales (sqrt(eps)={np.sqrt(eps):.3g}, gluing "
                f"radius {r_a:.3g}) are under-resolved by grid spacing "
                f"{h_geo:.3g}; evaluate energies with the hybrid quadrature "
                "path (TestProfileLab.energy) instead of grid sampling"
            )
        X, Y = t.mesh()
        dx, dy = wrap_displacement(t, X, Y, self.p)
        r = np.hypot(dx, dy) / self.sqrt_v
        theta = np.arctan2(dy, dx)
        vals = self.profile_polar(np.maximum(r, 0.0), theta, eps, alpha)
        return Field(t, vals)


def build_test_function(torus: FlatTorus, spec: TestFunctionSpec,
                        h: Field | None = None, tol: float = 1e-12) -> Field:
    """Grid sample of the glued profile described by spec."""
    if h is None:
        h = sample_function(torus, lambda x, y: np.ones_like(x))
    lab = TestProfileLab(h, spec.p, tol)
    return lab.field(spec.eps, spec.alpha if spec.alpha is not None else None)


def eval_J_testfunction(spec: TestFunctionSpec, h: Field,
                        tol: float = 1e-12, **quad_opts) -> EnergyBreakdown:
    """J(phi_eps) for the glued profile, by hybrid quadrature."""
    lab = TestProfileLab(h, spec.p, tol, **quad_opts)
    return lab.energy(spec.eps, spec.resolved_alpha() if spec.alpha is not None else None)


def energy_sweep(h: Field, eps_values, p=(0.0, 0.0), tol: float = 1e-12,
                 threads: int | None = None, **quad_opts):
    """(eps, J(phi_eps)) across an eps sweep; grid caches are shared.

    The number of worker threads is capped by MEANFIELD_THREADS when set.
    """
    lab = TestProfileLab(h, p, tol, **quad_opts)
    lab._grid_side()  # materialise the shared cache up front
    if threads is None:
        threads = int(os.environ.get("MEANFIELD_THREADS", os.cpu_count() or 1))
    eps_values = [float(e) for e in eps_values]
    if threads > 1 and len(eps_values) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            energies = list(pool.map(lambda e: lab.energy(e), eps_values))
    else:
        energies = [lab.energy(e) for e in eps_values]
    return [(e, b.total) for e, b in zip(eps_values, energies)]


# ----------------------------------------------------------------------
# asymptote fit
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoteFit:
    """J(phi_eps) ~ constant + slope * eps * (-log eps) over fit_window."""

    constant: float
    slope: float
    fit_window: tuple
    residual: float


def fit_asymptote(samples, weight_power: float = 2.0) -> AsymptoteFit:
    """Linear fit of J against the regressor t = eps * (-log eps).

    The model error of the linear law is o(t) (the gluing rule leaves a
    remainder of order eps * log(-log eps)), so residuals shrink faster
    than t and the samples are weighted by 1/t^weight_power: the fit
    concentrates on the asymptotic end, which makes the extracted
    coefficients consistent as the window moves to smaller eps.  An
    unweighted fit (weight_power=0) parks the slope at the pre-asymptotic
    value of the largest samples.  Needs at least 5 positive, distinct
    eps values; exact linear data is recovered exactly for any weighting.
    """
    samples = [(float(e), float(j)) for e, j in samples]
    if len(samples) < 5:
        raise ValueError(f"need at least 5 samples, got {len(samples)}")
    eps = np.array([s[0] for s in samples])
    val = np.array([s[1] for s in samples])
    if np.any(eps <= 0) or np.unique(eps).size != eps.size:
        raise ValueError("eps samples must be positive and distinct")
    reg = eps * (-np.log(eps))
    w2 = reg ** (-2.0 * weight_power)
    w2 = w2 / w2.sum()
    t_bar = float(np.sum(w2 * reg))
    j_bar = float(np.sum(w2 * val))
    var_t = float(np.sum(w2 * (reg - t_bar) ** 2))
    if var_t <= 1e-24 * t_bar * t_bar:
        raise ValueError("regression ill-conditioned: eps samples too clustered")
    slope = float(np.sum(w2 * (reg - t_bar) * (val - j_bar)) / var_t)
    constant = j_bar - slope * t_bar
    resid = val - constant - slope * reg
    return AsymptoteFit(
        constant=float(constant), slope=float(slope),
        fit_window=(float(eps.min()), float(eps.max())),
        residual=float(np.sqrt(np.mean(resid**2))),
    )


# ----------------------------------------------------------------------
# convergence diagnostics
# ----------------------------------------------------------------------

def profile_deviation(u: Field, peak_value: float, peak_point, h_p: float,
                      radius: float) -> float:
    """Sup over |x| <= radius of |u(peak + x/scale) - peak_value - bubble(x)|,
    where scale = exp(peak_value/2).

    Measures how closely the rescaled peak matches the universal bubble;
    for the glued profiles of this module the match is exact inside the
    bubble zone with h_p = 1/pi.
    """
    t = u.torus
    scale = np.exp(0.5 * peak_value)
    if radius / scale > t.injectivity_radius:
        raise ValueError(
            f"rescaled window radius {radius / scale:.3g} exceeds the "
            f"injectivity radius {t.injectivity_radius:.3g}"
        )
    radii = np.linspace(0.0, radius, 49)[1:]
    angles = 2.0 * np.pi * np.arange(16) / 16
    RR, TT = np.meshgrid(radii, angles, indexing="ij")
    offsets = np.stack([RR * np.cos(TT), RR * np.sin(TT)], axis=-1).reshape(-1, 2)
    offsets = np.concatenate([[[0.0, 0.0]], offsets])
    # geodesic offsets x/scale correspond to flat offsets sqrt(v) x / scale
    sv = np.sqrt(t.v)
    xs = peak_point[0] + sv * offsets[:, 0] / scale
    ys = peak_point[1] + sv * offsets[:, 1] / scale
    u_vals = eval_at_points(u, xs, ys)
    target = peak_value + bubble_profile(offsets, h_p)
    return float(np.abs(u_vals - target).max())


def green_deviation(u: Field, h: Field, G: Field, exclusion_radius: float) -> float:
    """Sup-norm of (u - int u) - G outside the exclusion ball at the peak.

    The centre is the singular node of the reference G when it has one
    (the comparison only makes sense around G's source point), otherwise
    the grid argmax of u with ties resolved toward the argmax of h.  When
    u itself carries a flagged log singularity its mean is evaluated with
    the singular-aware quadrature, so u = G + const reports ~0.
    """
    from .green import integrate_with_log_singularity

    t = u.torus
    if G.singular_nodes:
        i, j = divmod(G.singular_nodes[0], t.ny)
    else:
        flat = u.values.ravel()
        hits = np.flatnonzero(flat >= flat.max() - 1e-10)
        idx = int(hits[np.argmax(h.values.ravel()[hits])]) if len(hits) > 1 else int(hits[0])
        i, j = divmod(idx, t.ny)
    x, y = t.axes()
    center = (x[i], y[j])
    if u.singular_nodes:
        u_mean = integrate_with_log_singularity(u, center)
    else:
        u_mean = float(u.values.mean())
    X, Y = t.mesh()
    dx, dy = wrap_displacement(t, X, Y, center)
    r = np.hypot(dx, dy) / np.sqrt(t.v)
    mask = (r > exclusion_radius).ravel()
    mask[list(G.singular_nodes)] = False
    mask[list(u.singular_nodes)] = False
    diff = (u.values - u_mean).ravel() - G.values.ravel()
    return float(np.abs(diff[mask]).max())
