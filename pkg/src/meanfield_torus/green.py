"""Exact Green function of the torus Laplacian with source strength 8 pi.

G(., p) solves  Lap G = 8 pi - 8 pi delta_p  with zero mean on the
unit-area torus of modulus v, and behaves like -4 log r near p (r the
geodesic distance).  Writing z = x + i y, q = exp(-2 pi v) and
q_z = exp(2 pi i z), the closed form is the convergent q-product

    G(z, 0) = -4 log | q^(B2(y/v)/2) (1 - q_z)
                       prod_{n>=1} (1 - q^n q_z)(1 - q^n / q_z) |,

with B2 the second Bernoulli polynomial.  Expanding at the origin and
converting to geodesic normal coordinates r = |z|/sqrt(v) gives the
constant term

    A_v = -2 log v - 4 log 2pi + 2 pi v / 3
          - 8 log prod_{n>=1} (1 - q^n),

which is increasing on [1, inf) and crosses the reference level
A0 = -2 - 2 log pi at a unique threshold modulus v*.

Note on the radius convention: the metric (dx^2+dy^2)/v makes the geodesic
distance |z|/sqrt(v), NOT sqrt(v)|z|; only the former is consistent with
the unit-area normalisation and with the A_v formula above.  The numerical
cross-check robin_constant vs extract_expansion pins this down (see README).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quadrature import (
    RadialCutoff,
    gauss_panels,
    geometric_breakpoints,
    polar_quadrature_nodes,
)
from .torus import (
    Field,
    FlatTorus,
    eval_at_points,
    geodesic_distance,
    integrate,
    laplacian,
    wrap_displacement,
)

__all__ = [
    "GreenExpansion",
    "SourcePointError",
    "FitConditioningError",
    "bernoulli2",
    "green_eval",
    "green_eval_with_grad",
    "robin_constant",
    "robin_threshold",
    "find_threshold_modulus",
    "green_field",
    "integrate_with_log_singularity",
    "weak_laplace_residual",
    "extract_expansion",
    "curvature_identity_defect",
    "green_fourier_oracle",
]

SOURCE_TOL = 1e-12
EIGHT_PI = 8.0 * np.pi


class SourcePointError(ValueError):
    """Raised when the Green function is evaluated at its source point."""


class FitConditioningError(RuntimeError):
    """Raised when the expansion fit is too ill-conditioned to trust."""


def bernoulli2(y):
    """Second Bernoulli polynomial y^2 - y + 1/6."""
    y = np.asarray(y, dtype=float)
    out = y * y - y + 1.0 / 6.0
    return float(out) if out.ndim == 0 else out


def _n_terms(v: float, tol: float) -> int:
    """Truncation order: term magnitudes decay like exp(-2 pi n v)."""
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    return int(np.ceil(np.log(1.0 / tol) / (2.0 * np.pi * v))) + 2


def _reduce(z, v):
    """Nearest-image representative: x in [-1/2,1/2), y in [-v/2,v/2)."""
    z = np.asarray(z, dtype=complex)
    x = z.real - np.round(z.real)
    y = z.imag - v * np.round(z.imag / v)
    return x, y


def green_eval(z, v: float, tol: float = 1e-12):
    """G(z, 0) on the torus of modulus v via the truncated q-product.

    z may be a complex scalar or array.  Raises SourcePointError if any
    point lies within 1e-12 of the lattice.
    """
    v = float(v)
    if v <= 0:
        raise ValueError("modulus must be positive")
    x, y = _reduce(z, v)
    rho = np.hypot(x, y)
    if np.any(rho < SOURCE_TOL):
        raise SourcePointError("evaluation at source point")
    q = np.exp(-2.0 * np.pi * v)
    qz = np.exp(2j * np.pi * (x + 1j * y))
    acc = np.log(np.abs(1.0 - qz))
    qn = 1.0
    for _ in range(_n_terms(v, tol)):
        qn *= q
        acc += np.log(np.abs(1.0 - qn * qz)) + np.log(np.abs(1.0 - qn / qz))
    g = 4.0 * np.pi * v * bernoulli2(y / v) - 4.0 * acc
    return float(g) if np.ndim(z) == 0 else g


def green_eval_with_grad(z, v: float, tol: float = 1e-12):
    """G and its coordinate gradient (G, dG/dx, dG/dy) at z.

    The gradient is exact (analytic differentiation of the q-product),
    so no grid differentiation error enters downstream quadratures.
    """
    v = float(v)
    x, y = _reduce(z, v)
    rho = np.hypot(x, y)
    if np.any(rho < SOURCE_TOL):
        raise SourcePointError("evaluation at source point")
    q = np.exp(-2.0 * np.pi * v)
    qz = np.exp(2j * np.pi * (x + 1j * y))
    acc = np.log(np.abs(1.0 - qz))
    # S = sum f'/f over all holomorphic factors
    S = -2j * np.pi * qz / (1.0 - qz)
    qn = 1.0
    for _ in range(_n_terms(v, tol)):
        qn *= q
        acc += np.log(np.abs(1.0 - qn * qz)) + np.log(np.abs(1.0 - qn / qz))
        S += -2j * np.pi * (qn * qz / (1.0 - qn * qz)
                            - (qn / qz) / (1.0 - qn / qz))
    g = 4.0 * np.pi * v * bernoulli2(y / v) - 4.0 * acc
    gx = -4.0 * S.real
    gy = 4.0 * S.imag + 4.0 * np.pi * (2.0 * y / v - 1.0)
    return g, gx, gy


def robin_constant(v: float, tol: float = 1e-12) -> float:
    """Constant term A_v of the Green expansion in geodesic normal coordinates."""
    v = float(v)
    if v <= 0:
        raise ValueError("modulus must be positive")
    q = np.exp(-2.0 * np.pi * v)
    s = 0.0
    qn = 1.0
    for _ in range(_n_terms(v, tol)):
        qn *= q
        s += np.log1p(-qn)
    return float(-2.0 * np.log(v) - 4.0 * np.log(2.0 * np.pi)
                 + 2.0 * np.pi * v / 3.0 - 8.0 * s)


def robin_threshold() -> float:
    """Reference constant -2 - 2 log pi separating the two existence regimes."""
    return -2.0 - 2.0 * np.log(np.pi)


def find_threshold_modulus(bracket=(1.0, 10.0), tol: float = 1e-10,
                max_iters: int = 200, full_output: bool = False):
    """Unique modulus with A_v = A0, located by bisection.

    Stops once |A_v - A0| < tol at the midpoint.  Raises ValueError when
    the bracket endpoints do not straddle A0.
    """
    a0 = robin_threshold()
    lo, hi = float(bracket[0]), float(bracket[1])
    flo, fhi = robin_constant(lo) - a0, robin_constant(hi) - a0
    if flo == 0.0:
        return (lo, {"iterations": 0, "a_value": robin_constant(lo)}) if full_output else lo
    if fhi == 0.0:
        return (hi, {"iterations": 0, "a_value": robin_constant(hi)}) if full_output else hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError(
            f"no sign change in bracket ({lo}, {hi}): "
            f"A_v - A0 = {flo:.6g} and {fhi:.6g}"
        )
    mid, fmid, it = lo, flo, 0
    for it in range(1, max_iters + 1):
        mid = 0.5 * (lo + hi)
        fmid = robin_constant(mid) - a0
        if abs(fmid) < tol:
            break
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    else:
        raise RuntimeError("bisection did not reach tolerance")
    if full_output:
        return mid, {"iterations": it, "a_value": float(fmid + a0)}
    return mid


# ----------------------------------------------------------------------
# gridded Green function and singular quadrature
# ----------------------------------------------------------------------

def green_field(torus: FlatTorus, p=(0.0, 0.0), tol: float = 1e-12) -> Field:
    """Sample G(., p) on the grid.

    Grid nodes hitting p (within 1e-12) receive the regularised value
    lim (G + 4 log r) = A_v; their flat indices are recorded on the
    returned field as ``singular_nodes``.
    """
    X, Y = torus.mesh()
    dx, dy = wrap_displacement(torus, X, Y, p)
    rho = np.hypot(dx, dy)
    singular = rho < SOURCE_TOL
    z = dx + 1j * dy
    vals = np.empty_like(rho)
    if np.any(~singular):
        vals[~singular] = green_eval(z[~singular], torus.v, tol)
    vals[singular] = robin_constant(torus.v, tol)
    return Field(torus, vals, singular_nodes=np.flatnonzero(singular.ravel()))


def _default_cutoff(torus: FlatTorus) -> RadialCutoff:
    inj = torus.injectivity_radius
    return RadialCutoff(0.3 * inj, 0.95 * inj, order=5)


def _log_bump_volume(cutoff: RadialCutoff, coeff: float) -> float:
    """int coeff*log(r)*chi(r) dvol in geodesic polar coordinates."""
    bp = geometric_breakpoints(cutoff.r2 * 1e-13, cutoff.r2, per_decade=4)
    r, w = gauss_panels(bp, deg=24)
    return float(np.sum(w * coeff * np.log(r) * cutoff(r) * 2.0 * np.pi * r))


def integrate_with_log_singularity(f: Field, p, coeff: float = -4.0,
                                   cutoff: RadialCutoff | None = None) -> float:
    """int f dvol for fields behaving like coeff*log r near p.

    Subtracts coeff*log(r)*chi(r) on the grid (restoring smooth-quadrature
    accuracy) and adds back its polar-coordinate integral.  Nodes flagged
    singular are assumed to store the regularised limit f - coeff*log r.
    """
    torus = f.torus
    if cutoff is None:
        cutoff = _default_cutoff(torus)
    X, Y = torus.mesh()
    r = geodesic_distance(torus, X, Y, p)
    flat = f.values.copy().ravel()
    rs = r.ravel()
    mask = np.ones(flat.size, dtype=bool)
    mask[list(f.singular_nodes)] = False
    flat[mask] = flat[mask] - coeff * np.log(rs[mask]) * cutoff(rs[mask])
    # flagged nodes already hold the regularised value (chi == 1 there)
    return float(flat.mean() + _log_bump_volume(cutoff, coeff))


def weak_laplace_residual(G: Field, phi: Field, p,
                          cutoff: RadialCutoff | None = None) -> float:
    """Residual of the defining equation tested against a smooth field:

        int G Lap(phi) dvol - 8 pi int phi dvol + 8 pi phi(p).

    Vanishes (up to quadrature error) when G is the torus Green function.
    """
    torus = G.torus
    if cutoff is None:
        cutoff = _default_cutoff(torus)
    lap = laplacian(phi)
    X, Y = torus.mesh()
    r = geodesic_distance(torus, X, Y, p)
    gvals = G.values.copy().ravel()
    rs = r.ravel()
    mask = np.ones(gvals.size, dtype=bool)
    mask[list(G.singular_nodes)] = False
    gvals[mask] = gvals[mask] + 4.0 * np.log(rs[mask]) * cutoff(rs[mask])
    grid_term = float(np.mean(gvals * lap.values.ravel()))

    # polar part: int -4 log(r) chi(r) Lap(phi) r dr dtheta  (normal coords)
    bp = geometric_breakpoints(cutoff.r2 * 1e-10, cutoff.r2, per_decade=5)
    R, T, W = polar_quadrature_nodes(bp, n_theta=64)
    sv = np.sqrt(torus.v)
    xs = p[0] + sv * R * np.cos(T)
    ys = p[1] + sv * R * np.sin(T)
    lap_pts = eval_at_points(lap, xs, ys)
    polar_term = float(np.sum(W * (-4.0) * np.log(R) * cutoff(R) * lap_pts))

    phi_p = float(eval_at_points(phi, [p[0]], [p[1]])[0])
    return grid_term + polar_term - EIGHT_PI * integrate(phi) + EIGHT_PI * phi_p


# ----------------------------------------------------------------------
# local expansion
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class GreenExpansion:
    """Coefficients of G = -4 log r + A + b1 x1 + b2 x2 + c1 x1^2 + 2 c2 x1 x2
    + c3 x2^2 + O(r^4) in geodesic normal coordinates around p."""

    A: float
    b1: float
    b2: float
    c1: float
    c2: float
    c3: float
    p: tuple
    fit_residual: float


def extract_expansion(G: Field, p, annulus=None,
                      include_quartic: bool = True) -> GreenExpansion:
    """Least-squares fit of G + 4 log r on an annulus around p.

    Quartic basis columns are included by default (the torus expansion has
    no odd terms, so the next correction after the quadratic is quartic);
    they absorb the O(r^4) remainder and are discarded.
    """
    torus = G.torus
    X, Y = torus.mesh()
    dx, dy = wrap_displacement(torus, X, Y, p)
    sv = np.sqrt(torus.v)
    x1, x2 = dx / sv, dy / sv
    r = np.hypot(x1, x2)
    if annulus is None:
        h_geo = max(torus.hx, torus.hy) / sv
        annulus = (4.0 * h_geo, 0.1 * min(1.0, torus.v))
    r_min, r_max = annulus
    if r_max > torus.injectivity_radius:
        raise ValueError("annulus extends beyond the injectivity radius")
    mask = (r >= r_min) & (r <= r_max)
    n_pts = int(mask.sum())
    if n_pts < 200:
        raise FitConditioningError(
            f"annulus too thin: only {n_pts} grid points in "
            f"[{r_min:.3g}, {r_max:.3g}] (need >= 200)"
        )
    t1, t2, rr = x1[mask], x2[mask], r[mask]
    target = G.values[mask] + 4.0 * np.log(rr)
    cols = [np.ones_like(t1), t1, t2, t1 * t1, t1 * t2, t2 * t2]
    if include_quartic:
        cols += [t1**4, t1**3 * t2, t1**2 * t2**2, t1 * t2**3, t2**4]
    M = np.stack(cols, axis=1)
    scale = np.sqrt(np.mean(M * M, axis=0))
    Ms = M / scale
    sol, _, _, sv_vals = np.linalg.lstsq(Ms, target, rcond=None)
    cond = sv_vals[0] / sv_vals[-1]
    if cond > 1e8:
        raise FitConditioningError(
            f"expansion fit ill-conditioned (condition estimate {cond:.3g}); "
            "widen the annulus"
        )
    coef = sol / scale
    resid = target - M @ coef
    return GreenExpansion(
        A=float(coef[0]), b1=float(coef[1]), b2=float(coef[2]),
        c1=float(coef[3]), c2=float(coef[4]) / 2.0, c3=float(coef[5]),
        p=(float(p[0]), float(p[1])),
        fit_residual=float(np.sqrt(np.mean(resid**2))),
    )


def curvature_identity_defect(e: GreenExpansion, K: float) -> float:
    """Defect of the curvature identity c1 + c3 + (2/3) K = 4 pi."""
    return float(e.c1 + e.c3 + (2.0 / 3.0) * K - 4.0 * np.pi)


# ----------------------------------------------------------------------
# independent lattice-Fourier oracle
# ----------------------------------------------------------------------

@lru_cache(maxsize=8)
def _fourier_solution(v: float, modes: int):
    """Spectral solve of the smooth remainder after peeling -4 log rho.

    Completely independent of the q-product: writes G = s + R + c0 with
    s = -4 log(rho) chi(rho) in *flat* coordinates, computes the smooth
    source of R analytically, and inverts the flat Laplacian by FFT.
    """
    nx = modes
    ny = max(8, 2 * round(v * modes / 2))
    rf2 = 0.45 * min(1.0, v)
    cut = RadialCutoff(0.5 * rf2, rf2, order=5)
    x = np.arange(nx) / nx
    y = v * np.arange(ny) / ny
    X, Y = np.meshgrid(x, y, indexing="ij")
    dx = X - np.round(X)
    dy = Y - v * np.round(Y / v)
    rho = np.hypot(dx, dy)
    # flat Laplacian of s away from the origin (radial closed form)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = -4.0 * (cut.second(rho) * np.log(rho)
                    + cut.prime(rho) * (np.log(rho) + 2.0) / rho)
    w[rho < cut.r1 * 0.5] = 0.0
    w[rho == 0.0] = 0.0
    m = np.fft.fftfreq(nx, d=1.0 / nx)
    n = np.fft.fftfreq(ny, d=1.0 / ny)
    M, N = np.meshgrid(m, n, indexing="ij")
    denom = 4.0 * np.pi**2 * (M**2 + (N / v) ** 2)
    denom[0, 0] = 1.0
    w_hat = np.fft.fft2(w) / (nx * ny)
    R_hat = w_hat / denom
    R_hat[0, 0] = 0.0
    # mean of s over dvol, subtracted so the total has zero mean
    bp = geometric_breakpoints(rf2 * 1e-13, rf2, per_decade=4)
    rq, wq = gauss_panels(bp, deg=24)
    s_mean = np.sum(wq * (-4.0) * np.log(rq) * cut(rq) * 2.0 * np.pi * rq) / v
    return cut, R_hat, M, N, float(-s_mean)


def green_fourier_oracle(z, v: float, modes: int = 384):
    """Validation-only evaluation of G(z, 0) by the spectral route."""
    v = float(v)
    cut, R_hat, M, N, c0 = _fourier_solution(v, modes)
    x, y = _reduce(z, v)
    rho = np.hypot(x, y)
    if np.any(rho < SOURCE_TOL):
        raise SourcePointError("evaluation at source point")
    scalar = np.ndim(z) == 0
    x, y, rho = np.atleast_1d(x), np.atleast_1d(y), np.atleast_1d(rho)
    s = -4.0 * np.log(rho) * cut(rho)
    keep = np.abs(R_hat) > 1e-18 * np.abs(R_hat).max()
    cs, ms, ns = R_hat[keep], M[keep], N[keep]
    out = np.empty(x.size)
    for i in range(x.size):
        phase = np.exp(2j * np.pi * (ms * x[i] + ns * y[i] / v))
        out[i] = (cs * phase).sum().real
    g = s + out + c0
    return float(g[0]) if scalar else g
