"""The variational objects: the energy functional J, its relaxed family
J_eps, gradients, the Moser-Trudinger ratio, and the existence-condition
checkers.

For a positive weight h and coefficient lam = 8 pi - eps,

    J_eps(u) = 1/2 int |grad u|^2 + lam int u - lam log int h e^u,

so eps = 0 gives J itself.  Both the linear and logarithmic terms carry
the same coefficient, hence J_eps(u + c) = J_eps(u) for every constant c
and every eps; the constraint int h e^u = 1 removes that gauge freedom.
Critical points solve  Lap u = lam - lam h e^u  once normalised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .green import GreenExpansion
from .torus import (
    Field,
    FlatTorus,
    dirichlet_energy,
    exp_integral,
    integrate,
    laplacian,
    log_exp_integral,
    partial_x,
    partial_y,
    sample_function,
)

__all__ = [
    "EnergyBreakdown",
    "HLocalData",
    "NormalizationError",
    "eval_J",
    "l2_gradient",
    "pde_residual",
    "normalize_constraint",
    "mt_ratio",
    "check_average_condition",
    "check_peak_condition",
    "argmax_condition_point",
    "h_local_data",
    "truncated_bubble_field",
    "bubble_family_stats",
    "bubble_family_ratio",
]

EIGHT_PI = 8.0 * np.pi


class NormalizationError(ValueError):
    """Raised when an operation requires int h e^u = 1 but gets something else."""


@dataclass(frozen=True)
class EnergyBreakdown:
    """The three terms of J_eps(u) and their sum."""

    dirichlet_half: float
    linear: float
    logterm: float
    total: float
    eps: float


def _check_pair(u: Field, h: Field):
    if u.torus != h.torus:
        raise ValueError("u and h must live on the same grid")
    if h.values.min() <= 0:
        raise ValueError("weight h must be positive everywhere")


def eval_J(u: Field, h: Field, eps: float = 0.0) -> EnergyBreakdown:
    """Evaluate J_eps(u); eps = 0 gives the critical functional J."""
    _check_pair(u, h)
    lam = EIGHT_PI - eps
    d = 0.5 * dirichlet_energy(u)
    lin = lam * integrate(u)
    logterm = -lam * log_exp_integral(h, u)
    return EnergyBreakdown(
        dirichlet_half=d, linear=lin, logterm=logterm,
        total=d + lin + logterm, eps=float(eps),
    )


def l2_gradient(u: Field, h: Field, eps: float = 0.0) -> Field:
    """L2 gradient of J_eps: -Lap u + lam - lam h e^u / int h e^u.

    Mean-zero by construction; vanishes exactly at normalised critical
    points.  The exponential is max-shifted so large peaks do not overflow.
    """
    _check_pair(u, h)
    lam = EIGHT_PI - eps
    m = float(u.values.max())
    w = h.values * np.exp(u.values - m)
    ratio = w / w.mean()
    g = -laplacian(u).values + lam - lam * ratio
    return u.with_values(g)


def pde_residual(u: Field, h: Field, eps: float = 0.0) -> float:
    """Sup-norm of  Lap u - lam + lam h e^u  for constraint-normalised u."""
    _check_pair(u, h)
    I = exp_integral(h, u)
    if abs(I - 1.0) > 1e-10:
        raise NormalizationError(
            f"int h e^u = {I!r}; normalise with normalize_constraint first"
        )
    lam = EIGHT_PI - eps
    res = laplacian(u).values - lam + lam * h.values * np.exp(u.values)
    return float(np.abs(res).max())


def normalize_constraint(u: Field, h: Field) -> Field:
    """Shift u by a constant so that int h e^u = 1 (J is unchanged)."""
    _check_pair(u, h)
    return u.with_values(u.values - log_exp_integral(h, u))


def mt_ratio(u: Field, coeff: float = 16.0 * np.pi) -> float:
    """int e^(u - mean u) dvol / exp(|grad u|_2^2 / coeff).

    With coeff = 16 pi the ratio is bounded over all u by a constant of
    the surface; any larger coeff loses that bound along concentrating
    families (sharpness of the exponent).
    """
    e = dirichlet_energy(u)
    um = u.values - u.values.mean()
    m = float(um.max())
    log_int = m + np.log(np.mean(np.exp(um - m)))
    return float(np.exp(log_int - e / coeff))


# ----------------------------------------------------------------------
# existence-condition checkers
# ----------------------------------------------------------------------

def check_average_condition(h: Field, a_const: float):
    """Comparison condition log int h > (1 + log pi) + max(A + 2 log h)/2.

    a_const is the (base-point independent) constant term of the Green
    expansion on this torus, so the max on the right is a_const + 2 log max h.
    Returns (holds, lhs - rhs).
    """
    if h.values.min() <= 0:
        raise ValueError("weight h must be positive everywhere")
    lhs = np.log(integrate(h))
    rhs = (1.0 + np.log(np.pi)) + 0.5 * (a_const + 2.0 * np.log(h.values.max()))
    margin = float(lhs - rhs)
    return margin > 0.0, margin


@dataclass(frozen=True)
class HLocalData:
    """Local data of the weight at the comparison point p0."""

    p0: tuple
    h_p0: float
    grad: tuple          # (k1, k2) in geodesic normal coordinates
    lap_h: float         # Laplace-Beltrami of h at p0

    def __post_init__(self):
        if self.h_p0 <= 0:
            raise ValueError("h(p0) must be positive")


def check_peak_condition(hd: HLocalData, expansion: GreenExpansion, K: float):
    """Second-order existence condition at the maximiser p0 of A + 2 log h.

    Evaluates  Lap h + 2(b1 k1 + b2 k2) + (8 pi + b1^2 + b2^2 - 2K) h(p0);
    the condition holds when this is positive.  Returns (holds, margin).
    """
    b1, b2 = expansion.b1, expansion.b2
    k1, k2 = hd.grad
    margin = (hd.lap_h + 2.0 * (b1 * k1 + b2 * k2)
              + (EIGHT_PI + b1 * b1 + b2 * b2 - 2.0 * K) * hd.h_p0)
    return margin > 0.0, float(margin)


def argmax_condition_point(h: Field, a_const: float, tie_tol: float = 1e-10):
    """Grid argmax of A + 2 log h (= argmax h when A is constant).

    Ties within tie_tol are broken by the first row-major index; returns
    (point, multiple) where multiple flags a non-unique maximiser.
    """
    if h.values.min() <= 0:
        raise ValueError("weight h must be positive everywhere")
    score = a_const + 2.0 * np.log(h.values)
    flat = score.ravel()
    best = flat.max()
    hits = np.flatnonzero(flat >= best - tie_tol)
    idx = int(hits[0])
    i, j = divmod(idx, h.torus.ny)
    x, y = h.torus.axes()
    return (float(x[i]), float(y[j])), len(hits) > 1


def h_local_data(h: Field, a_const: float) -> HLocalData:
    """Assemble HLocalData at the grid maximiser of A + 2 log h.

    Derivatives are spectral; the gradient is converted to geodesic normal
    coordinates (multiplied by sqrt(v)).
    """
    p0, _ = argmax_condition_point(h, a_const)
    t = h.torus
    i = int(round(p0[0] * t.nx)) % t.nx
    j = int(round(p0[1] / t.v * t.ny)) % t.ny
    sv = np.sqrt(t.v)
    k1 = partial_x(h).values[i, j] * sv
    k2 = partial_y(h).values[i, j] * sv
    lap = laplacian(h).values[i, j]
    return HLocalData(p0=p0, h_p0=float(h.values[i, j]),
                      grad=(float(k1), float(k2)), lap_h=float(lap))


# ----------------------------------------------------------------------
# truncated-bubble family for the sharpness experiment
# ----------------------------------------------------------------------

def truncated_bubble_field(torus: FlatTorus, delta: float, r0: float = 0.25,
                           center=(0.5, None)) -> Field:
    """Grid sample of the truncated bubble: -2 log(delta^2 + r^2) inside the
    geodesic ball of radius r0, the matching constant outside."""
    if r0 >= torus.injectivity_radius:
        raise ValueError("truncation radius must stay below the injectivity radius")
    cx = center[0]
    cy = 0.5 * torus.v if center[1] is None else center[1]

    def profile(x, y):
        dx = x - cx - np.round(x - cx)
        dy = y - cy - torus.v * np.round((y - cy) / torus.v)
        r2 = (dx * dx + dy * dy) / torus.v
        return -2.0 * np.log(delta**2 + np.minimum(r2, r0**2))

    return sample_function(torus, profile)


def bubble_family_stats(delta: float, r0: float = 0.25):
    """Closed forms for the truncated bubble on a unit-area torus:
    (dirichlet, int e^u dvol, mean of u).  Valid whenever the geodesic ball
    of radius r0 embeds."""
    d2, R2 = delta * delta, r0 * r0
    dirichlet = 16.0 * np.pi * (np.log1p(R2 / d2) - R2 / (d2 + R2))
    int_eu = (np.pi * (1.0 / d2 - 1.0 / (d2 + R2))
              + (1.0 - np.pi * R2) / (d2 + R2) ** 2)
    inner = -2.0 * np.pi * ((d2 + R2) * (np.log(d2 + R2) - 1.0)
                            - d2 * (np.log(d2) - 1.0))
    outer = (1.0 - np.pi * R2) * (-2.0 * np.log(d2 + R2))
    return float(dirichlet), float(int_eu), float(inner + outer)


def bubble_family_ratio(delta: float, coeff: float = 16.0 * np.pi,
                        r0: float = 0.25) -> float:
    """mt_ratio of the truncated bubble, evaluated from the closed forms
    (no grid, so arbitrarily small delta is exact)."""
    e, int_eu, mean_u = bubble_family_stats(delta, r0)
    return float(np.exp(np.log(int_eu) - mean_u - e / coeff))
