"""Quadrature helpers: smoothstep cutoffs, panelled Gauss-Legendre rules,
and polar integration around a marked point.

Log singularities are handled by multiplying integrands with a radial
cutoff chi that is identically 1 near the centre and identically 0 beyond
a second radius: the near part is integrated in polar coordinates with
panelled Gauss-Legendre rules, the far part on the periodic grid where the
windowed integrand is smooth.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

__all__ = [
    "smoothstep",
    "smoothstep_prime",
    "smoothstep_second",
    "RadialCutoff",
    "gauss_panels",
    "geometric_breakpoints",
    "polar_quadrature_nodes",
]


def smoothstep(t, order: int = 3):
    """Polynomial smoothstep S_n on [0,1] with n vanishing derivatives at both ends.

    order=1 is the cubic 3t^2-2t^3, order=2 the quintic, and so on.
    """
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    n = order
    acc = np.zeros_like(t)
    for k in range(n + 1):
        acc += comb(n + k, k) * comb(2 * n + 1, n - k) * (-t) ** k
    return t ** (n + 1) * acc


def smoothstep_prime(t, order: int = 3):
    """Derivative of smoothstep (zero outside [0,1])."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    n = order
    acc = np.zeros_like(tc)
    for k in range(n + 1):
        coef = comb(n + k, k) * comb(2 * n + 1, n - k) * (-1.0) ** k
        acc += coef * (n + 1 + k) * tc ** (n + k)
    return np.where(inside, acc, 0.0)


def smoothstep_second(t, order: int = 3):
    """Second derivative of smoothstep (zero outside [0,1])."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    n = order
    acc = np.zeros_like(tc)
    for k in range(n + 1):
        coef = comb(n + k, k) * comb(2 * n + 1, n - k) * (-1.0) ** k
        p = n + 1 + k
        acc += coef * p * (p - 1) * tc ** (p - 2)
    return np.where(inside, acc, 0.0)


@dataclass(frozen=True)
class RadialCutoff:
    """chi(r) = 1 for r <= r1, smoothstep down to 0 at r2, 0 beyond."""

    r1: float
    r2: float
    order: int = 3

    def __post_init__(self):
        if not 0.0 <= self.r1 < self.r2:
            raise ValueError(f"cutoff radii must satisfy 0 <= r1 < r2, got "
                             f"({self.r1}, {self.r2})")

    def __call__(self, r):
        t = (np.asarray(r, dtype=float) - self.r1) / (self.r2 - self.r1)
        return 1.0 - smoothstep(t, self.order)

    def prime(self, r):
        t = (np.asarray(r, dtype=float) - self.r1) / (self.r2 - self.r1)
        return -smoothstep_prime(t, self.order) / (self.r2 - self.r1)

    def second(self, r):
        t = (np.asarray(r, dtype=float) - self.r1) / (self.r2 - self.r1)
        return -smoothstep_second(t, self.order) / (self.r2 - self.r1) ** 2


def geometric_breakpoints(lo: float, hi: float, scale: float | None = None,
                          per_decade: int = 4) -> np.ndarray:
    """Panel breakpoints for [lo, hi], geometrically refined towards lo.

    If scale is given and lies inside the interval, refinement is anchored
    there (useful when the integrand varies on a known inner scale).
    """
    if hi <= lo:
        raise ValueError("empty panel range")
    anchor = lo if scale is None else max(lo, min(scale, hi))
    pts = [lo]
    if anchor > lo:
        pts.append(anchor)
    r = pts[-1] if pts[-1] > 0 else hi * 1e-8
    if r == 0.0:
        r = hi * 1e-8
        pts.append(r)
    n = max(1, int(np.ceil(per_decade * np.log10(hi / r)))) if hi > r else 0
    for k in range(1, n + 1):
        pts.append(r * (hi / r) ** (k / n))
    pts[-1] = hi
    return np.unique(np.asarray(pts))


def gauss_panels(breakpoints: np.ndarray, deg: int = 20):
    """Gauss-Legendre nodes and weights over consecutive panels."""
    xg, wg = np.polynomial.legendre.leggauss(deg)
    a = np.asarray(breakpoints[:-1])
    b = np.asarray(breakpoints[1:])
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    nodes = (mid + half * xg[None, :]).ravel()
    weights = (half * wg[None, :]).ravel()
    return nodes, weights


def polar_quadrature_nodes(breakpoints: np.ndarray, n_theta: int = 128,
                           deg: int = 20):
    """Tensor nodes (r, theta) and combined weights for int f r dr dtheta.

    theta uses the periodic trapezoid rule (spectrally accurate); r uses
    panelled Gauss-Legendre.  Weights already include the r Jacobian.
    """
    r, wr = gauss_panels(breakpoints, deg)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    wt = 2.0 * np.pi / n_theta
    R = np.repeat(r, n_theta)
    T = np.tile(theta, r.size)
    W = np.repeat(wr * r, n_theta) * wt
    return R, T, W
