"""Geometry, grids, and spectral calculus on unit-area flat tori.

The torus with modulus v > 0 is the quotient of the (x, y) plane by the
lattice spanned by (1, 0) and (0, v), carrying the constant conformal
metric (dx^2 + dy^2)/v.  Its Riemannian area is exactly 1 for every v,
which fixes all normalisation conventions used in this package.

Conventions:

* fields are sampled on a uniform nx-by-ny tensor grid over [0,1) x [0,v);
* the Riemannian integral of a sampled field is the plain mean of its
  grid values (periodic trapezoid rule, unit total area);
* the Laplace-Beltrami operator is v*(d2/dx2 + d2/dy2), applied spectrally;
* the Dirichlet integral int |grad f|^2 dvol equals the flat Euclidean
  Dirichlet integral over the fundamental domain (in two dimensions the
  conformal factor drops out of this quantity);
* geodesic distances are flat distances divided by sqrt(v).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FlatTorus",
    "Field",
    "make_torus",
    "integrate",
    "dirichlet_energy",
    "laplacian",
    "partial_x",
    "partial_y",
    "project_mean_zero",
    "exp_integral",
    "log_exp_integral",
    "sample_function",
    "constant_field",
    "eval_at_points",
    "wrap_displacement",
    "geodesic_distance",
    "field_to_csv",
    "field_from_csv",
    "field_to_json",
    "field_from_json",
]


@dataclass(frozen=True)
class FlatTorus:
    """Unit-area flat torus with modulus v, discretised on an nx-by-ny grid."""

    v: float
    nx: int
    ny: int

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return self.v / self.ny

    @property
    def aspect(self) -> float:
        """Grid aspect ratio hy/hx = v*nx/ny; 1 means isotropic spacing."""
        return self.v * self.nx / self.ny

    @property
    def injectivity_radius(self) -> float:
        """Geodesic injectivity radius: half the shortest closed geodesic."""
        return min(1.0, self.v) / (2.0 * np.sqrt(self.v))

    def axes(self):
        x = np.arange(self.nx) / self.nx
        y = self.v * np.arange(self.ny) / self.ny
        return x, y

    def mesh(self):
        """Coordinate arrays of shape (nx, ny), indexing 'ij'."""
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="ij")

    def wavenumbers(self):
        """Integer mode numbers (m, n) matching fft2 layout, shape (nx, ny)."""
        m = np.fft.fftfreq(self.nx, d=1.0 / self.nx)
        n = np.fft.fftfreq(self.ny, d=1.0 / self.ny)
        return np.meshgrid(m, n, indexing="ij")


class Field:
    """Real doubly periodic function: grid samples plus cached spectrum.

    Values are immutable from the caller's point of view; all operations
    return new fields, and the spectral cache can therefore never go stale.
    """

    __slots__ = ("torus", "_values", "_coeffs", "singular_nodes")

    def __init__(self, torus: FlatTorus, values: np.ndarray, singular_nodes=()):
        values = np.asarray(values, dtype=float)
        if values.shape != (torus.nx, torus.ny):
            raise ValueError(
                f"field shape {values.shape} does not match grid "
                f"({torus.nx}, {torus.ny})"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values = values.copy()
        values.setflags(write=False)
        self.torus = torus
        self._values = values
        self._coeffs = None
        # flat indices of nodes holding a regularised (singularity-removed)
        # value rather than a plain sample; consumed by singular quadratures
        self.singular_nodes = tuple(int(i) for i in singular_nodes)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def coeffs(self) -> np.ndarray:
        """Normalised DFT coefficients: f = sum c_mn exp(2 pi i (m x + n y/v))."""
        if self._coeffs is None:
            c = np.fft.fft2(self._values) / (self.torus.nx * self.torus.ny)
            c.setflags(write=False)
            self._coeffs = c
        return self._coeffs

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.torus, values)

    def __repr__(self):
        t = self.torus
        return f"Field(v={t.v}, grid={t.nx}x{t.ny}, mean={self._values.mean():.3g})"


def make_torus(v: float, nx: int, ny: int | None = None,
               allow_anisotropic: bool = False) -> FlatTorus:
    """Build a unit-area flat torus with an even, near-isotropic grid.

    If ny is omitted it is chosen so that hy is as close as possible to hx.
    """
    v = float(v)
    if not np.isfinite(v) or v <= 0:
        raise ValueError("modulus must be positive")
    if ny is None:
        ny = max(8, 2 * round(v * nx / 2))
    for name, n in (("nx", nx), ("ny", ny)):
        if n < 8 or n % 2 != 0:
            raise ValueError(f"{name}={n}: grid sizes must be even and >= 8")
    torus = FlatTorus(v, int(nx), int(ny))
    if not allow_anisotropic and not 0.5 <= torus.aspect <= 2.0:
        raise ValueError(
            f"grid aspect ratio hy/hx = {torus.aspect:.3g} outside [0.5, 2]; "
            "pick ny closer to v*nx or pass allow_anisotropic=True"
        )
    return torus


def constant_field(torus: FlatTorus, c: float = 0.0) -> Field:
    return Field(torus, np.full((torus.nx, torus.ny), float(c)))


def sample_function(torus: FlatTorus, fn) -> Field:
    """Sample fn(x, y) on the grid; fn must accept broadcast arrays."""
    X, Y = torus.mesh()
    return Field(torus, fn(X, Y))


def integrate(f: Field) -> float:
    """Riemannian integral over the torus; exact for resolved trig polynomials."""
    return float(f.values.mean())


def _grad_symbols(torus: FlatTorus):
    m, n = torus.wavenumbers()
    kx = 2.0 * np.pi * m
    ky = 2.0 * np.pi * n / torus.v
    return kx, ky


def dirichlet_energy(f: Field) -> float:
    """int |grad f|^2 dvol (unhalved), computed spectrally.

    Equals the flat Euclidean Dirichlet integral over [0,1) x [0,v); the
    metric factor 1/v cancels in two dimensions.
    """
    kx, ky = _grad_symbols(f.torus)
    p = np.abs(f.coeffs) ** 2 * (kx**2 + ky**2)
    return float(f.torus.v * p.sum())


def laplacian(f: Field) -> Field:
    """Laplace-Beltrami operator v*(d2/dx2 + d2/dy2), applied spectrally."""
    kx, ky = _grad_symbols(f.torus)
    symbol = -f.torus.v * (kx**2 + ky**2)
    out = np.fft.ifft2(symbol * f.coeffs) * (f.torus.nx * f.torus.ny)
    return f.with_values(out.real)


def partial_x(f: Field) -> Field:
    """Coordinate derivative d/dx, applied spectrally."""
    kx, _ = _grad_symbols(f.torus)
    out = np.fft.ifft2(1j * kx * f.coeffs) * (f.torus.nx * f.torus.ny)
    return f.with_values(out.real)


def partial_y(f: Field) -> Field:
    """Coordinate derivative d/dy, applied spectrally."""
    _, ky = _grad_symbols(f.torus)
    out = np.fft.ifft2(1j * ky * f.coeffs) * (f.torus.nx * f.torus.ny)
    return f.with_values(out.real)


def project_mean_zero(f: Field) -> Field:
    return f.with_values(f.values - f.values.mean())


def _require_positive(h: Field):
    if h.values.min() <= 0:
        raise ValueError("weight h must be positive everywhere")


def log_exp_integral(h: Field, u: Field) -> float:
    """log int h e^u dvol, evaluated with a max shift to avoid overflow."""
    _require_positive(h)
    m = float(u.values.max())
    return m + float(np.log(np.mean(h.values * np.exp(u.values - m))))


def exp_integral(h: Field, u: Field, return_log: bool = False) -> float:
    """int h e^u dvol by grid quadrature (h > 0 required)."""
    lg = log_exp_integral(h, u)
    return lg if return_log else float(np.exp(lg))


def wrap_displacement(torus: FlatTorus, x, y, p):
    """Nearest-image displacement (dx, dy) from point p, flat coordinates."""
    dx = np.asarray(x, dtype=float) - p[0]
    dy = np.asarray(y, dtype=float) - p[1]
    dx -= np.round(dx)
    dy -= torus.v * np.round(dy / torus.v)
    return dx, dy


def geodesic_distance(torus: FlatTorus, x, y, p):
    """Geodesic distance to p: nearest-image flat distance / sqrt(v)."""
    dx, dy = wrap_displacement(torus, x, y, p)
    return np.hypot(dx, dy) / np.sqrt(torus.v)


def eval_at_points(f: Field, x, y, drop_tol: float = 1e-13) -> np.ndarray:
    """Trigonometric interpolation of f at arbitrary points.

    Exact for band-limited fields.  Modes with relative magnitude below
    drop_tol are skipped, so smooth fields evaluate cheaply.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    c = f.coeffs
    m, n = f.torus.wavenumbers()
    keep = np.abs(c) > drop_tol * max(np.abs(c).max(), 1e-300)
    cs, ms, ns = c[keep], m[keep], n[keep]
    out = np.zeros(x.shape, dtype=complex)
    # chunk over modes to bound the temporary (npts x nmodes) matrix
    step = max(1, int(5e6 / max(x.size, 1)))
    for i in range(0, cs.size, step):
        phase = np.exp(
            2j * np.pi * (np.multiply.outer(x, ms[i:i + step])
                          + np.multiply.outer(y, ns[i:i + step] / f.torus.v))
        )
        out += phase @ cs[i:i + step]
    return out.real


# ----------------------------------------------------------------------
# import / export
# ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def field_to_csv(f: Field, path):
    """Write "x,y,value" rows in row-major (x outer, y inner) order."""
    X, Y = f.torus.mesh()
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for xi, yi, vi in zip(X.ravel(), Y.ravel(), f.values.ravel()):
            fh.write(f"{_fmt(xi)},{_fmt(yi)},{_fmt(vi)}\n")


def field_from_csv(path) -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValueError(f"{path}: expected three columns x,y,value")
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    nx, ny = xs.size, ys.size
    if nx * ny != data.shape[0]:
        raise ValueError(f"{path}: grid is not a complete tensor product")
    # y axis is 0, v/ny, ..., v(ny-1)/ny, so v = ny * spacing
    v = float(ny * (ys[1] - ys[0])) if ny > 1 else 1.0
    torus = make_torus(v, nx, ny, allow_anisotropic=True)
    values = data[:, 2].reshape(nx, ny)
    return Field(torus, values)


def field_to_json(f: Field, path):
    rec = {
        "v": f.torus.v,
        "nx": f.torus.nx,
        "ny": f.torus.ny,
        "values": [float(x) for x in f.values.ravel()],
    }
    with open(path, "w") as fh:
        json.dump(rec, fh)


def field_from_json(path) -> Field:
    with open(path) as fh:
        rec = json.load(fh)
    torus = make_torus(rec["v"], rec["nx"], rec["ny"], allow_anisotropic=True)
    values = np.asarray(rec["values"], dtype=float).reshape(rec["nx"], rec["ny"])
    return Field(torus, values)
