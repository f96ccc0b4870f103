"""Mini-language for weight functions h.

Terms are joined by '+'; each term is one of

    const:<c>                       constant c
    cos:ax=<A>                      A * cos(2 pi x)
    cos:ay=<A>                      A * cos(2 pi y / v)
    bump:<amp>,<sigma>,<x0>,<y0>    periodised Gaussian bump

Example: "const:1+cos:ax=0.2" is 1 + 0.2 cos(2 pi x).  The language covers
every weight used by the verification suite while staying trivially safe
to parse.  Weights must come out positive on the grid wherever they are
used as h.
"""

from __future__ import annotations

import numpy as np

from .torus import Field, FlatTorus, sample_function

__all__ = ["HSpecError", "parse_h_spec", "h_spec_field"]


class HSpecError(ValueError):
    """Malformed h specification."""


def _parse_term(term: str):
    term = term.strip()
    if not term:
        raise HSpecError("empty term in h spec")
    kind, _, arg = term.partition(":")
    kind = kind.strip().lower()
    if kind == "const":
        try:
            c = float(arg)
        except ValueError:
            raise HSpecError(f"const term needs a number, got {arg!r}") from None
        return lambda x, y, v: np.full_like(np.asarray(x, dtype=float), c)
    if kind == "cos":
        key, _, val = arg.partition("=")
        key = key.strip().lower()
        try:
            amp = float(val)
        except ValueError:
            raise HSpecError(f"cos term needs <axis>=<amp>, got {arg!r}") from None
        if key == "ax":
            return lambda x, y, v: amp * np.cos(2.0 * np.pi * np.asarray(x))
        if key == "ay":
            return lambda x, y, v: amp * np.cos(2.0 * np.pi * np.asarray(y) / v)
        raise HSpecError(f"cos axis must be ax or ay, got {key!r}")
    if kind == "bump":
        parts = arg.split(",")
        if len(parts) != 4:
            raise HSpecError("bump term needs amp,sigma,x0,y0")
        try:
            amp, sigma, x0, y0 = (float(p) for p in parts)
        except ValueError:
            raise HSpecError(f"bump parameters must be numbers, got {arg!r}") from None
        if sigma <= 0:
            raise HSpecError("bump sigma must be positive")

        def bump(x, y, v):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            out = np.zeros_like(x)
            # wrap over neighbouring images; adequate for sigma << period
            for mx in (-1, 0, 1):
                for my in (-1, 0, 1):
                    d2 = (x - x0 + mx) ** 2 + (y - y0 + my * v) ** 2
                    out += amp * np.exp(-0.5 * d2 / sigma**2)
            return out

        return bump
    raise HSpecError(f"unknown h term {kind!r} (expected const, cos, or bump)")


def parse_h_spec(spec: str):
    """Compile an h spec into a callable (x, y, v) -> values."""
    terms = [_parse_term(t) for t in spec.split("+")]

    def evaluate(x, y, v):
        acc = terms[0](x, y, v)
        for t in terms[1:]:
            acc = acc + t(x, y, v)
        return acc

    return evaluate


def h_spec_field(spec: str, torus: FlatTorus, require_positive: bool = True) -> Field:
    """Sample an h spec on the grid, validating positivity."""
    fn = parse_h_spec(spec)
    f = sample_function(torus, lambda x, y: fn(x, y, torus.v))
    if require_positive and f.values.min() <= 0:
        raise HSpecError(
            f"h spec {spec!r} is not positive on the grid "
            f"(min {f.values.min():.6g})"
        )
    return f
