"""Minimisation of the relaxed energy J_eps over mean-zero fields.

The descent direction is the L2 gradient preconditioned by (1 - Lap)^(-1)
in spectral space, which turns the flow into a well-conditioned Sobolev
gradient flow; steps are accepted under an Armijo backtracking rule (or a
safeguarded Barzilai-Borwein rule), so accepted energies never increase.
The iterate is projected to mean zero after every step and the final
answer is shifted onto the constraint surface int h e^u = 1.

A solve either converges (sup-norm of the critical-equation residual
below grad_tol) or runs out of iterations; non-convergence is a reported
outcome, not an error.  With eps = 0 the infimum may not be attained and
a stalled run is the expected signature of concentration.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .functional import (
    EnergyBreakdown,
    eval_J,
    l2_gradient,
    normalize_constraint,
    pde_residual,
)
from .torus import Field, integrate

__all__ = [
    "SolverConfig",
    "SolveResult",
    "SolverDivergenceError",
    "minimize",
    "continuation",
    "energy_gap_vs_zero",
]


class SolverDivergenceError(RuntimeError):
    """Raised on NaN/overflow; carries the last finite iterate."""

    def __init__(self, message, iterate=None, iteration=None):
        super().__init__(message)
        self.iterate = iterate
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    eps: float = 1.0
    max_iters: int = 5000
    grad_tol: float = 1e-8            # sup-norm of the L2 gradient
    step_rule: str = "backtracking"   # fixed | backtracking | bb
    init: object = "zero"             # "zero" | ("random", seed, amplitude) | Field
    step_size: float = 1.0            # trial (fixed rule: the) step
    armijo_c: float = 1e-4
    record_energies: bool = True

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.step_rule not in ("fixed", "backtracking", "bb"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class SolveResult:
    u: Field                       # normalised to int h e^u = 1
    energy: EnergyBreakdown
    residual: float
    iters: int
    peak_value: float              # max u
    peak_point: tuple              # grid argmax of u
    peak_scale: float              # exp(peak_value / 2)
    converged: bool
    eps: float
    energies: list = dataclass_field(default_factory=list)


def _initial_field(h: Field, cfg: SolverConfig) -> Field:
    init = cfg.init
    if isinstance(init, Field):
        if init.torus != h.torus:
            raise ValueError("warm-start field lives on a different grid")
        vals = init.values
    elif init == "zero":
        vals = np.zeros((h.torus.nx, h.torus.ny))
    elif isinstance(init, tuple) and init and init[0] == "random":
        _, seed, amplitude = init
        rng = np.random.default_rng(seed)
        white = rng.standard_normal((h.torus.nx, h.torus.ny))
        # mollify so the start is smooth at every grid size
        m, n = h.torus.wavenumbers()
        damp = np.exp(-0.05 * (m**2 + n**2))
        vals = np.fft.ifft2(np.fft.fft2(white) * damp).real
        vals *= amplitude / max(np.abs(vals).max(), 1e-300)
    else:
        raise ValueError(f"unrecognised init spec {init!r}")
    return Field(h.torus, vals - vals.mean())


def _precondition(g: Field) -> Field:
    """(1 - Lap)^(-1) g with the mean removed."""
    t = g.torus
    m, n = t.wavenumbers()
    lam = 4.0 * np.pi**2 * (t.v * m**2 + n**2 / t.v)
    ghat = np.fft.fft2(g.values) / (1.0 + lam)
    ghat[0, 0] = 0.0
    return g.with_values(np.fft.ifft2(ghat).real)


def minimize(h: Field, cfg: SolverConfig) -> SolveResult:
    """Descend J_eps from the configured start; see module docstring."""
    if h.values.min() <= 0:
        raise ValueError("weight h must be positive everywhere")
    u = _initial_field(h, cfg)
    J = eval_J(u, h, cfg.eps).total
    energies = [J]
    g = l2_gradient(u, h, cfg.eps)
    res = float(np.abs(g.values).max())
    it = 0
    prev_u = prev_g = None
    while res >= cfg.grad_tol and it < cfg.max_iters:
        d = _precondition(g)
        slope = -float(np.mean(g.values * d.values))  # <g, -P g> < 0
        if not np.isfinite(slope) or slope >= 0:
            raise SolverDivergenceError(
                f"descent direction failed at iteration {it} (slope {slope})",
                iterate=u, iteration=it)

        trial = cfg.step_size
        if cfg.step_rule == "bb" and prev_u is not None:
            s = u.values - prev_u.values
            y = g.values - prev_g.values
            sy = float(np.mean(s * y))
            if sy > 0:
                trial = float(np.clip(np.mean(s * s) / sy, 1e-6, 1e3))

        prev_u, prev_g = u, g
        # below this, energy differences drown in round-off and the
        # (contractive) full preconditioned step is taken on faith
        noise = 1e-13 * (1.0 + abs(J))
        if cfg.step_rule == "fixed":
            u_new_vals = u.values - trial * d.values
            u_new = Field(h.torus, u_new_vals - u_new_vals.mean())
            J_new = eval_J(u_new, h, cfg.eps).total
        else:
            step = trial
            accepted = False
            for _ in range(60):
                u_new_vals = u.values - step * d.values
                u_new = Field(h.torus, u_new_vals - u_new_vals.mean())
                J_new = eval_J(u_new, h, cfg.eps).total
                required = cfg.armijo_c * step * slope
                if J_new <= J - required or (required < noise and J_new <= J + noise):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
        if not np.isfinite(J_new):
            raise SolverDivergenceError(
                f"energy became non-finite at iteration {it}",
                iterate=u, iteration=it)
        if cfg.step_rule != "fixed" and J_new > J + 10.0 * noise:
            raise SolverDivergenceError(
                f"accepted step increased the energy at iteration {it}",
                iterate=u, iteration=it)
        u, J = u_new, J_new
        it += 1
        if cfg.record_energies:
            energies.append(J)
        g = l2_gradient(u, h, cfg.eps)
        res = float(np.abs(g.values).max())

    u_out = normalize_constraint(u, h)
    energy = eval_J(u_out, h, cfg.eps)
    residual = pde_residual(u_out, h, cfg.eps)
    flat_idx = int(np.argmax(u_out.values))
    i, j = divmod(flat_idx, h.torus.ny)
    x, y = h.torus.axes()
    peak = float(u_out.values[i, j])
    return SolveResult(
        u=u_out,
        energy=energy,
        residual=residual,
        iters=it,
        peak_value=peak,
        peak_point=(float(x[i]), float(y[j])),
        peak_scale=float(np.exp(0.5 * peak)),
        converged=bool(residual < cfg.grad_tol),
        eps=cfg.eps,
        energies=energies if cfg.record_energies else [],
    )


def continuation(h: Field, eps_schedule, cfg: SolverConfig) -> list:
    """Warm-started chain of solves along a strictly decreasing eps schedule.

    The peak values (and scales) across the returned results trace the
    concentration behaviour as eps decreases; a bounded trajectory signals
    convergence to a genuine minimiser, an exploding one signals blow-up.
    """
    schedule = [float(e) for e in eps_schedule]
    if not schedule:
        raise ValueError("empty eps schedule")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    if schedule[-1] < 0:
        raise ValueError("eps must remain nonnegative")
    results = []
    warm = cfg.init
    for eps in schedule:
        step_cfg = SolverConfig(
            eps=eps, max_iters=cfg.max_iters, grad_tol=cfg.grad_tol,
            step_rule=cfg.step_rule, init=warm, step_size=cfg.step_size,
            armijo_c=cfg.armijo_c, record_energies=cfg.record_energies,
        )
        result = minimize(h, step_cfg)
        results.append(result)
        warm = result.u
    return results


def energy_gap_vs_zero(h: Field, result: SolveResult) -> float:
    """J_eps(0) - J_eps(u); nonnegative (up to round-off) for a minimiser,
    since the zero field is an admissible competitor."""
    zero = Field(h.torus, np.zeros((h.torus.nx, h.torus.ny)))
    return eval_J(zero, h, result.eps).total - result.energy.total
