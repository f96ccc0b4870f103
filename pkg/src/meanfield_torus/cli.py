"""Command-line front end.

One command per process; every JSON output embeds the resolved
configuration for provenance, numbers are serialised with 17 significant
digits, and repeated runs with the same configuration and seed produce
byte-identical output.  Exit codes: 0 success, 2 validation error,
3 numerical non-convergence (partial output is still written).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import blowup as bl
from . import functional as fn
from . import green as gr
from . import solver as sv
from .hspec import HSpecError, h_spec_field
from .torus import field_from_csv, field_to_csv, make_torus

__all__ = ["RunConfig", "CliError", "parse_config", "run", "main"]


class CliError(ValueError):
    """Configuration problem; maps to exit code 2."""


class RunConfig:
    """Command tag plus the fully resolved option mapping."""

    def __init__(self, command: str, options: dict):
        self.command = command
        self.options = options

    def __getattr__(self, name):
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None

    def provenance(self) -> dict:
        return {"command": self.command, **self.options}


# ----------------------------------------------------------------------
# deterministic serialisation
# ----------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _to_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        items = sorted(obj.items())
        body = ",\n".join(
            f'{pad}  "{k}": {_to_json(v, indent + 1)}' for k, v in items
        )
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_to_json(v, indent) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if obj is None:
        return "null"
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(_to_json(obj) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt_float(x) for x in row) + "\n")


# ----------------------------------------------------------------------
# argument handling
# ----------------------------------------------------------------------

_COMMANDS = {}


def _command(name, help_text, options):
    """options: list of (flag, type, default, help)."""
    _COMMANDS[name] = {"help": help_text, "options": options}


_GRID_OPTS = [
    ("v", float, 1.0, "torus modulus (dimensionless, > 0)"),
    ("nx", int, 128, "grid samples per x-period"),
    ("ny", int, None, "grid samples per y-period (default: near-isotropic)"),
]

_command("green", "sample the torus Green function on the grid (CSV x,y,G)", [
    *_GRID_OPTS,
    ("px", float, 0.0, "source point x in [0,1)"),
    ("py", float, 0.0, "source point y in [0,v)"),
    ("tol", float, 1e-12, "series truncation tolerance"),
    ("out", str, "green.csv", "output CSV path"),
])

_command("robin", "tabulate the Green-expansion constant over a modulus range (CSV v,robin)", [
    ("vmin", float, 1.0, "smallest modulus"),
    ("vmax", float, 5.0, "largest modulus"),
    ("steps", int, 9, "number of samples (>= 2)"),
    ("tol", float, 1e-12, "series truncation tolerance"),
    ("out", str, "robin.csv", "output CSV path"),
])

_command("threshold", "locate the modulus where the Robin constant crosses the reference level (JSON)", [
    ("lo", float, 1.0, "bracket lower end"),
    ("hi", float, 10.0, "bracket upper end"),
    ("tol", float, 1e-10, "tolerance on the crossing value"),
    ("out", str, "threshold.json", "output JSON path"),
])

_command("energy", "evaluate the energy functional of a stored field (JSON breakdown)", [
    ("field", str, None, "CSV path of the field u (required)"),
    ("h", str, "const:1", "weight: h-spec string or CSV path"),
    ("eps", float, 0.0, "relaxation parameter (>= 0; 0 is the critical functional)"),
    ("out", str, "energy.json", "output JSON path"),
])

_command("solve", "minimise the relaxed functional (JSON result + field CSV)", [
    *_GRID_OPTS,
    ("h", str, "const:1", "weight: h-spec string or CSV path"),
    ("eps", float, 1.0, "relaxation parameter (>= 0)"),
    ("schedule", str, "", "comma-separated decreasing eps chain (overrides --eps)"),
    ("init", str, "zero", "start: zero | random"),
    ("seed", int, 0, "random-start seed"),
    ("amplitude", float, 0.1, "random-start amplitude"),
    ("grad-tol", float, 1e-8, "sup-norm residual tolerance"),
    ("max-iters", int, 5000, "iteration cap"),
    ("step-rule", str, "backtracking", "step rule: fixed | backtracking | bb"),
    ("out", str, "solve.json", "output JSON path"),
])

_command("blowup", "energies of the glued concentration profiles over an eps sweep (CSV)", [
    *_GRID_OPTS,
    ("h", str, "const:1", "weight: h-spec string or CSV path"),
    ("px", float, 0.0, "concentration point x"),
    ("py", float, 0.0, "concentration point y"),
    ("eps-min", float, 1e-10, "smallest concentration scale"),
    ("eps-max", float, 1e-4, "largest concentration scale"),
    ("points", int, 8, "number of log-spaced sweep points"),
    ("tol", float, 1e-12, "series truncation tolerance"),
    ("out", str, "blowup.csv", "output CSV path (eps,J,regressor)"),
])

_command("blowup-fit", "fit the sweep CSV to constant + slope * eps(-log eps) (JSON)", [
    ("infile", str, None, "input CSV from the blowup command (required)"),
    ("out", str, "blowup_fit.json", "output JSON path"),
])

_command("mt-check", "exponential-integral ratio along the truncated-bubble family (CSV delta,ratio)", [
    ("family", str, "bubble", "test family (only: bubble)"),
    ("coeff", str, "16pi", "exponent coefficient: 16pi, 17pi, or a number"),
    ("delta-min", float, 1e-4, "smallest concentration parameter"),
    ("delta-max", float, 1e-1, "largest concentration parameter"),
    ("points", int, 13, "number of log-spaced family points"),
    ("r0", float, 0.25, "truncation radius (geodesic)"),
    ("out", str, "mt.csv", "output CSV path"),
])

_command("condition", "existence-condition checkers (JSON holds/margin)", [
    *_GRID_OPTS,
    ("kind", str, "average", "which condition: average | peak"),
    ("h", str, "const:1", "weight: h-spec string or CSV path"),
    ("tol", float, 1e-12, "series truncation tolerance"),
    ("out", str, "condition.json", "output JSON path"),
])


def _read_config_file(path) -> dict:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{ln}: expected key = value")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def parse_config(argv) -> RunConfig:
    """Parse flags (and an optional key=value config file) into a RunConfig.

    Flags override config-file entries, which override built-in defaults.
    """
    top = argparse.ArgumentParser(
        prog="meanfield",
        description=("Numerical laboratory for the mean-field equation on "
                     "unit-area flat tori."),
    )
    sub = top.add_subparsers(dest="command", metavar="command")
    for name, info in _COMMANDS.items():
        p = sub.add_parser(name, help=info["help"], description=info["help"])
        p.add_argument("--config", type=str, default=None,
                       help="key = value config file; flags override it")
        for flag, typ, default, help_text in info["options"]:
            p.add_argument(f"--{flag}", type=typ, default=None,
                           help=f"{help_text} (default: {default})")
    try:
        ns = top.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed the message; signal validation failure
        if exc.code not in (0, None):
            raise CliError("invalid command line") from None
        raise
    if ns.command is None:
        raise CliError("missing command; see --help")
    file_vals = _read_config_file(ns.config) if ns.config else {}
    options = {}
    for flag, typ, default, _ in _COMMANDS[ns.command]["options"]:
        attr = flag.replace("-", "_")
        val = getattr(ns, attr)
        if val is None and flag in file_vals:
            try:
                val = typ(file_vals[flag])
            except ValueError:
                raise CliError(
                    f"config value for {flag!r} is not a valid {typ.__name__}: "
                    f"{file_vals[flag]!r}"
                ) from None
        if val is None:
            val = default
        options[attr] = val
    return RunConfig(ns.command, options)


# ----------------------------------------------------------------------
# command bodies
# ----------------------------------------------------------------------

def _resolve_grid(cfg) -> "FlatTorus":
    try:
        return make_torus(cfg.v, cfg.nx, cfg.ny)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _resolve_h(spec: str, torus):
    """An h argument is a mini-language string when it contains ':',
    otherwise a CSV path."""
    if ":" in spec:
        try:
            return h_spec_field(spec, torus)
        except HSpecError as exc:
            raise CliError(str(exc)) from None
    if not os.path.exists(spec):
        raise CliError(f"h file not found: {spec}")
    f = field_from_csv(spec)
    if f.torus != torus:
        raise CliError(
            f"h grid {f.torus} does not match the requested grid {torus}"
        )
    return f


def _parse_coeff(text: str) -> float:
    text = text.strip().lower()
    if text.endswith("pi"):
        try:
            return float(text[:-2]) * np.pi
        except ValueError:
            raise CliError(f"bad coefficient {text!r}") from None
    try:
        return float(text)
    except ValueError:
        raise CliError(f"bad coefficient {text!r}") from None


def _cmd_green(cfg):
    torus = _resolve_grid(cfg)
    f = gr.green_field(torus, (cfg.px, cfg.py), cfg.tol)
    X, Y = torus.mesh()
    _write_csv(cfg.out, "x,y,G",
               zip(X.ravel(), Y.ravel(), f.values.ravel()))
    return 0


def _cmd_robin(cfg):
    if cfg.steps < 2:
        raise CliError("steps must be >= 2")
    if not 0 < cfg.vmin < cfg.vmax:
        raise CliError("need 0 < vmin < vmax")
    vs = np.linspace(cfg.vmin, cfg.vmax, cfg.steps)
    _write_csv(cfg.out, "v,robin",
               ((v, gr.robin_constant(v, cfg.tol)) for v in vs))
    return 0


def _cmd_threshold(cfg):
    try:
        vstar, info = gr.find_threshold_modulus(
            (cfg.lo, cfg.hi), cfg.tol, full_output=True)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _write_json(cfg.out, {
        "threshold_modulus": vstar,
        "robin_value": info["a_value"],
        "reference_level": gr.robin_threshold(),
        "iterations": info["iterations"],
        "config": cfg.provenance(),
    })
    return 0


def _cmd_energy(cfg):
    if not cfg.field:
        raise CliError("--field is required")
    if not os.path.exists(cfg.field):
        raise CliError(f"field file not found: {cfg.field}")
    u = field_from_csv(cfg.field)
    h = _resolve_h(cfg.h, u.torus)
    if cfg.eps < 0:
        raise CliError("eps must be nonnegative")
    b = fn.eval_J(u, h, cfg.eps)
    _write_json(cfg.out, {
        "dirichlet_half": b.dirichlet_half, "linear": b.linear,
        "logterm": b.logterm, "total": b.total, "eps": b.eps,
        "config": cfg.provenance(),
    })
    return 0


def _solve_result_json(r, field_path):
    return {
        "converged": r.converged,
        "residual": r.residual,
        "iters": r.iters,
        "eps": r.eps,
        "energy": {
            "dirichlet_half": r.energy.dirichlet_half,
            "linear": r.energy.linear,
            "logterm": r.energy.logterm,
            "total": r.energy.total,
        },
        "peak_value": r.peak_value,
        "peak_point": list(r.peak_point),
        "peak_scale": r.peak_scale,
        "field_csv": field_path,
    }


def _cmd_solve(cfg):
    torus = _resolve_grid(cfg)
    h = _resolve_h(cfg.h, torus)
    if cfg.eps < 0:
        raise CliError("eps must be nonnegative")
    if cfg.init == "zero":
        init = "zero"
    elif cfg.init == "random":
        init = ("random", cfg.seed, cfg.amplitude)
    else:
        raise CliError(f"init must be zero or random, got {cfg.init!r}")
    base = sv.SolverConfig(eps=cfg.eps, max_iters=cfg.max_iters,
                           grad_tol=cfg.grad_tol, step_rule=cfg.step_rule,
                           init=init)
    field_path = os.path.splitext(cfg.out)[0] + ".field.csv"
    if cfg.schedule:
        try:
            schedule = [float(s) for s in cfg.schedule.split(",")]
        except ValueError:
            raise CliError(f"bad schedule {cfg.schedule!r}") from None
        try:
            results = sv.continuation(h, schedule, base)
        except ValueError as exc:
            raise CliError(str(exc)) from None
        final = results[-1]
        payload = {
            "chain": [_solve_result_json(r, None) for r in results],
            **_solve_result_json(final, field_path),
            "config": cfg.provenance(),
        }
    else:
        final = sv.minimize(h, base)
        payload = {**_solve_result_json(final, field_path),
                   "config": cfg.provenance()}
    field_to_csv(final.u, field_path)
    _write_json(cfg.out, payload)
    return 0 if final.converged else 3


def _cmd_blowup(cfg):
    torus = _resolve_grid(cfg)
    h = _resolve_h(cfg.h, torus)
    if not 0 < cfg.eps_min < cfg.eps_max < 1:
        raise CliError("need 0 < eps-min < eps-max < 1")
    if cfg.points < 1:
        raise CliError("points must be >= 1")
    eps_values = np.logspace(np.log10(cfg.eps_min), np.log10(cfg.eps_max),
                             cfg.points)
    samples = bl.energy_sweep(h, eps_values, (cfg.px, cfg.py), cfg.tol)
    _write_csv(cfg.out, "eps,J,regressor",
               ((e, J, e * -np.log(e)) for e, J in samples))
    return 0


def _cmd_blowup_fit(cfg):
    if not cfg.infile:
        raise CliError("--infile is required")
    if not os.path.exists(cfg.infile):
        raise CliError(f"input file not found: {cfg.infile}")
    data = np.loadtxt(cfg.infile, delimiter=",", skiprows=1)
    if data.ndim == 1:
        data = data[None, :]
    try:
        fit = bl.fit_asymptote([(row[0], row[1]) for row in data])
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _write_json(cfg.out, {
        "constant": fit.constant, "slope": fit.slope,
        "eps_min": fit.fit_window[0], "eps_max": fit.fit_window[1],
        "residual": fit.residual,
        "config": cfg.provenance(),
    })
    return 0


def _cmd_mt_check(cfg):
    if cfg.family != "bubble":
        raise CliError(f"unknown family {cfg.family!r} (only: bubble)")
    coeff = _parse_coeff(cfg.coeff)
    if not 0 < cfg.delta_min < cfg.delta_max:
        raise CliError("need 0 < delta-min < delta-max")
    deltas = np.logspace(np.log10(cfg.delta_min), np.log10(cfg.delta_max),
                         cfg.points)
    _write_csv(cfg.out, "delta,ratio",
               ((d, fn.bubble_family_ratio(d, coeff, cfg.r0)) for d in deltas))
    return 0


def _cmd_condition(cfg):
    torus = _resolve_grid(cfg)
    h = _resolve_h(cfg.h, torus)
    a_const = gr.robin_constant(torus.v, cfg.tol)
    if cfg.kind == "average":
        holds, margin = fn.check_average_condition(h, a_const)
    elif cfg.kind == "peak":
        p = gr.green_field(torus, (0.0, 0.0), cfg.tol)
        expansion = gr.extract_expansion(p, (0.0, 0.0))
        hd = fn.h_local_data(h, a_const)
        holds, margin = fn.check_peak_condition(hd, expansion, 0.0)
    else:
        raise CliError(f"kind must be average or peak, got {cfg.kind!r}")
    _write_json(cfg.out, {
        "holds": holds, "margin": margin,
        "config": cfg.provenance(),
    })
    return 0


_RUNNERS = {
    "green": _cmd_green,
    "robin": _cmd_robin,
    "threshold": _cmd_threshold,
    "energy": _cmd_energy,
    "solve": _cmd_solve,
    "blowup": _cmd_blowup,
    "blowup-fit": _cmd_blowup_fit,
    "mt-check": _cmd_mt_check,
    "condition": _cmd_condition,
}


def run(cfg: RunConfig) -> int:
    """Dispatch a parsed configuration; returns the process exit code."""
    try:
        return _RUNNERS[cfg.command](cfg)
    except CliError:
        raise
    except (HSpecError, ValueError) as exc:
        raise CliError(str(exc)) from None


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        code = run(cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    return code


if __name__ == "__main__":
    sys.exit(main())
