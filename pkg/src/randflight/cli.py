"""Command-line interface.

Subcommands write comment-prefixed, comma-delimited tables::

    randflight profile  --model exp --d 3 --c 0.9 --r 0.5:5:10
    randflight spectrum --model exp --d 4 --c 0.5
    randflight audit    --model pearson --d 3 --c 0.5 --m 2 --quantity flux
    randflight moments  --model gamma:k=2 --d 2 --c 0.5
    randflight invert   --model exp --d 4 --c 0.5 --quantity flux --r 0.5,1,2
    randflight mc       --model chi:k=2 --d 2 --c 0.5 --histories 100000 --output tallies.txt

Exit codes: 0 success, 2 bad arguments, 3 exact form unavailable with
``--exact-only``, 4 numeric failure, 5 diffusion breakdown with
``--require-rigorous``.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from . import __version__
from . import analytic as an
from . import diffusion as df
from . import freepath as fp
from . import montecarlo as mc
from . import transform as tr
from .errors import (UNAVAILABLE, BoundaryValueError, ConvergenceError, DivergenceError,
                     DomainError, NumericError, UnsupportedQueryError)

EXIT_OK, EXIT_ARGS, EXIT_UNAVAILABLE, EXIT_NUMERIC, EXIT_BREAKDOWN = 0, 2, 3, 4, 5
COMMANDS = ("profile", "moments", "spectrum", "mc", "invert", "audit")
FLAVORS = (df.P1, df.GROSJEAN, df.RIGOROUS)
WORKERS_ENV = "RANDFLIGHT_WORKERS"
NA = "NA"

_DEFAULTS = dict(
    model="exp", d=3.0, c=0.5, r="0.5:5:10", quantity="collision", n=None,
    flavors="p1,grosjean,rigorous", m="0,2,4,6", histories=0, shells=40,
    seed=12345, workers=None, output="-", exact_only=False, require_rigorous=False,
    plot=False, tail_epsilon=1e-9,
)
_BOOL_KEYS = {"exact_only", "require_rigorous", "plot"}


class UsageError(Exception):
    """Bad arguments or configuration (exit status 2)."""


class ExitWith(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunSpec:
    command: str
    problem: fp.TransportProblem
    r_grid: tuple
    quantity: str
    n: int | None
    flavors: tuple
    m_orders: tuple
    histories: int
    shells: int
    seed: int
    workers: int
    output: str
    exact_only: bool = False
    require_rigorous: bool = False
    plot: bool = False
    tail_epsilon: float = 1e-9
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# parsing

def _parse_grid(text: str) -> tuple:
    text = str(text).strip()
    try:
        if ":" in text:
            lo, hi, num = text.split(":")
            grid = np.linspace(float(lo), float(hi), int(num))
        else:
            grid = np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError as exc:
        raise UsageError(f"cannot parse radius grid {text!r}") from exc
    if grid.size == 0 or np.any(~(grid > 0)):
        raise UsageError("radii must be positive")
    return tuple(float(x) for x in grid)


def _parse_ints(text: str, what: str) -> tuple:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(f"cannot parse {what} list {text!r}") from exc


def _truthy(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key not in _DEFAULTS and key != "command":
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = val.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="randflight",
                                description="Random flights with general free-path laws.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--model", help="exp | gamma:k=<v> | chi:k=<v> | betaprime:k=<v> | pearson | besselk:m=<v>")
    p.add_argument("--d", type=float, help="spatial dimension")
    p.add_argument("--c", type=float, help="single-scattering albedo, 0 < c < 1")
    p.add_argument("--r", help="radii: comma list or start:stop:count")
    p.add_argument("--quantity", choices=("collision", "flux"))
    p.add_argument("--n", type=int, help="collision/flux order (default: total)")
    p.add_argument("--flavors", help="comma list from p1, grosjean, rigorous")
    p.add_argument("--m", help="comma list of even moment orders")
    p.add_argument("--histories", type=int, help="Monte Carlo histories (0 disables)")
    p.add_argument("--shells", type=int, help="Monte Carlo shell count")
    p.add_argument("--tail-epsilon", dest="tail_epsilon", type=float, help="weight truncation")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--output", help="output path, '-' for stdout")
    p.add_argument("--exact-only", dest="exact_only", action="store_const", const=True)
    p.add_argument("--require-rigorous", dest="require_rigorous", action="store_const", const=True)
    p.add_argument("--plot", action="store_const", const=True,
                   help="also write a PNG figure next to the output file")
    return p


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse(argv, config_path: str | None = None) -> RunSpec:
    """Merge defaults, an optional config file and flags (in that precedence order)."""
    parser = build_parser()
    parser.__class__ = _Parser
    ns = parser.parse_args(argv)
    merged = dict(_DEFAULTS)
    cfg_path = ns.config or config_path
    if cfg_path:
        cfg = read_config(cfg_path)
        if "command" in cfg and cfg["command"] != ns.command:
            raise UsageError("config command does not match the subcommand")
        cfg.pop("command", None)
        merged.update(cfg)
    for key in _DEFAULTS:
        val = getattr(ns, key, None)
        if val is not None:
            merged[key] = val

    try:
        model = fp.parse_model(str(merged["model"]))
        problem = fp.TransportProblem(model, float(merged["d"]), float(merged["c"]))
    except (DomainError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    flavors = tuple(f.strip().lower() for f in str(merged["flavors"]).split(",") if f.strip())
    bad = [f for f in flavors if f not in FLAVORS]
    if bad:
        raise UsageError(f"unknown flavor(s): {', '.join(bad)}")
    m_orders = _parse_ints(merged["m"], "moment")
    if any(m < 0 or m % 2 for m in m_orders):
        raise UsageError("moment orders must be non-negative even integers")
    n = merged["n"]
    n = None if n in (None, "", "total") else int(n)
    quantity = str(merged["quantity"])
    if quantity not in ("collision", "flux"):
        raise UsageError("quantity must be collision or flux")
    if n is not None and n < (1 if quantity == "collision" else 0):
        raise UsageError("order n is too small for this quantity")
    workers = merged["workers"]
    if workers in (None, ""):
        workers = os.environ.get(WORKERS_ENV, "1")
    try:
        workers, histories, shells, seed = int(workers), int(merged["histories"]), int(merged["shells"]), int(merged["seed"])
        tail = float(merged["tail_epsilon"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if workers < 1 or histories < 0 or shells < 1:
        raise UsageError("workers and shells must be positive, histories non-negative")
    return RunSpec(
        command=ns.command, problem=problem, r_grid=_parse_grid(merged["r"]), quantity=quantity,
        n=n, flavors=flavors, m_orders=m_orders, histories=histories, shells=shells, seed=seed,
        workers=workers, output=str(merged["output"]),
        exact_only=_truthy(merged["exact_only"]) if not isinstance(merged["exact_only"], bool) else merged["exact_only"],
        require_rigorous=_truthy(merged["require_rigorous"]) if not isinstance(merged["require_rigorous"], bool) else merged["require_rigorous"],
        plot=_truthy(merged["plot"]) if not isinstance(merged["plot"], bool) else merged["plot"],
        tail_epsilon=tail,
    )


# ---------------------------------------------------------------------------
# formatting

def fmt(x) -> str:
    if x is None or x is UNAVAILABLE:
        return NA
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return NA
    return f"{x:.12g}"


def _preamble(spec: RunSpec) -> list:
    p = spec.problem
    return [
        f"# randflight {__version__} (numpy {np.__version__}, scipy {scipy.__version__})",
        f"# command = {spec.command}",
        f"# model = {p.model.spec_string()}",
        f"# d = {p.d:g}",
        f"# c = {p.c:g}",
        f"# quantity = {spec.quantity}",
        f"# order = {'total' if spec.n is None else spec.n}",
        f"# seed = {spec.seed}",
        f"# histories = {spec.histories}",
    ]


def _table(header, rows) -> list:
    return [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]


def _safe(fn, *args):
    """Evaluate, mapping pointwise failures to the NA sentinel."""
    try:
        val = fn(*args)
    except (BoundaryValueError, DivergenceError, UnsupportedQueryError):
        return None
    return None if val is UNAVAILABLE else val


# ---------------------------------------------------------------------------
# commands

def _exact_density(spec, r):
    p, q, n = spec.problem, spec.quantity, spec.n
    if q == "collision":
        fn = an.total_collision_density if n is None else (lambda pr, rr: an.nth_collision_density(pr, n, rr))
    else:
        fn = an.total_scalar_flux if n is None else (lambda pr, rr: an.nth_scalar_flux(pr, n, rr))
    return _safe(fn, p, r)


def _approximations(spec):
    out = {}
    if spec.n is not None:
        return out
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", df.TabulatedFormulaMismatch)
        for flavor in spec.flavors:
            try:
                if flavor == df.P1:
                    out[flavor] = df.p1_approximation(spec.problem, spec.quantity)
                elif flavor == df.GROSJEAN:
                    out[flavor] = df.grosjean_approximation(spec.problem, spec.quantity)
                else:
                    out[flavor] = df.rigorous_approximation(spec.problem, spec.quantity)
            except DomainError:
                out[flavor] = None
    rig = out.get(df.RIGOROUS)
    if spec.require_rigorous and (rig is None or rig.breakdown):
        raise ExitWith(EXIT_BREAKDOWN, "rigorous diffusion breaks down: no discrete eigenvalue")
    return out


def centred_edges(r_grid, rel_width=0.04):
    """Shell edges with a thin shell centred on every requested radius."""
    r = np.unique(np.asarray(r_grid, dtype=float))
    gaps = np.diff(np.concatenate([[0.0], r]))
    half = np.minimum(rel_width * r, 0.45 * gaps)
    if r.size > 1:
        half[:-1] = np.minimum(half[:-1], 0.45 * np.diff(r))
    edges = np.ravel(np.column_stack([r - half, r + half]))
    return tuple(float(e) for e in np.concatenate([[0.0], edges]))


def _mc_tallies(spec, edges=()):
    if spec.histories <= 0:
        return None
    n_max = max(5, spec.n or 0)
    cfg = mc.McConfig(spec.problem, spec.histories, shell_edges=tuple(edges), n_max=n_max,
                      tail_epsilon=spec.tail_epsilon, master_seed=spec.seed, workers=spec.workers,
                      flux_shells=spec.quantity == "flux" and len(edges) > 0)
    return mc.run(cfg)


def cmd_profile(spec):
    r_grid = spec.r_grid
    exact = [_exact_density(spec, r) for r in r_grid]
    if spec.exact_only and any(v is None for v in exact):
        raise ExitWith(EXIT_UNAVAILABLE, "no exact form for this problem and quantity")
    approx = _approximations(spec)
    tallies = _mc_tallies(spec, centred_edges(r_grid))
    header = ["r", "exact", "p1", "grosjean", "rigorous", "mc", "mc_err",
              "rel_err_p1", "rel_err_grosjean", "rel_err_rigorous", "rel_err_mc"]
    rows = []
    for r, ex in zip(r_grid, exact):
        vals = {}
        for flavor in FLAVORS:
            a = approx.get(flavor)
            vals[flavor] = None if a is None or (flavor == df.RIGOROUS and a.breakdown) else _safe(a, r)
        mval = merr = None
        if tallies is not None:
            est = mc.density_estimate(tallies, spec.quantity, spec.n, r)
            if est is not UNAVAILABLE:
                mval, merr = est
        rel = [None if (v is None or ex is None or ex == 0) else (v - ex) / ex
               for v in (vals[df.P1], vals[df.GROSJEAN], vals[df.RIGOROUS], mval)]
        rows.append([r, ex, vals[df.P1], vals[df.GROSJEAN], vals[df.RIGOROUS], mval, merr] + rel)
    return header, rows


def cmd_spectrum(spec):
    p = spec.problem
    s = df.discrete_spectrum(p)
    header = ["index", "nu0", "chi", "residual", "weight_collision", "weight_flux", "breakdown"]
    rows, weights = [], []
    for i, chi in enumerate(s.chis):
        wc = df.residue_weight(p, chi, df.COLLISION)
        try:
            wf = df.residue_weight(p, chi, df.FLUX)
        except DomainError:
            wf = None
        weights.append(wc)
        rows.append([i, 1 / chi, chi, s.residuals[i], wc, wf])
    breakdown = s.breakdown or all(abs(w) < 1e-12 for w in weights)
    if not rows:
        rows.append([0, None, None, None, None, None])
    for row in rows:
        row.append(breakdown)
    if spec.require_rigorous and breakdown:
        raise ExitWith(EXIT_BREAKDOWN, "rigorous diffusion breaks down")
    return header, rows


def _exact_moment(spec, m):
    q = an.Quantity(spec.quantity, spec.n, m)
    try:
        v = an.exact_moment(an.SolutionKey(spec.problem, q))
    except DomainError:
        return None
    return None if v is UNAVAILABLE else v


def cmd_audit(spec):
    exact = [_exact_moment(spec, m) for m in spec.m_orders]
    if spec.exact_only and any(v is None for v in exact):
        raise ExitWith(EXIT_UNAVAILABLE, "no tabulated moment for some requested orders")
    approx = {} if spec.n is not None else _approximations(
        replace(spec, flavors=(df.P1, df.GROSJEAN), require_rigorous=False))
    tallies = _mc_tallies(spec)
    header = ["m", "exact", "approx_p1", "approx_grosjean", "mc", "mc_err"]
    rows = []
    for m, ex in zip(spec.m_orders, exact):
        row = [m, ex]
        for flavor in (df.P1, df.GROSJEAN):
            a = approx.get(flavor)
            row.append(None if a is None else a.moment(m))
        if tallies is not None and m in mc.MOMENT_ORDERS:
            row.extend(mc.moment_estimate(tallies, spec.quantity, m, spec.n))
        else:
            row.extend([None, None])
        rows.append(row)
    return header, rows


def _assembled_transform(spec):
    p, c = spec.problem, spec.problem.c
    zeta = lambda z: fp.propagator(p, z)
    lead = (lambda z: fp.stretched_propagator(p, z)) if spec.quantity == "flux" else zeta
    if spec.n is None:
        return lambda z: lead(z) / (1 - c * zeta(z))
    n = spec.n
    if spec.quantity == "flux":
        return lambda z: c ** n * lead(z) * zeta(z) ** n
    return lambda z: c ** (n - 1) * zeta(z) ** n


def cmd_moments(spec):
    fbar = _assembled_transform(spec)
    approx = {} if spec.n is not None else _approximations(
        replace(spec, flavors=(df.P1, df.GROSJEAN), require_rigorous=False))
    header = ["m", "exact", "series", "numeric", "approx_p1", "approx_grosjean"]
    rows = []
    for m in spec.m_orders:
        q = an.Quantity(spec.quantity, spec.n, m)
        try:
            series = an.series_moment(spec.problem, q)
        except DomainError:
            series = None
        numeric = None
        if spec.problem.model.abscissa() > 0:
            try:
                numeric = tr.even_moment(fbar, spec.problem.d, m)
            except NumericError as exc:
                print(f"randflight: numeric moment m={m} unavailable: {exc} {exc.diagnostics}",
                      file=sys.stderr)
        row = [m, _exact_moment(spec, m), series, numeric]
        for flavor in (df.P1, df.GROSJEAN):
            a = approx.get(flavor)
            row.append(None if a is None else a.moment(m))
        rows.append(row)
    return header, rows


def cmd_invert(spec):
    p, c = spec.problem, spec.problem.c
    zeta = lambda z: fp.propagator(p, z)
    n = spec.n
    if spec.quantity == "collision":
        if n == 1:
            raise UsageError("the first collision density is purely uncollided; nothing to invert")
        scattered = (lambda z: c * zeta(z) ** 2 / (1 - c * zeta(z))) if n is None else (
            lambda z: c ** (n - 1) * zeta(z) ** n)
        unc = (lambda r: df.uncollided(p, "collision", r)) if n is None else (lambda r: 0.0)
    else:
        if n == 0:
            raise UsageError("the uncollided flux needs no inversion")
        xbar = lambda z: fp.stretched_propagator(p, z)
        scattered = (lambda z: c * xbar(z) * zeta(z) / (1 - c * zeta(z))) if n is None else (
            lambda z: c ** n * xbar(z) * zeta(z) ** n)
        unc = (lambda r: df.uncollided(p, "flux", r)) if n is None else (lambda r: 0.0)
    header = ["r", "inverted", "est_error", "exact", "rel_err"]
    rows = []
    for r in spec.r_grid:
        rep = tr.inverse_ft(scattered, p.d, r)
        u = _safe(unc, r)
        val = None if u is None else rep.value + u
        ex = _exact_density(spec, r)
        rel = None if (val is None or ex is None or ex == 0) else (val - ex) / ex
        rows.append([r, val, rep.est_error, ex, rel])
    if spec.exact_only and any(row[3] is None for row in rows):
        raise ExitWith(EXIT_UNAVAILABLE, "no exact form for this problem and quantity")
    return header, rows


def cmd_mc(spec):
    edges = np.linspace(0.0, max(spec.r_grid) * 1.25, spec.shells + 1)
    histories = spec.histories or 100_000
    cfg = mc.McConfig(spec.problem, histories, shell_edges=tuple(edges), n_max=max(5, spec.n or 0),
                      tail_epsilon=spec.tail_epsilon, master_seed=spec.seed, workers=spec.workers,
                      flux_shells=True)
    return mc.run(cfg)


_HANDLERS = dict(profile=cmd_profile, spectrum=cmd_spectrum, audit=cmd_audit,
                 moments=cmd_moments, invert=cmd_invert)


def execute(spec: RunSpec, stdout=None, stderr=None) -> int:
    """Run one command; returns the process exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        if spec.command == "mc":
            tallies = cmd_mc(spec)
            if spec.output == "-":
                import tempfile

                with tempfile.TemporaryDirectory() as tmp:
                    path = os.path.join(tmp, "tallies.txt")
                    mc.save_tallies(tallies, path)
                    with open(path, encoding="utf-8") as fh:
                        stdout.write(fh.read())
            else:
                mc.save_tallies(tallies, spec.output)
            return EXIT_OK
        header, rows = _HANDLERS[spec.command](spec)
    except ExitWith as exc:
        print(f"randflight: {exc}", file=stderr)
        return exc.code
    except UsageError as exc:
        print(f"randflight: {exc}", file=stderr)
        return EXIT_ARGS
    except DomainError as exc:
        print(f"randflight: {exc}", file=stderr)
        return EXIT_ARGS
    except (NumericError, ConvergenceError, DivergenceError) as exc:
        diag = getattr(exc, "diagnostics", None)
        print(f"randflight: numeric failure: {exc}" + (f" {diag}" if diag else ""), file=stderr)
        return EXIT_NUMERIC
    text = "\n".join(_preamble(spec) + _table(header, rows)) + "\n"
    if spec.output == "-":
        stdout.write(text)
    else:
        with open(spec.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    if spec.plot:
        from .plotting import figure_path, render

        target = figure_path(spec.output)
        if render(spec.command, header, rows, target, title=_preamble(spec)[2][2:]):
            print(f"randflight: figure written to {target}", file=stderr)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        spec = parse(argv)
    except UsageError as exc:
        buf = io.StringIO()
        build_parser().print_usage(buf)
        sys.stderr.write(buf.getvalue())
        print(f"randflight: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    return execute(spec)


if __name__ == "__main__":
    sys.exit(main())
