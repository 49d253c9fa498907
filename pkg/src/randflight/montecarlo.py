"""Monte Carlo random flights with survival weighting.

Every history starts at the origin and is followed through a fixed number
of flights; the n-th collision carries weight c^{n-1} and the flight leaving
it contributes c^n to the flux.  Histories are processed in fixed-size
blocks, each with its own spawned seed, so results do not depend on how
blocks are shared among worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import freepath as fp
from .errors import DomainError, StateError, UNAVAILABLE
from .transform import ball_volume

COLLISION = "collision"
FLUX = "flux"
MOMENT_ORDERS = (0, 2, 4, 6)
FORMAT_VERSION = 1
_MAGIC = "randflight-tallies"


@dataclass(frozen=True)
class McConfig:
    problem: fp.TransportProblem
    histories: int
    shell_edges: tuple = ()
    n_max: int = 5
    tail_epsilon: float = 1e-9
    master_seed: int = 12345
    workers: int = 1
    flux_shells: bool = False
    block_size: int = 1 << 15

    def __post_init__(self):
        if int(self.histories) != self.histories or self.histories < 1:
            raise DomainError("histories must be a positive integer")
        if not float(self.problem.d).is_integer():
            raise DomainError("Monte Carlo needs an integer dimension")
        edges = np.asarray(self.shell_edges, dtype=float)
        if edges.size:
            if edges.size < 2 or edges[0] != 0 or np.any(np.diff(edges) <= 0):
                raise DomainError("shell edges must start at 0 and increase strictly")
        if self.n_max < 1:
            raise DomainError("n_max must be at least 1")
        if not 0 < self.tail_epsilon < 1:
            raise DomainError("tail_epsilon must lie in (0, 1)")
        if self.workers < 1:
            raise DomainError("workers must be at least 1")
        if self.block_size < 1:
            raise DomainError("block_size must be positive")

    @property
    def max_order(self) -> int:
        """Number of collisions followed per history."""
        c = self.problem.c
        if c == 0:
            return 1
        return max(self.n_max, int(math.ceil(math.log(self.tail_epsilon) / math.log(c))))


@dataclass
class TallySet:
    """Accumulated sums; estimates divide by ``histories``.

    ``shell_*`` arrays have a leading axis over orders: collisions 1..n_max
    (or flux orders 0..n_max-1) followed by the all-order total.  Moment
    arrays have the same leading axis and a trailing axis over m = 0, 2, 4, 6.
    Second moments are per-history sums of squares, so totals carry the
    correlation between the orders of one history.
    """

    histories: int = 0
    n_max: int = 0
    max_order: int = 0
    shell_edges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shell_sum: dict = field(default_factory=dict)
    shell_sq: dict = field(default_factory=dict)
    overflow: dict = field(default_factory=dict)
    moment_sum: dict = field(default_factory=dict)
    moment_sq: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def merge(self, other: "TallySet") -> "TallySet":
        if self.histories == 0:
            return other
        for name in ("shell_sum", "shell_sq", "overflow", "moment_sum", "moment_sq"):
            mine, theirs = getattr(self, name), getattr(other, name)
            for k in mine:
                mine[k] = mine[k] + theirs[k]
        self.histories += other.histories
        return self


# ---------------------------------------------------------------------------
# sampling

def sample_direction(d: int, rng: np.random.Generator, size: int | None = None):
    """Isotropic unit vectors in integer dimension d (shape ``(size, d)``)."""
    if not float(d).is_integer() or d < 1:
        raise DomainError("isotropic directions are sampled in integer dimensions only")
    d = int(d)
    shape = (1 if size is None else size, d)
    if d == 1:
        out = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    else:
        out = rng.standard_normal(shape)
        out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out[0] if size is None else out


@njit(cache=True)
def _inside(a, b, s, radius):
    # length of p0 + t u, 0 <= t <= s, inside the ball of the given radius
    disc = b * b - (a - radius * radius)
    if disc <= 0.0:
        return 0.0
    root = math.sqrt(disc)
    lo = min(max(-b - root, 0.0), s)
    hi = min(max(-b + root, 0.0), s)
    return hi - lo


@njit(cache=True)
def _advance(pos, steps, variates, step0, c, n_max, edges, flux_shells, tallies, hist):
    """Follow every history of a block through ``steps.shape[0]`` flights.

    ``variates`` holds the direction draws: uniforms for d <= 3, standard
    normals otherwise.

    ``tallies`` holds per-order sums (collision then flux); ``hist`` holds
    the per-history all-order accumulators.
    """
    (c_shell, c_shell_sq, c_over, c_mom, c_mom_sq,
     f_shell, f_shell_sq, f_over, f_mom, f_mom_sq) = tallies
    hc_shell, hc_mom, hc_over, hf_shell, hf_mom, hf_over = hist
    nsteps, count = steps.shape
    d = pos.shape[1]
    nshell = edges.shape[0] - 1
    u = np.empty(d)
    jm = np.empty(4)
    for k in range(nsteps):
        step = step0 + k
        w = c ** step
        slot = step if step < n_max else -1
        for h in range(count):
            if d == 1:
                u[0] = 1.0 if variates[k, h, 0] < 0.5 else -1.0
            elif d == 2:
                phi = 2.0 * math.pi * variates[k, h, 0]
                u[0] = math.cos(phi)
                u[1] = math.sin(phi)
            elif d == 3:
                mu = 2.0 * variates[k, h, 0] - 1.0
                phi = 2.0 * math.pi * variates[k, h, 1]
                rho = math.sqrt(max(1.0 - mu * mu, 0.0))
                u[0] = rho * math.cos(phi)
                u[1] = rho * math.sin(phi)
                u[2] = mu
            else:
                nrm = 0.0
                for i in range(d):
                    nrm += variates[k, h, i] ** 2
                nrm = math.sqrt(nrm)
                for i in range(d):
                    u[i] = variates[k, h, i] / nrm
            a = 0.0
            b = 0.0
            for i in range(d):
                a += pos[h, i] * pos[h, i]
                b += pos[h, i] * u[i]
            sl = steps[k, h]
            # flight of flux order `step`: int_0^sl (a + 2 b t + t^2)^j dt
            a2 = a * a
            b2 = b * b
            jm[0] = sl
            jm[1] = sl * (a + sl * (b + sl / 3))
            jm[2] = sl * (a2 + sl * (2 * a * b + sl * ((4 * b2 + 2 * a) / 3 + sl * (b + sl / 5))))
            jm[3] = sl * (a2 * a + sl * (3 * a2 * b + sl * ((3 * a2 + 12 * a * b2) / 3 + sl * (
                (12 * a * b + 8 * b2 * b) / 4 + sl * ((3 * a + 12 * b2) / 5 + sl * (b + sl / 7))))))
            for m in range(4):
                v = w * jm[m]
                hf_mom[h, m] += v
                if slot >= 0:
                    f_mom[slot, m] += v
                    f_mom_sq[slot, m] += v * v
            if flux_shells and nshell > 0:
                tmin = min(max(-b, 0.0), sl)
                rmin = math.sqrt(max(a + 2 * b * tmin + tmin * tmin, 0.0))
                rmax = math.sqrt(max(a, a + 2 * b * sl + sl * sl))
                lo = max(np.searchsorted(edges, rmin, side="right") - 1, 0)
                hi = min(np.searchsorted(edges, rmax, side="left"), nshell)
                prev = _inside(a, b, sl, edges[lo]) if edges[lo] > 0.0 else 0.0
                for i in range(lo, hi):
                    cur = _inside(a, b, sl, edges[i + 1])
                    v = w * (cur - prev)
                    prev = cur
                    hf_shell[h, i] += v
                    if slot >= 0:
                        f_shell[slot, i] += v
                        f_shell_sq[slot, i] += v * v
                v = w * (sl - _inside(a, b, sl, edges[nshell]))
                hf_over[h] += v
                if slot >= 0:
                    f_over[slot] += v
            # collision of order step + 1 (weight c^step)
            r2 = 0.0
            for i in range(d):
                pos[h, i] += sl * u[i]
                r2 += pos[h, i] * pos[h, i]
            v = w
            for m in range(4):
                hc_mom[h, m] += v
                if slot >= 0:
                    c_mom[slot, m] += v
                    c_mom_sq[slot, m] += v * v
                v *= r2
            if nshell > 0:
                r = math.sqrt(r2)
                idx = np.searchsorted(edges, r, side="right") - 1
                if idx >= nshell:
                    hc_over[h] += w
                    if slot >= 0:
                        c_over[slot] += w
                elif idx >= 0:
                    hc_shell[h, idx] += w
                    if slot >= 0:
                        c_shell[slot, idx] += w
                        c_shell_sq[slot, idx] += w * w


_STEP_CHUNK = 32


def _run_block(problem, edges, n_max, max_order, flux_shells, seed_seq, count):
    rng = np.random.Generator(np.random.Philox(seed_seq))
    model, c, d = problem.model, problem.c, int(problem.d)
    nshell = max(len(edges) - 1, 0)
    edges_arr = np.asarray(edges, dtype=float) if nshell else np.zeros(1)
    nm = len(MOMENT_ORDERS)

    def per_order():
        return [np.zeros((n_max + 1, nshell)), np.zeros((n_max + 1, nshell)), np.zeros(n_max + 1),
                np.zeros((n_max + 1, nm)), np.zeros((n_max + 1, nm))]

    def per_history():
        return [np.zeros((count, nshell)), np.zeros((count, nm)), np.zeros(count)]

    coll, flux = per_order(), per_order()
    hc, hf = per_history(), per_history()
    pos = np.zeros((count, d))
    for step0 in range(0, max_order, _STEP_CHUNK):
        k = min(_STEP_CHUNK, max_order - step0)
        steps = np.asarray(model.sample(rng, (k, count)), dtype=float)
        # d <= 3 directions come from uniforms (sign, angle, or cosine and angle)
        if d <= 3:
            variates = rng.random((k, count, max(d - 1, 1)))
        else:
            variates = rng.standard_normal((k, count, d))
        _advance(pos, steps, variates, step0, float(c), n_max, edges_arr, bool(flux_shells and nshell),
                 tuple(coll + flux), tuple(hc + hf))

    out = {}
    for kind, t, hh in ((COLLISION, coll, hc), (FLUX, flux, hf)):
        shell, shell_sq, over, mom, mom_sq = t
        h_shell, h_mom, h_over = hh
        shell[n_max], shell_sq[n_max] = h_shell.sum(axis=0), np.square(h_shell).sum(axis=0)
        over[n_max] = h_over.sum()
        mom[n_max], mom_sq[n_max] = h_mom.sum(axis=0), np.square(h_mom).sum(axis=0)
        out[kind] = dict(shell_sum=shell, shell_sq=shell_sq, overflow=over,
                         moment_sum=mom, moment_sq=mom_sq)
    return out, None


def _block_task(args):
    return _run_block(*args)


def run(config: McConfig) -> TallySet:
    """Simulate ``config.histories`` histories and return the accumulated tallies."""
    problem = config.problem
    edges = np.asarray(config.shell_edges, dtype=float)
    nblocks = -(-config.histories // config.block_size)
    seeds = np.random.SeedSequence(config.master_seed).spawn(nblocks)
    sizes = [config.block_size] * (nblocks - 1) + [config.histories - config.block_size * (nblocks - 1)]
    tasks = [(problem, edges, config.n_max, config.max_order, config.flux_shells, seeds[i], sizes[i])
             for i in range(nblocks)]
    if config.workers > 1 and nblocks > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_block_task, tasks))
    else:
        results = [_block_task(t) for t in tasks]

    tally = TallySet(
        histories=config.histories, n_max=config.n_max, max_order=config.max_order,
        shell_edges=edges,
        meta={"model": problem.model.spec_string(), "d": problem.d, "c": problem.c,
              "master_seed": config.master_seed, "tail_epsilon": config.tail_epsilon,
              "flux_shells": config.flux_shells},
    )
    for name in ("shell_sum", "shell_sq", "overflow", "moment_sum", "moment_sq"):
        for kind in (COLLISION, FLUX):
            # fixed block order keeps the floating-point sums reproducible
            getattr(tally, name)[kind] = sum(res[kind][name] for res, _ in results)
    return tally


# ---------------------------------------------------------------------------
# estimates

def _slot(tallies, quantity, n):
    if quantity not in (COLLISION, FLUX):
        raise DomainError(f"quantity must be {COLLISION!r} or {FLUX!r}")
    if n is None or n == "total":
        return tallies.n_max
    lowest = 1 if quantity == COLLISION else 0
    slot = n - lowest
    if not 0 <= slot < tallies.n_max:
        raise DomainError(f"order {n} was not tallied separately (n_max = {tallies.n_max})")
    return slot


def _mean_se(total, sq, histories):
    mean = total / histories
    var = np.maximum(sq / histories - mean * mean, 0.0)
    return mean, np.sqrt(var / max(histories - 1, 1))


def _require(tallies):
    if tallies is None or tallies.histories == 0:
        raise StateError("tallies are empty")


def shell_estimates(tallies: TallySet, quantity: str, n=None):
    """Shell-averaged densities and standard errors for every shell."""
    _require(tallies)
    edges = tallies.shell_edges
    if edges.size < 2:
        raise StateError("no shells were tallied")
    if quantity == FLUX and not tallies.meta.get("flux_shells", False):
        raise StateError("flux shells were not tallied")
    slot = _slot(tallies, quantity, n)
    vol = np.diff(ball_volume(int(tallies.meta["d"]), edges))
    mean, se = _mean_se(tallies.shell_sum[quantity][slot], tallies.shell_sq[quantity][slot],
                        tallies.histories)
    return mean / vol, se / vol


def density_estimate(tallies: TallySet, quantity: str, n, r: float):
    """Shell-averaged density at r with its standard error, or ``UNAVAILABLE`` past the last shell."""
    _require(tallies)
    edges = tallies.shell_edges
    if edges.size < 2:
        raise StateError("no shells were tallied")
    if r < edges[0]:
        raise DomainError("r lies below the first shell edge")
    if r >= edges[-1]:
        return UNAVAILABLE
    mean, se = shell_estimates(tallies, quantity, n)
    i = int(np.searchsorted(edges, r, side="right") - 1)
    return float(mean[i]), float(se[i])


def moment_estimate(tallies: TallySet, quantity: str, m: int, n=None):
    """Estimate of int r^m Omega_d f dr and its standard error, m in {0, 2, 4, 6}."""
    _require(tallies)
    if m not in MOMENT_ORDERS:
        raise DomainError(f"moment order must be one of {MOMENT_ORDERS}")
    slot = _slot(tallies, quantity, n)
    j = MOMENT_ORDERS.index(m)
    mean, se = _mean_se(tallies.moment_sum[quantity][slot, j], tallies.moment_sq[quantity][slot, j],
                        tallies.histories)
    return float(mean), float(se)


# ---------------------------------------------------------------------------
# serialization

_COLUMNS = ("record", "quantity", "order", "lo", "hi", "value", "std_error", "sum", "sum_sq")


def _order_label(kind, slot, n_max):
    if slot == n_max:
        return "total"
    return str(slot + (1 if kind == COLLISION else 0))


def _row(record, kind, label, *values):
    cells = ["NA" if v is None else repr(float(v)) for v in values]
    return " ".join([record, kind, label] + cells)


def save_tallies(tallies: TallySet, path) -> None:
    """Write tallies as a versioned flat file with one row per (record, quantity, order, bin).

    Rows carry the estimate and its standard error together with the raw
    sums, so reading the file back reproduces the tallies exactly.
    """
    _require(tallies)
    lines = [f"# {_MAGIC} v{FORMAT_VERSION}",
             f"# histories = {tallies.histories}",
             f"# n_max = {tallies.n_max}",
             f"# max_order = {tallies.max_order}"]
    for k, v in sorted(tallies.meta.items()):
        lines.append(f"# meta.{k} = {v!r}")
    lines.append(" ".join(_COLUMNS))
    h = tallies.histories
    edges = tallies.shell_edges
    vol = np.diff(ball_volume(int(tallies.meta["d"]), edges)) if edges.size > 1 else np.zeros(0)
    for kind in (COLLISION, FLUX):
        for slot in range(tallies.n_max + 1):
            label = _order_label(kind, slot, tallies.n_max)
            ssum, ssq = tallies.shell_sum[kind][slot], tallies.shell_sq[kind][slot]
            mean, se = _mean_se(ssum, ssq, h)
            for i in range(len(vol)):
                lines.append(_row("shell", kind, label, edges[i], edges[i + 1], mean[i] / vol[i],
                                  se[i] / vol[i], ssum[i], ssq[i]))
            over = float(tallies.overflow[kind][slot])
            lines.append(_row("overflow", kind, label, edges[-1] if edges.size else 0.0, math.inf,
                              over / h, None, over, None))
            msum, msq = tallies.moment_sum[kind][slot], tallies.moment_sq[kind][slot]
            mean, se = _mean_se(msum, msq, h)
            for j, m in enumerate(MOMENT_ORDERS):
                lines.append(_row("moment", kind, label, m, m, mean[j], se[j], msum[j], msq[j]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tallies(path) -> TallySet:
    """Read tallies written by :func:`save_tallies`; other format versions are rejected."""
    import ast

    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(f"# {_MAGIC} v"):
        raise StateError("not a tally file")
    version = lines[0].rsplit("v", 1)[1]
    if version != str(FORMAT_VERSION):
        raise StateError(f"unsupported tally format version {version}")
    t = TallySet()
    rows = []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            key, val = key.strip(), val.strip()
            if key.startswith("meta."):
                t.meta[key[5:]] = ast.literal_eval(val)
            elif key in ("histories", "n_max", "max_order"):
                setattr(t, key, int(val))
        elif line.split() == list(_COLUMNS):
            continue
        elif line.strip():
            rows.append(line.split())
    n_max = t.n_max
    shell_rows = [r for r in rows if r[0] == "shell"]
    edges = sorted({float(r[3]) for r in shell_rows} | {float(r[4]) for r in shell_rows})
    t.shell_edges = np.array(edges)
    nshell = max(len(edges) - 1, 0)
    nm = len(MOMENT_ORDERS)
    for kind in (COLLISION, FLUX):
        t.shell_sum[kind] = np.zeros((n_max + 1, nshell))
        t.shell_sq[kind] = np.zeros((n_max + 1, nshell))
        t.overflow[kind] = np.zeros(n_max + 1)
        t.moment_sum[kind] = np.zeros((n_max + 1, nm))
        t.moment_sq[kind] = np.zeros((n_max + 1, nm))
    lowest = {COLLISION: 1, FLUX: 0}
    for rec, kind, label, lo, hi, _val, _se, ssum, ssq in rows:
        if kind not in lowest:
            raise StateError(f"unknown quantity {kind!r} in tally file")
        slot = n_max if label == "total" else int(label) - lowest[kind]
        if rec == "shell":
            i = edges.index(float(lo))
            t.shell_sum[kind][slot, i] = float(ssum)
            t.shell_sq[kind][slot, i] = float(ssq)
        elif rec == "overflow":
            t.overflow[kind][slot] = float(ssum)
        elif rec == "moment":
            j = MOMENT_ORDERS.index(int(float(lo)))
            t.moment_sum[kind][slot, j] = float(ssum)
            t.moment_sq[kind][slot, j] = float(ssq)
        else:
            raise StateError(f"unknown record {rec!r} in tally file")
    return t
