"""Limit theorems and inequalities as executable sweeps.

Every sweep returns a :class:`SweepTable` whose CSV rendering is a pure
function of its inputs. Extra per-row quantities that do not fit the fixed CSV
columns are kept in ``SweepTable.extra`` and go to the JSON sidecar.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import AnisoParams, GridFunction, GridSpec, ParameterError, lp_norm
from .energy import (
    DEFAULT_QUAD,
    QuadratureSpec,
    directional_energy,
    directional_energy_sweep,
    directional_parts,
    mollify,
    slope_norm,
    total_energy,
    truncate,
)
from .operator import Nonlinearity
from .solver import SolveOptions, SolverFailure, ground_state, solve_dirichlet

COLUMNS = ("param", "value", "reference", "abs_err", "rel_err", "near", "mid", "tail", "flags")
MS_NOTE = (
    "small-s reference is (4/p)||u||_p^p; the constant 2/p that is sometimes quoted for "
    "this one-dimensional limit is off by a factor of two"
)


def line_grid(intervals: int = 1024, lo: float = -4.0, hi: float = 4.0) -> GridSpec:
    """Default 1-D grid: nodes at ``lo + k (hi - lo)/intervals`` so tents are exact."""
    return GridSpec.from_domain([(lo, hi)], intervals)


@dataclass
class SweepTable:
    """Rows keyed by the sweep parameter, plus provenance and sidecar extras."""

    rows: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    extra: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, param, value, reference, near=0.0, mid=0.0, tail=0.0, flags=(), **extra):
        abs_err = abs(value - reference)
        rel_err = abs_err / abs(reference) if reference != 0.0 else abs_err
        self.rows.append(
            {
                "param": float(param),
                "value": float(value),
                "reference": float(reference),
                "abs_err": float(abs_err),
                "rel_err": float(rel_err),
                "near": float(near),
                "mid": float(mid),
                "tail": float(tail),
                "flags": ";".join(flags),
            }
        )
        self.extra.append({"param": float(param), **extra})

    def sorted(self) -> "SweepTable":
        order = sorted(range(len(self.rows)), key=lambda k: (self.rows[k]["param"], k))
        return SweepTable(
            [self.rows[k] for k in order], dict(self.provenance), [self.extra[k] for k in order], list(self.notes)
        )

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self, precision: int = 12) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.provenance, sort_keys=True) + "\n")
        buf.write(",".join(COLUMNS) + "\n")
        for r in self.rows:
            nums = [f"{r[c]:.{precision}e}" for c in COLUMNS[:-1]]
            buf.write(",".join(nums + [r["flags"]]) + "\n")
        return buf.getvalue()


def _map(fn, items, threads: int | None):
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# s -> 1 and s -> 0
# ---------------------------------------------------------------------------

def bbm_sweep(
    u: GridFunction,
    axis: int,
    p: float,
    s_list: Sequence[float],
    quad: QuadratureSpec | None = None,
    reference: float | None = None,
    threads: int | None = None,
) -> SweepTable:
    """Compare ``J^i_s(u)`` with the local value ``J^i_1(u) = (2/p) ||d_i u||_p^p``.

    The reference defaults to the discrete ``s = 1`` branch on the same grid.
    Rows are ordered by ``s``.
    """
    quad = quad or DEFAULT_QUAD
    ref = directional_energy(u, axis, 1.0, p, quad) if reference is None else float(reference)
    parts = _map(lambda s: directional_parts(u, axis, float(s), p, quad), s_list, threads)
    table = SweepTable(provenance={"sweep": "bbm", "axis": axis, "p": p})
    for s, (near, mid, tail) in zip(s_list, parts):
        flags = ["near_dominant"] if near > mid + tail else []
        table.add(s, near + mid + tail, ref, near, mid, tail, flags)
    return table.sorted()


def ms_sweep(
    u: GridFunction,
    axis: int,
    p: float,
    s_list: Sequence[float],
    quad: QuadratureSpec | None = None,
    threads: int | None = None,
) -> SweepTable:
    """Compare ``J^i_s(u)`` with the small-``s`` limit ``(4/p) ||u||_p^p``."""
    quad = quad or DEFAULT_QUAD
    ref = 4.0 / p * lp_norm(u, p) ** p if u.max_abs() > 0.0 else 0.0
    parts = _map(lambda s: directional_parts(u, axis, float(s), p, quad), s_list, threads)
    table = SweepTable(provenance={"sweep": "ms", "axis": axis, "p": p, "note": MS_NOTE}, notes=[MS_NOTE])
    for s, (near, mid, tail) in zip(s_list, parts):
        flags = ["tail_active"] if tail > near + mid else []
        table.add(s, near + mid + tail, ref, near, mid, tail, flags)
    return table.sorted()


def indicator_energy(s: float) -> float:
    """``J_{s,2}`` of the unit-interval indicator: ``4s(1-s)/(1-2s) + 2(1-s)`` for ``s != 1/2``."""
    return 4.0 * s * (1.0 - s) / (1.0 - 2.0 * s) + 2.0 * (1.0 - s)


def monotone_tail(values: Sequence[float], count: int = 3) -> bool:
    tail = list(values)[-count:]
    return all(b <= a for a, b in zip(tail, tail[1:]))


# ---------------------------------------------------------------------------
# Dirichlet stability and ground states
# ---------------------------------------------------------------------------

def schedule(s0: Sequence[float], p: Sequence[float], axis: int, ks: Iterable[int]) -> list[AnisoParams]:
    """Members equal to ``s0`` except ``s_k[axis] = 1 - 2^-k``."""
    out = []
    for k in ks:
        s = list(s0)
        s[axis] = 1.0 - 2.0 ** (-k)
        out.append(AnisoParams(tuple(s), tuple(p)))
    return out


def _first_varying(seq: Sequence[AnisoParams], s0: AnisoParams) -> int:
    for i in range(s0.dim):
        if any(P.s[i] != s0.s[i] for P in seq):
            return i
    return 0


def _breakdown_sums(bd, params: AnisoParams):
    w = [1.0 / p for p in params.p]
    return (
        sum(a * b for a, b in zip(w, bd.near)),
        sum(a * b for a, b in zip(w, bd.mid)),
        sum(a * b for a, b in zip(w, bd.tail)),
    )


def stability_sweep(
    s_sequence: Sequence[AnisoParams],
    s0: AnisoParams,
    f: GridFunction,
    quad: QuadratureSpec | None = None,
    opts: SolveOptions | None = None,
    threads: int | None = None,
) -> SweepTable:
    """Solve every member and the limit problem; report ``||u_k - u_0||_{p_min}``.

    ``value`` is the distance (reference 0), ``near/mid/tail`` split
    ``J_{s_k}(u_k)`` and the sidecar carries the energy gap
    ``J_{s_0}(u_0) - J_{s_k}(u_k)``. Failed members are flagged, not raised.
    """
    quad = quad or DEFAULT_QUAD
    opts = opts or SolveOptions()
    members = list(s_sequence) + [s0]
    axis = _first_varying(list(s_sequence), s0)

    def run(P):
        try:
            return solve_dirichlet(f, P, quad, opts)
        except (ParameterError, SolverFailure) as exc:
            return exc

    results = _map(run, members, threads)
    lim = results[-1]
    table = SweepTable(provenance={"sweep": "stability", "axis": axis, "s0": list(s0.s), "p": list(s0.p)})
    if isinstance(lim, Exception):
        raise ParameterError(f"limit problem failed: {lim}")
    J0 = total_energy(lim.u, s0, quad, lim.metadata["eps"]).total
    r = s0.p_min
    scale = lp_norm(lim.u, r) if lim.u.max_abs() > 0.0 else 1.0
    for idx, (P, res) in enumerate(zip(members, results)):
        is_limit = idx == len(members) - 1
        param = P.s[axis]
        if isinstance(res, Exception):
            table.add(param, math.nan, 0.0, flags=["failed"], error=str(res))
            continue
        bd = total_energy(res.u, P, quad, res.metadata["eps"])
        near, mid, tail = _breakdown_sums(bd, P)
        dist = lp_norm(res.u - lim.u, r)
        flags = ["limit"] if is_limit else []
        flags.append("converged" if res.converged else "not_converged")
        table.add(
            param,
            dist,
            0.0,
            near,
            mid,
            tail,
            flags,
            s=list(P.s),
            relative_distance=dist / scale,
            energy=bd.total,
            limit_energy=J0,
            energy_gap=J0 - bd.total,
            iterations=res.iterations,
            residual=res.residual,
            converged=res.converged,
        )
    return table.sorted()


def ground_state_sweep(
    s_sequence: Sequence[AnisoParams],
    s0: AnisoParams,
    spec: GridSpec,
    nl: Nonlinearity,
    quad: QuadratureSpec | None = None,
    opts: SolveOptions | None = None,
    r: float = 2.0,
    threads: int | None = None,
) -> SweepTable:
    """Ground-state levels ``c_{s_k}`` against ``c_{s_0}``.

    ``value`` is the level and ``reference`` the limit level; the sidecar holds
    ``J_{s_k}(u_k)``, ``||u_k - u_0||_r`` and the Nehari residuals.
    """
    quad = quad or DEFAULT_QUAD
    opts = opts or SolveOptions(grad_tol=1e-6)
    members = list(s_sequence) + [s0]
    axis = _first_varying(list(s_sequence), s0)

    def run(P):
        try:
            return ground_state(spec, P, nl, quad, opts)
        except (ParameterError, SolverFailure) as exc:
            return exc

    results = _map(run, members, threads)
    lim = results[-1]
    if isinstance(lim, Exception):
        raise ParameterError(f"limit ground state failed: {lim}")
    table = SweepTable(
        provenance={"sweep": "ground_state", "axis": axis, "s0": list(s0.s), "p": list(s0.p), "q": nl.q, "r": r}
    )
    for idx, (P, res) in enumerate(zip(members, results)):
        param = P.s[axis]
        if isinstance(res, Exception):
            table.add(param, math.nan, lim.level, flags=["failed"], error=str(res))
            continue
        near, mid, tail = _breakdown_sums(res.energy_parts, P)
        flags = ["limit"] if idx == len(members) - 1 else []
        flags.append("converged" if res.converged else "not_converged")
        table.add(
            param,
            res.level,
            lim.level,
            near,
            mid,
            tail,
            flags,
            s=list(P.s),
            energy=res.energy_parts.total,
            distance=lp_norm(res.u - lim.u, r),
            nehari_residual=res.nehari_residual,
            nehari_scale=res.metadata["nehari_scale"],
            residual=res.residual,
            iterations=res.iterations,
            converged=res.converged,
        )
    return table.sorted()


@dataclass(frozen=True)
class GroundStateChecks:
    all_converged: bool
    levels_positive: bool
    nehari_ok: bool
    window_ok: bool
    limsup_ok: bool
    energy_min: float
    energy_max: float
    late_max_level: float
    limit_level: float

    @property
    def passed(self) -> bool:
        return self.all_converged and self.levels_positive and self.nehari_ok and self.window_ok and self.limsup_ok


def check_ground_states(
    table: SweepTable, window: tuple[float, float], late: int = 3, slack: float = 0.05, nehari_tol: float = 1e-8
) -> GroundStateChecks:
    """Energy window, level positivity, Nehari identity and the late-sweep limsup bound."""
    members = [(r, e) for r, e in zip(table.rows, table.extra) if "limit" not in r["flags"].split(";")]
    limit = [(r, e) for r, e in zip(table.rows, table.extra) if "limit" in r["flags"].split(";")]
    everything = members + limit
    energies = [e.get("energy", math.nan) for _, e in everything]
    c0 = limit[0][0]["value"] if limit else math.nan
    late_levels = [r["value"] for r, _ in members[-late:]]
    return GroundStateChecks(
        all_converged=all(e.get("converged", False) for _, e in everything),
        levels_positive=all(r["value"] > 0.0 for r, _ in everything),
        nehari_ok=all(e.get("nehari_residual", math.inf) <= nehari_tol * e.get("nehari_scale", 0.0) for _, e in everything),
        window_ok=all(window[0] <= E <= window[1] for E in energies),
        limsup_ok=max(late_levels) <= (1.0 + slack) * c0,
        energy_min=min(energies),
        energy_max=max(energies),
        late_max_level=max(late_levels),
        limit_level=c0,
    )


def refinement_study(run: Callable[[int], float], resolutions: Sequence[int] = (16, 32), factor: float = 2.0):
    """Run a scalar diagnostic at several resolutions; tolerance is ``factor`` times the largest."""
    observed = {int(n): float(run(int(n))) for n in resolutions}
    return factor * max(observed.values()), observed


# ---------------------------------------------------------------------------
# inequality audit
# ---------------------------------------------------------------------------

LEMMA1_S = tuple(round(0.1 * k, 10) for k in range(1, 10))
LEMMA5_S = LEMMA1_S + (0.95, 0.99, 0.999)
AUDIT_P = (1.5, 2.0, 3.0)
AUDIT_K = (0.5, 0.75, 1.0)
TOL_BOUND = 1e-6
TOL_MOLLIFY = 1e-9


def truncation_constant(p: float) -> float:
    """``2^(p-1) (1 + 2^(p+1)/p + 2^p/p)``, assembled from the truncation estimate."""
    return 2.0 ** (p - 1.0) * (1.0 + 2.0 ** (p + 1.0) / p + 2.0**p / p)


def audit_grid() -> GridSpec:
    return GridSpec.from_domain([(-1.0, 1.0), (-1.0, 1.0)], 24, margin=2)


def random_function(spec: GridSpec, rng: np.random.Generator, pad: int = 3) -> GridFunction:
    """Smoothed noise times a window vanishing ``pad`` cells inside the non-margin region."""
    noise = rng.standard_normal(spec.shape)
    k = np.array([0.25, 0.5, 0.25])
    for _ in range(int(rng.integers(0, 4))):
        for axis in range(spec.dim):
            noise = np.apply_along_axis(lambda line: np.convolve(line, k, mode="same"), axis, noise)
    window = np.ones(spec.shape)
    for axis in range(spec.dim):
        n = spec.cells[axis]
        lo = spec.margin[axis] + pad
        idx = np.arange(n)
        w = np.clip(np.minimum(idx - lo + 1, n - lo - idx) / 3.0, 0.0, 1.0)
        window = window * w.reshape([-1 if a == axis else 1 for a in range(spec.dim)])
    amp = 10.0 ** rng.uniform(-1.0, 1.0)
    return GridFunction.masked(spec, amp * noise * window)


@dataclass
class AuditReport:
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    trials: int = 0
    seed: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations

    def record(self, name, margin, ok, **context):
        c = self.checks.setdefault(name, {"checked": 0, "violations": 0, "worst_margin": math.inf})
        c["checked"] += 1
        c["worst_margin"] = min(c["worst_margin"], float(margin))
        if not ok:
            c["violations"] += 1
            self.violations.append({"check": name, "margin": float(margin), **context})

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "trials": self.trials,
            "seed": self.seed,
            "checks": {k: dict(v) for k, v in sorted(self.checks.items())},
            "violations": self.violations,
        }


def _energies(u, p, s_values, quad, hook):
    parts = directional_energy_sweep(u, 0, p, s_values, quad)
    vals = [float(sum(pt)) for pt in parts]
    if hook is not None:
        vals = [float(hook(s, J)) for s, J in zip(s_values, vals)]
    return dict(zip(s_values, vals))


def _bound_check(report, name, lhs, rhs, tol, **ctx):
    margin = (rhs * (1.0 + tol) - lhs) / max(abs(rhs), np.finfo(float).tiny)
    report.record(name, margin, lhs <= rhs * (1.0 + tol), lhs=lhs, rhs=rhs, **ctx)


def inequality_audit(
    seed: int,
    trials: int,
    p_values: Sequence[float] = AUDIT_P,
    s_values: Sequence[float] = LEMMA5_S,
    k_values: Sequence[float] = AUDIT_K,
    spec: GridSpec | None = None,
    quad: QuadratureSpec | None = None,
    energy_hook: Callable[[float, float], float] | None = None,
    threads: int | None = None,
) -> AuditReport:
    """Check the gradient, mollification, truncation and order-comparison bounds on random functions.

    For each trial and ``p`` the energies along axis 0 are computed on the whole
    ``s`` grid from one set of profile evaluations. ``energy_hook(s, J)`` lets a
    test corrupt the energies to confirm that the audit can fail. Violations
    carry the trial index so that ``random_function(spec, default_rng([seed, t]))``
    replays the offending input.
    """
    quad = quad or DEFAULT_QUAD
    spec = spec or audit_grid()
    s_values = tuple(sorted(float(s) for s in s_values))
    report = AuditReport(trials=int(trials), seed=int(seed))

    def one(t):
        rng = np.random.default_rng([int(seed), int(t)])
        u = random_function(spec, rng)
        local = AuditReport()
        for p in p_values:
            ctx = {"trial": int(t), "p": float(p)}
            J = _energies(u, p, s_values, quad, energy_hook)
            norm = lp_norm(u, p) ** p
            grad = slope_norm(u, 0, p)
            for s in s_values:
                if s > 0.9 + 1e-12:
                    continue
                rhs = (2.0 * s * grad + (1.0 - s) * 2.0 ** (p + 1.0) * norm) / p
                _bound_check(local, "gradient_bound", J[s], rhs, TOL_BOUND, s=s, **ctx)
            Jm = _energies(mollify(u, 1), p, s_values, quad, energy_hook)
            for s in s_values:
                _bound_check(local, "mollification", Jm[s], J[s], TOL_MOLLIFY, s=s, **ctx)
            C = truncation_constant(p)
            for k in k_values:
                Jt = _energies(truncate(u, k), p, s_values, quad, energy_hook)
                for s in s_values:
                    _bound_check(local, "truncation", Jt[s], C * (J[s] + norm), TOL_BOUND, s=s, k=k, **ctx)
            for i, s1 in enumerate(s_values):
                for s2 in s_values[i + 1 :]:
                    rhs = 2.0 ** ((1.0 - s1) * p) * J[s2] + (1.0 - s1) * 2.0 ** (p + 1.0) / p * norm
                    _bound_check(local, "order_comparison", J[s1], rhs, TOL_BOUND, s1=s1, s2=s2, **ctx)
        return local

    for local in _map(one, range(int(trials)), threads):
        for name, c in local.checks.items():
            agg = report.checks.setdefault(name, {"checked": 0, "violations": 0, "worst_margin": math.inf})
            agg["checked"] += c["checked"]
            agg["violations"] += c["violations"]
            agg["worst_margin"] = min(agg["worst_margin"], c["worst_margin"])
        report.violations.extend(local.violations)
    return report


def high_order_deflation(threshold: float = 0.995, factor: float = 0.9):
    """Mutation hook: multiply energies with ``s > threshold`` by ``factor``."""

    def hook(s, J):
        return factor * J if s > threshold else J

    return hook
