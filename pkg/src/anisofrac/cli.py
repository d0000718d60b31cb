"""Batch front end: ``anisofrac run|validate|verify``.

A run reads one JSON config, executes one problem and writes into the output
directory a CSV table (and, for solves, grid-function files) plus ``run.json``,
a sidecar with the normalized config, its SHA-256, file digests, library
versions and timestamps. Timestamps live only in the sidecar, so the other
files are byte-identical across runs of the same config.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .core import (
    AnisoParams,
    GridFunction,
    GridSpec,
    ParameterError,
    SupportError,
    aniso_summary,
    expression_keys,
    lp_norm,
    read_header,
    sample,
    save_grid_function,
)
from .energy import QuadratureSpec, total_energy
from .experiments import (
    AUDIT_K,
    AUDIT_P,
    LEMMA5_S,
    MS_NOTE,
    SweepTable,
    audit_grid,
    bbm_sweep,
    check_ground_states,
    ground_state_sweep,
    inequality_audit,
    monotone_tail,
    ms_sweep,
    random_function,
    stability_sweep,
)
from .operator import Nonlinearity
from .solver import SolveOptions, SolverFailure, ground_state, solve_dirichlet

KINDS = ("energy", "bbm", "ms", "dirichlet", "stability", "ground_state", "audit")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
PRECOMPACT_NOTE = (
    "convergence of the computed iterates is observed, not proved; precompactness of the "
    "solution family in L^p_min is a hypothesis the run cannot check"
)


class ConfigError(ValueError):
    """Invalid config; the message starts with the offending field path."""


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def _obj(value, path, allowed, required=()):
    if not isinstance(value, dict):
        raise ConfigError(f"{path} must be an object")
    unknown = sorted(set(value) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]} is not a recognized field")
    for key in required:
        if key not in value:
            raise ConfigError(f"{path}.{key} is required")
    return value


def _num(value, path, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False, what=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{path} must be a finite number")
    bad_lo = value <= lo if lo_open else value < lo
    bad_hi = value >= hi if hi_open else value > hi
    if bad_lo or bad_hi:
        rng = what or f"{'(' if lo_open else '['}{lo:g},{hi:g}{')' if hi_open else ']'}"
        raise ConfigError(f"{path} outside {rng}")
    return float(value)


def _int(value, path, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer")
    if lo is not None and value < lo:
        raise ConfigError(f"{path} must be >= {lo}")
    return int(value)


def _list(value, path, n=None):
    if not isinstance(value, list):
        raise ConfigError(f"{path} must be a list")
    if n is not None and len(value) != n:
        raise ConfigError(f"{path} must have length {n}, got {len(value)}")
    return value


def _vec(value, path, n, **kw):
    if not isinstance(value, list):
        value = [value] * n
    _list(value, path, n)
    return [_num(v, f"{path}[{i}]", **kw) for i, v in enumerate(value)]


def _s_vec(value, path, n):
    return _vec(value, path, n, lo=0.0, hi=1.0, lo_open=True, what="(0,1]")


def _p_vec(value, path, n):
    return _vec(value, path, n, lo=1.0, hi=math.inf, lo_open=True, hi_open=True, what="(1,inf)")


def _expression(value, path, dim):
    if not isinstance(value, dict):
        raise ConfigError(f"{path} must be an object")
    if "kind" not in value:
        raise ConfigError(f"{path}.kind is required")
    kind = value["kind"]
    try:
        allowed = expression_keys(kind)
    except ParameterError as exc:
        raise ConfigError(f"{path}.kind: {exc}") from None
    _obj(value, path, allowed)
    out = {"kind": kind}
    for key in sorted(set(value) - {"kind"}):
        sub = f"{path}.{key}"
        if key == "amplitude":
            out[key] = _num(value[key], sub)
        elif key == "coeffs":
            rows = _list(value[key], sub, dim)
            out[key] = [[_num(c, f"{sub}[{i}][{j}]") for j, c in enumerate(_list(r, f"{sub}[{i}]"))] for i, r in enumerate(rows)]
        elif key in ("width", "modes"):
            out[key] = _vec(value[key], sub, dim, lo=0.0, lo_open=True, what="(0,inf)")
        else:
            out[key] = _vec(value[key], sub, dim)
    if "lo" in out or "hi" in out:
        lo, hi = out.get("lo", [0.0] * dim), out.get("hi", [1.0] * dim)
        for i in range(dim):
            if not hi[i] > lo[i]:
                raise ConfigError(f"{path}.hi[{i}] must exceed {path}.lo[{i}]")
    return out


# ---------------------------------------------------------------------------
# config record
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    data: dict
    grid: GridSpec | None
    params: AnisoParams | None
    sweep: list[AnisoParams] | None
    quadrature: QuadratureSpec
    solver: SolveOptions
    output_dir: Path
    precision: int
    fmt: str

    @property
    def kind(self) -> str:
        return self.data["problem"]["kind"]

    @property
    def problem(self) -> dict:
        return self.data["problem"]

    @property
    def sha256(self) -> str:
        return config_hash(self.data)


def config_hash(data: dict) -> str:
    """SHA-256 of the canonical JSON of the normalized config, excluding the output directory."""
    body = {k: v for k, v in data.items() if k != "output"}
    body["output"] = {k: v for k, v in data.get("output", {}).items() if k != "directory"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


_TOP = ("grid", "params", "quadrature", "problem", "solver", "output", "seed")
_PROBLEM_KEYS = {
    "energy": {"kind", "function"},
    "bbm": {"kind", "function", "axis", "p", "s_list"},
    "ms": {"kind", "function", "axis", "p", "s_list"},
    "dirichlet": {"kind", "source"},
    "stability": {"kind", "source"},
    "ground_state": {"kind", "nonlinearity", "window", "ratio_ceiling", "r", "late", "slack"},
    "audit": {"kind", "trials", "p_values", "s_values", "k_values"},
}
_NEEDS_PARAMS = {"energy", "dirichlet", "stability", "ground_state"}
_NEEDS_GRID = {"energy", "bbm", "ms", "dirichlet", "stability", "ground_state"}


def _grid(raw) -> tuple[dict, GridSpec]:
    _obj(raw, "grid", ("domain", "intervals", "bounds", "cells", "margin"))
    if ("domain" in raw) == ("bounds" in raw):
        raise ConfigError("grid needs exactly one of grid.domain (with intervals) or grid.bounds (with cells)")
    key, count = ("domain", "intervals") if "domain" in raw else ("bounds", "cells")
    boxes = _list(raw[key], f"grid.{key}")
    if not boxes:
        raise ConfigError(f"grid.{key} must not be empty")
    n = len(boxes)
    box = []
    for i, b in enumerate(boxes):
        _list(b, f"grid.{key}[{i}]", 2)
        lo, hi = _num(b[0], f"grid.{key}[{i}][0]"), _num(b[1], f"grid.{key}[{i}][1]")
        if hi <= lo:
            raise ConfigError(f"grid.{key}[{i}] must satisfy hi > lo")
        box.append([lo, hi])
    if count not in raw:
        raise ConfigError(f"grid.{count} is required")
    counts = raw[count] if isinstance(raw[count], list) else [raw[count]] * n
    _list(counts, f"grid.{count}", n)
    counts = [_int(c, f"grid.{count}[{i}]", 2) for i, c in enumerate(counts)]
    margin = raw.get("margin", 1)
    margin = margin if isinstance(margin, list) else [margin] * n
    _list(margin, "grid.margin", n)
    margin = [_int(m, f"grid.margin[{i}]", 1) for i, m in enumerate(margin)]
    norm = {key: box, count: counts, "margin": margin}
    try:
        spec = (
            GridSpec.from_domain(box, counts, margin)
            if key == "domain"
            else GridSpec(tuple(map(tuple, box)), tuple(counts), tuple(margin))
        )
    except ParameterError as exc:
        raise ConfigError(f"grid: {exc}") from None
    return norm, spec


def _params(raw, n):
    _obj(raw, "params", ("s", "p", "sweep"), ("p",))
    p = _p_vec(raw["p"], "params.p", n)
    if ("s" in raw) == ("sweep" in raw):
        raise ConfigError("params needs exactly one of params.s or params.sweep")
    if "s" in raw:
        s = _s_vec(raw["s"], "params.s", n)
        return {"s": s, "p": p}, AnisoParams(tuple(s), tuple(p)), None
    sw = _obj(raw["sweep"], "params.sweep", ("s0", "vary", "k", "values"), ("s0",))
    s0 = _s_vec(sw["s0"], "params.sweep.s0", n)
    vary = _int(sw.get("vary", 0), "params.sweep.vary", 0)
    if vary >= n:
        raise ConfigError(f"params.sweep.vary must be < {n}")
    norm = {"s0": s0, "vary": vary}
    if ("k" in sw) == ("values" in sw):
        raise ConfigError("params.sweep needs exactly one of params.sweep.k or params.sweep.values")
    if "k" in sw:
        if s0[vary] != 1.0:
            raise ConfigError(f"params.sweep.s0[{vary}] must be 1 for the 1 - 2^-k schedule")
        k = _list(sw["k"], "params.sweep.k", 2)
        k0, k1 = _int(k[0], "params.sweep.k[0]", 1), _int(k[1], "params.sweep.k[1]", 1)
        if k1 < k0:
            raise ConfigError("params.sweep.k must be an increasing range [k_first, k_last]")
        values = [1.0 - 2.0 ** (-k) for k in range(k0, k1 + 1)]
        norm["k"] = [k0, k1]
    else:
        values = [_num(v, f"params.sweep.values[{i}]", 0.0, 1.0, lo_open=True, what="(0,1]") for i, v in enumerate(_list(sw["values"], "params.sweep.values"))]
        norm["values"] = values
    if not values:
        raise ConfigError("params.sweep produces no members")
    gaps = [abs(v - s0[vary]) for v in values]
    if any(b >= a for a, b in zip(gaps, gaps[1:])):
        raise ConfigError("params.sweep schedule must approach s0 monotonically")
    members = []
    for v in values:
        s = list(s0)
        s[vary] = v
        members.append(AnisoParams(tuple(s), tuple(p)))
    return {"sweep": norm, "p": p}, AnisoParams(tuple(s0), tuple(p)), members


def _s_list(raw, path, direction):
    vals = [_num(v, f"{path}[{i}]", 0.0, 1.0, lo_open=True, hi_open=True, what="(0,1)") for i, v in enumerate(_list(raw, path))]
    if not vals:
        raise ConfigError(f"{path} must not be empty")
    ok = all(b > a for a, b in zip(vals, vals[1:])) if direction > 0 else all(b < a for a, b in zip(vals, vals[1:]))
    if not ok:
        raise ConfigError(f"{path} must be strictly {'increasing' if direction > 0 else 'decreasing'}")
    return vals


def _nonlinearity(raw, dim):
    _obj(raw, "problem.nonlinearity", ("kind", "q", "amplitude", "weight"), ("q",))
    kind = raw.get("kind", "power")
    if kind != "power":
        raise ConfigError("problem.nonlinearity.kind must be 'power'")
    q = _num(raw["q"], "problem.nonlinearity.q", 1.0, lo_open=True, what="(1,inf)")
    amp = _num(raw.get("amplitude", 1.0), "problem.nonlinearity.amplitude", 0.0, lo_open=True, what="(0,inf)")
    norm = {"kind": kind, "q": q, "amplitude": amp}
    if "weight" in raw:
        norm["weight"] = _expression(raw["weight"], "problem.nonlinearity.weight", dim)
    return norm, Nonlinearity(q, kind, amp, norm.get("weight"))


def parse_config(source) -> ExperimentConfig:
    """Validate a config (path or already-loaded dict) and fill defaults."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    else:
        raw = source
    _obj(raw, "config", _TOP, ("problem",))
    problem = _obj(raw["problem"], "problem", set(raw["problem"]) if isinstance(raw["problem"], dict) else (), ("kind",))
    kind = problem["kind"]
    if kind not in KINDS:
        raise ConfigError(f"problem.kind must be one of {list(KINDS)}, got {kind!r}")
    _obj(problem, "problem", _PROBLEM_KEYS[kind], ("kind",))
    data: dict[str, Any] = {"seed": _int(raw.get("seed", 0), "seed", 0)}

    grid = None
    if "grid" in raw:
        data["grid"], grid = _grid(raw["grid"])
    elif kind in _NEEDS_GRID:
        raise ConfigError("grid is required")
    dim = grid.dim if grid else 2

    params = sweep = None
    if "params" in raw:
        data["params"], params, sweep = _params(raw["params"], dim)
    elif kind in _NEEDS_PARAMS:
        raise ConfigError("params is required")
    if kind == "stability" and sweep is None:
        raise ConfigError("params.sweep is required for a stability problem")

    q = _obj(raw.get("quadrature", {}), "quadrature", ("near_cut", "ratio", "nodes_per_interval", "tail_cut"))
    qd = {
        "near_cut": _num(q.get("near_cut", 1.0), "quadrature.near_cut", 0.0, 1.0, lo_open=True),
        "ratio": _num(q.get("ratio", 1.05), "quadrature.ratio", 1.0, lo_open=True, what="(1,inf)"),
        "nodes_per_interval": _int(q.get("nodes_per_interval", 3), "quadrature.nodes_per_interval", 1),
        "tail_cut": None if q.get("tail_cut") is None else _num(q["tail_cut"], "quadrature.tail_cut", 0.0, lo_open=True, what="(0,inf)"),
    }
    data["quadrature"] = qd
    quad = QuadratureSpec(**qd)

    sv = _obj(raw.get("solver", {}), "solver", ("max_iter", "grad_tol", "step_rule", "armijo", "step", "init", "init_width", "perturbation"))
    sd = asdict(SolveOptions(grad_tol=1e-6 if kind == "ground_state" else 1e-8))
    sd.pop("seed")
    for key in sv:
        if key in ("max_iter",):
            sd[key] = _int(sv[key], f"solver.{key}", 1)
        elif key in ("step_rule", "init"):
            if not isinstance(sv[key], str):
                raise ConfigError(f"solver.{key} must be a string")
            sd[key] = sv[key]
        elif key == "armijo":
            sd[key] = _num(sv[key], "solver.armijo", 0.0, 1.0, lo_open=True, hi_open=True)
        elif key == "init_width":
            sd[key] = _num(sv[key], "solver.init_width", 0.0, 1.0, lo_open=True)
        elif key == "perturbation":
            sd[key] = _num(sv[key], "solver.perturbation", 0.0, 1.0, hi_open=True)
        else:
            sd[key] = _num(sv[key], f"solver.{key}", 0.0, lo_open=True, what="(0,inf)")
    try:
        solver = SolveOptions(seed=data["seed"], **sd)
    except ParameterError as exc:
        raise ConfigError(f"solver: {exc}") from None
    data["solver"] = sd

    out = _obj(raw.get("output", {}), "output", ("directory", "precision", "format"))
    precision = _int(out.get("precision", 12), "output.precision", 1)
    if precision > 17:
        raise ConfigError("output.precision must be <= 17")
    fmt = out.get("format", "csv")
    if fmt not in ("csv", "bin"):
        raise ConfigError("output.format must be 'csv' or 'bin'")
    directory = out.get("directory", "output")
    if not isinstance(directory, str):
        raise ConfigError("output.directory must be a string")
    data["output"] = {"directory": directory, "precision": precision, "format": fmt}

    data["problem"] = _problem(problem, kind, dim, params, sweep, grid)
    return ExperimentConfig(data, grid, params, sweep, quad, solver, Path(directory), precision, fmt)


def _problem(problem, kind, dim, params, sweep, grid):
    out: dict[str, Any] = {"kind": kind}
    if kind in ("energy", "bbm", "ms"):
        if "function" not in problem:
            raise ConfigError("problem.function is required")
        out["function"] = _expression(problem["function"], "problem.function", dim)
    if kind in ("bbm", "ms"):
        axis = _int(problem.get("axis", 0), "problem.axis", 0)
        if axis >= dim:
            raise ConfigError(f"problem.axis must be < {dim}")
        out["axis"] = axis
        out["p"] = _num(problem.get("p", 2.0), "problem.p", 1.0, lo_open=True, what="(1,inf)")
        if "s_list" not in problem:
            raise ConfigError("problem.s_list is required")
        out["s_list"] = _s_list(problem["s_list"], "problem.s_list", +1 if kind == "bbm" else -1)
    if kind in ("dirichlet", "stability"):
        if "source" not in problem:
            raise ConfigError("problem.source is required")
        out["source"] = _expression(problem["source"], "problem.source", dim)
        for P in ([params] if sweep is None else sweep + [params]):
            summary = aniso_summary(P, strict=False)
            if summary.p_star is not None and not P.p_max < summary.p_star:
                raise ConfigError(
                    f"params: Dirichlet problem needs p_max < p* (s={list(P.s)}, p*={summary.p_star:g})"
                )
    if kind == "ground_state":
        if "nonlinearity" not in problem:
            raise ConfigError("problem.nonlinearity is required")
        out["nonlinearity"], nl = _nonlinearity(problem["nonlinearity"], dim)
        for P in ([params] if sweep is None else sweep + [params]):
            if not nl.q > P.p_max:
                raise ConfigError(
                    f"problem.nonlinearity.q must exceed p_max = {P.p_max:g} (subcriticality requirement q in (p_max, p*))"
                )
            summary = aniso_summary(P, strict=False)
            if summary.p_star is not None and not nl.q < summary.p_star:
                raise ConfigError(
                    f"problem.nonlinearity.q must be below p* = {summary.p_star:g} for s={list(P.s)} "
                    "(subcriticality requirement q in (p_max, p*))"
                )
        win = _list(problem.get("window", [0.0, 1e300]), "problem.window", 2)
        lo = _num(win[0], "problem.window[0]", 0.0)
        hi = _num(win[1], "problem.window[1]", 0.0, lo_open=True)
        if hi < lo:
            raise ConfigError("problem.window must satisfy lower <= upper")
        out["window"] = [lo, hi]
        out["ratio_ceiling"] = _num(problem.get("ratio_ceiling", 1e300), "problem.ratio_ceiling", 1.0)
        if lo > 0.0 and hi / lo > out["ratio_ceiling"]:
            raise ConfigError("problem.window ratio exceeds problem.ratio_ceiling")
        out["r"] = _num(problem.get("r", 2.0), "problem.r", 1.0, lo_open=True, what="(1,inf)")
        out["late"] = _int(problem.get("late", 3), "problem.late", 1)
        out["slack"] = _num(problem.get("slack", 0.05), "problem.slack", 0.0)
    if kind == "audit":
        out["trials"] = _int(problem.get("trials", 100), "problem.trials", 0)
        out["p_values"] = [
            _num(v, f"problem.p_values[{i}]", 1.0, lo_open=True, what="(1,inf)")
            for i, v in enumerate(_list(problem.get("p_values", list(AUDIT_P)), "problem.p_values"))
        ]
        out["s_values"] = [
            _num(v, f"problem.s_values[{i}]", 0.0, 1.0, lo_open=True, hi_open=True, what="(0,1)")
            for i, v in enumerate(_list(problem.get("s_values", list(LEMMA5_S)), "problem.s_values"))
        ]
        out["k_values"] = [
            _num(v, f"problem.k_values[{i}]", 0.5, what="[0.5,inf)")
            for i, v in enumerate(_list(problem.get("k_values", list(AUDIT_K)), "problem.k_values"))
        ]
    if grid is not None:
        for key in ("function", "source"):
            if key in out:
                try:
                    sample(out[key], grid)
                except (SupportError, ParameterError) as exc:
                    raise ConfigError(f"problem.{key}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def _versions() -> dict:
    import scipy

    return {"anisofrac": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    def __init__(self, cfg: ExperimentConfig, out_dir: Path, threads: int | None):
        self.cfg, self.out, self.threads = cfg, out_dir, threads
        self.files: list[Path] = []
        self.sidecar: dict[str, Any] = {}
        self.failures: list[str] = []
        self.notes: list[str] = []

    def table(self, table: SweepTable, name: str):
        table.provenance = {"config_sha256": self.cfg.sha256, **table.provenance}
        path = self.out / f"{name}.csv"
        path.write_text(table.to_csv(self.cfg.precision))
        self.files.append(path)
        self.sidecar["rows"] = table.extra
        self.notes.extend(table.notes)
        return path

    def grid_function(self, u: GridFunction, name: str):
        ext = "csv" if self.cfg.fmt == "csv" else "bin"
        path = self.out / f"{name}.{ext}"
        save_grid_function(u, path, self.cfg.fmt, self.cfg.precision, meta={"config_sha256": self.cfg.sha256})
        self.files.append(path)
        return path


def _embedding(u: GridFunction, params: AnisoParams, quad) -> dict | None:
    """Empirical constant in ``min(|u|_{p*}^{p_min}, |u|_{p*}^{p_max}) <= C J(u)``."""
    summary = aniso_summary(params, strict=False)
    J = total_energy(u, params, quad).total
    if summary.p_star is None or not J > 0.0:
        return None
    norm = lp_norm(u, summary.p_star)
    lhs = min(norm**params.p_min, norm**params.p_max)
    return {"p_star": summary.p_star, "norm": norm, "energy": J, "empirical_constant": lhs / J}


def _second_start(cfg: ExperimentConfig, nl, first) -> dict:
    """Rerun from a narrower bump; reported as evidence only, uniqueness is not claimed."""
    opts = replace(cfg.solver, init_width=0.5 * cfg.solver.init_width)
    try:
        other = ground_state(cfg.grid, cfg.params, nl, cfg.quadrature, opts)
    except (ParameterError, SolverFailure) as exc:
        return {"error": str(exc)}
    r = cfg.problem["r"]
    return {
        "init_width": opts.init_width,
        "level": other.level,
        "level_difference": other.level - first.level,
        "distance": lp_norm(other.u - first.u, r),
        "r": r,
        "converged": other.converged,
    }


def _execute(run: _Run):
    cfg = run.cfg
    prob = cfg.problem
    kind = cfg.kind
    quad = cfg.quadrature
    if kind == "energy":
        u = sample(prob["function"], cfg.grid)
        bd = total_energy(u, cfg.params, quad)
        t = SweepTable(provenance={"problem": "energy"})
        for i, J in enumerate(bd.per_direction):
            t.add(i, J, J, bd.near[i], bd.mid[i], bd.tail[i], ["direction"])
        run.table(t, "energy")
        run.sidecar["total"] = bd.total
    elif kind in ("bbm", "ms"):
        u = sample(prob["function"], cfg.grid)
        sweep = bbm_sweep if kind == "bbm" else ms_sweep
        t = sweep(u, prob["axis"], prob["p"], prob["s_list"], quad, threads=run.threads)
        run.table(t, kind)
        run.sidecar["monotone_tail"] = monotone_tail(t.column("rel_err"))
    elif kind == "dirichlet":
        f = sample(prob["source"], cfg.grid)
        res = solve_dirichlet(f, cfg.params, quad, cfg.solver)
        run.grid_function(res.u, "solution")
        run.sidecar["result"] = {
            "energy": res.energy,
            "residual": res.residual,
            "iterations": res.iterations,
            "converged": res.converged,
            "metadata": res.metadata,
        }
        run.sidecar["embedding"] = _embedding(res.u, cfg.params, quad)
        if not res.converged:
            run.failures.append(f"dirichlet solve did not converge in {res.iterations} iterations")
    elif kind == "stability":
        f = sample(prob["source"], cfg.grid)
        t = stability_sweep(cfg.sweep, cfg.params, f, quad, cfg.solver, threads=run.threads)
        run.table(t, "stability")
        run.notes.append(PRECOMPACT_NOTE)
        for r, e in zip(t.rows, t.extra):
            if not e.get("converged", False):
                run.failures.append(f"stability member s={e.get('s', r['param'])} did not converge")
    elif kind == "ground_state":
        nl = Nonlinearity(prob["nonlinearity"]["q"], amplitude=prob["nonlinearity"]["amplitude"], weight=prob["nonlinearity"].get("weight"))
        members = cfg.sweep or []
        if members:
            t = ground_state_sweep(members, cfg.params, cfg.grid, nl, quad, cfg.solver, prob["r"], threads=run.threads)
            run.table(t, "ground_state")
            run.notes.append(PRECOMPACT_NOTE)
            checks = check_ground_states(t, tuple(prob["window"]), prob["late"], prob["slack"])
            run.sidecar["checks"] = asdict(checks)
            if not checks.passed:
                run.failures.append("ground-state sweep checks failed")
        else:
            res = ground_state(cfg.grid, cfg.params, nl, quad, cfg.solver)
            run.grid_function(res.u, "ground_state")
            t = SweepTable(provenance={"problem": "ground_state"})
            t.add(cfg.params.s[0], res.level, res.level, sum(res.energy_parts.near), sum(res.energy_parts.mid), sum(res.energy_parts.tail), ["converged" if res.converged else "not_converged"], nehari_residual=res.nehari_residual, energy=res.energy_parts.total)
            run.table(t, "ground_state")
            run.sidecar["embedding"] = _embedding(res.u, cfg.params, quad)
            run.sidecar["multiplicity"] = _second_start(cfg, nl, res)
            if not res.converged:
                run.failures.append("ground state did not converge")
    elif kind == "audit":
        spec = cfg.grid or audit_grid()
        report = inequality_audit(
            cfg.data["seed"], prob["trials"], prob["p_values"], prob["s_values"], prob["k_values"], spec, quad, threads=run.threads
        )
        t = SweepTable(provenance={"problem": "audit", "seed": cfg.data["seed"], "trials": prob["trials"]})
        for i, (name, c) in enumerate(sorted(report.checks.items())):
            t.add(i, c["worst_margin"], 0.0, flags=[name, "pass" if c["violations"] == 0 else "fail"], checked=c["checked"], violations=c["violations"])
        run.table(t, "audit")
        summary = report.summary()
        run.sidecar["audit"] = {k: v for k, v in summary.items() if k != "violations"}
        if report.violations:
            replay = run.out / "violations"
            replay.mkdir(exist_ok=True)
            seen = set()
            for v in report.violations:
                if v["trial"] in seen:
                    continue
                seen.add(v["trial"])
                u = random_function(spec, np.random.default_rng([cfg.data["seed"], v["trial"]]))
                run.grid_function(u, f"violations/trial_{v['trial']:04d}")
            (replay / "violations.json").write_text(json.dumps(report.violations, indent=1, sort_keys=True))
            run.files.append(replay / "violations.json")
            run.failures.append(f"{len(report.violations)} inequality violations")
    if kind == "ms" and MS_NOTE not in run.notes:
        run.notes.append(MS_NOTE)


def run(cfg: ExperimentConfig, output_dir: str | Path | None = None, threads: int | None = None) -> int:
    """Execute a validated config and write its outputs. Returns the exit status."""
    out = Path(output_dir) if output_dir is not None else cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    job = _Run(cfg, out, threads)
    started = _now()
    try:
        _execute(job)
    except OSError as exc:
        print(f"error: I/O failure under {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    sidecar = {
        "config": cfg.data,
        "config_sha256": cfg.sha256,
        "files": {str(p.relative_to(out)): _digest(p) for p in job.files},
        "versions": _versions(),
        "timestamps": {"started": started, "finished": _now()},
        "status": "failed" if job.failures else "ok",
        "failures": job.failures,
        "notes": job.notes,
        **job.sidecar,
    }
    (out / "run.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True, default=_jsonable))
    return EXIT_FAIL if job.failures else EXIT_OK


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def verify(out_dir: str | Path) -> tuple[bool, list[str]]:
    """Re-hash the config in ``run.json`` and check every listed file against it."""
    out = Path(out_dir)
    problems = []
    try:
        side = json.loads((out / "run.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return False, [f"cannot read {out / 'run.json'}: {exc}"]
    digest = config_hash(side.get("config", {}))
    if digest != side.get("config_sha256"):
        problems.append("run.json: config does not match its recorded hash")
    for name, sha in sorted(side.get("files", {}).items()):
        path = out / name
        if not path.exists():
            problems.append(f"{name}: missing")
            continue
        if _digest(path) != sha:
            problems.append(f"{name}: content digest mismatch")
        embedded = _embedded_hash(path)
        if embedded is not None and embedded != digest:
            problems.append(f"{name}: embedded config hash differs")
        if embedded is None and path.suffix in (".csv", ".bin"):
            problems.append(f"{name}: no embedded config hash")
    return not problems, problems


def _embedded_hash(path: Path):
    if path.suffix not in (".csv", ".bin"):
        return None
    try:
        return read_header(path).get("config_sha256")
    except (ValueError, OSError):
        return None


# ---------------------------------------------------------------------------
# argparse entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anisofrac", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="worker cap for sweeps (results do not depend on it)")
    parser.add_argument("--output-dir", default=None, help="override output.directory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one config")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="validate a config and print it with defaults")
    p_val.add_argument("config")
    p_ver = sub.add_parser("verify", help="check the hashes of an output directory")
    p_ver.add_argument("output_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "verify":
        ok, problems = verify(args.output_dir)
        for line in problems:
            print(line, file=sys.stderr)
        print("verified" if ok else "verification failed")
        return EXIT_OK if ok else EXIT_FAIL
    try:
        cfg = parse_config(args.config)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(json.dumps({"config": cfg.data, "config_sha256": cfg.sha256}, indent=1, sort_keys=True))
        return EXIT_OK
    status = run(cfg, args.output_dir, args.threads)
    print(json.dumps({"status": "ok" if status == EXIT_OK else "failed", "exit": status, "output": str(args.output_dir or cfg.output_dir)}))
    return status


if __name__ == "__main__":
    sys.exit(main())
