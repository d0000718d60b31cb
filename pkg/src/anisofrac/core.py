"""Grid functions, anisotropic parameter records and norms.

A :class:`GridFunction` stores nodal values at the cell centers of a uniform
tensor grid. Along any single axis the values are read as a continuous
piecewise-linear function; outside the box the function is identically zero.
The ``margin`` outermost cells of every axis must hold zeros, so the continuous
support of a stored function lies between the centers of the innermost margin
cells. That open sub-box is the domain on which Dirichlet problems are posed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np


class ParameterError(ValueError):
    """A scalar or vector parameter is outside its admissible range."""


class SupportError(ValueError):
    """A function does not fit inside the non-margin region of its grid."""


class GridMismatchError(ValueError):
    """Two grid objects that must agree do not."""


class SupercriticalError(ValueError):
    """The harmonic mean of ``s_i p_i`` reaches the dimension."""


def _as_tuple(value, n: int, cast, name: str) -> tuple:
    if np.isscalar(value):
        return tuple(cast(value) for _ in range(n))
    out = tuple(cast(v) for v in value)
    if len(out) != n:
        raise ParameterError(f"{name} has length {len(out)}, expected {n}")
    return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered tensor grid over a box.

    Parameters
    ----------
    bounds : sequence of (a_i, b_i)
        The computational box.
    cells : sequence of int
        Cell count per axis, at least 2.
    margin : int or sequence of int
        Number of guaranteed-zero cells at each end of every axis, at least 1.
    """

    bounds: tuple[tuple[float, float], ...]
    cells: tuple[int, ...]
    margin: tuple[int, ...] = 1

    def __post_init__(self):
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        n = len(bounds)
        if n < 1:
            raise ParameterError("grid needs at least one axis")
        cells = _as_tuple(self.cells, n, int, "cells")
        margin = _as_tuple(self.margin, n, int, "margin")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "margin", margin)
        for i, ((a, b), N, m) in enumerate(zip(bounds, cells, margin)):
            if not (math.isfinite(a) and math.isfinite(b)) or b <= a:
                raise ParameterError(f"bounds[{i}] must satisfy b > a, got ({a}, {b})")
            if N < 2:
                raise ParameterError(f"cells[{i}] must be >= 2, got {N}")
            if m < 1:
                raise ParameterError(f"margin[{i}] must be >= 1, got {m}")
            if 2 * m >= N:
                raise ParameterError(f"margin[{i}]={m} leaves no interior cells out of {N}")

    @classmethod
    def from_domain(
        cls,
        domain: Sequence[tuple[float, float]],
        intervals: int | Sequence[int],
        margin: int | Sequence[int] = 1,
    ) -> "GridSpec":
        """Grid whose innermost margin-cell centers sit exactly on ``domain``'s faces.

        With ``intervals = n`` the domain ``[lo, hi]`` is split into ``n``
        intervals of width ``(hi - lo)/n``; the ``n - 1`` interior nodes are the
        free unknowns and the nodes on ``lo`` and ``hi`` are margin cells.
        """
        domain = [(float(lo), float(hi)) for lo, hi in domain]
        n = len(domain)
        intervals = _as_tuple(intervals, n, int, "intervals")
        margin = _as_tuple(margin, n, int, "margin")
        bounds, cells = [], []
        for (lo, hi), k, m in zip(domain, intervals, margin):
            if hi <= lo or k < 2:
                raise ParameterError(f"bad domain axis ({lo}, {hi}) with {k} intervals")
            dx = (hi - lo) / k
            bounds.append((lo - (m - 0.5) * dx, hi + (m - 0.5) * dx))
            cells.append(k + 2 * m - 1)
        return cls(tuple(bounds), tuple(cells), margin)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / N for (a, b), N in zip(self.bounds, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def box_length(self, axis: int) -> float:
        a, b = self.bounds[axis]
        return b - a

    def centers(self, axis: int) -> np.ndarray:
        a, _ = self.bounds[axis]
        dx = self.spacing[axis]
        return a + (np.arange(self.cells[axis]) + 0.5) * dx

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.centers(i) for i in range(self.dim)], indexing="ij")

    def domain(self) -> tuple[tuple[float, float], ...]:
        """Open sub-box between the centers of the innermost margin cells."""
        out = []
        for i in range(self.dim):
            x = self.centers(i)
            m = self.margin[i]
            out.append((float(x[m - 1]), float(x[self.cells[i] - m])))
        return tuple(out)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.cells, dtype=bool)
        mask[tuple(slice(m, N - m) for m, N in zip(self.margin, self.cells))] = True
        return mask

    def header(self) -> dict:
        return {
            "dim": self.dim,
            "bounds": [list(b) for b in self.bounds],
            "cells": list(self.cells),
            "margin": list(self.margin),
        }


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values on a :class:`GridSpec`, zero on every margin cell."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != self.spec.shape:
            raise GridMismatchError(f"values have shape {vals.shape}, grid is {self.spec.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("grid function values must be finite")
        for axis, m in enumerate(self.spec.margin):
            lo = np.take(vals, np.arange(m), axis=axis)
            hi = np.take(vals, np.arange(vals.shape[axis] - m, vals.shape[axis]), axis=axis)
            if np.any(lo != 0.0) or np.any(hi != 0.0):
                raise SupportError(f"nonzero value in the margin of axis {axis}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def masked(cls, spec: GridSpec, values: np.ndarray) -> "GridFunction":
        """Build from arbitrary values, zeroing the margin cells."""
        return cls(spec, np.where(spec.interior_mask(), values, 0.0))

    def _check(self, other: "GridFunction"):
        if other.spec != self.spec:
            raise GridMismatchError("grid functions live on different grids")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.spec, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.spec, self.values - other.values)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.spec, float(scalar) * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return GridFunction(self.spec, -self.values)

    def inner(self, other: "GridFunction") -> float:
        self._check(other)
        return float(np.sum(self.values * other.values) * self.spec.cell_volume)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class AnisoParams:
    """Per-axis fractional orders ``s_i`` in (0, 1] and exponents ``p_i`` > 1."""

    s: tuple[float, ...]
    p: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(v) for v in np.atleast_1d(self.s))
        p = tuple(float(v) for v in np.atleast_1d(self.p))
        if len(s) != len(p):
            raise ParameterError(f"s has length {len(s)} but p has length {len(p)}")
        for i, si in enumerate(s):
            if not (0.0 < si <= 1.0):
                raise ParameterError(f"s[{i}] outside (0,1]: {si}")
        for i, pi in enumerate(p):
            if not (1.0 < pi < math.inf):
                raise ParameterError(f"p[{i}] outside (1,inf): {pi}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return len(self.s)

    @property
    def p_min(self) -> float:
        return min(self.p)

    @property
    def p_max(self) -> float:
        return max(self.p)


@dataclass(frozen=True)
class AnisoSummary:
    p_min: float
    p_max: float
    s_bar: float
    sp_bar: float
    p_star: float | None

    @property
    def supercritical(self) -> bool:
        return self.p_star is None

    def p_star_or_inf(self) -> float:
        return math.inf if self.p_star is None else self.p_star


def aniso_summary(
    params: AnisoParams, spec: GridSpec | None = None, strict: bool = True
) -> AnisoSummary:
    """Harmonic means and the anisotropic critical exponent.

    ``s_bar`` is the harmonic mean of the ``s_i`` and ``sp_bar`` that of the
    products ``s_i p_i``. When ``sp_bar < n`` the critical exponent is
    ``n (sp_bar / s_bar) / (n - sp_bar)``. Otherwise a :class:`SupercriticalError`
    is raised, unless ``strict=False`` in which case ``p_star`` is ``None``.
    """
    if spec is not None and spec.dim != params.dim:
        raise GridMismatchError(f"params have dimension {params.dim}, grid has {spec.dim}")
    n = params.dim
    s = np.array(params.s)
    sp = s * np.array(params.p)
    s_bar = n / float(np.sum(1.0 / s))
    sp_bar = n / float(np.sum(1.0 / sp))
    if sp_bar >= n:
        if strict:
            raise SupercriticalError(
                f"supercritical: p* undefined (harmonic mean of s_i p_i = {sp_bar:g} >= n = {n})"
            )
        p_star = None
    else:
        p_star = n * (sp_bar / s_bar) / (n - sp_bar)
    return AnisoSummary(params.p_min, params.p_max, s_bar, sp_bar, p_star)


def lp_norm(u: GridFunction, p: float) -> float:
    """Nodal L^p norm ``(sum |u|^p * cell_volume)^(1/p)``."""
    if not p > 1.0:
        raise ParameterError(f"lp_norm needs p > 1, got {p}")
    total = np.sum(np.abs(u.values) ** p) * u.spec.cell_volume
    return float(total) ** (1.0 / p)


# ---------------------------------------------------------------------------
# Analytic expressions
# ---------------------------------------------------------------------------

def _vec(params: Mapping, key: str, n: int, default) -> np.ndarray:
    return np.array(_as_tuple(params.get(key, default), n, float, key))


def _tent(x, prm, n):
    c, w = _vec(prm, "center", n, 0.0), _vec(prm, "width", n, 1.0)
    out = np.ones_like(x[0])
    for i in range(n):
        out = out * np.clip(1.0 - np.abs(x[i] - c[i]) / w[i], 0.0, None)
    return out, [(c[i] - w[i], c[i] + w[i]) for i in range(n)]


def _bump1d(r):
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _bump(x, prm, n):
    c, w = _vec(prm, "center", n, 0.0), _vec(prm, "width", n, 1.0)
    out = np.ones_like(x[0])
    for i in range(n):
        out = out * _bump1d(2.0 * (x[i] - c[i]) / w[i])
    return out, [(c[i] - w[i] / 2, c[i] + w[i] / 2) for i in range(n)]


def _indicator(x, prm, n):
    lo, hi = _vec(prm, "lo", n, 0.0), _vec(prm, "hi", n, 1.0)
    out = np.ones_like(x[0])
    for i in range(n):
        out = out * ((x[i] >= lo[i]) & (x[i] <= hi[i]))
    return out, list(zip(lo, hi))


def _sine(x, prm, n):
    lo, hi = _vec(prm, "lo", n, 0.0), _vec(prm, "hi", n, 1.0)
    k = _vec(prm, "modes", n, 1.0)
    out = np.ones_like(x[0])
    for i in range(n):
        t = (x[i] - lo[i]) / (hi[i] - lo[i])
        inside = (t >= 0.0) & (t <= 1.0)
        out = out * np.where(inside, np.sin(k[i] * np.pi * np.clip(t, 0.0, 1.0)), 0.0)
    return out, list(zip(lo, hi))


def _poly_bump(x, prm, n):
    base, support = _bump(x, prm, n)
    c = _vec(prm, "center", n, 0.0)
    coeffs = prm.get("coeffs", [[1.0]] * n)
    if len(coeffs) != n:
        raise ParameterError(f"poly_bump needs {n} coefficient lists")
    out = base
    for i in range(n):
        out = out * np.polynomial.polynomial.polyval(x[i] - c[i], np.asarray(coeffs[i], float))
    return out, support


def _zero(x, prm, n):
    return np.zeros_like(x[0]), None


EXPRESSIONS: dict[str, Callable] = {
    "zero": _zero,
    "tent": _tent,
    "bump": _bump,
    "indicator": _indicator,
    "sine": _sine,
    "poly_bump": _poly_bump,
}

_EXPRESSION_KEYS = {
    "zero": set(),
    "tent": {"center", "width"},
    "bump": {"center", "width"},
    "indicator": {"lo", "hi"},
    "sine": {"lo", "hi", "modes"},
    "poly_bump": {"center", "width", "coeffs"},
}


def expression_keys(kind: str) -> set[str]:
    """Parameter names accepted by a registered expression (plus ``amplitude``)."""
    if kind not in EXPRESSIONS:
        raise ParameterError(f"unknown expression kind {kind!r}; known: {sorted(EXPRESSIONS)}")
    return _EXPRESSION_KEYS[kind] | {"kind", "amplitude"}


def evaluate_expression(expression: Mapping[str, Any], points: Sequence[np.ndarray]):
    """Evaluate a registry expression at coordinate arrays; returns (values, support)."""
    kind = expression.get("kind")
    unknown = set(expression) - expression_keys(kind)
    if unknown:
        raise ParameterError(f"unknown keys for expression {kind!r}: {sorted(unknown)}")
    values, support = EXPRESSIONS[kind]([np.asarray(p, float) for p in points], expression, len(points))
    return float(expression.get("amplitude", 1.0)) * values, support


def sample(expression: Mapping[str, Any], spec: GridSpec) -> GridFunction:
    """Evaluate a registry expression at the cell centers of ``spec``.

    The expression's support must fit inside the non-margin region; otherwise
    :class:`SupportError` names the first offending axis.
    """
    values, support = evaluate_expression(expression, spec.mesh())
    if support is not None:
        dom = spec.domain()
        for axis, ((lo, hi), (a, b)) in enumerate(zip(support, dom)):
            tol = 1e-12 * spec.box_length(axis)
            if lo < a - tol or hi > b + tol:
                raise SupportError(
                    f"support [{lo:g}, {hi:g}] on axis {axis} exceeds the non-margin region [{a:g}, {b:g}]"
                )
    # margin nodes can sit on the support boundary, where closed forms such as
    # sin(pi) leave roundoff; the support check above already rules out more
    return GridFunction.masked(spec, values)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_grid_function(
    u: GridFunction, path: str | Path, fmt: str = "csv", precision: int = 12, meta: Mapping | None = None
) -> Path:
    """Write ``u`` with a one-line JSON header ``{dim, bounds, cells, margin}``.

    ``csv``: the header line is prefixed by ``#``; then a column line
    ``i0,...,i{n-1},value`` and one node per row in C (index-major) order.
    ``bin``: the JSON header line, then raw little-endian float64 values in C order.
    Entries of ``meta`` are added to the header and ignored on load.
    """
    path = Path(path)
    header = json.dumps({**(meta or {}), **u.spec.header()}, sort_keys=True)
    if fmt == "csv":
        idx = np.indices(u.spec.shape).reshape(u.spec.dim, -1).T
        vals = u.values.reshape(-1)
        lines = [f"# {header}", ",".join([f"i{k}" for k in range(u.spec.dim)] + ["value"])]
        lines += [
            ",".join(str(int(i)) for i in row) + f",{v:.{precision}e}" for row, v in zip(idx, vals)
        ]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(header.encode() + b"\n")
            fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())
    else:
        raise ParameterError(f"unknown format {fmt!r}")
    return path


def _spec_from_header(header: Mapping) -> GridSpec:
    spec = GridSpec(tuple(tuple(b) for b in header["bounds"]), tuple(header["cells"]), tuple(header["margin"]))
    if spec.dim != header["dim"]:
        raise GridMismatchError("header dim disagrees with bounds")
    return spec


def read_header(path: str | Path) -> dict:
    """The JSON header of a file written by :func:`save_grid_function`."""
    with open(path, "rb") as fh:
        first = fh.readline().rstrip(b"\n")
    return json.loads(first[1:] if first.startswith(b"#") else first)


def load_grid_function(path: str | Path) -> GridFunction:
    path = Path(path)
    raw = path.read_bytes()
    first, _, rest = raw.partition(b"\n")
    if first.startswith(b"#"):
        spec = _spec_from_header(json.loads(first[1:].decode()))
        rows = rest.decode().strip().splitlines()[1:]
        values = np.array([float(r.rsplit(",", 1)[1]) for r in rows])
    else:
        spec = _spec_from_header(json.loads(first.decode()))
        values = np.frombuffer(rest, dtype="<f8")
    return GridFunction(spec, values.reshape(spec.shape))
