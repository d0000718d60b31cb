"""Derivatives of the discrete energies and the source-law registry.

Everything here differentiates the discretized energy itself, so a solver that
drives :func:`energy_gradient` to zero minimizes exactly what
:func:`anisofrac.energy.total_energy` reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .core import (
    AnisoParams,
    GridFunction,
    GridMismatchError,
    GridSpec,
    ParameterError,
    aniso_summary,
    evaluate_expression,
)
from .energy import (
    DEFAULT_QUAD,
    QuadratureSpec,
    _check_axis,
    _check_params,
    _check_sp,
    _quadratic_matrix,
    lines,
    transverse_volume,
    unlines,
    use_fast_path,
)

EPS_SCALE = 1e-8


def default_eps(p: float, scale: float) -> float:
    """Regularization used for ``p < 2``: ``1e-8`` times the data scale."""
    return 0.0 if p >= 2.0 else EPS_SCALE * float(scale)


def resolve_eps(u: GridFunction, params: AnisoParams, eps=None) -> tuple[float, ...]:
    """Per-axis regularization. ``None`` picks :func:`default_eps` from ``max|u|``."""
    if eps is None:
        scale = u.max_abs()
        return tuple(default_eps(p, scale) for p in params.p)
    if np.isscalar(eps):
        return tuple(float(eps) for _ in params.p)
    return tuple(float(e) for e in eps)


def _live_columns(U):
    return np.any(U != 0.0, axis=0)


def gateaux_energy(
    u: GridFunction,
    v: GridFunction,
    axis: int,
    s: float,
    p: float,
    quad: QuadratureSpec | None = None,
    eps: float = 0.0,
) -> float:
    """``<(J^i_{s,p})'(u), v>``, the derivative of the discrete ``J^i`` at ``u`` along ``v``.

    Computed in forward mode, independently of :func:`energy_gradient`.
    """
    if v.spec != u.spec:
        raise GridMismatchError("u and v live on different grids")
    _check_axis(u, axis)
    _check_sp(s, p)
    quad = quad or DEFAULT_QUAD
    spec = u.spec
    dx = spec.spacing[axis]
    U, V = lines(u.values, axis), lines(v.values, axis)
    cols = _live_columns(U)
    U, V = U[:, cols], V[:, cols]
    if U.size == 0:
        return 0.0
    tvol = transverse_volume(spec, axis)
    if s == 1.0:
        return tvol * K.local_parts(U, dx, p, eps, V=V)[1]
    parts = K.fractional_parts(U, dx, s, p, quad.hgrid(spec, axis), eps, V=V)
    return tvol * parts.derivative


def directional_value_grad(
    values: np.ndarray,
    spec: GridSpec,
    axis: int,
    s: float,
    p: float,
    quad: QuadratureSpec,
    eps: float = 0.0,
) -> tuple[float, np.ndarray]:
    """``J^i`` and its gradient with respect to the nodal values (not Riesz-scaled)."""
    dx = spec.spacing[axis]
    tvol = transverse_volume(spec, axis)
    U = lines(values, axis)
    if s < 1.0 and use_fast_path(spec, axis, s, p, eps):
        AU = _quadratic_matrix(spec, axis, s, quad) @ U
        J = tvol * float(np.sum(U * AU))
        return J, unlines(2.0 * tvol * AU, spec.shape, axis)
    cols = _live_columns(U)
    G = np.zeros_like(U)
    if not np.any(cols):
        return 0.0, unlines(G, spec.shape, axis)
    Uc = U[:, cols]
    if s == 1.0:
        J, _, g = K.local_parts(Uc, dx, p, eps, want_grad=True)
    else:
        parts = K.fractional_parts(Uc, dx, s, p, quad.hgrid(spec, axis), eps, want_grad=True)
        J, g = parts.value, parts.grad
    G[:, cols] = g
    return tvol * J, unlines(tvol * G, spec.shape, axis)


def energy_value_grad(
    values: np.ndarray,
    spec: GridSpec,
    params: AnisoParams,
    quad: QuadratureSpec,
    eps: Sequence[float],
) -> tuple[tuple[float, ...], np.ndarray]:
    """Per-direction energies and the nodal gradient of ``J = sum J^i / p_i``."""
    per, grad = [], np.zeros(spec.shape)
    for i in range(params.dim):
        J, g = directional_value_grad(values, spec, i, params.s[i], params.p[i], quad, eps[i])
        per.append(J)
        grad += g / params.p[i]
    return tuple(per), grad


def energy_gradient(
    u: GridFunction,
    params: AnisoParams,
    quad: QuadratureSpec | None = None,
    eps=None,
) -> GridFunction:
    """Riesz representative of ``J_{s,p}'(u)`` on the non-margin region.

    ``sum(g * v) * cell_volume`` equals ``<J'(u), v>`` for every grid ``v``
    vanishing on the margin. With ``eps=None`` the regularization of
    :func:`default_eps` is applied to axes with ``p_i < 2``.
    """
    _check_params(u, params)
    quad = quad or DEFAULT_QUAD
    _, grad = energy_value_grad(u.values, u.spec, params, quad, resolve_eps(u, params, eps))
    return GridFunction.masked(u.spec, grad / u.spec.cell_volume)


# ---------------------------------------------------------------------------
# source laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonlinearityValue:
    f: Any
    F: Any


@dataclass(frozen=True)
class Nonlinearity:
    """Pure power law ``f(x, z) = a(x) |z|^(q-2) z`` with ``a(x) = amplitude + weight(x)``.

    ``weight`` is an optional registry expression that must be nonnegative, so
    ``a >= amplitude > 0``. For this family the Ambrosetti-Rabinowitz constant
    is ``mu = q`` with equality in ``mu F = z f``.
    """

    q: float
    kind: str = "power"
    amplitude: float = 1.0
    weight: Mapping[str, Any] | None = field(default=None, hash=False, compare=False)

    def __post_init__(self):
        if self.kind != "power":
            raise ParameterError(f"unknown nonlinearity kind {self.kind!r}; known: ['power']")
        if not (1.0 < self.q < math.inf):
            raise ParameterError(f"q outside (1,inf): {self.q}")
        if not self.amplitude > 0.0:
            raise ParameterError(f"amplitude must be positive, got {self.amplitude}")

    @property
    def mu(self) -> float:
        return float(self.q)

    def coefficient(self, points: Sequence[np.ndarray]) -> np.ndarray:
        base = np.full(np.shape(points[0]), float(self.amplitude))
        if self.weight is None:
            return base
        w, _ = evaluate_expression(self.weight, points)
        if np.any(w < 0.0):
            raise ParameterError("nonlinearity weight must be nonnegative")
        return base + w

    def growth_constant(self, spec: GridSpec) -> float:
        """``C`` with ``|f(x,z)| <= C (1 + |z|^(q-1))`` over the grid."""
        return float(np.max(self.coefficient(spec.mesh())))

    def check_against(self, params: AnisoParams):
        """Reject ``q <= p_max`` or ``q >= p*`` (when ``p*`` is defined)."""
        if not self.q > params.p_max:
            raise ParameterError(
                f"nonlinearity needs q > p_max for superlinear growth, got q={self.q}, p_max={params.p_max}"
            )
        summary = aniso_summary(params, strict=False)
        if summary.p_star is not None and not self.q < summary.p_star:
            raise ParameterError(
                f"nonlinearity needs subcritical q < p* = {summary.p_star:g}, got q={self.q}"
            )

    def on_grid(self, spec: GridSpec, values: np.ndarray) -> NonlinearityValue:
        a = self.coefficient(spec.mesh())
        az = np.abs(values)
        return NonlinearityValue(a * az ** (self.q - 2.0) * values, a * az**self.q / self.q)


def nonlinearity_eval(nl: Nonlinearity, x, z) -> NonlinearityValue:
    """``f(x, z)`` and its primitive ``F(x, z)`` at a point (or broadcast arrays)."""
    pts = [np.asarray(c, dtype=float) for c in np.atleast_1d(x)] if np.ndim(x) <= 1 else list(x)
    a = nl.coefficient(pts)
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    f = a * az ** (nl.q - 2.0) * z
    F = a * az**nl.q / nl.q
    if f.ndim == 0:
        return NonlinearityValue(float(f), float(F))
    return NonlinearityValue(f, F)


def source_term(source, u: GridFunction) -> np.ndarray:
    """Grid values of the right-hand side: a fixed ``f`` or ``f(x, u)``."""
    if isinstance(source, Nonlinearity):
        return np.where(u.spec.interior_mask(), source.on_grid(u.spec, u.values).f, 0.0)
    if isinstance(source, GridFunction):
        if source.spec != u.spec:
            raise GridMismatchError("source and u live on different grids")
        return source.values
    raise ParameterError(f"source must be a GridFunction or Nonlinearity, got {type(source).__name__}")


def residual(
    u: GridFunction,
    params: AnisoParams,
    source,
    quad: QuadratureSpec | None = None,
    eps=None,
) -> float:
    """Discrete ``L^2(Omega)`` norm of ``energy_gradient(u) - f``."""
    g = energy_gradient(u, params, quad, eps)
    r = np.where(u.spec.interior_mask(), g.values - source_term(source, u), 0.0)
    return math.sqrt(float(np.sum(r * r)) * u.spec.cell_volume)
