"""Directional fractional energies and the transforms used by the lemma audits.

For ``s < 1`` the directional energy along axis ``i`` is

    J^i(u) = s (1 - s) int int |u(x + h e_i) - u(x)|^p |h|^(-1-sp) dh dx
           = 2 s (1 - s) int_0^inf F_i(h) h^(-1-sp) dh,

with ``F_i`` the difference profile. The h-integral is split into a near field
``[0, h0]`` (closed form, exact for piecewise-linear data), a mid field on a
geometric grid with Gauss-Legendre nodes, and an analytic tail ``[H, inf)`` on
which the shifted copies have disjoint supports. At ``s = 1`` the energy is
``(2/p) int |d_i u|^p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import AnisoParams, GridFunction, GridMismatchError, ParameterError

FAST_P2_MAX_CELLS = 1024


@dataclass(frozen=True)
class QuadratureSpec:
    """Controls for the singular h-integral.

    Parameters
    ----------
    near_cut : float
        Near-field cutoff as a multiple of the axis spacing, in ``(0, 1]``.
    ratio : float
        Growth factor of the geometric mid-field grid.
    nodes_per_interval : int
        Gauss-Legendre nodes on every mid-field interval.
    tail_cut : float or None
        Start ``H`` of the analytic tail. ``None`` means twice the box length of
        the axis, which always exceeds the support diameter.
    """

    near_cut: float = 1.0
    ratio: float = 1.05
    nodes_per_interval: int = 3
    tail_cut: float | None = None

    def __post_init__(self):
        if not (0.0 < self.near_cut <= 1.0):
            raise ParameterError(f"near_cut must lie in (0, 1], got {self.near_cut}")
        if not self.ratio > 1.0:
            raise ParameterError(f"ratio must exceed 1, got {self.ratio}")
        if int(self.nodes_per_interval) < 1:
            raise ParameterError("nodes_per_interval must be >= 1")
        if self.tail_cut is not None and not self.tail_cut > 0.0:
            raise ParameterError(f"tail_cut must be positive, got {self.tail_cut}")

    def refined(self) -> "QuadratureSpec":
        """Same spec with the mid-field grid density doubled."""
        return QuadratureSpec(self.near_cut, math.sqrt(self.ratio), self.nodes_per_interval, self.tail_cut)

    def hgrid(self, spec, axis: int) -> K.HGrid:
        dx = spec.spacing[axis]
        h0 = self.near_cut * dx
        H = 2.0 * spec.box_length(axis) if self.tail_cut is None else float(self.tail_cut)
        if H <= h0:
            raise ParameterError(f"tail_cut {H} must exceed near_cut * spacing = {h0}")
        return K.hgrid(h0, H, float(self.ratio), int(self.nodes_per_interval))


DEFAULT_QUAD = QuadratureSpec()


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-direction energies with their near/mid/tail split.

    ``total`` is ``sum(per_direction[i] / p[i])``. For an ``s_i = 1`` axis the
    whole value is reported as near field.
    """

    per_direction: tuple[float, ...]
    total: float
    near: tuple[float, ...]
    mid: tuple[float, ...]
    tail: tuple[float, ...]


def _check_sp(s: float, p: float):
    if not (0.0 < s <= 1.0):
        raise ParameterError(f"s outside (0,1]: {s}")
    if not (1.0 < p < math.inf):
        raise ParameterError(f"p outside (1,inf): {p}")


def _check_axis(u: GridFunction, axis: int):
    if not (0 <= axis < u.spec.dim):
        raise ParameterError(f"axis {axis} out of range for a {u.spec.dim}-D grid")


def lines(values: np.ndarray, axis: int) -> np.ndarray:
    """View ``values`` as ``(N_axis, M)`` lines along ``axis``."""
    moved = np.moveaxis(values, axis, 0)
    return moved.reshape(moved.shape[0], -1)


def unlines(U: np.ndarray, shape: tuple[int, ...], axis: int) -> np.ndarray:
    moved_shape = (shape[axis],) + tuple(n for k, n in enumerate(shape) if k != axis)
    return np.moveaxis(U.reshape(moved_shape), 0, axis)


def transverse_volume(spec, axis: int) -> float:
    return float(np.prod([d for k, d in enumerate(spec.spacing) if k != axis]))


def use_fast_path(spec, axis: int, s: float, p: float, eps: float) -> bool:
    return p == 2.0 and eps == 0.0 and s < 1.0 and spec.cells[axis] <= FAST_P2_MAX_CELLS


def _quadratic_matrix(spec, axis: int, s: float, quad: QuadratureSpec) -> np.ndarray:
    from scipy.linalg import toeplitz

    col = K.quadratic_stencil(spec.cells[axis], spec.spacing[axis], float(s), quad.hgrid(spec, axis))
    return toeplitz(col)


def difference_profile(u: GridFunction, axis: int, h: float, p: float, eps: float = 0.0) -> float:
    """``F_i(h) = int |u(x + h e_i) - u(x)|^p dx``, exact under the interpolation model.

    Symmetric in ``h``; ``F_i(0) = 0``.
    """
    _check_axis(u, axis)
    if not p > 1.0:
        raise ParameterError(f"p outside (1,inf): {p}")
    U = K.trim(lines(u.values, axis))
    if U.size == 0:
        return 0.0
    F, _, _ = K.profile(U, u.spec.spacing[axis], h, p, eps)
    return F * transverse_volume(u.spec, axis)


def directional_parts(
    u: GridFunction,
    axis: int,
    s: float,
    p: float,
    quad: QuadratureSpec | None = None,
    eps: float = 0.0,
    fast: bool = True,
) -> tuple[float, float, float]:
    """``(near, mid, tail)`` contributions to ``J^i_{s,p}(u)``; they sum to the energy."""
    _check_axis(u, axis)
    _check_sp(s, p)
    quad = quad or DEFAULT_QUAD
    spec = u.spec
    dx = spec.spacing[axis]
    tvol = transverse_volume(spec, axis)
    if s == 1.0:
        U = K.trim(lines(u.values, axis))
        if U.size == 0:
            return 0.0, 0.0, 0.0
        return tvol * K.local_parts(U, dx, p, eps)[0], 0.0, 0.0

    grid = quad.hgrid(spec, axis)
    if fast and use_fast_path(spec, axis, s, p, eps):
        U = lines(u.values, axis)
        total = tvol * float(np.sum(U * (_quadratic_matrix(spec, axis, s, quad) @ U)))
        Ut = K.trim(U)
        if Ut.size == 0:
            return 0.0, 0.0, 0.0
        near, _, tail = _near_tail(Ut, dx, s, p, grid, eps)
        return tvol * near, total - tvol * (near + tail), tvol * tail

    U = K.trim(lines(u.values, axis))
    if U.size == 0:
        return 0.0, 0.0, 0.0
    parts = K.fractional_parts(U, dx, s, p, grid, eps)
    return tvol * parts.near, tvol * parts.mid, tvol * parts.tail


def _near_tail(U, dx, s, p, grid, eps):
    empty = K.HGrid(grid.h0, grid.H, np.zeros(0), np.zeros(0))
    parts = K.fractional_parts(U, dx, s, p, empty, eps)
    return parts.near, 0.0, parts.tail


def directional_energy(
    u: GridFunction,
    axis: int,
    s: float,
    p: float,
    quad: QuadratureSpec | None = None,
    eps: float = 0.0,
) -> float:
    """``J^i_{s,p}(u)`` for ``s`` in ``(0, 1]``.

    Examples
    --------
    >>> from anisofrac.core import GridSpec, sample
    >>> g = GridSpec(((-2.05, 2.05),), (41,), 1)  # nodes at the kinks: exact
    >>> u = sample({"kind": "tent", "width": [1.0]}, g)
    >>> round(directional_energy(u, 0, 1.0, 2.0), 12)
    2.0
    """
    return float(sum(directional_parts(u, axis, s, p, quad, eps)))


def directional_energy_sweep(
    u: GridFunction,
    axis: int,
    p: float,
    s_values,
    quad: QuadratureSpec | None = None,
    eps: float = 0.0,
) -> list[tuple[float, float, float]]:
    """``(near, mid, tail)`` for several ``s`` sharing one set of profile evaluations.

    The mid-field nodes do not depend on ``s``, so ``F_i`` is evaluated once and
    reweighted. Values agree with :func:`directional_parts` on the general path.
    """
    _check_axis(u, axis)
    quad = quad or DEFAULT_QUAD
    spec = u.spec
    dx = spec.spacing[axis]
    tvol = transverse_volume(spec, axis)
    U = K.trim(lines(u.values, axis))
    s_values = [float(s) for s in s_values]
    for s in s_values:
        _check_sp(s, p)
    if U.size == 0:
        return [(0.0, 0.0, 0.0) for _ in s_values]
    out = []
    table = None
    grid = quad.hgrid(spec, axis)
    for s in s_values:
        if s == 1.0:
            out.append((tvol * K.local_parts(U, dx, p, eps)[0], 0.0, 0.0))
            continue
        if table is None:
            table = K.fractional_profile_table(U, dx, p, grid, eps)
        near, mid, tail = K.parts_from_table(table, s, p, grid)
        out.append((tvol * near, tvol * mid, tvol * tail))
    return out


def _check_params(u: GridFunction, params: AnisoParams):
    if params.dim != u.spec.dim:
        raise GridMismatchError(f"params have dimension {params.dim}, function has {u.spec.dim}")


def total_energy(
    u: GridFunction,
    params: AnisoParams,
    quad: QuadratureSpec | None = None,
    eps: float = 0.0,
) -> EnergyBreakdown:
    """All directional energies and ``J_{s,p}(u) = sum_i J^i(u) / p_i``.

    ``eps`` is a scalar or one regularization per axis.
    """
    _check_params(u, params)
    eps = [float(eps)] * params.dim if np.isscalar(eps) else [float(e) for e in eps]
    parts = [directional_parts(u, i, params.s[i], params.p[i], quad, eps[i]) for i in range(params.dim)]
    per = tuple(float(sum(pt)) for pt in parts)
    total = float(sum(J / p for J, p in zip(per, params.p)))
    return EnergyBreakdown(
        per,
        total,
        tuple(pt[0] for pt in parts),
        tuple(pt[1] for pt in parts),
        tuple(pt[2] for pt in parts),
    )


def slope_norm(u: GridFunction, axis: int, p: float) -> float:
    """``||d_i u||_p^p`` from the interpolant slopes (forward differences)."""
    _check_axis(u, axis)
    U = lines(u.values, axis)
    return transverse_volume(u.spec, axis) * u.spec.spacing[axis] * float(
        np.sum(np.abs(K.slopes(U, u.spec.spacing[axis])) ** p)
    )


def mollify(u: GridFunction, radius: int) -> GridFunction:
    """Convolve with the tensor triangular kernel of integer cell ``radius``.

    The 1-D weights are ``(radius + 1 - |k|) / (radius + 1)^2`` for
    ``|k| <= radius``: nonnegative, symmetric and of unit mass. The result is
    a convex combination of integer translates of ``u``, which is what makes
    the energy decrease exact in the discrete model.
    """
    radius = int(radius)
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    spec = u.spec
    for axis, m in enumerate(spec.margin):
        if radius > m:
            raise ParameterError(f"radius {radius} exceeds margin {m} on axis {axis}")
    k = np.arange(-radius, radius + 1)
    w = (radius + 1.0 - np.abs(k)) / (radius + 1.0) ** 2
    out = u.values
    for axis in range(spec.dim):
        out = np.apply_along_axis(lambda line: np.convolve(line, w, mode="same"), axis, out)
    mask = spec.interior_mask()
    if np.any(out[~mask] != 0.0):
        raise ParameterError("mollified support would reach the margin; use a smaller radius")
    return GridFunction(spec, np.where(mask, out, 0.0))


def truncate(u: GridFunction, k: float) -> GridFunction:
    """Multiply by the radial cutoff ``clamp(2 - |x|/k, 0, 1)``."""
    if not k > 0.0:
        raise ParameterError(f"k must be positive, got {k}")
    r = np.sqrt(sum(x * x for x in u.spec.mesh()))
    eta = np.clip(2.0 - r / k, 0.0, 1.0)
    return GridFunction(u.spec, u.values * eta)
