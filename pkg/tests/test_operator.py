import math

import numpy as np
import pytest

from anisofrac.core import AnisoParams, GridFunction, GridMismatchError, GridSpec, ParameterError
from anisofrac.energy import directional_energy, total_energy
from anisofrac.experiments import random_function
from anisofrac.operator import (
    Nonlinearity,
    default_eps,
    energy_gradient,
    gateaux_energy,
    nonlinearity_eval,
    resolve_eps,
    residual,
    source_term,
)

GRID = GridSpec.from_domain([(-1.0, 1.0), (-1.0, 1.0)], (12, 10), margin=2)


def pair(seed):
    rng = np.random.default_rng(seed)
    return random_function(GRID, rng), random_function(GRID, rng)


@pytest.mark.parametrize("p", [2.0, 3.0])
@pytest.mark.parametrize("s", [0.3, 1.0])
@pytest.mark.parametrize("axis", [0, 1])
def test_gateaux_matches_central_difference(p, s, axis):
    u, v = pair(5)
    d = 1e-5
    fd = (directional_energy(u + v * d, axis, s, p) - directional_energy(u - v * d, axis, s, p)) / (2 * d)
    assert gateaux_energy(u, v, axis, s, p) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("s", [0.3, 0.7, 1.0])
def test_regularized_p_below_two(s):
    u, v = pair(9)
    eps, d = 1e-6, 1e-5
    fd = (directional_energy(u + v * d, 0, s, 1.5, eps=eps) - directional_energy(u - v * d, 0, s, 1.5, eps=eps)) / (2 * d)
    assert gateaux_energy(u, v, 0, s, 1.5, eps=eps) == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("p", [(2.0, 2.0), (1.5, 3.0), (3.0, 2.0)])
@pytest.mark.parametrize("s", [(0.3, 0.7), (1.0, 0.6)])
def test_gradient_is_riesz_representative_of_gateaux(p, s):
    u, v = pair(17)
    P = AnisoParams(s, p)
    eps = resolve_eps(u, P)
    g = energy_gradient(u, P, eps=eps)
    forward = sum(gateaux_energy(u, v, i, s[i], p[i], eps=eps[i]) / p[i] for i in range(2))
    assert g.inner(v) == pytest.approx(forward, rel=1e-12)


def test_gradient_is_linear_for_p2():
    u, w = pair(2)
    P = AnisoParams((0.4, 1.0), (2.0, 2.0))
    lhs = energy_gradient(u + w * 3.0, P)
    rhs = energy_gradient(u, P) + energy_gradient(w, P) * 3.0
    assert np.allclose(lhs.values, rhs.values, rtol=1e-12, atol=1e-12 * rhs.max_abs())


def test_fast_and_general_gradients_agree():
    from anisofrac.operator import directional_value_grad
    from anisofrac.energy import DEFAULT_QUAD

    u, _ = pair(3)
    J1, g1 = directional_value_grad(u.values, GRID, 0, 0.45, 2.0, DEFAULT_QUAD, 0.0)
    J2, g2 = directional_value_grad(u.values, GRID, 0, 0.45, 2.0, DEFAULT_QUAD, 1e-300)
    assert J1 == pytest.approx(J2, rel=1e-12)
    assert np.allclose(g1, g2, rtol=1e-10, atol=1e-12 * np.abs(g1).max())


def test_gradient_vanishes_on_margin_and_for_zero():
    u, _ = pair(4)
    P = AnisoParams((0.5, 0.5), (2.0, 2.0))
    g = energy_gradient(u, P)
    assert np.all(g.values[~GRID.interior_mask()] == 0.0)
    assert energy_gradient(GridFunction.zeros(GRID), P).max_abs() == 0.0


def test_euler_identity():
    # <J^i'(u), u> = p J^i(u) by p-homogeneity
    u, _ = pair(8)
    for p in (1.5, 2.0, 3.0):
        assert gateaux_energy(u, u, 1, 0.6, p) == pytest.approx(p * directional_energy(u, 1, 0.6, p), rel=1e-11)


def test_default_eps():
    assert default_eps(2.0, 5.0) == 0.0
    assert default_eps(1.5, 5.0) == pytest.approx(5e-8)
    u, _ = pair(1)
    assert resolve_eps(u, AnisoParams((0.5, 0.5), (1.5, 3.0)), 0.1) == (0.1, 0.1)


def test_grid_mismatch():
    u, _ = pair(1)
    other = GridFunction.zeros(GridSpec.from_domain([(-1.0, 1.0), (-1.0, 1.0)], 8, margin=2))
    with pytest.raises(GridMismatchError):
        gateaux_energy(u, other, 0, 0.5, 2.0)


def test_nonlinearity_checks():
    with pytest.raises(ParameterError):
        Nonlinearity(4.0, kind="exp")
    with pytest.raises(ParameterError):
        Nonlinearity(1.0)
    nl = Nonlinearity(4.0)
    assert nl.mu == 4.0
    P = AnisoParams((1.0, 0.6), (2.0, 2.0))  # p* = 8
    nl.check_against(P)
    with pytest.raises(ParameterError, match="p_max"):
        Nonlinearity(2.0).check_against(P)
    with pytest.raises(ParameterError, match="p\\*"):
        Nonlinearity(8.0).check_against(P)


def test_nonlinearity_values_and_structure():
    nl = Nonlinearity(3.0, amplitude=2.0)
    val = nonlinearity_eval(nl, [0.1, 0.2], -1.5)
    assert val.f == pytest.approx(2.0 * 1.5 * -1.5)
    assert val.F == pytest.approx(2.0 * 1.5**3 / 3)
    z = np.linspace(-2, 2, 9)
    arr = nonlinearity_eval(nl, [np.zeros(9), np.zeros(9)], z)
    # mu F = z f with mu = q
    assert np.allclose(nl.mu * arr.F, z * arr.f)


def test_weighted_nonlinearity():
    w = {"kind": "bump", "center": [0.0, 0.0], "width": 1.0}
    nl = Nonlinearity(3.0, weight=w)
    # tensor bump peaks at e^-1 per axis
    assert nl.growth_constant(GRID) == pytest.approx(1.0 + math.exp(-2.0), rel=1e-12)
    with pytest.raises(ParameterError, match="nonnegative"):
        Nonlinearity(3.0, weight={**w, "amplitude": -1.0}).coefficient(GRID.mesh())


def test_source_term_and_residual():
    g = GridSpec.from_domain([(0.0, 1.0)], 16)
    x = g.centers(0)
    # discrete minimizer of (1/2) int |u'|^2 - int f u with f = 1 is the nodal parabola
    u = GridFunction.masked(g, x * (1 - x) / 2)
    f = GridFunction.masked(g, np.ones(g.shape))
    P = AnisoParams((1.0,), (2.0,))
    assert residual(u, P, f) < 1e-12
    assert residual(GridFunction.zeros(g), P, f) == pytest.approx(math.sqrt(15 / 16))
    assert np.array_equal(source_term(f, u), f.values)
    with pytest.raises(ParameterError):
        source_term(1.0, u)
    nl = Nonlinearity(3.0)
    assert np.allclose(source_term(nl, u)[1:-1], (u.values**2)[1:-1])


def test_energy_gradient_shape_checks():
    u, _ = pair(1)
    with pytest.raises(GridMismatchError):
        energy_gradient(u, AnisoParams((0.5,), (2.0,)))
    assert total_energy(u, AnisoParams((0.5, 0.5), (2.0, 2.0))).total > 0
