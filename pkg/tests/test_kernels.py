import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from anisofrac import _kernels as K


def _brute_segment(a, b, p, eps=0.0):
    psi = (lambda z: (z * z + eps * eps) ** (p / 2) - eps**p) if eps else (lambda z: abs(z) ** p)
    pts = [-a / (b - a)] if a * b < 0 else None
    return quad(lambda t: psi(a + (b - a) * t), 0.0, 1.0, points=pts, epsabs=1e-14, epsrel=1e-12)[0]


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([1.5, 2.0, 3.0, 1.2, 4.5]))
def test_segment_matches_quadrature(a, b, p):
    S = float(K.segment(a, b, p))
    assert S == pytest.approx(_brute_segment(a, b, p), rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("a,b", [(1.0, 1.0 + 1e-9), (0.3, 0.3), (-0.2, 0.5), (0.0, 0.0)])
def test_segment_near_degenerate(a, b):
    for p in (1.5, 3.0):
        assert float(K.segment(a, b, p)) == pytest.approx(_brute_segment(a, b, p) if a != b else abs(a) ** p, rel=1e-10, abs=1e-15)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("eps", [0.0, 1e-2])
def test_segment_gradient_matches_differences(p, eps):
    a, b, d = 0.37, -0.81, 1e-6
    _, da, db = K.segment(a, b, p, eps, grad=True)
    fa = (K.segment(a + d, b, p, eps) - K.segment(a - d, b, p, eps)) / (2 * d)
    fb = (K.segment(a, b + d, p, eps) - K.segment(a, b - d, p, eps)) / (2 * d)
    assert float(da) == pytest.approx(float(fa), rel=1e-7)
    assert float(db) == pytest.approx(float(fb), rel=1e-7)


@pytest.mark.parametrize("p", [1.5, 3.0])
@pytest.mark.parametrize("eps", [0.05, 1e-2, 1e-4, 1e-8])
def test_regularized_segment_matches_quadrature(p, eps):
    # the eps correction uses 4 Gauss-Legendre points; its error stays below the
    # size of the regularization itself
    for a, b in [(0.0, 1.0), (-0.4, 0.7), (2.0, 2.5)]:
        err = abs(float(K.segment(a, b, p, eps)) - _brute_segment(a, b, p, eps))
        assert err <= eps ** min(p, 2.0) + 1e-14


def _interp_line(u, dx):
    """Piecewise-linear interpolant of one line, zero beyond one cell past each end."""
    x = np.arange(-1, len(u) + 1) * dx
    v = np.concatenate([[0.0], u, [0.0]])
    return lambda t: np.interp(t, x, v, left=0.0, right=0.0), x


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("h", [0.13, 0.5, 1.0, 2.71, 9.0])
def test_profile_matches_direct_integration(p, h):
    rng = np.random.default_rng(7)
    dx = 0.5
    u = rng.standard_normal(8)
    f, x = _interp_line(u, dx)
    pts = np.unique(np.concatenate([x, x - h]))
    brute = quad(lambda t: abs(f(t + h) - f(t)) ** p, x[0] - h - 1, x[-1] + 1, points=pts, limit=400, epsabs=1e-13)[0]
    F, _, _ = K.profile(u[:, None], dx, h, p)
    assert F == pytest.approx(brute, rel=1e-8)


def test_profile_far_shift_is_twice_the_mass():
    rng = np.random.default_rng(3)
    U = rng.standard_normal((6, 3))
    P, _, _ = K.line_mass(U, 0.25, 3.0)
    F, _, _ = K.profile(U, 0.25, 50.0, 3.0)
    assert F == pytest.approx(2 * P, rel=1e-14)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_profile_forward_and_reverse_agree(p):
    rng = np.random.default_rng(11)
    U, V = rng.standard_normal((9, 4)), rng.standard_normal((9, 4))
    _, dF, _ = K.profile(U, 0.3, 0.77, p, V=V)
    _, _, gF = K.profile(U, 0.3, 0.77, p, want_grad=True)
    assert dF == pytest.approx(float(np.sum(gF * V)), rel=1e-12)


def test_hgrid_is_geometric_and_cached():
    g = K.hgrid(0.1, 2.0, 1.05, 3)
    assert g is K.hgrid(0.1, 2.0, 1.05, 3)
    assert g.h0 == 0.1 and g.H == 2.0
    assert np.all(np.diff(g.nodes) > 0)
    assert g.nodes[0] > 0.1 and g.nodes[-1] < 2.0


@pytest.mark.parametrize("s,p", [(0.3, 2.0), (0.7, 1.5), (0.5, 3.0)])
def test_mid_weights_integrate_the_kernel_exactly(s, p):
    # sum of weights ~ int_{h0}^{H} h^(-1-sp) dh
    g = K.hgrid(0.05, 4.0, 1.05, 3)
    sp = s * p
    exact = (g.h0 ** (-sp) - g.H ** (-sp)) / sp
    assert float(np.sum(g.weights(sp))) == pytest.approx(exact, rel=1e-10)
