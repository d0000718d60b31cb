"""Array kernels for one-axis difference energies.

Every function here works on a 2-D array ``U`` of shape ``(N, M)``: ``N`` nodes
along the shift axis and ``M`` independent transverse lines. Along the shift
axis a line is the piecewise-linear interpolant of its nodes, extended by zero
one cell beyond each end. Nothing in this module knows about grids, transverse
volumes or parameter validation.

Most kernels take an optional direction ``V`` (same shape as ``U``) and an
optional ``want_grad`` flag. The first returns the directional derivative of the
computed quantity along ``V`` (forward mode); the second returns the full
gradient with respect to ``U`` (reverse mode). Both are exact derivatives of the
discrete formulas, which lets tests compare two independent implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_TAYLOR_SWITCH = 1e-2
_GL4_T, _GL4_W = np.polynomial.legendre.leggauss(4)
_GL4_T = 0.5 * (_GL4_T + 1.0)
_GL4_W = 0.5 * _GL4_W


def segment(a, b, p: float, eps: float = 0.0, grad: bool = False):
    """``S(a, b) = int_0^1 psi(a + (b - a) t) dt`` with ``psi = |.|^p``.

    With ``eps > 0`` the density is ``(t^2 + eps^2)^(p/2) - eps^p`` and the
    integral is taken with 4-point Gauss-Legendre. Returns ``S`` or
    ``(S, dS/da, dS/db)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if eps > 0.0:
        return _segment_eps(a, b, p, eps, grad)
    if p == 2.0:
        S = (a * a + a * b + b * b) / 3.0
        if not grad:
            return S
        return S, (2.0 * a + b) / 3.0, (a + 2.0 * b) / 3.0

    d = b - a
    scale = np.abs(a) + np.abs(b)
    small = np.abs(d) <= _TAYLOR_SWITCH * scale
    dsafe = np.where(small, 1.0, d)
    Pa, Pb = np.abs(a) ** p, np.abs(b) ** p
    S = (Pb * b - Pa * a) / ((p + 1.0) * dsafe)

    m = 0.5 * (a + b)
    am = np.abs(m)
    live = small & (am > 0.0)
    amsafe = np.where(live, am, 1.0)
    c2 = p * (p - 1.0) / 24.0
    c4 = p * (p - 1.0) * (p - 2.0) * (p - 3.0) / 1920.0
    r = np.where(live, d / amsafe, 0.0)
    base = amsafe**p
    St = base * (1.0 + c2 * r**2 + c4 * r**4)
    S = np.where(small, np.where(live, St, 0.0), S)
    if not grad:
        return S

    Sa = (S - Pa) / dsafe
    Sb = (Pb - S) / dsafe
    sgn = np.sign(m)
    # derivatives of the even expansion with respect to the midpoint and the gap
    S_m = sgn * base / amsafe * (p + c2 * (p - 2.0) * r**2 + c4 * (p - 4.0) * r**4)
    S_d = base / amsafe * (2.0 * c2 * r + 4.0 * c4 * r**3)
    Sa = np.where(small, np.where(live, 0.5 * S_m - S_d, 0.0), Sa)
    Sb = np.where(small, np.where(live, 0.5 * S_m + S_d, 0.0), Sb)
    return S, Sa, Sb


def _segment_eps(a, b, p, eps, grad):
    # exact homogeneous part plus a Gauss-Legendre correction for psi_eps - |z|^p,
    # which is bounded by eps^p, so the subdivision of a segment barely matters
    t = _GL4_T.reshape((4,) + (1,) * a.ndim)
    w = _GL4_W.reshape((4,) + (1,) * a.ndim)
    z = a + (b - a) * t
    q = z * z + eps * eps
    az = np.abs(z)
    corr = np.sum(w * (q ** (0.5 * p) - eps**p - az**p), axis=0)
    if not grad:
        return segment(a, b, p) + corr
    S, Sa, Sb = segment(a, b, p, grad=True)
    dcorr = w * p * (q ** (0.5 * p - 1.0) * z - az ** (p - 1.0) * np.sign(z))
    return S + corr, Sa + np.sum(dcorr * (1.0 - t), axis=0), Sb + np.sum(dcorr * t, axis=0)


def density(z, p: float, eps: float = 0.0, grad: bool = False):
    """Pointwise ``psi(z)`` and optionally ``psi'(z)``."""
    z = np.asarray(z, dtype=np.float64)
    if eps > 0.0:
        q = z * z + eps * eps
        val = q ** (0.5 * p) - eps**p
        return (val, p * q ** (0.5 * p - 1.0) * z) if grad else val
    az = np.abs(z)
    val = az**p
    if not grad:
        return val
    return val, p * az ** (p - 1.0) * np.sign(z)


def _pad(U, lo, hi):
    out = np.zeros((U.shape[0] + lo + hi,) + U.shape[1:])
    out[lo : lo + U.shape[0]] = U
    return out


# ---------------------------------------------------------------------------
# interpolated L^p mass, slopes, near-field coefficients
# ---------------------------------------------------------------------------

def line_mass(U, dx, p, eps=0.0, V=None, want_grad=False):
    """``P = int |u|^p`` of the interpolant; returns ``(P, dP[V], gradP)``."""
    E = _pad(U, 1, 1)
    if V is None and not want_grad:
        return dx * float(np.sum(segment(E[:-1], E[1:], p, eps))), None, None
    S, Sa, Sb = segment(E[:-1], E[1:], p, eps, grad=True)
    P = dx * float(np.sum(S))
    dP = None
    if V is not None:
        W = _pad(V, 1, 1)
        dP = dx * float(np.sum(Sa * W[:-1] + Sb * W[1:]))
    g = None
    if want_grad:
        gE = np.zeros_like(E)
        gE[:-1] += dx * Sa
        gE[1:] += dx * Sb
        g = gE[1:-1]
    return P, dP, g


def slopes(U, dx):
    """Padded slope array: zero, the ``N + 1`` interpolant slopes, zero."""
    E = _pad(U, 1, 1)
    return _pad(np.diff(E, axis=0) / dx, 1, 1)


def _slopes_adjoint(G, dx):
    """Transpose of :func:`slopes` applied to a cotangent ``G`` of its shape."""
    G = G[1:-1] / dx
    return G[:-1] - G[1:]


def near_coefficients(U, dx, p, V=None, want_grad=False):
    """``F(h) = c h^p - e h^(p+1)`` for ``0 <= h <= dx``.

    Returns ``(c, e, (dc, de), (gc, ge))`` where the middle pair is the
    derivative along ``V`` and the last pair the gradients (``None`` if not
    requested). The near field always uses the homogeneous density.
    """
    sig = slopes(U, dx)
    need = V is not None or want_grad
    if need:
        A, Ad = density(sig, p, grad=True)
        S, Sa, Sb = segment(sig[:-1], sig[1:], p, grad=True)
    else:
        A = density(sig, p)
        S = segment(sig[:-1], sig[1:], p)
    sumA = float(np.sum(A))
    c = dx * sumA
    e = sumA - float(np.sum(S))
    dirs = grads = None
    if V is not None:
        tau = slopes(V, dx)
        dA = float(np.sum(Ad * tau))
        dS = float(np.sum(Sa * tau[:-1] + Sb * tau[1:]))
        dirs = (dx * dA, dA - dS)
    if want_grad:
        gS = np.zeros_like(sig)
        gS[:-1] += Sa
        gS[1:] += Sb
        grads = (_slopes_adjoint(dx * Ad, dx), _slopes_adjoint(Ad - gS, dx))
    return c, e, dirs, grads


# ---------------------------------------------------------------------------
# difference profile F(h)
# ---------------------------------------------------------------------------

def profile(U, dx, h, p, eps=0.0, V=None, want_grad=False):
    """``F(h) = int |u(x + h) - u(x)|^p dx`` summed over the lines of ``U``.

    Exact under the piecewise-linear model: the difference is piecewise linear
    in ``x`` with breakpoints at nodes and at nodes shifted by ``h``, so each
    piece is a :func:`segment` integral. Returns ``(F, dF[V], gradF)``.
    """
    h = abs(float(h))
    N = U.shape[0]
    if h == 0.0:
        z = np.zeros_like(U) if want_grad else None
        return 0.0, (0.0 if V is not None else None), z
    m = int(math.floor(h / dx))
    theta = h / dx - m
    if m >= N + 1:
        P, dP, gP = line_mass(U, dx, p, eps, V, want_grad)
        return 2.0 * P, (2.0 * dP if dP is not None else None), (2.0 * gP if gP is not None else None)

    L = N + m + 3
    o = m + 2
    E = _pad(U, o, m + 2)
    d1 = (1.0 - theta) * E[m : m + L] + theta * E[m + 1 : m + 1 + L] - E[0:L]
    d2 = E[m + 1 : m + 1 + L] - theta * E[0:L] - (1.0 - theta) * E[1 : 1 + L]
    wa, wb = (1.0 - theta) * dx, theta * dx
    need = V is not None or want_grad
    if need:
        SA, SaA, SbA = segment(d1[:-1], d2[:-1], p, eps, grad=True)
        SB, SaB, SbB = segment(d2[:-1], d1[1:], p, eps, grad=True)
    else:
        SA = segment(d1[:-1], d2[:-1], p, eps)
        SB = segment(d2[:-1], d1[1:], p, eps)
    F = wa * float(np.sum(SA)) + wb * float(np.sum(SB))
    dF = g = None
    if V is not None:
        W = _pad(V, o, m + 2)
        v1 = (1.0 - theta) * W[m : m + L] + theta * W[m + 1 : m + 1 + L] - W[0:L]
        v2 = W[m + 1 : m + 1 + L] - theta * W[0:L] - (1.0 - theta) * W[1 : 1 + L]
        dF = wa * float(np.sum(SaA * v1[:-1] + SbA * v2[:-1])) + wb * float(
            np.sum(SaB * v2[:-1] + SbB * v1[1:])
        )
    if want_grad:
        g1 = np.zeros_like(d1)
        g2 = np.zeros_like(d2)
        g1[:-1] += wa * SaA
        g2[:-1] += wa * SbA + wb * SaB
        g1[1:] += wb * SbB
        gE = np.zeros_like(E)
        gE[m : m + L] += (1.0 - theta) * g1
        gE[m + 1 : m + 1 + L] += theta * g1 + g2
        gE[0:L] -= g1 + theta * g2
        gE[1 : 1 + L] -= (1.0 - theta) * g2
        g = gE[o : o + N]
    return F, dF, g


# ---------------------------------------------------------------------------
# h-integral assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HGrid:
    h0: float
    H: float
    nodes: np.ndarray
    base_weights: np.ndarray

    def weights(self, sp: float) -> np.ndarray:
        return self.base_weights * self.nodes ** (-1.0 - sp)


@lru_cache(maxsize=256)
def hgrid(h0: float, H: float, ratio: float, per_interval: int) -> HGrid:
    """Geometric partition of ``[h0, H]`` with Gauss-Legendre nodes per piece."""
    if H <= h0:
        return HGrid(h0, H, np.zeros(0), np.zeros(0))
    k = max(1, int(math.ceil(math.log(H / h0) / math.log(ratio) - 1e-12)))
    edges = h0 * (H / h0) ** (np.arange(k + 1) / k)
    edges[-1] = H
    t, w = np.polynomial.legendre.leggauss(per_interval)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (hi - lo) * t + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return HGrid(h0, H, nodes, weights)


@dataclass
class Parts:
    near: float
    mid: float
    tail: float
    d_near: float | None = None
    d_mid: float | None = None
    d_tail: float | None = None
    grad: np.ndarray | None = None

    @property
    def value(self) -> float:
        return self.near + self.mid + self.tail

    @property
    def derivative(self) -> float | None:
        if self.d_near is None:
            return None
        return self.d_near + self.d_mid + self.d_tail


def trim(U):
    """Drop all-zero lines and all-zero rows outside the support along axis 0."""
    live_cols = np.any(U != 0.0, axis=0)
    U = U[:, live_cols]
    rows = np.flatnonzero(np.any(U != 0.0, axis=1))
    if rows.size == 0:
        return U[:0]
    return U[rows[0] : rows[-1] + 1]


def fractional_parts(U, dx, s, p, grid: HGrid, eps=0.0, V=None, want_grad=False) -> Parts:
    """``2 s (1 - s) int_0^inf F(h) h^(-1-sp) dh`` split as near/mid/tail.

    ``grid.h0`` must not exceed ``dx`` so the near-field closed form is exact.
    """
    pref = 2.0 * s * (1.0 - s)
    sp = s * p
    alpha = p - sp
    h0, H = grid.h0, grid.H
    c, e, dce, gce = near_coefficients(U, dx, p, V, want_grad)
    kn1 = h0**alpha / alpha
    kn2 = h0 ** (alpha + 1.0) / (alpha + 1.0)
    near = pref * (c * kn1 - e * kn2)
    P, dP, gP = line_mass(U, dx, p, eps, V, want_grad)
    kt = 2.0 * H ** (-sp) / sp
    tail = pref * kt * P

    w = grid.weights(sp)
    mid = 0.0
    d_mid = 0.0 if V is not None else None
    g = None
    if want_grad:
        g = pref * (kn1 * gce[0] - kn2 * gce[1] + kt * gP)
    for hk, wk in zip(grid.nodes, w):
        F, dF, gF = profile(U, dx, hk, p, eps, V, want_grad)
        mid += wk * F
        if V is not None:
            d_mid += wk * dF
        if want_grad:
            g += (pref * wk) * gF
    parts = Parts(near, pref * mid, tail, grad=g)
    if V is not None:
        parts.d_near = pref * (dce[0] * kn1 - dce[1] * kn2)
        parts.d_mid = pref * d_mid
        parts.d_tail = pref * kt * dP
    return parts


def fractional_profile_table(U, dx, p, grid: HGrid, eps=0.0):
    """Everything the h-integral needs, independent of ``s``: ``(c, e, F_k, P)``."""
    c, e, _, _ = near_coefficients(U, dx, p)
    P, _, _ = line_mass(U, dx, p, eps)
    F = np.array([profile(U, dx, hk, p, eps)[0] for hk in grid.nodes])
    return c, e, F, P


def parts_from_table(table, s, p, grid: HGrid) -> tuple[float, float, float]:
    c, e, F, P = table
    pref = 2.0 * s * (1.0 - s)
    sp = s * p
    alpha = p - sp
    near = pref * (c * grid.h0**alpha / alpha - e * grid.h0 ** (alpha + 1.0) / (alpha + 1.0))
    mid = pref * float(np.dot(grid.weights(sp), F))
    tail = pref * 2.0 * P * grid.H ** (-sp) / sp
    return near, mid, tail


def local_parts(U, dx, p, eps=0.0, V=None, want_grad=False):
    """``(2/p) int psi(u')``: value, derivative along ``V``, gradient."""
    sig = slopes(U, dx)
    need = V is not None or want_grad
    if need:
        A, Ad = density(sig, p, eps, grad=True)
    else:
        A = density(sig, p, eps)
    val = (2.0 / p) * dx * float(np.sum(A))
    d = g = None
    if V is not None:
        d = (2.0 / p) * dx * float(np.sum(Ad * slopes(V, dx)))
    if want_grad:
        g = (2.0 / p) * _slopes_adjoint(dx * Ad, dx)
    return val, d, g


@lru_cache(maxsize=64)
def quadratic_stencil(N: int, dx: float, s: float, grid: HGrid) -> np.ndarray:
    """First column ``a`` of the Toeplitz matrix with ``line energy = u^T A u`` at ``p = 2``."""
    n2 = 2 * N - 1
    delta = np.zeros((n2, 1))
    delta[N - 1, 0] = 1.0
    parts = fractional_parts(delta, dx, s, 2.0, grid, want_grad=True)
    col = 0.5 * parts.grad[N - 1 :, 0]
    col.setflags(write=False)
    return col
