"""Energy minimization: Dirichlet problems and Nehari-manifold ground states.

Both solvers run Barzilai-Borwein steps with monotone Armijo backtracking on
grid functions that vanish on the margin. Inner products are weighted by the
cell volume, so gradients are the Riesz representatives of
:mod:`anisofrac.operator`.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import AnisoParams, GridFunction, GridSpec, ParameterError, aniso_summary
from .energy import DEFAULT_QUAD, EnergyBreakdown, QuadratureSpec, directional_parts, total_energy
from .operator import Nonlinearity, default_eps, energy_value_grad

NEHARI_BRACKET = (1e-12, 1e12)
COLLAPSE_FLOOR = 1e-10
ROUNDOFF = 1e-12


class SolverFailure(RuntimeError):
    """The iteration left the admissible set (for example collapsed to zero)."""


@dataclass(frozen=True)
class SolveOptions:
    """Iteration controls.

    ``step_rule`` is ``"bb"`` (Barzilai-Borwein with Armijo backtracking) or
    ``"fixed"`` (constant ``step`` with the same backtracking safeguard).
    ``init`` selects the Dirichlet starting guess (``"zero"`` or ``"random"``);
    ``init_width`` is the ground-state bump width as a fraction of the domain
    and ``perturbation`` the relative size of the seeded noise added to it.
    """

    max_iter: int = 5000
    grad_tol: float = 1e-8
    step_rule: str = "bb"
    armijo: float = 1e-4
    seed: int = 0
    step: float | None = None
    init: str = "zero"
    init_width: float = 0.8
    perturbation: float = 0.0

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")
        if not (0.0 < self.armijo < 1.0):
            raise ParameterError(f"armijo must lie in (0,1), got {self.armijo}")
        if not self.grad_tol > 0.0:
            raise ParameterError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.step_rule not in ("bb", "fixed"):
            raise ParameterError(f"step_rule must be 'bb' or 'fixed', got {self.step_rule!r}")
        if self.step_rule == "fixed" and not (self.step and self.step > 0.0):
            raise ParameterError("step_rule 'fixed' needs a positive step")
        if self.init not in ("zero", "random"):
            raise ParameterError(f"init must be 'zero' or 'random', got {self.init!r}")
        if not (0.0 < self.init_width <= 1.0):
            raise ParameterError(f"init_width must lie in (0,1], got {self.init_width}")


@dataclass
class SolveResult:
    u: GridFunction
    energy: float
    residual: float
    iterations: int
    converged: bool
    metadata: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


@dataclass
class GroundStateResult:
    u: GridFunction
    level: float
    nehari_residual: float
    energy_parts: EnergyBreakdown
    converged: bool
    residual: float = math.nan
    iterations: int = 0
    metadata: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def _fixed_eps(params: AnisoParams, scale: float) -> tuple[float, ...]:
    return tuple(default_eps(p, scale) for p in params.p)


class _Problem:
    """``I(x) = J(x) - <source term>`` on margin-free grid arrays."""

    def __init__(self, spec, params, quad, eps, f=None, nl=None):
        self.spec, self.params, self.quad, self.eps = spec, params, quad, eps
        self.vol = spec.cell_volume
        self.mask = spec.interior_mask()
        self.f = None if f is None else f.values
        self.nl = nl
        if nl is not None:
            self.a = nl.coefficient(spec.mesh())
        self.evals = 0

    def inner(self, a, b) -> float:
        return float(np.sum(a * b)) * self.vol

    def directional(self, x) -> tuple[float, ...]:
        self.evals += 1
        u = GridFunction(self.spec, x)
        return tuple(
            float(sum(directional_parts(u, i, self.params.s[i], self.params.p[i], self.quad, self.eps[i])))
            for i in range(self.params.dim)
        )

    def nonlinear_mass(self, x) -> float:
        """``int a |x|^q``, which is both ``int f(x,u) u`` and ``q int F(x,u)``."""
        return float(np.sum(self.a * np.abs(x) ** self.nl.q)) * self.vol

    def value_from(self, per, x) -> float:
        J = sum(Ji / p for Ji, p in zip(per, self.params.p))
        if self.nl is not None:
            return J - self.nonlinear_mass(x) / self.nl.q
        return J - self.inner(self.f, x)

    def value(self, x) -> float:
        return self.value_from(self.directional(x), x)

    def grad(self, x) -> np.ndarray:
        self.evals += 1
        _, g = energy_value_grad(x, self.spec, self.params, self.quad, self.eps)
        g = g / self.vol
        if self.nl is not None:
            g = g - self.a * np.abs(x) ** (self.nl.q - 2.0) * x
        else:
            g = g - self.f
        return np.where(self.mask, g, 0.0)


def _bb_descent(prob: _Problem, x, opts: SolveOptions, project=None):
    """Monotone Armijo descent with Barzilai-Borwein trial steps.

    ``project(y) -> (x_new, value)`` maps a trial point back to the feasible set
    and reports the objective there; without it the objective is ``prob.value``.
    """
    if project is None:
        def project(y):
            return y, prob.value(y)

    x, I = project(x)
    g = prob.grad(x)
    gn0 = math.sqrt(prob.inner(g, g))
    history = [I]
    if gn0 == 0.0:
        return x, I, g, 0, True, history, gn0
    if opts.step_rule == "fixed":
        alpha = float(opts.step)
    else:
        tau = 1e-3 * max(math.sqrt(prob.inner(x, x)), 1.0) / gn0
        y = prob.grad(x - tau * g) - g
        sy = prob.inner(-tau * g, y)
        alpha = tau * tau * gn0 * gn0 / sy if sy > 0.0 else tau
    gn = gn0
    converged = False
    it = 0
    for it in range(1, int(opts.max_iter) + 1):
        if gn <= opts.grad_tol * gn0:
            converged = True
            it -= 1
            break
        slope = gn * gn
        a = alpha
        accepted = None
        noise = ROUNDOFF * abs(I)
        for _ in range(80):
            xt, It = project(x - a * g)
            if It <= I - opts.armijo * a * slope:
                accepted = (xt, It, None)
                break
            if abs(It - I) <= noise and np.any(xt != x):
                # energy differences are below roundoff: the step is kept when the
                # new gradient still has a positive component along the old one,
                # i.e. the line minimum has not been overshot
                gt = prob.grad(xt)
                if prob.inner(gt, g) > 0.0:
                    accepted = (xt, It, gt)
                    break
            a *= 0.5
        if accepted is None:
            break
        xt, It, gt = accepted
        if gt is None:
            gt = prob.grad(xt)
        s = xt - x
        yv = gt - g
        sy = prob.inner(s, yv)
        if opts.step_rule == "fixed":
            alpha = float(opts.step)
        elif sy > 0.0:
            alpha = prob.inner(s, s) / sy
        else:
            alpha = 2.0 * a
        x, I, g = xt, It, gt
        history.append(I)
        gn = math.sqrt(prob.inner(g, g))
    else:
        converged = gn <= opts.grad_tol * gn0
    return x, I, g, it, converged, history, gn0


def _check_dirichlet(params: AnisoParams, spec: GridSpec):
    summary = aniso_summary(params, spec, strict=False)
    if summary.p_star is not None and not params.p_max < summary.p_star:
        raise ParameterError(
            f"Dirichlet problem needs p_max < p* (p_max={params.p_max:g}, p*={summary.p_star:g})"
        )


def solve_dirichlet(
    f: GridFunction,
    params: AnisoParams,
    quad: QuadratureSpec | None = None,
    opts: SolveOptions | None = None,
) -> SolveResult:
    """Minimize ``I(v) = J_{s,p}(v) - int f v`` over grid functions vanishing outside Omega.

    Examples
    --------
    >>> from anisofrac.core import GridSpec
    >>> g = GridSpec.from_domain([(0.0, 1.0)], 8)
    >>> r = solve_dirichlet(GridFunction.zeros(g), AnisoParams((1.0,), (2.0,)))
    >>> r.converged, r.energy
    (True, 0.0)
    """
    quad = quad or DEFAULT_QUAD
    opts = opts or SolveOptions()
    spec = f.spec
    if params.dim != spec.dim:
        raise ParameterError(f"params have dimension {params.dim}, grid has {spec.dim}")
    _check_dirichlet(params, spec)
    eps = _fixed_eps(params, max(f.max_abs(), 1.0))
    prob = _Problem(spec, params, quad, eps, f=f)
    if opts.init == "random":
        rng = np.random.default_rng(opts.seed)
        x0 = np.where(prob.mask, rng.standard_normal(spec.shape), 0.0) * max(f.max_abs(), 1.0)
    else:
        x0 = np.zeros(spec.shape)
    t0 = time.perf_counter()
    x, I, g, it, converged, history, gn0 = _bb_descent(prob, x0, opts)
    u = GridFunction(spec, x)
    res = math.sqrt(prob.inner(g, g))
    meta = {
        "eps": list(eps),
        "quadrature": asdict(quad),
        "options": asdict(opts),
        "initial_grad_norm": gn0,
        "evaluations": prob.evals,
        "seconds": time.perf_counter() - t0,
    }
    return SolveResult(u, I, res, it, converged, meta, history)


# ---------------------------------------------------------------------------
# Nehari manifold
# ---------------------------------------------------------------------------

def _scale_root(per, p, q, B) -> float:
    per = np.asarray(per, dtype=float)
    p = np.asarray(p, dtype=float)
    A = float(np.sum(per))
    if not A > 0.0 or not B > 0.0:
        raise ParameterError("Nehari scaling needs positive energy and positive nonlinear mass")
    if np.all(p == p[0]):
        return (A / B) ** (1.0 / (q - p[0]))
    live = per > 0.0

    def phi(tau):
        return math.log(float(np.sum(per[live] * np.exp((p[live] - q) * tau)))) - math.log(B)

    lo, hi = (math.log(b) for b in NEHARI_BRACKET)
    if phi(lo) < 0.0 or phi(hi) > 0.0:
        raise ParameterError("Nehari root not bracketed in [1e-12, 1e12]; check q against p")
    return math.exp(brentq(phi, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))


def nehari_scale(
    u: GridFunction,
    params: AnisoParams,
    nl: Nonlinearity,
    quad: QuadratureSpec | None = None,
) -> float:
    """The unique ``t > 0`` with ``t u`` on the Nehari manifold.

    Solves ``sum_i t^(p_i - 1) J^i(u) = int f(x, t u) u``; for the power law the
    right side is ``t^(q-1) int a |u|^q``. Closed form when all ``p_i`` agree.
    """
    if u.max_abs() == 0.0:
        raise ParameterError("Nehari scaling of the zero function is undefined")
    nl.check_against(params)
    quad = quad or DEFAULT_QUAD
    eps = _fixed_eps(params, u.max_abs())
    prob = _Problem(u.spec, params, quad, eps, nl=nl)
    return _scale_root(prob.directional(u.values), params.p, nl.q, prob.nonlinear_mass(u.values))


def initial_bump(spec: GridSpec, width: float = 0.8, perturbation: float = 0.0, seed: int = 0) -> GridFunction:
    """Centered positive tensor bump on Omega, optionally with seeded relative noise."""
    from .core import sample

    dom = spec.domain()
    center = [0.5 * (a + b) for a, b in dom]
    widths = [width * (b - a) for a, b in dom]
    u = sample({"kind": "bump", "center": center, "width": widths}, spec)
    vals = u.values / u.max_abs()
    if perturbation > 0.0:
        rng = np.random.default_rng(seed)
        vals = vals * (1.0 + perturbation * rng.uniform(-1.0, 1.0, spec.shape))
    return GridFunction(spec, vals)


def ground_state(
    spec: GridSpec,
    params: AnisoParams,
    nl: Nonlinearity,
    quad: QuadratureSpec | None = None,
    opts: SolveOptions | None = None,
    init: GridFunction | None = None,
    nehari_tol: float = 1e-8,
) -> GroundStateResult:
    """Nehari-projected descent from a positive bump.

    Each step moves along the gradient of ``I`` and rescales onto the manifold;
    Armijo is applied to ``I`` at the projected point. On the manifold the
    gradient of ``I`` equals that of ``v -> I(t(v) v)``, so the stopping test
    certifies a constrained critical point, not a global minimizer.
    """
    quad = quad or DEFAULT_QUAD
    opts = opts or SolveOptions(grad_tol=1e-6)
    if params.dim != spec.dim:
        raise ParameterError(f"params have dimension {params.dim}, grid has {spec.dim}")
    nl.check_against(params)
    if init is None:
        init = initial_bump(spec, opts.init_width, opts.perturbation, opts.seed)
    eps = _fixed_eps(params, 1.0)
    prob = _Problem(spec, params, quad, eps, nl=nl)
    p = params.p
    q = nl.q

    def project(y):
        if math.sqrt(prob.inner(y, y)) < COLLAPSE_FLOOR:
            raise SolverFailure("ground-state iterate collapsed to zero")
        per = prob.directional(y)
        B = prob.nonlinear_mass(y)
        t = _scale_root(per, p, q, B)
        value = sum(t**pi * Ji / pi for Ji, pi in zip(per, p)) - t**q * B / q
        return t * y, value

    t0 = time.perf_counter()
    x, I, g, it, converged, history, gn0 = _bb_descent(prob, init.values, opts, project)
    u = GridFunction(spec, x)
    parts = total_energy(u, params, quad, eps)
    per = prob.directional(x)
    fu = prob.nonlinear_mass(x)
    neh = abs(sum(per) - fu)
    scale = max(sum(per), np.finfo(float).tiny)
    level = prob.value_from(per, x)
    ok = converged and level > 0.0 and neh <= nehari_tol * scale
    meta = {
        "eps": list(eps),
        "quadrature": asdict(quad),
        "options": asdict(opts),
        "initial_grad_norm": gn0,
        "evaluations": prob.evals,
        "seconds": time.perf_counter() - t0,
        "nehari_scale": scale,
    }
    return GroundStateResult(
        u, level, neh, parts, ok, math.sqrt(prob.inner(g, g)), it, meta, history
    )
