"""Multi-start SLSQP search over a layout family.

Two stages per start:

1. minimize the objective on the continuous-level surrogate (smooth in T);
2. re-solve at the two integer level counts bracketing the result, with the
   constraint that the tree fits in that many levels. At an integer level
   count the surrogate equals the deployed model, and the deployed model is
   piecewise smooth between level changes, so this recovers the optima the
   surrogate's interpolation hides.

Candidates are compared on the exact (ceiled) model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .cost_model import LsmDesign, Policy, SystemParams, cost_terms, smooth_level_count
from .design_space import Bounds, DesignSpace
from .errors import SolverFailed

# (terms, extra variables) -> scalar to minimize
Scalarizer = Callable[[tuple, np.ndarray], float]
# exact design -> (objective, extra variables re-fitted at the design)
ExactObjective = Callable[[LsmDesign], tuple[float, np.ndarray]]

_FIT_MARGIN = 1e-9
_REFINE_TOP = 6


@dataclass(frozen=True)
class SolverOptions:
    starts: int = 16
    seed: int = 0
    ftol: float = 1e-10
    maxiter: int = 300
    warm_start: bool = True
    refine: bool = True


@dataclass
class Candidate:
    space: DesignSpace
    x: np.ndarray
    extra: np.ndarray
    design: LsmDesign
    objective: float
    success: bool
    nit: int


@dataclass(frozen=True)
class Extras:
    """Extra solver variables appended after the design vector (e.g. log lambda)."""

    x0: tuple[float, ...] = ()
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()


def unit_starts(n: int, dim: int, seed: int) -> np.ndarray:
    """Scrambled Sobol points in the unit cube; deterministic for a seed."""
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    m = max(0, math.ceil(math.log2(max(n, 1))))
    return sampler.random_base2(m)[:n]


def start_points(policy: Policy, sys: SystemParams, bounds: Bounds, n: int, seed: int,
                 m_filt_fixed: float | None = None) -> list[tuple[DesignSpace, np.ndarray]]:
    """(space, x0) pairs for one family.

    K-LSM starts use a uniform run-capacity fraction; the shape vector gets
    one entry per level of the starting tree.
    """
    probe = DesignSpace(policy, sys, bounds, n_shape=1, m_filt_fixed=m_filt_fixed)
    extra = 1 if policy is Policy.KLSM else probe.n_shape
    out = []
    for u in unit_starts(n, 2 + extra, seed):
        if policy is Policy.KLSM:
            levels = probe.shape_levels_at(u)
            space = DesignSpace(policy, sys, bounds, n_shape=levels, m_filt_fixed=m_filt_fixed)
            x0 = np.concatenate([probe.from_unit(u)[:2], np.full(levels, u[2])])
        else:
            space = probe
            x0 = probe.from_unit(u)
        out.append((space, space.clip(x0)))
    return out


def _slsqp(fun, x0, lower, upper, opts: SolverOptions, constraints=()):
    fixed = lower == upper
    free = ~fixed
    base = x0.copy()
    base[fixed] = lower[fixed]

    def full(z):
        x = base.copy()
        x[free] = z
        return x

    cons = [{"type": c["type"], "fun": (lambda z, f=c["fun"]: f(full(z)))} for c in constraints]
    res = minimize(
        lambda z: fun(full(z)),
        base[free],
        method="SLSQP",
        bounds=list(zip(lower[free], upper[free])),
        constraints=cons,
        options={"ftol": opts.ftol, "maxiter": opts.maxiter},
    )
    x = full(np.minimum(upper[free], np.maximum(lower[free], res.x)))
    # mode 8: line-search stall on the finite-difference gradient at a stationary point
    ok = bool(res.success or res.status == 8) and math.isfinite(float(res.fun))
    return x, ok, int(res.nit), float(res.fun)


def pick_best(cands: Sequence[Candidate]) -> Candidate:
    """Lowest objective; near-ties go to smaller T, then smaller filter memory."""
    finite = [c for c in cands if math.isfinite(c.objective)]
    if not finite:
        raise SolverFailed("no start produced a finite objective")
    best = min(c.objective for c in finite)
    tol = 1e-9 * max(1.0, abs(best))
    tied = [c for c in finite if c.objective <= best + tol]
    return min(tied, key=lambda c: (c.design.T, c.design.m_filt))


class FamilySearch:
    """Multi-start minimization of ``scalarize(cost terms, extras)`` over one family."""

    def __init__(self, policy: Policy, sys: SystemParams, bounds: Bounds, opts: SolverOptions,
                 scalarize: Scalarizer, exact: ExactObjective, extras: Extras = Extras(),
                 m_filt_fixed: float | None = None):
        self.policy = Policy(policy)
        self.sys = sys
        self.bounds = bounds
        self.opts = opts
        self.scalarize = scalarize
        self.exact = exact
        self.extras = extras
        self.m_filt_fixed = m_filt_fixed
        self.n_extra = len(extras.x0)

    def _split(self, xf: np.ndarray, space: DesignSpace):
        return xf[: space.dim], xf[space.dim:]

    def _box(self, space: DesignSpace):
        lo = np.concatenate([space.lower, np.array(self.extras.lower, dtype=float)])
        hi = np.concatenate([space.upper, np.array(self.extras.upper, dtype=float)])
        return lo, hi

    def _candidate(self, space, xf, ok, nit) -> Candidate:
        x, _ = self._split(xf, space)
        design = space.design(x)
        obj, extra = self.exact(design)
        return Candidate(space, x, extra, design, obj, ok, nit)

    def _surrogate_solve(self, space: DesignSpace, x0: np.ndarray):
        xf0 = np.concatenate([x0, np.array(self.extras.x0, dtype=float)])
        lo, hi = self._box(space)

        def fun(xf):
            x, e = self._split(xf, space)
            return self.scalarize(space.surrogate_terms(x), e)

        xf, ok, nit, val = _slsqp(fun, xf0, lo, hi, self.opts)
        return xf, ok, nit, val

    def _level_solve(self, space: DesignSpace, xf0: np.ndarray, levels: int):
        sys = self.sys
        lo, hi = self._box(space)
        log_data = lambda h: math.log(sys.N * sys.E / (sys.m - h * sys.N) + 1)  # noqa: E731
        T_need = math.exp(log_data(xf0[1]) / levels) * (1 + 1e-9)
        if T_need > hi[0]:
            return None
        start = xf0.copy()
        start[0] = max(start[0], T_need)

        def fun(xf):
            x, e = self._split(xf, space)
            T = float(x[0])
            m_filt = float(x[1]) * sys.N
            Ks = space._ks(x, T, levels)
            return self.scalarize(cost_terms(T, m_filt, Ks, sys, float(levels)), e)

        def fits(xf):
            return levels * math.log(xf[0]) - log_data(xf[1]) - _FIT_MARGIN

        xf, ok, nit, _ = _slsqp(fun, start, lo, hi, self.opts, [{"type": "ineq", "fun": fits}])
        if fits(xf) < -_FIT_MARGIN:
            return None
        return xf, ok, nit

    def run(self, warm: Sequence[LsmDesign] = ()) -> list[Candidate]:
        opts = self.opts
        starts = start_points(self.policy, self.sys, self.bounds, opts.starts, opts.seed,
                              self.m_filt_fixed)
        for d in warm:
            space = DesignSpace(self.policy, self.sys, self.bounds, n_shape=d.levels,
                                m_filt_fixed=self.m_filt_fixed)
            starts.append((space, space.encode(d)))

        stage1 = []
        for space, x0 in starts:
            xf, ok, nit, val = self._surrogate_solve(space, x0)
            stage1.append((val, space, xf, ok, nit))

        cands = [self._candidate(space, xf, ok, nit) for _, space, xf, ok, nit in stage1]
        if not opts.refine:
            return cands
        ranked = sorted((s for s in stage1 if s[3]), key=lambda s: s[0])[:_REFINE_TOP]
        for _, space, xf, _, _ in ranked:
            x, _ = self._split(xf, space)
            Ls = smooth_level_count(float(x[0]), self.sys, self.sys.m - float(x[1]) * self.sys.N)
            for levels in sorted({max(1, math.floor(Ls)), max(1, math.ceil(Ls - 1e-12))}):
                out = self._level_solve(space, xf, levels)
                if out is not None:
                    cands.append(self._candidate(space, *out))
        return cands
