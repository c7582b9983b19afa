"""Robust tuning over a KL-divergence ball of workloads.

The worst-case expected cost ``max {w_hat . c : KL(w_hat, w) <= rho}`` is
replaced by its Lagrangian dual

    g(lam, eta) = eta + rho * lam + lam * sum_i w_i * phi*((c_i - eta) / lam)

with ``phi*(s) = exp(s) - 1``. For fixed ``lam`` the minimizing ``eta`` has the
closed form ``lam * log(sum_i w_i exp(c_i / lam))``, which leaves
``g = lam * (rho + logsumexp(c / lam; w))``. The solver works on that
profile, so no exponential is ever evaluated outside a log-sum-exp.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .cost_model import CostVector, LsmDesign, Policy, SystemParams, Workload, cost_vector
from .design_space import Bounds
from .errors import DivergenceInfinite, EmptyHistory, InvalidRegion, SolverFailed
from .nominal import (
    WARM_FAMILIES,
    SolverStatus,
    TuningProblem,
    solve_nominal,
)
from .search import Candidate, Extras, FamilySearch, SolverOptions, pick_best

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e8
RHO_EPSILON = 1e-6
EXP_CLIP = 30.0


@dataclass(frozen=True)
class UncertaintyRegion:
    center: Workload
    rho: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho >= 0):
            raise InvalidRegion(f"rho must be finite and >= 0, got {self.rho}")
        if self.rho > 0 and min(self.center.as_tuple()) <= 0:
            raise InvalidRegion("center must be strictly positive when rho > 0")


@dataclass(frozen=True)
class RobustResult:
    design: LsmDesign
    lam: float
    eta: float
    dual_objective: float
    deployed_design: LsmDesign
    deployed_dual_objective: float
    solver_status: SolverStatus
    delegated: bool = False


def _as_array(p) -> np.ndarray:
    if isinstance(p, Workload):
        return p.as_array()
    return np.asarray(p, dtype=float)


def kl_divergence(p, q) -> float:
    """sum p_i ln(p_i / q_i), with 0 ln 0 = 0."""
    p = _as_array(p)
    q = _as_array(q)
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise DivergenceInfinite("q vanishes where p has mass")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kl_divergence_many(P: np.ndarray, q) -> np.ndarray:
    """Row-wise KL(P[j], q) for a matrix of workloads."""
    P = np.asarray(P, dtype=float)
    q = _as_array(q)
    if np.any((P > 0) & (q <= 0)[None, :]):
        raise DivergenceInfinite("q vanishes where some row has mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0) / np.where(q > 0, q, 1.0)), 0.0)
    return terms.sum(axis=1)


def kl_conjugate(s):
    """Convex conjugate of t ln t - t + 1: exp(s) - 1."""
    return np.expm1(s) if isinstance(s, np.ndarray) else math.expm1(s)


def _guarded_conjugate(s: np.ndarray) -> np.ndarray:
    # linear continuation past the clip keeps the value finite and the slope positive
    clipped = np.minimum(s, EXP_CLIP)
    return np.expm1(clipped) + math.exp(EXP_CLIP) * np.maximum(s - EXP_CLIP, 0.0)


def dual_value(costs, lam: float, eta: float, center, rho: float) -> float:
    c = _as_array(costs.as_tuple() if isinstance(costs, CostVector) else costs)
    w = _as_array(center)
    return float(eta + rho * lam + lam * np.dot(w, _guarded_conjugate((c - eta) / lam)))


def dual_objective(design: LsmDesign, lam: float, eta: float, region: UncertaintyRegion,
                   sys: SystemParams) -> float:
    """g(lam, eta) for the design's cost vector and the region's center."""
    if lam < LAMBDA_MIN:
        raise ValueError(f"lambda must be >= {LAMBDA_MIN}")
    return dual_value(cost_vector(design, sys), lam, eta, region.center, region.rho)


def optimal_eta(costs, lam: float, center) -> float:
    c = _as_array(costs.as_tuple() if isinstance(costs, CostVector) else costs)
    return float(lam * logsumexp(c / lam, b=_as_array(center)))


def profiled_dual(costs, lam: float, center, rho: float) -> float:
    """min over eta of g(lam, eta)."""
    return optimal_eta(costs, lam, center) + rho * lam


def minimize_dual(costs, center, rho: float) -> tuple[float, float, float]:
    """(lam, eta, g) minimizing the dual for a fixed cost vector."""
    c = _as_array(costs.as_tuple() if isinstance(costs, CostVector) else costs)
    w = _as_array(center)

    def f(t):
        return profiled_dual(c, math.exp(t), w, rho)

    lo, hi = math.log(LAMBDA_MIN), math.log(LAMBDA_MAX)
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    best_t, best = float(res.x), float(res.fun)
    for t in (lo, hi):
        v = f(t)
        if v < best:
            best_t, best = t, v
    lam = math.exp(best_t)
    return lam, optimal_eta(c, lam, w), best


def worst_case_cost(costs, center, rho: float) -> float:
    return minimize_dual(costs, center, rho)[2]


def _search(region: UncertaintyRegion, sys: SystemParams, policy: Policy, bounds: Bounds,
            opts: SolverOptions) -> FamilySearch:
    w = region.center.as_array()
    rho = region.rho

    def scalarize(terms, extra):
        lam = math.exp(float(extra[0]))
        return float(lam * (rho + logsumexp(np.asarray(terms) / lam, b=w)))

    def exact(design):
        lam, _, g = minimize_dual(cost_vector(design, sys), w, rho)
        return g, np.array([math.log(lam)])

    extras = Extras(x0=(0.0,), lower=(math.log(LAMBDA_MIN),), upper=(math.log(LAMBDA_MAX),))
    return FamilySearch(policy, sys, bounds, opts, scalarize, exact, extras)


def _result(best: Candidate, cands: Sequence[Candidate], region: UncertaintyRegion,
            sys: SystemParams, delegated: bool = False) -> RobustResult:
    costs = cost_vector(best.design, sys)
    lam, eta, g = minimize_dual(costs, region.center, region.rho)
    deployed = best.space.deploy(best.x)
    dep_g = minimize_dual(cost_vector(deployed, sys), region.center, region.rho)[2]
    status = SolverStatus(True, sum(c.nit for c in cands), len(cands),
                          sum(1 for c in cands if c.success))
    return RobustResult(best.design, lam, eta, g, deployed, dep_g, status, delegated)


def solve_robust(
    region: UncertaintyRegion,
    sys: SystemParams,
    family: Policy | tuple[Policy, ...] = Policy.KLSM,
    bounds: Bounds | None = None,
    options: SolverOptions | None = None,
) -> RobustResult:
    """Design minimizing the worst-case expected cost over the KL ball."""
    bounds = bounds or Bounds()
    options = options or SolverOptions()
    bounds.resolve(sys)
    families = (Policy(family),) if isinstance(family, (Policy, str)) else tuple(map(Policy, family))

    if region.rho < RHO_EPSILON:
        nominal = solve_nominal(TuningProblem(region.center, sys, families, bounds, options))
        costs = cost_vector(nominal.design, sys)
        lam, eta, g = minimize_dual(costs, region.center, region.rho)
        dep_g = minimize_dual(cost_vector(nominal.deployed_design, sys), region.center,
                              region.rho)[2]
        return RobustResult(nominal.design, lam, eta, g, nominal.deployed_design, dep_g,
                            nominal.solver_status, delegated=True)

    cands: list[Candidate] = []
    for policy in families:
        warm = []
        if policy is Policy.KLSM and options.warm_start:
            for sub in WARM_FAMILIES:
                sub_c = [c for c in _search(region, sys, sub, bounds, options).run() if c.success]
                if sub_c:
                    warm.append(pick_best(sub_c).design)
        cands.extend(_search(region, sys, policy, bounds, options).run(warm))
    converged = [c for c in cands if c.success]
    if not converged:
        raise SolverFailed(f"none of {len(cands)} robust starts converged")
    return _result(pick_best(converged), cands, region, sys)


def rho_from_history(history: Sequence[Workload] | np.ndarray) -> float:
    """Largest divergence of any historical workload from their mean."""
    P = np.array([_as_array(h) for h in history], dtype=float) if len(history) else np.empty((0, 4))
    if P.shape[0] == 0:
        raise EmptyHistory("history must contain at least one workload")
    mean = P.mean(axis=0)
    return float(max(0.0, kl_divergence_many(P, mean).max()))


def rho_from_pair(w_expected: Workload, w_offperiod: Workload) -> float:
    """Divergence of an off-period workload from the expected one."""
    return kl_divergence(w_offperiod, w_expected)
