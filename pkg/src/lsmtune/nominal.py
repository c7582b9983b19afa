"""Nominal tuning: minimize the expected cost for one known workload."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cost_model import LsmDesign, Policy, SystemParams, Workload, cost_vector, total_cost
from .design_space import Bounds
from .errors import InfeasibleBounds, SolverFailed
from .search import Candidate, FamilySearch, SolverOptions, pick_best

log = logging.getLogger(__name__)

ROUNDING_BAND = 0.15
# leveling vs tiering, the choice the classical tuners make
CLASSIC = (Policy.LEVELING, Policy.TIERING)
# K-LSM is warm-started from these families' optima (all are K-LSM points)
WARM_FAMILIES = (Policy.LEVELING, Policy.TIERING, Policy.LAZY_LEVELING, Policy.FLUID)

__all__ = [
    "CLASSIC",
    "SolverOptions",
    "SolverStatus",
    "TuningProblem",
    "TuningResult",
    "solve_nominal",
    "solve_nominal_fixed_memory",
]


@dataclass(frozen=True)
class TuningProblem:
    expected_workload: Workload
    sys: SystemParams
    family: Policy | tuple[Policy, ...] = Policy.KLSM
    bounds: Bounds = field(default_factory=Bounds)
    options: SolverOptions = field(default_factory=SolverOptions)

    def families(self) -> tuple[Policy, ...]:
        if isinstance(self.family, (Policy, str)):
            return (Policy(self.family),)
        return tuple(Policy(f) for f in self.family)


@dataclass(frozen=True)
class SolverStatus:
    converged: bool
    iterations: int
    starts: int
    converged_starts: int


@dataclass(frozen=True)
class TuningResult:
    design: LsmDesign
    deployed_design: LsmDesign
    objective: float
    deployed_objective: float
    solver_status: SolverStatus

    @property
    def rounding_gap(self) -> float:
        return self.deployed_objective / self.objective - 1.0

    @property
    def rounding_flagged(self) -> bool:
        return abs(self.rounding_gap) > ROUNDING_BAND


def _search(problem: TuningProblem, policy: Policy, m_filt_fixed: float | None = None):
    w = problem.expected_workload.as_array()
    wl = problem.expected_workload
    sys = problem.sys

    def scalarize(terms, _extra):
        return float(np.dot(w, terms))

    def exact(design):
        return total_cost(wl, design, sys), np.empty(0)

    return FamilySearch(policy, sys, problem.bounds, problem.options, scalarize, exact,
                        m_filt_fixed=m_filt_fixed)


def family_candidates(problem: TuningProblem, policy: Policy,
                      m_filt_fixed: float | None = None) -> list[Candidate]:
    warm: list[LsmDesign] = []
    if policy is Policy.KLSM and problem.options.warm_start and m_filt_fixed is None:
        for sub in WARM_FAMILIES:
            sub_c = [c for c in _search(problem, sub).run() if c.success]
            if sub_c:
                warm.append(pick_best(sub_c).design)
    return _search(problem, policy, m_filt_fixed).run(warm)


def finish(problem: TuningProblem, cands: list[Candidate]) -> TuningResult:
    converged = [c for c in cands if c.success]
    if not converged:
        raise SolverFailed(f"none of {len(cands)} starts converged")
    best = pick_best(converged)
    deployed = best.space.deploy(best.x)
    status = SolverStatus(True, sum(c.nit for c in cands), len(cands), len(converged))
    result = TuningResult(
        design=best.design,
        deployed_design=deployed,
        objective=best.objective,
        deployed_objective=total_cost(problem.expected_workload, deployed, problem.sys),
        solver_status=status,
    )
    if result.rounding_flagged:
        log.warning("deployed objective is %.1f%% off the continuous one", 100 * result.rounding_gap)
    return result


def solve_nominal(problem: TuningProblem) -> TuningResult:
    """Best design for the expected workload over every requested family."""
    problem.bounds.resolve(problem.sys)
    cands: list[Candidate] = []
    for policy in problem.families():
        cands.extend(family_candidates(problem, policy))
    return finish(problem, cands)


def solve_nominal_fixed_memory(problem: TuningProblem, m_filt_fixed: float | None,
                               m_buf_fixed: float) -> TuningResult:
    """Fluid-layout tuning of T and run capacities with the memory split pinned.

    ``m_filt_fixed`` defaults to whatever the pinned buffer leaves over. The
    buffer must hold at least one entry and leave some memory for filters.
    """
    sys = problem.sys
    if m_filt_fixed is None:
        m_filt_fixed = sys.m - m_buf_fixed
    if not (sys.E <= m_buf_fixed < sys.m) or m_filt_fixed < 0:
        raise InfeasibleBounds(f"buffer of {m_buf_fixed} bits cannot be pinned with m={sys.m}")
    if abs(m_filt_fixed + m_buf_fixed - sys.m) > 1e-9 * sys.m:
        raise InfeasibleBounds("pinned filter and buffer memory must add up to the budget")
    problem.bounds.resolve(sys)
    return finish(problem, family_candidates(problem, Policy.FLUID, m_filt_fixed=m_filt_fixed))


def cost_of(result: TuningResult, sys: SystemParams):
    return cost_vector(result.design, sys)
