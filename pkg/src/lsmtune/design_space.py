"""Mapping between solver vectors and LSM designs for each layout family.

A solver vector is ``[T, bits_per_entry, *shape]`` where ``shape`` holds
fractions ``u`` in [0, 1] that map to run capacities ``K = 1 + u (T - 2)``,
so every point of the box satisfies ``1 <= K <= T - 1`` without extra
constraints. K-LSM shape vectors are anchored at the bottom level: entry 0 is
the deepest level, and levels beyond the vector's length inherit its last
entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost_model import (
    LsmDesign,
    Policy,
    SystemParams,
    cost_terms,
    level_count,
    smooth_level_count,
)
from .errors import InfeasibleBounds


@dataclass(frozen=True)
class Bounds:
    """Box bounds on size ratio and filter memory (bits).

    ``m_filt_max`` defaults to ``m - E`` (one entry of buffer).
    """

    T_min: float = 2.0
    T_max: float = 100.0
    m_filt_min: float = 0.0
    m_filt_max: float | None = None

    def resolve(self, sys: SystemParams) -> tuple[float, float, float, float]:
        hi = sys.m - sys.E if self.m_filt_max is None else min(self.m_filt_max, sys.m - sys.E)
        lo = max(0.0, self.m_filt_min)
        if self.T_min < 2 or self.T_max < self.T_min or hi < lo:
            raise InfeasibleBounds(
                f"empty bounds: T in [{self.T_min}, {self.T_max}], m_filt in [{lo}, {hi}]"
            )
        return self.T_min, self.T_max, lo, hi


def _k_of(u: float, T: float) -> float:
    return 1.0 + min(1.0, max(0.0, u)) * (T - 2.0)


def _u_of(k: float, T: float) -> float:
    if T <= 2.0:
        return 0.0
    return min(1.0, max(0.0, (k - 1.0) / (T - 2.0)))


class DesignSpace:
    """Solver-facing view of one layout family under fixed bounds."""

    def __init__(self, policy: Policy, sys: SystemParams, bounds: Bounds, n_shape: int = 0,
                 m_filt_fixed: float | None = None):
        self.policy = Policy(policy)
        self.sys = sys
        T_lo, T_hi, mf_lo, mf_hi = bounds.resolve(sys)
        if m_filt_fixed is not None:
            mf_lo = mf_hi = m_filt_fixed
        self.m_filt_fixed = m_filt_fixed
        if self.policy is Policy.FLUID:
            n_shape = 2
        elif self.policy is not Policy.KLSM:
            n_shape = 0
        elif n_shape < 1:
            raise ValueError("K-LSM space needs at least one shape variable")
        self.n_shape = n_shape
        lo = [T_lo, mf_lo / sys.N] + [0.0] * n_shape
        hi = [T_hi, mf_hi / sys.N] + [1.0] * n_shape
        self.lower = np.array(lo, dtype=float)
        self.upper = np.array(hi, dtype=float)

    @property
    def dim(self) -> int:
        return 2 + self.n_shape

    def clip(self, x) -> np.ndarray:
        return np.minimum(self.upper, np.maximum(self.lower, np.asarray(x, dtype=float)))

    def _ks(self, x: np.ndarray, T: float, n: int) -> list[float]:
        p = self.policy
        tier = T - 1.0
        if p is Policy.LEVELING:
            return [1.0] * n
        if p is Policy.TIERING:
            return [tier] * n
        if p is Policy.LAZY_LEVELING:
            return [tier] * (n - 1) + [1.0]
        if p is Policy.ONE_LEVELING:
            return [tier] + [1.0] * (n - 1)
        if p is Policy.FLUID:
            return [_k_of(x[2], T)] * (n - 1) + [_k_of(x[3], T)]
        shape = x[2:]
        last = len(shape) - 1
        return [_k_of(shape[min(n - 1 - i, last)], T) for i in range(n)]

    def surrogate_terms(self, x) -> tuple[float, float, float, float]:
        """Cost terms with a continuous level count (solver objective)."""
        T = float(x[0])
        m_filt = float(x[1]) * self.sys.N
        Ls = smooth_level_count(T, self.sys, self.sys.m - m_filt)
        n = max(1, math.ceil(Ls - 1e-12))
        return cost_terms(T, m_filt, self._ks(x, T, n), self.sys, Ls)

    def design(self, x) -> LsmDesign:
        """Continuous design at ``x`` with the ceiled level count."""
        x = self.clip(x)
        T = float(x[0])
        m_filt = float(x[1]) * self.sys.N
        L = level_count(T, self.sys, self.sys.m - m_filt)
        return LsmDesign(T, m_filt, tuple(self._ks(x, T, L)), self.policy)

    def deploy(self, x) -> LsmDesign:
        """Integer design: ceiling of T, run capacities rounded and clamped."""
        x = self.clip(x)
        T = float(x[0])
        T_int = float(math.ceil(T - 1e-9))
        m_filt = float(x[1]) * self.sys.N
        L = level_count(T_int, self.sys, self.sys.m - m_filt)
        if self.policy in (Policy.FLUID, Policy.KLSM):
            Ks = [min(T_int - 1, max(1.0, float(round(k)))) for k in self._ks(x, T, L)]
        else:
            Ks = self._ks(x, T_int, L)
        return LsmDesign(T_int, m_filt, tuple(Ks), self.policy)

    def encode(self, design: LsmDesign) -> np.ndarray:
        """Solver vector for an existing design (used for warm starts)."""
        T = design.T
        x = [T, design.m_filt / self.sys.N]
        if self.policy is Policy.FLUID:
            x += [_u_of(design.K[0], T), _u_of(design.K[-1], T)]
        elif self.policy is Policy.KLSM:
            bottom_up = list(reversed(design.K))
            bottom_up = (bottom_up + [bottom_up[-1]] * self.n_shape)[: self.n_shape]
            x += [_u_of(k, T) for k in bottom_up]
        return self.clip(x)

    def shape_levels_at(self, unit_point) -> int:
        """Level count at a point of the unit box (sizes K-LSM shape vectors)."""
        T = self.lower[0] + unit_point[0] * (self.upper[0] - self.lower[0])
        h = self.lower[1] + unit_point[1] * (self.upper[1] - self.lower[1])
        return level_count(T, self.sys, self.sys.m - h * self.sys.N)

    def from_unit(self, unit_point) -> np.ndarray:
        u = np.asarray(unit_point, dtype=float)[: self.dim]
        return self.lower + u * (self.upper - self.lower)
