"""Analytical I/O cost model for K-LSM trees.

Every classical layout (leveling, tiering, lazy leveling, 1-leveling, fluid)
is expressed as a per-level run-capacity vector ``K`` and evaluated through the
same four cost terms:

* ``Z0`` empty point lookups
* ``Z1`` non-empty point lookups
* ``Q``  range lookups
* ``W``  writes (amortized compaction I/O)

Memory is in bits throughout. Natural logarithms everywhere.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

LN2_SQ = math.log(2) ** 2
_SUM_TOL = 1e-9
# slack for ceil() on values like log_T(T^k) that land a few ulps above k
_CEIL_SLACK = 1e-10


class Policy(str, enum.Enum):
    LEVELING = "leveling"
    TIERING = "tiering"
    LAZY_LEVELING = "lazy"
    ONE_LEVELING = "one-leveling"
    FLUID = "fluid"
    KLSM = "klsm"


@dataclass(frozen=True)
class Workload:
    """Query mix: fractions of empty lookups, non-empty lookups, ranges, writes."""

    z0: float
    z1: float
    q: float
    w: float

    def __post_init__(self):
        vals = (self.z0, self.z1, self.q, self.w)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"workload components must be finite and >= 0: {vals}")
        if abs(math.fsum(vals) - 1.0) > _SUM_TOL:
            raise ValueError(f"workload components must sum to 1, got {math.fsum(vals)!r}")

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> "Workload":
        total = float(sum(counts))
        if total <= 0:
            raise ValueError("counts must have a positive sum")
        return cls(*(c / total for c in counts))

    @classmethod
    def of(cls, values: Iterable[float]) -> "Workload":
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.z0, self.z1, self.q, self.w], dtype=float)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.z0, self.z1, self.q, self.w)


@dataclass(frozen=True)
class SystemParams:
    """Environment constants.

    N entries of E bits each, B entries per page, m bits of memory shared by
    the write buffer and the Bloom filters.
    """

    N: float
    E: float
    B: float
    m: float
    f_a: float = 1.0
    f_seq: float = 1.0
    s_rq: float = 0.0

    def __post_init__(self):
        if not self.N >= 1:
            raise ValueError("N must be >= 1")
        if not self.E > 0:
            raise ValueError("E must be > 0")
        if not self.B >= 1:
            raise ValueError("B must be >= 1")
        if not self.m > self.E:
            raise ValueError("memory must hold at least one buffered entry (m > E)")
        if self.f_a < 0:
            raise ValueError("f_a must be >= 0")
        if not 0 < self.f_seq <= 1:
            raise ValueError("f_seq must lie in (0, 1]")
        if not 0 <= self.s_rq <= 1:
            raise ValueError("s_rq must lie in [0, 1]")

    @property
    def bits_per_entry(self) -> float:
        return self.m / self.N

    def m_buf(self, m_filt: float) -> float:
        return self.m - m_filt


@dataclass(frozen=True)
class LsmDesign:
    """A tuning: size ratio, filter memory (bits) and runs-per-level vector.

    ``K`` is ordered from the top (level 1) down and must have one entry per
    level of the tree the design is evaluated on.
    """

    T: float
    m_filt: float
    K: tuple[float, ...]
    policy: Policy = Policy.KLSM

    def __post_init__(self):
        object.__setattr__(self, "K", tuple(float(k) for k in self.K))
        object.__setattr__(self, "policy", Policy(self.policy))
        if not self.T >= 2:
            raise DomainError(f"size ratio must be >= 2, got {self.T}")
        if not self.m_filt >= 0:
            raise DomainError(f"filter memory must be >= 0, got {self.m_filt}")
        if not self.K:
            raise DomainError("K must have at least one level")
        hi = self.T - 1
        for k in self.K:
            if not (1 - 1e-9 <= k <= hi + 1e-9):
                raise DomainError(f"K values must lie in [1, T-1]={[1, hi]}, got {self.K}")

    @classmethod
    def from_policy(
        cls,
        policy: Policy | str,
        T: float,
        m_filt: float,
        sys: SystemParams,
        *,
        k_upper: float | None = None,
        k_last: float | None = None,
        K: Sequence[float] | None = None,
    ) -> "LsmDesign":
        policy = Policy(policy)
        if not m_filt < sys.m:
            raise DomainError("filter memory must leave room for the buffer")
        L = level_count(T, sys, sys.m_buf(m_filt))
        Ks = expand_policy(policy, T, L, k_upper=k_upper, k_last=k_last, K=K)
        return cls(T, m_filt, Ks, policy)

    @property
    def levels(self) -> int:
        return len(self.K)

    def is_leveling(self) -> bool:
        return all(k == 1 for k in self.K)

    def bits_per_entry(self, sys: SystemParams) -> float:
        return self.m_filt / sys.N


@dataclass(frozen=True)
class CostVector:
    Z0: float
    Z1: float
    Q: float
    W: float

    def as_array(self) -> np.ndarray:
        return np.array([self.Z0, self.Z1, self.Q, self.W], dtype=float)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.Z0, self.Z1, self.Q, self.W)


def _check_mbuf(m_buf: float) -> None:
    if not m_buf > 0:
        raise DomainError(f"buffer memory must be positive, got {m_buf}")


def smooth_level_count(T: float, sys: SystemParams, m_buf: float) -> float:
    """Level count without the ceiling: log_T(N*E/m_buf + 1)."""
    if T < 2:
        raise DomainError(f"size ratio must be >= 2, got {T}")
    _check_mbuf(m_buf)
    return math.log(sys.N * sys.E / m_buf + 1) / math.log(T)


def level_count(T: float, sys: SystemParams, m_buf: float) -> int:
    return max(1, math.ceil(smooth_level_count(T, sys, m_buf) - _CEIL_SLACK))


def _fpr_scale(T: float, m_filt: float, N: float) -> float:
    return T ** (T / (T - 1)) * math.exp(-(m_filt / N) * LN2_SQ)


def bloom_fprs(T: float, m_filt: float, sys: SystemParams, levels: int | None = None) -> list[float]:
    """Per-level false positive rates, top level first, clamped to [0, 1]."""
    if T < 2:
        raise DomainError(f"size ratio must be >= 2, got {T}")
    if not 0 <= m_filt < sys.m:
        raise DomainError(f"filter memory must lie in [0, m), got {m_filt}")
    L = levels if levels is not None else level_count(T, sys, sys.m_buf(m_filt))
    scale = _fpr_scale(T, m_filt, sys.N)
    return [min(1.0, scale / T ** (L + 1 - i)) for i in range(1, L + 1)]


def full_tree_entries(T: float, sys: SystemParams, m_buf: float, levels: int | None = None) -> float:
    L = levels if levels is not None else level_count(T, sys, m_buf)
    per_buf = m_buf / sys.E
    return sum((T - 1) * T ** (i - 1) * per_buf for i in range(1, L + 1))


def expand_policy(
    policy: Policy | str,
    T: float,
    L: int,
    *,
    k_upper: float | None = None,
    k_last: float | None = None,
    K: Sequence[float] | None = None,
) -> tuple[float, ...]:
    """Runs-per-level vector (top level first) for a named layout."""
    policy = Policy(policy)
    if T < 2 or L < 1:
        raise DomainError(f"need T >= 2 and L >= 1, got T={T}, L={L}")
    tier = T - 1.0
    if policy is Policy.LEVELING:
        Ks = [1.0] * L
    elif policy is Policy.TIERING:
        Ks = [tier] * L
    elif policy is Policy.LAZY_LEVELING:
        Ks = [tier] * (L - 1) + [1.0]
    elif policy is Policy.ONE_LEVELING:
        Ks = [tier] + [1.0] * (L - 1)
    elif policy is Policy.FLUID:
        if k_upper is None or k_last is None:
            raise ValueError("fluid layout needs k_upper and k_last")
        Ks = [float(k_upper)] * (L - 1) + [float(k_last)]
    elif policy is Policy.KLSM:
        if K is None:
            raise ValueError("K-LSM layout needs an explicit K vector")
        Ks = [float(k) for k in K]
        if len(Ks) != L:
            raise DomainError(f"K has {len(Ks)} levels, tree has {L}")
    else:  # pragma: no cover
        raise ValueError(f"unknown policy {policy!r}")
    for k in Ks:
        if not (1 - 1e-9 <= k <= tier + 1e-9):
            raise DomainError(f"K values must lie in [1, T-1], got {Ks}")
    return tuple(Ks)


def point_costs(
    K: Sequence[float],
    fprs: Sequence[float],
    caps: Sequence[float],
    weights: Sequence[float] | None = None,
) -> tuple[float, float]:
    """(Z0, Z1) from per-level run counts, false positive rates and entry capacities.

    A lookup for a key at level i probes every run above it, then on average
    half of the other runs at level i. ``weights`` scale each level's run
    count (only the topmost differs from 1 in the solver surrogate).
    """
    weights = weights or [1.0] * len(K)
    n_full = math.fsum(caps)
    z0 = 0.0
    z1 = 0.0
    for k, f, cap, wt in zip(K, fprs, caps, weights):
        z1 += cap / n_full * (1.0 + z0 + (k - 1) / 2 * f)
        z0 += wt * k * f
    return z0, z1


def cost_terms(
    T: float,
    m_filt: float,
    K: Sequence[float],
    sys: SystemParams,
    levels: float,
) -> tuple[float, float, float, float]:
    """(Z0, Z1, Q, W) for a possibly fractional level count.

    With ``levels`` integral this is the exact model. A fractional count
    ``n - 1 + frac`` keeps ``n = len(K)`` levels and weights the topmost by
    ``frac``; levels are anchored at the bottom so the FPR of the deepest
    level does not move as levels appear, which keeps the costs continuous in
    T and m_filt (the solver surrogate).
    """
    n = len(K)
    top_weight = levels - (n - 1)
    m_buf = sys.m - m_filt
    per_buf = m_buf / sys.E
    scale = _fpr_scale(T, m_filt, sys.N)

    weights = [1.0] * n
    weights[0] = top_weight
    fprs = [min(1.0, scale / T ** (n + 1 - i)) for i in range(1, n + 1)]
    # T^(n+1-i) with a fractional top level: depth from the bottom stays n+1-i
    caps = [wt * (T - 1) * T ** (i - 1) * per_buf for i, wt in zip(range(1, n + 1), weights)]

    z0, z1 = point_costs(K, fprs, caps, weights)
    q_runs = 0.0
    w_sum = 0.0
    for k, wt in zip(K, weights):
        q_runs += wt * k
        w_sum += wt * (T - 1 + k) / (2 * k)
    q = sys.f_seq * sys.s_rq * sys.N / sys.B + q_runs
    w = sys.f_seq * (1 + sys.f_a) / sys.B * w_sum
    return z0, z1, q, w


def _exact_terms(design: LsmDesign, sys: SystemParams) -> tuple[float, float, float, float]:
    m_buf = sys.m_buf(design.m_filt)
    _check_mbuf(m_buf)
    L = level_count(design.T, sys, m_buf)
    if len(design.K) != L:
        raise DomainError(f"design has {len(design.K)} levels, tree with T={design.T} has {L}")
    return cost_terms(design.T, design.m_filt, design.K, sys, float(L))


def empty_point_cost(design: LsmDesign, sys: SystemParams) -> float:
    return _exact_terms(design, sys)[0]


def nonempty_point_cost(design: LsmDesign, sys: SystemParams) -> float:
    return _exact_terms(design, sys)[1]


def range_cost(design: LsmDesign, sys: SystemParams) -> float:
    return _exact_terms(design, sys)[2]


def write_cost(design: LsmDesign, sys: SystemParams) -> float:
    return _exact_terms(design, sys)[3]


def cost_vector(design: LsmDesign, sys: SystemParams) -> CostVector:
    return CostVector(*_exact_terms(design, sys))


def expected_cost(workload: Workload, costs: CostVector) -> float:
    return (
        workload.z0 * costs.Z0
        + workload.z1 * costs.Z1
        + workload.q * costs.Q
        + workload.w * costs.W
    )


def total_cost(workload: Workload, design: LsmDesign, sys: SystemParams) -> float:
    """Expected I/Os per query; each fraction weights the cost of its own query type."""
    return expected_cost(workload, cost_vector(design, sys))
