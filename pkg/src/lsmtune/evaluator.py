"""Comparison metrics and the model-based experiments built on them.

Throughput is the reciprocal of the expected cost (I/Os per query).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.stats import spearmanr

from .bench import BenchmarkSet
from .cost_model import LsmDesign, Policy, SystemParams, Workload, cost_vector
from .errors import LsmTuneError, ZeroCost
from .nominal import CLASSIC, SolverOptions, TuningProblem, solve_nominal
from .robust import UncertaintyRegion, kl_divergence_many, solve_robust

log = logging.getLogger(__name__)

# 15 radii stepping by 0.25 inside (0, 4)
DEFAULT_RHOS = tuple(0.25 * i for i in range(1, 16))
RECORD_HEADER = ("center_id", "rho", "z0", "z1", "q", "w", "kl", "cost_nominal", "cost_robust",
                 "delta")
DRIFT_FAMILIES = (Policy.KLSM, Policy.FLUID, Policy.LAZY_LEVELING, Policy.LEVELING,
                  Policy.TIERING)
N_BINS = 20


def _cost(w, design_or_costs, sys: SystemParams | None = None) -> float:
    costs = design_or_costs
    if isinstance(costs, LsmDesign):
        costs = cost_vector(costs, sys).as_array()
    w = w.as_array() if isinstance(w, Workload) else np.asarray(w, dtype=float)
    return float(np.dot(w, np.asarray(costs, dtype=float)))


def delta_from_costs(c1, c2):
    """C1/C2 - 1: the throughput gain of the second tuning over the first."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    if np.any(c1 <= 0) or np.any(c2 <= 0):
        raise ZeroCost("costs must be positive to compare throughputs")
    out = c1 / c2 - 1.0
    return float(out) if out.ndim == 0 else out


def delta_throughput(w, phi1: LsmDesign, phi2: LsmDesign, sys: SystemParams) -> float:
    """Normalized throughput change when moving from ``phi1`` to ``phi2`` on ``w``."""
    return delta_from_costs(_cost(w, phi1, sys), _cost(w, phi2, sys))


def range_from_costs(costs) -> float:
    c = np.asarray(costs, dtype=float)
    if c.size == 0:
        raise ValueError("bench must be non-empty")
    if np.any(c <= 0):
        raise ZeroCost("costs must be positive to compare throughputs")
    return float(1.0 / c.min() - 1.0 / c.max())


def throughput_range(bench, phi: LsmDesign, sys: SystemParams) -> float:
    """Spread between the best and worst throughput of one tuning over a bench."""
    M = bench.matrix if isinstance(bench, BenchmarkSet) else np.atleast_2d(
        np.asarray([b.as_array() if isinstance(b, Workload) else b for b in bench], dtype=float))
    return range_from_costs(M @ cost_vector(phi, sys).as_array())


@dataclass(frozen=True)
class ComparisonRecord:
    center: Workload
    rho: float
    observed: Workload
    kl_observed: float
    cost_nominal: float
    cost_robust: float | None
    delta_throughput: float | None

    @property
    def is_null(self) -> bool:
        return self.cost_robust is None


@dataclass
class SweepResult:
    """Nominal-vs-robust comparison of one center over a bench and a rho grid.

    Stored column-wise; ``records()`` yields the row view. A rho whose robust
    solve failed keeps ``None`` in ``robust`` and yields null cells.
    """

    center_id: int
    center: Workload
    rhos: tuple[float, ...]
    nominal: LsmDesign
    robust: list[LsmDesign | None]
    bench: np.ndarray
    kl: np.ndarray
    cost_nominal: np.ndarray
    cost_robust: list[np.ndarray | None]
    errors: dict[float, str] = field(default_factory=dict)

    def delta(self, j: int) -> np.ndarray | None:
        c = self.cost_robust[j]
        return None if c is None else delta_from_costs(self.cost_nominal, c)

    def mean_delta(self, j: int) -> float | None:
        d = self.delta(j)
        return None if d is None else float(d.mean())

    def median_delta(self, j: int) -> float | None:
        d = self.delta(j)
        return None if d is None else float(np.median(d))

    def theta_robust(self, j: int) -> float | None:
        c = self.cost_robust[j]
        return None if c is None else range_from_costs(c)

    @property
    def theta_nominal(self) -> float:
        return range_from_costs(self.cost_nominal)

    def records(self) -> Iterator[ComparisonRecord]:
        obs = [Workload(*map(float, row)) if abs(row.sum() - 1) <= 1e-9 else None
               for row in self.bench]
        for j, rho in enumerate(self.rhos):
            cr = self.cost_robust[j]
            d = self.delta(j)
            for i, w in enumerate(obs):
                yield ComparisonRecord(
                    self.center, rho, w, float(self.kl[i]), float(self.cost_nominal[i]),
                    None if cr is None else float(cr[i]), None if d is None else float(d[i]))

    def write_rows(self, writer) -> int:
        n = 0
        for j, rho in enumerate(self.rhos):
            cr = self.cost_robust[j]
            d = self.delta(j)
            for i in range(self.bench.shape[0]):
                z0, z1, q, w = (repr(float(x)) for x in self.bench[i])
                writer.writerow([
                    self.center_id, repr(float(rho)), z0, z1, q, w, repr(float(self.kl[i])),
                    repr(float(self.cost_nominal[i])),
                    "" if cr is None else repr(float(cr[i])),
                    "" if d is None else repr(float(d[i])),
                ])
                n += 1
        return n


def rho_sweep(
    center: Workload,
    sys: SystemParams,
    rhos: Sequence[float],
    bench: BenchmarkSet | np.ndarray,
    family: Policy | tuple[Policy, ...] = CLASSIC,
    options: SolverOptions | None = None,
    center_id: int = -1,
) -> SweepResult:
    """Solve nominal once and robust per rho; evaluate both on every bench workload."""
    options = options or SolverOptions()
    M = bench.matrix if isinstance(bench, BenchmarkSet) else np.asarray(bench, dtype=float)
    nominal = solve_nominal(TuningProblem(center, sys, family, options=options)).design
    c_nom = M @ cost_vector(nominal, sys).as_array()
    robust: list[LsmDesign | None] = []
    c_rob: list[np.ndarray | None] = []
    errors: dict[float, str] = {}
    for rho in rhos:
        try:
            d = solve_robust(UncertaintyRegion(center, float(rho)), sys, family, options=options).design
        except LsmTuneError as exc:
            log.warning("robust solve failed for center %s at rho=%s: %s", center_id, rho, exc)
            errors[float(rho)] = f"{type(exc).__name__}: {exc}"
            robust.append(None)
            c_rob.append(None)
            continue
        robust.append(d)
        c_rob.append(M @ cost_vector(d, sys).as_array())
    return SweepResult(center_id, center, tuple(float(r) for r in rhos), nominal, robust, M,
                       kl_divergence_many(M, center), c_nom, c_rob, errors)


def records_csv(results: Sequence[SweepResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(RECORD_HEADER)
    for r in sorted(results, key=lambda r: r.center_id):
        r.write_rows(writer)
    return buf.getvalue()


def sweep_summary(results: Sequence[SweepResult]) -> list[dict]:
    """Per (center, rho) aggregates: mean and median delta, robust and nominal ranges."""
    rows = []
    for r in sorted(results, key=lambda r: r.center_id):
        for j, rho in enumerate(r.rhos):
            rows.append({
                "center_id": r.center_id,
                "rho": rho,
                "mean_delta": r.mean_delta(j),
                "median_delta": r.median_delta(j),
                "theta_nominal": r.theta_nominal,
                "theta_robust": r.theta_robust(j),
            })
    return rows


# ------------------------------------------------------------------ drift


@dataclass
class DriftTable:
    """Mean cost per KL bin for each tuning."""

    center: Workload
    rho: float
    edges: np.ndarray  # n_bins + 1 quantile edges of the observed KL values
    bin_kl: np.ndarray  # mean KL inside each bin
    curves: dict[str, np.ndarray]
    designs: dict[str, LsmDesign]

    def increase(self, name: str) -> float:
        c = self.curves[name]
        return float(c[-1] - c[0])

    def rows(self) -> list[dict]:
        out = []
        for b in range(len(self.bin_kl)):
            row = {"bin": b, "kl_lo": float(self.edges[b]), "kl_hi": float(self.edges[b + 1]),
                   "kl_mean": float(self.bin_kl[b])}
            row.update({name: float(c[b]) for name, c in self.curves.items()})
            out.append(row)
        return out


def quantile_bins(values: np.ndarray, n_bins: int = N_BINS) -> tuple[np.ndarray, np.ndarray]:
    """(edges, bin index per value) for equal-count bins."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    labels = np.empty(values.size, dtype=np.int64)
    # equal-count split of the sorted order; ties cannot unbalance the bins
    for b, chunk in enumerate(np.array_split(order, n_bins)):
        labels[chunk] = b
    edges = np.quantile(values, np.linspace(0, 1, n_bins + 1))
    return edges, labels


def drift_experiment(
    center: Workload,
    sys: SystemParams,
    bench: BenchmarkSet | np.ndarray,
    families: Sequence[Policy] = DRIFT_FAMILIES,
    rho: float = 2.0,
    robust_family: Policy | tuple[Policy, ...] = Policy.KLSM,
    options: SolverOptions | None = None,
    n_bins: int = N_BINS,
) -> DriftTable:
    """Cost of each family's nominal tuning and of the robust tuning versus divergence."""
    options = options or SolverOptions()
    M = bench.matrix if isinstance(bench, BenchmarkSet) else np.asarray(bench, dtype=float)
    if M.shape[0] < n_bins:
        raise ValueError(f"need at least {n_bins} bench workloads for {n_bins} bins")
    kl = kl_divergence_many(M, center)
    edges, labels = quantile_bins(kl, n_bins)
    counts = np.bincount(labels, minlength=n_bins)
    bin_kl = np.bincount(labels, weights=kl, minlength=n_bins) / counts

    designs: dict[str, LsmDesign] = {}
    for fam in families:
        fam = Policy(fam)
        designs[fam.value] = solve_nominal(TuningProblem(center, sys, fam, options=options)).design
    designs["robust"] = solve_robust(UncertaintyRegion(center, rho), sys, robust_family,
                                     options=options).design
    curves = {}
    for name, d in designs.items():
        c = M @ cost_vector(d, sys).as_array()
        curves[name] = np.bincount(labels, weights=c, minlength=n_bins) / counts
    return DriftTable(center, rho, edges, bin_kl, curves, designs)


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return float(spearmanr(x, y).statistic)
