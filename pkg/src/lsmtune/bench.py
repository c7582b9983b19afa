"""Workload generation: the expected workloads, the benchmark set and sessions."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cost_model import Workload
from .errors import CategoryUnsatisfiable
from .robust import kl_divergence, kl_divergence_many

RNG_ALGORITHM = "numpy.PCG64"
COUNT_MAX = 10_000
DEFAULT_BENCH_SIZE = 10_000
DEFAULT_QUERIES = 200_000
DEFAULT_SESSION_WORKLOADS = 3
DOMINANCE = 0.80
EXPECTED_KL = 0.2
# synthetic top-up draws the dominant mass from [DOMINANCE, _TOPUP_MAX]
_TOPUP_MAX = 0.98

CSV_HEADER = ("z0", "z1", "q", "w", "count_z0", "count_z1", "count_q", "count_w")

_EXPECTED = (
    ((0.25, 0.25, 0.25, 0.25), "Uniform"),
    ((0.97, 0.01, 0.01, 0.01), "Unimodal"),
    ((0.01, 0.97, 0.01, 0.01), "Unimodal"),
    ((0.01, 0.01, 0.97, 0.01), "Unimodal"),
    ((0.01, 0.01, 0.01, 0.97), "Unimodal"),
    ((0.49, 0.49, 0.01, 0.01), "Bimodal"),
    ((0.49, 0.01, 0.49, 0.01), "Bimodal"),
    ((0.49, 0.01, 0.01, 0.49), "Bimodal"),
    ((0.01, 0.49, 0.49, 0.01), "Bimodal"),
    ((0.01, 0.49, 0.01, 0.49), "Bimodal"),
    ((0.01, 0.01, 0.49, 0.49), "Bimodal"),
    ((0.33, 0.33, 0.33, 0.01), "Trimodal"),
    ((0.33, 0.33, 0.01, 0.33), "Trimodal"),
    ((0.33, 0.01, 0.33, 0.33), "Trimodal"),
    ((0.01, 0.33, 0.33, 0.33), "Trimodal"),
)

# query-type indices that must jointly hold the dominant share
CATEGORY_TYPES = {
    "empty_read": (0,),
    "nonempty_read": (1,),
    "read": (0, 1),
    "range": (2,),
    "write": (3,),
}
CATEGORIES = ("expected",) + tuple(CATEGORY_TYPES)


@dataclass(frozen=True)
class ExpectedWorkload:
    index: int
    workload: Workload
    category: str


def expected_workloads() -> list[ExpectedWorkload]:
    return [ExpectedWorkload(i, Workload(*w), cat) for i, (w, cat) in enumerate(_EXPECTED)]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class BenchmarkSet:
    """Sampled workloads with the integer query counts they were normalized from."""

    counts: np.ndarray  # (n, 4) int64
    seed: int | None = None
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[1] != 4:
            raise ValueError(f"counts must have shape (n, 4), got {c.shape}")
        if np.any(c < 0) or np.any(c.sum(axis=1) <= 0):
            raise ValueError("counts must be non-negative with a positive row sum")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def size(self) -> int:
        return int(self.counts.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def matrix(self) -> np.ndarray:
        """Workloads as an (n, 4) array of fractions."""
        c = self.counts.astype(float)
        return c / c.sum(axis=1, keepdims=True)

    @property
    def workloads(self) -> list[Workload]:
        return [Workload.from_counts(row) for row in self.counts.tolist()]

    @property
    def samples(self) -> list[tuple[Workload, tuple[int, int, int, int]]]:
        return [(Workload.from_counts(r), tuple(r)) for r in self.counts.tolist()]

    def to_csv(self, path: str | Path | None = None) -> str:
        text = _rows_to_csv(self.matrix, self.counts)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, source: str | Path, seed: int | None = None) -> "BenchmarkSet":
        text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) else source
        reader = csv.DictReader(io.StringIO(text))
        counts = [[int(row[f"count_{k}"]) for k in ("z0", "z1", "q", "w")] for row in reader]
        return cls(np.array(counts, dtype=np.int64).reshape(-1, 4), seed)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "algorithm": self.algorithm, "size": self.size,
                           "counts": self.counts.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkSet":
        d = json.loads(text)
        return cls(np.array(d["counts"], dtype=np.int64).reshape(-1, 4), d.get("seed"),
                   d.get("algorithm", RNG_ALGORITHM))


def _rows_to_csv(fracs: np.ndarray, counts: np.ndarray, extra: Sequence[Sequence] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_HEADER)
    for i, (f, c) in enumerate(zip(fracs.tolist(), counts.tolist())):
        writer.writerow([repr(float(x)) for x in f] + [int(x) for x in c]
                        + (list(extra[i]) if extra else []))
    return buf.getvalue()


def sample_benchmark(seed: int, size: int = DEFAULT_BENCH_SIZE) -> BenchmarkSet:
    """``size`` workloads from counts drawn uniformly in [0, 10000], all-zero rows redrawn."""
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = make_rng(seed)
    out = np.empty((0, 4), dtype=np.int64)
    while out.shape[0] < size:
        draw = rng.integers(0, COUNT_MAX, size=(size - out.shape[0], 4), endpoint=True)
        out = np.vstack([out, draw[draw.sum(axis=1) > 0]])
    return BenchmarkSet(out, seed)


# ---------------------------------------------------------------- sessions


@dataclass(frozen=True)
class SessionWorkload:
    workload: Workload
    counts: tuple[int, int, int, int]
    synthetic: bool = False


@dataclass(frozen=True)
class Session:
    category: str
    workloads: tuple[SessionWorkload, ...]
    queries_per_workload: int = DEFAULT_QUERIES
    center: Workload | None = None

    @property
    def has_synthetic(self) -> bool:
        return any(s.synthetic for s in self.workloads)

    def to_csv(self) -> str:
        fracs = np.array([s.workload.as_array() for s in self.workloads]).reshape(-1, 4)
        counts = np.array([s.counts for s in self.workloads], dtype=np.int64).reshape(-1, 4)
        text = _rows_to_csv(fracs, counts, [[int(s.synthetic)] for s in self.workloads])
        head, _, rest = text.partition("\r\n")
        return head + ",synthetic\r\n" + rest

    def to_json(self) -> str:
        return json.dumps({
            "category": self.category,
            "queries_per_workload": self.queries_per_workload,
            "center": None if self.center is None else list(self.center.as_tuple()),
            "workloads": [{"workload": list(s.workload.as_tuple()), "counts": list(s.counts),
                           "synthetic": s.synthetic} for s in self.workloads],
        })

    @classmethod
    def from_json(cls, text: str) -> "Session":
        d = json.loads(text)
        ws = tuple(SessionWorkload(Workload.of(s["workload"]), tuple(s["counts"]), s["synthetic"])
                   for s in d["workloads"])
        center = None if d.get("center") is None else Workload.of(d["center"])
        return cls(d["category"], ws, d["queries_per_workload"], center)


def apportion(fracs: Sequence[float], total: int) -> tuple[int, ...]:
    """Integer counts summing to ``total``, largest-remainder rounding."""
    f = np.asarray(fracs, dtype=float) * total
    base = np.floor(f).astype(np.int64)
    short = total - int(base.sum())
    order = np.argsort(-(f - base), kind="stable")
    base[order[:short]] += 1
    return tuple(int(x) for x in base)


def satisfies(category: str, w: Workload | np.ndarray, center: Workload | None = None) -> bool:
    """Post-hoc check of a session workload against its category."""
    arr = w.as_array() if isinstance(w, Workload) else np.asarray(w, dtype=float)
    if category == "expected":
        if center is None:
            raise ValueError("expected category needs a center")
        return kl_divergence(arr, center) < EXPECTED_KL
    return float(arr[list(CATEGORY_TYPES[category])].sum()) >= DOMINANCE


def _matches(category: str, M: np.ndarray, center: Workload | None) -> np.ndarray:
    if category == "expected":
        return kl_divergence_many(M, center) < EXPECTED_KL
    return M[:, list(CATEGORY_TYPES[category])].sum(axis=1) >= DOMINANCE


def _synthetic(category: str, center: Workload | None, rng: np.random.Generator) -> np.ndarray:
    if category == "expected":
        c = center.as_array()
        for _ in range(10_000):
            # concentrated Dirichlet around the center, kept only inside the KL ball
            cand = rng.dirichlet(c * 200.0 + 1e-3)
            if kl_divergence(cand, c) < EXPECTED_KL:
                return cand
        return c.copy()
    dom = list(CATEGORY_TYPES[category])
    rest = [i for i in range(4) if i not in dom]
    mass = rng.uniform(DOMINANCE, _TOPUP_MAX)
    out = np.zeros(4)
    out[dom] = mass * rng.dirichlet(np.ones(len(dom)))
    out[rest] = (1.0 - mass) * rng.dirichlet(np.ones(len(rest)))
    return out


def generate_session(
    category: str,
    center: Workload | None,
    bench: BenchmarkSet,
    n_workloads: int = DEFAULT_SESSION_WORKLOADS,
    seed: int = 0,
    queries_per_workload: int = DEFAULT_QUERIES,
    allow_topup: bool = True,
) -> Session:
    """Session of workloads meeting the category rule, drawn from the bench first."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")
    if bench.size == 0:
        raise ValueError("bench must be non-empty")
    if category == "expected" and center is None:
        raise ValueError("expected category needs a center")
    if n_workloads < 0:
        raise ValueError("n_workloads must be >= 0")
    rng = make_rng(seed)
    M = bench.matrix
    idx = np.flatnonzero(_matches(category, M, center))
    take = rng.permutation(idx)[:n_workloads]
    chosen = [(M[i], False) for i in take]
    missing = n_workloads - len(chosen)
    if missing and not allow_topup:
        raise CategoryUnsatisfiable(
            f"bench has {len(idx)} '{category}' workloads, {n_workloads} requested")
    for _ in range(missing):
        chosen.append((_synthetic(category, center, rng), True))
    items = []
    for frac, synth in chosen:
        counts = apportion(frac, queries_per_workload)
        # the executed mix is the integer one; keep the stored fractions consistent with it
        wl = Workload.from_counts(counts) if queries_per_workload > 0 else Workload.of(frac / frac.sum())
        if not satisfies(category, wl, center):
            wl = Workload.of(frac / frac.sum())
        items.append(SessionWorkload(wl, counts, synth))
    return Session(category, tuple(items), queries_per_workload, center)


def category_of(index: int) -> str:
    return _EXPECTED[index][1]


def kl_to_center(bench: BenchmarkSet, center: Workload) -> np.ndarray:
    return kl_divergence_many(bench.matrix, center)


__all__ = [
    "BenchmarkSet",
    "CATEGORIES",
    "ExpectedWorkload",
    "Session",
    "SessionWorkload",
    "apportion",
    "expected_workloads",
    "generate_session",
    "sample_benchmark",
    "satisfies",
]
