"""In-memory LSM tree that counts page I/Os instead of doing them.

Runs are sorted numpy key arrays with a real bit-array Bloom filter. Compaction
follows per-level run capacities ``K``: a level accepts ``T - 1`` incoming runs,
split into ``K`` groups (the first ``(T-1) mod K`` groups one run larger). The
first arrival of a group starts a new run, later ones merge into the newest
run. The ``T``-th arrival lands as one more run and then triggers a
full-level compaction: every run of the level is merged and the result lands
one level down.

I/O accounting is in pages of ``B`` entries: compaction reads every on-disk run
it consumes and writes every run it creates (a buffer flush is a write).
Point lookups pay one random read per filter-positive run whose key span covers
the key. Range lookups pay one seek per run whose key span meets the range,
plus the extra pages the range covers in that run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bench import Session, make_rng
from .cost_model import LN2_SQ, LsmDesign, SystemParams, bloom_fprs, level_count
from .errors import InvalidRange

KEY_SPACE = 1 << 62
TYPES = ("z0", "z1", "q", "w")

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class BloomFilter:
    """Bit-array Bloom filter with double hashing on a 64-bit mix."""

    def __init__(self, keys: np.ndarray, bits_per_entry: float, salt: int):
        n = len(keys)
        self.salt = np.uint64(salt)
        if bits_per_entry <= 0 or n == 0:
            self.nbits = 0
            self.k = 0
            self.bits = None
            return
        self.nbits = max(1, math.ceil(bits_per_entry * n))
        self.k = max(1, round(math.log(2) * bits_per_entry))
        self.bits = np.zeros(self.nbits, dtype=bool)
        for idx in self._positions(keys):
            self.bits[idx] = True

    def _positions(self, keys: np.ndarray):
        with np.errstate(over="ignore"):
            h1 = _mix(keys ^ self.salt)
            h2 = _mix(h1) | np.uint64(1)
            m = np.uint64(self.nbits)
            for j in range(self.k):
                yield ((h1 + np.uint64(j) * h2) % m).astype(np.int64)

    def may_contain(self, keys: np.ndarray) -> np.ndarray:
        if self.bits is None:
            return np.ones(len(keys), dtype=bool)
        out = np.ones(len(keys), dtype=bool)
        for idx in self._positions(keys):
            out &= self.bits[idx]
        return out


@dataclass
class Run:
    keys: np.ndarray  # sorted uint64, unique
    values: np.ndarray  # int64
    bloom: BloomFilter

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def lo(self) -> int:
        return int(self.keys[0])

    @property
    def hi(self) -> int:
        return int(self.keys[-1])


@dataclass
class Level:
    runs: list[Run] = field(default_factory=list)  # oldest first
    arrivals: int = 0

    @property
    def entries(self) -> int:
        return sum(len(r) for r in self.runs)


@dataclass
class IoCounters:
    random_reads: int = 0
    sequential_reads: int = 0
    compaction_reads: int = 0
    compaction_writes: int = 0
    flushes: int = 0
    queries_executed: dict = field(default_factory=lambda: dict.fromkeys(TYPES, 0))
    # per query type: [random reads, sequential reads]
    by_type: dict = field(default_factory=lambda: {t: [0, 0] for t in TYPES[:3]})

    def copy(self) -> "IoCounters":
        return IoCounters(self.random_reads, self.sequential_reads, self.compaction_reads,
                          self.compaction_writes, self.flushes, dict(self.queries_executed),
                          {t: list(v) for t, v in self.by_type.items()})

    def as_dict(self) -> dict:
        return {
            "random_reads": self.random_reads,
            "sequential_reads": self.sequential_reads,
            "compaction_reads": self.compaction_reads,
            "compaction_writes": self.compaction_writes,
            "flushes": self.flushes,
            "queries_executed": dict(self.queries_executed),
        }


def _groups(T: int, K: int) -> list[int]:
    """Arrival counts per group: T - 1 arrivals in K groups, larger groups first."""
    base, rem = divmod(T - 1, K)
    return [base + 1] * rem + [base] * (K - rem)


def _starts_group(T: int, K: int, arrival: int) -> bool:
    """Whether the arrival (0-based within the level's cycle) opens a new run."""
    edge = 0
    for g in _groups(T, K):
        if arrival == edge:
            return True
        edge += g
        if arrival < edge:
            return False
    return False


def _merge(newer: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Merge runs given newest first; the newest value of a key wins."""
    keys = np.concatenate([k for k, _ in newer])
    vals = np.concatenate([v for _, v in newer])
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    vals = vals[order]
    if len(keys) > 1:
        keep = np.ones(len(keys), dtype=bool)
        keep[1:] = keys[1:] != keys[:-1]
        keys = keys[keep]
        vals = vals[keep]
    return keys, vals


class SimTree:
    """LSM tree over uint64 keys and int64 values with K-LSM compaction."""

    def __init__(self, design: LsmDesign, sys: SystemParams, buffer_entries: int | None = None,
                 seed: int = 0):
        T = float(design.T)
        if T != int(T) or any(k != int(k) for k in design.K):
            raise ValueError("the simulator needs an integer size ratio and run capacities")
        self.design = design
        self.sys = sys
        self.T = int(T)
        m_buf = sys.m - design.m_filt
        self.buffer_entries = int(buffer_entries or max(1, math.floor(m_buf / sys.E)))
        self.B = int(sys.B)
        self.buffer: dict[int, int] = {}
        self.levels: list[Level] = []
        self.counters = IoCounters()
        self.seed = seed
        self._run_salt = 0
        self._model_levels = level_count(design.T, sys, m_buf)

    # ---------------------------------------------------------- structure

    def K(self, i: int) -> int:
        """Run capacity of level i (0-based from the top); extra levels reuse the last."""
        Ks = self.design.K
        return int(Ks[min(i, len(Ks) - 1)])

    def level_capacity(self, i: int) -> int:
        return (self.T - 1) * self.T ** i * self.buffer_entries

    def _bits_per_entry(self, i: int) -> float:
        depth = max(self._model_levels, len(self.levels))
        f = bloom_fprs(self.design.T, self.design.m_filt, self.sys, levels=depth)[i]
        return 0.0 if f >= 1.0 else -math.log(f) / LN2_SQ

    def _pages(self, n: int) -> int:
        return -(-n // self.B)

    def _new_run(self, keys, values, i: int) -> Run:
        self._run_salt += 1
        salt = (self.seed * 1_000_003 + self._run_salt) & 0xFFFFFFFFFFFFFFFF
        bloom = BloomFilter(keys, self._bits_per_entry(i), salt)
        self.counters.compaction_writes += self._pages(len(keys))
        return Run(keys, values, bloom)

    def _read(self, run: Run) -> tuple[np.ndarray, np.ndarray]:
        self.counters.compaction_reads += self._pages(len(run))
        return run.keys, run.values

    # ---------------------------------------------------------- writes

    def put(self, key: int, value: int) -> None:
        self.buffer[int(key)] = int(value)
        if len(self.buffer) >= self.buffer_entries:
            self.flush()

    def flush(self) -> None:
        if not self.buffer:
            return
        keys = np.fromiter(self.buffer.keys(), dtype=np.uint64, count=len(self.buffer))
        vals = np.fromiter(self.buffer.values(), dtype=np.int64, count=len(self.buffer))
        order = np.argsort(keys)
        self.buffer = {}
        self.counters.flushes += 1
        self._arrive(0, keys[order], vals[order])

    def _arrive(self, i: int, keys: np.ndarray, vals: np.ndarray) -> None:
        """A sorted run produced above (or by a flush) lands at level i."""
        while len(self.levels) <= i:
            self.levels.append(Level())
        level = self.levels[i]
        if level.arrivals == self.T - 1:
            # T-th arrival: land it, then compact the whole level one level down
            level.runs.append(self._new_run(keys, vals, i))
            parts = [self._read(r) for r in reversed(level.runs)]
            level.runs = []
            level.arrivals = 0
            self._arrive(i + 1, *_merge(parts))
            return
        if _starts_group(self.T, self.K(i), level.arrivals) or not level.runs:
            level.runs.append(self._new_run(keys, vals, i))
        else:
            newest = level.runs.pop()
            level.runs.append(self._new_run(*_merge([(keys, vals), self._read(newest)]), i))
        level.arrivals += 1

    # ---------------------------------------------------------- reads

    def _runs_top_down(self):
        for level in self.levels:
            for run in reversed(level.runs):
                yield run

    def get_many(self, keys: np.ndarray, qtype: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Batch point lookups with no writes in between: (found mask, values).

        With ``qtype`` unset, each lookup is booked as empty or non-empty by
        its outcome.
        """
        keys = np.asarray(keys, dtype=np.uint64)
        n = len(keys)
        found = np.zeros(n, dtype=bool)
        values = np.zeros(n, dtype=np.int64)
        ios = np.zeros(n, dtype=np.int64)
        if self.buffer:
            for j, k in enumerate(keys.tolist()):
                v = self.buffer.get(k)
                if v is not None:
                    found[j] = True
                    values[j] = v
        for run in self._runs_top_down():
            active = np.flatnonzero(~found)
            if active.size == 0:
                break
            ak = keys[active]
            probe = (ak >= run.keys[0]) & (ak <= run.keys[-1])
            probe &= run.bloom.may_contain(ak)
            hit_idx = active[probe]
            if hit_idx.size == 0:
                continue
            ios[hit_idx] += 1
            pos = np.minimum(np.searchsorted(run.keys, keys[hit_idx]), len(run) - 1)
            match = run.keys[pos] == keys[hit_idx]
            found[hit_idx[match]] = True
            values[hit_idx[match]] = run.values[pos[match]]
        self.counters.random_reads += int(ios.sum())
        if qtype is None:
            for t, mask in (("z1", found), ("z0", ~found)):
                self.counters.by_type[t][0] += int(ios[mask].sum())
                self.counters.queries_executed[t] += int(mask.sum())
        else:
            self.counters.by_type[qtype][0] += int(ios.sum())
            self.counters.queries_executed[qtype] += n
        return found, values

    def get(self, key: int):
        found, vals = self.get_many(np.array([int(key)], dtype=np.uint64))
        return int(vals[0]) if found[0] else None

    def range(self, lo: int, hi: int, qtype: str = "q") -> dict[int, int]:
        if lo > hi:
            raise InvalidRange(f"key_lo {lo} > key_hi {hi}")
        lo_k, hi_k = np.uint64(lo), np.uint64(hi)
        out: dict[int, int] = {}
        seeks = seq = 0
        for run in self._runs_top_down():
            if hi_k < run.keys[0] or lo_k > run.keys[-1]:
                continue  # fence pointers rule the run out
            a = int(np.searchsorted(run.keys, lo_k, side="left"))
            b = int(np.searchsorted(run.keys, hi_k, side="right"))
            seeks += 1
            if b > a:
                seq += (b - 1) // self.B - a // self.B
                for k, v in zip(run.keys[a:b].tolist(), run.values[a:b].tolist()):
                    out.setdefault(k, v)
        for k, v in self.buffer.items():
            if lo <= k <= hi:
                out[k] = v
        self.counters.random_reads += seeks
        self.counters.sequential_reads += seq
        self.counters.by_type[qtype][0] += seeks
        self.counters.by_type[qtype][1] += seq
        self.counters.queries_executed[qtype] += 1
        return out

    def range_many(self, los: np.ndarray, his: np.ndarray) -> None:
        """Batch range lookups, counting I/Os only."""
        los = np.asarray(los, dtype=np.uint64)
        his = np.asarray(his, dtype=np.uint64)
        if np.any(los > his):
            raise InvalidRange("every range needs key_lo <= key_hi")
        seeks = seq = 0
        for run in self._runs_top_down():
            meet = (his >= run.keys[0]) & (los <= run.keys[-1])
            if not meet.any():
                continue
            a = np.searchsorted(run.keys, los[meet], side="left")
            b = np.searchsorted(run.keys, his[meet], side="right")
            seeks += int(meet.sum())
            nz = b > a
            seq += int(((b[nz] - 1) // self.B - a[nz] // self.B).sum())
        self.counters.random_reads += seeks
        self.counters.sequential_reads += seq
        self.counters.by_type["q"][0] += seeks
        self.counters.by_type["q"][1] += seq
        self.counters.queries_executed["q"] += len(los)

    def scan(self) -> dict[int, int]:
        """Latest value of every live key."""
        out: dict[int, int] = {}
        for level in reversed(self.levels):
            for run in level.runs:
                out.update(zip(run.keys.tolist(), run.values.tolist()))
        out.update(self.buffer)
        return out

    @property
    def entry_count(self) -> int:
        return len(self.scan())

    def run_counts(self) -> list[int]:
        return [len(level.runs) for level in self.levels]


# ------------------------------------------------------------ functional API


def sim_put(tree: SimTree, key: int, value: int) -> None:
    tree.put(key, value)


def sim_point_get(tree: SimTree, key: int):
    return tree.get(key)


def sim_range_get(tree: SimTree, key_lo: int, key_hi: int) -> dict[int, int]:
    return tree.range(key_lo, key_hi)


@dataclass(frozen=True)
class WorkloadReport:
    """Mean I/Os per query of each type for one executed workload."""

    counts: tuple[int, int, int, int]
    z0: float | None
    z1: float | None
    q: float | None
    w: float | None
    counters: dict

    def as_tuple(self):
        return (self.z0, self.z1, self.q, self.w)


class KeyTracker:
    """Live-key sampler for session generation."""

    def __init__(self, keys: np.ndarray | None = None):
        self._keys = [] if keys is None else list(np.asarray(keys, dtype=np.uint64).tolist())
        self._set = set(self._keys)

    def __len__(self) -> int:
        return len(self._keys)

    def add(self, key: int) -> bool:
        if key in self._set:
            return False
        self._set.add(key)
        self._keys.append(key)
        return True

    def __contains__(self, key: int) -> bool:
        return key in self._set

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.integers(0, len(self._keys), size=n)
        return np.array([self._keys[i] for i in idx.tolist()], dtype=np.uint64)

    def absent(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = rng.integers(0, KEY_SPACE, size=n, dtype=np.uint64)
        for j in range(n):
            while int(out[j]) in self._set:
                out[j] = rng.integers(0, KEY_SPACE, dtype=np.uint64)
        return out


def bulk_load(tree: SimTree, n: int, seed: int = 0) -> KeyTracker:
    """Insert ``n`` distinct uniform random keys; returns the tracker of live keys."""
    rng = make_rng(seed)
    keys = np.unique(rng.integers(0, KEY_SPACE, size=int(n * 1.01) + 16, dtype=np.uint64))
    keys = rng.permutation(keys)[:n]
    if len(keys) < n:
        raise RuntimeError("key collision rate too high for the requested load")
    for k, v in zip(keys.tolist(), range(n)):
        tree.put(k, v)
    return KeyTracker(keys)


def range_width(sys: SystemParams, n_entries: int) -> int:
    """Key-space width holding ``s_rq * N`` entries on average (at least one key)."""
    sel = max(sys.s_rq, 1.0 / max(n_entries, 1))
    return max(1, int(sel * KEY_SPACE))


def sim_run_session(tree: SimTree, session: Session, seed: int = 0,
                    tracker: KeyTracker | None = None, update_ratio: float = 0.0,
                    width: int | None = None) -> list[WorkloadReport]:
    """Execute every workload of a session and report mean I/Os per query type.

    Query order inside a workload is a seeded shuffle; consecutive reads run as
    a batch. Compaction I/O incurred while a workload runs is spread over that
    workload's writes.
    """
    if not 0 <= update_ratio <= 1:
        raise ValueError("update_ratio must lie in [0, 1]")
    rng = make_rng(seed)
    if tracker is None:
        tracker = KeyTracker(np.fromiter(tree.scan().keys(), dtype=np.uint64))
    sys = tree.sys
    reports = []
    for sw in session.workloads:
        counts = tuple(int(c) for c in sw.counts)
        before = tree.counters.copy()
        ops = np.repeat(np.arange(4), counts)
        rng.shuffle(ops)
        # split into maximal blocks of the same query type
        cuts = np.flatnonzero(np.diff(ops)) + 1
        for block in np.split(ops, cuts):
            if block.size == 0:
                continue
            t = int(block[0])
            n = block.size
            if t == 0:
                tree.get_many(tracker.absent(rng, n), "z0")
            elif t == 1:
                tree.get_many(tracker.sample(rng, n), "z1")
            elif t == 2:
                w = width or range_width(sys, len(tracker))
                los = rng.integers(0, KEY_SPACE - w, size=n, dtype=np.uint64)
                tree.range_many(los, los + np.uint64(w))
            else:
                upd = rng.random(n) < update_ratio if len(tracker) else np.zeros(n, dtype=bool)
                for j in range(n):
                    if upd[j]:
                        key = int(tracker.sample(rng, 1)[0])
                    else:
                        key = int(rng.integers(0, KEY_SPACE, dtype=np.uint64))
                        while key in tracker:
                            key = int(rng.integers(0, KEY_SPACE, dtype=np.uint64))
                        tracker.add(key)
                    tree.put(key, int(rng.integers(0, 1 << 62)))
                tree.counters.queries_executed["w"] += n
        reports.append(_report(before, tree.counters, counts, sys))
    return reports


def _report(before: IoCounters, after: IoCounters, counts, sys: SystemParams) -> WorkloadReport:
    def mean_read(t):
        n = after.queries_executed[t] - before.queries_executed[t]
        if n == 0:
            return None
        rnd = after.by_type[t][0] - before.by_type[t][0]
        seq = after.by_type[t][1] - before.by_type[t][1]
        return (rnd + sys.f_seq * seq) / n

    n_w = after.queries_executed["w"] - before.queries_executed["w"]
    reads = after.compaction_reads - before.compaction_reads
    writes = after.compaction_writes - before.compaction_writes
    w = sys.f_seq * (reads + sys.f_a * writes) / n_w if n_w else None
    diff = {
        "random_reads": after.random_reads - before.random_reads,
        "sequential_reads": after.sequential_reads - before.sequential_reads,
        "compaction_reads": reads,
        "compaction_writes": writes,
    }
    return WorkloadReport(counts, mean_read("z0"), mean_read("z1"), mean_read("q"), w, diff)


def amortized_write_io(tree: SimTree, n_writes: int) -> float:
    c = tree.counters
    return tree.sys.f_seq * (c.compaction_reads + tree.sys.f_a * c.compaction_writes) / n_writes


# ------------------------------------------------------------ validation setup


@dataclass(frozen=True)
class ValidationSetup:
    """A design whose tree is exactly full at ``levels`` levels after ``n`` writes."""

    design: LsmDesign
    sys: SystemParams
    buffer_entries: int
    n: int


def full_tree_setup(T: int, policy, levels: int, target_n: float = 1e6, E: float = 512,
                    B: float = 64, bits_per_entry: float = 10.0, f_a: float = 1.0,
                    f_seq: float = 1.0, s_rq: float | None = None) -> ValidationSetup:
    """Desk-scale system sized so ``levels`` full levels hold about ``target_n`` entries.

    The buffer takes whatever the full tree needs; the rest of the memory
    budget goes to filters.
    """
    buf = math.ceil(target_n / (T ** levels - 1))
    n = buf * (T ** levels - 1)
    m_buf = buf * E
    m = bits_per_entry * n
    if m <= m_buf:
        raise ValueError("memory budget too small for the required buffer")
    sys = SystemParams(N=n, E=E, B=B, m=m, f_a=f_a, f_seq=f_seq,
                       s_rq=B / n if s_rq is None else s_rq)
    design = LsmDesign.from_policy(policy, float(T), m - m_buf, sys)
    return ValidationSetup(design, sys, buf, n)
