"""Run configuration: JSON files with a schema version, unit parsing, hashing."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .bench import expected_workloads
from .cost_model import Policy, SystemParams, Workload
from .design_space import Bounds
from .nominal import CLASSIC
from .search import SolverOptions

SCHEMA_VERSION = 1
FAMILY_CHOICES = tuple(p.value for p in Policy) + ("classic",)

# large-scale model defaults; range selectivity is one key in 10^9
DEFAULT_SYSTEM = {"N": 1e10, "E": "1KB", "B": 4, "m": "10 bits/entry", "f_a": 1.0,
                  "f_seq": 1.0, "s_rq": 1e-9}
# desk-scale defaults for the simulator
DESK_SYSTEM = {"N": 1e6, "E": "64B", "B": 64, "m": "10 bits/entry", "f_a": 1.0,
               "f_seq": 1.0, "s_rq": 64e-6}

_UNITS = {"B": 1, "KB": 1024, "MB": 1024 ** 2, "GB": 1024 ** 3, "TB": 1024 ** 4}
_SIZE = re.compile(r"^\s*([0-9.eE+-]+)\s*([KMGT]?B)\s*$", re.IGNORECASE)
_PER_ENTRY = re.compile(r"^\s*([0-9.eE+-]+)\s*(bits?/entry|bpe|bits per entry)\s*$", re.IGNORECASE)
_BITS = re.compile(r"^\s*([0-9.eE+-]+)\s*(bits?|b)?\s*$")


class ConfigError(ValueError):
    pass


def parse_bits(value: Any, N: float | None = None) -> float:
    """Memory or entry size in bits.

    Numbers are bits. Strings may carry a byte unit (``"64B"``, ``"10GB"``,
    binary multiples) or a per-entry rate (``"10 bits/entry"``, needs ``N``).
    A mapping ``{"bits_per_entry": x}`` works too.
    """
    if isinstance(value, bool):
        raise ConfigError(f"not a memory size: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        if "bits_per_entry" in value:
            return _per_entry(float(value["bits_per_entry"]), N)
        if "bits" in value:
            return float(value["bits"])
        if "bytes" in value:
            return 8.0 * float(value["bytes"])
        raise ConfigError(f"unrecognized memory mapping {value!r}")
    if isinstance(value, str):
        m = _PER_ENTRY.match(value)
        if m:
            return _per_entry(float(m.group(1)), N)
        m = _SIZE.match(value)
        if m and m.group(2).upper() in _UNITS:
            return 8.0 * float(m.group(1)) * _UNITS[m.group(2).upper()]
        m = _BITS.match(value)
        if m:
            return float(m.group(1))
    raise ConfigError(f"not a memory size: {value!r}")


def _per_entry(bpe: float, N: float | None) -> float:
    if N is None:
        raise ConfigError("bits-per-entry memory needs the entry count N")
    return bpe * N


def system_from(d: dict | None, defaults: dict = DEFAULT_SYSTEM) -> SystemParams:
    merged = dict(defaults)
    merged.update(d or {})
    try:
        N = float(merged["N"])
        return SystemParams(
            N=N,
            E=parse_bits(merged["E"]),
            B=float(merged["B"]),
            m=parse_bits(merged["m"], N),
            f_a=float(merged.get("f_a", 1.0)),
            f_seq=float(merged.get("f_seq", 1.0)),
            s_rq=float(merged.get("s_rq", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad system block: {exc}") from exc


def workload_from(spec: Any, base: Path | None = None) -> Workload:
    """Inline vector, ``{"index": i}`` into the expected workloads, or ``{"file": path}``."""
    if isinstance(spec, (list, tuple)):
        return Workload.of(spec) if abs(sum(spec) - 1) <= 1e-9 else Workload.from_counts(spec)
    if isinstance(spec, int):
        spec = {"index": spec}
    if isinstance(spec, dict):
        if "index" in spec:
            idx = int(spec["index"])
            table = expected_workloads()
            if not 0 <= idx < len(table):
                raise ConfigError(f"workload index {idx} out of range")
            return table[idx].workload
        if "file" in spec:
            path = Path(spec["file"])
            if base is not None and not path.is_absolute():
                path = base / path
            return workload_from(json.loads(path.read_text(encoding="utf-8")))
        if {"z0", "z1", "q", "w"} <= spec.keys():
            return Workload(spec["z0"], spec["z1"], spec["q"], spec["w"])
    raise ConfigError(f"cannot read a workload from {spec!r}")


def family_from(value: Any) -> Policy | tuple[Policy, ...]:
    if value is None:
        return Policy.KLSM
    if value == "classic":
        return CLASSIC
    try:
        if isinstance(value, (list, tuple)):
            return tuple(Policy(v) for v in value)
        return Policy(value)
    except ValueError as exc:
        raise ConfigError(f"unknown family {value!r}; choose from {FAMILY_CHOICES}") from exc


def solver_from(d: dict | None, seed: int) -> tuple[SolverOptions, Bounds]:
    d = dict(d or {})
    opts = SolverOptions(
        starts=int(d.get("starts", 16)),
        seed=int(d.get("seed", seed)),
        ftol=float(d.get("ftol", 1e-10)),
        maxiter=int(d.get("maxiter", 300)),
        warm_start=bool(d.get("warm_start", True)),
        refine=bool(d.get("refine", True)),
    )
    bounds = Bounds(
        T_min=float(d.get("T_min", 2.0)),
        T_max=float(d.get("T_max", 100.0)),
        m_filt_min=float(d.get("m_filt_min", 0.0)),
        m_filt_max=None if d.get("m_filt_max") is None else float(d["m_filt_max"]),
    )
    if opts.starts < 1:
        raise ConfigError("solver.starts must be >= 1")
    return opts, bounds


@dataclass
class RunConfig:
    raw: dict
    base: Path | None = None

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict | None = None) -> "RunConfig":
        raw: dict = {}
        base = None
        if path is not None:
            p = Path(path)
            text = p.read_text(encoding="utf-8")
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"{p}: top level must be an object")
            base = p.parent
        raw.setdefault("schema_version", SCHEMA_VERSION)
        if raw["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {raw['schema_version']!r}")
        for k, v in (overrides or {}).items():
            if v is not None:
                raw[k] = v
        raw.setdefault("seed", 0)
        return cls(raw, base)

    def get(self, key: str, default=None):
        return self.raw.get(key, default)

    @property
    def seed(self) -> int:
        s = self.raw.get("seed", 0)
        if not isinstance(s, int) or s < 0 or s >= 1 << 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {s!r}")
        return s

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def system(self, defaults: dict = DEFAULT_SYSTEM) -> SystemParams:
        return system_from(self.raw.get("system"), defaults)

    def workload(self) -> Workload:
        if "workload" not in self.raw:
            raise ConfigError("config needs a 'workload'")
        return workload_from(self.raw["workload"], self.base)

    def family(self, default=Policy.KLSM):
        return family_from(self.raw.get("family", default))

    def solver(self) -> tuple[SolverOptions, Bounds]:
        return solver_from(self.raw.get("solver"), self.seed)

    def path(self, key: str) -> Path | None:
        v = self.raw.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() or self.base is None else self.base / p


def config_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
