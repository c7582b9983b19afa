"""Command-line entry point.

Every subcommand reads an optional JSON config, writes its outputs under
``--out`` and stamps each output with the config hash and seed. Timestamps
only go to the sidecar ``run.log``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import (
    DESK_SYSTEM,
    FAMILY_CHOICES,
    ConfigError,
    RunConfig,
    system_from,
    workload_from,
)
from .cost_model import LsmDesign, Policy, SystemParams, Workload, cost_vector, total_cost
from .errors import SolverFailed
from .evaluator import (
    DEFAULT_RHOS,
    DRIFT_FAMILIES,
    RECORD_HEADER,
    drift_experiment,
    rho_sweep,
    sweep_summary,
)
from .nominal import TuningProblem, solve_nominal
from .robust import UncertaintyRegion, kl_divergence, rho_from_history, solve_robust
from .simulator import SimTree, bulk_load, sim_run_session

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("lsmtune")


# ------------------------------------------------------------------ output


class Output:
    def __init__(self, out: str | Path, cfg: RunConfig):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.stamp = {"config_hash": cfg.hash, "seed": cfg.seed}

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        body = dict(self.stamp)
        body.update(payload)
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        log.info("wrote %s", path)
        return path

    def csv(self, name: str, header, rows) -> Path:
        path = self.dir / name
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(list(header) + ["config_hash", "seed"])
            tail = [self.stamp["config_hash"], self.stamp["seed"]]
            for row in rows:
                w.writerow(list(row) + tail)
        log.info("wrote %s", path)
        return path


class _Stamped:
    """csv writer that appends the config hash and seed to every row."""

    def __init__(self, writer, tail):
        self.writer = writer
        self.tail = tail

    def writerow(self, row):
        self.writer.writerow(list(row) + self.tail)


def design_json(d: LsmDesign, sys: SystemParams) -> dict:
    return {
        "T": d.T,
        "m_filt_bits": d.m_filt,
        "bits_per_entry": d.m_filt / sys.N,
        "m_buf_bits": sys.m - d.m_filt,
        "K": list(d.K),
        "policy": d.policy.value,
        "levels": d.levels,
        "costs": dict(zip(("Z0", "Z1", "Q", "W"), cost_vector(d, sys).as_tuple())),
    }


def _status_json(s) -> dict:
    return {"converged": s.converged, "iterations": s.iterations, "starts": s.starts,
            "converged_starts": s.converged_starts}


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# ------------------------------------------------------------------ commands


def cmd_tune_nominal(cfg: RunConfig, out: Output, args) -> None:
    sys_ = cfg.system()
    opts, bounds = cfg.solver()
    wl = cfg.workload()
    res = solve_nominal(TuningProblem(wl, sys_, cfg.family(), bounds, opts))
    out.json("nominal.json", {
        "workload": list(wl.as_tuple()),
        "design": design_json(res.design, sys_),
        "deployed_design": design_json(res.deployed_design, sys_),
        "objective": res.objective,
        "deployed_objective": res.deployed_objective,
        "rounding_gap": res.rounding_gap,
        "rounding_flagged": res.rounding_flagged,
        "solver_status": _status_json(res.solver_status),
    })


def _history_matrix(path: Path) -> np.ndarray:
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.empty((0, 4))
    keys = ("z0", "z1", "q", "w")
    if all(k in rows[0] for k in keys):
        M = np.array([[float(r[k]) for k in keys] for r in rows])
    elif all(f"count_{k}" in rows[0] for k in keys):
        M = np.array([[float(r[f"count_{k}"]) for k in keys] for r in rows])
    else:
        raise ConfigError(f"{path}: history needs z0,z1,q,w or count_* columns")
    sums = M.sum(axis=1, keepdims=True)
    if np.any(sums <= 0) or np.any(M < 0):
        raise ConfigError(f"{path}: every history row needs non-negative values with a positive sum")
    return M / sums


def _rho(cfg: RunConfig, args) -> float:
    rho = cfg.get("rho", 0.0)
    if rho == "estimate":
        hist = getattr(args, "history", None) or cfg.path("history")
        if hist is None:
            raise ConfigError("rho='estimate' needs a history file")
        return rho_from_history(_history_matrix(Path(hist)))
    try:
        return float(rho)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rho must be a number or 'estimate', got {rho!r}") from exc


def cmd_tune_robust(cfg: RunConfig, out: Output, args) -> None:
    sys_ = cfg.system()
    opts, bounds = cfg.solver()
    wl = cfg.workload()
    rho = _rho(cfg, args)
    res = solve_robust(UncertaintyRegion(wl, rho), sys_, cfg.family(), bounds, opts)
    out.json("robust.json", {
        "workload": list(wl.as_tuple()),
        "rho": rho,
        "design": design_json(res.design, sys_),
        "deployed_design": design_json(res.deployed_design, sys_),
        "lambda": res.lam,
        "eta": res.eta,
        "objective": res.dual_objective,
        "deployed_objective": res.deployed_dual_objective,
        "expected_cost": total_cost(wl, res.design, sys_),
        "delegated_to_nominal": res.delegated,
        "solver_status": _status_json(res.solver_status),
    })


def cmd_estimate_rho(cfg: RunConfig, out: Output, args) -> None:
    hist = args.history or cfg.path("history")
    if hist is None:
        raise ConfigError("estimate-rho needs --history or a 'history' entry in the config")
    M = _history_matrix(Path(hist))
    payload = {"rho": rho_from_history(M), "n_history": int(M.shape[0])}
    if cfg.get("expected") is not None and cfg.get("offperiod") is not None:
        payload["rho_pair"] = kl_divergence(workload_from(cfg.get("offperiod")),
                                            workload_from(cfg.get("expected")))
    out.json("rho.json", payload)
    print(json.dumps(payload))


def _bench(cfg: RunConfig) -> bench_mod.BenchmarkSet:
    spec = cfg.get("bench", {}) or {}
    if spec.get("file"):
        path = Path(spec["file"])
        if cfg.base is not None and not path.is_absolute():
            path = cfg.base / path
        if path.suffix == ".json":
            return bench_mod.BenchmarkSet.from_json(path.read_text(encoding="utf-8"))
        return bench_mod.BenchmarkSet.from_csv(path)
    return bench_mod.sample_benchmark(int(spec.get("seed", cfg.seed)),
                                      int(spec.get("size", bench_mod.DEFAULT_BENCH_SIZE)))


def cmd_bench_gen(cfg: RunConfig, out: Output, args) -> None:
    b = _bench(cfg)
    out.csv("bench.csv", bench_mod.CSV_HEADER,
            ([repr(float(x)) for x in f] + [int(c) for c in cnt]
             for f, cnt in zip(b.matrix.tolist(), b.counts.tolist())))
    out.json("bench.json", json.loads(b.to_json()))


def _centers(cfg: RunConfig) -> list[tuple[int, Workload]]:
    table = bench_mod.expected_workloads()
    ids = cfg.get("centers")
    if ids is None:
        return [(e.index, e.workload) for e in table]
    out = []
    for i, c in enumerate(ids):
        if isinstance(c, int):
            out.append((c, workload_from(c)))
        else:
            out.append((1000 + i, workload_from(c, cfg.base)))
    return out


def _sweep_cell(job):
    cid, center, sys_, rhos, M, family, opts = job
    return rho_sweep(center, sys_, rhos, M, family, opts, center_id=cid)


def cmd_evaluate_sweep(cfg: RunConfig, out: Output, args) -> None:
    sys_ = cfg.system()
    opts, _ = cfg.solver()
    family = cfg.family(default="classic")
    rhos = tuple(float(r) for r in cfg.get("rhos", DEFAULT_RHOS))
    M = _bench(cfg).matrix
    jobs = [(cid, c, sys_, rhos, M, family, opts) for cid, c in _centers(cfg)]
    if args.parallelism > 1:
        with ProcessPoolExecutor(max_workers=args.parallelism) as ex:
            results = list(ex.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    results.sort(key=lambda r: r.center_id)

    n = 0
    path = out.dir / "records.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(RECORD_HEADER + ("config_hash", "seed"))
        stamped = _Stamped(w, [out.stamp["config_hash"], out.stamp["seed"]])
        for r in results:
            n += r.write_rows(stamped)
    log.info("wrote %d comparison rows to %s", n, path)

    summary = sweep_summary(results)
    out.csv("summary.csv", ("center_id", "rho", "mean_delta", "median_delta", "theta_nominal",
                            "theta_robust"),
            ([s["center_id"], repr(s["rho"]), _fmt(s["mean_delta"]), _fmt(s["median_delta"]),
              _fmt(s["theta_nominal"]), _fmt(s["theta_robust"])] for s in summary))
    out.json("designs.json", {
        "rows": n,
        "centers": [{
            "center_id": r.center_id,
            "center": list(r.center.as_tuple()),
            "nominal": design_json(r.nominal, sys_),
            "robust": [None if d is None else dict(design_json(d, sys_), rho=rho)
                       for d, rho in zip(r.robust, r.rhos)],
            "errors": {repr(k): v for k, v in r.errors.items()},
        } for r in results],
    })


def cmd_drift(cfg: RunConfig, out: Output, args) -> None:
    sys_ = cfg.system(DESK_SYSTEM)
    opts, _ = cfg.solver()
    center_spec = cfg.get("center", 7)
    center = workload_from(center_spec, cfg.base)
    fams = [Policy(f) for f in cfg.get("families", [p.value for p in DRIFT_FAMILIES])]
    robust_family = cfg.family()
    table = drift_experiment(center, sys_, _bench(cfg), fams, float(cfg.get("rho", 2.0)),
                             robust_family, opts, int(cfg.get("bins", 20)))
    rows = table.rows()
    names = list(table.curves)
    out.csv("drift.csv", ["bin", "kl_lo", "kl_hi", "kl_mean"] + names,
            ([r["bin"]] + [repr(r[k]) for k in ["kl_lo", "kl_hi", "kl_mean"] + names] for r in rows))
    out.json("drift_designs.json", {
        "center": list(center.as_tuple()),
        "rho": table.rho,
        "designs": {k: design_json(d, sys_) for k, d in table.designs.items()},
        "increase": {k: table.increase(k) for k in names},
    })


def _sim_design(cfg: RunConfig, sys_: SystemParams) -> LsmDesign:
    spec = cfg.get("design")
    if spec is None:
        opts, bounds = cfg.solver()
        return solve_nominal(TuningProblem(cfg.workload(), sys_, cfg.family(), bounds,
                                           opts)).deployed_design
    T = float(spec["T"])
    if "m_filt" in spec:
        m_filt = float(spec["m_filt"])
    else:
        m_filt = float(spec.get("bits_per_entry", 5.0)) * sys_.N
    policy = Policy(spec.get("policy", "klsm" if "K" in spec else "leveling"))
    return LsmDesign.from_policy(policy, T, m_filt, sys_, k_upper=spec.get("k_upper"),
                                 k_last=spec.get("k_last"), K=spec.get("K"))


def cmd_simulate(cfg: RunConfig, out: Output, args) -> None:
    sys_ = system_from(cfg.get("system"), DESK_SYSTEM)
    design = _sim_design(cfg, sys_)
    sspec = dict(cfg.get("session", {}) or {})
    category = sspec.get("category", "expected")
    center = workload_from(sspec.get("center", cfg.get("workload", 0)), cfg.base)
    b = _bench(cfg)
    session = bench_mod.generate_session(
        category, center, b, int(sspec.get("n_workloads", bench_mod.DEFAULT_SESSION_WORKLOADS)),
        cfg.seed, int(sspec.get("queries_per_workload", bench_mod.DEFAULT_QUERIES)))
    tree = SimTree(design, sys_, seed=cfg.seed)
    tracker = bulk_load(tree, int(sys_.N), seed=cfg.seed)
    reports = sim_run_session(tree, session, seed=cfg.seed, tracker=tracker,
                              update_ratio=float(sspec.get("update_ratio", 0.0)))
    model = cost_vector(design, sys_).as_tuple()
    header = RECORD_HEADER + ("source", "io_z0", "io_z1", "io_q", "io_w", "synthetic")
    rows = []
    for i, (sw, rep) in enumerate(zip(session.workloads, reports)):
        wl = sw.workload
        kl = kl_divergence(wl, center)
        model_cost = total_cost(wl, design, sys_)
        sim = rep.as_tuple()
        sim_cost = sum(f * (s if s is not None else m) for f, s, m in zip(wl.as_tuple(), sim, model))
        for source, cost, per in (("model", model_cost, model), ("simulator", sim_cost, sim)):
            rows.append([i, "", *map(repr, wl.as_tuple()), repr(kl), repr(cost), "", "", source,
                         *(_fmt(x) for x in per), int(sw.synthetic)])
    out.csv("session.csv", header, rows)
    out.json("session.json", {
        "design": design_json(design, sys_),
        "session": json.loads(session.to_json()),
        "reports": [{"counts": list(r.counts), "io": list(r.as_tuple()), "counters": r.counters}
                    for r in reports],
    })


COMMANDS = {
    "tune-nominal": cmd_tune_nominal,
    "tune-robust": cmd_tune_robust,
    "estimate-rho": cmd_estimate_rho,
    "bench-gen": cmd_bench_gen,
    "evaluate-sweep": cmd_evaluate_sweep,
    "drift-experiment": cmd_drift,
    "simulate-session": cmd_simulate,
}


# ------------------------------------------------------------------ plumbing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--parallelism", type=int, default=1, help="worker processes")
    common.add_argument("--family", choices=FAMILY_CHOICES, help="layout family to tune")
    parser = argparse.ArgumentParser(prog="lsmtune", description="LSM tree tuning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("estimate-rho", "tune-robust"):
            p.add_argument("--history", help="CSV of past workloads")
    return parser


def _setup_logging(out: Path | None) -> None:
    level = os.environ.get("ENDURE_LOG", "WARNING").upper()
    log.setLevel(logging.DEBUG)
    log.handlers.clear()
    log.propagate = False
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(getattr(logging, level, logging.WARNING))
    err.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(err)
    if out is not None:
        side = logging.FileHandler(out / "run.log", encoding="utf-8")
        side.setLevel(logging.INFO)
        side.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        log.addHandler(side)


def _fail(code: int, exc: BaseException) -> int:
    kind = {EXIT_CONFIG: "config", EXIT_SOLVER: "solver", EXIT_IO: "io"}[code]
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc),
                      "exit_code": code}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"seed": args.seed, "family": args.family}
        cfg = RunConfig.load(args.config, overrides)
        cfg.seed  # validate early
        out = Output(args.out, cfg)
        _setup_logging(out.dir)
        log.info("%s config_hash=%s seed=%s", args.command, cfg.hash, cfg.seed)
        COMMANDS[args.command](cfg, out, args)
    except SolverFailed as exc:
        return _fail(EXIT_SOLVER, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_CONFIG, exc)
    finally:
        for h in list(log.handlers):
            h.close()
            log.removeHandler(h)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
