"""Benchmark command line: single solves, parameter sweeps, CSV validation.

Subcommands:
    solve <config.json> [--trace out.csv]   one instance, summary on stdout
    sweep <experiment.json>                 (sweep value, seed) grid -> CSV
    validate <results.csv>                  re-check recorded invariants
    oracle <config.json>                    grid-search reference (tiny only)

Exit codes: 0 success, 1 validation findings, 2 config error, 3 I/O error.
Relative output paths resolve against $MMFBEAM_OUTDIR when set.

All CSV columns except wall_time_s are deterministic for a fixed spec; floats
are printed with 12 significant digits.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import time

import numpy as np

from . import kernels, oracle, siso, wmmf
from .scenario import ScenarioError, scenario_from_config
from .wmmf import NumericalFailure

CSV_COLUMNS = [
    "sweep_name",
    "sweep_value",
    "seed",
    "solver",
    "status",
    "r_c",
    "min_rate",
    "total_power",
    "power_budget",
    "iterations",
    "max_kkt_residual",
    "wall_time_s",
]

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _fmt(x) -> str:
    if isinstance(x, float):
        return "%.12g" % x
    return str(x)


def _out_path(path: str) -> str:
    base = os.environ.get("MMFBEAM_OUTDIR", "")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise SystemExit(_fail(EXIT_IO, "cannot read %s: %s" % (path, exc)))
    except json.JSONDecodeError as exc:
        raise SystemExit(_fail(EXIT_CONFIG, "invalid JSON in %s line %d: %s" % (path, exc.lineno, exc.msg)))


def _fail(code: int, message: str) -> int:
    print("error: %s" % message, file=sys.stderr)
    return code


def _solver_config(cfg: dict) -> wmmf.SolverConfig:
    opts = dict(cfg.get("solver", {}))
    opts.pop("type", None)
    return wmmf.SolverConfig(**opts)


def _siso_config(cfg: dict) -> siso.SisoConfig:
    opts = dict(cfg.get("solver", {}))
    opts.pop("type", None)
    return siso.SisoConfig(**opts)


def _run_wmmf(scenario, cfg: dict):
    result = wmmf.solve(scenario, _solver_config(cfg))
    rates = kernels.achieved_stream_rates(
        scenario, kernels.mmse_receivers(scenario, result.tx).sinr
    )
    report = oracle.kkt_residuals(scenario, result.tx, result.rx.receivers, result.duals)
    return {
        "r_c": result.r_c,
        "min_rate": float(min(np.min(r) for r in rates)),
        "total_power": result.tx.total_power,
        "iterations": result.trace.inner_iterations,
        "max_kkt_residual": max(report.stationarity, report.max_identity()),
        "trace": result.trace,
    }


def _run_siso(scenario, cfg: dict):
    result = siso.siso_solve(scenario, _siso_config(cfg))
    power = float(np.sum(np.abs(result.beamformers) ** 2))
    return {
        "r_c": float(np.log2(1.0 + result.min_sinr)),
        "min_rate": float(np.log2(1.0 + result.min_sinr)),
        "total_power": power,
        "iterations": result.iterations,
        "max_kkt_residual": max(0.0, power / scenario.power_budget - 1.0),
        "trace": result.trace,
    }


def cmd_solve(args) -> int:
    cfg = _load_json(args.config)
    try:
        scenario = scenario_from_config(cfg)
        kind = cfg.get("solver", {}).get("type", "wmmf")
        if kind == "wmmf":
            row = _run_wmmf(scenario, cfg)
        elif kind == "siso":
            row = _run_siso(scenario, cfg)
        else:
            return _fail(EXIT_CONFIG, "unknown solver type %r" % kind)
    except (ScenarioError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except NumericalFailure as exc:
        return _fail(EXIT_CONFIG, "numerical failure: %s" % exc)

    trace = row.pop("trace")
    print(json.dumps({k: row[k] for k in sorted(row)}, indent=1))
    if args.trace:
        path = _out_path(args.trace)
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                if hasattr(trace, "r_c"):  # multi-stream trace
                    writer.writerow(["iteration", "r_c", "power", "mu", "stationarity"])
                    for i in range(len(trace.r_c)):
                        writer.writerow(
                            [i, _fmt(trace.r_c[i]), _fmt(trace.power[i]),
                             _fmt(trace.mu[i]), _fmt(trace.stationarity[i])]
                        )
                else:
                    writer.writerow(["iteration", "min_sinr", "gamma_common", "power", "mu"])
                    for i in range(len(trace.min_sinr)):
                        writer.writerow(
                            [i, _fmt(trace.min_sinr[i]), _fmt(trace.gamma_common[i]),
                             _fmt(trace.power[i]), _fmt(trace.mu[i])]
                        )
        except OSError as exc:
            return _fail(EXIT_IO, "cannot write trace: %s" % exc)
    return EXIT_OK


def _apply_sweep(template: dict, name: str, value):
    cfg = copy.deepcopy(template)
    if name == "p_t_db":
        cfg["p_t_db"] = value
    elif name == "n_tx":
        cfg["n_tx"] = int(value)
    elif name == "n_rx":
        for g in cfg["groups"]:
            for u in g["users"]:
                u["n_rx"] = int(value)
        cfg.pop("streams_per_group", None)  # default L_g follows N_R
    elif name == "sigma2":
        cfg["sigma2"] = value
    else:
        raise ScenarioError("unknown sweep parameter %r" % name)
    return cfg


def cmd_sweep(args) -> int:
    spec = _load_json(args.experiment)
    try:
        template = spec["template"]
        sweep = spec["sweep"]
        name, values = sweep["name"], list(sweep["values"])
        seeds = list(spec["seeds"])
        solver_kinds = {"wmmf": ["wmmf"], "siso": ["siso"], "both": ["wmmf", "siso"]}[
            spec.get("solver", "wmmf")
        ]
        output = _out_path(spec["output"])
        if not seeds:
            raise KeyError("seeds must be non-empty")
    except (KeyError, TypeError) as exc:
        return _fail(EXIT_CONFIG, "bad experiment spec: %s" % exc)

    try:
        fh = open(output, "w", newline="")
    except OSError as exc:
        return _fail(EXIT_IO, "cannot open %s: %s" % (output, exc))

    with fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        fh.flush()
        for value in values:
            for seed in seeds:
                cfg = _apply_sweep(template, name, value)
                cfg["seed"] = seed
                try:
                    scenario = scenario_from_config(cfg)
                except ScenarioError as exc:
                    return _fail(EXIT_CONFIG, str(exc))
                for kind in solver_kinds:
                    start = time.perf_counter()
                    try:
                        row = _run_wmmf(scenario, cfg) if kind == "wmmf" else _run_siso(scenario, cfg)
                        status = "ok"
                    except (NumericalFailure, kernels.DegenerateDualError) as exc:
                        row = {"r_c": float("nan"), "min_rate": float("nan"),
                               "total_power": float("nan"), "iterations": 0,
                               "max_kkt_residual": float("nan")}
                        status = "failed:%s" % type(exc).__name__
                    wall = time.perf_counter() - start
                    writer.writerow(
                        [
                            name,
                            _fmt(value),
                            seed,
                            kind,
                            status,
                            _fmt(row["r_c"]),
                            _fmt(row["min_rate"]),
                            _fmt(row["total_power"]),
                            _fmt(scenario.power_budget),
                            row["iterations"],
                            _fmt(row["max_kkt_residual"]),
                            _fmt(wall),
                        ]
                    )
                    fh.flush()
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        with open(args.results, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        return _fail(EXIT_IO, "cannot read %s: %s" % (args.results, exc))
    if not rows:
        return _fail(EXIT_CONFIG, "empty results file %s" % args.results)
    if rows[0] != CSV_COLUMNS:
        return _fail(EXIT_CONFIG, "unexpected header in %s" % args.results)

    findings = []
    n_ok = 0
    for idx, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_COLUMNS):
            return _fail(EXIT_CONFIG, "row %d: expected %d fields, got %d" % (idx, len(CSV_COLUMNS), len(row)))
        rec = dict(zip(CSV_COLUMNS, row))
        if rec["status"] != "ok":
            findings.append((idx, "solver failure recorded: %s" % rec["status"]))
            continue
        try:
            power = float(rec["total_power"])
            budget = float(rec["power_budget"])
            residual = float(rec["max_kkt_residual"])
            r_c = float(rec["r_c"])
        except ValueError:
            return _fail(EXIT_CONFIG, "row %d: non-numeric field" % idx)
        if power > budget * (1.0 + 1e-6):
            findings.append((idx, "power %.6g exceeds budget %.6g" % (power, budget)))
        if not residual < 1e-4:
            findings.append((idx, "KKT residual %.3g above ceiling 1e-4" % residual))
        if not np.isfinite(r_c) or r_c < 0:
            findings.append((idx, "objective %r not a non-negative finite value" % rec["r_c"]))
        n_ok += 1

    print("%-8s %-6s" % ("check", "result"))
    print("%-8s %-6s" % ("rows", len(rows) - 1))
    print("%-8s %-6s" % ("clean", "yes" if not findings else "no"))
    for idx, msg in findings:
        print("row %d: %s" % (idx, msg))
    return EXIT_OK if not findings else EXIT_FINDINGS


def cmd_oracle(args) -> int:
    cfg = _load_json(args.config)
    try:
        scenario = scenario_from_config(cfg)
        tx, objective = oracle.grid_search_mmf(scenario, oracle.GridSpec())
    except (ScenarioError, oracle.OracleSizeError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    print(
        json.dumps(
            {
                "objective": objective,
                "group_power": [float(np.sum(np.abs(w) ** 2)) for w in tx.beamformers],
            },
            indent=1,
        )
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mmfbeam", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("config")
    p.add_argument("--trace", help="write per-iteration trace CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a parameter sweep over seeds")
    p.add_argument("experiment")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="re-check invariants recorded in a results CSV")
    p.add_argument("results")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("oracle", help="brute-force reference for tiny instances")
    p.add_argument("config")
    p.set_defaults(func=cmd_oracle)

    args = parser.parse_args(argv)
    code = args.func(args)
    return int(code) if code else 0


if __name__ == "__main__":
    sys.exit(main())
