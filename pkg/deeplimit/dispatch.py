"""
Command table: each command runs one harness driver, writes its CSV tables
under <out>/<command>/, then a manifest.json naming the exact resolved config
and a timings.json sidecar. Runs are recorded in the database when possible.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
from django.conf import settings

from .constants import COMMANDS, DEFAULT_OUTPUT_DIR
from .exceptions import ConfigError, DeepLimitError
from .runconfig import RunConfig
from .services import adjoint, continuum, harness, io, network
from .services.optimize import MultistartResult, multistart_params
from .services.spaces import params_to_json, restrict_cell_average, restrict_nodal
from .tasks import run_ladder_levels

logger = logging.getLogger(__name__)

USAGE = (
    "usage: manage.py deeplimit {" + ",".join(COMMANDS) + "} --config PATH "
    "[--out DIR] [--seed U64] [--threads N]"
)


@dataclass
class DriverOutcome:
    outputs: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    timings: Dict[str, Any] = field(default_factory=dict)
    status: int = 0

    def write_csv(self, out: Path, name: str, rows: List[Dict[str, Any]], fieldnames=None) -> None:
        io.write_csv(out / name, rows, fieldnames)
        self.outputs.append(name)

    def write_json(self, out: Path, name: str, obj: Any) -> None:
        io.write_json(out / name, obj)
        self.outputs.append(name)


Driver = Callable[[RunConfig, Path], DriverOutcome]


# -- training ------------------------------------------------------------------------


def _write_training(out: Path, outcome: DriverOutcome, ms: MultistartResult, breakdown: network.ObjectiveBreakdown, size: int) -> None:
    best = ms.best
    outcome.write_json(out, "params.json", params_to_json(best.x))
    outcome.write_csv(out, "trace.csv", best.trace, ["iter", "objective", "grad_norm", "step"])
    outcome.write_csv(
        out,
        "starts.csv",
        [
            {"start": k, "initial_objective": r.initial_objective, "final_objective": r.final_objective,
             "iterations": r.iterations, "converged": r.converged, "best": k == ms.best_index}
            for k, r in enumerate(ms.results)
        ],
    )
    row = {"layers": size, **breakdown.as_dict(), "iterations": best.iterations, "converged": best.converged,
           "grad_norm": best.grad_norm_history[-1]}
    outcome.write_csv(out, "objective.csv", [row])
    outcome.summary.update(objective=breakdown.total, iterations=best.iterations, converged=best.converged)


def _train_discrete(cfg: RunConfig, out: Path) -> DriverOutcome:
    data = cfg.training_set()
    hyper, sigma, h = cfg.hyper(), cfg.activation(), cfg.classifier()
    n = cfg["train"]["n"]

    def fun(theta):
        return adjoint.value_and_gradient_En(theta, data, hyper, sigma, h)

    ms = multistart_params(fun, harness.zero_params(n, data.d, data.m), cfg.optimizer(), workers=cfg.threads or 1)
    outcome = DriverOutcome()
    _write_training(out, outcome, ms, network.objective_En(ms.best.x, data, hyper, sigma, h), n)
    return outcome


def _train_continuum(cfg: RunConfig, out: Path) -> DriverOutcome:
    data = cfg.training_set()
    hyper, sigma, h, solver = cfg.hyper(), cfg.activation(), cfg.classifier(), cfg.solver()
    nodes = cfg["train"]["continuum_nodes"]

    def fun(theta):
        return continuum.value_and_gradient_Einf(theta, data, hyper, sigma, h, solver)

    ms = multistart_params(
        fun, harness.zero_params(nodes, data.d, data.m, discrete=False), cfg.optimizer(), workers=cfg.threads or 1
    )
    outcome = DriverOutcome()
    _write_training(out, outcome, ms, continuum.objective_Einf(ms.best.x, data, hyper, sigma, h, solver), nodes)
    traj = continuum.ode_solve(data.inputs, ms.best.x.K, ms.best.x.b, sigma, solver)
    outcome.write_csv(out, "trajectory.csv", continuum.trajectory_to_rows(traj))
    return outcome


# -- ladder --------------------------------------------------------------------------


def _ladder(cfg: RunConfig, out: Path) -> DriverOutcome:
    data = cfg.training_set()
    lc = cfg.ladder()
    workers = cfg.threads or 1
    result = harness.ladder_run(lc, data, map_levels=partial(run_ladder_levels, workers=workers), workers=workers)
    outcome = DriverOutcome()
    outcome.write_csv(out, "ladder.csv", [r.as_row() for r in result.records], harness.LadderRecord.CSV_FIELDS)
    outcome.write_json(out, "level_params.json", {str(n): p for n, p in sorted(result.level_params.items())})

    fits = []
    if result.continuum_params is not None:
        outcome.write_json(out, "continuum_params.json", params_to_json(result.continuum_params))
    if result.continuum_params is not None and not result.continuum_error:
        gap_rows, gap_fit = harness.discrete_recovery_gap(
            result.continuum_params, data, lc.hyper, cfg.activation(), cfg.classifier(), lc.n_values, lc.solver
        )
        outcome.write_csv(out, "recovery_gap.csv", gap_rows, ["n", "e_n", "e_inf", "gap"])
        if gap_fit is not None:
            fits.append({"quantity": "recovery_gap", **gap_fit.as_dict()})
    if result.distance_fit is not None:
        fits.insert(0, {"quantity": "distance", **result.distance_fit.as_dict()})
        # unproven rate, reported only
        logger.info("Ladder distance rate: slope=%.4f r2=%.4f", result.distance_fit.slope, result.distance_fit.r2)
    outcome.write_csv(out, "rate_fit.csv", fits, ["quantity", "slope", "intercept", "r2", "points"])

    failed = [r.n for r in result.records if r.error]
    outcome.summary.update(
        continuum_objective=result.continuum_objective.total if result.continuum_objective else None,
        continuum_iterations=result.continuum_iterations,
        continuum_converged=result.continuum_converged,
        continuum_error=result.continuum_error,
        distance_slope=result.distance_fit.slope if result.distance_fit else None,
        failed_levels=failed,
    )
    outcome.timings["levels"] = {str(r.n): r.wall_time for r in result.records}
    if failed:
        logger.error("Ladder levels failed: %s", failed)
        outcome.status = 1
    return outcome


# -- probes --------------------------------------------------------------------------


def _probe_input(probe: Dict[str, Any]) -> np.ndarray:
    if probe.get("x") is not None:
        return np.asarray(probe["x"], dtype=float)
    return np.full(probe["d"], 0.5)


def _euler_bound(cfg: RunConfig, out: Path) -> DriverOutcome:
    probe = cfg["probe"]
    K, b = harness.probe_paths(probe)
    x = _probe_input(probe)
    sigma = cfg.activation()
    detail: List[Dict[str, Any]] = []
    summary: List[Dict[str, Any]] = []
    prev_sup = prev_gap = None
    violations = 0
    errors = 0
    for n in probe["n_values"]:
        row: Dict[str, Any] = {"n": n}
        try:
            Kn, bn = restrict_nodal(K, n), restrict_nodal(b, n)
            rep = harness.euler_bound_check(K, b, Kn, bn, x, sigma)
            gap = harness.trajectory_gap(K, b, Kn, bn, x, sigma)
        except DeepLimitError as e:
            logger.exception("Euler bound check failed for n=%d", n)
            row["error"] = f"{type(e).__name__}: {e}"
            errors += 1
            summary.append(row)
            continue
        detail.extend(rep.rows())
        sup = float(np.max(rep.lhs))
        row.update(
            sup_lhs=sup,
            halving_ratio=prev_sup / sup if prev_sup and sup > 0 else math.nan,
            violations=rep.violations,
            delta_n=rep.delta_n,
            k_sup=rep.k_sup,
            x_sup=rep.x_sup,
            remainder=rep.remainder,
            d_n=rep.d_n,
            trajectory_gap=gap,
            gap_ratio=prev_gap / gap if prev_gap and gap > 0 else math.nan,
        )
        violations += rep.violations
        prev_sup, prev_gap = sup, gap
        summary.append(row)

    outcome = DriverOutcome()
    outcome.write_csv(out, "euler_bound.csv", detail, ["n", "i", "lhs", "rhs", "holds"])
    outcome.write_csv(
        out,
        "euler_summary.csv",
        summary,
        ["n", "sup_lhs", "halving_ratio", "violations", "delta_n", "k_sup", "x_sup", "remainder", "d_n",
         "trajectory_gap", "gap_ratio", "error"],
    )
    outcome.summary.update(violations=violations, failed_levels=errors)
    outcome.status = 1 if violations or errors else 0
    return outcome


def _grad_check(cfg: RunConfig, out: Path) -> DriverOutcome:
    gc = cfg["grad_check"]
    rows, fd_rows = harness.run_grad_check(
        gc["n"], gc["d"], gc["m"], gc["samples"], gc["instances"],
        cfg.hyper(), cfg.activation(), cfg.classifier(), gc["steps"], cfg.seed,
        solver=cfg.solver(), continuum_nodes=gc["continuum_nodes"], directions=gc["directions"],
    )
    outcome = DriverOutcome()
    outcome.write_csv(
        out,
        "grad_check.csv",
        rows,
        ["instance", "kind", "fd_rel_error", "fd_slope", "forward_reverse_rel", "remainder_slope", "error"],
    )
    outcome.write_csv(out, "fd_check.csv", fd_rows, ["instance", "r", "error"])

    def worst(kind: str, key: str) -> Optional[float]:
        vals = [r[key] for r in rows if r["kind"] == kind and key in r]
        return max(vals) if vals else None

    failed = sum(1 for r in rows if r.get("error"))
    outcome.summary.update(
        max_fd_rel_error=worst("discrete", "fd_rel_error"),
        max_forward_reverse_rel=worst("discrete", "forward_reverse_rel"),
        max_continuum_fd_rel_error=worst("continuum", "fd_rel_error"),
        failed_instances=failed,
    )
    outcome.status = 1 if failed else 0
    return outcome


def _recovery_check(cfg: RunConfig, out: Path) -> DriverOutcome:
    probe = cfg["probe"]
    K, _ = harness.probe_paths(probe)
    rows = harness.recovery_check(K, cfg.hyper().taus[0], probe["recovery_n_values"])
    for row in rows:
        n = row["n"]
        row["smoothness"] = harness.smoothness_diagnostic(restrict_cell_average(K, n)).normalized if n >= 3 else math.nan
    outcome = DriverOutcome()
    outcome.write_csv(out, "recovery.csv", rows, ["n", "r1n", "r1inf", "d1", "d1_bound", "within_bound", "smoothness"])
    outside = [r["n"] for r in rows if not r["within_bound"]]
    outcome.summary.update(outside_bound=outside, r1inf=rows[0]["r1inf"] if rows else None)
    return outcome


def _morrey_sweep(cfg: RunConfig, out: Path) -> DriverOutcome:
    mc = cfg["morrey"]
    rows = harness.morrey_sweep(mc["count"], mc["max_n"], mc["max_d"], cfg.seed)
    outcome = DriverOutcome()
    outcome.write_csv(out, "morrey.csv", rows, ["index", "n", "d", "flavor", "lhs", "rhs", "holds"])
    failures = sum(1 for r in rows if not r["holds"])
    outcome.summary.update(paths=len(rows), failures=failures)
    outcome.status = 1 if failures else 0
    return outcome


def _rate_fit(cfg: RunConfig, out: Path) -> DriverOutcome:
    rc = cfg["rate_fit"]
    if not rc["source"]:
        raise ConfigError("rate-fit needs a source CSV", key="rate_fit.source")
    pairs = io.read_pairs(Path(rc["source"]), rc["n_column"], rc["value_column"])
    fit = harness.rate_fit(pairs)
    outcome = DriverOutcome()
    outcome.write_csv(
        out,
        "rate_fit.csv",
        [{"source": rc["source"], "column": rc["value_column"], **fit.as_dict()}],
        ["source", "column", "slope", "intercept", "r2", "points"],
    )
    outcome.summary.update(fit.as_dict())
    return outcome


DRIVERS: Dict[str, Driver] = {
    "train-discrete": _train_discrete,
    "train-continuum": _train_continuum,
    "ladder": _ladder,
    "euler-bound": _euler_bound,
    "grad-check": _grad_check,
    "recovery-check": _recovery_check,
    "morrey-sweep": _morrey_sweep,
    "rate-fit": _rate_fit,
}


# -- dispatch ------------------------------------------------------------------------


def output_root(cfg: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> Path:
    if out_dir:
        return Path(out_dir)
    if cfg.output_dir is not None:
        return cfg.output_dir
    return Path(getattr(settings, "DEEPLIMIT_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


def _record_run(command: str, cfg: RunConfig, target: Path, status: int, manifest: Dict[str, Any],
                timings: Dict[str, Any], error: str) -> None:
    try:
        from .models import ExperimentRun

        ExperimentRun.objects.create(
            command=command,
            experiment=cfg.experiment,
            config_hash=manifest["config_hash"],
            seed=str(cfg.seed),
            output_dir=str(target),
            status=ExperimentRun.STATUS_SUCCEEDED if status == 0 else ExperimentRun.STATUS_FAILED,
            exit_code=status,
            manifest=io.jsonable(manifest),
            timings=io.jsonable(timings),
            error=error,
        )
    except Exception:
        logger.exception("Could not record the %s run in the database (outputs are on disk)", command)


def dispatch(
    command: str,
    cfg: RunConfig,
    out_dir: Optional[Union[str, Path]] = None,
    threads: Optional[int] = None,
) -> int:
    """
    Run one command. Returns 0 on success, 1 when the driver failed or reported
    failing checks, 2 for an unknown command.
    """
    if command not in DRIVERS:
        logger.error("Unknown command %r. %s", command, USAGE)
        return 2

    threads = threads or cfg.threads or int(getattr(settings, "DEEPLIMIT_THREADS", 1) or 1)
    cfg = cfg.with_threads(threads)
    target = output_root(cfg, out_dir) / command
    target.mkdir(parents=True, exist_ok=True)
    logger.info("Running %s (experiment=%s seed=%d) into %s", command, cfg.experiment, cfg.seed, target)

    started = time.perf_counter()
    error = ""
    try:
        outcome = DRIVERS[command](cfg, target)
    except (DeepLimitError, ValueError, KeyError, OSError) as e:
        logger.exception("Command %s failed", command)
        error = f"{type(e).__name__}: {e}"
        outcome = DriverOutcome(status=1)
    elapsed = time.perf_counter() - started

    manifest = {
        "command": command,
        "experiment": cfg.experiment,
        "config": cfg.values,
        "config_hash": io.config_hash(cfg.values),
        "seed": cfg.seed,
        "versions": io.library_versions(),
        "outputs": sorted(outcome.outputs),
        "summary": outcome.summary,
        "status": outcome.status,
        "error": error,
    }
    io.write_json(target / "manifest.json", manifest)
    timings = {"wall_time_s": elapsed, "threads": threads, **outcome.timings}
    io.write_json(target / "timings.json", timings)
    _record_run(command, cfg, target, outcome.status, manifest, timings, error)

    if outcome.status:
        logger.error("Command %s finished with status %d%s", command, outcome.status, f": {error}" if error else "")
    else:
        logger.info("Command %s finished in %.2fs", command, elapsed)
    return outcome.status
