"""
Deterministic first-order minimisation: gradient descent with Armijo
backtracking and optional heavy-ball momentum, or scipy's L-BFGS-B for the
ill-conditioned continuum problems, plus seeded multistart.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, List, Optional, Tuple, TypeVar

import numpy as np
from scipy import optimize as sp_optimize

from ..constants import (
    DEFAULT_ARMIJO_C1,
    DEFAULT_BACKTRACK,
    DEFAULT_GRAD_TOL,
    DEFAULT_INIT_AMPLITUDE,
    DEFAULT_INITIAL_STEP,
    DEFAULT_MAX_BACKTRACKS,
    DEFAULT_MAX_ITERS,
    DEFAULT_MOMENTUM,
    DEFAULT_MULTISTART,
    DEFAULT_OPTIMIZE_METHOD,
    DEFAULT_STEP_GROWTH,
    LBFGS_MEMORY,
    OPTIMIZE_METHODS,
)
from ..exceptions import LineSearchError, NumericalBlowupError
from .spaces import ParamSet

logger = logging.getLogger(__name__)

ValueAndGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]

# cap on the trial step relative to initial_step
_MAX_STEP_RATIO = 1e6


@dataclass(frozen=True)
class OptimizeConfig:
    max_iters: int = DEFAULT_MAX_ITERS
    grad_tol: float = DEFAULT_GRAD_TOL
    armijo_c1: float = DEFAULT_ARMIJO_C1
    backtrack: float = DEFAULT_BACKTRACK
    initial_step: float = DEFAULT_INITIAL_STEP
    step_growth: float = DEFAULT_STEP_GROWTH
    momentum: float = DEFAULT_MOMENTUM
    max_backtracks: int = DEFAULT_MAX_BACKTRACKS
    multistart: int = DEFAULT_MULTISTART
    seed: int = 0
    method: str = DEFAULT_OPTIMIZE_METHOD

    def __post_init__(self) -> None:
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if not 0.0 < self.armijo_c1 < 1.0:
            raise ValueError("armijo_c1 must lie in (0, 1)")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if self.step_growth < 1.0:
            raise ValueError("step_growth must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_backtracks < 1 or self.multistart < 1:
            raise ValueError("max_backtracks and multistart must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.method not in OPTIMIZE_METHODS:
            raise ValueError(f"unknown optimizer method {self.method!r}; expected one of {OPTIMIZE_METHODS}")


@dataclass
class OptimizeResult:
    x: Any
    final_objective: float
    iterations: int
    converged: bool
    grad_norm_history: List[float] = field(default_factory=list)
    objective_history: List[float] = field(default_factory=list)
    trace: List[dict] = field(default_factory=list)

    @property
    def initial_objective(self) -> float:
        return self.objective_history[0]


@dataclass
class MultistartResult:
    best: OptimizeResult
    results: List[OptimizeResult]
    best_index: int


def _safe_eval(fun: ValueAndGrad, x: np.ndarray) -> Tuple[float, Optional[np.ndarray]]:
    try:
        f, g = fun(x)
    except (NumericalBlowupError, FloatingPointError, OverflowError):
        return np.inf, None
    f = float(f)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return np.inf, None
    return f, np.asarray(g, dtype=float)


def minimize(fun: ValueAndGrad, x0: np.ndarray, cfg: OptimizeConfig) -> OptimizeResult:
    """
    Minimise from x0. fun(x) returns (value, gradient) on flat vectors.

    Every accepted step satisfies f(x + t d) <= f(x) + c1 t <g, d>, so the
    objective history never increases. Trials with non-finite values count as
    failed trials; exhausting max_backtracks raises LineSearchError.
    With cfg.method == "lbfgs" the work is handed to scipy's L-BFGS-B.
    """
    if cfg.method == "lbfgs":
        return _minimize_lbfgs(fun, x0, cfg)
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalBlowupError("non-finite objective or gradient at the initial point")

    gnorm = float(np.linalg.norm(g))
    objective_history = [f]
    grad_history = [gnorm]
    trace = [{"iter": 0, "objective": f, "grad_norm": gnorm, "step": 0.0}]
    step = cfg.initial_step
    max_step = cfg.initial_step * _MAX_STEP_RATIO
    prev_dir: Optional[np.ndarray] = None
    iterations = 0

    while gnorm > cfg.grad_tol and iterations < cfg.max_iters:
        direction = -g
        if cfg.momentum > 0.0 and prev_dir is not None:
            direction = -g + cfg.momentum * prev_dir
            if float(np.dot(direction, g)) >= 0.0:
                direction = -g
        slope = float(np.dot(g, direction))

        t = step
        for _ in range(cfg.max_backtracks + 1):
            f_new, g_new = _safe_eval(fun, x + t * direction)
            if g_new is not None and f_new <= f + cfg.armijo_c1 * t * slope:
                break
            t *= cfg.backtrack
        else:
            raise LineSearchError(
                f"no sufficient decrease after {cfg.max_backtracks} backtracks at iteration {iterations + 1} "
                f"(objective {f:.6e}, gradient norm {gnorm:.3e})"
            )

        x = x + t * direction
        f, g = f_new, g_new
        gnorm = float(np.linalg.norm(g))
        prev_dir = direction
        step = min(t * cfg.step_growth, max_step)
        iterations += 1
        objective_history.append(f)
        grad_history.append(gnorm)
        trace.append({"iter": iterations, "objective": f, "grad_norm": gnorm, "step": t})
        if iterations % 100 == 0:
            logger.debug("iter %d: objective=%.10e grad_norm=%.3e step=%.3e", iterations, f, gnorm, t)

    converged = gnorm <= cfg.grad_tol
    logger.info(
        "minimize finished: iterations=%d objective=%.10e grad_norm=%.3e converged=%s",
        iterations, f, gnorm, converged,
    )
    return OptimizeResult(
        x=x,
        final_objective=f,
        iterations=iterations,
        converged=converged,
        grad_norm_history=grad_history,
        objective_history=objective_history,
        trace=trace,
    )


def _minimize_lbfgs(fun: ValueAndGrad, x0: np.ndarray, cfg: OptimizeConfig) -> OptimizeResult:
    """
    L-BFGS-B with scipy's own Wolfe line search. converged means scipy's
    stopping test passed: max |g_j| <= grad_tol or a relative objective
    reduction below its ftol.
    """
    x = np.array(x0, dtype=float)
    f0, g0 = _safe_eval(fun, x)
    if g0 is None:
        raise NumericalBlowupError("non-finite objective or gradient at the initial point")
    gnorm0 = float(np.linalg.norm(g0))
    objective_history = [f0]
    grad_history = [gnorm0]
    trace = [{"iter": 0, "objective": f0, "grad_norm": gnorm0, "step": 0.0}]
    if cfg.max_iters == 0 or gnorm0 <= cfg.grad_tol:
        return OptimizeResult(x, f0, 0, gnorm0 <= cfg.grad_tol, grad_history, objective_history, trace)

    last = {"x": x, "f": f0, "g": g0}

    def evaluate(v: np.ndarray) -> Tuple[float, np.ndarray]:
        f, g = _safe_eval(fun, v)
        if g is None:
            # an infinite value makes the line search back off
            g = np.zeros_like(v)
        last.update(x=np.array(v), f=f, g=g)
        return f, g

    def record(xk: np.ndarray) -> None:
        if not np.array_equal(xk, last["x"]):
            evaluate(xk)
        step = float(np.linalg.norm(last["x"] - trace_x[-1]))
        trace_x.append(last["x"])
        gnorm = float(np.linalg.norm(last["g"]))
        objective_history.append(last["f"])
        grad_history.append(gnorm)
        trace.append({"iter": len(trace), "objective": last["f"], "grad_norm": gnorm, "step": step})

    trace_x = [x]
    res = sp_optimize.minimize(
        evaluate,
        x,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={
            "maxiter": cfg.max_iters,
            "gtol": cfg.grad_tol,
            "maxcor": LBFGS_MEMORY,
            "maxls": cfg.max_backtracks,
        },
    )
    f, g = _safe_eval(fun, res.x)
    if g is None:
        raise NumericalBlowupError("L-BFGS-B stopped at a point with a non-finite objective")
    gnorm = float(np.linalg.norm(g))
    converged = bool(res.success) or gnorm <= cfg.grad_tol
    logger.info(
        "lbfgs finished: iterations=%d objective=%.10e grad_norm=%.3e converged=%s (%s)",
        res.nit, f, gnorm, converged, res.message,
    )
    return OptimizeResult(
        x=np.array(res.x),
        final_objective=f,
        iterations=int(res.nit),
        converged=converged,
        grad_norm_history=grad_history,
        objective_history=objective_history,
        trace=trace,
    )


T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """fn over items on up to `workers` threads; results keep the input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def multistart(
    fun: ValueAndGrad,
    sampler: Callable[[np.random.Generator], np.ndarray],
    count: int,
    cfg: OptimizeConfig,
    workers: int = 1,
) -> MultistartResult:
    """
    count seeded local runs; child generators come from SeedSequence(cfg.seed).
    Starting points are drawn in seed order before any run starts, so the
    runs may go to `workers` threads without changing the result. The lowest
    final objective wins, ties going to the earliest run.
    """
    if count < 1:
        raise ValueError("multistart needs count >= 1")
    children = np.random.SeedSequence(cfg.seed).spawn(count)
    starts = [sampler(np.random.default_rng(child)) for child in children]
    logger.debug("multistart: %d runs on %d worker(s)", count, max(1, workers))
    results = parallel_map(lambda x0: minimize(fun, x0, cfg), starts, workers)
    best_index = min(range(count), key=lambda k: (results[k].final_objective, k))
    return MultistartResult(results[best_index], results, best_index)


# -- ParamSet adapters ---------------------------------------------------------------


def _flat_callback(fun: Callable[[ParamSet], Tuple[Any, ParamSet]], template: ParamSet) -> ValueAndGrad:
    def wrapped(vec: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = fun(template.unflatten(vec))
        return float(value), grad.flatten()

    return wrapped


def minimize_params(
    fun: Callable[[ParamSet], Tuple[Any, ParamSet]],
    theta0: ParamSet,
    cfg: OptimizeConfig,
) -> OptimizeResult:
    """minimize over a ParamSet; fun returns (objective or breakdown, gradient ParamSet)."""
    result = minimize(_flat_callback(fun, theta0), theta0.flatten(), cfg)
    return replace(result, x=theta0.unflatten(result.x))


def default_sampler(template: ParamSet, amplitude: float = DEFAULT_INIT_AMPLITUDE) -> Callable[[np.random.Generator], np.ndarray]:
    """Zero parameters plus uniform noise in [-amplitude, amplitude] per entry (flat)."""

    def sample(rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-amplitude, amplitude, template.size)

    return sample


def multistart_params(
    fun: Callable[[ParamSet], Tuple[Any, ParamSet]],
    template: ParamSet,
    cfg: OptimizeConfig,
    amplitude: float = DEFAULT_INIT_AMPLITUDE,
    workers: int = 1,
) -> MultistartResult:
    out = multistart(
        _flat_callback(fun, template), default_sampler(template, amplitude), cfg.multistart, cfg, workers=workers
    )
    results = [replace(r, x=template.unflatten(r.x)) for r in out.results]
    return MultistartResult(results[out.best_index], results, out.best_index)
