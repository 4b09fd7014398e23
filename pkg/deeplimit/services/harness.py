"""
Experiment drivers: the n-ladder, the Euler error bound, trajectory gaps,
recovery sequences, the discrete Morrey inequality, smoothness diagnostics,
gradient checks and rate fits.

Drivers return plain records; writing them out is the caller's business.
Every driver catches failures per unit of work, logs them and keeps going.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..constants import DEFAULT_CONTINUUM_MAX_ITERS, DEFAULT_CONTINUUM_METHOD
from ..exceptions import DeepLimitError, ShapeMismatchError
from . import adjoint, continuum, network
from .fitting import FitResult, rate_fit
from .functions import Activation, Classifier, get_activation, get_classifier
from .optimize import OptimizeConfig, minimize_params, multistart_params, parallel_map
from .spaces import (
    ContinuumParamPath,
    DiscreteParamPath,
    ParamSet,
    continuum_from_function,
    d1_distance,
    d2_distance,
    params_from_json,
    params_to_json,
    prolong,
    restrict_cell_average,
    upsample,
)

logger = logging.getLogger(__name__)

__all__ = [
    "LadderConfig",
    "LadderRecord",
    "LadderResult",
    "ladder_run",
    "solve_level",
    "rate_fit",
    "euler_bound_check",
    "trajectory_gap",
    "morrey_property",
    "morrey_sweep",
    "recovery_check",
    "smoothness_diagnostic",
    "discrete_recovery_gap",
    "probe_paths",
    "run_grad_check",
]


def zero_params(n_or_nodes: int, d: int, m: int, discrete: bool = True) -> ParamSet:
    cls = DiscreteParamPath if discrete else ContinuumParamPath
    return ParamSet(
        cls(np.zeros((n_or_nodes, d, d))),
        cls(np.zeros((n_or_nodes, d))),
        np.zeros((m, d)),
        np.zeros(m),
    )


# -- ladder --------------------------------------------------------------------------


@dataclass(frozen=True)
class LadderConfig:
    n_values: Tuple[int, ...]
    continuum_nodes: int
    hyper: network.HyperParams = network.HyperParams()
    activation: str = "tanh"
    classifier: str = "identity"
    optimizer: OptimizeConfig = OptimizeConfig()
    solver: continuum.OdeSolveConfig = continuum.OdeSolveConfig()
    warm_start: bool = True
    continuum_method: str = DEFAULT_CONTINUUM_METHOD
    continuum_max_iters: int = DEFAULT_CONTINUUM_MAX_ITERS

    def __post_init__(self) -> None:
        ns = tuple(int(n) for n in self.n_values)
        if not ns or any(n < 1 for n in ns):
            raise ValueError("ladder needs at least one positive layer count")
        if any(b < a for a, b in zip(ns, ns[1:])):
            raise ValueError(f"ladder n_values must be increasing, got {ns}")
        if self.continuum_nodes < max(ns) + 1:
            raise ValueError(f"continuum_nodes={self.continuum_nodes} must be at least max(n_values) + 1 = {max(ns) + 1}")
        object.__setattr__(self, "n_values", ns)

    @property
    def continuum_optimizer(self) -> OptimizeConfig:
        """The E_inf solve: one run with its own method and iteration budget."""
        return replace(self.optimizer, method=self.continuum_method, max_iters=self.continuum_max_iters, multistart=1)


@dataclass
class LadderRecord:
    n: int
    objective: float = math.nan
    continuum_objective: float = math.nan
    objective_gap: float = math.nan
    distance: float = math.nan
    d1: float = math.nan
    d2: float = math.nan
    w_gap: float = math.nan
    c_gap: float = math.nan
    loss: float = math.nan
    r1: float = math.nan
    r2: float = math.nan
    r3: float = math.nan
    r4: float = math.nan
    delta_n: float = math.nan
    smoothness: float = math.nan
    iterations: int = 0
    converged: bool = False
    error: str = ""
    wall_time: float = 0.0

    CSV_FIELDS = (
        "n", "objective", "continuum_objective", "objective_gap", "distance", "d1", "d2", "w_gap", "c_gap",
        "loss", "r1", "r2", "r3", "r4", "delta_n", "smoothness", "iterations", "converged", "error",
    )

    def as_row(self) -> Dict[str, Any]:
        row = asdict(self)
        return {k: row[k] for k in self.CSV_FIELDS}


@dataclass
class LadderResult:
    records: List[LadderRecord]
    continuum_params: Optional[ParamSet]
    continuum_objective: Optional[network.ObjectiveBreakdown]
    continuum_iterations: int = 0
    continuum_converged: bool = False
    continuum_error: str = ""
    distance_fit: Optional[FitResult] = None
    level_params: Dict[int, Dict[str, Any]] = field(default_factory=dict)


def level_payload(
    n: int,
    data: network.TrainingSet,
    cfg: LadderConfig,
    theta0: Optional[ParamSet] = None,
) -> Dict[str, Any]:
    """JSON-safe description of one ladder level (the unit shipped to workers)."""
    return {
        "n": n,
        "inputs": data.inputs.tolist(),
        "labels": data.labels.tolist(),
        "alphas": list(cfg.hyper.alphas),
        "taus": list(cfg.hyper.taus),
        "activation": cfg.activation,
        "classifier": cfg.classifier,
        "optimizer": asdict(cfg.optimizer),
        "theta0": params_to_json(theta0) if theta0 is not None else None,
    }


def solve_level(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Minimise E_n for one level; failures come back as an error string, never raise."""
    n = int(payload["n"])
    started = time.perf_counter()
    out: Dict[str, Any] = {"n": n, "params": None, "iterations": 0, "converged": False, "error": ""}
    try:
        data = network.TrainingSet(np.asarray(payload["inputs"]), np.asarray(payload["labels"]))
        hyper = network.HyperParams(tuple(payload["alphas"]), tuple(payload["taus"]))
        sigma = get_activation(payload["activation"])
        h = get_classifier(payload["classifier"])
        opt = OptimizeConfig(**payload["optimizer"])

        def fun(theta: ParamSet):
            return adjoint.value_and_gradient_En(theta, data, hyper, sigma, h)

        if payload.get("theta0") is not None:
            result = minimize_params(fun, params_from_json(payload["theta0"]), opt)
        else:
            result = multistart_params(fun, zero_params(n, data.d, data.m), opt).best
        out.update(
            params=params_to_json(result.x),
            iterations=result.iterations,
            converged=result.converged,
        )
        logger.info("Ladder level n=%d: objective=%.10e iterations=%d", n, result.final_objective, result.iterations)
    except (DeepLimitError, ValueError) as e:
        logger.exception("Ladder level n=%d failed", n)
        out["error"] = f"{type(e).__name__}: {e}"
    out["wall_time"] = time.perf_counter() - started
    return out


def nodal_gap(theta_n: ParamSet, theta: ParamSet) -> float:
    """max_i max(||K(i/n) - K_i||, ||b(i/n) - b_i||): the measured delta_n."""
    t = np.arange(theta_n.K.n) / theta_n.K.n
    gK = np.sqrt(np.sum((theta.K.evaluate(t) - theta_n.K.values) ** 2, axis=(1, 2)))
    gb = np.sqrt(np.sum((theta.b.evaluate(t) - theta_n.b.values) ** 2, axis=1))
    return float(max(gK.max(), gb.max()))


def _record(
    n: int,
    theta_n: ParamSet,
    theta: Optional[ParamSet],
    e_inf: float,
    data: network.TrainingSet,
    cfg: LadderConfig,
    sigma: Activation,
    h: Classifier,
) -> LadderRecord:
    """Level row; without a continuum minimiser only the E_n columns are filled."""
    br = network.objective_En(theta_n, data, cfg.hyper, sigma, h)
    rec = LadderRecord(
        n=n,
        objective=br.total,
        loss=br.loss,
        r1=br.r1,
        r2=br.r2,
        r3=br.r3,
        r4=br.r4,
        smoothness=smoothness_diagnostic(theta_n.K).normalized if n >= 3 else math.nan,
    )
    if theta is None:
        return rec
    rec.d1 = d1_distance(theta_n.K, theta.K)
    rec.d2 = d2_distance(theta_n.b, theta.b)
    rec.w_gap = float(np.linalg.norm(theta_n.W - theta.W))
    rec.c_gap = float(np.linalg.norm(theta_n.c - theta.c))
    rec.distance = rec.d1 + rec.d2 + rec.w_gap + rec.c_gap
    rec.continuum_objective = e_inf
    rec.objective_gap = abs(br.total - e_inf)
    rec.delta_n = nodal_gap(theta_n, theta)
    return rec


def _continuum_start(outcomes: List[Dict[str, Any]], cfg: LadderConfig, d: int, m: int) -> ParamSet:
    """The finest solved level prolonged onto the nodes, or zero when every level failed."""
    for outcome in reversed(outcomes):
        if outcome.get("params") is not None:
            theta_n = params_from_json(outcome["params"])
            logger.info("Ladder: continuum solve starts from the n=%d minimiser", theta_n.K.n)
            return ParamSet(
                prolong(theta_n.K, cfg.continuum_nodes),
                prolong(theta_n.b, cfg.continuum_nodes),
                theta_n.W,
                theta_n.c,
            )
    return zero_params(cfg.continuum_nodes, d, m, discrete=False)


def ladder_run(
    cfg: LadderConfig,
    data: Optional[network.TrainingSet],
    map_levels: Optional[Callable[[List[Dict[str, Any]]], List[Dict[str, Any]]]] = None,
    workers: int = 1,
) -> LadderResult:
    """
    Minimise E_n for every n of the ladder, then E_inf on the nodal
    representation, and compare each discrete minimiser with the continuum one.

    With warm_start the levels run in order, each starting from the upsampled
    minimiser of the previous level. Without it the levels are independent
    and go through map_levels (local threads by default).

    The continuum solve starts from the finest level's minimiser, prolonged
    onto the nodes, and uses cfg.continuum_optimizer. If it does not converge
    the comparison columns stay empty and every row carries the error.
    """
    if data is None or data.size == 0:
        raise ValueError("ladder_run needs a non-empty training set")
    sigma = get_activation(cfg.activation)
    h = get_classifier(cfg.classifier)
    if map_levels is None:
        def map_levels(payloads: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
            return parallel_map(solve_level, payloads, workers)

    if cfg.warm_start:
        outcomes = []
        prev: Optional[ParamSet] = None
        for n in cfg.n_values:
            theta0 = None
            if prev is not None:
                theta0 = ParamSet(upsample(prev.K, n), upsample(prev.b, n), prev.W, prev.c)
            outcome = solve_level(level_payload(n, data, cfg, theta0))
            if outcome["params"] is not None:
                prev = params_from_json(outcome["params"])
            outcomes.append(outcome)
    else:
        outcomes = map_levels([level_payload(n, data, cfg) for n in cfg.n_values])

    def fun_inf(theta: ParamSet):
        return continuum.value_and_gradient_Einf(theta, data, cfg.hyper, sigma, h, cfg.solver)

    logger.info("Ladder: minimising the continuum objective on %d nodes", cfg.continuum_nodes)
    theta_hat: Optional[ParamSet] = None
    e_inf: Optional[network.ObjectiveBreakdown] = None
    cont_iterations, cont_converged, cont_error = 0, False, ""
    try:
        cont = minimize_params(fun_inf, _continuum_start(outcomes, cfg, data.d, data.m), cfg.continuum_optimizer)
        theta_hat = cont.x
        e_inf = continuum.objective_Einf(theta_hat, data, cfg.hyper, sigma, h, cfg.solver)
        cont_iterations, cont_converged = cont.iterations, cont.converged
        if not cont_converged:
            cont_error = (
                f"continuum solve did not converge in {cont.iterations} iterations "
                f"(gradient norm {cont.grad_norm_history[-1]:.3e})"
            )
    except DeepLimitError as e:
        logger.exception("Ladder: continuum solve failed")
        cont_error = f"{type(e).__name__}: {e}"
    if cont_error:
        logger.error("Ladder: %s; levels are not compared", cont_error)
    else:
        logger.info("Ladder: continuum objective %.10e after %d iterations", e_inf.total, cont_iterations)
    reference = theta_hat if not cont_error else None

    records = []
    level_params: Dict[int, Dict[str, Any]] = {}
    for n, outcome in zip(cfg.n_values, outcomes):
        if outcome.get("params") is None:
            rec = LadderRecord(n=n, error=outcome.get("error") or "no parameters returned")
        else:
            try:
                theta_n = params_from_json(outcome["params"])
                rec = _record(n, theta_n, reference, e_inf.total if e_inf else math.nan, data, cfg, sigma, h)
                rec.error = cont_error
                level_params[n] = outcome["params"]
            except DeepLimitError as e:
                logger.exception("Ladder level n=%d could not be evaluated", n)
                rec = LadderRecord(n=n, error=f"{type(e).__name__}: {e}")
        rec.iterations = int(outcome.get("iterations", 0))
        rec.converged = bool(outcome.get("converged", False))
        rec.wall_time = float(outcome.get("wall_time", 0.0))
        records.append(rec)

    fit = None
    pairs = [(r.n, r.distance) for r in records if not r.error]
    if len({p[0] for p in pairs}) >= 3:
        try:
            fit = rate_fit(pairs)
        except ValueError as e:
            logger.warning("Distance rate fit skipped: %s", e)
    return LadderResult(
        records=records,
        continuum_params=theta_hat,
        continuum_objective=e_inf,
        continuum_iterations=cont_iterations,
        continuum_converged=cont_converged,
        continuum_error=cont_error,
        distance_fit=fit,
        level_params=level_params,
    )


# -- explicit Euler bound and trajectory gaps ----------------------------------------


@dataclass
class EulerBoundReport:
    n: int
    lhs: np.ndarray  # ||X(i/n) - X_i||, i = 0..n
    rhs: np.ndarray
    delta_n: float
    k_sup: float
    x_sup: float
    remainder: float
    d_n: float
    lipschitz: float

    @property
    def holds(self) -> np.ndarray:
        return self.lhs <= self.rhs

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.holds))

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {"n": self.n, "i": i, "lhs": float(l), "rhs": float(r), "holds": bool(l <= r)}
            for i, (l, r) in enumerate(zip(self.lhs, self.rhs))
        ]


# absolute slack for reference-solution rounding in the bound comparison
_BOUND_SLACK = 1e-12


def _reference(x: np.ndarray, K: Any, b: Any, sigma: Activation, n: int, steps: Optional[int]) -> continuum.ContinuumTrajectory:
    steps = steps or continuum.reference_steps(n)
    if steps % n:
        raise ValueError(f"reference steps {steps} must be a multiple of n={n}")
    return continuum.ode_solve(x, K, b, sigma, continuum.OdeSolveConfig("rk4", steps))


def euler_bound_check(
    K: ContinuumParamPath,
    b: ContinuumParamPath,
    Kn: DiscreteParamPath,
    bn: DiscreteParamPath,
    x: np.ndarray,
    sigma: Activation,
    steps: Optional[int] = None,
) -> EulerBoundReport:
    """
    Compare ||X(i/n) - X_i|| with the explicit Euler global error bound

        n / (L ||K||) * D_n * (exp(i L ||K|| / n) - 1),
        D_n = (1/n)(1 + ||X||) L delta_n + R_n,

    where delta_n, ||K||, ||X|| and the one-step Taylor remainder R_n are
    all measured from the objects at hand. When L ||K|| = 0 the bound is i D_n.
    """
    network.check_params(Kn, bn)
    n = Kn.n
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeMismatchError("the Euler bound is checked one input at a time")
    ref = _reference(x, K, b, sigma, n, steps)
    stride = (len(ref.times) - 1) // n
    Xc = ref.states[::stride]  # X(i/n), i = 0..n
    Xd = network.forward_pass(x, Kn, bn, sigma).states
    lhs = np.linalg.norm(Xc - Xd, axis=-1)

    t = np.arange(n) / n
    Kt, bt = K.evaluate(t), b.evaluate(t)
    delta = max(
        float(np.max(np.sqrt(np.sum((Kt - Kn.values) ** 2, axis=(1, 2))))),
        float(np.max(np.linalg.norm(bt - bn.values, axis=1))),
    )
    k_sup = K.sup_norm()
    x_sup = max(float(np.max(np.linalg.norm(ref.states, axis=-1))), float(np.max(np.linalg.norm(Xd, axis=-1))))
    drift = sigma(np.einsum("ikl,il->ik", Kt, Xc[:-1]) + bt)
    remainder = float(np.max(np.linalg.norm(Xc[1:] - Xc[:-1] - drift / n, axis=-1)))
    L = sigma.lipschitz
    d_n = (1.0 + x_sup) * L * delta / n + remainder

    i = np.arange(n + 1)
    rate = L * k_sup
    if rate > 0:
        rhs = n / rate * d_n * np.expm1(i * rate / n)
    else:
        rhs = i * d_n
    rhs = rhs + _BOUND_SLACK
    report = EulerBoundReport(n, lhs, rhs, delta, k_sup, x_sup, remainder, d_n, L)
    if report.violations:
        logger.warning("Euler bound violated at %d of %d nodes for n=%d", report.violations, n + 1, n)
    return report


def trajectory_gap(
    K: Any,
    b: Any,
    Kn: DiscreteParamPath,
    bn: DiscreteParamPath,
    x: np.ndarray,
    sigma: Activation,
    steps: Optional[int] = None,
) -> float:
    """sup_i sup_{t in [i/n, (i+1)/n]} ||X(t) - X_i||, sampled on the reference grid."""
    network.check_params(Kn, bn)
    n = Kn.n
    x = np.asarray(x, dtype=float)
    ref = _reference(x, K, b, sigma, n, steps)
    stride = (len(ref.times) - 1) // n
    Xd = network.forward_pass(x, Kn, bn, sigma).states
    gap = 0.0
    for i in range(n):
        window = ref.states[i * stride:(i + 1) * stride + 1]
        gap = max(gap, float(np.max(np.linalg.norm(window - Xd[i], axis=-1))))
    return gap


# -- Morrey, recovery, smoothness ----------------------------------------------------


@dataclass(frozen=True)
class MorreyReport:
    lhs_sup_sq: float
    rhs_bound: float

    @property
    def holds(self) -> bool:
        return self.lhs_sup_sq <= self.rhs_bound


def morrey_property(f: DiscreteParamPath) -> MorreyReport:
    """max_i ||f_i||^2 against 2 (||f_0||^2 + n sum ||f_j - f_{j-1}||^2), compared exactly."""
    vals = f.values.reshape(f.n, -1)
    lhs = float(np.max(np.sum(vals * vals, axis=1)))
    diffs = np.diff(vals, axis=0)
    rhs = 2.0 * (float(np.sum(vals[0] ** 2)) + f.n * float(np.sum(diffs * diffs)))
    return MorreyReport(lhs, rhs)


def morrey_sweep(count: int, max_n: int, max_d: int, seed: int) -> List[Dict[str, Any]]:
    """Seeded random paths: n in [1, max_n], d in [1, max_d], matrix or vector flavour."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(count):
        n = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, max_d + 1))
        shape = (n, d, d) if rng.random() < 0.5 else (n, d)
        # random walk plus noise so both terms of the bound matter
        steps = rng.normal(scale=rng.uniform(0.01, 1.0), size=shape)
        values = rng.normal(size=shape[1:]) + np.cumsum(steps, axis=0)
        rep = morrey_property(DiscreteParamPath(values))
        rows.append({"index": k, "n": n, "d": d, "flavor": "matrix" if len(shape) == 3 else "vector",
                     "lhs": rep.lhs_sup_sq, "rhs": rep.rhs_bound, "holds": rep.holds})
    failures = sum(1 for r in rows if not r["holds"])
    if failures:
        logger.error("Discrete Morrey inequality failed on %d of %d paths", failures, count)
    return rows


def recovery_check(K: ContinuumParamPath, tau1: float, n_values: Sequence[int]) -> List[Dict[str, Any]]:
    """Cell-average restrictions of K: R1_n, R1_inf, d1 and the L_K / sqrt(n) bound."""
    r1inf = continuum.reg_R1inf(K, tau1)
    lip = K.max_slope()
    rows = []
    for n in n_values:
        Kn = restrict_cell_average(K, n)
        d1 = d1_distance(Kn, K) if K.flavor.value == "matrix" else d2_distance(Kn, K)
        bound = lip / math.sqrt(n)
        rows.append({
            "n": n,
            "r1n": network.reg_R1n(Kn, tau1),
            "r1inf": r1inf,
            "d1": d1,
            "d1_bound": bound,
            "within_bound": d1 <= bound + 1e-15,
        })
    return rows


@dataclass(frozen=True)
class SmoothnessReport:
    energy: float  # spacing^-3 * sum of squared interior second differences
    normalized: float  # energy divided by the interior fraction of nodes
    interior_nodes: int


def smoothness_diagnostic(p: Union[DiscreteParamPath, ContinuumParamPath]) -> SmoothnessReport:
    """Discrete H^2 seminorm on the interior, dropping the first and last 10% of nodes."""
    vals = p.values.reshape(p.values.shape[0], -1)
    count = vals.shape[0]
    if count < 3:
        raise ValueError(f"smoothness diagnostic needs at least 3 nodes, got {count}")
    spacing = 1.0 / count if isinstance(p, DiscreteParamPath) else 1.0 / (count - 1)
    margin = int(math.ceil(0.1 * count))
    lo, hi = max(1, margin), min(count - 1, count - margin)
    if hi <= lo:
        lo, hi = 1, count - 1
    second = vals[lo + 1:hi + 1] - 2.0 * vals[lo:hi] + vals[lo - 1:hi - 1]
    energy = float(np.sum(second * second)) / spacing ** 3
    interior = hi - lo
    return SmoothnessReport(energy, energy / (interior * spacing), interior)


def discrete_recovery_gap(
    theta: ParamSet,
    data: network.TrainingSet,
    hyper: network.HyperParams,
    sigma: Activation,
    h: Classifier,
    n_values: Sequence[int],
    cfg: continuum.OdeSolveConfig,
) -> Tuple[List[Dict[str, Any]], Optional[FitResult]]:
    """|E_n(restriction of theta) - E_inf(theta)| per n, plus its rate fit."""
    e_inf = continuum.objective_Einf(theta, data, hyper, sigma, h, cfg).total
    rows = []
    for n in n_values:
        e_n = network.objective_En(theta.restrict(n), data, hyper, sigma, h).total
        rows.append({"n": n, "e_n": e_n, "e_inf": e_inf, "gap": abs(e_n - e_inf)})
    fit = None
    try:
        fit = rate_fit([(r["n"], r["gap"]) for r in rows])
    except ValueError as e:
        logger.warning("Recovery-gap rate fit skipped: %s", e)
    return rows, fit


# -- probes --------------------------------------------------------------------------

PROFILES: Dict[str, Callable[[float], float]] = {
    "zero": lambda t: 0.0,
    "constant": lambda t: 1.0,
    "linear": lambda t: t,
    "sin": lambda t: math.sin(2.0 * math.pi * t),
    "quadratic": lambda t: t * t,
}


def _profile(name: str) -> Callable[[float], float]:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown probe profile {name!r}; choose from {sorted(PROFILES)}") from None


def probe_paths(probe: Dict[str, Any]) -> Tuple[ContinuumParamPath, ContinuumParamPath]:
    """
    K(t) = scale * f(t) * I and b(t) = scale * g(t) * (1, ..., 1) from named profiles.
    probe = {"d": 1, "nodes": 1025, "K": {"profile": "sin", "scale": 1.0}, "b": {...}}
    """
    d = int(probe.get("d", 1))
    nodes = int(probe.get("nodes", 1025))
    kspec = probe.get("K", {"profile": "sin", "scale": 1.0})
    bspec = probe.get("b", {"profile": "linear", "scale": 0.3})
    fk, sk = _profile(kspec.get("profile", "sin")), float(kspec.get("scale", 1.0))
    fb, sb = _profile(bspec.get("profile", "linear")), float(bspec.get("scale", 1.0))
    K = continuum_from_function(lambda t: sk * fk(t) * np.eye(d), nodes, (d, d))
    b = continuum_from_function(lambda t: sb * fb(t) * np.ones(d), nodes, (d,))
    return K, b


# -- gradient checks -----------------------------------------------------------------


def _random_discrete(rng: np.random.Generator, n: int, d: int, m: int, scale: float = 0.5) -> ParamSet:
    return ParamSet(
        DiscreteParamPath(rng.normal(scale=scale, size=(n, d, d))),
        DiscreteParamPath(rng.normal(scale=scale, size=(n, d))),
        rng.normal(scale=scale, size=(m, d)),
        rng.normal(scale=scale, size=m),
    )


def random_smooth_continuum(rng: np.random.Generator, nodes: int, d: int, m: int, scale: float = 0.5) -> ParamSet:
    """Low-frequency random profiles on the node grid."""
    t = np.linspace(0.0, 1.0, nodes)
    basis = np.stack([np.ones_like(t), np.sin(np.pi * t), np.cos(np.pi * t), np.sin(2 * np.pi * t)], axis=1)

    def path(shape: Tuple[int, ...]) -> ContinuumParamPath:
        coef = rng.normal(scale=scale / 2.0, size=(basis.shape[1],) + shape)
        return ContinuumParamPath(np.tensordot(basis, coef, axes=1))

    return ParamSet(path((d, d)), path((d,)), rng.normal(scale=scale, size=(m, d)), rng.normal(scale=scale, size=m))


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """max |a - r| scaled by max |r| (coordinate-wise error on the gradient's own scale)."""
    analytic = np.asarray(analytic, dtype=float).ravel()
    reference = np.asarray(reference, dtype=float).ravel()
    scale = max(float(np.max(np.abs(reference))), 1e-300)
    return float(np.max(np.abs(analytic - reference))) / scale


def run_grad_check(
    n: int,
    d: int,
    m: int,
    samples: int,
    instances: int,
    hyper: network.HyperParams,
    sigma: Activation,
    h: Classifier,
    steps: Sequence[float],
    seed: int,
    solver: Optional[continuum.OdeSolveConfig] = None,
    continuum_nodes: int = 0,
    directions: int = 20,
) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """
    Per random instance: coordinate-wise FD gradient error, FD slope along a
    random direction, forward/reverse agreement over random directions and the
    first-order remainder slope. With continuum_nodes > 0 also the continuum
    Gateaux derivative against central differences of E_inf.

    Returns the per-instance rows and the (instance, r, error) rows of every
    directional finite-difference sweep.
    """
    rng = np.random.default_rng(seed)
    rows = []
    fd_rows: List[Dict[str, Any]] = []
    for k in range(instances):
        row: Dict[str, Any] = {"instance": k, "kind": "discrete"}
        try:
            theta = _random_discrete(rng, n, d, m)
            data = network.TrainingSet(rng.normal(size=(samples, d)), rng.normal(size=(samples, m)))

            def f(th):
                return network.objective_En(th, data, hyper, sigma, h).total

            grad = adjoint.gradient_En(theta, data, hyper, sigma, h)
            row["fd_rel_error"] = relative_error(grad.flatten(), adjoint.fd_gradient(f, theta).flatten())
            xi = _random_discrete(rng, n, d, m, scale=1.0)
            xi = xi.unflatten(xi.flatten() / np.linalg.norm(xi.flatten()))  # unit direction keeps r asymptotic
            report = adjoint.fd_check(f, grad, theta, xi, steps)
            row["fd_slope"] = report.slope
            fd_rows.extend({"instance": k, **r} for r in report.rows())
            worst = 0.0
            for _ in range(directions):
                eta = _random_discrete(rng, n, d, m, scale=1.0)
                fwd = adjoint.objective_directional(theta, eta, data, hyper, sigma, h)
                rev = grad.dot(eta)
                worst = max(worst, abs(fwd - rev) / max(abs(fwd), 1e-300))
            row["forward_reverse_rel"] = worst
            directional = adjoint.objective_directional(theta, xi, data, hyper, sigma, h)
            row["remainder_slope"] = adjoint.remainder_slope(f, directional, theta, xi, [1e-1, 1e-2, 1e-3, 1e-4]).slope
        except DeepLimitError as e:
            logger.exception("Gradient check instance %d failed", k)
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)

    if continuum_nodes and solver is not None:
        for k in range(instances):
            row = {"instance": k, "kind": "continuum"}
            try:
                theta = random_smooth_continuum(rng, continuum_nodes, d, m)
                xi = random_smooth_continuum(rng, continuum_nodes, d, m)
                data = network.TrainingSet(rng.normal(size=(samples, d)), rng.normal(size=(samples, m)))

                def f(th):
                    return continuum.objective_Einf(th, data, hyper, sigma, h, solver).total

                analytic = continuum.gateaux_objective(theta, xi, data, hyper, sigma, h, solver)
                r = 1e-4
                fd = (f(theta.axpy(r, xi)) - f(theta.axpy(-r, xi))) / (2.0 * r)
                row["fd_rel_error"] = abs(analytic - fd) / max(abs(fd), 1e-300)
                grad = continuum.gradient_Einf(theta, data, hyper, sigma, h, solver)
                row["forward_reverse_rel"] = abs(grad.dot(xi) - analytic) / max(abs(analytic), 1e-300)
            except DeepLimitError as e:
                logger.exception("Continuum gradient check instance %d failed", k)
                row["error"] = f"{type(e).__name__}: {e}"
            rows.append(row)
    return rows, fd_rows
