"""
The deep-layer limit: the ODE  X'(t) = sigma(K(t) X(t) + b(t)),  X(0) = x,
the limiting objective E_inf and its Gateaux derivative.

Parameters are piecewise-linear nodal paths; the solver also accepts step
functions so that explicit Euler with steps = n replays the discrete network.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from ..constants import DEFAULT_SOLVER_METHOD, DEFAULT_SOLVER_STEPS, REFERENCE_MIN_STEPS, REFERENCE_STEPS_PER_LAYER, SOLVER_METHODS
from ..exceptions import NumericalBlowupError, ShapeMismatchError
from .functions import Activation, Classifier
from .network import HyperParams, ObjectiveBreakdown, TrainingSet, combine, reg_R3, reg_R4, residual_step
from .spaces import ContinuumParamPath, ParamSet, hat_weights

logger = logging.getLogger(__name__)

KERNELS = ("exponential", "ordered")


@dataclass(frozen=True)
class OdeSolveConfig:
    method: str = DEFAULT_SOLVER_METHOD
    steps: int = DEFAULT_SOLVER_STEPS

    def __post_init__(self) -> None:
        if self.method not in SOLVER_METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {SOLVER_METHODS}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"solver steps must be a positive integer, got {self.steps!r}")


@dataclass(frozen=True, eq=False)
class ContinuumTrajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        """State at a solver node (nearest node to t)."""
        j = int(round(t * (len(self.times) - 1)))
        return self.states[j]


def reference_steps(n: int) -> int:
    """max(1024, 16 n) rounded up to a multiple of n, so every i/n is a solver node."""
    target = max(REFERENCE_MIN_STEPS, REFERENCE_STEPS_PER_LAYER * n)
    return n * math.ceil(target / n)


@lru_cache(maxsize=64)
def _stage_times(steps: int, method: str) -> Tuple[np.ndarray, ...]:
    nodes = np.arange(steps + 1) / steps
    left, right = nodes[:-1], nodes[1:]
    if method == "explicit-euler":
        out: Tuple[np.ndarray, ...] = (left,)
    elif method == "midpoint":
        out = (left, 0.5 * (left + right))
    else:
        out = (left, 0.5 * (left + right), right)
    for arr in out:
        arr.setflags(write=False)
    return out


def ode_solve(x: np.ndarray, K: Any, b: Any, sigma: Activation, cfg: OdeSolveConfig) -> ContinuumTrajectory:
    """
    Fixed-step solve on [0, 1]; x is (d,) or (S, d). K and b are anything with
    evaluate(t), evaluated exactly at every stage time.
    """
    X = np.array(x, dtype=float)
    if K.element_shape != (X.shape[-1], X.shape[-1]) or b.element_shape != (X.shape[-1],):
        raise ShapeMismatchError(f"input of shape {X.shape} does not match K{K.element_shape} / b{b.element_shape}")
    steps = cfg.steps
    h = 1.0 / steps
    stages = [(K.evaluate(t), b.evaluate(t)) for t in _stage_times(steps, cfg.method)]

    def rhs(Y: np.ndarray, stage: int, k: int) -> np.ndarray:
        Kt, bt = stages[stage]
        return sigma(Y @ Kt[k].T + bt[k])

    states = np.empty((steps + 1,) + X.shape)
    states[0] = X
    for k in range(steps):
        if cfg.method == "explicit-euler":
            X = residual_step(X, stages[0][0][k], stages[0][1][k], sigma, h)
        elif cfg.method == "midpoint":
            k1 = rhs(X, 0, k)
            X = X + h * rhs(X + 0.5 * h * k1, 1, k)
        else:
            k1 = rhs(X, 0, k)
            k2 = rhs(X + 0.5 * h * k1, 1, k)
            k3 = rhs(X + 0.5 * h * k2, 1, k)
            k4 = rhs(X + h * k3, 2, k)
            X = X + h * (k1 / 6.0 + k2 / 3.0 + k3 / 3.0 + k4 / 6.0)
        if not np.all(np.isfinite(X)):
            raise NumericalBlowupError(f"non-finite ODE state after step {k + 1} of {steps}")
        states[k + 1] = X
    return ContinuumTrajectory(np.arange(steps + 1) / steps, states)


def _reg_path(p: ContinuumParamPath, tau: float) -> float:
    slope = p.derivative()
    return float(np.sum(slope * slope)) / (p.node_count - 1) + tau * float(np.sum(p.values[0] ** 2))


def reg_R1inf(K: ContinuumParamPath, tau1: float) -> float:
    """||K'||^2_{L2} + tau1 ||K(0)||^2, exact for piecewise-linear K."""
    return _reg_path(K, tau1)


def reg_R2inf(b: ContinuumParamPath, tau2: float) -> float:
    return _reg_path(b, tau2)


def _check_continuum(theta: ParamSet, data: Optional[TrainingSet]) -> None:
    if theta.is_discrete:
        raise ShapeMismatchError("continuum objective takes continuum parameters")
    if data is not None and (data.d != theta.d or data.m != theta.m):
        raise ShapeMismatchError(f"data has (d={data.d}, m={data.m}) but parameters have (d={theta.d}, m={theta.m})")


def objective_Einf(
    theta: ParamSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
    cfg: OdeSolveConfig,
) -> ObjectiveBreakdown:
    _check_continuum(theta, data)
    loss = 0.0
    if data is not None:
        X1 = ode_solve(data.inputs, theta.K, theta.b, sigma, cfg).final
        r = h(X1 @ theta.W.T + theta.c) - data.labels
        loss = float(np.sum(r * r))
    tau1, tau2 = hyper.taus
    return combine(loss, reg_R1inf(theta.K, tau1), reg_R2inf(theta.b, tau2), reg_R3(theta.W), reg_R4(theta.c), hyper)


# -- Gateaux derivative --------------------------------------------------------------


def _expm(A: np.ndarray) -> np.ndarray:
    if A.shape[-1] == 1:
        return np.exp(A)
    return expm(A)


@dataclass(frozen=True, eq=False)
class _Linearisation:
    times: np.ndarray
    weights: np.ndarray  # composite trapezoid weights on the solver nodes
    states: np.ndarray  # (M+1, S, d)
    slopes: np.ndarray  # sigma'(K X + b), (M+1, S, d)
    propagators: np.ndarray  # (M+1, S, d, d), maps a perturbation at t_j to t = 1


def _linearise(theta: ParamSet, inputs: np.ndarray, sigma: Activation, cfg: OdeSolveConfig, kernel: str) -> _Linearisation:
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    traj = ode_solve(np.atleast_2d(inputs), theta.K, theta.b, sigma, cfg)
    t = traj.times
    Kt = theta.K.evaluate(t)
    bt = theta.b.evaluate(t)
    Z = np.einsum("jkl,jsl->jsk", Kt, traj.states) + bt[:, None, :]
    s = sigma.deriv(Z)
    J = s[..., :, None] * Kt[:, None, :, :]
    dt = np.diff(t)
    half = 0.5 * dt[:, None, None, None] * (J[:-1] + J[1:])

    M, S, d = s.shape[0] - 1, s.shape[1], s.shape[2]
    if kernel == "exponential":
        C = np.zeros_like(J)
        C[:-1] = np.cumsum(half[::-1], axis=0)[::-1]
        Phi = _expm(C)
    else:
        cells = _expm(half)
        Phi = np.empty_like(J)
        Phi[M] = np.broadcast_to(np.eye(d), (S, d, d))
        for j in range(M - 1, -1, -1):
            Phi[j] = Phi[j + 1] @ cells[j]
    if not np.all(np.isfinite(Phi)):
        raise NumericalBlowupError("non-finite Gateaux kernel")

    w = np.zeros_like(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return _Linearisation(t, w, traj.states, s, Phi)


def _state_derivative(lin: _Linearisation, xi: ParamSet) -> np.ndarray:
    Lt = xi.K.evaluate(lin.times)
    betat = xi.b.evaluate(lin.times)
    B = (np.einsum("jkl,jsl->jsk", Lt, lin.states) + betat[:, None, :]) * lin.slopes
    return np.einsum("j,jsik,jsk->si", lin.weights, lin.propagators, B)


def _check_direction(theta: ParamSet, xi: ParamSet) -> None:
    if xi.is_discrete or xi.K.values.shape != theta.K.values.shape or xi.b.values.shape != theta.b.values.shape:
        raise ShapeMismatchError("continuum directions must be nodal paths on the parameters' node grid")
    if xi.W.shape != theta.W.shape or xi.c.shape != theta.c.shape:
        raise ShapeMismatchError("direction does not match the readout shapes")


def gateaux_state(
    theta: ParamSet,
    xi: ParamSet,
    x: np.ndarray,
    sigma: Activation,
    cfg: OdeSolveConfig,
    kernel: str = "exponential",
) -> np.ndarray:
    """
    D = int_0^1 Phi(t) ((L X + beta) * sigma'(K X + b)) dt, the derivative of X(1)
    along (L, beta). "exponential" takes Phi(t) = exp(int_t^1 sigma' * K ds);
    "ordered" chains per-cell exponentials into the exact propagator, which
    differs only when the kernel matrices fail to commute.
    """
    _check_direction(theta, xi)
    x = np.asarray(x, dtype=float)
    D = _state_derivative(_linearise(theta, x, sigma, cfg, kernel), xi)
    return D[0] if x.ndim == 1 else D


def _reg_directional(p: ContinuumParamPath, q: ContinuumParamPath, tau: float) -> float:
    return 2.0 * float(np.sum(p.derivative() * q.derivative())) / (p.node_count - 1) + 2.0 * tau * float(
        np.sum(p.values[0] * q.values[0])
    )


def gateaux_objective(
    theta: ParamSet,
    xi: ParamSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
    cfg: OdeSolveConfig,
    kernel: str = "ordered",
) -> float:
    """
    Directional derivative of E_inf. The loss term is the full chain rule
    2 <h(z) - y, h'(z) * (W D + V X(1) + gamma)>,  z = W X(1) + c.
    """
    _check_continuum(theta, data)
    _check_direction(theta, xi)
    a1, a2, a3, a4 = hyper.alphas
    tau1, tau2 = hyper.taus
    value = (
        a1 * _reg_directional(theta.K, xi.K, tau1)
        + a2 * _reg_directional(theta.b, xi.b, tau2)
        + 2.0 * a3 * float(np.sum(theta.W * xi.W))
        + 2.0 * a4 * float(np.sum(theta.c * xi.c))
    )
    if data is None:
        return value
    lin = _linearise(theta, data.inputs, sigma, cfg, kernel)
    X1 = lin.states[-1]
    D = _state_derivative(lin, xi)
    z = X1 @ theta.W.T + theta.c
    r = h(z) - data.labels
    dz = D @ theta.W.T + X1 @ xi.W.T + xi.c
    return value + 2.0 * float(np.sum(r * h.deriv(z) * dz))


def _stiffness(p: ContinuumParamPath, tau: float) -> np.ndarray:
    """Gradient of ||p'||^2 + tau ||p(0)||^2 with respect to the nodal values."""
    g = np.zeros_like(p.values)
    diff = 2.0 * (p.node_count - 1) * np.diff(p.values, axis=0)
    g[:-1] -= diff
    g[1:] += diff
    g[0] += 2.0 * tau * p.values[0]
    return g


def value_and_gradient_Einf(
    theta: ParamSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
    cfg: OdeSolveConfig,
    kernel: str = "ordered",
) -> Tuple[ObjectiveBreakdown, ParamSet]:
    """Objective and nodal gradient; <gradient, xi> equals gateaux_objective for nodal xi."""
    _check_continuum(theta, data)
    a1, a2, a3, a4 = hyper.alphas
    tau1, tau2 = hyper.taus
    gK = a1 * _stiffness(theta.K, tau1)
    gb = a2 * _stiffness(theta.b, tau2)
    gW = 2.0 * a3 * theta.W
    gc = 2.0 * a4 * theta.c

    loss = 0.0
    if data is not None:
        lin = _linearise(theta, data.inputs, sigma, cfg, kernel)
        X1 = lin.states[-1]
        z = X1 @ theta.W.T + theta.c
        r = h(z) - data.labels
        loss = float(np.sum(r * r))
        G = 2.0 * r * h.deriv(z)
        gW = gW + G.T @ X1
        gc = gc + G.sum(axis=0)
        lam = G @ theta.W  # (S, d)
        p = lin.slopes * np.einsum("jsik,si->jsk", lin.propagators, lam)
        wp = lin.weights[:, None, None] * p
        PK = np.einsum("jsk,jsl->jkl", wp, lin.states)
        Pb = wp.sum(axis=1)
        idx, frac = hat_weights(lin.times, theta.K.node_count)
        gK = gK.copy()
        gb = gb.copy()
        np.add.at(gK, idx, (1.0 - frac)[:, None, None] * PK)
        np.add.at(gK, idx + 1, frac[:, None, None] * PK)
        np.add.at(gb, idx, (1.0 - frac)[:, None] * Pb)
        np.add.at(gb, idx + 1, frac[:, None] * Pb)

    grad = ParamSet(ContinuumParamPath(gK), ContinuumParamPath(gb), gW, gc)
    breakdown = combine(loss, reg_R1inf(theta.K, tau1), reg_R2inf(theta.b, tau2), reg_R3(theta.W), reg_R4(theta.c), hyper)
    if not np.isfinite(breakdown.total):
        raise NumericalBlowupError("non-finite objective")
    return breakdown, grad


def gradient_Einf(
    theta: ParamSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
    cfg: OdeSolveConfig,
    kernel: str = "ordered",
) -> ParamSet:
    return value_and_gradient_Einf(theta, data, hyper, sigma, h, cfg, kernel)[1]


def trajectory_to_rows(traj: ContinuumTrajectory) -> List[Dict[str, float]]:
    """Flat (t, sample, X components) rows for CSV export."""
    states = traj.states if traj.states.ndim == 3 else traj.states[:, None, :]
    rows = []
    for t, row in zip(traj.times, states):
        for s, X in enumerate(row):
            rec: Dict[str, float] = {"t": float(t), "sample": s}
            rec.update({f"x{k}": float(v) for k, v in enumerate(X)})
            rows.append(rec)
    return rows
