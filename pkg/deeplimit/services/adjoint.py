"""
Exact derivatives of the discrete objective E_n.

Two independent routes:
- forward mode through the layer-product formula
      dX_n = (1/n) sum_i [prod_{j>i} (I + (1/n) diag(sigma'_j) K_j)] ((L_i X_i + beta_i) * sigma'_i)
  (later layers multiply on the left),
- reverse mode through the adjoint recursion
      lam_n = dLoss/dX_n,  lam_i = (I + (1/n) diag(sigma'_i) K_i)^T lam_{i+1}.

They agree to rounding; finite differences check both.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import NumericalBlowupError, ShapeMismatchError
from .fitting import loglog_fit
from .functions import Activation, Classifier
from .network import HyperParams, ObjectiveBreakdown, TrainingSet, combine, forward_pass, reg_R1n, reg_R2n, reg_R3, reg_R4
from .spaces import DiscreteParamPath, ParamSet

logger = logging.getLogger(__name__)

# Perturbations xi = (L, beta, V, gamma) and gradients share the ParamSet layout.
PerturbationSet = ParamSet
GradientSet = ParamSet

Point = Union[ParamSet, np.ndarray]


def _layout(p: ParamSet) -> tuple:
    return p.K.values.shape, p.b.values.shape, p.W.shape, p.c.shape


def _check_same_layout(theta: ParamSet, xi: ParamSet) -> None:
    if not theta.is_discrete or not xi.is_discrete:
        raise ShapeMismatchError("discrete derivatives need discrete parameters and perturbations")
    if _layout(theta) != _layout(xi):
        raise ShapeMismatchError("perturbation does not match the parameter layout")


def _layer_slopes(states: np.ndarray, K: DiscreteParamPath, b: DiscreteParamPath, sigma: Activation) -> np.ndarray:
    """sigma'(K_i X_i + b_i) for every layer i; shape (n, S, d)."""
    X = states[:-1]
    Z = np.einsum("ikl,isl->isk", K.values, X) + b.values[:, None, :]
    return sigma.deriv(Z)


def state_jvp(theta: ParamSet, xi: PerturbationSet, x: np.ndarray, sigma: Activation) -> np.ndarray:
    """d/dr X_n[x; K + rL, b + r beta] at r = 0, by the layer-product formula."""
    _check_same_layout(theta, xi)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    states = forward_pass(X, theta.K, theta.b, sigma).states  # (n+1, S, d)
    slopes = _layer_slopes(states, theta.K, theta.b, sigma)
    n, S, d = slopes.shape
    L, beta = xi.K.values, xi.b.values

    eye = np.broadcast_to(np.eye(d), (S, d, d))
    A = eye.copy()  # A_{n-1} = I
    total = np.zeros((S, d))
    for i in range(n - 1, -1, -1):
        B = (states[i] @ L[i].T + beta[i]) * slopes[i]
        total += np.einsum("sij,sj->si", A, B)
        # A_{i-1} = A_i (I + J_i / n), J_i = diag(sigma'_i) K_i
        J = slopes[i][:, :, None] * theta.K.values[i][None, :, :]
        A = A + np.einsum("sij,sjk->sik", A, J) / n
    out = total / n
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("non-finite state derivative")
    return out[0] if single else out


def _reg_directional(p: DiscreteParamPath, q: DiscreteParamPath, tau: float) -> float:
    dp = np.diff(p.values, axis=0)
    dq = np.diff(q.values, axis=0)
    return 2.0 * p.n * float(np.sum(dp * dq)) + 2.0 * tau * float(np.sum(p.values[0] * q.values[0]))


def objective_directional(
    theta: ParamSet,
    xi: PerturbationSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
) -> float:
    """Directional derivative of E_n at theta along xi (forward mode)."""
    _check_same_layout(theta, xi)
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
    XN = forward_pass(data.inputs, theta.K, theta.b, sigma).final
    D = state_jvp(theta, xi, data.inputs, sigma)
    z = XN @ theta.W.T + theta.c
    r = h(z) - data.labels
    dz = D @ theta.W.T + XN @ xi.W.T + xi.c
    return value + 2.0 * float(np.sum(r * h.deriv(z) * dz))


def _reg_gradient(p: DiscreteParamPath, tau: float) -> np.ndarray:
    g = np.zeros_like(p.values)
    diff = 2.0 * p.n * np.diff(p.values, axis=0)
    g[1:] += diff
    g[:-1] -= diff
    g[0] += 2.0 * tau * p.values[0]
    return g


def value_and_gradient_En(
    theta: ParamSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
) -> Tuple[ObjectiveBreakdown, GradientSet]:
    """One forward sweep and one adjoint sweep: objective breakdown and full gradient."""
    if not theta.is_discrete:
        raise ShapeMismatchError("value_and_gradient_En takes discrete parameters")
    a1, a2, a3, a4 = hyper.alphas
    tau1, tau2 = hyper.taus
    gK = a1 * _reg_gradient(theta.K, tau1)
    gb = a2 * _reg_gradient(theta.b, tau2)
    gW = 2.0 * a3 * theta.W
    gc = 2.0 * a4 * theta.c

    loss = 0.0
    if data is not None:
        if data.d != theta.d or data.m != theta.m:
            raise ShapeMismatchError(f"data has (d={data.d}, m={data.m}) but parameters have (d={theta.d}, m={theta.m})")
        states = forward_pass(data.inputs, theta.K, theta.b, sigma).states
        slopes = _layer_slopes(states, theta.K, theta.b, sigma)
        n = theta.K.n
        XN = states[-1]
        z = XN @ theta.W.T + theta.c
        r = h(z) - data.labels
        loss = float(np.sum(r * r))
        G = 2.0 * r * h.deriv(z)  # (S, m)
        gW = gW + G.T @ XN
        gc = gc + G.sum(axis=0)
        lam = G @ theta.W  # (S, d)
        gK = gK.copy()
        gb = gb.copy()
        for i in range(n - 1, -1, -1):
            p = slopes[i] * lam
            gK[i] += (p.T @ states[i]) / n
            gb[i] += p.sum(axis=0) / n
            lam = lam + (p @ theta.K.values[i]) / n

    grad = ParamSet(DiscreteParamPath(gK), DiscreteParamPath(gb), gW, gc)
    breakdown = combine(loss, reg_R1n(theta.K, tau1), reg_R2n(theta.b, tau2), reg_R3(theta.W), reg_R4(theta.c), hyper)
    if not np.isfinite(breakdown.total):
        raise NumericalBlowupError("non-finite objective")
    return breakdown, grad


def gradient_En(
    theta: ParamSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
) -> GradientSet:
    return value_and_gradient_En(theta, data, hyper, sigma, h)[1]


# -- finite-difference verification -------------------------------------------------


def _shift(theta: Point, xi: Point, r: float) -> Point:
    if isinstance(theta, ParamSet):
        return theta.axpy(r, xi)
    return np.asarray(theta, dtype=float) + r * np.asarray(xi, dtype=float)


def _directional_value(g: Union[float, Point], xi: Point) -> float:
    if isinstance(g, ParamSet):
        return g.dot(xi)
    if isinstance(g, np.ndarray) and g.ndim > 0:
        return float(np.dot(g.ravel(), np.asarray(xi, dtype=float).ravel()))
    return float(g)


@dataclass(frozen=True)
class FdReport:
    steps: Tuple[float, ...]
    errors: Tuple[float, ...]
    slope: float
    analytic: float

    def rows(self) -> List[dict]:
        return [{"r": r, "error": e} for r, e in zip(self.steps, self.errors)]


def _fitted_slope(steps: Sequence[float], errors: Sequence[float]) -> float:
    pairs = [(r, e) for r, e in zip(steps, errors) if e > 0]
    return loglog_fit([p[0] for p in pairs], [p[1] for p in pairs]).slope


def fd_check(
    f: Callable[[Point], float],
    g: Union[float, Point],
    theta: Point,
    xi: Point,
    steps: Sequence[float],
) -> FdReport:
    """
    Central-difference check of an analytic derivative along xi.

    g is either the directional derivative itself or a gradient (paired with xi).
    Errors of a correct derivative fall like r^2, so the fitted slope is near 2;
    a wrong derivative leaves a constant error and a slope near 0.
    """
    steps = tuple(float(r) for r in steps)
    if not steps or any(r <= 0 for r in steps):
        raise ValueError("finite-difference steps must be positive")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise ValueError("finite-difference steps must be decreasing")
    analytic = _directional_value(g, xi)
    errors = []
    for r in steps:
        fd = (float(f(_shift(theta, xi, r))) - float(f(_shift(theta, xi, -r)))) / (2.0 * r)
        errors.append(abs(fd - analytic))
    slope = _fitted_slope(steps, errors)
    logger.debug("fd_check: analytic=%.6e slope=%.3f errors=%s", analytic, slope, errors)
    return FdReport(steps, tuple(errors), slope, analytic)


def remainder_slope(
    f: Callable[[Point], float],
    directional: float,
    theta: Point,
    xi: Point,
    steps: Sequence[float],
) -> FdReport:
    """One-sided quotient |(f(theta + r xi) - f(theta)) / r - directional|, which is O(r)."""
    f0 = float(f(theta))
    steps = tuple(float(r) for r in steps)
    errors = [abs((float(f(_shift(theta, xi, r))) - f0) / r - directional) for r in steps]
    return FdReport(steps, tuple(errors), _fitted_slope(steps, errors), float(directional))


def fd_gradient(f: Callable[[Point], float], theta: Point, step: float = 1e-5) -> Point:
    """Coordinate-wise central differences; returns the same layout as theta."""
    if isinstance(theta, ParamSet):
        base = theta.flatten()
        wrap: Callable[[np.ndarray], Point] = theta.unflatten
    else:
        base = np.asarray(theta, dtype=float).ravel()
        shape = np.shape(theta)

        def wrap(v: np.ndarray) -> Point:
            return v.reshape(shape)

    grad = np.zeros_like(base)
    for k in range(base.size):
        e = np.zeros_like(base)
        e[k] = step
        grad[k] = (float(f(wrap(base + e))) - float(f(wrap(base - e)))) / (2.0 * step)
    return wrap(grad)
