"""
The discrete n-layer residual network and its training objective.

    X_{i+1} = X_i + (1/n) sigma(K_i X_i + b_i),   output h(W X_n + c)

E_n(theta) = sum_s ||h(W X_n[x_s] + c) - y_s||^2
             + a1 R1_n(K) + a2 R2_n(b) + a3 ||W||^2 + a4 ||c||^2
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import NumericalBlowupError, ShapeMismatchError
from .functions import Activation, Classifier
from .spaces import DiscreteParamPath, ParamSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """S input/label pairs stored as (S, d) and (S, m) arrays."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.array(self.inputs, dtype=float))
        y = np.atleast_2d(np.array(self.labels, dtype=float))
        if x.shape[0] < 1:
            raise ValueError("a training set needs at least one sample")
        if x.shape[0] != y.shape[0]:
            raise ShapeMismatchError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("training data must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    @property
    def m(self) -> int:
        return self.labels.shape[1]

    def permuted(self, order: Sequence[int]) -> "TrainingSet":
        order = np.asarray(order)
        return TrainingSet(self.inputs[order], self.labels[order])

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TrainingSet":
        """
        One row per sample. The header is required: columns named x* are inputs,
        columns named y* are labels, and every input column precedes every label column.
        """
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ValueError(f"{path}: empty file, a header row is required") from None
            rows = [row for row in reader if row and any(cell.strip() for cell in row)]

        kinds = [h[:1].lower() for h in header]
        if not kinds or any(k not in ("x", "y") for k in kinds):
            raise ValueError(f"{path}: header columns must start with 'x' or 'y', got {header}")
        d = kinds.count("x")
        if d == 0 or kinds.count("y") == 0 or kinds != ["x"] * d + ["y"] * (len(kinds) - d):
            raise ValueError(f"{path}: expected input columns x* followed by label columns y*")
        try:
            table = np.array([[float(cell) for cell in row] for row in rows], dtype=float)
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric cell ({exc})") from exc
        if table.ndim != 2 or table.shape[0] == 0:
            raise ValueError(f"{path}: no samples")
        if table.shape[1] != len(header):
            raise ShapeMismatchError(f"{path}: rows have {table.shape[1]} cells, header has {len(header)}")
        logger.info("Loaded %d samples (d=%d, m=%d) from %s", table.shape[0], d, len(header) - d, path)
        return cls(table[:, :d], table[:, d:])


@dataclass(frozen=True)
class HyperParams:
    alphas: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    taus: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alphas)
        taus = tuple(float(t) for t in self.taus)
        if len(alphas) != 4 or len(taus) != 2:
            raise ValueError("hyper-parameters need four alphas and two taus")
        if any(not np.isfinite(v) or v <= 0 for v in alphas + taus):
            raise ValueError(f"regularisation weights must be strictly positive, got {alphas} / {taus}")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "taus", taus)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States X_0..X_n; one row per layer boundary (and per sample when batched)."""

    states: np.ndarray

    @property
    def n(self) -> int:
        return self.states.shape[0] - 1

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Objective value with its unweighted terms; total includes the alpha weights."""

    total: float
    loss: float
    r1: float
    r2: float
    r3: float
    r4: float

    def __float__(self) -> float:
        return self.total

    def as_dict(self) -> dict:
        return {"total": self.total, "loss": self.loss, "r1": self.r1, "r2": self.r2, "r3": self.r3, "r4": self.r4}


def residual_step(X: np.ndarray, K: np.ndarray, b: np.ndarray, sigma: Activation, h: float) -> np.ndarray:
    """One explicit Euler / residual update; X is (d,) or (S, d). Shared by the ODE solver."""
    return X + h * sigma(X @ K.T + b)


def check_params(K: DiscreteParamPath, b: DiscreteParamPath) -> None:
    if K.n != b.n:
        raise ShapeMismatchError(f"K has {K.n} layers but b has {b.n}")
    if K.d != b.d:
        raise ShapeMismatchError(f"K acts on R^{K.d} but b lives in R^{b.d}")


def forward_pass(x: np.ndarray, K: DiscreteParamPath, b: DiscreteParamPath, sigma: Activation) -> Trajectory:
    """All n + 1 states of the recursion; x may be one input (d,) or a batch (S, d)."""
    check_params(K, b)
    X = np.array(x, dtype=float)
    if X.shape[-1] != K.d or X.ndim not in (1, 2):
        raise ShapeMismatchError(f"input of shape {X.shape} does not match d={K.d}")
    n = K.n
    h = 1.0 / n
    states = np.empty((n + 1,) + X.shape)
    states[0] = X
    for i in range(n):
        X = residual_step(X, K.values[i], b.values[i], sigma, h)
        if not np.all(np.isfinite(X)):
            raise NumericalBlowupError(f"non-finite state at layer {i + 1} of {n}")
        states[i + 1] = X
    return Trajectory(states)


def predict(theta: ParamSet, x: np.ndarray, sigma: Activation, h: Classifier) -> np.ndarray:
    XN = forward_pass(x, theta.K, theta.b, sigma).final
    return h(XN @ theta.W.T + theta.c)


def _check_data(theta: ParamSet, data: TrainingSet) -> None:
    if data.d != theta.d or data.m != theta.m:
        raise ShapeMismatchError(
            f"data has (d={data.d}, m={data.m}) but parameters have (d={theta.d}, m={theta.m})"
        )


def loss_En(theta: ParamSet, data: TrainingSet, sigma: Activation, h: Classifier) -> float:
    """Plain sum over samples (no 1/S) of ||h(W X_n + c) - y_s||^2."""
    _check_data(theta, data)
    residual = predict(theta, data.inputs, sigma, h) - data.labels
    return float(np.sum(residual * residual))


def _sum_sq(a: np.ndarray) -> float:
    return float(np.sum(np.asarray(a) ** 2))


def _reg_path(p: DiscreteParamPath, tau: float) -> float:
    diffs = np.diff(p.values, axis=0)
    return p.n * _sum_sq(diffs) + tau * _sum_sq(p.values[0])


def reg_R1n(K: DiscreteParamPath, tau1: float) -> float:
    """n * sum_{i>=1} ||K_i - K_{i-1}||^2 + tau1 ||K_0||^2."""
    return _reg_path(K, tau1)


def reg_R2n(b: DiscreteParamPath, tau2: float) -> float:
    return _reg_path(b, tau2)


def reg_R3(W: np.ndarray) -> float:
    return _sum_sq(W)


def reg_R4(c: np.ndarray) -> float:
    return _sum_sq(c)


def combine(loss: float, r1: float, r2: float, r3: float, r4: float, hyper: HyperParams) -> ObjectiveBreakdown:
    a1, a2, a3, a4 = hyper.alphas
    total = loss + a1 * r1 + a2 * r2 + a3 * r3 + a4 * r4
    return ObjectiveBreakdown(total=total, loss=loss, r1=r1, r2=r2, r3=r3, r4=r4)


def objective_En(
    theta: ParamSet,
    data: Optional[TrainingSet],
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
) -> ObjectiveBreakdown:
    """E_n with every term reported; data=None drops the loss (regulariser-only objective)."""
    if not theta.is_discrete:
        raise ShapeMismatchError("objective_En takes discrete parameters")
    loss = 0.0 if data is None else loss_En(theta, data, sigma, h)
    tau1, tau2 = hyper.taus
    return combine(loss, reg_R1n(theta.K, tau1), reg_R2n(theta.b, tau2), reg_R3(theta.W), reg_R4(theta.c), hyper)


def constant_params(n: int, K: np.ndarray, b: np.ndarray, W: np.ndarray, c: np.ndarray) -> ParamSet:
    """Discrete parameters with K_i = K and b_i = b on every layer."""
    K = np.asarray(K, dtype=float)
    b = np.asarray(b, dtype=float)
    return ParamSet(
        K=DiscreteParamPath(np.repeat(K[None], n, axis=0)),
        b=DiscreteParamPath(np.repeat(b[None], n, axis=0)),
        W=np.atleast_2d(np.asarray(W, dtype=float)),
        c=np.atleast_1d(np.asarray(c, dtype=float)),
    )


def saturation_labels(inputs: np.ndarray) -> np.ndarray:
    """Residual analogue of sign labels: y = x + sign(x), the limit of the tanh family below."""
    x = np.asarray(inputs, dtype=float)
    return x + np.sign(x)


def tanh_saturation_family(data: TrainingSet, kappas: Sequence[float], n: int, sigma: Activation) -> List[float]:
    """
    Loss along K_i = kappa, b = 0, W = 1, c = 0 (d = m = 1, h = identity).
    With tau = 0 every member has zero non-parametric regularisation, and for
    saturation labels the loss falls towards 0 as kappa grows without bound:
    a minimising sequence with no convergent subsequence.
    """
    if data.d != 1 or data.m != 1:
        raise ShapeMismatchError("the saturation family is one-dimensional")
    out = []
    for kappa in kappas:
        theta = constant_params(n, [[kappa]], [0.0], [[1.0]], [0.0])
        XN = forward_pass(data.inputs, theta.K, theta.b, sigma).final
        out.append(float(np.sum((XN - data.labels) ** 2)))
    return out


def readout_degeneracy_family(
    ws: Sequence[float],
    n: int,
    hyper: HyperParams,
    sigma: Activation,
    h: Classifier,
    x: float = 1.0,
    samples: int = 1,
) -> List[ObjectiveBreakdown]:
    """
    K = 0, b = 0 and data x_s = y_s = x: the network is the identity, so the
    readout W, c = (1 - W) x fits exactly for every W and only a3 W^2 + a4 c^2
    separates the members.
    """
    data = TrainingSet(np.full((samples, 1), x), np.full((samples, 1), x))
    out = []
    for w in ws:
        theta = constant_params(n, [[0.0]], [0.0], [[w]], [(1.0 - w) * x])
        out.append(objective_En(theta, data, hyper, sigma, h))
    return out
