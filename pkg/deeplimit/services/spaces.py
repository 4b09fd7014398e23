# Grids, parameter paths, discrete <-> continuum maps and the distances d1, d2, d.
#
# Cell convention: the step extension of a grid path assigns K_i to the
# left-closed cell [i/n, (i+1)/n) and K_{n-1} to t = 1. Every L2 quantity
# below is insensitive to that choice.
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Tuple

import numpy as np

from ..exceptions import ShapeMismatchError

# Slack when locating the cell of a grid time t = k/n computed in floating point.
_CELL_EPS = 1e-9


class Flavor(str, Enum):
    MATRIX = "matrix"
    VECTOR = "vector"


def _frozen_array(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def _flavor_of(values: np.ndarray) -> Flavor:
    if values.ndim == 3:
        if values.shape[1] != values.shape[2]:
            raise ShapeMismatchError(f"matrix path elements must be square, got {values.shape[1:]}")
        return Flavor.MATRIX
    if values.ndim == 2:
        return Flavor.VECTOR
    raise ShapeMismatchError(f"path values must have shape (count, d) or (count, d, d), got {values.shape}")


def _element_sq_norms(values: np.ndarray) -> np.ndarray:
    """Squared Frobenius/Euclidean norm of every element along axis 0."""
    return np.sum(values * values, axis=tuple(range(1, values.ndim)))


def hat_weights(t: Any, node_count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Left node index and linear weight of t on a uniform grid of node_count nodes on [0, 1]."""
    s = np.asarray(t, dtype=float) * (node_count - 1)
    idx = np.clip(np.floor(s).astype(int), 0, node_count - 2)
    frac = np.clip(s - idx, 0.0, 1.0)
    return idx, frac


@dataclass(frozen=True)
class Grid:
    """Uniform layer grid t_i = i/n, i = 0..n-1 (the support of mu_n)."""

    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid needs a positive integer layer count, got {self.n!r}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) / self.n


@dataclass(frozen=True, eq=False)
class DiscreteParamPath:
    """K^(n) or b^(n): one d x d matrix or d-vector per grid node."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen_array(self.values)
        _flavor_of(arr)
        if arr.shape[0] < 1:
            raise ValueError("a discrete path needs at least one node")
        if not np.all(np.isfinite(arr)):
            raise ValueError("discrete path entries must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def flavor(self) -> Flavor:
        return _flavor_of(self.values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def grid(self) -> Grid:
        return Grid(self.n)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def element_shape(self) -> Tuple[int, ...]:
        return self.values.shape[1:]

    def sup_norm(self) -> float:
        """Max over nodes of the element norm, i.e. the L-infinity(mu_n) norm."""
        return float(np.sqrt(np.max(_element_sq_norms(self.values))))


@dataclass(frozen=True, eq=False)
class ContinuumParamPath:
    """Piecewise-linear nodal representative of K(t) or b(t) in H^1([0, 1])."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen_array(self.values)
        _flavor_of(arr)
        if arr.shape[0] < 2:
            raise ValueError("a continuum path needs at least two nodes")
        if not np.all(np.isfinite(arr)):
            raise ValueError("continuum path entries must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def flavor(self) -> Flavor:
        return _flavor_of(self.values)

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.node_count)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def element_shape(self) -> Tuple[int, ...]:
        return self.values.shape[1:]

    def evaluate(self, t: Any) -> np.ndarray:
        """Exact linear interpolation; t may be a scalar or an array of times."""
        idx, frac = hat_weights(t, self.node_count)
        frac = np.reshape(frac, frac.shape + (1,) * len(self.element_shape))
        return (1.0 - frac) * self.values[idx] + frac * self.values[idx + 1]

    def derivative(self) -> np.ndarray:
        """Piecewise-constant derivative, one value per node interval."""
        return np.diff(self.values, axis=0) * (self.node_count - 1)

    def sup_norm(self) -> float:
        # the norm is convex, so its max over a linear segment sits at a node
        return float(np.sqrt(np.max(_element_sq_norms(self.values))))

    def max_slope(self) -> float:
        return float(np.sqrt(np.max(_element_sq_norms(self.derivative()))))


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Step extension K~^(n) of a discrete path onto [0, 1]."""

    path: DiscreteParamPath

    @property
    def n(self) -> int:
        return self.path.n

    @property
    def element_shape(self) -> Tuple[int, ...]:
        return self.path.element_shape

    def cell_index(self, t: Any) -> np.ndarray:
        return np.clip(np.floor(np.asarray(t, dtype=float) * self.n + _CELL_EPS).astype(int), 0, self.n - 1)

    def evaluate(self, t: Any) -> np.ndarray:
        return self.path.values[self.cell_index(t)]

    def integral(self) -> np.ndarray:
        """Closed-form integral over [0, 1]: the mean of the cell values."""
        return np.sum(self.path.values, axis=0) / self.n


def extend_piecewise_constant(p: DiscreteParamPath) -> StepFunction:
    return StepFunction(p)


def _merged_cuts(n: int, node_count: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Common refinement of the layer cells and the interpolation intervals."""
    cuts = np.union1d(np.arange(n + 1) / n, np.linspace(0.0, 1.0, node_count))
    a, b = cuts[:-1], cuts[1:]
    cell = np.clip(np.floor(0.5 * (a + b) * n).astype(int), 0, n - 1)
    return a, b, cell


def _l2_gap(p: DiscreteParamPath, path: ContinuumParamPath) -> float:
    if p.element_shape != path.element_shape:
        raise ShapeMismatchError(
            f"cannot compare a {p.flavor.value} path of shape {p.element_shape} "
            f"with a continuum path of shape {path.element_shape}"
        )
    a, b, cell = _merged_cuts(p.n, path.node_count)
    const = p.values[cell]
    ea = path.evaluate(a) - const
    eb = path.evaluate(b) - const
    # exact integral of a squared linear function on [a, b]
    per_piece = _element_sq_norms(ea) + _element_sq_norms(eb) + np.sum(ea * eb, axis=tuple(range(1, ea.ndim)))
    total = float(np.sum((b - a) / 3.0 * per_piece))
    return float(np.sqrt(max(total, 0.0)))


def d1_distance(p: DiscreteParamPath, K: ContinuumParamPath) -> float:
    """||K~^(n) - K||_{L2}; the arguments are (discrete, continuum) and the order matters."""
    if p.flavor is not Flavor.MATRIX or K.flavor is not Flavor.MATRIX:
        raise ShapeMismatchError("d1 compares matrix-valued paths")
    return _l2_gap(p, K)


def d2_distance(p: DiscreteParamPath, b: ContinuumParamPath) -> float:
    """||b~^(n) - b||_{L2}."""
    if p.flavor is not Flavor.VECTOR or b.flavor is not Flavor.VECTOR:
        raise ShapeMismatchError("d2 compares vector-valued paths")
    return _l2_gap(p, b)


def restrict_cell_average(K: ContinuumParamPath, n: int) -> DiscreteParamPath:
    """K_i = n * integral of K over [i/n, (i+1)/n] (the recovery-sequence restriction)."""
    if n < 1:
        raise ValueError(f"restriction needs n >= 1, got {n}")
    a, b, cell = _merged_cuts(n, K.node_count)
    width = (b - a).reshape((-1,) + (1,) * len(K.element_shape))
    pieces = 0.5 * width * (K.evaluate(a) + K.evaluate(b))
    out = np.zeros((n,) + K.element_shape)
    np.add.at(out, cell, pieces)
    return DiscreteParamPath(out * n)


def restrict_nodal(K: ContinuumParamPath, n: int) -> DiscreteParamPath:
    """K_i = K(i/n) (pointwise sampling on the layer grid)."""
    if n < 1:
        raise ValueError(f"restriction needs n >= 1, got {n}")
    return DiscreteParamPath(K.evaluate(np.arange(n) / n))


def _interp_rows(src_t: np.ndarray, values: np.ndarray, dst_t: np.ndarray) -> np.ndarray:
    """Linear interpolation along axis 0, clamped outside [src_t[0], src_t[-1]]."""
    if len(src_t) == 1:
        return np.repeat(values, len(dst_t), axis=0)
    idx = np.clip(np.searchsorted(src_t, dst_t, side="right") - 1, 0, len(src_t) - 2)
    frac = np.clip((dst_t - src_t[idx]) / (src_t[idx + 1] - src_t[idx]), 0.0, 1.0)
    frac = frac.reshape((-1,) + (1,) * (values.ndim - 1))
    return (1.0 - frac) * values[idx] + frac * values[idx + 1]


def upsample(p: DiscreteParamPath, n2: int) -> DiscreteParamPath:
    """Transfer a path to a finer grid by linear interpolation of node values."""
    if n2 < p.n:
        raise ValueError(f"upsample target {n2} is coarser than the source grid {p.n}")
    if n2 == p.n:
        return DiscreteParamPath(p.values.copy())
    return DiscreteParamPath(_interp_rows(p.grid.nodes, p.values, np.arange(n2) / n2))


def prolong(p: DiscreteParamPath, node_count: int) -> ContinuumParamPath:
    """Nodal path through the points (i/n, p_i), held constant after (n-1)/n."""
    if node_count < 2:
        raise ValueError(f"a continuum path needs at least 2 nodes, got {node_count}")
    return ContinuumParamPath(_interp_rows(p.grid.nodes, p.values, np.linspace(0.0, 1.0, node_count)))


def continuum_from_function(f: Callable[[float], Any], node_count: int, shape: Tuple[int, ...]) -> ContinuumParamPath:
    """Sample f on node_count uniform nodes; f(t) must broadcast to shape."""
    nodes = np.linspace(0.0, 1.0, node_count)
    return ContinuumParamPath(np.stack([np.broadcast_to(np.asarray(f(t), dtype=float), shape) for t in nodes]))


@dataclass(frozen=True, eq=False)
class ParamSet:
    """theta = (K, b, W, c); K and b are both discrete or both continuum."""

    K: Any
    b: Any
    W: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        W = _frozen_array(self.W)
        c = _frozen_array(self.c)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "c", c)
        if type(self.K) is not type(self.b):
            raise ShapeMismatchError("K and b must both be discrete or both continuum paths")
        if not isinstance(self.K, (DiscreteParamPath, ContinuumParamPath)):
            raise ShapeMismatchError(f"unsupported path type {type(self.K).__name__}")
        if self.K.flavor is not Flavor.MATRIX or self.b.flavor is not Flavor.VECTOR:
            raise ShapeMismatchError("K must be matrix-valued and b vector-valued")
        if self.K.d != self.b.d:
            raise ShapeMismatchError(f"K has d={self.K.d} but b has d={self.b.d}")
        if self.K.values.shape[0] != self.b.values.shape[0]:
            raise ShapeMismatchError("K and b must live on the same grid")
        if W.ndim != 2 or W.shape[1] != self.K.d:
            raise ShapeMismatchError(f"W must be m x {self.K.d}, got {W.shape}")
        if c.ndim != 1 or c.shape[0] != W.shape[0]:
            raise ShapeMismatchError(f"c must have length {W.shape[0]}, got {c.shape}")

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.K, DiscreteParamPath)

    @property
    def d(self) -> int:
        return self.K.d

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def size(self) -> int:
        return self.K.values.size + self.b.values.size + self.W.size + self.c.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.K.values.ravel(), self.b.values.ravel(), self.W.ravel(), self.c.ravel()])

    def unflatten(self, vec: np.ndarray) -> "ParamSet":
        """A ParamSet with this one's structure and entries taken from vec."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ShapeMismatchError(f"expected a flat vector of length {self.size}, got {vec.shape}")
        path_cls = type(self.K)
        sizes = np.cumsum([self.K.values.size, self.b.values.size, self.W.size])
        K, b, W, c = np.split(vec, sizes)
        return ParamSet(
            K=path_cls(K.reshape(self.K.values.shape)),
            b=path_cls(b.reshape(self.b.values.shape)),
            W=W.reshape(self.W.shape),
            c=c.reshape(self.c.shape),
        )

    def zeros_like(self) -> "ParamSet":
        return self.unflatten(np.zeros(self.size))

    def dot(self, other: "ParamSet") -> float:
        """Euclidean inner product summing every component."""
        return float(np.dot(self.flatten(), other.flatten()))

    def axpy(self, a: float, other: "ParamSet") -> "ParamSet":
        """self + a * other."""
        return self.unflatten(self.flatten() + a * other.flatten())

    def restrict(self, n: int) -> "ParamSet":
        """Cell-average restriction of a continuum ParamSet; W and c are copied."""
        if self.is_discrete:
            raise ShapeMismatchError("restriction applies to continuum parameters")
        return ParamSet(restrict_cell_average(self.K, n), restrict_cell_average(self.b, n), self.W.copy(), self.c.copy())


def param_distance(theta_n: ParamSet, theta: ParamSet) -> float:
    """d(theta^(n), theta) = d1 + d2 + ||W^(n) - W||_F + ||c^(n) - c||."""
    if not theta_n.is_discrete or theta.is_discrete:
        raise ShapeMismatchError("param_distance takes (discrete, continuum) parameter sets")
    if theta_n.W.shape != theta.W.shape:
        raise ShapeMismatchError(f"W shapes differ: {theta_n.W.shape} vs {theta.W.shape}")
    return (
        d1_distance(theta_n.K, theta.K)
        + d2_distance(theta_n.b, theta.b)
        + float(np.linalg.norm(theta_n.W - theta.W))
        + float(np.linalg.norm(theta_n.c - theta.c))
    )


def path_to_json(path: Any) -> Dict[str, Any]:
    """Flat JSON object {flavor, d, n | N, values (row-major)}."""
    key = "n" if isinstance(path, DiscreteParamPath) else "N"
    return {
        "flavor": path.flavor.value,
        "d": path.d,
        key: int(path.values.shape[0]),
        "values": [float(v) for v in path.values.ravel()],
    }


def path_from_json(obj: Dict[str, Any]) -> Any:
    flavor = Flavor(obj["flavor"])
    d = int(obj["d"])
    if "n" in obj:
        count, cls = int(obj["n"]), DiscreteParamPath
    elif "N" in obj:
        count, cls = int(obj["N"]), ContinuumParamPath
    else:
        raise ValueError("path JSON needs either 'n' (discrete) or 'N' (continuum)")
    shape = (count, d, d) if flavor is Flavor.MATRIX else (count, d)
    values = np.asarray(obj["values"], dtype=float)
    if values.size != int(np.prod(shape)):
        raise ShapeMismatchError(f"path JSON carries {values.size} values, expected {int(np.prod(shape))}")
    return cls(values.reshape(shape))


def params_to_json(theta: ParamSet) -> Dict[str, Any]:
    return {
        "K": path_to_json(theta.K),
        "b": path_to_json(theta.b),
        "W": {"m": theta.m, "d": theta.d, "values": [float(v) for v in theta.W.ravel()]},
        "c": [float(v) for v in theta.c],
    }


def params_from_json(obj: Dict[str, Any]) -> ParamSet:
    W = obj["W"]
    return ParamSet(
        K=path_from_json(obj["K"]),
        b=path_from_json(obj["b"]),
        W=np.asarray(W["values"], dtype=float).reshape(int(W["m"]), int(W["d"])),
        c=np.asarray(obj["c"], dtype=float),
    )
