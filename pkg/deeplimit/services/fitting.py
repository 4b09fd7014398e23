"""Least-squares power-law fits in log-log coordinates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitResult:
    """log(value) ~ intercept + slope * log(n)."""

    slope: float
    intercept: float
    r2: float
    points: int

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "points": self.points}


def loglog_fit(xs: Iterable[float], ys: Iterable[float]) -> FitResult:
    """Ordinary least squares on (log x, log y); inputs must already be positive."""
    lx = np.log(np.asarray(list(xs), dtype=float))
    ly = np.log(np.asarray(list(ys), dtype=float))
    if lx.size < 2:
        return FitResult(math.nan, math.nan, math.nan, int(lx.size))
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), r2, int(lx.size))


def positive_pairs(pairs: Iterable[Tuple[float, float]]) -> Tuple[list, list]:
    xs, ys = [], []
    for x, y in pairs:
        if not (x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y)):
            logger.warning("Excluding non-positive or non-finite point (%r, %r) from the fit", x, y)
            continue
        xs.append(float(x))
        ys.append(float(y))
    return xs, ys


def rate_fit(pairs: Iterable[Tuple[float, float]]) -> FitResult:
    """
    Fit value ~ C n^slope over (n, value) pairs. Non-positive values are excluded
    with a warning; at least three usable pairs are required.
    """
    xs, ys = positive_pairs(pairs)
    if len(xs) < 3:
        raise ValueError(f"rate_fit needs at least 3 positive pairs, got {len(xs)}")
    fit = loglog_fit(xs, ys)
    logger.info("rate fit over %d points: slope=%.4f R^2=%.4f", fit.points, fit.slope, fit.r2)
    return fit
