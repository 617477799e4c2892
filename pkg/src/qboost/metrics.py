"""SRCC / PLCC between predicted scores and MOS.

Correlations over a constant vector are undefined and come back as ``None``
instead of raising, so a degenerate run still produces a report.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import MetricError

LOGISTIC_MAX_ITER = 2000
LOGISTIC_TOL = 1e-9


@dataclass(frozen=True)
class CorrelationReport:
    srcc: float | None
    plcc: float | None
    n: int
    plcc_logistic: float | None = None
    logistic_fallback: bool = False

    @property
    def srcc_defined(self) -> bool:
        return self.srcc is not None

    @property
    def plcc_defined(self) -> bool:
        return self.plcc is not None


def _paired(predictions: Sequence[float], ground_truth: Sequence[float], min_n: int = 3, what: str = ""):
    x = np.asarray(predictions, dtype=float)
    y = np.asarray(ground_truth, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise MetricError(f"paired length mismatch: {x.size} vs {y.size}")
    if x.size < min_n:
        raise MetricError(f"sample too small{what}: n={x.size}, need at least {min_n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise MetricError("non-finite value in paired sample")
    return x, y


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; ties share the mean of the ranks they span."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="mergesort")
    ranks = np.empty(arr.size, dtype=float)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        # positions i..j (0-based) hold ranks i+1..j+1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks.tolist()


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    dx = x - math.fsum(x) / x.size
    dy = y - math.fsum(y) / y.size
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def srcc(predictions: Sequence[float], ground_truth: Sequence[float]) -> float | None:
    x, y = _paired(predictions, ground_truth)
    return _pearson(np.asarray(average_ranks(x)), np.asarray(average_ranks(y)))


def plcc(predictions: Sequence[float], ground_truth: Sequence[float]) -> float | None:
    x, y = _paired(predictions, ground_truth)
    return _pearson(x, y)


def logistic4(x: np.ndarray, b1: float, b2: float, b3: float, b4: float) -> np.ndarray:
    z = np.clip(-(x - b3) / abs(b4), -700, 700)
    return b2 + (b1 - b2) / (1.0 + np.exp(z))


@dataclass(frozen=True)
class LogisticFit:
    params: tuple[float, float, float, float]
    converged: bool
    iterations: int

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return logistic4(np.asarray(x, dtype=float), *self.params)


def fit_logistic(predictions: Sequence[float], ground_truth: Sequence[float]) -> LogisticFit:
    """Least-squares fit of the 4-parameter logistic mapping predictions onto MOS.

    Nelder-Mead from (max MOS, min MOS, median prediction, std of
    predictions); converged means the simplex spread dropped below 1e-9
    within 2000 iterations.
    """
    x, y = _paired(predictions, ground_truth, min_n=5, what=" for logistic fit")
    spread = float(np.std(x))
    init = np.array([y.max(), y.min(), float(np.median(x)), spread if spread > 0 else 1.0])

    def loss(beta: np.ndarray) -> float:
        if beta[3] == 0:
            return math.inf
        resid = logistic4(x, *beta) - y
        return float(np.dot(resid, resid))

    result = minimize(
        loss,
        init,
        method="Nelder-Mead",
        options={"maxiter": LOGISTIC_MAX_ITER, "xatol": LOGISTIC_TOL, "fatol": LOGISTIC_TOL},
    )
    params = tuple(float(v) for v in result.x)
    converged = bool(result.success) and all(math.isfinite(v) for v in params)
    return LogisticFit(params, converged, int(result.nit))


def plcc_logistic(predictions: Sequence[float], ground_truth: Sequence[float]) -> tuple[float | None, bool]:
    """PLCC after the logistic mapping; returns ``(value, fell_back)``.

    When the fit does not converge the plain PLCC is returned and
    ``fell_back`` is True.
    """
    x, y = _paired(predictions, ground_truth, min_n=5, what=" for logistic fit")
    if _pearson(x, y) is None:
        return None, False
    fit = fit_logistic(x, y)
    if not fit.converged:
        return _pearson(x, y), True
    return _pearson(fit(x), y), False


def correlate(
    predictions: Sequence[float], ground_truth: Sequence[float], logistic: bool = False
) -> CorrelationReport:
    x, y = _paired(predictions, ground_truth)
    report = CorrelationReport(srcc=srcc(x, y), plcc=plcc(x, y), n=int(x.size))
    if logistic and x.size >= 5:
        value, fell_back = plcc_logistic(x, y)
        report = CorrelationReport(report.srcc, report.plcc, report.n, value, fell_back)
    return report


def compute_relative_index(reports: Sequence[CorrelationReport], metric: str = "srcc") -> list[float | None]:
    """Each report's metric divided by the best one in the list."""
    if metric not in ("srcc", "plcc"):
        raise ValueError(f"unknown metric {metric!r}")
    if not reports:
        raise MetricError("no index computable: no reports")
    values = [getattr(r, metric) for r in reports]
    defined = [v for v in values if v is not None]
    if not defined or max(defined) <= 0:
        raise MetricError("no index computable")
    best = max(defined)
    return [None if v is None else v / best for v in values]


def mean_report(reports: Sequence[CorrelationReport]) -> CorrelationReport:
    """Average of several reports, e.g. over sub-sets of one dataset."""
    if not reports:
        raise MetricError("no reports to average")

    def avg(name: str) -> float | None:
        values = [getattr(r, name) for r in reports]
        if any(v is None for v in values):
            return None
        return statistics.fmean(values)

    return CorrelationReport(
        srcc=avg("srcc"),
        plcc=avg("plcc"),
        n=sum(r.n for r in reports),
        plcc_logistic=avg("plcc_logistic"),
        logistic_fallback=any(r.logistic_fallback for r in reports),
    )
