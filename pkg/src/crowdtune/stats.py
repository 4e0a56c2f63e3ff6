"""Summaries of repeated measurements.

Timing distributions are often multi-modal (e.g. a core hopping between two
frequency states).  ``summarize`` reports a normality verdict and splits
the samples into at most two clusters instead of discarding the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import EmptyInput, UnknownKey

ALPHA = 0.05
MIN_NORMALITY_N = 8
SPLIT_RATIO = 0.8
NULL_BUCKET = "cm_null_state"

NORMAL = "normal"
NON_NORMAL = "non_normal"
DEGENERATE = "degenerate"
INSUFFICIENT = "insufficient"


@dataclass
class Cluster:
    center: float
    weight: float
    members: list[int]

    def to_dict(self) -> dict:
        return {"center": self.center, "weight": self.weight, "members": list(self.members)}


@dataclass
class StatSummary:
    n: int
    min: float
    max: float
    mean: float
    stddev: float
    normality: str
    clusters: list[Cluster] = field(default_factory=list)
    p_value: float | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "stddev": self.stddev,
            "normality": self.normality,
            "p_value": self.p_value,
            "clusters": [c.to_dict() for c in self.clusters],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StatSummary":
        return cls(
            n=d["n"],
            min=d["min"],
            max=d["max"],
            mean=d["mean"],
            stddev=d["stddev"],
            normality=d["normality"],
            clusters=[Cluster(c["center"], c["weight"], list(c["members"])) for c in d["clusters"]],
            p_value=d.get("p_value"),
        )


def _skew_z(g1: float, n: int) -> float:
    y = g1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = 3.0 * (n * n + 27 * n - 70) * (n + 1) * (n + 3) / ((n - 2.0) * (n + 5) * (n + 7) * (n + 9))
    w2 = -1.0 + math.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1.0))
    if y == 0:
        y = 1.0
    return delta * math.log(y / alpha + math.sqrt((y / alpha) ** 2 + 1.0))


def _kurtosis_z(b2: float, n: int) -> float:
    expected = 3.0 * (n - 1) / (n + 1)
    var_b2 = 24.0 * n * (n - 2) * (n - 3) / ((n + 1) ** 2 * (n + 3) * (n + 5))
    x = (b2 - expected) / math.sqrt(var_b2)
    sqrt_beta1 = (
        6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9))
        * math.sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2) * (n - 3)))
    )
    a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + math.sqrt(1.0 + 4.0 / sqrt_beta1**2))
    term1 = 1.0 - 2.0 / (9.0 * a)
    denom = 1.0 + x * math.sqrt(2.0 / (a - 4.0))
    if denom == 0:
        return math.inf
    term2 = math.copysign(((1.0 - 2.0 / a) / abs(denom)) ** (1.0 / 3.0), denom)
    return (term1 - term2) / math.sqrt(2.0 / (9.0 * a))


def omnibus_pvalue(samples: Sequence[float]) -> float:
    """D'Agostino-Pearson K^2 test p-value (skewness + kurtosis), n >= 8."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    d = x - x.mean()
    m2 = float(np.mean(d**2))
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    g1 = m3 / m2**1.5
    b2 = m4 / m2**2
    k2 = _skew_z(g1, n) ** 2 + _kurtosis_z(b2, n) ** 2
    return math.exp(-k2 / 2.0)  # chi-square survival, 2 dof


def two_means(x: np.ndarray) -> tuple[np.ndarray, float]:
    """1-D two-means from the 10th/90th percentiles.

    Returns the boolean "upper cluster" mask and the between/total variance ratio.
    """
    c_lo, c_hi = np.percentile(x, [10, 90])
    upper = x > (c_lo + c_hi) / 2.0
    for _ in range(100):
        if upper.all() or not upper.any():
            return upper, 0.0
        c_lo, c_hi = x[~upper].mean(), x[upper].mean()
        new = x > (c_lo + c_hi) / 2.0
        if np.array_equal(new, upper):
            break
        upper = new
    if upper.all() or not upper.any():
        return upper, 0.0
    total = float(np.sum((x - x.mean()) ** 2))
    if total == 0:
        return upper, 0.0
    m = x.mean()
    between = upper.sum() * (x[upper].mean() - m) ** 2 + (~upper).sum() * (x[~upper].mean() - m) ** 2
    return upper, float(between / total)


def summarize(samples: Iterable[float]) -> StatSummary:
    x = np.asarray(list(samples), dtype=float)
    n = int(x.size)
    if n == 0:
        raise EmptyInput("no samples")
    lo, hi = float(x.min()), float(x.max())
    everyone = list(range(n))
    if lo == hi:
        return StatSummary(n, lo, hi, lo, 0.0, DEGENERATE, [Cluster(lo, 1.0, everyone)])

    mean = min(max(math.fsum(x) / n, lo), hi)
    stddev = float(np.std(x, ddof=1)) if n > 1 else 0.0
    p_value = None
    if n < MIN_NORMALITY_N:
        normality = INSUFFICIENT
    else:
        p_value = omnibus_pvalue(x)
        normality = NORMAL if p_value >= ALPHA else NON_NORMAL

    clusters = [Cluster(mean, 1.0, everyone)]
    if n >= 2:
        upper, ratio = two_means(x)
        if ratio > SPLIT_RATIO:
            lo_idx = [i for i in everyone if not upper[i]]
            hi_idx = [i for i in everyone if upper[i]]
            clusters = [
                Cluster(float(np.mean(x[lo_idx])), len(lo_idx) / n, lo_idx),
                Cluster(float(np.mean(x[hi_idx])), len(hi_idx) / n, hi_idx),
            ]
    return StatSummary(n, lo, hi, mean, stddev, normality, clusters, p_value)


def expected_and_min(summary: StatSummary) -> dict:
    """``min_value`` for co-design studies, ``expected_value`` (heaviest cluster mean) for end users."""
    heaviest = max(summary.clusters, key=lambda c: c.weight)  # first wins ties: lowest center
    return {"min_value": summary.min, "expected_value": heaviest.center}


def separate_by_state(points: Sequence[Any], state_key: str, descriptors=None) -> dict:
    """Bucket points by the exact value of one state key; missing/null go to ``NULL_BUCKET``."""
    if descriptors is not None:
        declared = {d.key: d.classification for d in descriptors}
        if declared.get(state_key) != "state":
            raise UnknownKey(f"{state_key!r} is not a declared state key")
    elif points and not any(state_key in p.s for p in points):
        raise UnknownKey(f"no point carries state {state_key!r}")
    buckets: dict[Any, list] = {}
    for point in points:
        value = point.s.get(state_key)
        key = NULL_BUCKET if value is None else value
        buckets.setdefault(key, []).append(point)
    return buckets
