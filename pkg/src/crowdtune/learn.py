"""Online piecewise-linear behavior models.

A :class:`BehaviorModel` predicts one characteristic (e.g. CPI) from one
numeric feature (e.g. matrix size N).  It is made of

* contiguous affine segments fitted by exact dynamic programming with a
  per-segment penalty, and
* guard rules: a predicate (e.g. "N is a power of two") plus an affine
  correction on top of the segment prediction, checked before the segments.

Models are immutable; :func:`observe` and :func:`promote_outliers_to_guard`
return new models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import meta as jmeta
from .errors import (
    DegenerateFeature,
    InsufficientData,
    MissingFeature,
    NoModels,
    PredicateMismatch,
    ValidationError,
)
from .stats import StatSummary, expected_and_min

DEFAULT_TOLERANCE = 0.05
REL_EPS = 1e-12
REFIT_EVERY = 16
WINDOW_MAX = 4096
GUARD_MIN_MATCH = 0.8
GUARD_MAX_FALSE = 0.01
MIN_SEGMENT_SIZE = 2


# -- guard predicates ------------------------------------------------------


@dataclass(frozen=True)
class GuardPredicate:
    """Pure predicate over one numeric feature.

    kinds: ``power_of_two`` (optional ``above``: strict lower bound),
    ``divisible_by`` (``m``), ``range`` (inclusive ``lo``/``hi``).
    """

    kind: str
    feature: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power_of_two", "divisible_by", "range"):
            raise ValidationError(f"unknown guard kind {self.kind!r}")

    @classmethod
    def power_of_two(cls, feature: str, above: float | None = None) -> "GuardPredicate":
        return cls("power_of_two", feature, (("above", above),) if above is not None else ())

    @classmethod
    def divisible_by(cls, feature: str, m: int) -> "GuardPredicate":
        return cls("divisible_by", feature, (("m", m),))

    @classmethod
    def range(cls, feature: str, lo: float, hi: float) -> "GuardPredicate":
        return cls("range", feature, (("lo", lo), ("hi", hi)))

    @property
    def args(self) -> dict:
        return dict(self.params)

    @property
    def name(self) -> str:
        args = ",".join(f"{k}={v}" for k, v in self.params)
        return f"{self.kind}({self.feature}{',' if args else ''}{args})"

    def test(self, x: float) -> bool:
        args = self.args
        if self.kind == "power_of_two":
            if not float(x).is_integer() or x < 1:
                return False
            ix = int(x)
            return ix & (ix - 1) == 0 and (args.get("above") is None or x > args["above"])
        if self.kind == "divisible_by":
            return float(x).is_integer() and int(x) % int(args["m"]) == 0
        return args["lo"] <= x <= args["hi"]

    def __call__(self, values: Any) -> bool:
        if isinstance(values, (int, float)) and not isinstance(values, bool):
            return self.test(values)
        return self.test(feature_value(values, self.feature))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "feature": self.feature, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "GuardPredicate":
        if not isinstance(d, Mapping) or not isinstance(d.get("params", {}), Mapping):
            raise ValidationError(f"malformed guard predicate {d!r}")
        try:
            return cls(d["kind"], d["feature"], tuple(sorted(d.get("params", {}).items())))
        except KeyError as exc:
            raise ValidationError(f"guard predicate lacks {exc}") from exc


# -- model value types -----------------------------------------------------


@dataclass(frozen=True)
class Segment:
    x_lo: float
    x_hi: float
    slope: float
    intercept: float
    x_first: float
    x_last: float
    n: int

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept

    def to_dict(self) -> dict:
        return {
            "x_lo": self.x_lo,
            "x_hi": self.x_hi,
            "slope": self.slope,
            "intercept": self.intercept,
            "x_first": self.x_first,
            "x_last": self.x_last,
            "n": self.n,
        }


@dataclass(frozen=True)
class Guard:
    id: str
    predicate: GuardPredicate
    slope: float
    intercept: float
    samples: tuple = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "predicate": self.predicate.to_dict(),
            "slope": self.slope,
            "intercept": self.intercept,
            "samples": [list(s) for s in self.samples],
        }


@dataclass(frozen=True)
class Outlier:
    x: float
    predicted: float
    actual: float
    ref: str | None = None

    def to_dict(self) -> dict:
        return {"x": self.x, "predicted": self.predicted, "actual": self.actual, "ref": self.ref}


@dataclass(frozen=True)
class Prediction:
    value: float
    source: str  # "guard:<id>", "segment" or "extrapolated"
    segment: int | None = None

    @property
    def extrapolated(self) -> bool:
        return self.source == "extrapolated"


@dataclass(frozen=True)
class BehaviorModel:
    target: str
    feature: str
    segments: tuple[Segment, ...]
    guards: tuple[Guard, ...] = ()
    tolerance: float = DEFAULT_TOLERANCE
    outlier_log: tuple[Outlier, ...] = ()
    observations: int = 0
    max_segments: int = 8
    window: tuple[tuple[float, float], ...] = ()
    pending: int = 0
    penalty: float | None = None
    residual_ss: float = 0.0

    @property
    def breakpoints(self) -> list[float]:
        return [s.x_hi for s in self.segments[:-1]]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "feature": self.feature,
            "segments": [s.to_dict() for s in self.segments],
            "guards": [g.to_dict() for g in self.guards],
            "tolerance": self.tolerance,
            "outliers": [o.to_dict() for o in self.outlier_log],
            "observations": self.observations,
            "max_segments": self.max_segments,
            "window": [list(w) for w in self.window],
            "pending": self.pending,
            "penalty": self.penalty,
            "residual_ss": self.residual_ss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorModel":
        return cls(
            target=d["target"],
            feature=d["feature"],
            segments=tuple(Segment(**s) for s in d["segments"]),
            guards=tuple(
                Guard(
                    g["id"],
                    GuardPredicate.from_dict(g["predicate"]),
                    g["slope"],
                    g["intercept"],
                    tuple(tuple(s) for s in g.get("samples", [])),
                )
                for g in d.get("guards", [])
            ),
            tolerance=d.get("tolerance", DEFAULT_TOLERANCE),
            outlier_log=tuple(Outlier(**o) for o in d.get("outliers", [])),
            observations=d.get("observations", 0),
            max_segments=d.get("max_segments", 8),
            window=tuple(tuple(w) for w in d.get("window", [])),
            pending=d.get("pending", 0),
            penalty=d.get("penalty"),
            residual_ss=d.get("residual_ss", 0.0),
        )


# -- extracting (x, y) -----------------------------------------------------


def feature_value(values: Any, key: str) -> float:
    """Look ``key`` up in a flat mapping, a point-like mapping (p/c/s) or an ExperimentPoint."""
    found = _lookup(values, key)
    if found is None or isinstance(found, bool) or not isinstance(found, (int, float)):
        raise MissingFeature(f"feature {key!r} missing or not numeric")
    return float(found)


def _lookup(values: Any, key: str):
    if hasattr(values, "p") and hasattr(values, "c") and hasattr(values, "s"):
        layers = (values.p, values.c, values.s)
    elif isinstance(values, Mapping):
        if key in values:
            return values[key]
        hit = jmeta.get_path(values, key, None) if _valid_path(key) else None
        if hit is not None:
            return hit
        layers = tuple(values.get(k) for k in ("p", "c", "s") if isinstance(values.get(k), Mapping))
    else:
        return None
    for layer in layers:
        if key in layer:
            return layer[key]
        if _valid_path(key):
            hit = jmeta.get_path(layer, key, None)
            if hit is not None:
                return hit
    return None


def _valid_path(key: str) -> bool:
    return isinstance(key, str) and bool(key) and "" not in key.split(".")


def target_value(point: Any, target: str) -> float:
    """Expected value of ``target`` from aggregates, else the mean of raw samples."""
    if hasattr(point, "b"):
        agg = getattr(point, "aggregates", {}) or {}
        if target in agg:
            s = agg[target]
            summary = s if isinstance(s, StatSummary) else StatSummary.from_dict(s)
            return float(expected_and_min(summary)["expected_value"])
        samples = point.b.get(target)
        if not samples:
            raise MissingFeature(f"target {target!r} missing")
        return float(np.mean(samples))
    return feature_value(point, target)


def _observation(point: Any, target: str, feature: str) -> tuple[float, float, str | None]:
    if isinstance(point, (tuple, list)) and len(point) == 2:
        return float(point[0]), float(point[1]), None
    ref = getattr(point, "ref", None) or getattr(point, "uid", None)
    return feature_value(point, feature), target_value(point, target), ref


def rel_error(predicted: float, actual: float) -> float:
    return abs(predicted - actual) / max(abs(actual), REL_EPS)


# -- segmented least squares ------------------------------------------------


@dataclass
class _Groups:
    x: np.ndarray  # distinct sorted x
    n: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sxx: np.ndarray
    sxy: np.ndarray
    syy: np.ndarray


def _group(x: np.ndarray, y: np.ndarray) -> tuple[_Groups, np.ndarray]:
    ux, inv = np.unique(x, return_inverse=True)
    # centring and scaling keep the prefix-sum formulas well conditioned
    xs = (x - x.mean()) / (x.std() or 1.0)
    ys = y - y.mean()
    g = len(ux)

    def agg(v):
        out = np.zeros(g)
        np.add.at(out, inv, v)
        return out

    return (
        _Groups(ux, agg(np.ones_like(xs)), agg(xs), agg(ys), agg(xs * xs), agg(xs * ys), agg(ys * ys)),
        inv,
    )


def _cost_matrix(gr: _Groups, min_size: int) -> np.ndarray:
    """``C[i, j]``: residual sum of squares of one line over groups ``i..j-1``."""
    g = len(gr.x)
    pre = {k: np.concatenate([[0.0], np.cumsum(getattr(gr, k))]) for k in ("n", "sx", "sy", "sxx", "sxy", "syy")}
    cost = np.full((g + 1, g + 1), np.inf)
    for i in range(g):
        j = np.arange(i + min_size, g + 1)
        if j.size == 0:
            continue
        n = pre["n"][j] - pre["n"][i]
        sx = pre["sx"][j] - pre["sx"][i]
        sy = pre["sy"][j] - pre["sy"][i]
        sxx = pre["sxx"][j] - pre["sxx"][i] - sx * sx / n
        sxy = pre["sxy"][j] - pre["sxy"][i] - sx * sy / n
        syy = pre["syy"][j] - pre["syy"][i] - sy * sy / n
        with np.errstate(divide="ignore", invalid="ignore"):
            slope_term = np.where(sxx > 1e-12 * np.maximum(1.0, n), sxy * sxy / sxx, 0.0)
        cost[i, j] = np.maximum(syy - slope_term, 0.0)
    return cost


def segment_partition(
    x: Sequence[float],
    y: Sequence[float],
    max_segments: int,
    penalty: float,
    min_size: int = MIN_SEGMENT_SIZE,
) -> list[tuple[int, int]]:
    """Exact DP over distinct sorted x minimizing ``SSR + penalty * segments``.

    Returns half-open ranges over the distinct x values.  Ties go to fewer
    segments, then to earlier breakpoints.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gr, _ = _group(x, y)
    g = len(gr.x)
    if g < min_size:
        raise InsufficientData(f"need at least {min_size} distinct x values")
    k_max = max(1, min(max_segments, g // min_size))
    cost = _cost_matrix(gr, min_size)
    best = np.full((k_max + 1, g + 1), np.inf)
    arg = np.zeros((k_max + 1, g + 1), dtype=int)
    best[0, 0] = 0.0
    for k in range(1, k_max + 1):
        total = best[k - 1][:, None] + cost
        arg[k] = np.argmin(total, axis=0)
        best[k] = total[arg[k], np.arange(g + 1)]
    scores = [best[k, g] + penalty * k for k in range(1, k_max + 1)]
    k_best = 1 + int(np.argmin(scores))
    ranges = []
    j = g
    for k in range(k_best, 0, -1):
        i = int(arg[k, j])
        ranges.append((i, j))
        j = i
    return ranges[::-1]


def _line(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if np.ptp(x) == 0:
        return 0.0, float(np.mean(y))
    xm = x.mean()
    slope, intercept = np.polyfit(x - xm, y, 1)
    return float(slope), float(intercept - slope * xm)


def _build_segments(x: np.ndarray, y: np.ndarray, ranges) -> tuple[Segment, ...]:
    ux = np.unique(x)
    raw = []
    for i, j in ranges:
        lo, hi = ux[i], ux[j - 1]
        mask = (x >= lo) & (x <= hi)
        slope, intercept = _line(x[mask], y[mask])
        raw.append((lo, hi, slope, intercept, int(mask.sum())))
    segs = []
    for idx, (lo, hi, slope, intercept, n) in enumerate(raw):
        x_lo = float(ux[0]) if idx == 0 else segs[-1].x_hi
        if idx == len(raw) - 1:
            x_hi = float(ux[-1])
        else:
            nlo, _, nslope, nintercept, _ = raw[idx + 1]
            x_hi = (hi + nlo) / 2.0
            if slope != nslope:
                cross = (nintercept - intercept) / (slope - nslope)
                slack = 1e-9 * max(1.0, abs(hi), abs(nlo))
                if hi - slack <= cross <= nlo + slack:
                    x_hi = float(min(max(cross, hi), nlo))
        segs.append(Segment(float(x_lo), float(x_hi), slope, intercept, float(lo), float(hi), n))
    return tuple(segs)


def robust_sigma(x: np.ndarray, y: np.ndarray) -> float:
    """Noise scale from interpolation residuals of each point against its neighbours (MAD)."""
    ux, inv = np.unique(x, return_inverse=True)
    if len(ux) < 3:
        return 0.0
    uy = np.bincount(inv, weights=y) / np.bincount(inv)
    left, mid, right = ux[:-2], ux[1:-1], ux[2:]
    w_left = (right - mid) / (right - left)
    w_right = 1.0 - w_left
    resid = uy[1:-1] - (w_left * uy[:-2] + w_right * uy[2:])
    scaled = resid / np.sqrt(1.0 + w_left**2 + w_right**2)
    return float(1.4826 * np.median(np.abs(scaled)))


def default_penalty(x: np.ndarray, y: np.ndarray) -> float:
    """BIC-like ``2 sigma^2 log n`` with a floor that stops splits on rounding noise."""
    n = len(x)
    sigma = robust_sigma(x, y)
    floor = 1e-9 * float(np.sum((y - y.mean()) ** 2)) + 1e-300
    return max(2.0 * sigma * sigma * math.log(max(n, 2)), floor)


def _screen(x: np.ndarray, y: np.ndarray, tol: float) -> np.ndarray:
    """Flag isolated spikes: points far (> tol) from every neighbour-line reference."""
    ux, inv = np.unique(x, return_inverse=True)
    g = len(ux)
    if g < 3:
        return np.zeros(len(x), dtype=bool)
    uy = np.bincount(inv, weights=y) / np.bincount(inv)

    def through(i, j, at):
        return uy[i] + (uy[j] - uy[i]) * (ux[at] - ux[i]) / (ux[j] - ux[i])

    spike = np.zeros(g, dtype=bool)
    for k in range(g):
        refs = []
        if 0 < k < g - 1:
            refs.append(through(k - 1, k + 1, k))
        if k >= 2:
            refs.append(through(k - 2, k - 1, k))
        if k <= g - 3:
            refs.append(through(k + 1, k + 2, k))
        spike[k] = bool(refs) and all(rel_error(r, uy[k]) > tol for r in refs)
    return spike[inv]


def _segments_predict(segments: Sequence[Segment], x: float) -> Prediction:
    if not segments:
        raise InsufficientData("model has no segments")
    if x < segments[0].x_lo:
        return Prediction(segments[0](x), "extrapolated", 0)
    if x > segments[-1].x_hi:
        return Prediction(segments[-1](x), "extrapolated", len(segments) - 1)
    for i, seg in enumerate(segments):
        if x < seg.x_hi or i == len(segments) - 1:
            return Prediction(seg(x), "segment", i)
    raise AssertionError("unreachable")


def _fit_guard(pred: GuardPredicate, gid: str, samples, segments) -> Guard:
    samples = tuple(sorted(samples))
    if not samples:
        return Guard(gid, pred, 0.0, 0.0, ())
    gx = np.array([s[0] for s in samples])
    resid = np.array([s[1] - _segments_predict(segments, s[0]).value for s in samples])
    slope, intercept = _line(gx, resid)
    return Guard(gid, pred, slope, intercept, samples)


def _guard_id(pred: GuardPredicate, taken: Iterable[str]) -> str:
    taken = set(taken)
    base = pred.kind
    gid, k = base, 1
    while gid in taken:
        k += 1
        gid = f"{base}{k}"
    return gid


def _match_guard(guards: Sequence[Guard], x: float) -> Guard | None:
    for g in guards:
        if g.predicate.test(x):
            return g
    return None


def _fit_core(
    x: np.ndarray,
    y: np.ndarray,
    max_segments: int,
    tol: float,
    penalty: float | None,
) -> tuple[tuple[Segment, ...], np.ndarray, float, float]:
    """Robust segmented fit; returns segments, kept-mask, penalty used, residual SS."""
    keep = ~_screen(x, y, tol)
    if len(np.unique(x[keep])) < MIN_SEGMENT_SIZE:
        keep = np.ones(len(x), dtype=bool)
    lam = penalty if penalty is not None else default_penalty(x[keep], y[keep])
    segs = _build_segments(x[keep], y[keep], segment_partition(x[keep], y[keep], max_segments, lam))
    for _ in range(3):
        pred = np.array([_segments_predict(segs, xi).value for xi in x])
        err = np.abs(pred - y) / np.maximum(np.abs(y), REL_EPS)
        new_keep = err <= tol
        if np.array_equal(new_keep, keep) or len(np.unique(x[new_keep])) < MIN_SEGMENT_SIZE:
            break
        keep = new_keep
        if penalty is None:
            lam = default_penalty(x[keep], y[keep])
        segs = _build_segments(x[keep], y[keep], segment_partition(x[keep], y[keep], max_segments, lam))
    pred = np.array([_segments_predict(segs, xi).value for xi in x[keep]])
    rss = float(np.sum((pred - y[keep]) ** 2))
    return segs, keep, lam, rss


# -- public operations -----------------------------------------------------


def fit_model(
    points: Sequence[Any],
    target: str,
    feature: str,
    max_segments: int = 8,
    tolerance: float = DEFAULT_TOLERANCE,
    guards: Sequence[GuardPredicate] = (),
    penalty: float | None = None,
) -> BehaviorModel:
    """Fit segments to points not claimed by ``guards``; unexplained points go to the outlier log."""
    if max_segments < 1:
        raise ValidationError("max_segments must be >= 1")
    obs = [_observation(p, target, feature) for p in points]
    preds = list(guards)
    guarded: dict[int, list] = {i: [] for i in range(len(preds))}
    plain = []
    for ox, oy, ref in obs:
        for gi, pr in enumerate(preds):
            if pr.test(ox):
                guarded[gi].append((ox, oy))
                break
        else:
            plain.append((ox, oy, ref))
    xs = np.array([o[0] for o in plain], dtype=float)
    ys = np.array([o[1] for o in plain], dtype=float)
    distinct = len(np.unique(xs))
    if distinct == 1:
        raise DegenerateFeature(f"all {feature!r} values are equal")
    if distinct < 2 * max_segments:
        raise InsufficientData(f"need {2 * max_segments} distinct {feature!r} values, got {distinct}")

    segs, keep, lam, rss = _fit_core(xs, ys, max_segments, tolerance, penalty)
    outliers = tuple(
        Outlier(float(xs[i]), _segments_predict(segs, xs[i]).value, float(ys[i]), plain[i][2])
        for i in np.flatnonzero(~keep)
    )
    built: list[Guard] = []
    for gi, pr in enumerate(preds):
        built.append(_fit_guard(pr, _guard_id(pr, (g.id for g in built)), guarded[gi], segs))
    window = tuple((float(xs[i]), float(ys[i])) for i in np.flatnonzero(keep))[-WINDOW_MAX:]
    return BehaviorModel(
        target=target,
        feature=feature,
        segments=segs,
        guards=tuple(built),
        tolerance=tolerance,
        outlier_log=outliers,
        observations=len(obs),
        max_segments=max_segments,
        window=window,
        penalty=penalty,
        residual_ss=rss,
    )


def predict(model: BehaviorModel, values: Any) -> Prediction:
    """First matching guard wins, else the covering segment (``extrapolated`` outside coverage)."""
    x = values if isinstance(values, (int, float)) and not isinstance(values, bool) else feature_value(values, model.feature)
    base = _segments_predict(model.segments, x)
    guard = _match_guard(model.guards, x)
    if guard is not None:
        return Prediction(base.value + guard.slope * x + guard.intercept, f"guard:{guard.id}", base.segment)
    return base


def is_outlier(model: BehaviorModel, x: float, actual: float) -> bool:
    return rel_error(predict(model, x).value, actual) > model.tolerance


def _refit_segments(model: BehaviorModel, window) -> BehaviorModel:
    xs = np.array([w[0] for w in window], dtype=float)
    ys = np.array([w[1] for w in window], dtype=float)
    distinct = len(np.unique(xs))
    if distinct < 2:
        return model
    k = max(1, min(model.max_segments, distinct // 2))
    segs, _, _, rss = _fit_core(xs, ys, k, model.tolerance, model.penalty)
    guards = tuple(_fit_guard(g.predicate, g.id, g.samples, segs) for g in model.guards)
    return replace(model, segments=segs, guards=guards, residual_ss=rss)


def observe(model: BehaviorModel, point: Any) -> tuple[BehaviorModel, bool]:
    """Validate one new observation; returns ``(model', outlier)``."""
    x, y, ref = _observation(point, model.target, model.feature)
    pred = predict(model, x)
    outlier = rel_error(pred.value, y) > model.tolerance
    if outlier:
        return (
            replace(
                model,
                observations=model.observations + 1,
                outlier_log=model.outlier_log + (Outlier(x, pred.value, y, ref),),
            ),
            True,
        )
    if pred.source.startswith("guard:"):
        return replace(model, observations=model.observations + 1), False
    window = (model.window + ((x, y),))[-WINDOW_MAX:]
    pending = model.pending + 1
    new = replace(model, observations=model.observations + 1, window=window, pending=pending)
    if pending >= REFIT_EVERY:
        new = replace(_refit_segments(new, window), pending=0)
    return new, False


def promote_outliers_to_guard(
    model: BehaviorModel,
    predicate: GuardPredicate,
    min_match: float = GUARD_MIN_MATCH,
    max_false: float = GUARD_MAX_FALSE,
) -> BehaviorModel:
    """Turn logged outliers explained by ``predicate`` into a guard rule."""
    if not model.outlier_log:
        raise InsufficientData("outlier log is empty")
    matched = [o for o in model.outlier_log if predicate.test(o.x)]
    rate = len(matched) / len(model.outlier_log)
    if rate < min_match:
        raise PredicateMismatch(f"{predicate.name} explains {rate:.0%} of outliers (< {min_match:.0%})")
    if model.window:
        false_rate = sum(predicate.test(w[0]) for w in model.window) / len(model.window)
        if false_rate > max_false:
            raise PredicateMismatch(
                f"{predicate.name} also matches {false_rate:.1%} of regular observations (> {max_false:.0%})"
            )
    gid = _guard_id(predicate, (g.id for g in model.guards))
    guard = _fit_guard(predicate, gid, [(o.x, o.actual) for o in matched], model.segments)
    remaining = tuple(o for o in model.outlier_log if not predicate.test(o.x))
    return replace(model, guards=model.guards + (guard,), outlier_log=remaining)


def compact(points: Sequence[Any], model: BehaviorModel, tolerance: float | None = None) -> list:
    """Smallest-effort subset that still reproduces the model.

    Keeps two boundary points per segment, every guard-matched or
    unexplained point, then greedily adds the worst-predicted point until a
    model refitted from the subset predicts all explained points within
    ``tolerance``.
    """
    tol = model.tolerance if tolerance is None else tolerance
    if not points:
        return []
    obs = [_observation(p, model.target, model.feature) for p in points]
    xs = np.array([o[0] for o in obs])
    ys = np.array([o[1] for o in obs])
    preds = [g.predicate for g in model.guards]

    retained: set[int] = set()
    explained = []
    for i, (x, y, _) in enumerate(obs):
        if _match_guard(model.guards, x) is not None or rel_error(predict(model, x).value, y) > tol:
            retained.add(i)
        else:
            explained.append(i)
    for seg in model.segments:
        inside = [i for i in explained if seg.x_lo <= xs[i] <= seg.x_hi]
        if inside:
            retained.add(min(inside, key=lambda i: (xs[i], i)))
            retained.add(max(inside, key=lambda i: (xs[i], -i)))
    if len(np.unique(xs)) <= 2:
        retained = {int(np.argmin(xs)), int(np.argmax(xs))}
        return [points[i] for i in sorted(retained)]

    while True:
        refit = _refit_subset([points[i] for i in sorted(retained)], model, preds, tol)
        worst, worst_err = None, tol
        for i in explained:
            err = rel_error(predict(refit, xs[i]).value, ys[i]) if refit is not None else math.inf
            if err > worst_err and i not in retained:
                worst, worst_err = i, err
        if worst is None:
            break
        retained.add(worst)
    return [points[i] for i in sorted(retained)]


def refit(points: Sequence[Any], model: BehaviorModel) -> BehaviorModel:
    """Fit a fresh model with ``model``'s target, feature, tolerance and guard predicates."""
    out = _refit_subset(points, model, [g.predicate for g in model.guards], model.tolerance)
    if out is None:
        raise InsufficientData("too few distinct points to refit")
    return out


def _refit_subset(subset, model, preds, tol) -> BehaviorModel | None:
    xs = {_observation(p, model.target, model.feature)[0] for p in subset}
    plain = [x for x in xs if not any(pr.test(x) for pr in preds)]
    k = max(1, min(model.max_segments, len(plain) // 2))
    try:
        return fit_model(subset, model.target, model.feature, k, tol, preds, model.penalty)
    except (InsufficientData, DegenerateFeature):
        return None


# -- advice ----------------------------------------------------------------


@dataclass
class Candidate:
    choices: dict
    models: dict[str, BehaviorModel] = field(default_factory=dict)


def advise(
    candidates: Mapping[str, Candidate],
    properties: Mapping[str, Any],
    state: Mapping[str, Any],
    requirements: Mapping[str, Any],
) -> dict:
    """Pick the candidate with the best predicted objective that meets all constraints."""
    if not candidates:
        raise NoModels("no candidates")
    objective = requirements["objective"]
    direction = requirements.get("direction", "minimize")
    if direction not in ("minimize", "maximize"):
        raise ValidationError(f"bad direction {direction!r}")
    constraints = [tuple(c) if not isinstance(c, Mapping) else (c["key"], c["cmp"], c["value"])
                   for c in requirements.get("constraints", [])]
    values = {"p": dict(properties), "s": dict(state), **properties, **state}
    needed = [objective] + [c[0] for c in constraints]

    evaluations = {}
    for cid in sorted(candidates):
        cand = candidates[cid]
        missing = [k for k in needed if k not in cand.models]
        if missing:
            raise NoModels(f"candidate {cid!r} has no model for {', '.join(missing)}")
        predicted = {k: predict(cand.models[k], values).value for k in dict.fromkeys(needed)}
        feasible = all(jmeta.compare(predicted[k], cmp, bound) for k, cmp, bound in constraints)
        evaluations[cid] = {"predicted": predicted, "feasible": feasible}

    sign = 1.0 if direction == "minimize" else -1.0

    def pick(ids):
        best = None
        for cid in ids:  # sorted: ties keep the lexicographically first id
            score = sign * evaluations[cid]["predicted"][objective]
            if best is None or score < best[0]:
                best = (score, cid)
        return best[1] if best else None

    feasible_ids = [c for c in evaluations if evaluations[c]["feasible"]]
    chosen = pick(feasible_ids)
    feasible = chosen is not None
    if chosen is None:
        chosen = pick(list(evaluations))
    return {
        "candidate": chosen,
        "choices": dict(candidates[chosen].choices),
        "predicted": evaluations[chosen]["predicted"],
        "feasible": feasible,
        "evaluations": evaluations,
    }
