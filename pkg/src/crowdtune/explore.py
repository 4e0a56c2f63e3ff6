"""Design-space exploration.

* :class:`ParetoSet`: exact streaming non-dominated filter over several
  characteristics (minimize or maximize each).
* :func:`estimate_importance`: one-at-a-time perturbation, weights
  proportional to the variance each dimension induces, with a floor.
* :func:`random_explore` / :func:`focused_explore`: budgeted searches that
  return every evaluated point plus the online Pareto set.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import meta as jmeta
from .errors import EvaluatorFailure, MissingObjective, ValidationError
from .pipeline import ExperimentPoint, ParamDescriptor
from .stats import StatSummary, expected_and_min, summarize

IMPORTANCE_FLOOR = 0.01
EXPLORATION_MODULE = "exploration"

Evaluator = Callable[[dict], Any]


# -- choice spaces ---------------------------------------------------------


@dataclass(frozen=True)
class ChoiceSpace:
    dims: tuple[ParamDescriptor, ...]

    def __post_init__(self):
        if not self.dims:
            raise ValidationError("choice space needs at least one dim")
        for d in self.dims:
            if d.classification != "choice":
                raise ValidationError(f"{d.key!r} is not a choice")
            if d.kind == "continuous" and (d.min is None or d.max is None):
                raise ValidationError(f"continuous dim {d.key!r} needs a range")

    @classmethod
    def binary(cls, count: int, prefix: str = "f") -> "ChoiceSpace":
        width = len(str(count - 1))
        return cls(tuple(ParamDescriptor.discrete(f"{prefix}{i:0{width}d}", "choice", (0, 1)) for i in range(count)))

    @property
    def keys(self) -> list[str]:
        return [d.key for d in self.dims]

    def sample_value(self, d: ParamDescriptor, rng: random.Random):
        if d.kind == "discrete":
            return rng.choice(d.values)
        if d.step is not None:
            return rng.choice(d.grid())
        return rng.uniform(d.min, d.max)

    def sample(self, rng: random.Random) -> dict:
        return {d.key: self.sample_value(d, rng) for d in self.dims}

    def mutate_value(self, d: ParamDescriptor, current, rng: random.Random):
        """A different value for one dim (local step for continuous ranges)."""
        if d.kind == "discrete" or d.step is not None:
            options = [v for v in (d.values if d.kind == "discrete" else d.grid()) if not jmeta.json_equal(v, current)]
            return rng.choice(options) if options else current
        span = d.max - d.min
        if span == 0:
            return current
        return min(d.max, max(d.min, current + rng.gauss(0.0, 0.1 * span)))

    def probe_values(self, d: ParamDescriptor, count: int, rng: random.Random) -> list:
        if d.kind == "discrete" or d.step is not None:
            values = list(d.values) if d.kind == "discrete" else d.grid()
            return values if len(values) <= count else rng.sample(values, count)
        return list(np.linspace(d.min, d.max, count))


def config_key(config: Mapping) -> str:
    return jmeta.dumps(config)


# -- objectives ------------------------------------------------------------


def objective_values(point: Any, keys: Sequence[str], use: str = "expected_value") -> list[float]:
    """Per-characteristic comparison value: expected (heaviest cluster) or min of the samples."""
    out = []
    for key in keys:
        if isinstance(point, ExperimentPoint):
            agg = point.aggregates.get(key)
            if agg is None and point.b.get(key):
                agg = summarize(point.b[key]).to_dict()
            if agg is None:
                raise MissingObjective(f"point has no value for {key!r}")
            summary = agg if isinstance(agg, StatSummary) else StatSummary.from_dict(agg)
            out.append(float(expected_and_min(summary)[use]))
        elif isinstance(point, Mapping) and key in point:
            value = point[key]
            out.append(float(np.mean(value)) if isinstance(value, list) else float(value))
        else:
            raise MissingObjective(f"point has no value for {key!r}")
    return out


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """Minimization dominance: no worse everywhere and strictly better somewhere."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


class ParetoSet:
    """Exact online non-dominated set.  Equal vectors keep the incumbent."""

    def __init__(self, directions: Mapping[str, str], use: str = "expected_value"):
        if not directions:
            raise ValidationError("at least one objective is required")
        for key, direction in directions.items():
            if direction not in ("minimize", "maximize"):
                raise ValidationError(f"bad direction {direction!r} for {key!r}")
        if use not in ("expected_value", "min_value"):
            raise ValidationError(f"bad objective statistic {use!r}")
        self.directions = dict(directions)
        self.use = use
        self._keys = list(self.directions)
        self._sign = np.array([1.0 if self.directions[k] == "minimize" else -1.0 for k in self._keys])
        self._points: list[Any] = []
        self._matrix = np.empty((0, len(self._keys)))

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self):
        return iter(self._points)

    @property
    def points(self) -> list:
        return list(self._points)

    def vector(self, point: Any) -> np.ndarray:
        return np.asarray(objective_values(point, self._keys, self.use)) * self._sign

    def copy(self) -> "ParetoSet":
        other = ParetoSet(self.directions, self.use)
        other._points = list(self._points)
        other._matrix = self._matrix.copy()
        return other

    def update(self, candidate: Any) -> tuple[bool, list]:
        """Insert ``candidate`` unless dominated or tied; returns ``(kept, evicted)``."""
        v = self.vector(candidate)
        m = self._matrix
        if len(m):
            no_worse = np.all(m <= v, axis=1)
            if np.any(no_worse):  # dominated by, or equal to, an incumbent
                return False, []
            beaten = np.all(v <= m, axis=1) & np.any(v < m, axis=1)
        else:
            beaten = np.zeros(0, dtype=bool)
        evicted = [p for p, b in zip(self._points, beaten) if b]
        keep = ~beaten
        self._points = [p for p, k in zip(self._points, keep) if k] + [candidate]
        self._matrix = np.vstack([m[keep], v[None, :]])
        return True, evicted


@dataclass
class ParetoUpdate:
    set: ParetoSet
    kept: bool
    evicted: list


def pareto_update(pset: ParetoSet, candidate: Any) -> ParetoUpdate:
    new = pset.copy()
    kept, evicted = new.update(candidate)
    return ParetoUpdate(new, kept, evicted)


def brute_force_front(vectors: Sequence[Sequence[float]]) -> set[int]:
    """Indices of non-dominated vectors (first occurrence wins among exact ties)."""
    front = set()
    for i, a in enumerate(vectors):
        if any(dominates(b, a) for b in vectors):
            continue
        if any(list(vectors[j]) == list(a) for j in range(i)):
            continue
        front.add(i)
    return front


# -- evaluation plumbing ---------------------------------------------------


def _to_point(config: dict, result: Any) -> ExperimentPoint:
    if isinstance(result, ExperimentPoint):
        if not result.c:
            result.c = dict(config)
        return result
    if not isinstance(result, Mapping):
        raise ValidationError("evaluator must return a mapping or an ExperimentPoint")
    b = {}
    for key, value in result.items():
        samples = value if isinstance(value, list) else [value]
        b[key] = [float(v) for v in samples]
    point = ExperimentPoint(c=dict(config), b=b)
    point.aggregate()
    return point


def _failed_point(config: dict, exc: BaseException) -> ExperimentPoint:
    return ExperimentPoint(
        c=dict(config),
        provenance={"incomplete": True, "failure": {"stage": "evaluate", "output": f"{type(exc).__name__}: {exc}"}},
    )


@dataclass
class ImportanceProfile:
    weights: dict[str, float]
    probes: int = 0
    variances: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"weights": dict(self.weights), "probes": self.probes, "variances": dict(self.variances)}

    @classmethod
    def uniform(cls, space: ChoiceSpace) -> "ImportanceProfile":
        return cls({k: 1.0 / len(space.dims) for k in space.keys})


def normalize_importance(variances: Mapping[str, float], floor: float = IMPORTANCE_FLOOR) -> dict[str, float]:
    """``w = floor + (1 - d*floor) * var / sum(var)``; all-zero variances give uniform weights."""
    keys = list(variances)
    d = len(keys)
    floor = min(floor, 1.0 / d)
    total = math.fsum(max(0.0, variances[k]) for k in keys)
    if total <= 0:
        return {k: 1.0 / d for k in keys}
    return {k: floor + (1.0 - d * floor) * max(0.0, variances[k]) / total for k in keys}


def _primary(directions: Mapping[str, str], objective: str | None) -> tuple[str, float]:
    key = objective or next(iter(directions))
    return key, (1.0 if directions.get(key, "minimize") == "minimize" else -1.0)


def estimate_importance(
    space: ChoiceSpace,
    evaluator: Evaluator,
    probes_per_dim: int,
    base_point: Mapping[str, Any],
    objective: str,
    seed: int = 0,
    use: str = "expected_value",
) -> ImportanceProfile:
    """Perturb one dim at a time from ``base_point``; weight by variance of the objective."""
    if probes_per_dim < 2:
        raise ValidationError("probes_per_dim must be >= 2")
    rng = random.Random(seed)
    cache: dict[str, float] = {}
    variances = {}
    for d in space.dims:
        values = []
        for value in space.probe_values(d, probes_per_dim, rng):
            config = {**base_point, d.key: value}
            key = config_key(config)
            if key not in cache:
                try:
                    result = _to_point(config, evaluator(config))
                    cache[key] = objective_values(result, [objective], use)[0]
                except Exception as exc:
                    raise EvaluatorFailure(d.key, exc) from exc
            values.append(cache[key])
        variances[d.key] = float(np.var(values))
    return ImportanceProfile(normalize_importance(variances), len(cache), variances)


# -- searches --------------------------------------------------------------


@dataclass
class ExplorationResult:
    points: list[ExperimentPoint]
    pareto: ParetoSet
    seed: int
    budget: int
    importance: dict = field(default_factory=dict)
    refinements: int = 0
    mutated: list = field(default_factory=list)

    def best(self, objective: str | None = None) -> ExperimentPoint | None:
        key, sign = _primary(self.pareto.directions, objective)
        best, best_v = None, math.inf
        for p in self.points:
            if p.incomplete:
                continue
            v = sign * objective_values(p, [key], self.pareto.use)[0]
            if v < best_v:
                best, best_v = p, v
        return best

    def best_value(self, objective: str | None = None) -> float:
        key, _ = _primary(self.pareto.directions, objective)
        p = self.best(objective)
        return math.inf if p is None else objective_values(p, [key], self.pareto.use)[0]

    def pareto_indices(self) -> list[int]:
        ids = {id(p) for p in self.pareto}
        return [i for i, p in enumerate(self.points) if id(p) in ids]

    def to_report(self) -> dict:
        return jmeta.canonical(
            {
                "points": [p.to_meta() for p in self.points],
                "pareto": self.pareto_indices(),
                "importance": self.importance,
                "seed": self.seed,
                "budget": self.budget,
                "directions": self.pareto.directions,
                "refinements": self.refinements,
            }
        )


class _Runner:
    def __init__(self, evaluator: Evaluator, directions: Mapping[str, str], use: str):
        self.evaluator = evaluator
        self.pareto = ParetoSet(directions, use)
        self.points: list[ExperimentPoint] = []

    def evaluate(self, config: dict) -> ExperimentPoint:
        try:
            point = _to_point(config, self.evaluator(dict(config)))
        except Exception as exc:  # failures are recorded and consume budget
            point = _failed_point(config, exc)
        self.points.append(point)
        if not point.incomplete:
            try:
                self.pareto.update(point)
            except MissingObjective:
                point.provenance["incomplete"] = True
        return point


def random_explore(
    space: ChoiceSpace,
    evaluator: Evaluator,
    budget: int,
    seed: int,
    directions: Mapping[str, str],
    use: str = "expected_value",
) -> ExplorationResult:
    """Exactly ``budget`` uniformly sampled evaluations."""
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    rng = random.Random(seed)
    runner = _Runner(evaluator, directions, use)
    for _ in range(budget):
        runner.evaluate(space.sample(rng))
    return ExplorationResult(runner.points, runner.pareto, seed, budget)


def _history_importance(space: ChoiceSpace, history: list[tuple[dict, float]], current: dict[str, float]) -> dict:
    """Mean squared objective change per dim over evaluated pairs differing in that dim only."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    keys = space.keys
    for i in range(len(history)):
        ci, vi = history[i]
        for j in range(i):
            cj, vj = history[j]
            diff = [k for k in keys if not jmeta.json_equal(ci[k], cj[k])]
            if len(diff) == 1:
                sums[diff[0]] = sums.get(diff[0], 0.0) + (vi - vj) ** 2
                counts[diff[0]] = counts.get(diff[0], 0) + 1
    if not counts:
        return current
    observed = {k: sums[k] / counts[k] for k in counts}
    fill = float(np.mean(list(observed.values())))
    return normalize_importance({k: observed.get(k, fill) for k in keys})


def focused_explore(
    space: ChoiceSpace,
    evaluator: Evaluator,
    budget: int,
    seed: int,
    importance: ImportanceProfile | None,
    refine_every: int,
    directions: Mapping[str, str],
    objective: str | None = None,
    use: str = "expected_value",
    max_attempts: int = 64,
) -> ExplorationResult:
    """Importance-weighted local search around the best point seen so far.

    Each step mutates one dim, drawn with probability proportional to its
    weight, preferring neighbours not evaluated yet.  Every
    ``refine_every`` evaluations the weights are re-estimated from the
    single-dim differences already in the history (no extra evaluations).
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    rng = random.Random(seed)
    runner = _Runner(evaluator, directions, use)
    key, sign = _primary(directions, objective)
    weights = dict((importance or ImportanceProfile.uniform(space)).weights)
    for k in space.keys:
        weights.setdefault(k, IMPORTANCE_FLOOR)
    dims = list(space.dims)
    seen: set[str] = set()
    history: list[tuple[dict, float]] = []
    mutated: list[str] = []
    refinements = 0

    def score(point: ExperimentPoint) -> float:
        if point.incomplete:
            return math.inf
        return sign * objective_values(point, [key], use)[0]

    best_cfg = space.sample(rng)
    best_val = math.inf
    evals = 0
    while evals < budget:
        if evals == 0:
            cand, dim = best_cfg, None
        else:
            cand = dim = None
            w = [weights[d.key] for d in dims]
            for _ in range(max_attempts):
                d = rng.choices(dims, weights=w)[0]
                trial = {**best_cfg, d.key: space.mutate_value(d, best_cfg[d.key], rng)}
                if config_key(trial) not in seen:
                    cand, dim = trial, d.key
                    break
            if cand is None:  # neighbourhood exhausted: restart somewhere new
                cand = space.sample(rng)
        seen.add(config_key(cand))
        point = runner.evaluate(cand)
        evals += 1
        if dim is not None:
            mutated.append(dim)
        value = score(point)
        if math.isfinite(value):
            history.append((cand, value))
        if value < best_val:
            best_cfg, best_val = cand, value
        if refine_every and evals % refine_every == 0 and evals < budget:
            weights = _history_importance(space, history, weights)
            refinements += 1
    result = ExplorationResult(runner.points, runner.pareto, seed, budget, dict(weights), refinements, mutated)
    return result


def save_report(repo, result: ExplorationResult, alias: str | None = None):
    return repo.save_entry(EXPLORATION_MODULE, alias=alias, meta=result.to_report())
