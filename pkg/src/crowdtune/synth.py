"""Deterministic synthetic platforms.

``cpi`` models cycles-per-instruction of a dense N x N kernel against a
cache hierarchy: flat plateaus per level, linear ramps around each capacity
and an alignment penalty for pathological sizes.  ``flag_space_eval`` is a
closed-form stand-in for compiler-flag tuning (time and code size).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ArityMismatch, ValidationError
from .learn import GuardPredicate

PLATFORM_MODULE = "synth-platform"


@dataclass(frozen=True)
class CacheLevel:
    capacity_bytes: int | None  # None: unbounded (main memory)
    plateau_cpi: float


@dataclass(frozen=True)
class PlatformConfig:
    name: str
    levels: tuple[CacheLevel, ...]
    bytes_per_element: int = 8
    transition_width: float = 0.15
    align_penalty_cpi: float = 0.0
    align_predicate: GuardPredicate | None = None
    noise_sigma: float = 0.0
    frequency_states: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.levels:
            raise ValidationError("platform needs at least one level")
        caps = [lv.capacity_bytes for lv in self.levels]
        if any(c is None for c in caps[:-1]):
            raise ValidationError("only the last level may be unbounded")
        bounded = [c for c in caps if c is not None]
        if any(b <= a for a, b in zip(bounded, bounded[1:])):
            raise ValidationError("capacities must be strictly increasing")
        plateaus = [lv.plateau_cpi for lv in self.levels]
        if any(b <= a for a, b in zip(plateaus, plateaus[1:])):
            raise ValidationError("plateaus must be strictly increasing")
        if not 0 < self.transition_width <= 0.5:
            raise ValidationError("transition_width must be in (0, 0.5]")
        tw = self.transition_width
        for a, b in zip(bounded, bounded[1:]):
            if a * (1 + tw) > b * (1 - tw):
                raise ValidationError("transition zones overlap")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")

    @property
    def transitions(self) -> list[int]:
        """Capacities at which the base curve ramps to the next plateau."""
        return [lv.capacity_bytes for lv in self.levels[:-1]]

    def transition_sizes(self) -> list[float]:
        """Problem sizes N whose working set equals each transition capacity."""
        return [float(np.sqrt(c / self.bytes_per_element)) for c in self.transitions]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "levels": [{"capacity_bytes": lv.capacity_bytes, "plateau_cpi": lv.plateau_cpi} for lv in self.levels],
            "bytes_per_element": self.bytes_per_element,
            "transition_width": self.transition_width,
            "align_penalty_cpi": self.align_penalty_cpi,
            "align_predicate": self.align_predicate.to_dict() if self.align_predicate else None,
            "noise_sigma": self.noise_sigma,
            "frequency_states": dict(self.frequency_states),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlatformConfig":
        pred = d.get("align_predicate")
        return cls(
            name=d["name"],
            levels=tuple(CacheLevel(lv["capacity_bytes"], lv["plateau_cpi"]) for lv in d["levels"]),
            bytes_per_element=d.get("bytes_per_element", 8),
            transition_width=d.get("transition_width", 0.15),
            align_penalty_cpi=d.get("align_penalty_cpi", 0.0),
            align_predicate=GuardPredicate.from_dict(pred) if pred else None,
            noise_sigma=d.get("noise_sigma", 0.0),
            frequency_states=dict(d.get("frequency_states", {})),
        )


def _default_align() -> GuardPredicate:
    return GuardPredicate.power_of_two("N", above=256)


def core2_like(**overrides) -> PlatformConfig:
    """Two cache levels: 32 KiB L1, 4 MiB L2."""
    cfg = dict(
        name="core2-like",
        levels=(CacheLevel(32768, 1.0), CacheLevel(4194304, 2.5), CacheLevel(None, 6.0)),
        align_penalty_cpi=3.0,
        align_predicate=_default_align(),
    )
    cfg.update(overrides)
    return PlatformConfig(**cfg)


def i5_like(**overrides) -> PlatformConfig:
    """Three cache levels: 32 KiB L1, 256 KiB L2, 3 MiB L3."""
    cfg = dict(
        name="i5-like",
        levels=(
            CacheLevel(32768, 1.0),
            CacheLevel(262144, 1.8),
            CacheLevel(3145728, 3.0),
            CacheLevel(None, 6.0),
        ),
        align_penalty_cpi=3.0,
        align_predicate=_default_align(),
    )
    cfg.update(overrides)
    return PlatformConfig(**cfg)


PRESETS = {"core2-like": core2_like, "i5-like": i5_like}


def preset(name: str) -> PlatformConfig:
    key = name if name in PRESETS else f"{name}-like"
    if key not in PRESETS:
        raise ValidationError(f"unknown platform {name!r}")
    return PRESETS[key]()


def base_cpi(config: PlatformConfig, n: float) -> float:
    """Noise- and penalty-free plateau/ramp curve."""
    w = float(n) * float(n) * config.bytes_per_element
    tw = config.transition_width
    levels = config.levels
    for i, level in enumerate(levels):
        cap = level.capacity_bytes
        if cap is None or w <= cap * (1 - tw):
            return level.plateau_cpi
        if w < cap * (1 + tw):
            lo, hi = level.plateau_cpi, levels[i + 1].plateau_cpi
            return lo + (hi - lo) * (w - cap * (1 - tw)) / (2 * tw * cap)
    return levels[-1].plateau_cpi


def aligned(config: PlatformConfig, n: float) -> bool:
    if config.align_predicate is None or config.align_penalty_cpi == 0:
        return False
    first = config.levels[0].capacity_bytes
    w = float(n) * float(n) * config.bytes_per_element
    return config.align_predicate.test(n) and (first is None or w > first)


def cpi(config: PlatformConfig, n: int, seed: int | None = None) -> float:
    if n < 1:
        raise ValidationError("N must be >= 1")
    value = base_cpi(config, n)
    if aligned(config, n):
        value += config.align_penalty_cpi
    if config.noise_sigma > 0:
        rng = np.random.default_rng([0 if seed is None else seed, int(n)])
        value += float(rng.normal(0.0, config.noise_sigma))
    return value


def sweep(config: PlatformConfig, sizes: Sequence[int], seed: int | None = None) -> list[tuple[int, float]]:
    return [(int(n), cpi(config, n, seed)) for n in sizes]


# -- compiler-flag space ---------------------------------------------------


@dataclass(frozen=True)
class FlagSpace:
    """``time = base - sum main*v - sum inter*vi*vj``; ``size = base + sum size*v``."""

    name: str
    base_time: float
    base_size: float
    main: tuple[float, ...]
    size: tuple[float, ...]
    interactions: tuple[tuple[int, int, float], ...] = ()
    optimum: tuple[int, ...] = ()
    levels: tuple[int, ...] = ()  # values per dim; empty means all binary
    noise_sigma: float = 0.0

    @property
    def arity(self) -> int:
        return len(self.main)

    def dim_levels(self, i: int) -> int:
        return self.levels[i] if self.levels else 2

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_time": self.base_time,
            "base_size": self.base_size,
            "main": list(self.main),
            "size": list(self.size),
            "interactions": [list(t) for t in self.interactions],
            "optimum": list(self.optimum),
            "levels": list(self.levels),
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlagSpace":
        return cls(
            name=d["name"],
            base_time=d["base_time"],
            base_size=d["base_size"],
            main=tuple(d["main"]),
            size=tuple(d["size"]),
            interactions=tuple((int(i), int(j), float(a)) for i, j, a in d.get("interactions", [])),
            optimum=tuple(d.get("optimum", [])),
            levels=tuple(d.get("levels", [])),
            noise_sigma=d.get("noise_sigma", 0.0),
        )


def flag_space_eval(space: FlagSpace, flags: Sequence[Any], seed: int | None = None) -> dict:
    if len(flags) != space.arity:
        raise ArityMismatch(f"expected {space.arity} flags, got {len(flags)}")
    v = [float(f) for f in flags]
    t = space.base_time - sum(m * x for m, x in zip(space.main, v))
    t -= sum(a * v[i] * v[j] for i, j, a in space.interactions)
    size = space.base_size + sum(s * x for s, x in zip(space.size, v))
    if space.noise_sigma > 0:
        key = [0 if seed is None else seed] + [int(x) for x in flags]
        t += float(np.random.default_rng(key).normal(0.0, space.noise_sigma))
    return {"time_s": t, "size_bytes": size}


def make_flag_space(
    dims: int,
    positive: Sequence[float],
    negative: Sequence[float] = (),
    *,
    seed: int = 0,
    interaction_scale: float = 0.0,
    base_time: float = 10.0,
    base_size: float = 10000.0,
    name: str = "flags",
) -> FlagSpace:
    """Binary flag space with a known optimum.

    Dims ``0..len(positive)-1`` speed the program up (optimum: on), the next
    ``len(negative)`` dims slow it down (optimum: off), the rest have no
    effect on time.  Interactions are synergies among helpful dims and
    penalties between helpful and harmful ones, so the optimum stays put.
    """
    n_pos, n_neg = len(positive), len(negative)
    if n_pos + n_neg > dims:
        raise ValidationError("more effect dims than dims")
    if any(p <= 0 for p in positive) or any(q <= 0 for q in negative):
        raise ValidationError("effect magnitudes must be positive")
    rng = np.random.default_rng(seed)
    main = [0.0] * dims
    for i, p in enumerate(positive):
        main[i] = float(p)
    for k, q in enumerate(negative):
        main[n_pos + k] = -float(q)
    size = [float(x) for x in rng.integers(-400, 1200, size=dims)]
    inter = []
    if interaction_scale > 0:
        for i, j in itertools.combinations(range(n_pos), 2):
            inter.append((i, j, float(rng.uniform(0, interaction_scale))))
        for i in range(n_pos):
            for k in range(n_neg):
                inter.append((i, n_pos + k, -float(rng.uniform(0, interaction_scale))))
    optimum = tuple([1] * n_pos + [0] * (dims - n_pos))
    return FlagSpace(name, base_time, base_size, tuple(main), tuple(size), tuple(inter), optimum)


def exhaustive_times(space: FlagSpace) -> tuple[np.ndarray, np.ndarray]:
    """All binary vectors and their noise-free times (oracle for small spaces)."""
    d = space.arity
    if d > 22:
        raise ValidationError("space too large to enumerate")
    grid = ((np.arange(2**d)[:, None] >> np.arange(d)[::-1]) & 1).astype(float)
    t = space.base_time - grid @ np.asarray(space.main)
    for i, j, a in space.interactions:
        t -= a * grid[:, i] * grid[:, j]
    return grid.astype(int), t


def install_presets(repo) -> list[str]:
    """Save the bundled platform configs as ``synth-platform`` entries (idempotent)."""
    cids = []
    for name, factory in PRESETS.items():
        if repo.exists(f"{PLATFORM_MODULE}:{name}"):
            cids.append(f"{PLATFORM_MODULE}:{name}")
            continue
        cids.append(str(repo.save_entry(PLATFORM_MODULE, alias=name, meta=factory().to_dict())))
    return cids


def load_platform(repo, name: str) -> PlatformConfig:
    """Platform config by name; repository entries take precedence over presets."""
    if repo is not None:
        install_presets(repo)
        for candidate in (name, f"{name}-like"):
            if repo.exists(f"{PLATFORM_MODULE}:{candidate}"):
                return PlatformConfig.from_dict(repo.load(PLATFORM_MODULE, candidate).meta)
    return preset(name)
