"""Staged compile/execute/evaluate pipelines that record experiment points.

A point is ``b = B(p, c, s)``: properties ``p`` describe the task and
platform, choices ``c`` are the tuning knobs, state ``s`` is probed at run
time and ``b`` holds the raw repeated measurements of each characteristic.
"""

from __future__ import annotations

import os
import shlex
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import meta as jmeta
from .errors import (
    CompilerNotFound,
    LaunchFailure,
    StageFailure,
    StageTimeout,
    UnknownKey,
    ValidationError,
)
from .stats import summarize

CLASSIFICATIONS = ("choice", "characteristic", "property", "state")
DIRECTIONS = ("minimize", "maximize", "none")
EXPERIMENT_MODULE = "experiment"
PIPELINE_MODULE = "pipeline"
EVENT_BEFORE = "pipeline.stage.before"
EVENT_AFTER = "pipeline.stage.after"
DEFAULT_TEMPLATE = "<cc> <flags> -o <out> <src>"

_SECTIONS = {"property": "p", "choice": "c", "state": "s", "characteristic": "b"}


# -- descriptors -----------------------------------------------------------


@dataclass(frozen=True)
class ParamDescriptor:
    key: str
    classification: str
    kind: str = "continuous"
    values: tuple = ()
    min: float | None = None
    max: float | None = None
    step: float | None = None
    direction: str = "none"
    default: Any = None

    def __post_init__(self):
        jmeta.split_path(self.key)
        if self.classification not in CLASSIFICATIONS:
            raise ValidationError(f"bad classification {self.classification!r} for {self.key!r}")
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"bad direction {self.direction!r} for {self.key!r}")
        if self.kind == "discrete":
            if not self.values:
                raise ValidationError(f"discrete descriptor {self.key!r} needs values")
        elif self.kind == "continuous":
            if self.min is not None and self.max is not None and self.min > self.max:
                raise ValidationError(f"descriptor {self.key!r}: min > max")
            if self.step is not None and self.step <= 0:
                raise ValidationError(f"descriptor {self.key!r}: step must be > 0")
        else:
            raise ValidationError(f"bad kind {self.kind!r} for {self.key!r}")

    @classmethod
    def discrete(cls, key: str, classification: str, values: Sequence, **kw) -> "ParamDescriptor":
        return cls(key, classification, "discrete", tuple(values), **kw)

    @classmethod
    def continuous(cls, key: str, classification: str, lo=None, hi=None, step=None, **kw) -> "ParamDescriptor":
        return cls(key, classification, "continuous", (), lo, hi, step, **kw)

    @property
    def section(self) -> str:
        return _SECTIONS[self.classification]

    def grid(self) -> list:
        """Finite value set (discrete values, or the step grid of a bounded range)."""
        if self.kind == "discrete":
            return list(self.values)
        if self.step is None or self.min is None or self.max is None:
            raise ValidationError(f"descriptor {self.key!r} has no finite grid")
        count = int((self.max - self.min) / self.step + 1e-9) + 1
        return [self.min + i * self.step for i in range(count)]

    def admits(self, value: Any) -> bool:
        if self.kind == "discrete":
            return any(jmeta.json_equal(value, v) for v in self.values)
        if value is None or isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if (self.min is not None and value < self.min) or (self.max is not None and value > self.max):
            return False
        if self.step is not None:
            k = (value - (self.min or 0)) / self.step
            return abs(k - round(k)) <= 1e-9 * max(1.0, abs(k))
        return True

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "classification": self.classification,
            "kind": self.kind,
            "values": list(self.values),
            "min": self.min,
            "max": self.max,
            "step": self.step,
            "direction": self.direction,
            "default": self.default,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamDescriptor":
        return cls(
            d["key"],
            d["classification"],
            d.get("kind", "continuous"),
            tuple(d.get("values", ())),
            d.get("min"),
            d.get("max"),
            d.get("step"),
            d.get("direction", "none"),
            d.get("default"),
        )


@dataclass(frozen=True)
class Stage:
    name: str
    module: str
    action: str
    params: dict = field(default_factory=dict)
    produces: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "module": self.module,
            "action": self.action,
            "params": dict(self.params),
            "produces": list(self.produces),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Stage":
        return cls(d["name"], d["module"], d["action"], dict(d.get("params", {})), tuple(d.get("produces", ())))


@dataclass(frozen=True)
class PipelineDefinition:
    id: str
    stages: tuple[Stage, ...]
    exposed: tuple[ParamDescriptor, ...]
    repetitions_default: int = 1

    def __post_init__(self):
        names = [s.name for s in self.stages]
        if not names:
            raise ValidationError("pipeline needs at least one stage")
        if len(set(names)) != len(names):
            raise ValidationError("stage names must be unique")
        keys = [d.key for d in self.exposed]
        if len(set(keys)) != len(keys):
            raise ValidationError("each key may be declared once")
        produced = {k for s in self.stages for k in s.produces}
        missing = [d.key for d in self.exposed if d.classification == "characteristic" and d.key not in produced]
        if missing:
            raise ValidationError(f"no stage produces {', '.join(missing)}")
        if self.repetitions_default < 1:
            raise ValidationError("repetitions_default must be >= 1")

    def descriptors(self, classification: str | None = None) -> list[ParamDescriptor]:
        return [d for d in self.exposed if classification is None or d.classification == classification]

    def descriptor(self, key: str) -> ParamDescriptor | None:
        return next((d for d in self.exposed if d.key == key), None)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "stages": [s.to_dict() for s in self.stages],
            "exposed": [d.to_dict() for d in self.exposed],
            "repetitions_default": self.repetitions_default,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineDefinition":
        return cls(
            d["id"],
            tuple(Stage.from_dict(s) for s in d["stages"]),
            tuple(ParamDescriptor.from_dict(x) for x in d["exposed"]),
            d.get("repetitions_default", 1),
        )


# -- experiment points -----------------------------------------------------


@dataclass
class ExperimentPoint:
    p: dict = field(default_factory=dict)
    c: dict = field(default_factory=dict)
    s: dict = field(default_factory=dict)
    b: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    uid: str | None = None

    @property
    def incomplete(self) -> bool:
        return bool(self.provenance.get("incomplete", False))

    @property
    def ref(self) -> str | None:
        return f"{EXPERIMENT_MODULE}:{self.uid}" if self.uid else None

    def to_meta(self) -> dict:
        return jmeta.canonical(
            {
                "p": self.p,
                "c": self.c,
                "s": self.s,
                "b": self.b,
                "aggregates": self.aggregates,
                "provenance": self.provenance,
            }
        )

    @classmethod
    def from_meta(cls, doc: Mapping, uid: str | None = None) -> "ExperimentPoint":
        return cls(
            dict(doc.get("p", {})),
            dict(doc.get("c", {})),
            dict(doc.get("s", {})),
            {k: list(v) for k, v in doc.get("b", {}).items()},
            dict(doc.get("aggregates", {})),
            dict(doc.get("provenance", {})),
            uid,
        )

    def aggregate(self) -> None:
        self.aggregates = {k: summarize(v).to_dict() for k, v in sorted(self.b.items()) if v}


def validate_point(point: ExperimentPoint | Mapping, descriptors: Sequence[ParamDescriptor]) -> None:
    """Descriptor closure: every key in p/c/s/b must be declared with the matching classification."""
    doc = point.to_meta() if isinstance(point, ExperimentPoint) else point
    declared = {(d.section, d.key) for d in descriptors}
    for section in ("p", "c", "s", "b"):
        block = doc.get(section, {})
        if not isinstance(block, Mapping):
            raise ValidationError(f"section {section!r} must be an object")
        for key in block:
            if (section, key) not in declared:
                raise UnknownKey(f"undeclared {section}-key {key!r}")
    for key, samples in doc.get("b", {}).items():
        if not isinstance(samples, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in samples
        ):
            raise ValidationError(f"measurements of {key!r} must be a list of numbers")


# -- state probes ----------------------------------------------------------


@dataclass
class ProbeResult:
    values: dict
    flagged: list
    timestamps: dict


def _cpu_frequency_mhz(_key: str):
    path = Path("/sys/devices/system/cpu/cpu0/cpufreq/scaling_cur_freq")
    try:
        return round(int(path.read_text().strip()) / 1000.0, 3)
    except (OSError, ValueError):
        pass
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.lower().startswith("cpu mhz"):
                return float(line.split(":", 1)[1])
    except (OSError, ValueError):
        pass
    return None


class StateProber:
    """Registry of state probers.  ``synthetic.*`` keys read ``synthetic`` config."""

    _clock_lock = threading.Lock()
    _last_ns = 0

    def __init__(self, synthetic: Mapping[str, Any] | None = None):
        self.synthetic = dict(synthetic or {})
        self._probers: dict[str, Callable[[str], Any]] = {"cpu.frequency_mhz": _cpu_frequency_mhz}

    def register(self, key: str, prober: Callable[[str], Any]) -> None:
        self._probers[key] = prober

    @classmethod
    def _stamp(cls) -> int:
        with cls._clock_lock:
            now = max(time.monotonic_ns(), cls._last_ns + 1)
            cls._last_ns = now
            return now

    def probe(self, keys: Sequence[str]) -> ProbeResult:
        values, flagged, stamps = {}, [], {}
        for key in keys:
            value, ok = None, False
            if key in self._probers:
                try:
                    value = self._probers[key](key)
                    ok = value is not None
                except Exception:
                    value = None
            elif key.startswith("synthetic.") and key[len("synthetic."):] in self.synthetic:
                value, ok = self.synthetic[key[len("synthetic."):]], True
            values[key] = value
            stamps[key] = self._stamp()
            if not ok:
                flagged.append(key)
        return ProbeResult(values, flagged, stamps)


def probe_state(keys: Sequence[str], prober: StateProber | None = None) -> ProbeResult:
    return (prober or StateProber()).probe(keys)


# -- real compile / execute stages ----------------------------------------


def bundled_kernel() -> Path:
    """Path of the small C test kernel shipped with the package."""
    return Path(str(resources.files("crowdtune") / "data" / "kernel.c"))


def default_compiler() -> str:
    return os.environ.get("CC") or next((c for c in ("cc", "gcc", "clang") if shutil.which(c)), "cc")


def compile_stage(
    source: str | os.PathLike,
    compiler_cmd: str = DEFAULT_TEMPLATE,
    flags: Sequence[str] = (),
    workdir: str | os.PathLike | None = None,
    cc: str | None = None,
    output_name: str = "a.out",
) -> dict:
    """Substitute ``<cc> <flags> <src> <out>`` into the template and run the compiler."""
    cc = cc or default_compiler()
    if shutil.which(cc) is None:
        raise CompilerNotFound(f"compiler {cc!r} not found on PATH")
    workdir = Path(workdir or Path(source).parent)
    workdir.mkdir(parents=True, exist_ok=True)
    out = workdir / output_name
    if out.exists():
        out.unlink()
    argv: list[str] = []
    for token in shlex.split(compiler_cmd):
        if token == "<flags>":
            argv.extend(str(f) for f in flags)
            continue
        argv.append(token.replace("<cc>", cc).replace("<src>", str(source)).replace("<out>", str(out)))
    start = time.monotonic()
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, errors="replace", cwd=workdir)
    except OSError as exc:
        raise CompilerNotFound(f"cannot launch compiler: {exc}") from exc
    elapsed = time.monotonic() - start
    diagnostics = proc.stdout + proc.stderr
    if proc.returncode != 0 or not out.exists():
        raise StageFailure("compile", diagnostics or f"compiler exited with {proc.returncode}")
    return {
        "binary": str(out),
        "code_size_bytes": out.stat().st_size,
        "compile_time_s": elapsed,
        "diagnostics": diagnostics,
    }


def execute_stage(binary: str | os.PathLike, args: Sequence[str] = (), timeout_s: float | None = None) -> dict:
    """Run a binary once; nonzero exit codes are recorded, not raised."""
    argv = [str(binary), *map(str, args)]
    start = time.monotonic()
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, errors="replace", timeout=timeout_s)
    except subprocess.TimeoutExpired as exc:
        out = exc.stdout or ""
        if isinstance(out, bytes):
            out = out.decode(errors="replace")
        raise StageTimeout("execute", f"timed out after {timeout_s} s\n{out}") from exc
    except OSError as exc:
        raise LaunchFailure("execute", str(exc)) from exc
    return {
        "wall_time_s": time.monotonic() - start,
        "exit_code": proc.returncode,
        "output": proc.stdout + proc.stderr,
    }


# -- run -------------------------------------------------------------------


def _bind(defn: PipelineDefinition, bindings: Mapping[str, Any]) -> tuple[dict, dict]:
    given = {"choice": dict(bindings.get("choices", {})), "property": dict(bindings.get("properties", {}))}
    out = {}
    for cls, values in given.items():
        declared = {d.key: d for d in defn.descriptors(cls)}
        for key in values:
            if key not in declared:
                raise UnknownKey(f"undeclared {cls} {key!r}")
        bound = {}
        for key, d in declared.items():
            if key in values:
                value = values[key]
            elif d.default is not None:
                value = d.default
            else:
                raise ValidationError(f"missing binding for {cls} {key!r}")
            if not d.admits(value):
                raise ValidationError(f"value {value!r} outside the declared range of {key!r}")
            bound[key] = value
        out[cls] = bound
    return out["property"], out["choice"]


def run(
    defn: PipelineDefinition,
    bindings: Mapping[str, Any],
    repetitions: int | None = None,
    state_probes: Sequence[str] = (),
    *,
    kernel,
    prober: StateProber | None = None,
    persist: bool = True,
) -> ExperimentPoint:
    """Execute every stage ``repetitions`` times and persist the resulting point."""
    reps = defn.repetitions_default if repetitions is None else repetitions
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise ValidationError("repetitions must be a positive integer")
    p, c = _bind(defn, bindings)
    state_keys = {d.key for d in defn.descriptors("state")}
    for key in state_probes:
        if key not in state_keys:
            raise UnknownKey(f"state key {key!r} is not declared")
    characteristics = {d.key for d in defn.descriptors("characteristic")}
    prober = prober or StateProber()

    point = ExperimentPoint(p=p, c=c)
    point.b = {k: [] for k in sorted(characteristics)}
    trace, logs = [], []
    started = time.time()
    failure = None
    for rep in range(reps):
        probed = prober.probe(list(state_probes))
        trace.append({"repetition": rep, "values": probed.values, "flagged": probed.flagged, "t_ns": probed.timestamps})
        if rep == 0:
            point.s = dict(probed.values)
        prev: dict[str, dict] = {}
        for stage in defn.stages:
            params = {**stage.params, "p": p, "c": c, "s": probed.values, "prev": prev, "repetition": rep}
            envelope = {"pipeline": defn.id, "stage": stage.name, "repetition": rep, "params": params}
            try:
                params = kernel.raise_event(EVENT_BEFORE, envelope).get("params", params)
                result = kernel.call(stage.module, stage.action, **params)
                after = {"pipeline": defn.id, "stage": stage.name, "repetition": rep, "result": result}
                result = kernel.raise_event(EVENT_AFTER, after).get("result", result)
            except Exception as exc:  # hooks failing count as a stage failure
                result = {"cm_return": 4, "cm_error": f"{type(exc).__name__}: {exc}"}
            code = result.get("cm_return", 0)
            logs.append({"stage": stage.name, "repetition": rep, "cm_return": code})
            if code:
                failure = (stage.name, str(result.get("cm_error", "")))
                break
            prev[stage.name] = {k: v for k, v in result.items() if k != "cm_return"}
            for key in characteristics & result.keys():
                value = result[key]
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    failure = (stage.name, f"characteristic {key!r} is not numeric")
                    break
                point.b[key].append(value)
            if failure:
                break
        if failure:
            break

    point.provenance = {
        "pipeline": defn.id,
        "repetitions": reps,
        "started_at": started,
        "finished_at": time.time(),
        "stages": logs,
        "state_trace": trace,
        "incomplete": failure is not None,
    }
    if failure:
        point.provenance["failure"] = {"stage": failure[0], "output": failure[1]}
    point.aggregate()
    validate_point(point, defn.exposed)
    if persist and kernel.repo is not None:
        saved = kernel.call(EXPERIMENT_MODULE, "save", meta=point.to_meta())
        if saved.get("cm_return", 0):
            raise StageFailure("persist", saved.get("cm_error", ""), point)
        point.uid = saved["uid"]
    if failure:
        raise StageFailure(failure[0], failure[1], point)
    return point
