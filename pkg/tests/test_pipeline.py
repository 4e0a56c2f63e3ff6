from __future__ import annotations

import shutil
import time

import pytest

from crowdtune import pipeline as pl
from crowdtune import synth
from crowdtune.errors import (
    CompilerNotFound,
    LaunchFailure,
    StageFailure,
    StageTimeout,
    UnknownKey,
    ValidationError,
)
from crowdtune.modules import program_pipeline, synthetic_cpi_pipeline

HAVE_CC = shutil.which(pl.default_compiler()) is not None
needs_cc = pytest.mark.skipif(not HAVE_CC, reason="no C compiler on PATH")


def test_synthetic_run_is_exact(kernel):
    defn = synthetic_cpi_pipeline()
    point = pl.run(defn, {"properties": {"platform": "core2-like", "N": 1000}}, 5, kernel=kernel)
    expected = synth.cpi(synth.core2_like(), 1000)
    assert point.b["cpi"] == [expected] * 5
    assert point.b["time_s"] == [pytest.approx(expected * 1000**3 * 1e-9)] * 5
    assert point.c == {"seed": 0}
    assert not point.incomplete
    assert point.aggregates["cpi"]["normality"] == "degenerate"
    stored = kernel.repo.load_entry(f"experiment:{point.uid}").meta
    assert stored["b"] == point.to_meta()["b"]


def test_events_fire_per_stage_and_repetition(kernel):
    seen = []
    kernel.register_hook(pl.EVENT_BEFORE, lambda d: seen.append(("before", d["stage"], d["repetition"])) or d)
    kernel.register_hook(pl.EVENT_AFTER, lambda d: seen.append(("after", d["stage"], d["repetition"])) or d)
    pl.run(synthetic_cpi_pipeline(), {"properties": {"platform": "i5", "N": 100}}, 3, kernel=kernel)
    assert [s for s in seen if s[0] == "before"] == [("before", "cpi", r) for r in range(3)]
    assert len([s for s in seen if s[0] == "after"]) == 3


def test_hooks_can_rewrite_stage_params(kernel):
    def bump(doc):
        doc["params"]["p"] = {**doc["params"]["p"], "N": 16}
        return doc

    kernel.register_hook(pl.EVENT_BEFORE, bump)
    point = pl.run(synthetic_cpi_pipeline(), {"properties": {"platform": "core2", "N": 1000}}, 1, kernel=kernel)
    assert point.b["cpi"] == [1.0]


def test_failing_hook_marks_point_incomplete(kernel):
    kernel.register_hook(pl.EVENT_AFTER, lambda d: 1 / 0, plugin_id="broken")
    with pytest.raises(StageFailure) as info:
        pl.run(synthetic_cpi_pipeline(), {"properties": {"platform": "core2", "N": 10}}, 2, kernel=kernel)
    point = info.value.point
    assert point.incomplete and "broken" in point.provenance["failure"]["output"]
    assert kernel.repo.load_entry(f"experiment:{point.uid}").meta["provenance"]["incomplete"] is True


def test_binding_errors(kernel):
    defn = synthetic_cpi_pipeline()
    with pytest.raises(ValidationError):
        pl.run(defn, {"properties": {"platform": "core2"}}, 1, kernel=kernel)  # N missing
    with pytest.raises(UnknownKey):
        pl.run(defn, {"properties": {"platform": "core2", "N": 5, "extra": 1}}, 1, kernel=kernel)
    with pytest.raises(ValidationError):
        pl.run(defn, {"properties": {"platform": "arm", "N": 5}}, 1, kernel=kernel)
    with pytest.raises(ValidationError):
        pl.run(defn, {"properties": {"platform": "core2", "N": 5}}, 0, kernel=kernel)
    with pytest.raises(UnknownKey):
        pl.run(defn, {"properties": {"platform": "core2", "N": 5}}, 1, ["cpu.secret"], kernel=kernel)


def test_state_probes_are_recorded(kernel):
    prober = pl.StateProber({"frequency_state": "low"})
    point = pl.run(
        synthetic_cpi_pipeline(),
        {"properties": {"platform": "core2", "N": 1000}},
        2,
        ["synthetic.frequency_state"],
        kernel=kernel,
        prober=prober,
    )
    assert point.s == {"synthetic.frequency_state": "low"}
    assert len(point.provenance["state_trace"]) == 2


def test_prober_flags_unknown_keys_and_orders_timestamps():
    res = pl.StateProber({"x": 1}).probe(["synthetic.x", "nope.key", "synthetic.y"])
    assert res.values == {"synthetic.x": 1, "nope.key": None, "synthetic.y": None}
    assert res.flagged == ["nope.key", "synthetic.y"]
    stamps = [res.timestamps[k] for k in ("synthetic.x", "nope.key", "synthetic.y")]
    assert stamps == sorted(stamps) and len(set(stamps)) == 3


def test_descriptor_closure():
    defn = synthetic_cpi_pipeline()
    good = pl.ExperimentPoint(p={"platform": "core2", "N": 4}, c={"seed": 0}, b={"cpi": [1.0]})
    pl.validate_point(good, defn.exposed)
    with pytest.raises(UnknownKey):
        pl.validate_point(pl.ExperimentPoint(p={"colour": "red"}), defn.exposed)
    with pytest.raises(UnknownKey):
        pl.validate_point(pl.ExperimentPoint(c={"cpi": 1}), defn.exposed)  # wrong section
    with pytest.raises(ValidationError):
        pl.validate_point(pl.ExperimentPoint(b={"cpi": ["fast"]}), defn.exposed)


def test_definition_validation():
    stage = pl.Stage("s", "synth-bench", "cpi", {}, ("cpi",))
    char = pl.ParamDescriptor.continuous("cpi", "characteristic")
    with pytest.raises(ValidationError):
        pl.PipelineDefinition("x", (stage, stage), (char,))
    with pytest.raises(ValidationError):
        pl.PipelineDefinition("x", (stage,), (char, pl.ParamDescriptor.continuous("t", "characteristic")))
    with pytest.raises(ValidationError):
        pl.ParamDescriptor.continuous("a", "flavour")
    defn = synthetic_cpi_pipeline()
    assert pl.PipelineDefinition.from_dict(defn.to_dict()) == defn


def test_descriptor_grid_and_admits():
    d = pl.ParamDescriptor.continuous("n", "property", 2, 10, 4)
    assert d.grid() == [2, 6, 10]
    assert d.admits(6) and not d.admits(7) and not d.admits(14)
    assert pl.ParamDescriptor.discrete("k", "choice", ("a", "b")).admits("b")


def test_point_round_trip():
    pt = pl.ExperimentPoint(p={"N": 1}, c={"seed": 2}, s={"f": "hi"}, b={"t": [1.0, 2.0]})
    pt.aggregate()
    back = pl.ExperimentPoint.from_meta(pt.to_meta())
    assert back.to_meta() == pt.to_meta()


def test_pipeline_run_action(kernel):
    out = kernel.call("pipeline", "run", **{"def": "synth-cpi"}, properties={"platform": "core2", "N": 1000}, reps=3)
    assert out["cm_return"] == 0 and out["point"]["b"]["cpi"] == [6.0, 6.0, 6.0]
    assert kernel.call("experiment", "list")["count"] == 1
    bad = kernel.call("pipeline", "run", **{"def": "synth-cpi"}, properties={"platform": "core2", "N": 0})
    assert bad["cm_return"] == 3
    assert kernel.call("pipeline", "builtins")["entries"] == ["program", "synth-cpi"]


def test_experiment_submit_is_idempotent(kernel):
    point = {"p": {"platform": "i5", "N": 8}, "c": {"seed": 1}, "b": {"cpi": [1.0]}}
    uid = "0123456789abcdef"
    first = kernel.call("experiment", "submit", uid=uid, point=point, pipeline="synth-cpi")
    again = kernel.call("experiment", "submit", uid=uid, point=point, pipeline="synth-cpi")
    assert first["created"] and not again["created"]
    clash = kernel.call("experiment", "submit", uid=uid, point={**point, "c": {"seed": 2}}, pipeline="synth-cpi")
    assert clash["cm_return"] == 3
    undeclared = kernel.call("experiment", "submit", uid="fedcba9876543210", point={"p": {"x": 1}}, pipeline="synth-cpi")
    assert undeclared["cm_return"] == 3 and "UnknownKey" in undeclared["cm_error"]


# -- real compiler / binary smoke tests ------------------------------------


def test_missing_compiler(tmp_path):
    with pytest.raises(CompilerNotFound):
        pl.compile_stage(pl.bundled_kernel(), workdir=tmp_path, cc="no-such-cc-xyz")


@needs_cc
def test_compile_and_execute(tmp_path):
    built = pl.compile_stage(pl.bundled_kernel(), flags=["-O2"], workdir=tmp_path)
    assert built["code_size_bytes"] > 0
    ran = pl.execute_stage(built["binary"], ["32"])
    assert ran["exit_code"] == 0 and float(ran["output"]) > 0
    assert pl.execute_stage(built["binary"], ["--exit", "7"])["exit_code"] == 7
    start = time.monotonic()
    slept = pl.execute_stage(built["binary"], ["--sleep", "0.3"])
    assert slept["wall_time_s"] >= 0.3 and time.monotonic() - start < 5
    with pytest.raises(StageTimeout):
        pl.execute_stage(built["binary"], ["--sleep", "5"], timeout_s=0.2)
    with pytest.raises(LaunchFailure):
        pl.execute_stage(tmp_path / "missing-binary")


@needs_cc
def test_invalid_flag_fails_compile(tmp_path):
    with pytest.raises(StageFailure) as info:
        pl.compile_stage(pl.bundled_kernel(), flags=["--definitely-not-a-flag"], workdir=tmp_path)
    assert info.value.stage == "compile" and info.value.output


@needs_cc
def test_program_pipeline(kernel):
    point = pl.run(program_pipeline(), {"choices": {"flags": ["-O1"]}, "properties": {"N": 32}}, 2, kernel=kernel)
    assert len(point.b["wall_time_s"]) == 2 and point.b["exit_code"] == [0, 0]
    assert point.b["code_size_bytes"][0] > 0


@needs_cc
def test_passthrough_command_runs(kernel, tmp_path):
    built = pl.compile_stage(pl.bundled_kernel(), workdir=tmp_path)
    out = kernel.call("program", "execute", cmd=[built["binary"], "--exit", "3"])
    assert out["exit_code"] == 3
