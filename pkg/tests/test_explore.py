from __future__ import annotations

import random
from collections import Counter

import numpy as np
import pytest

from crowdtune import explore as xp
from crowdtune import synth
from crowdtune.errors import EvaluatorFailure, MissingObjective, ValidationError
from crowdtune.pipeline import ExperimentPoint, ParamDescriptor

MIN2 = {"a": "minimize", "b": "minimize"}


def _vals(pset):
    return sorted((p["a"], p["b"]) for p in pset)


def test_pareto_examples():
    s = xp.ParetoSet(MIN2)
    assert s.update({"a": 1, "b": 2}) == (True, [])
    kept, evicted = s.update({"a": 2, "b": 1})
    assert kept and evicted == [] and len(s) == 2
    kept, evicted = s.update({"a": 0.5, "b": 0.5})
    assert kept and len(evicted) == 2 and _vals(s) == [(0.5, 0.5)]


def test_pareto_ties_keep_incumbent():
    s = xp.ParetoSet(MIN2)
    first = {"a": 1, "b": 1}
    s.update(first)
    assert s.update({"a": 1, "b": 1}) == (False, [])
    assert s.points[0] is first


def test_pareto_update_is_functional():
    s = xp.ParetoSet(MIN2)
    s.update({"a": 1, "b": 2})
    out = xp.pareto_update(s, {"a": 0, "b": 0})
    assert out.kept and len(out.evicted) == 1
    assert len(s) == 1 and _vals(s) == [(1, 2)]


def test_pareto_errors():
    with pytest.raises(MissingObjective):
        xp.ParetoSet(MIN2).update({"a": 1})
    with pytest.raises(ValidationError):
        xp.ParetoSet({"a": "sideways"})
    with pytest.raises(ValidationError):
        xp.ParetoSet({})


def test_pareto_3d_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.random((1000, 3))
    s = xp.ParetoSet({"x": "minimize", "y": "minimize", "z": "minimize"})
    for row in pts:
        s.update(dict(zip("xyz", row)))
    want = {tuple(pts[i]) for i in xp.brute_force_front(pts.tolist())}
    assert {(p["x"], p["y"], p["z"]) for p in s} == want


def test_pareto_on_experiment_points_uses_expected_value():
    lo = ExperimentPoint(b={"a": [1.0, 1.0, 9.0], "b": [1.0]})
    hi = ExperimentPoint(b={"a": [2.0, 2.0, 2.0], "b": [1.0]})
    s = xp.ParetoSet(MIN2)
    s.update(lo)
    assert not s.update(hi)[0]  # heaviest cluster of lo is 1.0
    s_min = xp.ParetoSet(MIN2, use="min_value")
    s_min.update(hi)
    assert s_min.update(lo)[0]


def test_importance_examples():
    space = xp.ChoiceSpace.binary(2)
    f = lambda c: {"y": 10 * c["f0"]}
    w = xp.estimate_importance(space, f, 2, {"f0": 0, "f1": 0}, "y").weights
    assert w["f0"] > 0.9 and w["f1"] > 0
    const = xp.estimate_importance(space, lambda c: {"y": 3.0}, 2, {"f0": 0, "f1": 0}, "y").weights
    assert const == {"f0": 0.5, "f1": 0.5}
    sym = xp.estimate_importance(space, lambda c: {"y": c["f0"] + c["f1"]}, 4, {"f0": 0, "f1": 0}, "y", seed=3)
    assert sym.weights["f0"] == pytest.approx(sym.weights["f1"], rel=0.1)
    with pytest.raises(ValidationError):
        xp.estimate_importance(space, f, 1, {"f0": 0, "f1": 0}, "y")


def test_importance_failure_names_dim():
    space = xp.ChoiceSpace.binary(2)

    def f(c):
        if c["f1"]:
            raise RuntimeError("crash")
        return {"y": 1.0}

    with pytest.raises(EvaluatorFailure) as info:
        xp.estimate_importance(space, f, 2, {"f0": 0, "f1": 0}, "y")
    assert info.value.dim == "f1"


def test_normalize_importance_floor():
    w = xp.normalize_importance({"a": 1.0, "b": 0.0, "c": 0.0})
    assert w["b"] == w["c"] == pytest.approx(0.01)
    assert sum(w.values()) == pytest.approx(1.0)


def _flags(dims=16, **kw):
    space = synth.make_flag_space(dims, **kw)
    cs = xp.ChoiceSpace.binary(dims)
    return space, cs, (lambda cfg: synth.flag_space_eval(space, [cfg[k] for k in cs.keys]))


FLAG_DIRS = {"time_s": "minimize", "size_bytes": "minimize"}


def test_random_explore_contract():
    space, cs, ev = _flags(positive=[2.0, 1.0], negative=[0.5], interaction_scale=0.1)
    one = xp.random_explore(cs, ev, 1, 0, FLAG_DIRS)
    assert len(one.points) == 1 and len(one.pareto) == 1
    a = xp.random_explore(cs, ev, 50, 7, FLAG_DIRS)
    b = xp.random_explore(cs, ev, 50, 7, FLAG_DIRS)
    assert a.to_report() == b.to_report()
    vecs = [[p.b["time_s"][0], p.b["size_bytes"][0]] for p in a.points]
    assert set(a.pareto_indices()) == xp.brute_force_front(vecs)
    with pytest.raises(ValidationError):
        xp.random_explore(cs, ev, 0, 0, FLAG_DIRS)


def test_failures_count_toward_budget():
    cs = xp.ChoiceSpace.binary(4)
    calls = []

    def flaky(cfg):
        calls.append(cfg)
        if cfg["f0"]:
            raise RuntimeError("bad build")
        return {"t": float(sum(cfg.values()))}

    res = xp.random_explore(cs, flaky, 30, 1, {"t": "minimize"})
    assert len(res.points) == len(calls) == 30
    failed = [p for p in res.points if p.incomplete]
    assert failed and all("bad build" in p.provenance["failure"]["output"] for p in failed)
    assert all(not p.incomplete for p in res.pareto)
    foc = xp.focused_explore(cs, flaky, 25, 1, None, 5, {"t": "minimize"})
    assert len(foc.points) == 25


def test_focused_single_relevant_dim():
    space, cs, ev = _flags(positive=[5.0])
    hits = 0
    for seed in range(20):
        res = xp.focused_explore(cs, ev, 100, seed, None, 10, FLAG_DIRS, objective="time_s")
        hits += res.best_value("time_s") == pytest.approx(space.base_time - 5.0)
    assert hits >= 16


def test_focused_scheduling():
    space, cs, ev = _flags(positive=[2.0, 1.0])
    short = xp.focused_explore(cs, ev, 9, 0, None, 10, FLAG_DIRS)
    assert short.refinements == 0 and len(short.points) == 9
    longer = xp.focused_explore(cs, ev, 35, 0, None, 10, FLAG_DIRS)
    assert longer.refinements == 3
    assert xp.focused_explore(cs, ev, 35, 0, None, 10, FLAG_DIRS).to_report() == longer.to_report()


def test_uniform_importance_mutates_dims_uniformly():
    cs = xp.ChoiceSpace.binary(8)
    counts = Counter()
    for seed in range(20):
        # flat objective: the search keeps mutating around its start point
        res = xp.focused_explore(cs, lambda c: {"t": 1.0}, 60, seed, xp.ImportanceProfile.uniform(cs), 0, {"t": "minimize"})
        counts.update(res.mutated)
    total = sum(counts.values())
    assert set(counts) == set(cs.keys)
    for k in cs.keys:
        assert abs(counts[k] / total - 1 / 8) < 0.05


def test_dominant_dim_is_mutated_most():
    space, cs, ev = _flags(positive=[10.0, 0.1])
    prof = xp.estimate_importance(cs, ev, 2, {k: 0 for k in cs.keys}, "time_s")
    assert max(prof.weights, key=prof.weights.get) == "f00"


def test_choice_space_values():
    d = ParamDescriptor.discrete("opt", "choice", ("-O1", "-O2", "-O3"))
    cs = xp.ChoiceSpace((d, ParamDescriptor.continuous("u", "choice", 0, 10, 2)))
    rng = random.Random(0)
    for _ in range(50):
        s = cs.sample(rng)
        assert s["opt"] in ("-O1", "-O2", "-O3") and s["u"] in (0, 2, 4, 6, 8, 10)
        assert cs.mutate_value(d, s["opt"], rng) != s["opt"]


def test_save_report(repo):
    space, cs, ev = _flags(positive=[1.0])
    res = xp.random_explore(cs, ev, 10, 0, FLAG_DIRS)
    cid = xp.save_report(repo, res, alias="run1")
    doc = repo.load_entry(cid).meta
    assert doc["pareto"] == res.pareto_indices() and len(doc["points"]) == 10


def test_explore_actions(kernel):
    out = kernel.call("explore", "focused", budget=60, seed=2, alias="f")
    assert out["cm_return"] == 0 and out["evaluations"] + 17 == 60
    rnd = kernel.call("explore", "random", budget=20, seed=2)
    assert rnd["evaluations"] == 20
    assert kernel.call("explore", "focused", budget=10)["cm_return"] == 3
    csv = kernel.call("report", "render", set="f", format="csv")["cm_text"]
    assert csv.splitlines()[0].startswith("idx,c.f00")
