from __future__ import annotations

import itertools

import numpy as np
import pytest

from crowdtune import learn, synth
from crowdtune.errors import (
    DegenerateFeature,
    InsufficientData,
    MissingFeature,
    NoModels,
    PredicateMismatch,
)
from crowdtune.learn import GuardPredicate
from crowdtune.pipeline import ExperimentPoint

POW2 = GuardPredicate.power_of_two("N", above=256)


def _contiguous(model):
    segs = model.segments
    assert all(s.x_lo <= s.x_hi for s in segs)
    assert all(a.x_hi == b.x_lo for a, b in zip(segs, segs[1:]))


def _core2(sizes):
    cfg = synth.core2_like()
    return [(n, synth.cpi(cfg, n)) for n in sizes]


def test_affine_data_gives_one_segment():
    pts = [(x, 2.0 * x + 1.0) for x in range(20)]
    m = learn.fit_model(pts, "y", "x", max_segments=3)
    assert len(m.segments) == 1
    assert m.segments[0].slope == pytest.approx(2.0, abs=1e-9)
    assert m.segments[0].intercept == pytest.approx(1.0, abs=1e-9)
    assert m.outlier_log == ()


def test_two_regimes():
    pts = [(x, 1.0 if x <= 100 else 0.01 * x) for x in range(10, 300, 5)]
    m = learn.fit_model(pts, "y", "x", max_segments=3)
    assert len(m.segments) == 2
    assert abs(m.breakpoints[0] - 100) <= 5
    _contiguous(m)


def test_core2_breakpoints_near_transitions():
    m = learn.fit_model(_core2(range(64, 2049, 8)), "cpi", "N", max_segments=8)
    targets = synth.core2_like().transition_sizes()
    for b in m.breakpoints:
        assert any(abs(b - t) <= 0.1 * t for t in targets)
    assert any(abs(b - targets[1]) <= 0.1 * targets[1] for b in m.breakpoints)
    _contiguous(m)


def test_fit_errors():
    with pytest.raises(DegenerateFeature):
        learn.fit_model([(5, 1.0)] * 10, "y", "x")
    with pytest.raises(InsufficientData):
        learn.fit_model([(1, 1.0), (2, 2.0), (3, 3.0)], "y", "x", max_segments=2)
    with pytest.raises(MissingFeature):
        learn.fit_model([{"x": 1}], "y", "x")


def test_fit_from_experiment_points():
    pts = [ExperimentPoint(p={"N": n}, b={"cpi": [v, v]}) for n, v in _core2(range(64, 400, 4))]
    m = learn.fit_model(pts, "cpi", "N", max_segments=3)
    assert learn.predict(m, {"N": 100}).value == pytest.approx(synth.cpi(synth.core2_like(), 100), rel=0.05)
    assert learn.predict(m, ExperimentPoint(p={"N": 100})).value == learn.predict(m, 100).value


def _brute(x, y, k):
    ux = np.unique(x)
    best = np.inf
    for cuts in itertools.combinations(range(1, len(ux)), k - 1):
        bounds = (0, *cuts, len(ux))
        if any(b - a < learn.MIN_SEGMENT_SIZE for a, b in zip(bounds, bounds[1:])):
            continue
        total = 0.0
        for a, b in zip(bounds, bounds[1:]):
            mask = (x >= ux[a]) & (x <= ux[b - 1])
            A = np.column_stack([x[mask], np.ones(mask.sum())])
            r = y[mask] - A @ np.linalg.lstsq(A, y[mask], rcond=None)[0]
            total += r @ r
        best = min(best, total)
    return best


@pytest.mark.parametrize("seed", range(6))
def test_partition_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.choice(60, size=14, replace=False)).astype(float)
    y = np.sin(x / 7) * 5 + rng.normal(0, 0.2, x.size)
    for k in (1, 2, 3):
        ranges = learn.segment_partition(x, y, k, 0.0, learn.MIN_SEGMENT_SIZE)
        assert len(ranges) <= k
        got = 0.0
        for a, b in ranges:
            A = np.column_stack([x[a:b], np.ones(b - a)])
            r = y[a:b] - A @ np.linalg.lstsq(A, y[a:b], rcond=None)[0]
            got += r @ r
        assert got == pytest.approx(min(_brute(x, y, j) for j in range(1, k + 1)), rel=1e-9, abs=1e-12)


def test_refit_monotonicity():
    rng = np.random.default_rng(1)
    x = np.arange(40, dtype=float)
    y = np.abs(x - 20) + rng.normal(0, 0.3, 40)
    pts = list(zip(x, y))
    rss = [learn.fit_model(pts, "y", "x", k, tolerance=10.0, penalty=0.0).residual_ss for k in (1, 2, 3, 4)]
    assert all(b <= a + 1e-9 for a, b in zip(rss, rss[1:]))


def test_predict_sources():
    m = learn.fit_model(_core2(range(64, 1000, 4)), "cpi", "N", max_segments=6)
    inside = learn.predict(m, 700)
    assert inside.source == "segment" and not inside.extrapolated
    seg = m.segments[inside.segment]
    assert inside.value == pytest.approx(seg.slope * 700 + seg.intercept)
    assert learn.predict(m, 10).extrapolated
    assert learn.predict(m, 5000).extrapolated
    with pytest.raises(MissingFeature):
        learn.predict(m, {"M": 3})


def test_observe_promote_cycle():
    cfg = synth.core2_like()
    m = learn.fit_model(_core2(n for n in range(80, 1100, 4) if n not in (512, 1024)), "cpi", "N", max_segments=8)
    on_model = (700, learn.predict(m, 700).value)
    m1, out = learn.observe(m, on_model)
    assert not out and m1.outlier_log == m.outlier_log and m1.observations == m.observations + 1

    m2, out = learn.observe(m1, (1024, synth.cpi(cfg, 1024)))
    assert out and m2.outlier_log[-1].x == 1024
    m3, out = learn.observe(m2, (512, synth.cpi(cfg, 512)))
    assert out

    with pytest.raises(PredicateMismatch):
        learn.promote_outliers_to_guard(m3, GuardPredicate.divisible_by("N", 3))
    guarded = learn.promote_outliers_to_guard(m3, POW2)
    assert guarded.outlier_log == ()
    assert len(guarded.guards) == 1
    again, out = learn.observe(guarded, (1024, synth.cpi(cfg, 1024)))
    assert not out
    assert learn.predict(guarded, 2048).source.startswith("guard:")
    _contiguous(guarded)


def test_promote_on_empty_log():
    m = learn.fit_model([(x, 2.0 * x) for x in range(20)], "y", "x", max_segments=2)
    with pytest.raises(InsufficientData):
        learn.promote_outliers_to_guard(m, POW2)


def test_observe_refits_every_sixteen():
    pts = [(x, 3.0 * x + 2) for x in range(0, 40)]
    m = learn.fit_model(pts, "y", "x", max_segments=2)
    for i in range(15):
        m, _ = learn.observe(m, (40 + i, 3.0 * (40 + i) + 2))
        assert m.pending == i + 1
    m, _ = learn.observe(m, (55, 3.0 * 55 + 2))
    assert m.pending == 0
    assert m.segments[-1].x_hi >= 55
    _contiguous(m)


def test_model_round_trip():
    m = learn.promote_outliers_to_guard(learn.fit_model(_core2(range(80, 1100, 4)), "cpi", "N", 8), POW2)
    doc = m.to_dict()
    back = learn.BehaviorModel.from_dict(doc)
    assert back.to_dict() == doc
    assert learn.predict(back, 1024).value == learn.predict(m, 1024).value


def test_compact_fixed_point_and_degenerate():
    m = learn.fit_model([(x, 2.0 * x + 1) for x in range(30)], "y", "x", max_segments=2)
    boundary = [(0, 1.0), (29, 59.0)]
    assert learn.compact(boundary, m) == boundary
    same = [(4, 2.0)] * 7
    assert 1 <= len(learn.compact(same, m)) <= 2
    assert learn.compact([], m) == []


def test_compact_keeps_outliers_and_refit_covers_everything():
    pts = _core2(range(80, 1100, 4))
    m = learn.promote_outliers_to_guard(learn.fit_model(pts, "cpi", "N", 8), POW2)
    kept = learn.compact(pts, m)
    assert (512, synth.cpi(synth.core2_like(), 512)) in kept
    rebuilt = learn.refit(kept, m)
    assert all(learn.rel_error(learn.predict(rebuilt, n).value, y) <= 0.05 for n, y in pts)


def _const(target, value):
    seg = learn.Segment(0.0, 1e6, 0.0, value, 0.0, 1e6, 2)
    return learn.BehaviorModel(target=target, feature="N", segments=(seg,), guards=(), tolerance=0.05)


def test_advise():
    a = learn.Candidate({"o": 1}, {"time": _const("time", 1.0), "size": _const("size", 10)})
    b = learn.Candidate({"o": 2}, {"time": _const("time", 2.0), "size": _const("size", 5)})
    c = {"a": a, "b": b}
    assert learn.advise(c, {"N": 5}, {}, {"objective": "time"})["candidate"] == "a"
    out = learn.advise(c, {"N": 5}, {}, {"objective": "time", "constraints": [{"key": "size", "cmp": "le", "value": 6}]})
    assert out["candidate"] == "b" and out["feasible"]
    assert learn.advise(c, {"N": 5}, {}, {"objective": "time", "direction": "maximize"})["candidate"] == "b"
    tie = {"z": a, "y": learn.Candidate({}, dict(a.models))}
    assert learn.advise(tie, {"N": 5}, {}, {"objective": "time"})["candidate"] == "y"
    with pytest.raises(NoModels):
        learn.advise({}, {}, {}, {"objective": "time"})
    with pytest.raises(NoModels):
        learn.advise({"a": learn.Candidate({}, {})}, {"N": 1}, {}, {"objective": "time"})


def test_learn_actions(kernel):
    pts = [list(p) for p in _core2(range(80, 1100, 4))]
    fit = kernel.call("learn", "fit", target="cpi", feature="N", points=pts, alias="c2")
    assert fit["cm_return"] == 0 and fit["cid"] == "model:c2"
    obs = kernel.call("learn", "observe", model="c2", point=[1024, synth.cpi(synth.core2_like(), 1024)])
    assert obs["outlier"] is True
    prom = kernel.call("learn", "promote", model="c2", predicate=POW2.to_dict())
    assert prom["cm_return"] == 0 and len(prom["guards"]) == 1
    pred = kernel.call("learn", "predict", model="c2", values={"N": 1024})
    assert pred["source"].startswith("guard:")
    comp = kernel.call("learn", "compact", model="c2", points=pts)
    assert comp["count"] < comp["total"]
    bad = kernel.call("learn", "promote", model="c2", predicate=GuardPredicate.divisible_by("N", 7).to_dict())
    assert bad["cm_return"] == 3  # empty log after promotion


def test_malformed_predicate_is_a_validation_error(kernel):
    from crowdtune.errors import ValidationError

    with pytest.raises(ValidationError):
        GuardPredicate.from_dict({"kind": "power_of_two", "feature": "N", "params": [256]})
    with pytest.raises(ValidationError):
        GuardPredicate.from_dict({"kind": "power_of_two"})
    with pytest.raises(ValidationError):
        GuardPredicate.from_dict({"kind": "prime", "feature": "N"})
    assert GuardPredicate.from_dict(POW2.to_dict()) == POW2
