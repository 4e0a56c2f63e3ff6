"""Human-readable views of experiment sets.

CSV columns, in order: ``idx``, sorted ``c.<key>``, sorted ``p.<key>``,
sorted ``s.<key>``, then for each characteristic ``b.<key>.expected`` and
``b.<key>.min``, and finally ``pareto`` (1/0) and ``incomplete`` (1/0).
"""

from __future__ import annotations

import csv
import io
from typing import Any, Mapping, Sequence

from . import meta as jmeta
from .errors import MissingObjective, ValidationError
from .explore import ParetoSet
from .pipeline import ExperimentPoint
from .stats import StatSummary, expected_and_min, summarize

FORMATS = ("json", "csv", "table")


def pareto_flags(points: Sequence[ExperimentPoint], directions: Mapping[str, str]) -> list[bool]:
    if not directions:
        return [False] * len(points)
    pset = ParetoSet(directions)
    for p in points:
        if p.incomplete:
            continue
        try:
            pset.update(p)
        except MissingObjective:
            continue
    members = {id(p) for p in pset}
    return [id(p) in members for p in points]


def _stats(point: ExperimentPoint, key: str) -> dict | None:
    agg = point.aggregates.get(key)
    if agg is None and point.b.get(key):
        agg = summarize(point.b[key]).to_dict()
    if agg is None:
        return None
    return expected_and_min(StatSummary.from_dict(agg))


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (dict, list, bool)):
        return jmeta.dumps(value)
    return str(value)


def columns(points: Sequence[ExperimentPoint]) -> list[str]:
    if not points:
        return ["idx", "pareto", "incomplete"]
    cols = ["idx"]
    for section in ("c", "p", "s"):
        keys = sorted({k for pt in points for k in getattr(pt, section)})
        cols += [f"{section}.{k}" for k in keys]
    for k in sorted({k for pt in points for k in pt.b}):
        cols += [f"b.{k}.expected", f"b.{k}.min"]
    return cols + ["pareto", "incomplete"]


def rows(points: Sequence[ExperimentPoint], directions: Mapping[str, str]) -> tuple[list[str], list[list[str]]]:
    cols = columns(points)
    flags = pareto_flags(points, directions)
    out = []
    for i, pt in enumerate(points):
        row = []
        for col in cols:
            if col == "idx":
                row.append(str(i))
            elif col == "pareto":
                row.append("1" if flags[i] else "0")
            elif col == "incomplete":
                row.append("1" if pt.incomplete else "0")
            elif col.startswith("b."):
                key, stat = col[2:].rsplit(".", 1)
                st = _stats(pt, key)
                row.append("" if st is None else _cell(st["expected_value" if stat == "expected" else "min_value"]))
            else:
                section, key = col.split(".", 1)
                row.append(_cell(getattr(pt, section).get(key)))
        out.append(row)
    return cols, out


def render(
    points: Sequence[ExperimentPoint],
    fmt: str = "json",
    directions: Mapping[str, str] | None = None,
    models: Sequence[Mapping] = (),
) -> str | dict:
    """``json`` returns a document; ``csv``/``table`` return text."""
    if fmt not in FORMATS:
        raise ValidationError(f"unknown report format {fmt!r}")
    directions = dict(directions or {})
    if fmt == "json":
        return {
            "points": [p.to_meta() for p in points],
            "pareto": [i for i, f in enumerate(pareto_flags(points, directions)) if f],
            "directions": directions,
            "models": [model_summary(m) for m in models],
        }
    cols, body = rows(points, directions)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        writer.writerows(body)
        return buf.getvalue()
    widths = [max(len(c), *(len(r[j]) for r in body)) if body else len(c) for j, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()]
    for r in body:
        marked = ["*" if c == "pareto" and v == "1" else ("" if c == "pareto" else v) for c, v in zip(cols, r)]
        lines.append("  ".join(v.ljust(w) for v, w in zip(marked, widths)).rstrip())
    return "\n".join(lines) + "\n"


def model_summary(doc: Mapping) -> dict:
    return {
        "target": doc.get("target"),
        "feature": doc.get("feature"),
        "segments": len(doc.get("segments", [])),
        "breakpoints": [s["x_hi"] for s in doc.get("segments", [])[:-1]],
        "guards": [g.get("id") for g in doc.get("guards", [])],
        "outliers": len(doc.get("outliers", [])),
        "observations": doc.get("observations", 0),
    }
