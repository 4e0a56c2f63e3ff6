from __future__ import annotations

import csv
import io

import pytest

from crowdtune import report
from crowdtune.errors import ValidationError
from crowdtune.pipeline import ExperimentPoint

DIRS = {"t": "minimize", "size": "minimize"}


def _points():
    a = ExperimentPoint(p={"N": 1}, c={"opt": "-O2"}, b={"t": [1.0, 1.0], "size": [10.0]})
    b = ExperimentPoint(p={"N": 1}, c={"opt": "-O3"}, b={"t": [2.0], "size": [12.0]})
    c = ExperimentPoint(p={"N": 1}, c={"opt": "-Os"}, b={"t": [3.0], "size": [5.0]})
    broken = ExperimentPoint(c={"opt": "-Ox"}, provenance={"incomplete": True})
    return [a, b, c, broken]


def test_empty_csv_header():
    assert report.render([], "csv") == "idx,pareto,incomplete\n"


def test_csv_columns_and_flags():
    text = report.render(_points(), "csv", DIRS)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["idx", "c.opt", "p.N", "b.size.expected", "b.size.min", "b.t.expected", "b.t.min",
                       "pareto", "incomplete"]
    assert [r[-2] for r in rows[1:]] == ["1", "0", "1", "0"]
    assert [r[-1] for r in rows[1:]] == ["0", "0", "0", "1"]
    assert rows[4][3] == ""  # no measurements on the failed point


def test_json_and_table():
    doc = report.render(_points(), "json", DIRS, models=[{"target": "t", "feature": "N", "segments": []}])
    assert doc["pareto"] == [0, 2] and doc["models"][0]["segments"] == 0
    table = report.render(_points(), "table", DIRS)
    lines = table.splitlines()
    assert lines[0].split()[0] == "idx" and "*" in lines[1] and "*" not in lines[2]
    with pytest.raises(ValidationError):
        report.render([], "xml")
