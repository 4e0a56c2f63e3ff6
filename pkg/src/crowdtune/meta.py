"""Schema-free meta documents: canonical JSON, dotted key paths, predicates."""

from __future__ import annotations

import json
import math
from typing import Any

from .errors import BadKeyPath, ValidationError

COMPARATORS = ("eq", "ne", "lt", "le", "gt", "ge", "contains")

_MISSING = object()
_ABSENT = object()


def dumps(doc: Any) -> str:
    """Canonical JSON: sorted keys, no whitespace, shortest float repr, UTF-8."""
    try:
        return json.dumps(
            doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"not a JSON document: {exc}") from exc


def dumpb(doc: Any) -> bytes:
    return dumps(doc).encode("utf-8")


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not valid JSON")


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def loads(text: str | bytes) -> Any:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    return json.loads(text, parse_constant=_reject_constant, object_pairs_hook=_no_duplicates)


def parse_document(text: str | bytes) -> dict:
    doc = loads(text)
    if not isinstance(doc, dict):
        raise ValueError("top-level JSON value must be an object")
    return doc


def canonical(doc: Any) -> Any:
    """Round-trip through canonical JSON (deep copy with JSON types only)."""
    return loads(dumps(doc))


def split_path(path: str) -> list[str]:
    if not isinstance(path, str) or not path:
        raise BadKeyPath(f"invalid key path {path!r}")
    parts = path.split(".")
    if any(p == "" for p in parts):
        raise BadKeyPath(f"invalid key path {path!r}")
    return parts


def get_path(doc: Any, path: str, default: Any = _MISSING) -> Any:
    """Resolve ``a.b.3`` against nested dicts/lists.

    Raises KeyError when the path is absent and no default is given.
    """
    cur = doc
    for part in split_path(path):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        elif isinstance(cur, list) and part.isdigit() and int(part) < len(cur):
            cur = cur[int(part)]
        else:
            if default is _MISSING:
                raise KeyError(path)
            return default
    return cur


def has_path(doc: Any, path: str) -> bool:
    return get_path(doc, path, _ABSENT) is not _ABSENT


def set_path(doc: dict, path: str, value: Any) -> None:
    parts = split_path(path)
    cur = doc
    for part in parts[:-1]:
        nxt = cur.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[part] = nxt
        cur = nxt
    cur[parts[-1]] = value


def iter_paths(doc: Any, prefix: str = ""):
    """Yield every key path present in ``doc`` (containers included)."""
    if isinstance(doc, dict):
        items = ((str(k), v) for k, v in doc.items())
    elif isinstance(doc, list):
        items = ((str(i), v) for i, v in enumerate(doc))
    else:
        return
    for key, value in items:
        path = f"{prefix}.{key}" if prefix else key
        yield path
        yield from iter_paths(value, path)


def _kind(v: Any) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, (int, float)):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, list):
        return "list"
    if isinstance(v, dict):
        return "map"
    return type(v).__name__


def json_equal(a: Any, b: Any) -> bool:
    """Equality under JSON typing: ``True != 1`` and ``1 == 1.0``."""
    ka, kb = _kind(a), _kind(b)
    if ka != kb:
        return False
    if ka == "list":
        return len(a) == len(b) and all(json_equal(x, y) for x, y in zip(a, b))
    if ka == "map":
        return a.keys() == b.keys() and all(json_equal(a[k], b[k]) for k in a)
    if ka == "number" and (isinstance(a, float) and math.isnan(a)):
        return False
    return a == b


def compare(actual: Any, comparator: str, value: Any) -> bool:
    """Apply one predicate comparator to a present value."""
    if comparator == "eq":
        return json_equal(actual, value)
    if comparator == "ne":
        return not json_equal(actual, value)
    if comparator in ("lt", "le", "gt", "ge"):
        ka, kv = _kind(actual), _kind(value)
        if ka != kv or ka not in ("number", "string"):
            return False
        if comparator == "lt":
            return actual < value
        if comparator == "le":
            return actual <= value
        if comparator == "gt":
            return actual > value
        return actual >= value
    if comparator == "contains":
        if isinstance(actual, list):
            return any(json_equal(x, value) for x in actual)
        if isinstance(actual, str) and isinstance(value, str):
            return value in actual
        if isinstance(actual, dict) and isinstance(value, str):
            return value in actual
        return False
    raise ValidationError(f"unknown comparator {comparator!r}")


def matches(doc: Any, predicates) -> bool:
    """True when ``doc`` satisfies every ``(path, comparator, value)``; absent paths never match."""
    for path, comparator, value in predicates:
        actual = get_path(doc, path, _ABSENT)
        if actual is _ABSENT:
            return False
        if not compare(actual, comparator, value):
            return False
    return True


def check_predicates(predicates) -> list[tuple[str, str, Any]]:
    out = []
    for pred in predicates:
        if isinstance(pred, dict):
            pred = (pred.get("key"), pred.get("cmp", pred.get("comparator")), pred.get("value"))
        try:
            path, comparator, value = pred
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed predicate {pred!r}") from exc
        split_path(path)
        if comparator not in COMPARATORS:
            raise ValidationError(f"unknown comparator {comparator!r}")
        out.append((path, comparator, value))
    return out
