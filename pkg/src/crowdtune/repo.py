"""Directory-backed experiment repository.

Layout on disk::

    <root>/.cmr/.cmrepo.json               repository descriptor
    <root>/.cmr/<module>/<uid>/meta.json   canonical JSON meta
    <root>/.cmr/<module>/<uid>/files/<n>   optional blobs
    <root>/.cmr/<module>/<uid>/.lock       per-entry write lock
    <root>/.cmr/<module>/.index.json       lazily rebuilt search index

Entries are addressed by cID ``<module>:<alias-or-uid>``.  The stored
meta carries the reserved keys ``cm_alias``, ``cm_modified_at`` and (after
conflicting merges) ``cm_conflicts``.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from filelock import FileLock, Timeout

from . import meta as jmeta
from .errors import AliasConflict, CmError, CorruptMeta, LockTimeout, NotFound, ValidationError

logger = logging.getLogger(__name__)

REPO_DIR = ".cmr"
DESCRIPTOR = ".cmrepo.json"
INDEX_FILE = ".index.json"
META_FILE = "meta.json"
LOCK_FILE = ".lock"
ALIAS_LOCK = ".alias.lock"

UID_RE = re.compile(r"^[0-9a-f]{16}$")
ALIAS_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")
RESERVED_KEYS = ("cm_alias", "cm_modified_at", "cm_conflicts")

LOCK_TIMEOUT_S = 10.0
RACY_WINDOW_NS = 50_000_000  # generous bound on mtime granularity


class PermissionDenied(CmError, PermissionError):
    pass


class NotADirectory(CmError, NotADirectoryError):
    pass


def new_uid() -> str:
    """16 hex chars: low 16 bits of the epoch seconds, then 48 random bits."""
    return f"{int(time.time()) & 0xFFFF:04x}{secrets.randbits(48):012x}"


def is_uid(text: str) -> bool:
    return isinstance(text, str) and bool(UID_RE.match(text))


def utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def check_alias(alias: str) -> str:
    if not isinstance(alias, str) or not ALIAS_RE.match(alias):
        raise ValidationError(f"invalid alias {alias!r}")
    return alias


def check_module(module: str) -> str:
    check_alias(module)
    if module.startswith("."):
        raise ValidationError(f"invalid module name {module!r}")
    return module


@dataclass(frozen=True, order=True)
class Cid:
    module: str
    entry: str

    def __str__(self) -> str:
        return f"{self.module}:{self.entry}"

    @classmethod
    def parse(cls, text: "str | Cid") -> "Cid":
        if isinstance(text, Cid):
            return text
        if not isinstance(text, str) or text.count(":") != 1:
            raise ValidationError(f"invalid cID {text!r}")
        module, entry = text.split(":")
        check_module(module)
        check_alias(entry)
        return cls(module, entry)


@dataclass
class Entry:
    module: str
    uid: str
    alias: str | None
    meta: dict
    files: dict[str, bytes] = field(default_factory=dict)
    modified_at: str = ""

    @property
    def cid(self) -> Cid:
        return Cid(self.module, self.alias or self.uid)


@dataclass
class MergeReport:
    added: int = 0
    identical: int = 0
    conflicts: int = 0
    conflict_cids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "added": self.added,
            "identical": self.identical,
            "conflicts": self.conflicts,
            "conflict_cids": list(self.conflict_cids),
        }


def _user_meta(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k not in ("cm_alias", "cm_modified_at")}


def _content_key(doc: dict, files: dict[str, bytes]) -> str:
    body = {k: v for k, v in doc.items() if k not in ("cm_modified_at", "cm_conflicts")}
    digest = hashlib.sha256()
    digest.update(jmeta.dumpb(body))
    for name in sorted(files):
        digest.update(name.encode())
        digest.update(hashlib.sha256(files[name]).digest())
    return digest.hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _check_file_name(name: str) -> str:
    if not isinstance(name, str) or not name or "/" in name or "\\" in name or name in (".", ".."):
        raise ValidationError(f"invalid file name {name!r}")
    return name


class Repository:
    """Handle on one ``.cmr`` tree. Safe to share between threads."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.root = self.path / REPO_DIR
        if not (self.root / DESCRIPTOR).is_file():
            raise NotFound(f"no repository at {self.path}")
        self._cache: dict[str, dict] = {}
        self._cache_lock = threading.Lock()

    def __repr__(self) -> str:
        return f"Repository({str(self.path)!r})"

    @property
    def descriptor(self) -> dict:
        return jmeta.parse_document((self.root / DESCRIPTOR).read_bytes())

    # -- paths and locks ------------------------------------------------

    def _module_dir(self, module: str) -> Path:
        return self.root / check_module(module)

    def _entry_dir(self, module: str, uid: str) -> Path:
        return self._module_dir(module) / uid

    def _lock(self, path: Path) -> FileLock:
        return FileLock(str(path), timeout=LOCK_TIMEOUT_S)

    def modules(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            p.name for p in self.root.iterdir() if p.is_dir() and not p.name.startswith(".")
        )

    def _uids(self, module: str) -> list[str]:
        mdir = self._module_dir(module)
        if not mdir.is_dir():
            return []
        return sorted(p.name for p in mdir.iterdir() if is_uid(p.name))

    # -- index ----------------------------------------------------------

    def _signatures(self, module: str) -> dict[str, list[int]]:
        sigs = {}
        for uid in self._uids(module):
            try:
                st = (self._entry_dir(module, uid) / META_FILE).stat()
            except FileNotFoundError:
                continue  # entry directory being created
            sigs[uid] = [st.st_mtime_ns, st.st_size, st.st_ino]
        return sigs

    def _read_doc(self, module: str, uid: str) -> dict:
        path = self._entry_dir(module, uid) / META_FILE
        try:
            raw = path.read_bytes()
        except FileNotFoundError as exc:
            raise NotFound(f"{module}:{uid}") from exc
        try:
            return jmeta.parse_document(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            raise CorruptMeta(f"{module}:{uid}: unparsable meta.json ({exc})") from exc

    def _index(self, module: str) -> dict:
        """Return ``{"entries": {uid: {"sig", "meta"}}, "paths": {path: [uid]}}``, refreshed if stale.

        A cached entry is trusted only if its signature matches and its mtime
        predates the index build by more than the filesystem timestamp
        granularity; otherwise it is re-read (a same-size rewrite within one
        clock tick could otherwise go unnoticed).
        """
        built_ns = time.time_ns()
        sigs = self._signatures(module)
        with self._cache_lock:
            cached = self._cache.get(module)
        if cached is None:
            cached = self._load_index_file(module)
        prev_built = cached.get("built_ns", 0) if cached else 0

        def trusted(entry, sig) -> bool:
            return entry["sig"] == sig and sig[0] < prev_built - RACY_WINDOW_NS

        if cached is not None and cached["entries"].keys() == sigs.keys() and all(
            trusted(cached["entries"][u], sig) for u, sig in sigs.items()
        ):
            with self._cache_lock:
                self._cache[module] = cached
            return cached

        old = cached["entries"] if cached else {}
        entries = {}
        for uid, sig in sigs.items():
            prev = old.get(uid)
            if prev is not None and trusted(prev, sig):
                entries[uid] = prev
            else:
                entries[uid] = {"sig": sig, "meta": self._read_doc(module, uid)}
        paths: dict[str, list[str]] = {}
        for uid in sorted(entries):
            for p in set(jmeta.iter_paths(entries[uid]["meta"])):
                paths.setdefault(p, []).append(uid)
        index = {"entries": entries, "paths": paths, "built_ns": built_ns}
        self._store_index_file(module, index)
        with self._cache_lock:
            self._cache[module] = index
        return index

    def _load_index_file(self, module: str) -> dict | None:
        path = self._module_dir(module) / INDEX_FILE
        try:
            return jmeta.parse_document(path.read_bytes())
        except (FileNotFoundError, ValueError, UnicodeDecodeError):
            return None

    def _store_index_file(self, module: str, index: dict) -> None:
        mdir = self._module_dir(module)
        if not mdir.is_dir():
            return
        try:
            _atomic_write(mdir / INDEX_FILE, jmeta.dumpb(index))
        except OSError as exc:  # index is a cache; a read-only repo still works
            logger.debug("cannot write index for %s: %s", module, exc)

    def _alias_map(self, module: str) -> dict[str, str]:
        out = {}
        for uid, e in self._index(module)["entries"].items():
            alias = e["meta"].get("cm_alias")
            if isinstance(alias, str):
                out[alias] = uid
        return out

    # -- resolution -----------------------------------------------------

    def resolve(self, module: str, ref: str) -> str:
        """Map an alias or uid to the uid of an existing entry."""
        check_module(module)
        if is_uid(ref) and (self._entry_dir(module, ref) / META_FILE).is_file():
            return ref
        uid = self._alias_map(module).get(ref)
        if uid is None:
            raise NotFound(f"{module}:{ref}")
        return uid

    def exists(self, cid: str | Cid) -> bool:
        cid = Cid.parse(cid)
        try:
            self.resolve(cid.module, cid.entry)
        except NotFound:
            return False
        return True

    # -- operations -----------------------------------------------------

    def save_entry(
        self,
        module: str,
        alias: str | None = None,
        meta: dict | None = None,
        files: dict[str, bytes] | None = None,
        *,
        uid: str | None = None,
        modified_at: str | None = None,
    ) -> Cid:
        """Persist an entry; an existing alias keeps its uid and gets its meta replaced."""
        check_module(module)
        if alias is not None:
            check_alias(alias)
            if is_uid(alias):
                raise AliasConflict(f"alias {alias!r} is shaped like a uid")
        if uid is not None and not is_uid(uid):
            raise ValidationError(f"invalid uid {uid!r}")
        meta = {} if meta is None else meta
        if not isinstance(meta, dict):
            raise ValidationError("meta must be a JSON object")
        doc = jmeta.canonical(_user_meta(meta))
        if files is not None:
            files = {_check_file_name(n): bytes(b) for n, b in files.items()}

        mdir = self._module_dir(module)
        mdir.mkdir(parents=True, exist_ok=True)
        if alias is None:
            uid = uid or self._mint(module)
            self._write(module, uid, doc, files, alias, modified_at)
            return Cid(module, uid)

        try:
            with self._lock(mdir / ALIAS_LOCK):
                existing = self._alias_map(module).get(alias)
                if existing is not None and uid is not None and existing != uid:
                    raise AliasConflict(f"alias {alias!r} already names {module}:{existing}")
                uid = existing or uid or self._mint(module)
                self._write(module, uid, doc, files, alias, modified_at)
        except Timeout as exc:
            raise LockTimeout(f"alias lock for {module} busy") from exc
        return Cid(module, alias)

    def _mint(self, module: str) -> str:
        for _ in range(64):
            uid = new_uid()
            try:
                self._entry_dir(module, uid).mkdir(parents=True)
                return uid
            except FileExistsError:
                continue
        raise CmError("could not mint a unique uid")

    def _write(
        self,
        module: str,
        uid: str,
        doc: dict,
        files: dict[str, bytes] | None,
        alias: str | None,
        modified_at: str | None,
    ) -> None:
        edir = self._entry_dir(module, uid)
        edir.mkdir(parents=True, exist_ok=True)
        stored = dict(doc)
        if alias is not None:
            stored["cm_alias"] = alias
        stored["cm_modified_at"] = modified_at or utc_now()
        self._write_stored(module, uid, stored, files)

    def _write_stored(self, module: str, uid: str, stored: dict, files: dict[str, bytes] | None) -> None:
        edir = self._entry_dir(module, uid)
        edir.mkdir(parents=True, exist_ok=True)
        try:
            with self._lock(edir / LOCK_FILE):
                if files is not None:
                    fdir = edir / "files"
                    fdir.mkdir(exist_ok=True)
                    for old in fdir.iterdir():
                        if old.name not in files:
                            old.unlink()
                    for name, blob in files.items():
                        _atomic_write(fdir / name, blob)
                _atomic_write(edir / META_FILE, jmeta.dumpb(stored))
        except Timeout as exc:
            raise LockTimeout(f"entry lock for {module}:{uid} busy") from exc

    def _read_files(self, module: str, uid: str) -> dict[str, bytes]:
        fdir = self._entry_dir(module, uid) / "files"
        if not fdir.is_dir():
            return {}
        return {
            p.name: p.read_bytes()
            for p in sorted(fdir.iterdir())
            if p.is_file() and not p.name.endswith(".tmp")
        }

    def load_entry(self, cid: str | Cid) -> Entry:
        cid = Cid.parse(cid)
        uid = self.resolve(cid.module, cid.entry)
        doc = self._read_doc(cid.module, uid)
        return Entry(
            module=cid.module,
            uid=uid,
            alias=doc.get("cm_alias"),
            meta=_user_meta(doc),
            files=self._read_files(cid.module, uid),
            modified_at=doc.get("cm_modified_at", ""),
        )

    def load(self, module: str, ref: str) -> Entry:
        return self.load_entry(Cid(module, ref))

    def _cids(self, module: str, uids: Iterable[str], entries: dict) -> list[Cid]:
        rows = []
        for uid in uids:
            alias = entries[uid]["meta"].get("cm_alias")
            alias = alias if isinstance(alias, str) else None
            rows.append(((alias or "", uid), Cid(module, alias or uid)))
        rows.sort(key=lambda r: r[0])
        return [cid for _, cid in rows]

    def list_entries(self, module: str) -> list[Cid]:
        check_module(module)
        entries = self._index(module)["entries"]
        return self._cids(module, entries, entries)

    def search(self, module: str | None = None, predicates=()) -> list[Cid]:
        """Entries whose meta satisfies all predicates ``(key_path, comparator, value)``."""
        preds = jmeta.check_predicates(predicates)
        modules = [check_module(module)] if module is not None else self.modules()
        out: list[Cid] = []
        for mod in modules:
            index = self._index(mod)
            entries = index["entries"]
            candidates = set(entries)
            for path, _, _ in preds:
                candidates &= set(index["paths"].get(path, ()))
            hits = [u for u in candidates if jmeta.matches(entries[u]["meta"], preds)]
            out.extend(self._cids(mod, hits, entries))
        return out

    def entries(self, module: str) -> list[Entry]:
        return [self.load_entry(c) for c in self.list_entries(module)]

    def remove_entry(self, cid: str | Cid) -> None:
        cid = Cid.parse(cid)
        uid = self.resolve(cid.module, cid.entry)
        edir = self._entry_dir(cid.module, uid)
        with self._lock(edir / LOCK_FILE):
            (edir / META_FILE).unlink()
        for p in sorted(edir.rglob("*"), reverse=True):
            p.unlink() if p.is_file() else p.rmdir()
        edir.rmdir()

    # -- sync records -----------------------------------------------------

    def export_records(self, since: str | None = None) -> list[dict]:
        """Full stored documents (reserved keys included) for merge/sync.

        ``since`` keeps entries with ``cm_modified_at >= since``.
        """
        out = []
        for mod in self.modules():
            entries = self._index(mod)["entries"]
            for uid in sorted(entries):
                doc = entries[uid]["meta"]
                ts = doc.get("cm_modified_at", "")
                if since is not None and not (isinstance(ts, str) and ts >= since):
                    continue
                files = self._read_files(mod, uid)
                out.append(
                    {
                        "module": mod,
                        "uid": uid,
                        "meta": doc,
                        "files": {n: base64.b64encode(b).decode("ascii") for n, b in files.items()},
                    }
                )
        return out

    def merge_records(self, records: Iterable[dict]) -> MergeReport:
        report = MergeReport()
        for rec in records:
            self._merge_one(rec, report)
        return report

    def _merge_one(self, rec: dict, report: MergeReport) -> None:
        try:
            module = check_module(rec["module"])
            uid = rec["uid"]
            incoming = dict(rec["meta"])
            files = {n: base64.b64decode(b) for n, b in (rec.get("files") or {}).items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed merge record: {exc}") from exc
        if not is_uid(uid) or not isinstance(incoming, dict):
            raise ValidationError("malformed merge record")

        mdir = self._module_dir(module)
        mdir.mkdir(parents=True, exist_ok=True)
        with self._lock(mdir / ALIAS_LOCK):
            edir = self._entry_dir(module, uid)
            if not (edir / META_FILE).is_file():
                alias = incoming.get("cm_alias")
                if isinstance(alias, str):
                    owner = self._alias_map(module).get(alias)
                    if owner is not None and owner != uid:
                        incoming.pop("cm_alias")
                        incoming["cm_conflicts"] = _union_conflicts(
                            incoming.get("cm_conflicts"), [{"cm_alias": alias, "owner": owner}]
                        )
                        report.conflicts += 1
                        report.conflict_cids.append(f"{module}:{uid}")
                self._write_stored(module, uid, incoming, files)
                report.added += 1
                return

            current = self._read_doc(module, uid)
            cur_files = self._read_files(module, uid)
            if _content_key(current, cur_files) == _content_key(incoming, files):
                merged = _union_conflicts(current.get("cm_conflicts"), incoming.get("cm_conflicts"))
                if merged != (current.get("cm_conflicts") or []):
                    current["cm_conflicts"] = merged
                    self._write_stored(module, uid, current, None)
                report.identical += 1
                return

            def rank(doc, fl):
                ts = doc.get("cm_modified_at", "")
                return (ts if isinstance(ts, str) else "", _content_key(doc, fl))

            if rank(incoming, files) > rank(current, cur_files):
                winner, win_files, loser, changed_files = incoming, files, current, files
            else:
                winner, win_files, loser, changed_files = current, cur_files, incoming, None
            archived = {
                "cm_modified_at": loser.get("cm_modified_at"),
                "meta": {k: v for k, v in loser.items() if k not in ("cm_conflicts", "cm_modified_at")},
            }
            result = dict(winner)
            result["cm_conflicts"] = _union_conflicts(
                current.get("cm_conflicts"), incoming.get("cm_conflicts"), [archived]
            )
            alias = result.get("cm_alias")
            if isinstance(alias, str):
                owner = self._alias_map(module).get(alias)
                if owner is not None and owner != uid:
                    result.pop("cm_alias")
            self._write_stored(module, uid, result, changed_files)
            report.conflicts += 1
            report.conflict_cids.append(f"{module}:{uid}")


def _union_conflicts(*lists) -> list:
    seen = {}
    for lst in lists:
        for item in lst or []:
            seen[jmeta.dumps(item)] = item
    return [seen[k] for k in sorted(seen)]


def init_repo(path: str | os.PathLike) -> Repository:
    """Create (or reopen) the ``.cmr`` tree under ``path``. Idempotent."""
    path = Path(path)
    try:
        if path.exists() and not path.is_dir():
            raise NotADirectory(f"{path} is not a directory")
        path.mkdir(parents=True, exist_ok=True)
        root = path / REPO_DIR
        desc = root / DESCRIPTOR
        if not desc.is_file():
            if not os.access(path, os.W_OK):
                raise PermissionDenied(f"cannot write to {path}")
            root.mkdir(exist_ok=True)
            with FileLock(str(root / ".init.lock"), timeout=LOCK_TIMEOUT_S):
                if not desc.is_file():
                    _atomic_write(desc, jmeta.dumpb({"format": 1, "repo_uid": new_uid()}))
    except PermissionError as exc:
        if isinstance(exc, PermissionDenied):
            raise
        raise PermissionDenied(str(exc)) from exc
    return Repository(path)


def open_repo(path: str | os.PathLike) -> Repository:
    return Repository(path)


def find_repo(start: str | os.PathLike) -> Path | None:
    """Walk up from ``start`` looking for a directory containing ``.cmr``."""
    cur = Path(start).resolve()
    for candidate in (cur, *cur.parents):
        if (candidate / REPO_DIR / DESCRIPTOR).is_file():
            return candidate
    return None


def merge_repos(dst: Repository, src: Repository) -> MergeReport:
    """Union ``src`` into ``dst``; conflicting uids resolve newest-wins with archival."""
    return dst.merge_records(src.export_records())

