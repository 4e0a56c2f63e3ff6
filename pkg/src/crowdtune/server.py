"""HTTP front-end for the access function and a matching client.

The wire protocol is one route, ``POST /access``, whose request and
response bodies are canonical-JSON envelopes.  Responses are always HTTP
200 with the outcome in ``cm_return``; only unknown routes (404) and
oversized or unreadable bodies (400) use HTTP status codes.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from . import meta as jmeta
from .dispatch import KEY_ACTION, KEY_ERROR, KEY_MODULE, KEY_RETURN, Kernel
from .errors import BindFailure, CmError, TransportError
from .pipeline import EXPERIMENT_MODULE, ExperimentPoint
from .repo import Cid, MergeReport, Repository, new_uid

logger = logging.getLogger(__name__)

MAX_BODY = 16 * 1024 * 1024
ROUTE = "/access"
SYNC_FILE = ".sync.json"


class RemoteError(CmError):
    """Non-zero ``cm_return`` received from a server."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "crowdtune"

    def log_message(self, fmt: str, *args: Any) -> None:
        logger.debug("%s - %s", self.address_string(), fmt % args)

    def _reply(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _not_found(self) -> None:
        self.close_connection = True
        self._reply(404, b"not found\n", "text/plain")

    do_GET = do_PUT = do_DELETE = _not_found

    def do_POST(self) -> None:
        if self.path != ROUTE:
            self._drain()
            self._not_found()
            return
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            length = -1
        if length < 0 or length > MAX_BODY:
            self.close_connection = True
            self._reply(400, b"missing, invalid or oversized body\n", "text/plain")
            return
        body = self.rfile.read(length)
        self._reply(200, self.server.kernel.access_json(body).encode("utf-8"))

    def _drain(self) -> None:
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            return
        if 0 < length <= MAX_BODY:
            self.rfile.read(length)


class _HTTPServer(ThreadingHTTPServer):
    daemon_threads = False  # shutdown waits for in-flight requests
    block_on_close = True
    allow_reuse_address = True

    def __init__(self, addr, kernel: Kernel):
        super().__init__(addr, _Handler)
        self.kernel = kernel


class CrowdServer:
    """Running server handle; also a context manager."""

    def __init__(self, kernel: Kernel, host: str = "127.0.0.1", port: int = 0):
        try:
            self._httpd = _HTTPServer((host, port), kernel)
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self.kernel = kernel
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._httpd.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "CrowdServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="crowd-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def shutdown(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "CrowdServer":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(target: Kernel | Repository, host: str = "127.0.0.1", port: int = 0, start: bool = True) -> CrowdServer:
    """Serve a kernel (or a repository with the built-in modules) on ``host:port``."""
    if isinstance(target, Repository):
        from .modules import default_kernel

        target = default_kernel(target)
    srv = CrowdServer(target, host, port)
    return srv.start() if start else srv


class Client:
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def post_raw(self, body: bytes, path: str = ROUTE) -> bytes:
        req = urllib.request.Request(
            self.url + path, data=body, method="POST", headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            raise TransportError(f"HTTP {exc.code} from {self.url}{path}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"cannot reach {self.url}: {exc}") from exc

    def access(self, request: dict) -> dict:
        raw = self.post_raw(jmeta.dumpb(request))
        try:
            return jmeta.parse_document(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            raise TransportError(f"unparsable response: {exc}") from exc

    def call(self, module: str, action: str, /, **params) -> dict:
        """Like :meth:`access` but raises :class:`RemoteError` on a non-zero return code."""
        out = self.access({KEY_MODULE: module, KEY_ACTION: action, **params})
        if out.get(KEY_RETURN, 4):
            raise RemoteError(out.get(KEY_RETURN, 4), out.get(KEY_ERROR, "remote error"))
        return out


def submit_point(client: Client, point: ExperimentPoint, pipeline: str | None = None) -> Cid:
    """Persist ``point`` on the server under a client-minted uid (idempotent on resubmission)."""
    if point.uid is None:
        point.uid = new_uid()
    params = {"uid": point.uid, "point": point.to_meta()}
    if pipeline is not None:
        params["pipeline"] = pipeline
    out = client.call(EXPERIMENT_MODULE, "submit", **params)
    return Cid.parse(out["cid"])


def _sync_key(url: str) -> str:
    return hashlib.sha256(url.encode()).hexdigest()[:16]


def _cursors(repo: Repository) -> dict:
    path = repo.root / SYNC_FILE
    try:
        return jmeta.parse_document(path.read_bytes())
    except (FileNotFoundError, ValueError):
        return {}


def _store_cursor(repo: Repository, url: str, direction: str, cursor: str | None) -> None:
    if cursor is None:
        return
    data = _cursors(repo)
    data.setdefault(_sync_key(url), {"url": url})[direction] = cursor
    tmp = repo.root / f"{SYNC_FILE}.tmp"
    tmp.write_bytes(jmeta.dumpb(data))
    tmp.replace(repo.root / SYNC_FILE)


def sync_cursor(repo: Repository, url: str, direction: str = "pull") -> str | None:
    return _cursors(repo).get(_sync_key(url), {}).get(direction)


def pull_merge(client: Client, local: Repository) -> MergeReport:
    """Fetch server entries modified at or after the last pull and merge them locally."""
    since = sync_cursor(local, client.url, "pull")
    params = {} if since is None else {"since": since}
    out = client.call("repo", "changes", **params)
    report = local.merge_records(out["records"])
    _store_cursor(local, client.url, "pull", out.get("cursor"))
    return report


def push_merge(client: Client, local: Repository) -> MergeReport:
    """Send local entries modified at or after the last push to the server."""
    since = sync_cursor(local, client.url, "push")
    records = local.export_records(since)
    out = client.call("repo", "merge_in", records=records)
    cursor = max((r["meta"].get("cm_modified_at", "") for r in records), default=since)
    _store_cursor(local, client.url, "push", cursor)
    return MergeReport(out["added"], out["identical"], out["conflicts"], list(out["conflict_cids"]))


def sync(client: Client, local: Repository) -> tuple[MergeReport, MergeReport]:
    """Pull then push."""
    return pull_merge(client, local), push_merge(client, local)
