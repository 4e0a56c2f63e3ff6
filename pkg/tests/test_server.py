from __future__ import annotations

import http.client
import threading
from urllib.parse import urlparse

import pytest

from crowdtune import meta as jmeta
from crowdtune import init_repo
from crowdtune.errors import BindFailure, TransportError
from crowdtune.pipeline import ExperimentPoint
from crowdtune.server import (
    MAX_BODY,
    Client,
    RemoteError,
    serve,
    submit_point,
    sync,
    sync_cursor,
)


@pytest.fixture
def server(repo):
    srv = serve(repo)
    yield srv
    srv.shutdown()


def _conn(url):
    u = urlparse(url)
    return http.client.HTTPConnection(u.hostname, u.port, timeout=10)


def test_list_matches_local(server, kernel, repo):
    repo.save_entry("dataset", alias="x", meta={"v": 1})
    client = Client(server.url)
    req = {"cm_run_module_uoa": "dataset", "cm_action": "list"}
    assert client.post_raw(jmeta.dumpb(req)) == jmeta.dumpb(kernel.access(req))


def test_malformed_body_is_in_band(server):
    body = Client(server.url).post_raw(b"{not json")
    doc = jmeta.loads(body)
    assert doc["cm_return"] == 3 and "parse" in doc["cm_error"]


def test_unknown_route_and_method(server):
    with pytest.raises(TransportError, match="404"):
        Client(server.url).post_raw(b"{}", path="/other")
    c = _conn(server.url)
    c.request("GET", "/access")
    assert c.getresponse().status == 404


def test_oversized_body_rejected(server):
    c = _conn(server.url)
    c.putrequest("POST", "/access")
    c.putheader("Content-Length", str(MAX_BODY + 1))
    c.endheaders()
    assert c.getresponse().status == 400


def test_remote_error_and_transport_error(server):
    client = Client(server.url)
    with pytest.raises(RemoteError) as info:
        client.call("nope", "list")
    assert info.value.code == 1
    with pytest.raises(TransportError):
        Client("http://127.0.0.1:9", timeout=2).call("dataset", "list")


def test_bind_failure(server):
    host, port = server.address
    with pytest.raises(BindFailure):
        serve(server.kernel, host, port)


def _point(i):
    return ExperimentPoint(p={"platform": "i5", "N": 10 + i}, c={"seed": 0}, b={"cpi": [1.0 + i]})


def test_concurrent_submissions(server):
    client = Client(server.url)
    errors = []

    def work(i):
        try:
            submit_point(client, _point(i), "synth-cpi")
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert client.call("experiment", "list")["count"] == 16


def test_resubmission_is_idempotent(server):
    client = Client(server.url)
    pt = _point(1)
    first = submit_point(client, pt, "synth-cpi")
    again = submit_point(client, pt, "synth-cpi")
    assert first == again
    assert client.call("experiment", "list")["count"] == 1


def test_undeclared_key_rejected(server):
    client = Client(server.url)
    bad = ExperimentPoint(p={"platform": "i5", "N": 4, "colour": "red"})
    with pytest.raises(RemoteError) as info:
        submit_point(client, bad, "synth-cpi")
    assert info.value.code == 3
    assert client.call("experiment", "list")["count"] == 0


def test_sync_round_trip_and_cursors(server, repo, tmp_path):
    repo.save_entry("dataset", alias="remote", meta={"v": 1})
    local = init_repo(tmp_path / "local")
    local.save_entry("dataset", alias="local", meta={"v": 2})
    client = Client(server.url)
    pulled, pushed = sync(client, local)
    assert pulled.added == 1 and pushed.added == 1
    assert repo.load("dataset", "local").meta == {"v": 2}
    assert local.load("dataset", "remote").meta == {"v": 1}
    assert sync_cursor(local, server.url, "pull") is not None
    pulled, pushed = sync(client, local)
    assert pulled.added == 0 and pushed.added == 0


def test_crowd_actions(server, tmp_path):
    from crowdtune import default_kernel

    local = default_kernel(init_repo(tmp_path / "l"))
    local.call("dataset", "save", alias="mine", meta={})
    out = local.call("crowd", "sync", url=server.url)
    assert out["cm_return"] == 0 and out["push"]["added"] == 1
    assert local.call("crowd", "pull", url="http://127.0.0.1:9", timeout=1)["cm_return"] == 4
