"""``cm`` command-line front-end.

Grammar::

    cm <module> <action> [key=value | key:=<json>]... [-- <passthrough>...]

``key=value`` passes a string, ``key:=`` parses the right-hand side as a
JSON fragment.  Everything after ``--`` is passed untouched as the list
parameter ``cm_original_cmd``.  The response envelope is printed as
canonical JSON and the exit code is ``min(cm_return, 125)``.  Usage errors
exit with 2.

The repository is taken from ``$CM_REPO`` or found by walking up from the
current directory; if none exists one is created in the current directory.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Sequence

from . import meta as jmeta
from .dispatch import ENVELOPE_KEYS, KEY_ACTION, KEY_MODULE, KEY_RETURN
from .modules import default_kernel
from .repo import find_repo, init_repo

USAGE = "usage: cm <module> <action> [key=value | key:=<json>]... [-- <args>...]"
PASSTHROUGH_KEY = "cm_original_cmd"
EXIT_CAP = 125


class UsageError(Exception):
    pass


def parse_args(argv: Sequence[str]) -> dict:
    """Turn an argument vector into a request envelope."""
    argv = list(argv)
    passthrough = None
    if "--" in argv:
        cut = argv.index("--")
        argv, passthrough = argv[:cut], argv[cut + 1 :]
    if len(argv) < 2:
        raise UsageError("module and action are required")
    module, action, *pairs = argv
    request = {KEY_MODULE: module, KEY_ACTION: action}
    for token in pairs:
        eq = token.find("=")
        if eq <= 0:
            raise UsageError(f"expected key=value or key:=json, got {token!r}")
        if token[eq - 1] == ":":
            key, raw = token[: eq - 1], token[eq + 1 :]
            try:
                value = jmeta.loads(raw)
            except ValueError as exc:
                raise UsageError(f"bad JSON for {key!r}: {exc}") from exc
        else:
            key, value = token[:eq], token[eq + 1 :]
        if not key:
            raise UsageError(f"empty key in {token!r}")
        if key in ENVELOPE_KEYS or key == PASSTHROUGH_KEY:
            raise UsageError(f"{key!r} is reserved")
        if key in request:
            raise UsageError(f"duplicate key {key!r}")
        request[key] = value
    if passthrough is not None:
        request[PASSTHROUGH_KEY] = passthrough
    return request


def open_cli_repo(cwd: str | os.PathLike | None = None):
    env = os.environ.get("CM_REPO")
    if env:
        return init_repo(env)
    cwd = Path(cwd or os.getcwd())
    found = find_repo(cwd)
    return init_repo(found or cwd)


def _serve(kernel, request: dict) -> int:
    from .server import serve

    host = request.get("host", "127.0.0.1")
    port = int(request.get("port", 0))
    srv = serve(kernel, host, port, start=False)
    print(jmeta.dumps({"url": srv.url, KEY_RETURN: 0}), flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.shutdown()
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0
    try:
        request = parse_args(argv)
    except UsageError as exc:
        print(f"cm: {exc}\n{USAGE}", file=sys.stderr)
        return 2
    try:
        kernel = default_kernel(open_cli_repo())
    except Exception as exc:
        print(jmeta.dumps({KEY_RETURN: 4, "cm_error": f"cannot open repository: {exc}"}))
        return 4
    if request[KEY_MODULE] == "crowd" and request[KEY_ACTION] == "serve":
        return _serve(kernel, request)
    response = kernel.access(request)
    code = response.get(KEY_RETURN, 4)
    if code == 0 and "cm_text" in response:
        sys.stdout.write(response["cm_text"])
    else:
        print(jmeta.dumps(response))
    return min(int(code), EXIT_CAP)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
