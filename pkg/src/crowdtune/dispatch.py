"""Unified access function and event hooks.

Every module action is reached through :meth:`Kernel.access` with a single
dictionary::

    r = kernel.access({"cm_run_module_uoa": "dataset", "cm_action": "list"})
    if r["cm_return"] > 0:
        print("Error:" + r["cm_error"])

Return codes: 1 module not found, 2 action not found, 3 parameter
validation failed, 4 action-internal error.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from . import meta as jmeta
from .errors import CmError, DuplicateModule, HookFailure, ValidationError

logger = logging.getLogger(__name__)

KEY_MODULE = "cm_run_module_uoa"
KEY_ACTION = "cm_action"
KEY_RETURN = "cm_return"
KEY_ERROR = "cm_error"
ENVELOPE_KEYS = (KEY_MODULE, KEY_ACTION, KEY_RETURN, KEY_ERROR)

RC_OK = 0
RC_NO_MODULE = 1
RC_NO_ACTION = 2
RC_BAD_PARAMS = 3
RC_INTERNAL = 4


def module_uid(name: str) -> str:
    """Stable uid for a built-in module name."""
    return hashlib.sha256(f"crowdtune.module:{name}".encode()).hexdigest()[:16]


@dataclass
class Action:
    func: Callable[[dict, "Kernel"], dict]
    required: tuple[str, ...] = ()
    doc: str = ""


@dataclass
class ModuleDescriptor:
    name: str
    uid: str
    actions: dict[str, Action]
    exposed_params: list = field(default_factory=list)

    def __post_init__(self):
        if "list" not in self.actions:
            raise ValueError(f"module {self.name!r} must implement 'list'")


@dataclass(frozen=True)
class EventHook:
    event_name: str
    plugin_id: str
    order: int
    plugin: Callable[[dict], dict]


def error(code: int, message: str) -> dict:
    return {KEY_RETURN: code, KEY_ERROR: message}


class Kernel:
    """Module registry, access routing and hook registry."""

    def __init__(self, repo=None):
        self.repo = repo
        self._modules: dict[str, ModuleDescriptor] = {}
        self._by_uid: dict[str, ModuleDescriptor] = {}
        self._hooks: dict[str, list[EventHook]] = {}
        self._hook_seq = itertools.count()
        self._hook_lock = threading.Lock()
        self.state: dict[str, Any] = {}

    # -- modules ---------------------------------------------------------

    def register_module(self, descriptor: ModuleDescriptor) -> None:
        if descriptor.name in self._modules or descriptor.uid in self._by_uid:
            raise DuplicateModule(f"module {descriptor.name!r} already registered")
        if descriptor.name in self._by_uid or descriptor.uid in self._modules:
            raise DuplicateModule(f"module {descriptor.name!r} collides with an existing uid")
        self._modules[descriptor.name] = descriptor
        self._by_uid[descriptor.uid] = descriptor

    def module(self, ref: str) -> ModuleDescriptor | None:
        if not isinstance(ref, str):
            return None
        return self._modules.get(ref) or self._by_uid.get(ref)

    @property
    def module_names(self) -> list[str]:
        return sorted(self._modules)

    # -- access ----------------------------------------------------------

    def access(self, request: Any) -> dict:
        """Route one request; never raises, failures come back in-band."""
        try:
            return self._access(request)
        except Exception as exc:  # last-resort totality guard
            logger.exception("unexpected failure in access")
            return error(RC_INTERNAL, f"internal error: {type(exc).__name__}: {exc}")

    def _access(self, request: Any) -> dict:
        if not isinstance(request, dict):
            return error(RC_BAD_PARAMS, "request must be a JSON object")
        ref = request.get(KEY_MODULE)
        mod = self.module(ref)
        if mod is None:
            return error(RC_NO_MODULE, f"module {ref!r} not found")
        name = request.get(KEY_ACTION)
        action = mod.actions.get(name) if isinstance(name, str) else None
        if action is None:
            return error(RC_NO_ACTION, f"action {name!r} not found in module {mod.name!r}")
        params = {k: v for k, v in request.items() if k not in ENVELOPE_KEYS}
        missing = [k for k in action.required if k not in params]
        if missing:
            return error(RC_BAD_PARAMS, f"missing required parameter(s): {', '.join(missing)}")
        try:
            payload = action.func(params, self)
        except CmError as exc:
            return error(exc.code, f"{type(exc).__name__}: {exc}")
        except Exception as exc:
            logger.debug("action %s.%s failed", mod.name, name, exc_info=True)
            return error(RC_INTERNAL, f"{type(exc).__name__}: {exc}")
        if payload is None:
            payload = {}
        if not isinstance(payload, dict):
            return error(RC_INTERNAL, "action returned a non-object payload")
        payload = {k: v for k, v in payload.items() if k not in (KEY_RETURN, KEY_ERROR)}
        try:
            payload = jmeta.canonical(payload)
        except ValidationError as exc:
            return error(RC_INTERNAL, f"payload is not serializable: {exc}")
        payload[KEY_RETURN] = RC_OK
        return payload

    def access_json(self, text: str | bytes) -> str:
        """Wire form of :meth:`access`: canonical JSON in, canonical JSON out."""
        try:
            request = jmeta.parse_document(text)
        except (ValueError, UnicodeDecodeError) as exc:
            return jmeta.dumps(error(RC_BAD_PARAMS, f"cannot parse request: {exc}"))
        return jmeta.dumps(self.access(request))

    def call(self, module: str, action: str, /, **params) -> dict:
        """Convenience for nested calls from inside actions."""
        return self.access({KEY_MODULE: module, KEY_ACTION: action, **params})

    # -- hooks -----------------------------------------------------------

    def register_hook(
        self, event_name: str, plugin: Callable[[dict], dict], plugin_id: str | None = None
    ) -> str:
        with self._hook_lock:
            order = next(self._hook_seq)
            pid = plugin_id or getattr(plugin, "__name__", f"plugin{order}")
            hook = EventHook(event_name, pid, order, plugin)
            self._hooks.setdefault(event_name, []).append(hook)
        return f"{event_name}#{order}"

    def remove_hook(self, hook_id: str) -> None:
        event_name, _, order = hook_id.rpartition("#")
        with self._hook_lock:
            hooks = self._hooks.get(event_name, [])
            self._hooks[event_name] = [h for h in hooks if str(h.order) != order]

    def hooks(self, event_name: str) -> list[EventHook]:
        with self._hook_lock:
            return sorted(self._hooks.get(event_name, []), key=lambda h: h.order)

    def raise_event(self, event_name: str, payload: dict) -> dict:
        """Thread ``payload`` through every hook for ``event_name`` in registration order."""
        doc = jmeta.canonical(payload)
        for hook in self.hooks(event_name):
            try:
                out = hook.plugin(doc)
            except Exception as exc:
                raise HookFailure(hook.plugin_id, exc) from exc
            if not isinstance(out, dict):
                raise HookFailure(hook.plugin_id, "hook did not return an object")
            doc = out
        return doc
