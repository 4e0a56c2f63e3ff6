"""Built-in modules reachable through the access function."""

from __future__ import annotations

import base64
import binascii
import dataclasses
import tempfile
from typing import Any, Mapping

from . import explore as xp
from . import learn
from . import meta as jmeta
from . import pipeline as pl
from . import report as rpt
from . import synth
from .dispatch import Action, Kernel, ModuleDescriptor, module_uid
from .errors import CmError, NotFound, StageFailure, ValidationError
from .repo import Cid, Repository, is_uid
from .stats import expected_and_min, summarize

DATA_MODULES = ("dataset", "experiment", "model", "pipeline", "exploration", "synth-platform")


def _repo(kernel: Kernel) -> Repository:
    if kernel.repo is None:
        raise CmError("no repository attached")
    return kernel.repo


def _int(params: Mapping, key: str, default: Any = None) -> Any:
    value = params.get(key, default)
    if isinstance(value, str):
        try:
            value = int(value)
        except ValueError as exc:
            raise ValidationError(f"{key!r} must be an integer") from exc
    if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
        raise ValidationError(f"{key!r} must be an integer")
    return value


def _float(params: Mapping, key: str, default: Any = None) -> Any:
    value = params.get(key, default)
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError as exc:
            raise ValidationError(f"{key!r} must be a number") from exc
    if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ValidationError(f"{key!r} must be a number")
    return value


def _dict(params: Mapping, key: str, default: Any = None) -> Any:
    value = params.get(key, default)
    if value is not None and not isinstance(value, dict):
        raise ValidationError(f"{key!r} must be an object")
    return value


def _entry_ref(module: str, ref: Any) -> Cid:
    if not isinstance(ref, str):
        raise ValidationError("entry reference must be a string")
    if ":" in ref:
        cid = Cid.parse(ref)
        if cid.module != module:
            raise ValidationError(f"{ref!r} is not in module {module!r}")
        return cid
    return Cid.parse(f"{module}:{ref}")


def _decode_files(files: Any) -> dict[str, bytes] | None:
    if files is None:
        return None
    if not isinstance(files, dict):
        raise ValidationError("files must map names to base64 text")
    try:
        return {n: base64.b64decode(b, validate=True) for n, b in files.items()}
    except (binascii.Error, TypeError) as exc:
        raise ValidationError(f"bad base64 file payload: {exc}") from exc


# -- generic data modules --------------------------------------------------


def _data_actions(module: str, validate=None) -> dict[str, Action]:
    def do_list(params, kernel):
        cids = [str(c) for c in _repo(kernel).list_entries(module)]
        return {"entries": cids, "count": len(cids)}

    def do_load(params, kernel):
        repo = _repo(kernel)
        entry = repo.load_entry(_entry_ref(module, params["entry"]))
        return {
            "cid": str(entry.cid),
            "uid": entry.uid,
            "alias": entry.alias,
            "meta": entry.meta,
            "modified_at": entry.modified_at,
            "files": sorted(entry.files),
        }

    def do_save(params, kernel):
        repo = _repo(kernel)
        meta = _dict(params, "meta", {})
        if validate is not None:
            validate(meta, kernel)
        cid = repo.save_entry(
            module, alias=params.get("alias"), meta=meta, files=_decode_files(params.get("files")), uid=params.get("uid")
        )
        return {"cid": str(cid), "uid": repo.resolve(module, cid.entry)}

    def do_search(params, kernel):
        preds = params.get("predicates", [])
        if not isinstance(preds, list):
            raise ValidationError("predicates must be a list")
        cids = [str(c) for c in _repo(kernel).search(module, preds)]
        return {"entries": cids, "count": len(cids)}

    def do_remove(params, kernel):
        _repo(kernel).remove_entry(_entry_ref(module, params["entry"]))
        return {}

    return {
        "list": Action(do_list, doc="list entries"),
        "load": Action(do_load, ("entry",), "load one entry"),
        "save": Action(do_save, doc="save an entry (meta, alias, uid, files)"),
        "search": Action(do_search, doc="entries matching all predicates"),
        "remove": Action(do_remove, ("entry",), "delete one entry"),
    }


def _pipeline_definition(kernel: Kernel, ref: Any) -> pl.PipelineDefinition:
    if isinstance(ref, dict):
        return pl.PipelineDefinition.from_dict(ref)
    repo = _repo(kernel)
    if isinstance(ref, str) and ref in BUILTIN_PIPELINES and not repo.exists(f"{pl.PIPELINE_MODULE}:{ref}"):
        return BUILTIN_PIPELINES[ref]()
    try:
        return pl.PipelineDefinition.from_dict(repo.load_entry(_entry_ref(pl.PIPELINE_MODULE, ref)).meta)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"pipeline {ref!r} is malformed: {exc}") from exc


def _validate_pipeline(meta, kernel):
    try:
        pl.PipelineDefinition.from_dict(meta)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed pipeline definition: {exc}") from exc


def _experiment_submit(params, kernel):
    """Idempotent, validated insert of a point minted elsewhere."""
    repo = _repo(kernel)
    uid = params["uid"]
    if not is_uid(uid):
        raise ValidationError(f"invalid uid {uid!r}")
    point = _dict(params, "point")
    if point is None:
        raise ValidationError("point is required")
    unknown = set(point) - {"p", "c", "s", "b", "aggregates", "provenance"}
    if unknown:
        raise ValidationError(f"unexpected point sections: {sorted(unknown)}")
    ref = params.get("pipeline") or point.get("provenance", {}).get("pipeline")
    if ref is None:
        raise ValidationError("point does not name its pipeline")
    pl.validate_point(point, _pipeline_definition(kernel, ref).exposed)
    cid = Cid(pl.EXPERIMENT_MODULE, uid)
    if repo.exists(cid):
        current = repo.load_entry(cid).meta
        current.pop("cm_conflicts", None)
        if jmeta.dumps(current) == jmeta.dumps(jmeta.canonical(point)):
            return {"cid": str(cid), "uid": uid, "created": False}
        raise ValidationError(f"{cid} already exists with different content")
    repo.save_entry(pl.EXPERIMENT_MODULE, meta=point, uid=uid)
    return {"cid": str(cid), "uid": uid, "created": True}


def _pipeline_run(params, kernel):
    ref = params.get("def", params.get("pipeline"))
    if ref is None:
        raise ValidationError("missing required parameter: def")
    defn = _pipeline_definition(kernel, ref)
    reps = _int(params, "reps", _int(params, "repetitions"))
    probes = params.get("state_probes", [d.key for d in defn.descriptors("state")])
    if not isinstance(probes, list):
        raise ValidationError("state_probes must be a list")
    bindings = {"choices": _dict(params, "choices", {}), "properties": _dict(params, "properties", {})}
    if "cm_original_cmd" in params:
        cmd = params["cm_original_cmd"]
        defn = pl.PipelineDefinition(
            defn.id,
            tuple(pl.Stage(s.name, s.module, s.action, {**s.params, "cmd": cmd}, s.produces) for s in defn.stages),
            defn.exposed,
            defn.repetitions_default,
        )
    prober = pl.StateProber(_dict(params, "synthetic", {}))
    try:
        point = pl.run(defn, bindings, reps, probes, kernel=kernel, prober=prober)
    except StageFailure as exc:
        where = f" (point {exc.point.ref} marked incomplete)" if exc.point is not None and exc.point.uid else ""
        raise StageFailure(exc.stage, f"{exc.output}{where}") from exc
    return {"cid": point.ref, "uid": point.uid, "point": point.to_meta()}


def synthetic_cpi_pipeline() -> pl.PipelineDefinition:
    """One-stage pipeline around the synthetic CPI generator."""
    return pl.PipelineDefinition(
        "synth-cpi",
        (pl.Stage("cpi", "synth-bench", "cpi", {}, ("cpi", "time_s")),),
        (
            pl.ParamDescriptor.discrete("platform", "property", ("core2", "core2-like", "i5", "i5-like")),
            pl.ParamDescriptor.continuous("N", "property", 1, 1 << 20, 1),
            pl.ParamDescriptor.continuous("seed", "choice", 0, 2**31, 1, default=0),
            pl.ParamDescriptor.continuous("cpi", "characteristic", direction="minimize"),
            pl.ParamDescriptor.continuous("time_s", "characteristic", direction="minimize"),
            pl.ParamDescriptor.discrete("synthetic.frequency_state", "state", ("low", "high")),
        ),
    )


def program_pipeline() -> pl.PipelineDefinition:
    """Compile the bundled kernel with a flag list, then run it."""
    return pl.PipelineDefinition(
        "program",
        (
            pl.Stage("compile", "program", "compile", {}, ("code_size_bytes", "compile_time_s")),
            pl.Stage("execute", "program", "execute", {}, ("wall_time_s", "exit_code")),
        ),
        (
            pl.ParamDescriptor.discrete("flags", "choice", ([], ["-O0"], ["-O1"], ["-O2"], ["-O3"], ["-Os"]), default=[]),
            pl.ParamDescriptor.continuous("N", "property", 1, 4096, 1, default=64),
            pl.ParamDescriptor.continuous("code_size_bytes", "characteristic", direction="minimize"),
            pl.ParamDescriptor.continuous("compile_time_s", "characteristic", direction="minimize"),
            pl.ParamDescriptor.continuous("wall_time_s", "characteristic", direction="minimize"),
            pl.ParamDescriptor.continuous("exit_code", "characteristic"),
            pl.ParamDescriptor.continuous("cpu.frequency_mhz", "state"),
        ),
    )


BUILTIN_PIPELINES = {"synth-cpi": synthetic_cpi_pipeline, "program": program_pipeline}


# -- synth-bench -----------------------------------------------------------


def _lookup(params: Mapping, key: str, default: Any = None) -> Any:
    for section in ("c", "p"):
        block = params.get(section)
        if isinstance(block, dict) and key in block:
            return block[key]
    return params.get(key, default)


def _platform(params, kernel) -> synth.PlatformConfig:
    ref = _lookup(params, "platform")
    if isinstance(ref, dict):
        return synth.PlatformConfig.from_dict(ref)
    if not isinstance(ref, str):
        raise ValidationError("platform is required")
    cfg = synth.load_platform(kernel.repo, ref)
    sigma = _float(params, "noise_sigma")
    if sigma is not None:
        cfg = dataclasses.replace(cfg, noise_sigma=sigma)
    return cfg


def _synth_cpi(params, kernel):
    cfg = _platform(params, kernel)
    n = _lookup(params, "N")
    if isinstance(n, bool) or not isinstance(n, (int, float)) or n < 1 or not float(n).is_integer():
        raise ValidationError("N must be a positive integer")
    seed = _lookup(params, "seed", 0)
    seed = int(seed) + 1_000_003 * int(params.get("repetition", 0))
    value = synth.cpi(cfg, int(n), seed)
    state = params.get("s") or {}
    mult = cfg.frequency_states.get(state.get("synthetic.frequency_state"), 1.0) if cfg.frequency_states else 1.0
    return {"cpi": value, "time_s": value * float(n) ** 3 * 1e-9 * mult}


def _flag_space(params) -> synth.FlagSpace:
    space_cfg = params.get("space")
    if isinstance(space_cfg, dict) and "main" in space_cfg:
        return synth.FlagSpace.from_dict(space_cfg)
    space_cfg = space_cfg or {}
    if not isinstance(space_cfg, dict):
        raise ValidationError("space must be an object")
    return synth.make_flag_space(
        int(space_cfg.get("dims", 16)),
        space_cfg.get("positive", [10.0, 1.0, 0.8, 0.6, 0.5, 0.4]),
        space_cfg.get("negative", [0.7, 0.5]),
        seed=int(space_cfg.get("seed", 0)),
        interaction_scale=float(space_cfg.get("interaction_scale", 0.2)),
    )


def _flag_vector(space: synth.FlagSpace, params) -> list:
    flags = _lookup(params, "flags")
    if flags is None:
        keys = xp.ChoiceSpace.binary(space.arity).keys
        c = params.get("c") or {}
        flags = [c.get(k, params.get(k, 0)) for k in keys]
    if not isinstance(flags, list):
        raise ValidationError("flags must be a list")
    return flags


def _synth_flags(params, kernel):
    space = _flag_space(params)
    return synth.flag_space_eval(space, _flag_vector(space, params), _int(params, "seed"))


def _synth_sweep(params, kernel):
    cfg = _platform(params, kernel)
    sizes = params.get("sizes")
    if sizes is None:
        sizes = list(range(_int(params, "start", 64), _int(params, "stop", 2048) + 1, _int(params, "step", 8)))
    if not isinstance(sizes, list) or not sizes:
        raise ValidationError("sizes must be a non-empty list")
    return {"platform": cfg.name, "points": [list(p) for p in synth.sweep(cfg, sizes, _int(params, "seed"))]}


def _synth_list(params, kernel):
    names = sorted(synth.PRESETS)
    if kernel.repo is not None:
        synth.install_presets(kernel.repo)
        names = sorted({c.entry for c in kernel.repo.list_entries(synth.PLATFORM_MODULE)} | set(names))
    return {"platforms": names, "count": len(names)}


# -- program ---------------------------------------------------------------


def _program_compile(params, kernel):
    source = params.get("source") or str(pl.bundled_kernel())
    flags = _lookup(params, "flags", [])
    if not isinstance(flags, list):
        raise ValidationError("flags must be a list of strings")
    workdir = params.get("workdir") or tempfile.mkdtemp(prefix="cm-build-")
    return pl.compile_stage(source, params.get("template", pl.DEFAULT_TEMPLATE), flags, workdir, params.get("cc"))


def _program_execute(params, kernel):
    prev = params.get("prev") or {}
    binary = params.get("binary") or (prev.get("compile") or {}).get("binary")
    args = params.get("args")
    cmd = params.get("cmd")
    if binary is None and cmd:
        binary, args = cmd[0], cmd[1:] if args is None else args
    if binary is None:
        raise ValidationError("binary is required")
    if args is None:
        n = _lookup(params, "N")
        args = [str(n)] if n is not None else []
    if not isinstance(args, list):
        raise ValidationError("args must be a list")
    return pl.execute_stage(binary, args, _float(params, "timeout_s"))


# -- explore ---------------------------------------------------------------


def _explore_run(kind):
    def action(params, kernel):
        space = _flag_space(params)
        cspace = xp.ChoiceSpace.binary(space.arity)
        budget = _int(params, "budget", 100)
        seed = _int(params, "seed", 0)
        directions = _dict(params, "directions", {"time_s": "minimize", "size_bytes": "minimize"})
        evaluator = lambda cfg: synth.flag_space_eval(space, [cfg[k] for k in cspace.keys], seed)
        if kind == "random":
            result = xp.random_explore(cspace, evaluator, budget, seed, directions)
        else:
            objective = params.get("objective", next(iter(directions)))
            calls = [0]

            def counted(cfg):
                calls[0] += 1
                return evaluator(cfg)

            profile = xp.estimate_importance(
                cspace, counted, _int(params, "probes_per_dim", 2), {k: 0 for k in cspace.keys}, objective, seed
            )
            if calls[0] >= budget:
                raise ValidationError("budget too small for importance probing")
            result = xp.focused_explore(
                cspace, counted, budget - calls[0], seed, profile, _int(params, "refine_every", 10), directions, objective
            )
            result.budget = budget
        report = result.to_report()
        out = {"pareto": report["pareto"], "best": result.best_value(), "evaluations": len(result.points)}
        if kernel.repo is not None:
            cid = kernel.repo.save_entry(xp.EXPLORATION_MODULE, alias=params.get("alias"), meta=report)
            out["cid"] = str(cid)
        return out

    return action


def _explore_pareto(params, kernel):
    points = params.get("points")
    directions = _dict(params, "directions")
    if not isinstance(points, list) or directions is None:
        raise ValidationError("points (list) and directions are required")
    pset = xp.ParetoSet(directions)
    wrapped = [dict(p) for p in points]
    for p in wrapped:
        pset.update(p)
    members = {id(p) for p in pset}
    return {"pareto": [i for i, p in enumerate(wrapped) if id(p) in members]}


# -- learn -----------------------------------------------------------------


def _load_model(kernel, ref) -> tuple[learn.BehaviorModel, Cid]:
    if isinstance(ref, dict):
        return learn.BehaviorModel.from_dict(ref), None
    entry = _repo(kernel).load_entry(_entry_ref("model", ref))
    return learn.BehaviorModel.from_dict(entry.meta), entry.cid


def _store_model(kernel, model, cid, alias=None) -> str | None:
    if kernel.repo is None:
        return None
    if cid is not None:
        alias = cid.entry if not is_uid(cid.entry) else None
        return str(kernel.repo.save_entry("model", alias=alias, meta=model.to_dict(), uid=None if alias else cid.entry))
    return str(kernel.repo.save_entry("model", alias=alias, meta=model.to_dict()))


def _training_points(params, kernel) -> list:
    points = params.get("points")
    if points is not None:
        if not isinstance(points, list):
            raise ValidationError("points must be a list")
        return [tuple(p) if isinstance(p, list) else p for p in points]
    preds = params.get("predicates", [])
    repo = _repo(kernel)
    return [pl.ExperimentPoint.from_meta(e.meta, e.uid) for e in map(repo.load_entry, repo.search(pl.EXPERIMENT_MODULE, preds))]


def _guards(params) -> list[learn.GuardPredicate]:
    raw = params.get("guards", [])
    if not isinstance(raw, list):
        raise ValidationError("guards must be a list")
    return [learn.GuardPredicate.from_dict(g) for g in raw]


def _learn_fit(params, kernel):
    model = learn.fit_model(
        _training_points(params, kernel),
        params["target"],
        params["feature"],
        _int(params, "max_segments", 8),
        _float(params, "tolerance", learn.DEFAULT_TOLERANCE),
        _guards(params),
    )
    return {"cid": _store_model(kernel, model, None, params.get("alias")), "model": model.to_dict()}


def _learn_predict(params, kernel):
    model, _ = _load_model(kernel, params["model"])
    pred = learn.predict(model, _dict(params, "values"))
    return {"value": pred.value, "source": pred.source, "segment": pred.segment}


def _learn_observe(params, kernel):
    model, cid = _load_model(kernel, params["model"])
    point = params["point"]
    model, outlier = learn.observe(model, tuple(point) if isinstance(point, list) else point)
    return {"outlier": outlier, "cid": _store_model(kernel, model, cid), "observations": model.observations}


def _learn_promote(params, kernel):
    model, cid = _load_model(kernel, params["model"])
    model = learn.promote_outliers_to_guard(model, learn.GuardPredicate.from_dict(_dict(params, "predicate")))
    return {"cid": _store_model(kernel, model, cid), "guards": [g.id for g in model.guards]}


def _learn_compact(params, kernel):
    model, _ = _load_model(kernel, params["model"])
    points = _training_points(params, kernel)
    kept = learn.compact(points, model, _float(params, "tolerance"))
    index = {id(p): i for i, p in enumerate(points)}
    return {"retained": [index[id(p)] for p in kept], "count": len(kept), "total": len(points)}


def _learn_advise(params, kernel):
    raw = _dict(params, "candidates")
    if not raw:
        raise ValidationError("candidates must be a non-empty object")
    cands = {}
    for cid, entry in raw.items():
        models = {k: _load_model(kernel, ref)[0] for k, ref in (entry.get("models") or {}).items()}
        cands[cid] = learn.Candidate(dict(entry.get("choices", {})), models)
    return learn.advise(cands, _dict(params, "p", {}), _dict(params, "s", {}), _dict(params, "requirements"))


# -- report / stats / repo -------------------------------------------------


def _report_points(params, kernel) -> tuple[list, dict]:
    repo = _repo(kernel)
    ref = params.get("set", pl.EXPERIMENT_MODULE)
    if ref == pl.EXPERIMENT_MODULE:
        entries = [repo.load_entry(c) for c in repo.search(pl.EXPERIMENT_MODULE, params.get("predicates", []))]
        return [pl.ExperimentPoint.from_meta(e.meta, e.uid) for e in entries], {}
    entry = repo.load_entry(_entry_ref(xp.EXPLORATION_MODULE, ref))
    return [pl.ExperimentPoint.from_meta(m) for m in entry.meta.get("points", [])], entry.meta.get("directions", {})


def _report_render(params, kernel):
    points, directions = _report_points(params, kernel)
    directions = _dict(params, "directions", directions) or {
        k: "minimize" for k in sorted({k for p in points for k in p.b})
    }
    fmt = params.get("format", "json")
    models = [e.meta for e in _repo(kernel).entries("model")] if params.get("models", True) else []
    out = rpt.render(points, fmt, directions, models)
    if fmt == "json":
        return out
    return {"format": fmt, "cm_text": out}


def _stats_summarize(params, kernel):
    samples = params.get("samples")
    if not isinstance(samples, list):
        raise ValidationError("samples must be a list")
    summary = summarize(samples)
    return {**summary.to_dict(), **expected_and_min(summary)}


def _repo_info(params, kernel):
    repo = _repo(kernel)
    return {"path": str(repo.path), "descriptor": repo.descriptor, "modules": repo.modules()}


def _repo_changes(params, kernel):
    since = params.get("since")
    if since is not None and not isinstance(since, str):
        raise ValidationError("since must be a timestamp string")
    records = _repo(kernel).export_records(since)
    cursor = max((r["meta"].get("cm_modified_at", "") for r in records), default=since)
    return {"records": records, "count": len(records), "cursor": cursor}


def _repo_merge_in(params, kernel):
    records = params.get("records")
    if not isinstance(records, list):
        raise ValidationError("records must be a list")
    return _repo(kernel).merge_records(records).to_dict()


def _crowd(direction):
    def action(params, kernel):
        from . import server

        client = server.Client(params["url"], _float(params, "timeout", 30.0))
        repo = _repo(kernel)
        if direction == "pull":
            return server.pull_merge(client, repo).to_dict()
        if direction == "push":
            return server.push_merge(client, repo).to_dict()
        pulled, pushed = server.sync(client, repo)
        return {"pull": pulled.to_dict(), "push": pushed.to_dict()}

    return action


def _list_of(names):
    return lambda params, kernel: {"entries": list(names), "count": len(names)}


def _descriptor(name: str, actions: dict[str, Action], exposed=()) -> ModuleDescriptor:
    return ModuleDescriptor(name, module_uid(name), actions, list(exposed))


def _kernel_actions(params, kernel):
    mod = kernel.module(params["module"])
    if mod is None:
        raise NotFound(f"module {params['module']!r} not found")
    return {"module": mod.name, "uid": mod.uid, "actions": {k: a.doc for k, a in sorted(mod.actions.items())}}


def register_builtins(kernel: Kernel) -> Kernel:
    kernel.register_module(
        _descriptor(
            "kernel",
            {
                "list": Action(lambda p, k: {"entries": k.module_names, "count": len(k.module_names)}),
                "actions": Action(_kernel_actions, ("module",), "actions of one module"),
                "echo": Action(lambda p, k: {"params": p}, doc="return the parameters as received"),
            },
        )
    )
    for name in DATA_MODULES:
        actions = _data_actions(name, _validate_pipeline if name == pl.PIPELINE_MODULE else None)
        if name == pl.EXPERIMENT_MODULE:
            actions["submit"] = Action(_experiment_submit, ("uid", "point"), "validated idempotent insert")
        if name == pl.PIPELINE_MODULE:
            actions["run"] = Action(_pipeline_run, doc="run a pipeline and persist the point")
            actions["builtins"] = Action(_list_of(sorted(BUILTIN_PIPELINES)), doc="bundled pipelines")
        kernel.register_module(_descriptor(name, actions))
    kernel.register_module(
        _descriptor(
            "repo",
            {
                "list": Action(lambda p, k: {"entries": _repo(k).modules(), "count": len(_repo(k).modules())}),
                "info": Action(_repo_info),
                "changes": Action(_repo_changes, doc="records modified at or after `since`"),
                "merge_in": Action(_repo_merge_in, ("records",), "merge exported records"),
            },
        )
    )
    kernel.register_module(
        _descriptor(
            "synth-bench",
            {
                "list": Action(_synth_list),
                "cpi": Action(_synth_cpi, doc="CPI of one (platform, N)"),
                "flags": Action(_synth_flags, doc="time/size of one flag vector"),
                "sweep": Action(_synth_sweep, doc="CPI over a range of N"),
            },
        )
    )
    kernel.register_module(
        _descriptor(
            "program",
            {
                "list": Action(_list_of(["compile", "execute"])),
                "compile": Action(_program_compile),
                "execute": Action(_program_execute),
            },
        )
    )
    kernel.register_module(
        _descriptor(
            "explore",
            {
                "list": Action(lambda p, k: {"entries": [str(c) for c in _repo(k).list_entries(xp.EXPLORATION_MODULE)]}),
                "random": Action(_explore_run("random")),
                "focused": Action(_explore_run("focused")),
                "pareto": Action(_explore_pareto, ("points", "directions")),
            },
        )
    )
    kernel.register_module(
        _descriptor(
            "learn",
            {
                "list": Action(lambda p, k: {"entries": [str(c) for c in _repo(k).list_entries("model")]}),
                "fit": Action(_learn_fit, ("target", "feature")),
                "predict": Action(_learn_predict, ("model", "values")),
                "observe": Action(_learn_observe, ("model", "point")),
                "promote": Action(_learn_promote, ("model", "predicate")),
                "compact": Action(_learn_compact, ("model",)),
                "advise": Action(_learn_advise, ("candidates", "requirements")),
            },
        )
    )
    kernel.register_module(
        _descriptor(
            "report",
            {"list": Action(_list_of(list(rpt.FORMATS))), "render": Action(_report_render)},
        )
    )
    kernel.register_module(
        _descriptor("stats", {"list": Action(_list_of(["summarize"])), "summarize": Action(_stats_summarize, ("samples",))})
    )
    kernel.register_module(
        _descriptor(
            "crowd",
            {
                "list": Action(_list_of(["pull", "push", "sync"])),
                "pull": Action(_crowd("pull"), ("url",), "merge remote changes into the local repository"),
                "push": Action(_crowd("push"), ("url",), "merge local changes into the remote repository"),
                "sync": Action(_crowd("sync"), ("url",), "pull then push"),
            },
        )
    )
    return kernel


def default_kernel(repo: Repository | None = None) -> Kernel:
    return register_builtins(Kernel(repo))
