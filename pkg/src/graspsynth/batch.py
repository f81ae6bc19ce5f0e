"""Batch runs: configuration, synthesis, ablation and friction sweeps, scene export.

Every attempt is keyed by (object index, template index, attempt index) and
seeded with ``SeedSequence([seed, object, template, attempt])``, so results
do not depend on the worker count or on which other attempts run. Records
are written one JSON file per attempt with full round-trip floats.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admm import FAILED, AdmmConfig, FilterThresholds, GraspCandidate, post_filter, refine
from .contacts import ContactSet
from .evaluation import DISTURBANCE_NOTE, EvalConfig, batch_stats, evaluate_candidate, realized_contacts, wrench_resistance_test
from .hand import HandError, HandState, LinkContact, forward_kinematics
from .mesh import MeshError, load_mesh, write_obj
from .poseinit import TemplateError, initial_pose, load_template
from .quality import QualityConfig
from .quasistatic import CollisionScene, SimConfig, hand_points_world

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1
log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# -------------------------------------------------------------------- config


@dataclass
class RunConfig:
    objects: list  # Path per object mesh
    templates: list  # Path per template
    attempts: int = 100
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    filter: FilterThresholds = field(default_factory=FilterThresholds)
    out: Path = Path("runs/out")
    seed: int = 0
    workers: int = 1
    hand: Path = None  # optional; every template must then use this hand

    def __post_init__(self):
        if self.attempts < 1:
            raise ConfigError("attempts must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not self.objects or not self.templates:
            raise ConfigError("need at least one object and one template")
        self.objects = [Path(p) for p in self.objects]
        self.templates = [Path(p) for p in self.templates]
        missing = [str(p) for p in self.objects + self.templates if not p.exists()]
        if self.hand is not None:
            self.hand = Path(self.hand)
            if not self.hand.exists():
                missing.append(str(self.hand))
        if missing:
            raise ConfigError("missing input files: " + ", ".join(missing))

    def with_rho(self, rho) -> "RunConfig":
        return dataclasses.replace(self, admm=dataclasses.replace(self.admm, rho=float(rho)))


def _section(doc, name, cls, **extra):
    raw = dict(doc.get(name, {}))
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {unknown}")
    raw.update(extra)
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def load_run_config(path, **overrides) -> RunConfig:
    """Read a TOML run configuration; relative paths resolve against its directory.

    ``overrides`` replace top-level keys (seed, workers, out) when not None.
    """
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    known = {"seed", "attempts", "workers", "out", "objects", "templates", "hand", "admm", "quality", "sim", "eval", "filter"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    quality = _section(doc, "quality", QualityConfig)
    sim = _section(doc, "sim", SimConfig)
    admm = _section(doc, "admm", AdmmConfig, quality=quality, sim=sim)
    top = {k: doc[k] for k in ("seed", "attempts", "workers", "out") if k in doc}
    top.update({k: v for k, v in overrides.items() if v is not None})
    # a config-file output path is relative to the file, a command-line one to the cwd
    from_cli = overrides.get("out") is not None
    out = Path(top.pop("out", "runs/out"))
    if not (from_cli or out.is_absolute()):
        out = base / out
    try:
        return RunConfig(
            objects=[(base / p).resolve() for p in doc.get("objects", [])],
            templates=[(base / p).resolve() for p in doc.get("templates", [])],
            admm=admm,
            eval=_section(doc, "eval", EvalConfig),
            filter=_section(doc, "filter", FilterThresholds),
            out=out,
            hand=(base / doc["hand"]).resolve() if "hand" in doc else None,
            **top,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ------------------------------------------------------------------ records


def _clean(x):
    """JSON-ready copy: arrays to lists, non-finite floats to None."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(record) -> str:
    # json writes floats with repr, which round-trips exactly
    return json.dumps(_clean(record), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _contacts_record(model, contacts: ContactSet):
    if contacts is None:
        return []
    out = []
    for p, h, hp, lam in zip(contacts.object_points, contacts.hand, contacts.hand_points, contacts.duals):
        out.append(
            {
                "link": model.links[h.link].name,
                "local_point": h.local_point,
                "local_normal": h.local_normal,
                "hand_point": hp,
                "object_point": p.position,
                "object_normal": p.normal,
                "face": int(p.face),
                "bary": p.bary,
                "dual": lam,
            }
        )
    return out


def contacts_from_record(model, mesh, rec) -> ContactSet:
    """Rebuild the final ContactSet of a record (hand points from the stored pose)."""
    state = HandState(np.array(rec["q"], dtype=float))
    hand = [LinkContact(model.link_index(c["link"]), np.array(c["local_point"]), np.array(c["local_normal"])) for c in rec["contacts"]]
    pts, nrm = hand_points_world(forward_kinematics(model, state), hand)
    po = [mesh.surface_point(c["face"], np.array(c["bary"])) for c in rec["contacts"]]
    return ContactSet(po, hand, pts, nrm, np.array([c["dual"] for c in rec["contacts"]]).reshape(-1, 3))


def record_path(out: Path, key) -> Path:
    o, t, a = key
    return Path(out) / "records" / f"{o:03d}_{t:03d}_{a:05d}.json"


# ------------------------------------------------------------------ attempts


class _Assets:
    """Meshes, hands, templates and collision scenes, loaded once per process."""

    def __init__(self, config: RunConfig):
        self.meshes = [load_mesh(p) for p in config.objects]
        self.templates = []
        models = {}
        for p in config.templates:
            tmpl, model = load_template(p, None)
            if config.hand is not None and tmpl.hand_path != config.hand.resolve():
                raise ConfigError(f"template {p} uses hand {tmpl.hand_path}, config requires {config.hand}")
            # templates on the same hand share one model (and one collision scene per object)
            model = models.setdefault(tmpl.hand_path, model)
            self.templates.append((tmpl, model))
        self._scenes = {}

    def scene(self, o, t):
        model = self.templates[t][1]
        key = (o, id(model))
        if key not in self._scenes:
            self._scenes[key] = CollisionScene(model, self.meshes[o])
        return self._scenes[key]


def attempt_seed(seed, key):
    return np.random.SeedSequence([int(seed), *map(int, key)])


def run_attempt(assets: _Assets, config: RunConfig, key, rhos, log_dir=None):
    """Init once, then refine / filter / evaluate for each penalty in ``rhos``.

    Returns one record per rho. Exceptions inside the pipeline become
    records with status "error"; they never escape.
    """
    o, t, a = key
    tmpl, model = assets.templates[t]
    mesh = assets.meshes[o]
    base = {
        "schema_version": SCHEMA_VERSION,
        "object": config.objects[o].stem,
        "object_path": str(config.objects[o]),
        "template": tmpl.name,
        "template_path": str(config.templates[t]),
        "hand": model.name,
        "key": list(key),
        "seed": int(config.seed),
    }
    try:
        scene = assets.scene(o, t)
        init = initial_pose(tmpl, model, mesh, scene, np.random.default_rng(attempt_seed(config.seed, key)))
    except Exception as exc:  # noqa: BLE001 - crash isolation
        return [dict(base, rho=float(r), status="error", reason=repr(exc), accepted=False, success=False) for r in rhos]
    base.update(
        init_q=init.state.q,
        init_contact=init.contact,
        init_face=init.face,
        init_angle=init.angle,
        init_penetration=init.penetration,
        init_self_penetration=init.self_penetration,
    )
    out = []
    for rho in rhos:
        rec = dict(base, rho=float(rho))
        if not init.kept:
            rec.update(status="prefiltered", reason="initial penetration", accepted=False, success=False)
            out.append(rec)
            continue
        try:
            cfg = dataclasses.replace(config.admm, rho=float(rho))
            fh = None
            if log_dir is not None:
                Path(log_dir).mkdir(parents=True, exist_ok=True)
                fh = open(Path(log_dir) / f"{o:03d}_{t:03d}_{a:05d}_rho{rho:g}.jsonl", "w")
            try:
                cand = refine(model, init.state, tmpl, mesh, cfg, scene, log=fh)
            finally:
                if fh is not None:
                    fh.close()
            accepted, reasons = post_filter(cand, mesh, config.filter)
            rec.update(
                status=cand.status,
                reason=cand.reason,
                filter_reasons=reasons,
                accepted=accepted,
                e=cand.e,
                iterations=cand.iterations,
                penetration=cand.penetration,
                q=cand.state.q,
                start_q=cand.init_state.q if cand.init_state is not None else None,
                q_unchanged=cand.init_state is not None and cand.state.q.tobytes() == cand.init_state.q.tobytes(),
                contacts=_contacts_record(model, cand.contacts),
                max_dual=max((h["dual"] for h in cand.history), default=0.0),
                max_pd=max((h["pd"] for h in cand.history), default=cand.penetration),
            )
            if accepted:
                rep = evaluate_candidate(cand, model, mesh, scene, config.eval)
                rec.update(success=rep.success, passes=rep.passes, residuals=rep.residuals, cdc=rep.cdc, cln=rep.cln, pd=rep.pd, n_contacts=rep.n_contacts)
            else:
                rec.update(success=False)
        except Exception as exc:  # noqa: BLE001 - crash isolation
            rec.update(status="error", reason=repr(exc), accepted=False, success=False)
        out.append(rec)
    return out


# --------------------------------------------------------------------- pool

_WORKER = {}


def _worker_init(config):
    _WORKER["config"] = config
    _WORKER["assets"] = _Assets(config)


def _worker_run(args):
    key, rhos, log_dir = args
    return key, run_attempt(_WORKER["assets"], _WORKER["config"], key, rhos, log_dir)


def _keys(config: RunConfig):
    return [(o, t, a) for o in range(len(config.objects)) for t in range(len(config.templates)) for a in range(config.attempts)]


def _run(config: RunConfig, rhos, on_records, log_dir=None):
    keys = _keys(config)
    jobs = [(k, rhos, log_dir) for k in keys]
    if config.workers == 1:
        assets = _Assets(config)
        for k, _, _ in jobs:
            on_records(k, run_attempt(assets, config, k, rhos, log_dir))
    else:
        with ProcessPoolExecutor(config.workers, initializer=_worker_init, initargs=(config,)) as pool:
            for k, recs in pool.map(_worker_run, jobs, chunksize=4):
                on_records(k, recs)


def _rho_dir(out, rho):
    return Path(out) / f"rho_{'inf' if math.isinf(rho) else format(rho, 'g')}"


def _stats_dict(records, states_by_hand=None):
    st = batch_stats(records, states_by_hand)
    return dataclasses.asdict(st)


def _states_by_hand(records):
    by = {}
    for r in records:
        if r.get("success"):
            by.setdefault(r["hand"], []).append(HandState(np.array(r["q"], dtype=float)))
    return by


def summarize(records, rho=None):
    ok = [r for r in records if r.get("status") not in ("error", "prefiltered")]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "note": DISTURBANCE_NOTE,
        "rho": rho,
        "stats": _stats_dict(records, _states_by_hand(records)),
        "accepted": sum(bool(r.get("accepted")) for r in records),
        "prefiltered": sum(r.get("status") == "prefiltered" for r in records),
        "errors": sum(r.get("status") == "error" for r in records),
        "failed": sum(r.get("status") == FAILED for r in records),
        "q_unchanged": 100.0 * sum(bool(r.get("q_unchanged")) for r in ok) / len(ok) if ok else None,
        "median_e_accepted": float(np.median([r["e"] for r in records if r.get("accepted")])) if any(r.get("accepted") for r in records) else None,
    }
    return summary


@dataclass
class BatchResult:
    out: Path
    records: list
    summary: dict


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_synthesis_multi(config: RunConfig, rhos, out=None, verbose=False):
    """Synthesis for several penalties sharing each attempt's initialization.

    Writes ``<out>/rho_<value>/records/*.json`` and a summary per rho (or
    directly under ``out`` when a single rho is given). Returns
    ``{rho: BatchResult}``.
    """
    out = Path(out or config.out)
    rhos = [float(r) for r in rhos]
    dirs = {r: (out if len(rhos) == 1 else _rho_dir(out, r)) for r in rhos}
    collected = {r: [] for r in rhos}
    log_dir = out / "logs" if verbose else None

    def on_records(key, recs):
        for r, rec in zip(rhos, recs):
            text = dumps(rec)
            _write(record_path(dirs[r], key), text)
            # keep the stored form in memory so callers see exactly what is on disk
            collected[r].append(json.loads(text))
        log.debug("attempt %s: %s", key, [(r["status"], r.get("success")) for r in recs])

    _run(config, rhos, on_records, log_dir)
    results = {}
    for r in rhos:
        recs = sorted(collected[r], key=lambda x: x["key"])
        summary = summarize(recs, r)
        _write(dirs[r] / "summary.json", dumps(summary))
        results[r] = BatchResult(dirs[r], recs, summary)
    return results


def run_synthesis(config: RunConfig, out=None, verbose=False) -> BatchResult:
    """One record per (object, template, attempt) plus ``summary.json``."""
    return run_synthesis_multi(config, [config.admm.rho], out, verbose)[float(config.admm.rho)]


def run_ablation(config: RunConfig, rho_values, out=None, verbose=False):
    """Repeat synthesis per rho with shared seeds and initializations.

    Returns table rows ``{rho, gsr, osr, cdc, pd, accepted, q_unchanged}``
    and writes ``ablation.json``.
    """
    if not rho_values:
        raise ConfigError("empty rho list")
    results = run_synthesis_multi(config, rho_values, out, verbose)
    rows = []
    for r, res in results.items():
        st = res.summary["stats"]
        rows.append(
            {
                "rho": r,
                "gsr": st["gsr"],
                "osr": st["osr"],
                "cdc": st["cdc"],
                "pd": st["pd"],
                "accepted": res.summary["accepted"],
                "successes": st["successes"],
                "q_unchanged": res.summary["q_unchanged"],
                "median_e_accepted": res.summary["median_e_accepted"],
            }
        )
    _write(Path(out or config.out) / "ablation.json", dumps({"schema_version": SCHEMA_VERSION, "note": DISTURBANCE_NOTE, "rows": rows}))
    return rows, results


def load_records(run_dir):
    return [json.loads(p.read_text()) for p in sorted((Path(run_dir) / "records").glob("*.json"))]


def evaluate_records(records, eval_config: EvalConfig, cache=None):
    """Re-run the six-direction test on stored accepted grasps.

    Returns a list of ``(record, success)``; non-accepted records fail.
    """
    cache = {} if cache is None else cache
    out = []
    for rec in records:
        if not rec.get("accepted"):
            out.append((rec, False))
            continue
        if rec["object_path"] not in cache:
            cache[rec["object_path"]] = load_mesh(rec["object_path"])
        mesh = cache[rec["object_path"]]
        key = ("tmpl", rec["template_path"])
        if key not in cache:
            cache[key] = load_template(rec["template_path"])[1]
        model = cache[key]
        contacts = contacts_from_record(model, mesh, rec)
        cand = GraspCandidate(HandState(np.array(rec["q"], dtype=float)), contacts, rec["e"], rec["iterations"], rec["status"])
        passes, _ = wrench_resistance_test(realized_contacts(cand, mesh, eval_config.contact_threshold), eval_config)
        out.append((rec, all(passes)))
    return out


def friction_table(records, mu_values, eval_config: EvalConfig):
    """GSR / OSR / per-object successes of fixed grasps at each tangential mu."""
    if not mu_values:
        raise ConfigError("empty mu list")
    rows = []
    cache = {}
    for mu in mu_values:
        cfg = dataclasses.replace(eval_config, mu=float(mu))
        flags = evaluate_records(records, cfg, cache)
        st = batch_stats([dict(r, success=ok) for r, ok in flags])
        rows.append({"mu": float(mu), "gsr": st.gsr, "osr": st.osr, "successes": st.successes, "per_object": st.per_object})
    return rows


def run_friction_sweep(config: RunConfig, mu_values, rho_values=None, out=None, resynthesize=False, verbose=False):
    """Evaluate fixed grasps over ``mu_values`` for each rho.

    Grasps come from one synthesis per rho (shared initializations). With
    ``resynthesize`` each mu also gets its own synthesis whose metric uses
    that mu, evaluated at the same mu. Writes ``sweep.json``.
    """
    if not mu_values:
        raise ConfigError("empty mu list")
    rho_values = [config.admm.rho] if not rho_values else rho_values
    out = Path(out or config.out)
    table = {"schema_version": SCHEMA_VERSION, "note": DISTURBANCE_NOTE, "fixed": {}, "resynthesized": {}}
    results = run_synthesis_multi(config, rho_values, out / "fixed", verbose)
    for r, res in results.items():
        table["fixed"][_rho_key(r)] = friction_table(res.records, mu_values, config.eval)
    if resynthesize:
        for mu in mu_values:
            cfg = dataclasses.replace(
                config,
                admm=dataclasses.replace(config.admm, quality=dataclasses.replace(config.admm.quality, mu=float(mu))),
                eval=dataclasses.replace(config.eval, mu=float(mu)),
            )
            res = run_synthesis_multi(cfg, rho_values, out / f"mu_{mu:g}", verbose)
            for r, rr in res.items():
                st = rr.summary["stats"]
                table["resynthesized"].setdefault(_rho_key(r), []).append(
                    {"mu": float(mu), "gsr": st["gsr"], "osr": st["osr"], "accepted": rr.summary["accepted"], "per_object": st["per_object"]}
                )
    _write(out / "sweep.json", dumps(table))
    return table


def _rho_key(r):
    return "inf" if math.isinf(r) else format(r, "g")


# ------------------------------------------------------------------- export


def _marker(center, radius):
    v = np.concatenate([np.eye(3), -np.eye(3)]) * radius + center
    f = np.array([[0, 1, 2], [1, 3, 2], [3, 4, 2], [4, 0, 2], [1, 0, 5], [3, 1, 5], [4, 3, 5], [0, 4, 5]])
    return v, f


def export_scene(record_path, out_path, marker_radius=1e-3):
    """Object, posed hand links and contact markers (octahedra centred on p^o) as one OBJ."""
    record_path = Path(record_path)
    if not record_path.exists():
        raise FileNotFoundError(f"record not found: {record_path}")
    rec = json.loads(record_path.read_text())
    if rec.get("q") is None:
        raise ValueError(f"record {record_path} has no final pose (status {rec.get('status')!r})")
    mesh = load_mesh(rec["object_path"])
    _, model = load_template(rec["template_path"])
    T = forward_kinematics(model, HandState(np.array(rec["q"], dtype=float)))
    groups = [("object", mesh.vertices, mesh.faces)]
    for link, Ti in zip(model.links, T):
        groups.append((f"link_{link.name}", link.mesh.vertices @ Ti[:3, :3].T + Ti[:3, 3], link.mesh.faces))
    for i, c in enumerate(rec.get("contacts", [])):
        v, f = _marker(np.array(c["object_point"]), marker_radius)
        groups.append((f"contact_{i}", v, f))
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_obj(out_path, groups)
    return Path(out_path)


__all__ = [
    "ConfigError",
    "RunConfig",
    "BatchResult",
    "load_run_config",
    "run_synthesis",
    "run_synthesis_multi",
    "run_ablation",
    "run_friction_sweep",
    "friction_table",
    "evaluate_records",
    "load_records",
    "export_scene",
    "HandError",
    "MeshError",
    "TemplateError",
]
