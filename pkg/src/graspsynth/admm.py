"""Alternating refinement of object contact targets and hand pose.

The coupled problem ``min e(p^o)`` subject to the hand points touching the
object points (p^h = p^o) is split with a scaled augmented Lagrangian::

    L = e(p^o) + rho/2 * sum_i ||p^h_i - p^o_i + lambda_i||^2

Each iteration takes one projected gradient step on the object points,
advances the hand toward p^o - lambda with the quasi-static stepper, and
updates the duals. A dual whose norm exceeds the annealing threshold is
reset to zero.

``rho = 0`` leaves the hand untouched and only optimizes the metric;
``rho = inf`` drops the metric and snaps object points to the projections
of the (dual-shifted) hand points, which is plain kinematic matching.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .contacts import ContactSet
from .hand import HandModel, HandState, forward_kinematics
from .mesh import TriMesh, project_points
from .poseinit import GraspTemplate
from .quality import QualityConfig, QualityError, QualityResult, evaluate_quality, quality_gradient
from .quasistatic import CollisionScene, SimConfig, hand_points_world, resolve_collisions, step

CONVERGED = "converged"
MAX_ITER = "max-iter"
FAILED = "failed"


class AdmmError(RuntimeError):
    pass


@dataclass
class AdmmConfig:
    rho: float = 1e3
    alpha: float = 1e-3  # m per unit gradient
    K: int = 100
    anneal_threshold: float = 2e-2  # m
    convergence_eps: float = 1e-4  # m
    metric_eps: float = 1e-6
    patience: int = 3
    grad_clip: float = 10.0
    init_max_distance: float = 0.05  # m
    quality: QualityConfig = field(default_factory=QualityConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError("rho must be non-negative (inf selects kinematic matching)")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not (self.alpha > 0 and self.anneal_threshold > 0 and self.convergence_eps > 0):
            raise ValueError("alpha, anneal_threshold and convergence_eps must be positive")

    @property
    def kinematic_only(self) -> bool:
        return math.isinf(self.rho)


@dataclass
class FilterThresholds:
    e_max: float = 0.05
    pd_max: float = 0.1  # mm
    contact_max: float = 2e-3  # m


@dataclass
class GraspCandidate:
    state: HandState
    contacts: ContactSet
    e: float
    iterations: int
    status: str
    penetration: float = 0.0  # mm, max of hand-object and self-collision
    reason: str = ""
    init_state: HandState = None
    history: list = field(default_factory=list, repr=False)
    quality: QualityResult = field(default=None, repr=False)


# ----------------------------------------------------------------- sub-steps


def initialize_contacts(model: HandModel, state: HandState, template: GraspTemplate, mesh: TriMesh, max_distance=0.05) -> ContactSet:
    """Hand points from the template, object points at their nearest surface points, zero duals."""
    T = forward_kinematics(model, state)
    pts, nrm = hand_points_world(T, template.contacts)
    po = project_points(mesh, pts)
    far = [i for i, p in enumerate(po) if p.distance > max_distance]
    if far:
        raise AdmmError(f"contacts {far} are more than {max_distance} m from the surface")
    return ContactSet(po, list(template.contacts), pts, nrm)


def object_step(contacts: ContactSet, mesh: TriMesh, config: AdmmConfig, result: QualityResult = None) -> ContactSet:
    """One projected gradient step on the object points.

    ``result`` is the metric evaluation at the current object points; it is
    only needed (and computed if missing) when the metric term is active.
    """
    if config.kinematic_only:
        return contacts.with_object(project_points(mesh, contacts.hand_points + contacts.duals))
    po = contacts.po
    grad = quality_gradient(mesh, contacts.object_points, config.quality, result)
    if config.rho > 0:
        grad -= config.rho * (contacts.hand_points - po + contacts.duals)
    if not np.all(np.isfinite(grad)):
        raise AdmmError("non-finite object-point gradient")
    norms = np.linalg.norm(grad, axis=1, keepdims=True)
    grad = np.where(norms > config.grad_clip, grad * (config.grad_clip / np.maximum(norms, 1e-300)), grad)
    return contacts.with_object(project_points(mesh, po - config.alpha * grad))


def hand_step(model: HandModel, state: HandState, contacts: ContactSet, scene: CollisionScene, config: AdmmConfig, log=None):
    """Move the hand toward p^o - lambda. Returns ``(state, contacts, step_result)``.

    With rho = 0 the penalty exerts no force, so nothing moves.
    """
    if config.rho == 0:
        return state, contacts, None
    res = step(model, state, scene, contacts, config.sim, log)
    return res.state, res.contacts, res


def dual_step(contacts: ContactSet, config: AdmmConfig) -> ContactSet:
    """lambda += p^h - p^o, then reset any lambda_i longer than the threshold."""
    out = contacts.copy()
    lam = out.duals + (out.hand_points - out.po)
    lam[np.linalg.norm(lam, axis=1) > config.anneal_threshold] = 0.0
    out.duals = lam
    return out


def _metric(contacts, config, warm=None):
    return evaluate_quality(contacts.object_points, config.quality, warm)


# -------------------------------------------------------------------- refine


def refine(
    model: HandModel,
    init_state: HandState,
    template: GraspTemplate,
    mesh: TriMesh,
    config: AdmmConfig = None,
    scene: CollisionScene = None,
    log=None,
    on_iterate=None,
) -> GraspCandidate:
    """Run the alternating loop from a pose-init state.

    The initial state is first cleared of residual penetration (pose-init
    tolerates up to 2 mm); iterations start from that settled state.
    ``log`` receives one JSON line per iteration; ``on_iterate(it, state,
    contacts, step_result)`` is called after every dual update.
    """
    config = config or AdmmConfig()
    scene = scene or CollisionScene(model, mesh)
    state, pen, ok = resolve_collisions(model, init_state, scene, config.sim)
    if not ok:
        return GraspCandidate(init_state, None, math.inf, 0, FAILED, 1000.0 * pen.max_depth, "initial penetration", init_state)
    start = state
    pd = 1000.0 * pen.max_depth
    try:
        contacts = initialize_contacts(model, state, template, mesh, config.init_max_distance)
        qres = _metric(contacts, config)
    except (AdmmError, QualityError) as exc:
        return GraspCandidate(state, None, math.inf, 0, FAILED, pd, str(exc), start)
    history = []
    streak = 0
    status = MAX_ITER
    it = 0
    for it in range(1, config.K + 1):
        try:
            contacts = object_step(contacts, mesh, config, qres)
            state, contacts, sres = hand_step(model, state, contacts, scene, config, None)
            if sres is not None:
                pd = sres.max_penetration
                if sres.failed:
                    raise AdmmError("hand step could not clear penetration")
            contacts = dual_step(contacts, config)
            e_prev = qres.e
            qres = _metric(contacts, config, qres)
        except (AdmmError, QualityError) as exc:
            return GraspCandidate(state, contacts, math.inf, it, FAILED, pd, str(exc), start, history)
        gap = contacts.max_gap()
        rec = {
            "iter": it,
            "e": qres.e,
            "gap": gap,
            "dual": float(np.max(np.linalg.norm(contacts.duals, axis=1))),
            "pd": pd,
        }
        history.append(rec)
        if log is not None:
            log.write(json.dumps(rec) + "\n")
        if on_iterate is not None:
            on_iterate(it, state, contacts, sres)
        streak = streak + 1 if gap < config.convergence_eps and abs(qres.e - e_prev) < config.metric_eps else 0
        if streak >= config.patience:
            status = CONVERGED
            break
    final = _metric(contacts, config)
    return GraspCandidate(state, contacts, final.e, it, status, pd, "", start, history, final)


# -------------------------------------------------------------------- filter


def contact_distances(contacts: ContactSet, mesh: TriMesh):
    """Unsigned distance from each hand contact point to the object surface."""
    _, _, _, dist, _ = mesh.closest(contacts.hand_points)
    return dist


def post_filter(candidate: GraspCandidate, mesh: TriMesh, thresholds: FilterThresholds = None):
    """Accept iff metric, penetration and contact-distance thresholds all hold.

    Returns ``(accepted, reasons)`` with reasons drawn from "failed",
    "metric", "penetration" and "contact requirement".
    """
    th = thresholds or FilterThresholds()
    if candidate.status == FAILED or candidate.contacts is None:
        return False, ["failed"]
    reasons = []
    if not candidate.e <= th.e_max:
        reasons.append("metric")
    if not candidate.penetration <= th.pd_max:
        reasons.append("penetration")
    if np.any(contact_distances(candidate.contacts, mesh) > th.contact_max):
        reasons.append("contact requirement")
    return not reasons, reasons
