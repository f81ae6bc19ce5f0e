"""Grasp evaluation: disturbance resistance and contact statistics.

The disturbance test is quasi-static: a grasp resists a direction when the
force QP can balance that external force (residual <= pass_eps) with the
realized contacts. It stands in for a forward-dynamics drop test, so the
pose-drift thresholds in EvalConfig are carried but unused.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .admm import GraspCandidate
from .hand import HandModel, HandState, forward_kinematics
from .mesh import TriMesh, project_points
from .quality import QualityConfig, QualityError, evaluate_quality
from .quasistatic import CollisionScene

DISTURBANCE_NOTE = "quasi-static force-closure test (force QP feasibility), not a dynamic simulation"


@dataclass
class EvalConfig:
    mu: float = 0.6
    torsional_mu: float = 0.02
    disturbance: float = 1.0
    pass_eps: float = 1e-4
    lambda_min: float = 0.1
    pyramid_edges: int = 8
    translation_threshold: float = 0.05  # m, kept for a dynamic backend
    rotation_threshold: float = 15.0  # degrees, kept for a dynamic backend
    contact_threshold: float = 2e-3  # m
    engaged_threshold: float = 5e-3  # m

    def __post_init__(self):
        for name in ("mu", "pass_eps", "lambda_min", "translation_threshold", "rotation_threshold", "contact_threshold", "engaged_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"EvalConfig.{name} must be positive")
        if self.disturbance < 0 or self.torsional_mu < 0:
            raise ValueError("disturbance and torsional_mu must be non-negative")

    def quality(self, g=None) -> QualityConfig:
        return QualityConfig(
            mu=self.mu,
            lambda_min=self.lambda_min,
            g=np.zeros(6) if g is None else g,
            pyramid_edges=self.pyramid_edges,
            torsional_mu=self.torsional_mu,
            tol=1e-8,
            max_iter=20000,
        )


@dataclass
class EvalReport:
    success: bool
    passes: list  # six flags: +x, -x, +y, -y, +z, -z
    residuals: list
    cdc: float  # mm
    cln: int
    pd: float  # mm
    n_contacts: int = 0


@dataclass
class BatchStats:
    gsr: float  # %
    osr: float  # %
    div: float  # %, None when undefined
    cdc: float  # mm, mean over successes
    cln: float
    pd: float
    attempts: int
    successes: int
    objects: int
    objects_with_success: int
    per_object: dict = field(default_factory=dict)


def disturbance_wrenches(magnitude):
    out = []
    for k in range(3):
        for s in (1.0, -1.0):
            g = np.zeros(6)
            g[k] = s * magnitude
            out.append(g)
    return out


def realized_contacts(candidate: GraspCandidate, mesh: TriMesh, threshold=2e-3):
    """Surface points under the hand contact points that lie within ``threshold``.

    The hand points are projected rather than taking the optimizer's object
    points, so a target the hand never reached (rho = 0) does not count.
    """
    if candidate.contacts is None:
        return []
    proj = project_points(mesh, candidate.contacts.hand_points)
    return [p for p in proj if p.distance <= threshold]


def wrench_resistance_test(points, config: EvalConfig = None):
    """Per-direction pass flags and residuals for a list of object SurfacePoints."""
    config = config or EvalConfig()
    passes, residuals = [], []
    warm = None
    for g in disturbance_wrenches(config.disturbance):
        if not points or config.lambda_min > len(points):
            passes.append(False)
            residuals.append(float("inf"))
            continue
        try:
            res = evaluate_quality(points, config.quality(g), warm)
        except QualityError:
            passes.append(False)
            residuals.append(float("inf"))
            continue
        warm = res
        residuals.append(res.e)
        passes.append(bool(res.e <= config.pass_eps))
    return passes, residuals


def _link_distances(model: HandModel, state: HandState, mesh: TriMesh, scene: CollisionScene, reach=0.01):
    """Minimum signed distance from each link's samples to the object (inf beyond ``reach``)."""
    T = forward_kinematics(model, state)
    lo, hi = mesh.bounds[0] - reach, mesh.bounds[1] + reach
    out = np.full(len(model.links), np.inf)
    for i, Ti in enumerate(T):
        pts = scene.link_samples[i] @ Ti[:3, :3].T + Ti[:3, 3]
        pts = pts @ scene.inv_pose[:3, :3].T + scene.inv_pose[:3, 3]
        near = np.all((pts >= lo) & (pts <= hi), axis=1)
        if np.any(near):
            sd, _, _ = mesh.signed_distances(pts[near])
            out[i] = float(sd.min())
    return out


def contact_metrics(candidate: GraspCandidate, model: HandModel, mesh: TriMesh, scene: CollisionScene = None, config: EvalConfig = None):
    """(CDC mm, CLN count, PD mm) for the candidate's final hand pose.

    A finger's distance is the minimum signed distance over its links'
    surface samples; CDC spans the fingers within ``engaged_threshold``.
    PD is the larger of the hand-object and self-collision depths.
    """
    config = config or EvalConfig()
    scene = scene or CollisionScene(model, mesh)
    d = _link_distances(model, candidate.state, mesh, scene)
    finger_d = [min(d[i] for i in model.finger_links(f)) for f in model.fingers]
    engaged = [x for x in finger_d if x <= config.engaged_threshold]
    cdc = 1000.0 * (max(engaged) - min(engaged)) if engaged else 0.0
    cln = int(np.sum(d <= config.contact_threshold))
    pd = max(scene.penetration_mm(candidate.state))
    return cdc, cln, pd


def evaluate_candidate(candidate: GraspCandidate, model, mesh, scene=None, config: EvalConfig = None) -> EvalReport:
    config = config or EvalConfig()
    points = realized_contacts(candidate, mesh, config.contact_threshold)
    passes, residuals = wrench_resistance_test(points, config)
    cdc, cln, pd = contact_metrics(candidate, model, mesh, scene, config)
    return EvalReport(all(passes), passes, residuals, cdc, cln, pd, len(points))


# ------------------------------------------------------------------- batches


def pose_features(states):
    """Rows of [position, rotation vector relative to the mean rotation, joints]."""
    q = np.array([s.q for s in states])
    rots = Rotation.from_quat(q[:, 3:7], scalar_first=True)
    mean = rots.mean()
    tangent = (mean.inv() * rots).as_rotvec()
    return np.hstack([q[:, :3], tangent, q[:, 7:]])


def principal_share(X):
    """Share (%) of the total variance of rows ``X`` along the first principal axis."""
    X = np.asarray(X, dtype=float)
    if len(X) < 2:
        return None
    X = X - X.mean(axis=0)
    ev = np.linalg.eigvalsh(X.T @ X / (len(X) - 1))
    total = float(ev.sum())
    if not total > 1e-24:
        return None
    return 100.0 * float(ev[-1]) / total


def diversity(states):
    """Principal share of the pose features; None if undefined (< 2 poses or no spread)."""
    if len(states) < 2:
        return None
    return principal_share(pose_features(states))


def batch_stats(records, states_by_hand=None) -> BatchStats:
    """Aggregate per-attempt outcomes.

    ``records`` are dicts with at least ``object`` and ``success`` and, for
    successes, ``cdc``, ``cln`` and ``pd``. Div is the mean over hands of
    the per-hand diversity of successful poses.
    """
    attempts = len(records)
    objects = sorted({r["object"] for r in records})
    wins = [r for r in records if r["success"]]
    per_object = {o: sum(1 for r in wins if r["object"] == o) for o in objects}
    with_success = sum(1 for o in objects if per_object[o] > 0)
    divs = [d for d in (diversity(v) for v in (states_by_hand or {}).values()) if d is not None]

    def mean(key):
        return float(np.mean([r[key] for r in wins])) if wins else None

    return BatchStats(
        gsr=100.0 * len(wins) / attempts if attempts else 0.0,
        osr=100.0 * with_success / len(objects) if objects else 0.0,
        div=float(np.mean(divs)) if divs else None,
        cdc=mean("cdc"),
        cln=mean("cln"),
        pd=mean("pd"),
        attempts=attempts,
        successes=len(wins),
        objects=len(objects),
        objects_with_success=with_success,
        per_object=per_object,
    )
