"""Penetration-free quasi-static hand integrator.

Virtual springs pull each hand contact p^h toward its target p^o - lambda;
the spring forces are mapped to generalized forces through the transposed
contact Jacobians and integrated with first-order (inertia-free) damping.
After every substep penetrations against the object and between declared
link pairs are removed by position projection.

The damped update is linearly implicit,
``(D + dt k_f sum J^T J) dq = dt tau``, with a backtracking guard, so it
stays stable for any dt * k_f / damping; the explicit update is only stable
below 2, which the default parameters sit exactly on.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .contacts import ContactSet
from .hand import (
    HandModel,
    HandState,
    clamp_to_limits,
    contact_world,
    forward_kinematics,
    integrate,
    point_jacobians,
    project_to_link_surface,
)
from .mesh import DEFAULT_SAMPLES, TriMesh
from .transforms import invert_pose, transform_points

LINK_SAMPLE_SPACING = 1.5e-3  # m between blue-noise samples on hand links
ROWS_PER_GROUP = 16
REST_DEPTH = 0.4  # fraction of penetration_tol left after a correction
SPRING_EPS = 1e-12  # m; smaller spring extensions are reprojection round-off


class StepError(RuntimeError):
    pass


@dataclass
class SimConfig:
    k_f: float = 200.0
    dt: float = 0.01
    damping: float = 1.0
    substeps: int = 4
    contact_stiffness: float = 1.0  # fraction of the depth removed per correction sweep
    translation_scale: float = 3.0
    length_scale: float = 0.05  # m; rotational damping is damping * length_scale**2
    penetration_tol: float = 1e-4  # m
    fail_depth: float = 1e-3  # m
    sweeps: int = 20
    backtracks: int = 8
    advance_depth: float = 1e-3  # m; substeps that would penetrate deeper are shortened

    def __post_init__(self):
        for name in ("k_f", "dt", "damping", "contact_stiffness", "translation_scale", "length_scale", "penetration_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SimConfig.{name} must be positive")
        if self.substeps < 1 or self.sweeps < 1:
            raise ValueError("SimConfig.substeps and sweeps must be at least 1")
        if self.contact_stiffness > 1.5:
            raise ValueError("contact_stiffness above 1.5 overshoots the surface")

    def damping_vector(self, model: HandModel):
        d = np.full(model.n_dof, float(self.damping))
        d[:3] *= self.translation_scale
        d[3:6] *= self.length_scale**2
        for j, jt in enumerate(model.joints):
            if jt.type == "revolute":
                d[6 + j] *= self.length_scale**2
        return d


@dataclass
class Penetrations:
    """Penetrating sample points with the direction that separates each one.

    ``kind`` is 0 for a hand sample inside the object, 1 for an object
    sample inside a link and 2 for a self-collision sample (inside link
    ``other``). ``point`` is the world point whose motion the row constrains.
    """

    object_depth: float
    self_depth: float
    link: np.ndarray = field(repr=False)
    other: np.ndarray = field(repr=False)
    kind: np.ndarray = field(repr=False)
    point: np.ndarray = field(repr=False)
    direction: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)

    @property
    def max_depth(self) -> float:
        return max(self.object_depth, self.self_depth)


def _bounding_sphere(mesh: TriMesh):
    c = mesh.bounds.mean(axis=0)
    return c, float(np.max(np.linalg.norm(mesh.vertices - c, axis=1)))


class CollisionScene:
    """Sample sets and bounding spheres for one hand model against one fixed object."""

    def __init__(self, model: HandModel, mesh: TriMesh, pose=None, spacing=LINK_SAMPLE_SPACING, object_samples=DEFAULT_SAMPLES):
        self.model = model
        self.mesh = mesh
        self.pose = np.eye(4) if pose is None else np.asarray(pose, dtype=float)
        self.inv_pose = invert_pose(self.pose)
        self.link_samples = []
        self.link_spheres = []
        for link in model.links:
            n = int(np.clip(round(link.mesh.area / spacing**2), 256, DEFAULT_SAMPLES))
            self.link_samples.append(link.mesh.surface_samples(n))
            self.link_spheres.append(_bounding_sphere(link.mesh))
        self.object_local = mesh.surface_samples(object_samples)
        c, r = _bounding_sphere(mesh)
        self.object_sphere = (transform_points(self.pose, c[None])[0], r)

    def penetrations(self, transforms) -> Penetrations:
        rows = []
        obj_depth = 0.0
        self_depth = 0.0
        oc, orad = self.object_sphere
        centers = [T[:3, :3] @ c + T[:3, 3] for T, (c, _) in zip(transforms, self.link_spheres)]
        for i, T in enumerate(transforms):
            if np.linalg.norm(centers[i] - oc) > self.link_spheres[i][1] + orad:
                continue
            # hand samples inside the object
            idx, d, p, cp = self.mesh.inside_samples(self.link_samples[i], self.inv_pose @ T)
            if len(idx):
                obj_depth = max(obj_depth, float(d.max()))
                R = self.pose[:3, :3]
                rows.append((i, -1, 0, transform_points(self.pose, p), (cp - p) / d[:, None] @ R.T, d))
            # object samples inside the link
            idx, d, x, c = self.model.links[i].mesh.inside_samples(self.object_local, invert_pose(T) @ self.pose)
            if len(idx):
                obj_depth = max(obj_depth, float(d.max()))
                rows.append((i, -1, 1, transform_points(T, c), (x - c) / d[:, None] @ T[:3, :3].T, d))
        for a, b in self.model.self_collision:
            if np.linalg.norm(centers[a] - centers[b]) > self.link_spheres[a][1] + self.link_spheres[b][1]:
                continue
            for s, t in ((a, b), (b, a)):
                Tt = transforms[t]
                idx, d, p, cp = self.model.links[t].mesh.inside_samples(self.link_samples[s], invert_pose(Tt) @ transforms[s])
                if len(idx):
                    self_depth = max(self_depth, float(d.max()))
                    rows.append((s, t, 2, transform_points(Tt, p), (cp - p) / d[:, None] @ Tt[:3, :3].T, d))
        if not rows:
            e = np.zeros(0)
            return Penetrations(0.0, 0.0, e.astype(int), e.astype(int), e.astype(int), np.zeros((0, 3)), np.zeros((0, 3)), e)
        return Penetrations(
            obj_depth,
            self_depth,
            np.concatenate([np.full(len(r[5]), r[0]) for r in rows]),
            np.concatenate([np.full(len(r[5]), r[1]) for r in rows]),
            np.concatenate([np.full(len(r[5]), r[2]) for r in rows]),
            np.concatenate([r[3] for r in rows]),
            np.concatenate([r[4] for r in rows]),
            np.concatenate([r[5] for r in rows]),
        )

    def penetration_mm(self, state: HandState):
        """(hand-object, self-collision) sampled penetration depths in mm."""
        pen = self.penetrations(forward_kinematics(self.model, state))
        return 1000.0 * pen.object_depth, 1000.0 * pen.self_depth


# ------------------------------------------------------------------ springs


def hand_points_world(transforms, hand):
    pts = np.empty((len(hand), 3))
    nrm = np.empty((len(hand), 3))
    for i, c in enumerate(hand):
        pts[i], nrm[i] = contact_world(transforms, c)
    return pts, nrm


def spring_torques(model: HandModel, state: HandState, contacts: ContactSet, config: SimConfig, kin=None):
    """Generalized forces sum_i J_i^T k_f (p^o_i - lambda_i - p^h_i)."""
    J = point_jacobians(model, state, contacts.links, contacts.hand_points, kin)
    f = config.k_f * (contacts.targets - contacts.hand_points)
    return np.einsum("kij,ki->j", J, f)


def spring_potential(model, state, hand, targets, k_f):
    pts, _ = hand_points_world(forward_kinematics(model, state), hand)
    return 0.5 * k_f * float(np.sum((targets - pts) ** 2))


def reproject_hand(model, state, links, targets, transforms=None):
    """Closest point on each assigned link to its target."""
    if transforms is None:
        transforms = forward_kinematics(model, state)
    hand = [project_to_link_surface(model, state, l, t, transforms) for l, t in zip(links, targets)]
    pts, nrm = hand_points_world(transforms, hand)
    return hand, pts, nrm


# --------------------------------------------------------------- collisions


def _separation_rows(model, state, kin, pen: Penetrations, min_depth):
    """Constraint rows a_k . dq >= depth_k for the deepest samples of each link pair."""
    keep = []
    groups = np.stack([pen.link, pen.other, pen.kind], axis=1)
    for g in np.unique(groups, axis=0):
        idx = np.flatnonzero(np.all(groups == g, axis=1) & (pen.depth > min_depth))
        if len(idx):
            keep.append(idx[np.argsort(-pen.depth[idx], kind="stable")[:ROWS_PER_GROUP]])
    if not keep:
        return np.zeros((0, model.n_dof)), np.zeros(0)
    idx = np.concatenate(keep)
    J = point_jacobians(model, state, pen.link[idx], pen.point[idx], kin)
    rel = pen.other[idx] >= 0
    if np.any(rel):
        J[rel] -= point_jacobians(model, state, pen.other[idx][rel], pen.point[idx][rel], kin)
    A = np.einsum("ki,kij->kj", pen.direction[idx], J)
    return A, pen.depth[idx]


def _least_distance(A, b, weights):
    """min ||W^(1/2) dq|| s.t. A dq >= b, through the classic NNLS reduction."""
    s = 1.0 / np.sqrt(weights)
    G = A * s  # rows in scaled coordinates x = W^(1/2) dq
    E = np.vstack([G.T, b[None, :]])
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    u, _ = nnls(E, f, maxiter=50 * E.shape[1])
    r = E @ u - f
    if abs(r[-1]) < 1e-14:
        return None
    return s * (-r[:-1] / r[-1])


def resolve_collisions(model: HandModel, state: HandState, scene: CollisionScene, config: SimConfig, weights=None, pen=None):
    """Push penetrating links out along the separating directions.

    Runs only while some sample is deeper than ``penetration_tol``. Each
    sweep solves a least-norm (damping-weighted) motion that lifts the
    deepest samples of every penetrating pair back to REST_DEPTH of the
    tolerance, then clamps joint limits.
    ``pen`` may carry the penetrations already computed for ``state``.
    Returns ``(state, penetrations, resolved)``.
    """
    weights = config.damping_vector(model) if weights is None else weights
    tol = config.penetration_tol
    for sweep in range(config.sweeps + 1):
        if pen is not None and pen.max_depth <= tol:
            break
        kin = forward_kinematics(model, state, joint_frames=True)
        if pen is None:
            pen = scene.penetrations(kin[0])
            if pen.max_depth <= tol:
                break
        if sweep == config.sweeps:
            break
        # push back to a residual depth inside the tolerance so resting contacts
        # settle instead of bouncing off the surface every substep
        A, d = _separation_rows(model, state, kin, pen, REST_DEPTH * tol)
        dq = _least_distance(A, config.contact_stiffness * (d - REST_DEPTH * tol), weights)
        if dq is None or not np.all(np.isfinite(dq)):
            break
        state = clamp_to_limits(model, integrate(model, state, dq))
        pen = None
    if pen is None:
        pen = scene.penetrations(forward_kinematics(model, state))
    return state, pen, pen.max_depth <= tol


# --------------------------------------------------------------------- step


@dataclass
class StepResult:
    state: HandState
    contacts: ContactSet
    contact_forces: np.ndarray  # (m, 3) spring forces at the end of the step
    max_penetration: float  # mm
    failed: bool = False
    stalled: int = 0  # substeps reverted because penetration could not be cleared

    @property
    def hand_points(self):
        return self.contacts.hand_points


def _write_log(log, substep, model, state, contacts, transforms):
    rec = {
        "substep": substep,
        "q": state.q.tolist(),
        "hand_points": contacts.hand_points.tolist(),
        "targets": contacts.targets.tolist(),
        "links": {l.name: transforms[i][:3, 3].tolist() for i, l in enumerate(model.links)},
    }
    log.write(json.dumps(rec) + "\n")


def step(model: HandModel, state: HandState, scene: CollisionScene, contacts: ContactSet, config: SimConfig = None, log=None) -> StepResult:
    """Advance the hand ``config.substeps`` damped substeps toward the contact targets.

    ``scene`` may be a CollisionScene or a bare TriMesh (object at the
    origin). The object never moves.
    """
    config = config or SimConfig()
    if isinstance(scene, TriMesh):
        scene = CollisionScene(model, scene)
    model.check_state(state)
    weights = config.damping_vector(model)
    targets = contacts.targets
    links = contacts.links
    hand = list(contacts.hand)
    cur = state
    stalled = 0
    failed = False
    pen_depth = None
    prev_pen = None  # penetrations of ``cur`` once known
    for sub in range(config.substeps):
        kin = forward_kinematics(model, cur, joint_frames=True)
        pts, _ = hand_points_world(kin[0], hand)
        r = targets - pts
        J = point_jacobians(model, cur, links, pts, kin)
        tau = config.k_f * np.einsum("kij,ki->j", J, r)
        cand = cur
        pen = None
        if np.max(np.abs(r), initial=0.0) > SPRING_EPS:
            H = np.diag(weights) + config.dt * config.k_f * np.einsum("kij,kil->jl", J, J)
            dq = np.linalg.solve(H, config.dt * tau)
            v0 = 0.5 * config.k_f * float(np.sum(r * r))
            scale = 1.0
            for _ in range(config.backtracks + 1):
                trial = clamp_to_limits(model, integrate(model, cur, scale * dq))
                T = forward_kinematics(model, trial)
                pts, _ = hand_points_world(T, hand)
                # conservative advancement: never jump deep into contact
                if 0.5 * config.k_f * float(np.sum((targets - pts) ** 2)) <= v0:
                    trial_pen = scene.penetrations(T)
                    if trial_pen.max_depth <= config.advance_depth:
                        cand, pen = trial, trial_pen
                        break
                scale *= 0.5
        if pen is None:
            pen = prev_pen
        cand, pen, ok = resolve_collisions(model, cand, scene, config, weights, pen)
        if not ok:
            if pen.max_depth > config.fail_depth:
                failed = True
                cur = cand
                pen_depth = pen.max_depth
                break
            stalled += 1
            cand = cur
            pen = prev_pen
        cur = cand
        prev_pen = pen
        pen_depth = None if pen is None else pen.max_depth
        T = forward_kinematics(model, cur)
        hand, pts, nrm = reproject_hand(model, cur, links, targets, T)
        if log is not None:
            _write_log(log, sub, model, cur, contacts.with_hand(hand, pts, nrm), T)
    T = forward_kinematics(model, cur)
    if pen_depth is None:
        pen_depth = scene.penetrations(T).max_depth
    hand, pts, nrm = reproject_hand(model, cur, links, targets, T)
    out = contacts.with_hand(hand, pts, nrm)
    forces = config.k_f * (targets - pts)
    return StepResult(cur, out, forces, 1000.0 * pen_depth, failed, stalled)
