"""Template-based initial hand poses.

A template fixes the hand's joint configuration and a set of contact
points on its links. Initialization aligns one template contact with a
random object surface point (normals facing each other), spins the hand
about that normal at random, then rigidly fits the root so that all
template contacts sit close to the surface.

Template files are TOML::

    name = "pinch"
    type = "pincer"
    hand = "../hands/pincer.toml"     # relative to the template file
    q = [x, y, z, qw, qx, qy, qz, joints...]
    [[contact]]
    link = "jaw_left"
    point = [0.006, 0.0, 0.05]         # link frame
    normal = [-1.0, 0.0, 0.0]          # link inward normal
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hand import HandError, HandModel, HandState, LinkContact, contact_world, forward_kinematics, load_hand, set_root
from .mesh import TriMesh
from .quasistatic import CollisionScene
from .transforms import axis_angle_matrix, make_pose, rotation_between

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

PREFILTER_DEPTH_MM = 2.0
PREFILTER_SELF_MM = 1.0


class TemplateError(ValueError):
    pass


@dataclass
class GraspTemplate:
    name: str
    kind: str
    hand_path: Path
    q: HandState
    contacts: list  # LinkContact
    path: Path = None

    def __post_init__(self):
        if len(self.contacts) < 2:
            raise TemplateError(f"template {self.name!r} needs at least 2 contacts")

    @property
    def links(self):
        return [c.link for c in self.contacts]

    def world_contacts(self, model: HandModel, state: HandState = None):
        """World positions and inward normals of the template contacts."""
        T = forward_kinematics(model, self.q if state is None else state)
        pts = np.empty((len(self.contacts), 3))
        nrm = np.empty((len(self.contacts), 3))
        for i, c in enumerate(self.contacts):
            pts[i], nrm[i] = contact_world(T, c)
        return pts, nrm


@dataclass
class InitCandidate:
    state: HandState
    template: str
    contact: int  # template contact placed on the object
    face: int
    bary: np.ndarray
    angle: float  # spin about the object normal (rad)
    penetration: float = 0.0  # mm, hand-object
    self_penetration: float = 0.0  # mm
    kept: bool = True


def load_template(path, model: HandModel = None):
    """Read a template. Returns ``(template, model)``; the hand is loaded unless given."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise TemplateError(f"template file not found: {path}") from None
    hand_path = (path.parent / doc["hand"]).resolve()
    if model is None:
        model = load_hand(hand_path)
    q = HandState(doc["q"])
    try:
        model.check_state(q)
        contacts = [
            LinkContact(model.link_index(c["link"]), np.asarray(c["point"], dtype=float), np.asarray(c["normal"], dtype=float))
            for c in doc.get("contact", [])
        ]
    except HandError as exc:
        raise TemplateError(f"{path}: {exc}") from None
    return GraspTemplate(doc.get("name", path.stem), doc.get("type", ""), hand_path, q, contacts, path), model


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_alignment(template: GraspTemplate, model: HandModel, mesh: TriMesh, rng_seed) -> InitCandidate:
    """Place one random template contact on a random surface point.

    The chosen hand point lands on the object point and the hand's surface
    normal there faces the object (its inward normal equals the object's
    outward normal); the remaining spin about that normal is uniform.
    """
    rng = _rng(rng_seed)
    faces, bary, pos = mesh.sample_surface(1, rng)
    face, b, p_o = int(faces[0]), bary[0], pos[0]
    n_o = mesh.normal_at(face, b)
    k = int(rng.integers(len(template.contacts)))
    angle = float(rng.uniform(0.0, 2.0 * np.pi))
    pts, nrm = template.world_contacts(model)
    R = axis_angle_matrix(n_o, angle) @ rotation_between(nrm[k], n_o)
    move = make_pose(R, p_o - R @ pts[k])
    state = set_root(template.q, move @ template.q.root_pose)
    return InitCandidate(state, template.name, k, face, b, angle)


def _kabsch(src, dst):
    """Rotation R and translation t minimizing sum ||R src + t - dst||^2."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def _collinear(points, rel=1e-9):
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    return s.size < 2 or s[1] <= rel * max(s[0], 1e-300)


def fit_discrepancy(state, template, model, mesh):
    pts, _ = template.world_contacts(model, state)
    _, _, _, dist, _ = mesh.closest(pts)
    return float(np.sum(dist**2))


def rigid_fit(state: HandState, template: GraspTemplate, model: HandModel, mesh: TriMesh, iters=10, history=None) -> HandState:
    """Closest-point rigid alignment of the hand root to the surface.

    Each iteration projects the template contacts onto the mesh and applies
    the least-squares rigid motion taking them onto their projections.
    Collinear contact sets only translate.
    """
    for _ in range(iters):
        pts, _ = template.world_contacts(model, state)
        _, _, _, dist, cp = mesh.closest(pts)
        if history is not None:
            history.append(float(np.sum(dist**2)))
        if not np.any(dist > 0):
            break
        if _collinear(pts):
            R, t = np.eye(3), (cp - pts).mean(axis=0)
        else:
            R, t = _kabsch(pts, cp)
        state = set_root(state, make_pose(R, t) @ state.root_pose)
    if history is not None:
        history.append(fit_discrepancy(state, template, model, mesh))
    return state


def prefilter(candidate: InitCandidate, scene: CollisionScene, depth_mm=PREFILTER_DEPTH_MM, self_mm=PREFILTER_SELF_MM) -> bool:
    """Keep the candidate unless it penetrates the object by more than ``depth_mm``
    or a declared link pair by more than ``self_mm`` (both inclusive)."""
    obj, own = scene.penetration_mm(candidate.state)
    candidate.penetration, candidate.self_penetration = obj, own
    candidate.kept = obj <= depth_mm and own <= self_mm
    return candidate.kept


def initial_pose(template, model, mesh, scene, rng_seed, fit_iters=10) -> InitCandidate:
    """sample_alignment -> rigid_fit -> prefilter."""
    cand = sample_alignment(template, model, mesh, rng_seed)
    cand.state = rigid_fit(cand.state, template, model, mesh, fit_iters)
    prefilter(cand, scene)
    return cand
