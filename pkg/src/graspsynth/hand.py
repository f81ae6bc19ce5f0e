"""Articulated hand models: loading, forward kinematics, Jacobians.

A hand is a tree of rigid links with a free-floating root. The configuration
vector is ``q = [root position (3), root quaternion wxyz (4), joints (n_j)]``;
velocities and Jacobians use the 6 + n_j tangent coordinates
``[linear velocity (3), world angular velocity (3), joint rates (n_j)]``.

Hand description files are TOML::

    name = "pincer"
    [[link]]
    name = "palm"
    mesh = "meshes/pincer_palm.obj"
    xyz = [0, 0, 0]          # fixed transform from the parent link frame
    quat = [1, 0, 0, 0]
    [[link]]
    name = "jaw"
    parent = "palm"
    finger = "jaw"
    ...
    [[joint]]
    name = "slide"
    type = "prismatic"      # or "revolute"
    axis = [-1, 0, 0]       # in the child's joint frame
    limits = [0.0, 0.1]
    parent = "palm"
    child = "jaw"
    [self_collision]
    pairs = [["jaw", "palm"]]

Mesh paths are relative to the description file.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import TriMesh, load_mesh
from .transforms import (
    axis_angle_matrix,
    invert_pose,
    make_pose,
    matrix_to_quat,
    pose_from_xyz_quat,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    skew,
)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class HandError(ValueError):
    pass


@dataclass
class Link:
    name: str
    parent: int
    origin: np.ndarray  # 4x4, parent frame -> this link's frame at zero joint
    mesh: TriMesh
    finger: str = ""
    joint: int = -1  # joint driving this link, -1 if rigidly attached


@dataclass
class Joint:
    name: str
    type: str
    axis: np.ndarray
    lower: float
    upper: float
    parent: int
    child: int


@dataclass
class HandState:
    q: np.ndarray

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)

    @property
    def position(self):
        return self.q[:3]

    @property
    def quaternion(self):
        return self.q[3:7]

    @property
    def joints(self):
        return self.q[7:]

    @property
    def root_pose(self):
        return make_pose(quat_to_matrix(self.quaternion), self.position)

    def copy(self) -> "HandState":
        return HandState(self.q.copy())

    @classmethod
    def from_parts(cls, position, quaternion, joints) -> "HandState":
        return cls(np.concatenate([position, quat_normalize(quaternion), np.asarray(joints, dtype=float)]))


@dataclass(frozen=True)
class LinkContact:
    """A point on a link surface, in link coordinates.

    ``local_normal`` is the link's inward normal at the point (the negated
    outward mesh normal). At a touching contact it equals the object's
    outward normal, while the link's outward normal opposes it.
    """

    link: int
    local_point: np.ndarray
    local_normal: np.ndarray


@dataclass
class HandModel:
    name: str
    links: list
    joints: list
    self_collision: list = field(default_factory=list)
    path: Path = None

    def __post_init__(self):
        self._validate()
        # ancestor joints of each link, nearest first
        self.chains = []
        for i, link in enumerate(self.links):
            chain = []
            k = i
            while k >= 0:
                if self.links[k].joint >= 0:
                    chain.append(self.links[k].joint)
                k = self.links[k].parent
            self.chains.append(chain)
        self.chain_mask = np.zeros((len(self.links), len(self.joints)), dtype=bool)
        for i, chain in enumerate(self.chains):
            self.chain_mask[i, chain] = True
        self.fingers = sorted({l.finger for l in self.links if l.finger})

    def _validate(self):
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise HandError("duplicate link names")
        roots = [i for i, l in enumerate(self.links) if l.parent < 0]
        if roots != [0]:
            raise HandError("hand must have exactly one root link, listed first")
        for i, l in enumerate(self.links):
            if l.parent >= i:
                raise HandError(f"link {l.name!r}: parent must be listed before the child (cycle or bad order)")
        seen = set()
        for j, jt in enumerate(self.joints):
            if jt.type not in ("revolute", "prismatic"):
                raise HandError(f"joint {jt.name!r}: unknown type {jt.type!r}")
            if abs(np.linalg.norm(jt.axis) - 1.0) > 1e-9:
                raise HandError(f"joint {jt.name!r}: axis is not unit length")
            if jt.lower > jt.upper:
                raise HandError(f"joint {jt.name!r}: lower limit exceeds upper")
            if jt.child in seen:
                raise HandError(f"link {self.links[jt.child].name!r} has more than one joint")
            if self.links[jt.child].parent != jt.parent:
                raise HandError(f"joint {jt.name!r}: parent does not match the child's parent link")
            seen.add(jt.child)
            if self.links[jt.child].joint != j:
                raise HandError(f"joint {jt.name!r} not attached to its child link")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_dof(self) -> int:
        return 6 + self.n_joints

    @property
    def n_q(self) -> int:
        return 7 + self.n_joints

    @property
    def lower(self):
        return np.array([j.lower for j in self.joints])

    @property
    def upper(self):
        return np.array([j.upper for j in self.joints])

    def link_index(self, name) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise HandError(f"unknown link {name!r}")

    def finger_links(self, finger):
        return [i for i, l in enumerate(self.links) if l.finger == finger]

    def default_state(self) -> HandState:
        return HandState.from_parts(np.zeros(3), [1.0, 0.0, 0.0, 0.0], np.clip(0.0, self.lower, self.upper))

    def check_state(self, state: HandState):
        if state.q.shape != (self.n_q,):
            raise HandError(f"state has {state.q.size} entries, model {self.name!r} needs {self.n_q}")


# -------------------------------------------------------------------- loading


def load_hand(path) -> HandModel:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise HandError(f"hand file not found: {path}") from None
    links_doc = doc.get("link", [])
    names = [l["name"] for l in links_doc]
    links = []
    for l in links_doc:
        mesh_path = path.parent / l["mesh"]
        if not mesh_path.exists():
            raise HandError(f"link {l['name']!r}: mesh not found: {mesh_path}")
        parent = l.get("parent")
        if parent is not None and parent not in names:
            raise HandError(f"link {l['name']!r}: unknown parent {parent!r}")
        links.append(
            Link(
                name=l["name"],
                parent=names.index(parent) if parent is not None else -1,
                origin=pose_from_xyz_quat(l.get("xyz", [0, 0, 0]), l.get("quat", [1, 0, 0, 0])),
                mesh=load_mesh(mesh_path),
                finger=l.get("finger", ""),
            )
        )
    joints = []
    for j in doc.get("joint", []):
        for key in ("parent", "child"):
            if j[key] not in names:
                raise HandError(f"joint {j['name']!r}: unknown {key} link {j[key]!r}")
        lo, hi = j["limits"]
        axis = np.asarray(j["axis"], dtype=float)
        if np.linalg.norm(axis) == 0:
            raise HandError(f"joint {j['name']!r}: zero axis")
        child = names.index(j["child"])
        links[child].joint = len(joints)
        joints.append(Joint(j["name"], j["type"], axis / np.linalg.norm(axis), float(lo), float(hi), names.index(j["parent"]), child))
    pairs = []
    for a, b in doc.get("self_collision", {}).get("pairs", []):
        pairs.append((names.index(a), names.index(b)))
    return HandModel(doc.get("name", path.stem), links, joints, pairs, path)


# ------------------------------------------------------------------ kinematics


def _joint_motion(joint: Joint, value):
    if joint.type == "revolute":
        return make_pose(axis_angle_matrix(joint.axis, value))
    return make_pose(t=joint.axis * value)


def forward_kinematics(model: HandModel, state: HandState, joint_frames=False):
    """World transform of every link, shape (L, 4, 4).

    With ``joint_frames`` also returns the world frame of each joint before
    its motion is applied (where the axis is expressed).
    """
    model.check_state(state)
    root = state.root_pose
    T = np.empty((len(model.links), 4, 4))
    JF = np.empty((model.n_joints, 4, 4))
    qj = state.joints
    for i, link in enumerate(model.links):
        base = root if link.parent < 0 else T[link.parent]
        frame = base @ link.origin
        if link.joint >= 0:
            JF[link.joint] = frame
            frame = frame @ _joint_motion(model.joints[link.joint], qj[link.joint])
        T[i] = frame
    if joint_frames:
        return T, JF
    return T


def point_jacobian(model: HandModel, state: HandState, link: int, world_point, kin=None):
    """3 x (6 + n_j) Jacobian of a point rigidly attached to ``link``."""
    if kin is None:
        kin = forward_kinematics(model, state, joint_frames=True)
    _, JF = kin
    p = np.asarray(world_point, dtype=float)
    J = np.zeros((3, model.n_dof))
    J[:, :3] = np.eye(3)
    J[:, 3:6] = -skew(p - state.position)
    for j in model.chains[link]:
        jt = model.joints[j]
        axis = JF[j, :3, :3] @ jt.axis
        if jt.type == "revolute":
            J[:, 6 + j] = np.cross(axis, p - JF[j, :3, 3])
        else:
            J[:, 6 + j] = axis
    return J


def point_jacobians(model: HandModel, state: HandState, links, world_points, kin=None):
    """Stacked Jacobians (k, 3, 6 + n_j) for points attached to ``links``."""
    if kin is None:
        kin = forward_kinematics(model, state, joint_frames=True)
    _, JF = kin
    links = np.asarray(links, dtype=np.int64)
    p = np.asarray(world_points, dtype=float).reshape(-1, 3)
    J = np.zeros((len(p), 3, model.n_dof))
    J[:, [0, 1, 2], [0, 1, 2]] = 1.0
    r = p - state.position
    # -skew(r): column k is e_k x r
    J[:, 0, 4], J[:, 0, 5] = r[:, 2], -r[:, 1]
    J[:, 1, 3], J[:, 1, 5] = -r[:, 2], r[:, 0]
    J[:, 2, 3], J[:, 2, 4] = r[:, 1], -r[:, 0]
    mask = model.chain_mask[links]
    for j, jt in enumerate(model.joints):
        rows = mask[:, j]
        if not np.any(rows):
            continue
        axis = JF[j, :3, :3] @ jt.axis
        if jt.type == "revolute":
            J[rows, :, 6 + j] = np.cross(axis, p[rows] - JF[j, :3, 3])
        else:
            J[rows, :, 6 + j] = axis
    return J


def contact_world(transforms, contact: LinkContact):
    """World position and inward normal of a link contact."""
    T = transforms[contact.link]
    return T[:3, :3] @ contact.local_point + T[:3, 3], T[:3, :3] @ contact.local_normal


def contact_jacobian(model: HandModel, state: HandState, contact: LinkContact, kin=None):
    if kin is None:
        kin = forward_kinematics(model, state, joint_frames=True)
    p, _ = contact_world(kin[0], contact)
    return point_jacobian(model, state, contact.link, p, kin)


def project_to_link_surface(model: HandModel, state: HandState, link: int, world_point, transforms=None) -> LinkContact:
    """Closest point on the link's mesh to ``world_point``, in link coordinates."""
    if transforms is None:
        transforms = forward_kinematics(model, state)
    local = invert_pose(transforms[link])
    q = local[:3, :3] @ np.asarray(world_point, dtype=float) + local[:3, 3]
    mesh = model.links[link].mesh
    face, bary, _, _, cp = mesh.closest(q[None, :])
    n = mesh.normal_at(int(face[0]), bary[0])
    return LinkContact(link, cp[0], -n)


def clamp_to_limits(model: HandModel, state: HandState) -> HandState:
    model.check_state(state)
    out = state.copy()
    out.q[7:] = np.clip(out.q[7:], model.lower, model.upper)
    return out


def integrate(model: HandModel, state: HandState, dq) -> HandState:
    """Apply a tangent-space displacement (6 + n_j); rotation is left-multiplied."""
    dq = np.asarray(dq, dtype=float)
    if dq.shape != (model.n_dof,):
        raise HandError(f"tangent step has {dq.size} entries, model needs {model.n_dof}")
    q = state.q.copy()
    q[:3] += dq[:3]
    q[3:7] = quat_normalize(quat_mul(quat_from_rotvec(dq[3:6]), q[3:7]))
    q[7:] += dq[6:]
    return HandState(q)


def set_root(state: HandState, T) -> HandState:
    """Copy of ``state`` with the root placed at pose ``T`` (4x4)."""
    q = state.q.copy()
    q[:3] = T[:3, 3]
    q[3:7] = matrix_to_quat(T[:3, :3])
    return HandState(q)


def link_surface_samples(model: HandModel, link: int, n=256):
    return model.links[link].mesh.surface_samples(n)
