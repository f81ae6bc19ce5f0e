"""Regenerates the reference assets shipped under ``assets/``.

    python -m graspsynth._assetgen

Writes link meshes, hand description files, grasp templates, the five
reference objects and the reference run configuration. Output is
deterministic; the shipped files are exactly what this script produces.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import mesh
from .hand import HandState, forward_kinematics, load_hand, project_to_link_surface
from .transforms import axis_angle_matrix, matrix_to_quat

ASSETS = Path(__file__).parent / "assets"


def _fmt(v):
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return repr(round(float(v), 12))


def _write_mesh(path, m: mesh.TriMesh, smooth):
    mesh.write_obj(path, [(m.name or path.stem, m.vertices, m.faces, m.vertex_normals if smooth else None)])


def _shifted_capsule(radius, length, n_lon=16, n_lat=8):
    """Capsule whose segment runs from z=0 to z=length."""
    c = mesh.capsule(radius, length, n_lon, n_lat)
    v = c.vertices + [0.0, 0.0, length / 2]
    return mesh.TriMesh(v, c.faces, vertex_normals=c.vertex_normals, name="capsule")


class _HandWriter:
    def __init__(self, name):
        self.name = name
        self.links = []
        self.joints = []
        self.pairs = []
        self.meshes = {}

    def link(self, name, m, smooth, parent=None, xyz=(0, 0, 0), R=None, finger=""):
        quat = matrix_to_quat(R) if R is not None else np.array([1.0, 0, 0, 0])
        self.links.append(dict(name=name, parent=parent, xyz=list(xyz), quat=list(quat), finger=finger))
        self.meshes[name] = (m, smooth)

    def joint(self, name, type_, axis, limits, parent, child):
        self.joints.append(dict(name=name, type=type_, axis=axis, limits=limits, parent=parent, child=child))

    def write(self, root: Path):
        mesh_dir = root / "meshes"
        mesh_dir.mkdir(parents=True, exist_ok=True)
        out = ["# generated by graspsynth._assetgen", f'name = "{self.name}"', ""]
        for l in self.links:
            fname = f"{self.name}_{l['name']}.obj"
            m, smooth = self.meshes[l["name"]]
            _write_mesh(mesh_dir / fname, m, smooth)
            out.append("[[link]]")
            out.append(f'name = "{l["name"]}"')
            if l["parent"]:
                out.append(f'parent = "{l["parent"]}"')
            if l["finger"]:
                out.append(f'finger = "{l["finger"]}"')
            out.append(f'mesh = "meshes/{fname}"')
            out.append(f"xyz = {_fmt(l['xyz'])}")
            out.append(f"quat = {_fmt(l['quat'])}")
            out.append("")
        for j in self.joints:
            out.append("[[joint]]")
            for key in ("name", "type", "axis", "limits", "parent", "child"):
                out.append(f"{key} = {_fmt(j[key])}")
            out.append("")
        out.append("[self_collision]")
        out.append("pairs = [")
        out.extend(f'    ["{a}", "{b}"],' for a, b in self.pairs)
        out.append("]")
        path = root / f"{self.name}.toml"
        path.write_text("\n".join(out) + "\n")
        return path


def _finger(w: _HandWriter, prefix, base_xyz, base_R, segments, palm="palm"):
    """Knuckle (abduction about local x) plus flexion segments about local y.

    ``segments`` is a list of (radius, length, lo, hi). Local +x of the base
    frame points toward the opposing fingers.
    """
    w.link(f"{prefix}_knuckle", mesh.uv_sphere(0.010, 16, 8, center=(0, 0, 0.004)), True, palm, base_xyz, base_R, prefix)
    w.joint(f"{prefix}_abd", "revolute", [1.0, 0.0, 0.0], [-0.35, 0.35], palm, f"{prefix}_knuckle")
    parent, offset = f"{prefix}_knuckle", 0.008
    names = []
    for k, (r, length, lo, hi) in enumerate(segments):
        name = f"{prefix}_{['proximal', 'middle', 'distal'][k if len(segments) == 3 else (0 if k == 0 else 2)]}"
        w.link(name, _shifted_capsule(r, length), True, parent, (0, 0, offset), None, prefix)
        w.joint(f"{name}_flex", "revolute", [0.0, 1.0, 0.0], [lo, hi], parent, name)
        parent, offset = name, length
        names.append(name)
    return names


def _rz(angle):
    return axis_angle_matrix([0.0, 0.0, 1.0], angle)


def build_pincer(root):
    w = _HandWriter("pincer")
    w.link("palm", mesh.box((0.16, 0.03, 0.02), 2, (0, 0, -0.01)), False)
    jaw = mesh.box((0.012, 0.024, 0.08), 3, (0, 0, 0.04))
    w.link("jaw_left", jaw, False, "palm", (-0.065, 0, 0), None, "left")
    w.link("jaw_right", jaw, False, "palm", (0.065, 0, 0), None, "right")
    w.joint("slide", "prismatic", [-1.0, 0.0, 0.0], [0.0, 0.1], "palm", "jaw_right")
    w.pairs = [("jaw_left", "jaw_right")]
    return w.write(root)


def build_tripod(root):
    w = _HandWriter("tripod")
    w.link("palm", mesh.cylinder(0.05, 0.02, 24, 2, 2), False)
    # cylinder primitive is centred; shift so the palm top is z = 0
    m, _ = w.meshes["palm"]
    w.meshes["palm"] = (mesh.TriMesh(m.vertices - [0, 0, 0.01], m.faces, name="palm"), False)
    segs = [(0.009, 0.04, -0.4, 1.5), (0.008, 0.03, -0.1, 1.6)]
    distal = []
    prox = []
    for k, phi in enumerate(np.radians([90.0, 210.0, 330.0])):
        base = 0.036 * np.array([np.cos(phi), np.sin(phi), 0.0])
        names = _finger(w, f"f{k}", base, _rz(phi + np.pi), segs)
        prox.append(names[0])
        distal.append(names[-1])
    pairs = []
    for a in range(3):
        for b in range(a + 1, 3):
            pairs += [(distal[a], distal[b]), (prox[a], prox[b]), (distal[a], prox[b]), (prox[a], distal[b])]
        pairs.append((distal[a], "palm"))
    w.pairs = pairs
    return w.write(root)


def build_quad(root):
    w = _HandWriter("quad")
    w.link("palm", mesh.box((0.09, 0.08, 0.02), 2, (0, 0, -0.01)), False)
    segs = [(0.009, 0.035, -0.3, 1.5), (0.0085, 0.025, 0.0, 1.6), (0.008, 0.02, 0.0, 1.4)]
    distal, names_all = [], []
    bases = [((-0.028, 0.03, 0), -np.pi / 2), ((0.0, 0.03, 0), -np.pi / 2), ((0.028, 0.03, 0), -np.pi / 2), ((0.0, -0.03, 0), np.pi / 2)]
    for k, (xyz, rz) in enumerate(bases):
        prefix = "thumb" if k == 3 else f"f{k}"
        names = _finger(w, prefix, xyz, _rz(rz), segs)
        distal.append(names[-1])
        names_all.append(names)
    pairs = []
    for a in range(4):
        for b in range(a + 1, 4):
            for la in names_all[a][1:]:
                for lb in names_all[b][1:]:
                    pairs.append((la, lb))
        pairs.append((distal[a], "palm"))
    w.pairs = pairs
    return w.write(root)


def _pad(model, state, link, local_guess):
    """Snap a hand-authored pad location onto the link mesh."""
    T = forward_kinematics(model, state)
    world = T[link][:3, :3] @ np.asarray(local_guess, dtype=float) + T[link][:3, 3]
    c = project_to_link_surface(model, state, link, world, T)
    return c.local_point, c.local_normal


def _write_template(path, name, kind, hand_rel, model, joints, pads):
    state = HandState.from_parts(np.zeros(3), [1, 0, 0, 0], joints)
    out = [
        "# generated by graspsynth._assetgen",
        f'name = "{name}"',
        f'type = "{kind}"',
        f'hand = "{hand_rel}"',
        f"q = {_fmt(state.q)}",
        "",
    ]
    for link_name, guess in pads:
        li = model.link_index(link_name)
        p, n = _pad(model, state, li, guess)
        out += ["[[contact]]", f'link = "{link_name}"', f"point = {_fmt(p)}", f"normal = {_fmt(n)}", ""]
    path.write_text("\n".join(out) + "\n")


def build_templates(hands_dir, tmpl_dir):
    tmpl_dir.mkdir(parents=True, exist_ok=True)
    pincer = load_hand(hands_dir / "pincer.toml")
    _write_template(tmpl_dir / "pincer_pinch.toml", "pinch", "pincer", "../hands/pincer.toml", pincer, [0.045],
                    [("jaw_left", (0.006, 0, 0.05)), ("jaw_right", (-0.006, 0, 0.05))])
    _write_template(tmpl_dir / "pincer_tip.toml", "tip", "pincer", "../hands/pincer.toml", pincer, [0.06],
                    [("jaw_left", (0.006, 0, 0.07)), ("jaw_right", (-0.006, 0, 0.07))])
    tripod = load_hand(hands_dir / "tripod.toml")
    tip = lambda r, l: (r * np.cos(0.5), 0.0, l + r * np.sin(0.5))
    joints = [0.0, -0.3, 0.6] * 3
    _write_template(tmpl_dir / "tripod_precision.toml", "precision", "tripod", "../hands/tripod.toml", tripod, joints,
                    [(f"f{k}_distal", tip(0.008, 0.03)) for k in range(3)])
    joints = [0.0, -0.3, 1.0] * 3
    _write_template(tmpl_dir / "tripod_wrap.toml", "wrap", "tripod", "../hands/tripod.toml", tripod, joints,
                    [(f"f{k}_distal", (0.008, 0.0, 0.015)) for k in range(3)] + [(f"f{k}_proximal", (0.009, 0.0, 0.025)) for k in range(3)])
    quad = load_hand(hands_dir / "quad.toml")
    joints = [0.0, -0.3, 0.2, 0.4] * 4
    _write_template(tmpl_dir / "quad_precision.toml", "precision", "quad", "../hands/quad.toml", quad, joints,
                    [(f"{f}_distal", tip(0.008, 0.02)) for f in ("f0", "f1", "f2", "thumb")])
    joints = [0.0, -0.3, 0.4, 0.4] * 4
    _write_template(tmpl_dir / "quad_wrap.toml", "wrap", "quad", "../hands/quad.toml", quad, joints,
                    [(f"{f}_distal", (0.008, 0.0, 0.01)) for f in ("f0", "f1", "f2", "thumb")] + [("palm", (0.0, 0.0, 0.0))])


def build_objects(obj_dir):
    obj_dir.mkdir(parents=True, exist_ok=True)
    shapes = {
        "sphere": (mesh.uv_sphere(0.035, 48, 24), True),
        "box": (mesh.box((0.06, 0.05, 0.07), 6), False),
        "cylinder": (mesh.cylinder(0.03, 0.08, 48, 8, 4), False),
        "capsule": (mesh.capsule(0.025, 0.05, 32, 16), True),
        "torus": (mesh.torus(0.04, 0.015, 48, 24), True),
    }
    for name, (m, smooth) in shapes.items():
        m.name = name
        _write_mesh(obj_dir / f"{name}.obj", m, smooth)


REFERENCE_CONFIG = """\
# Reference batch: five desk-scale objects x one pincer and one tripod template.
seed = 0
attempts = 50
workers = 1
out = "runs/reference"
objects = [
    "../objects/sphere.obj",
    "../objects/box.obj",
    "../objects/cylinder.obj",
    "../objects/capsule.obj",
    "../objects/torus.obj",
]
templates = [
    "../templates/pincer_pinch.toml",
    "../templates/tripod_precision.toml",
]

[admm]
rho = 1000.0
alpha = 0.001
K = 100
anneal_threshold = 0.02
convergence_eps = 0.0001

[quality]
# synthesis friction sits below the evaluation friction as a safety margin
mu = 0.05
lambda_min = 0.1
pyramid_edges = 8

[sim]
k_f = 200.0
dt = 0.01
damping = 1.0
substeps = 4

[eval]
mu = 0.6
torsional_mu = 0.02
disturbance = 1.0
pass_eps = 0.0001
"""


def main(root=ASSETS):
    root = Path(root)
    hands = root / "hands"
    hands.mkdir(parents=True, exist_ok=True)
    build_pincer(hands)
    build_tripod(hands)
    build_quad(hands)
    build_templates(hands, root / "templates")
    build_objects(root / "objects")
    (root / "configs").mkdir(exist_ok=True)
    (root / "configs" / "reference.toml").write_text(REFERENCE_CONFIG)


if __name__ == "__main__":
    main()
