from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

import graspsynth
from graspsynth.hand import (
    HandError,
    HandState,
    LinkContact,
    clamp_to_limits,
    contact_jacobian,
    contact_world,
    forward_kinematics,
    integrate,
    load_hand,
    project_to_link_surface,
)

from oracles import brute_closest

HANDS = Path(graspsynth.__file__).parent / "assets" / "hands"


@pytest.fixture(scope="module", params=["pincer", "tripod", "quad"])
def model(request):
    return load_hand(HANDS / f"{request.param}.toml")


def _random_state(model, rng):
    q = np.concatenate([rng.normal(scale=0.1, size=3), Rotation.random(random_state=rng).as_quat(scalar_first=True), rng.uniform(model.lower, model.upper)])
    return HandState(q)


def _oracle_fk(model, state):
    """Recursive recomputation with scipy rotations."""
    root = np.eye(4)
    root[:3, :3] = Rotation.from_quat(state.quaternion, scalar_first=True).as_matrix()
    root[:3, 3] = state.position

    def world(i):
        link = model.links[i]
        base = root if link.parent < 0 else world(link.parent)
        T = base @ link.origin
        if link.joint >= 0:
            jt = model.joints[link.joint]
            M = np.eye(4)
            v = state.joints[link.joint]
            if jt.type == "revolute":
                M[:3, :3] = Rotation.from_rotvec(jt.axis * v).as_matrix()
            else:
                M[:3, 3] = jt.axis * v
            T = T @ M
        return T

    return np.stack([world(i) for i in range(len(model.links))])


def test_dimensions():
    dof = {name: load_hand(HANDS / f"{name}.toml").n_dof for name in ("pincer", "tripod", "quad")}
    assert dof == {"pincer": 7, "tripod": 15, "quad": 22}


def test_zero_pose_is_origin_chain(model):
    T = forward_kinematics(model, model.default_state())
    for i, link in enumerate(model.links):
        expect = link.origin if link.parent < 0 else T[link.parent] @ link.origin
        if link.joint >= 0 and model.joints[link.joint].lower > 0:
            continue
        assert np.allclose(T[i], expect, atol=1e-12)


def test_root_translation_equivariance(model):
    rng = np.random.default_rng(0)
    s = _random_state(model, rng)
    t = rng.normal(size=3)
    moved = s.copy()
    moved.q[:3] += t
    a, b = forward_kinematics(model, s), forward_kinematics(model, moved)
    assert np.allclose(b[:, :3, 3], a[:, :3, 3] + t, atol=1e-12)
    assert np.allclose(b[:, :3, :3], a[:, :3, :3], atol=1e-12)


def test_root_rotation_equivariance(model):
    rng = np.random.default_rng(1)
    s = _random_state(model, rng)
    s.q[:3] = 0.0
    rv = rng.normal(size=3)
    moved = integrate(model, s, np.concatenate([np.zeros(3), rv, np.zeros(model.n_joints)]))
    R = Rotation.from_rotvec(rv).as_matrix()
    a, b = forward_kinematics(model, s), forward_kinematics(model, moved)
    assert np.allclose(b[:, :3, 3], a[:, :3, 3] @ R.T, atol=1e-12)


def test_fk_matches_oracle(model):
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = _random_state(model, rng)
        assert np.allclose(forward_kinematics(model, s), _oracle_fk(model, s), atol=1e-10)


def test_dimension_mismatch(model):
    with pytest.raises(HandError):
        forward_kinematics(model, HandState(np.zeros(model.n_q + 1)))


def _random_contact(model, rng):
    li = int(rng.integers(len(model.links)))
    m = model.links[li].mesh
    f = int(rng.integers(len(m.faces)))
    b = rng.dirichlet(np.ones(3))
    sp = m.surface_point(f, b)
    return LinkContact(li, sp.position, -sp.normal)


def test_jacobian_finite_differences(model):
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(200 // 3 + 1):
        s = _random_state(model, rng)
        c = _random_contact(model, rng)
        J = contact_jacobian(model, s, c)
        fd = np.zeros_like(J)
        for k in range(model.n_dof):
            e = np.zeros(model.n_dof)
            e[k] = h
            pp, _ = contact_world(forward_kinematics(model, integrate(model, s, e)), c)
            pm, _ = contact_world(forward_kinematics(model, integrate(model, s, -e)), c)
            fd[:, k] = (pp - pm) / (2 * h)
        assert np.linalg.norm(J - fd) <= 1e-4 * np.linalg.norm(fd)


def test_root_link_contact_has_no_joint_columns(model):
    rng = np.random.default_rng(4)
    s = _random_state(model, rng)
    m = model.links[0].mesh
    c = LinkContact(0, m.vertices[0], -m.vertex_normals[0])
    assert np.all(contact_jacobian(model, s, c)[:, 6:] == 0.0)


def test_revolute_lever_arm():
    model = load_hand(HANDS / "tripod.toml")
    li = model.link_index("f0_distal")
    s = model.default_state()
    T, JF = forward_kinematics(model, s, joint_frames=True)
    j = model.links[li].joint
    jt = model.joints[j]
    axis = JF[j, :3, :3] @ jt.axis
    c = LinkContact(li, np.array([0.008, 0.0, 0.02]), np.array([-1.0, 0.0, 0.0]))
    p, _ = contact_world(T, c)
    d = p - JF[j, :3, 3]
    r = np.linalg.norm(d - axis * (axis @ d))
    J = contact_jacobian(model, s, c)
    assert np.linalg.norm(J[:, 6 + j]) == pytest.approx(r, rel=1e-12)


def test_projection_idempotent(model):
    rng = np.random.default_rng(5)
    s = _random_state(model, rng)
    T = forward_kinematics(model, s)
    for _ in range(20):
        c = _random_contact(model, rng)
        p, _ = contact_world(T, c)
        again = project_to_link_surface(model, s, c.link, p, T)
        assert np.linalg.norm(again.local_point - c.local_point) <= 1e-9


def test_sphere_link_radial_projection():
    model = load_hand(HANDS / "tripod.toml")
    li = model.link_index("f1_knuckle")
    s = model.default_state()
    T = forward_kinematics(model, s)
    center = T[li][:3, :3] @ np.array([0.0, 0.0, 0.004]) + T[li][:3, 3]
    # straight through a vertex so the tessellated and ideal spheres agree
    v = model.links[li].mesh.vertices[5] - [0.0, 0.0, 0.004]
    world_dir = T[li][:3, :3] @ (v / np.linalg.norm(v))
    c = project_to_link_surface(model, s, li, center + 0.05 * world_dir, T)
    p, n = contact_world(T, c)
    assert np.allclose(p, center + 0.010 * world_dir, atol=1e-9)
    assert np.allclose(n, -world_dir, atol=1e-9)


def test_projection_matches_brute_force(model):
    rng = np.random.default_rng(6)
    s = _random_state(model, rng)
    T = forward_kinematics(model, s)
    for _ in range(30):
        li = int(rng.integers(len(model.links)))
        target = T[li][:3, 3] + rng.normal(scale=0.03, size=3)
        c = project_to_link_surface(model, s, li, target, T)
        local = np.linalg.solve(T[li], np.append(target, 1.0))[:3]
        _, p, d, _ = brute_closest(model.links[li].mesh.triangles, local)
        assert np.linalg.norm(c.local_point - p) <= 1e-9
        # no sampled surface point is closer
        samples = model.links[li].mesh.sample_surface(1000, rng)[2]
        assert np.linalg.norm(c.local_point - local) <= np.min(np.linalg.norm(samples - local, axis=1)) + 1e-12


def test_clamp(model):
    s = model.default_state()
    assert np.array_equal(clamp_to_limits(model, s).q, s.q)
    high = s.copy()
    high.q[7:] = model.upper + 1.0
    c = clamp_to_limits(model, high)
    assert np.array_equal(c.joints, model.upper)
    assert np.array_equal(c.q[:7], high.q[:7])
    assert np.array_equal(clamp_to_limits(model, c).q, c.q)


def _write_hand(tmp_path, body):
    (tmp_path / "m.obj").write_text((HANDS / "meshes" / "pincer_palm.obj").read_text())
    p = tmp_path / "h.toml"
    p.write_text(body)
    return p


def test_bad_files(tmp_path):
    link = '[[link]]\nname = "{n}"\nmesh = "m.obj"\n{extra}\n'
    with pytest.raises(HandError, match="unknown parent"):
        load_hand(_write_hand(tmp_path, link.format(n="a", extra="") + link.format(n="b", extra='parent = "zz"')))
    with pytest.raises(HandError, match="listed before"):
        load_hand(_write_hand(tmp_path, link.format(n="a", extra="") + link.format(n="b", extra='parent = "c"') + link.format(n="c", extra='parent = "b"')))
    with pytest.raises(HandError, match="lower limit"):
        body = link.format(n="a", extra="") + link.format(n="b", extra='parent = "a"')
        body += '[[joint]]\nname = "j"\ntype = "revolute"\naxis = [0, 0, 1]\nlimits = [1.0, 0.0]\nparent = "a"\nchild = "b"\n'
        load_hand(_write_hand(tmp_path, body))
    with pytest.raises(HandError, match="not found"):
        load_hand(tmp_path / "missing.toml")


def test_stacked_jacobians_match_single(model):
    from graspsynth.hand import point_jacobian, point_jacobians

    rng = np.random.default_rng(7)
    s = _random_state(model, rng)
    links = rng.integers(len(model.links), size=12)
    pts = rng.normal(scale=0.05, size=(12, 3))
    J = point_jacobians(model, s, links, pts)
    for k in range(12):
        assert np.allclose(J[k], point_jacobian(model, s, int(links[k]), pts[k]), atol=1e-14)
