import io
import json
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize

import graspsynth
from graspsynth.contacts import ContactSet
from graspsynth.hand import HandState, LinkContact, contact_jacobian, forward_kinematics, load_hand
from graspsynth.mesh import SurfacePoint, box
from graspsynth.poseinit import load_template
from graspsynth.quasistatic import (
    CollisionScene,
    SimConfig,
    _least_distance,
    hand_points_world,
    reproject_hand,
    spring_potential,
    spring_torques,
    step,
)

ASSETS = Path(graspsynth.__file__).parent / "assets"


@pytest.fixture(scope="module")
def pincer():
    return load_hand(ASSETS / "hands" / "pincer.toml")


@pytest.fixture(scope="module")
def tripod():
    return load_hand(ASSETS / "hands" / "tripod.toml")


def _point(x):
    return SurfacePoint(0, np.array([1.0, 0.0, 0.0]), np.asarray(x, dtype=float), np.array([0.0, 0.0, 1.0]))


def _contacts(model, state, hand, targets):
    pts, nrm = hand_points_world(forward_kinematics(model, state), hand)
    return ContactSet([_point(t) for t in targets], hand, pts, nrm)


def _pads(model):
    return [
        LinkContact(model.link_index("jaw_left"), np.array([0.006, 0.0, 0.05]), np.array([-1.0, 0.0, 0.0])),
        LinkContact(model.link_index("jaw_right"), np.array([-0.006, 0.0, 0.05]), np.array([1.0, 0.0, 0.0])),
    ]


def _tripod_rest(model):
    """Joint angles of the shipped precision template (free of self-collision)."""
    tmpl, _ = load_template(ASSETS / "templates" / "tripod_precision.toml", model)
    return HandState(np.concatenate([[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], tmpl.q.joints]))


def _open(model, slide=0.0):
    return HandState(np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, slide]))


# ------------------------------------------------------------------ springs


def test_torque_zero_at_targets(pincer):
    s = _open(pincer, 0.03)
    hand = _pads(pincer)
    pts, _ = hand_points_world(forward_kinematics(pincer, s), hand)
    c = _contacts(pincer, s, hand, pts)
    assert np.all(spring_torques(pincer, s, c, SimConfig()) == 0.0)


def test_root_contact_translation_block(pincer):
    s = _open(pincer)
    hand = [LinkContact(0, np.array([0.01, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))]
    pts, _ = hand_points_world(forward_kinematics(pincer, s), hand)
    c = _contacts(pincer, s, hand, pts + [1.0, 0.0, 0.0])
    tau = spring_torques(pincer, s, c, SimConfig(k_f=200.0))
    np.testing.assert_allclose(tau[:3], [200.0, 0.0, 0.0], atol=1e-12)
    assert np.all(tau[6:] == 0.0)


def test_torque_matches_per_contact_sum(tripod):
    rng = np.random.default_rng(3)
    s = tripod.default_state()
    s = HandState(np.concatenate([rng.normal(size=3) * 0.02, [1.0, 0.0, 0.0, 0.0], rng.uniform(tripod.lower, tripod.upper)]))
    links = rng.integers(0, len(tripod.links), size=5)
    hand = [LinkContact(int(l), rng.normal(size=3) * 0.01, np.array([0.0, 0.0, 1.0])) for l in links]
    pts, _ = hand_points_world(forward_kinematics(tripod, s), hand)
    targets = pts + rng.normal(size=pts.shape) * 0.005
    duals = rng.normal(size=pts.shape) * 0.001
    c = _contacts(tripod, s, hand, targets)
    c.duals = duals
    cfg = SimConfig(k_f=150.0)
    expect = np.zeros(tripod.n_dof)
    for k, h in enumerate(hand):
        expect += contact_jacobian(tripod, s, h).T @ (cfg.k_f * (targets[k] - duals[k] - pts[k]))
    np.testing.assert_allclose(spring_torques(tripod, s, c, cfg), expect, atol=1e-12)


# -------------------------------------------------------------- least distance


def test_least_distance_matches_slsqp():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m = 6, 4
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        w = rng.uniform(0.5, 3.0, size=n)
        x = _least_distance(A, b, w)
        ref = minimize(lambda v: v @ (w * v), np.zeros(n), jac=lambda v: 2 * w * v, constraints=[{"type": "ineq", "fun": lambda v: A @ v - b, "jac": lambda v: A}], method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert np.all(A @ x >= b - 1e-9)
        assert x @ (w * x) == pytest.approx(ref.fun, rel=1e-6, abs=1e-12)


def test_least_distance_infeasible():
    A = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert _least_distance(A, np.array([1.0, 1.0]), np.ones(2)) is None


# ---------------------------------------------------------------------- step


def test_no_torque_no_motion(pincer):
    far = box((0.02, 0.02, 0.02), center=(1.0, 0.0, 0.0))
    s = _open(pincer, 0.02)
    hand = _pads(pincer)
    pts, _ = hand_points_world(forward_kinematics(pincer, s), hand)
    res = step(pincer, s, far, _contacts(pincer, s, hand, pts))
    assert np.array_equal(res.state.q, s.q)
    assert res.max_penetration == 0.0 and not res.failed


def test_finger_stops_at_plane(pincer):
    # slab whose face x = 0.03 sits between the open jaws; the right pad is pulled 5 mm into it
    slab = box((0.06, 0.2, 0.04), center=(0.0, 0.0, 0.06))
    scene = CollisionScene(pincer, slab)
    s = _open(pincer, 0.0)
    hand = _pads(pincer)
    pts, _ = hand_points_world(forward_kinematics(pincer, s), hand)
    # the left pad is held where it is, outside the slab on the other side
    targets = np.array([[-0.035, 0.0, 0.05], [0.025, 0.0, 0.05]])
    targets[0] = pts[0]
    c = _contacts(pincer, s, hand, targets)
    # heavy root damping leaves the slide as the only effective DoF
    cfg = SimConfig(translation_scale=1e8, length_scale=1e4)
    for _ in range(40):
        res = step(pincer, s, scene, c, cfg)
        assert not res.failed
        s, c = res.state, res.contacts
    np.testing.assert_allclose(s.q[:7], [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], atol=1e-6)
    pad = res.hand_points[1]
    assert res.max_penetration <= 0.1
    gap = pad[0] - 0.03
    assert -1e-4 <= gap <= 1e-4


def test_pincer_lands_on_box_faces(pincer):
    # pads start 2 mm outside the faces x = -+0.03 with targets 2 mm inside
    obj = box((0.06, 0.04, 0.04), center=(0.0, 0.0, 0.05))
    scene = CollisionScene(pincer, obj)
    s = HandState(np.array([0.027, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.054]))
    hand = _pads(pincer)
    c = _contacts(pincer, s, hand, [[-0.028, 0.0, 0.05], [0.028, 0.0, 0.05]])
    for _ in range(40):
        res = step(pincer, s, scene, c)
        assert not res.failed
        s, c = res.state, res.contacts
    assert res.max_penetration <= 0.1
    np.testing.assert_allclose(np.abs(res.hand_points[:, 0]), 0.03, atol=1e-4)
    sd, _, _ = obj.signed_distances(res.hand_points)
    assert np.all(np.abs(sd) <= 1e-4)


def test_potential_non_increasing_without_collisions(tripod):
    rng = np.random.default_rng(11)
    far = box((0.02, 0.02, 0.02), center=(5.0, 0.0, 0.0))
    s = _tripod_rest(tripod)
    tips = [tripod.link_index(f"f{i}_distal") for i in range(3)]
    hand = [LinkContact(l, np.array([0.0, 0.0, 0.02]), np.array([0.0, 0.0, 1.0])) for l in tips]
    pts, _ = hand_points_world(forward_kinematics(tripod, s), hand)
    targets = pts + rng.normal(size=pts.shape) * 0.01
    c = _contacts(tripod, s, hand, targets)
    log = io.StringIO()
    values = [spring_potential(tripod, s, c.hand, targets, 200.0)]
    for _ in range(5):
        res = step(tripod, s, far, c, log=log)
        s, c = res.state, res.contacts
    for line in log.getvalue().splitlines():
        rec = json.loads(line)
        values.append(0.5 * 200.0 * float(np.sum((np.array(rec["targets"]) - np.array(rec["hand_points"])) ** 2)))
    assert len(values) == 21
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] < 0.5 * values[0]


def test_hand_points_on_link_surface(tripod):
    obj = box((0.05, 0.05, 0.05), center=(0.0, 0.0, 0.12))
    scene = CollisionScene(tripod, obj)
    s = _tripod_rest(tripod)
    T = forward_kinematics(tripod, s)
    tips = [tripod.link_index(f"f{i}_distal") for i in range(3)]
    hand, _, _ = reproject_hand(tripod, s, tips, [obj.vertices.mean(axis=0)] * 3, T)
    c = _contacts(tripod, s, hand, [obj.vertices.mean(axis=0) + [0.0, 0.0, -0.02]] * 3)
    for _ in range(3):
        res = step(tripod, s, scene, c)
        s, c = res.state, res.contacts
        T = forward_kinematics(tripod, s)
        for h, p in zip(c.hand, c.hand_points):
            local = np.linalg.solve(T[h.link], np.append(p, 1.0))[:3]
            _, _, _, d, _ = tripod.links[h.link].mesh.closest(local[None])
            assert d[0] <= 1e-6


def test_step_is_deterministic(pincer):
    obj = box((0.06, 0.04, 0.04), center=(0.0, 0.0, 0.05))
    s = _open(pincer, 0.0)
    hand = _pads(pincer)
    c = _contacts(pincer, s, hand, [[-0.025, 0.0, 0.05], [0.025, 0.0, 0.05]])
    a = step(pincer, s, CollisionScene(pincer, obj), c)
    b = step(pincer, s, CollisionScene(pincer, obj), c)
    assert a.state.q.tobytes() == b.state.q.tobytes()
    assert a.hand_points.tobytes() == b.hand_points.tobytes()
    assert a.max_penetration == b.max_penetration


def test_log_has_one_record_per_substep(pincer):
    far = box((0.02, 0.02, 0.02), center=(1.0, 0.0, 0.0))
    s = _open(pincer, 0.02)
    hand = _pads(pincer)
    c = _contacts(pincer, s, hand, [[-0.05, 0.0, 0.05], [0.05, 0.0, 0.05]])
    log = io.StringIO()
    step(pincer, s, far, c, SimConfig(substeps=3), log)
    recs = [json.loads(l) for l in log.getvalue().splitlines()]
    assert [r["substep"] for r in recs] == [0, 1, 2]
    assert set(recs[0]["links"]) == {"palm", "jaw_left", "jaw_right"}


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(k_f=0.0)
    with pytest.raises(ValueError):
        SimConfig(substeps=0)


def test_damping_vector(pincer):
    d = SimConfig(damping=2.0).damping_vector(pincer)
    np.testing.assert_allclose(d, [6.0, 6.0, 6.0, 0.005, 0.005, 0.005, 2.0])
