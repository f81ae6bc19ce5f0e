import numpy as np
import pytest

from graspsynth import mesh
from graspsynth.mesh import closest_surface_point
from graspsynth.quality import (
    QualityConfig,
    QualityError,
    assemble_force_qp,
    build_contact_frame,
    evaluate_quality,
    linearize_cone,
    quality_gradient,
    wrench_basis,
)

from oracles import brute_force_residual, projected_gradient_force_qp


@pytest.fixture(scope="module")
def sphere():
    return mesh.uv_sphere(0.035, 48, 24)


def _random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _pg_oracle(frames, cfg, iters=3000, restarts=4):
    E = linearize_cone(cfg.mu, cfg.pyramid_edges)
    G = np.hstack([wrench_basis(f) @ E.T for f in frames])
    s = E[0, 0]
    best, _ = projected_gradient_force_qp(G, cfg.g, len(frames), len(E), 1.0 / s, cfg.lambda_min, iters, restarts)
    return best


# ------------------------------------------------------------------ frames


def test_frame_canonical_axis():
    f = build_contact_frame(np.zeros(3), [0.0, 0.0, 1.0])
    assert abs(f.d[0]) == pytest.approx(1.0)
    assert np.allclose(np.cross(f.d, f.c), f.n, atol=1e-15)


def test_frame_orthonormal_random():
    rng = np.random.default_rng(0)
    for n in _random_unit(rng, 1000):
        f = build_contact_frame(np.zeros(3), n)
        M = np.stack([f.n, f.d, f.c])
        assert np.allclose(M @ M.T, np.eye(3), atol=1e-12)
        assert np.allclose(np.cross(f.d, f.c), f.n, atol=1e-12)
        assert np.linalg.det(M.T) == pytest.approx(1.0, abs=1e-12)


def test_frame_flipped_normal():
    n = np.array([0.3, -0.5, 0.8])
    a, b = build_contact_frame(np.zeros(3), n), build_contact_frame(np.zeros(3), -n)
    assert np.allclose(a.n, -b.n)
    for f in (a, b):
        assert np.allclose(np.cross(f.d, f.c), f.n, atol=1e-12)


def test_zero_normal_rejected():
    with pytest.raises(QualityError):
        build_contact_frame(np.zeros(3), np.zeros(3))


# ---------------------------------------------------------- wrench basis


def test_wrench_basis_torque_column():
    f = build_contact_frame([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])
    W = wrench_basis(f)
    assert np.allclose(W[3:, 0], [0.0, -1.0, 0.0])


def test_wrench_basis_zero_lever_arm():
    f = build_contact_frame(np.zeros(3), [0.2, 0.3, 0.9])
    assert np.allclose(wrench_basis(f)[3:], 0.0)


def test_wrench_basis_componentwise():
    rng = np.random.default_rng(1)
    for _ in range(200):
        f = build_contact_frame(rng.normal(size=3), rng.normal(size=3))
        x = rng.normal(size=3)
        force = x[0] * f.n + x[1] * f.d + x[2] * f.c
        torque = np.cross(f.p, force)
        assert np.allclose(wrench_basis(f) @ x, np.concatenate([force, torque]), atol=1e-12)


# -------------------------------------------------------------- pyramid


def test_four_edge_pyramid():
    E = linearize_cone(1.0, 4)
    angles = np.degrees(np.arccos(E[:, 0]))
    assert np.allclose(angles, 45.0)
    assert np.allclose(np.abs(E[:, 1:]).max(axis=1), np.sqrt(0.5))


def test_edges_on_friction_bound():
    for mu in (0.1, 0.6, 1.5):
        E = linearize_cone(mu, 8)
        assert np.allclose(E[:, 1] ** 2 + E[:, 2] ** 2, mu**2 * E[:, 0] ** 2)
        assert np.allclose(np.linalg.norm(E, axis=1), 1.0)


def test_fine_pyramid_angular_gap():
    mu = 0.6
    E = linearize_cone(mu, 64)
    half = np.arctan(mu)
    # sweep the exact cone boundary; distance to the pyramid surface in angle
    worst = 0.0
    for t in np.linspace(0.0, 2 * np.pi, 5000):
        ray = np.array([1.0, mu * np.cos(t), mu * np.sin(t)])
        k = int(np.floor(t / (2 * np.pi / 64))) % 64
        a, b = E[k], E[(k + 1) % 64]
        # the facet plane through the apex, a and b: angle of ray above it
        nrm = np.cross(a, b)
        nrm /= np.linalg.norm(nrm)
        gap = np.degrees(np.arcsin(abs(ray @ nrm) / np.linalg.norm(ray)))
        worst = max(worst, gap)
    assert worst < 0.5
    assert half > 0


# ---------------------------------------------------------- QP assembly


def test_row_count():
    frames = [build_contact_frame(np.zeros(3), n) for n in np.eye(3)]
    p = assemble_force_qp(frames, QualityConfig())
    assert p.m == 3 + 1 + 3 * 8


def test_lambda_min_infeasible_rejected():
    frames = [build_contact_frame(np.zeros(3), [0, 0, 1.0])]
    with pytest.raises(QualityError):
        assemble_force_qp(frames, QualityConfig(lambda_min=1.5))


def test_single_contact_at_origin_brute_force():
    cfg = QualityConfig(pyramid_edges=4)
    f = build_contact_frame(np.zeros(3), [0.0, 0.0, 1.0])
    r = evaluate_quality([(f.p, f.n)], cfg)
    assert r.e == pytest.approx(cfg.lambda_min**2, abs=1e-9)
    s = linearize_cone(cfg.mu, 4)[0, 0]
    G = wrench_basis(f) @ linearize_cone(cfg.mu, 4).T
    grid = brute_force_residual(G, cfg.g, 1, 4, 1.0 / s, cfg.lambda_min, grid=21)
    assert r.e <= grid + 1e-9
    assert r.forces[0, 0] == pytest.approx(cfg.lambda_min, abs=1e-6)
    assert np.allclose(r.forces[0, 1:], 0.0, atol=1e-6)


def test_single_contact_with_lever_arm():
    cfg = QualityConfig()
    f = build_contact_frame([0.05, 0.0, 0.0], [0.0, 0.0, 1.0])
    r = evaluate_quality([(f.p, f.n)], cfg)
    col = wrench_basis(f)[:, 0]
    assert r.e == pytest.approx(cfg.lambda_min**2 * col @ col, rel=1e-6)


def test_north_pole(sphere):
    pole = closest_surface_point(sphere, [0.0, 0.0, 1.0])
    r = evaluate_quality([pole])
    assert r.e == pytest.approx(0.01, abs=1e-9)


def test_antipodal_and_tripod_closure(sphere):
    pts = [closest_surface_point(sphere, v) for v in ([0, 0, 1.0], [0, 0, -1.0])]
    assert evaluate_quality(pts, QualityConfig(mu=0.6)).e <= 1e-8
    ang = 2 * np.pi * np.arange(3) / 3
    pts = [closest_surface_point(sphere, [np.cos(a), np.sin(a), 0.0]) for a in ang]
    r = evaluate_quality(pts, QualityConfig(mu=0.6))
    assert r.e <= 1e-8
    assert _pg_oracle(r.frames, QualityConfig(mu=0.6)) <= 1e-8


def test_result_invariants():
    rng = np.random.default_rng(2)
    cfg = QualityConfig()
    for _ in range(50):
        m = int(rng.integers(1, 5))
        pts = [(p, n) for p, n in zip(rng.normal(scale=0.03, size=(m, 3)), _random_unit(rng, m))]
        r = evaluate_quality(pts, cfg)
        assert r.e >= 0.0
        assert r.e == pytest.approx(r.wrench_residual @ r.wrench_residual, abs=1e-9)
        assert r.forces[:, 0].sum() >= cfg.lambda_min - 1e-6
        assert np.all(r.forces[:, 0] <= 1.0 + 1e-6)
        tang = np.linalg.norm(r.forces[:, 1:], axis=1)
        assert np.all(tang <= cfg.mu * r.forces[:, 0] + 1e-6)


def test_matches_projected_gradient_oracle():
    rng = np.random.default_rng(3)
    cfg = QualityConfig()
    for _ in range(25):
        m = int(rng.integers(1, 4))
        pts = [(p, n) for p, n in zip(rng.normal(scale=0.03, size=(m, 3)), _random_unit(rng, m))]
        r = evaluate_quality(pts, cfg)
        ref = _pg_oracle(r.frames, cfg)
        assert r.e <= ref + 1e-7
        assert r.e == pytest.approx(ref, abs=1e-6)


def test_adding_contact_never_hurts():
    rng = np.random.default_rng(4)
    for _ in range(100):
        m = int(rng.integers(1, 5))
        pts = [(p, n) for p, n in zip(rng.normal(scale=0.03, size=(m + 1, 3)), _random_unit(rng, m + 1))]
        assert evaluate_quality(pts).e <= evaluate_quality(pts[:m]).e + 1e-7


def test_more_friction_never_hurts():
    rng = np.random.default_rng(5)
    for _ in range(100):
        m = int(rng.integers(1, 5))
        pts = [(p, n) for p, n in zip(rng.normal(scale=0.03, size=(m, 3)), _random_unit(rng, m))]
        lo, hi = sorted(rng.uniform(0.05, 1.2, size=2))
        assert evaluate_quality(pts, QualityConfig(mu=hi)).e <= evaluate_quality(pts, QualityConfig(mu=lo)).e + 1e-7


# -------------------------------------------------------------- gradient


def _interior_point(m, rng):
    f = int(rng.integers(len(m.faces)))
    b = rng.uniform(0.2, 1.0, size=3)
    return m.surface_point(f, b / b.sum())


def _fd_tangent(m, pts, i, direction, cfg, h=1e-5):
    """Central difference of e moving contact i within its face.

    The QP is re-solved to 1e-10 so solver noise stays below the step.
    """
    cfg = QualityConfig(mu=cfg.mu, lambda_min=cfg.lambda_min, g=cfg.g, tol=1e-10, max_iter=50_000)
    sp = pts[i]
    tri = m.triangles[sp.face]
    E = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
    vw = np.linalg.lstsq(E, direction, rcond=None)[0]
    db = np.array([-vw.sum(), vw[0], vw[1]])
    vals = []
    for sgn in (1.0, -1.0):
        moved = list(pts)
        moved[i] = m.surface_point(sp.face, sp.bary + sgn * h * db)
        vals.append(evaluate_quality(moved, cfg).e)
    return (vals[0] - vals[1]) / (2 * h)


def test_gradient_zero_at_closure(sphere):
    pts = [closest_surface_point(sphere, v) for v in ([0.1, 0.2, 1.0], [-0.1, -0.2, -1.0])]
    r = evaluate_quality(pts)
    assert r.e <= 1e-12
    assert np.allclose(quality_gradient(sphere, pts, result=r), 0.0, atol=1e-9)


def test_gradient_matches_finite_differences(sphere):
    rng = np.random.default_rng(6)
    cfg = QualityConfig()
    checked = 0
    while checked < 200:
        pts = [_interior_point(sphere, rng) for _ in range(3)]
        r = evaluate_quality(pts, cfg)
        if r.e < 1e-6:
            continue
        grad = quality_gradient(sphere, pts, cfg, r)
        i = int(rng.integers(3))
        n = sphere.face_normals[pts[i].face]
        t = rng.normal(size=3)
        t -= n * (n @ t)
        t /= np.linalg.norm(t)
        fd = _fd_tangent(sphere, pts, i, t, cfg)
        scale = np.linalg.norm(grad[i] - n * (n @ grad[i]))
        # the floor absorbs solver noise when a contact carries no force (gradient ~0)
        assert abs(grad[i] @ t - fd) <= 1e-2 * scale + 1e-8
        checked += 1


def test_translation_invariance_at_zero_residual(sphere):
    pts = [closest_surface_point(sphere, v) for v in ([0, 0, 1.0], [0, 0, -1.0])]
    shift = np.array([0.01, -0.02, 0.005])
    moved = [(p.position + shift, -p.normal) for p in pts]
    assert evaluate_quality(pts).e <= 1e-12
    assert evaluate_quality(moved).e <= 1e-12


# ------------------------------------------------------- torsional friction


def test_torsion_extends_feasible_set():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m = int(rng.integers(1, 4))
        pts = [(p, n) for p, n in zip(rng.normal(scale=0.03, size=(m, 3)), _random_unit(rng, m))]
        g = rng.normal(size=6)
        plain = evaluate_quality(pts, QualityConfig(g=g))
        tors = evaluate_quality(pts, QualityConfig(g=g, torsional_mu=0.02))
        assert tors.e <= plain.e + 1e-7
        assert np.all(np.abs(tors.torsion) <= 0.02 * tors.forces[:, 0] + 1e-6)
        assert tors.e == pytest.approx(tors.wrench_residual @ tors.wrench_residual, abs=1e-9)


def test_torsion_resists_twist_about_contact_axis():
    # antipodal pair along z cannot resist a torque about z without torsion
    pts = [([0, 0, 0.03], [0, 0, -1.0]), ([0, 0, -0.03], [0, 0, 1.0])]
    g = np.array([0, 0, 0, 0, 0, 0.01])
    assert evaluate_quality(pts, QualityConfig(g=g)).e == pytest.approx(1e-4, rel=1e-5)
    assert evaluate_quality(pts, QualityConfig(g=g, torsional_mu=0.02)).e <= 1e-10
