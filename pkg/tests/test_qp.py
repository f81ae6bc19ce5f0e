import numpy as np
import pytest

from graspsynth.qp import (
    QpError,
    QpProblem,
    kkt_residuals,
    solve,
    warm_start_solve,
)

from oracles import enumerate_qp

INF = np.inf


def _random_problem(rng, n=None, m=None):
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(n, 7))
    rank = int(rng.integers(0, n + 1))
    B = rng.normal(size=(n, rank))
    P = B @ B.T
    q = rng.normal(size=n) * 3.0
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    Ax0 = A @ x0
    lo = Ax0 - rng.uniform(0.0, 2.0, size=m)
    hi = Ax0 + rng.uniform(0.0, 2.0, size=m)
    # some one-sided rows and an occasional equality
    kind = rng.integers(0, 5, size=m)
    lo[kind == 0] = -INF
    hi[kind == 1] = INF
    hi[kind == 4] = lo[kind == 4] = Ax0[kind == 4]
    # keep the feasible set bounded so the optimum exists
    two_sided = A[(kind != 0) & (kind != 1)]
    if len(two_sided) < n or np.linalg.matrix_rank(two_sided) < n:
        lo = Ax0 - 1.0
        hi = Ax0 + 1.0
    return QpProblem(P, q, A, lo, hi)


def test_halfspace_projection():
    p = QpProblem(np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0], [INF])
    s = solve(p)
    assert s.status == "solved"
    assert np.allclose(s.x, [1.0, 0.0], atol=1e-9)
    assert s.objective == pytest.approx(0.5, abs=1e-9)


def test_unconstrained_stationary_point():
    p = QpProblem(np.eye(2), [-2.0, 0.0], np.zeros((0, 2)), [], [])
    s = solve(p)
    assert s.status == "solved"
    assert np.allclose(s.x, [2.0, 0.0], atol=1e-9)


def test_equality_constraint():
    p = QpProblem(np.eye(3), np.zeros(3), [[1.0, 1.0, 1.0]], [3.0], [3.0])
    s = solve(p)
    assert np.allclose(s.x, 1.0, atol=1e-8)


def test_infeasible_detected():
    p = QpProblem(np.eye(1), [0.0], [[1.0], [1.0]], [1.0, -INF], [INF, 0.0])
    assert solve(p).status == "infeasible"


def test_iteration_cap_returns_best_iterate():
    rng = np.random.default_rng(3)
    p = _random_problem(rng, 6, 6)
    s = solve(p, tol=1e-14, max_iter=3, polish=False)
    assert s.status == "max-iterations"
    assert s.iterations == 3
    assert np.all(np.isfinite(s.x))


@pytest.mark.parametrize("bad", ["P", "A", "bounds", "asym"])
def test_structural_errors(bad):
    P, q, A, lo, hi = np.eye(2), np.zeros(2), np.ones((1, 2)), np.zeros(1), np.ones(1)
    if bad == "P":
        P = np.eye(3)
    elif bad == "A":
        A = np.ones((1, 3))
    elif bad == "bounds":
        lo = np.array([2.0])
    else:
        P = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(QpError):
        QpProblem(P, q, A, lo, hi)


def test_agrees_with_active_set_enumeration():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(500):
        p = _random_problem(rng)
        s = solve(p)
        assert s.status == "solved"
        ref, _ = enumerate_qp(p.P, p.q_lin, p.A, p.lower, p.upper)
        worst = max(worst, abs(s.objective - ref))
        stat, prim, comp = kkt_residuals(p, s)
        assert max(stat, prim, comp) < 1e-5
    assert worst < 1e-5


def test_warm_start_from_own_solution():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = _random_problem(rng)
        s = solve(p)
        w = warm_start_solve(p, s)
        assert w.status == "solved"
        assert w.iterations <= 2
        # restarting never makes the objective worse
        assert w.objective <= s.objective + 1e-5


def test_warm_start_perturbed_matches_cold_solve():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p = _random_problem(rng)
        s = solve(p)
        d = rng.normal(size=p.n)
        d *= 1e-3 / np.linalg.norm(d)
        p2 = QpProblem(p.P, p.q_lin + d, p.A, p.lower, p.upper)
        assert warm_start_solve(p2, s).objective == pytest.approx(solve(p2).objective, abs=1e-5)


def test_warm_start_dimension_mismatch():
    s = solve(QpProblem(np.eye(2), np.zeros(2), np.eye(2), -np.ones(2), np.ones(2)))
    with pytest.raises(QpError):
        warm_start_solve(QpProblem(np.eye(3), np.zeros(3), np.eye(3), -np.ones(3), np.ones(3)), s)


def test_deterministic():
    rng = np.random.default_rng(4)
    p = _random_problem(rng, 5, 6)
    a, b = solve(p), solve(p)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_dump_round_trip():
    rng = np.random.default_rng(5)
    p = _random_problem(rng, 4, 5)
    r = QpProblem.parse(p.dump())
    for name in ("P", "q_lin", "A", "lower", "upper"):
        assert np.array_equal(getattr(p, name), getattr(r, name))
