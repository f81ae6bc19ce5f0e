"""Dense convex QP solver based on operator splitting.

Solves::

    minimize    1/2 x'Px + q'x
    subject to  lower <= Ax <= upper

with the ADMM iteration popularised by OSQP (Stellato et al., 2020):
relaxed x/z updates against a cached Cholesky factor, a scalar penalty that
is re-balanced from the primal/dual residual ratio, and a polish step that
solves the equality-constrained KKT system of the guessed active set. Only
dense linear algebra is used; the grasp metric produces problems with a few
dozen variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

SOLVED = "solved"
MAX_ITER = "max-iterations"
INFEASIBLE = "infeasible"
_STATUS = {0: SOLVED, 1: MAX_ITER, 2: INFEASIBLE}

SIGMA = 1e-6
ALPHA = 1.6
RHO_EQ_SCALE = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
ADAPT_EVERY = 25
POLISH_DELTA = 1e-9
POLISH_REPAIRS = 8
POLISH_TIGHTEN = 1e-3


class QpError(ValueError):
    pass


@dataclass
class QpProblem:
    P: np.ndarray
    q_lin: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=float)
        self.q_lin = np.ascontiguousarray(self.q_lin, dtype=float)
        self.A = np.ascontiguousarray(np.atleast_2d(self.A), dtype=float)
        self.lower = np.ascontiguousarray(self.lower, dtype=float)
        self.upper = np.ascontiguousarray(self.upper, dtype=float)
        n = len(self.q_lin)
        if self.P.shape != (n, n):
            raise QpError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape[1] != n or self.lower.shape != (self.A.shape[0],) or self.upper.shape != self.lower.shape:
            raise QpError("constraint dimensions are inconsistent")
        if not np.allclose(self.P, self.P.T, atol=1e-10, rtol=0.0):
            raise QpError("P is not symmetric")
        if np.any(self.lower > self.upper):
            raise QpError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return len(self.q_lin)

    @property
    def m(self) -> int:
        return len(self.lower)

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q_lin @ x)

    def dump(self) -> str:
        """Plain-text dump that :func:`QpProblem.parse` reads back exactly."""
        out = [f"qp {self.n} {self.m}"]
        for name, arr in (("P", self.P), ("q", self.q_lin), ("A", self.A), ("l", self.lower), ("u", self.upper)):
            out.append(name)
            for row in np.atleast_2d(arr):
                out.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(out) + "\n"

    @classmethod
    def parse(cls, text: str) -> "QpProblem":
        lines = iter(text.strip().splitlines())
        _, n, m = next(lines).split()
        n, m = int(n), int(m)
        blocks = {}
        for name, rows in (("P", n), ("q", 1), ("A", m), ("l", 1), ("u", 1)):
            assert next(lines).strip() == name
            blocks[name] = np.array([[float(v) for v in next(lines).split()] for _ in range(rows)])
        return cls(blocks["P"], blocks["q"][0], blocks["A"].reshape(m, n), blocks["l"][0], blocks["u"][0])


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    polished: bool = False
    # solver state kept for warm starts
    z: np.ndarray = field(default=None, repr=False)
    y: np.ndarray = field(default=None, repr=False)
    rho: float = 0.1


# --------------------------------------------------------------------- kernel


@njit(cache=True)
def _chol_solve(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _factor(P, A, rho_vec, sigma):
    n = P.shape[0]
    K = P.copy()
    for i in range(n):
        K[i, i] += sigma
    K += A.T @ (A * rho_vec[:, None])
    return np.linalg.cholesky(K)


@njit(cache=True)
def _inf_norm(v):
    out = 0.0
    for i in range(len(v)):
        a = abs(v[i])
        if a > out:
            out = a
    return out


@njit(cache=True)
def _rho_vector(l, u, rho):
    out = np.empty(len(l))
    for i in range(len(l)):
        if l[i] == -np.inf and u[i] == np.inf:
            out[i] = RHO_MIN
        elif u[i] - l[i] < 1e-12:
            out[i] = RHO_EQ_SCALE * rho
        else:
            out[i] = rho
    return out


@njit(cache=True)
def _residuals(P, q, A, x, z, y):
    Ax = A @ x
    Px = P @ x
    Aty = A.T @ y
    prim = _inf_norm(Ax - z)
    dual = _inf_norm(Px + q + Aty)
    return prim, dual, Ax, Px, Aty


@njit(cache=True)
def _kkt_solve(P, q, A, l, u, act):
    n = P.shape[0]
    m = A.shape[0]
    k = 0
    for i in range(m):
        if act[i] != 0:
            k += 1
    rows = np.empty(k, dtype=np.int64)
    b = np.empty(k)
    j = 0
    for i in range(m):
        if act[i] != 0:
            rows[j] = i
            b[j] = l[i] if act[i] < 0 else u[i]
            j += 1
    Aa = A[rows]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    Kreg = K.copy()
    for i in range(n):
        Kreg[i, i] += POLISH_DELTA
    for i in range(k):
        Kreg[n + i, n + i] -= POLISH_DELTA
    rhs = np.empty(n + k)
    rhs[:n] = -q
    rhs[n:] = b
    sol = np.linalg.solve(Kreg, rhs)
    # iterative refinement against the unregularised system
    for _ in range(5):
        sol = sol + np.linalg.solve(Kreg, rhs - K @ sol)
    yf = np.zeros(m)
    for j in range(k):
        yf[rows[j]] = sol[n + j]
    return sol[:n], yf


@njit(cache=True)
def _polish(P, q, A, l, u, z, y, tol):
    """Solve the KKT system of the active set guessed from (z, y).

    A wrong guess is repaired with a few active-set corrections: rows whose
    multiplier has the wrong sign are released, then violated rows are added.
    Returns (ok, x, y_full, z_full, prim, dual).
    """
    m = A.shape[0]
    act = np.zeros(m, dtype=np.int64)  # -1 lower, +1 upper, 0 inactive
    for i in range(m):
        if z[i] - l[i] < -y[i]:
            act[i] = -1
        elif u[i] - z[i] < y[i]:
            act[i] = 1
    x = np.zeros(P.shape[0])
    yf = np.zeros(m)
    for _ in range(POLISH_REPAIRS):
        x, yf = _kkt_solve(P, q, A, l, u, act)
        changed = False
        for i in range(m):
            if (act[i] < 0 and yf[i] > tol) or (act[i] > 0 and yf[i] < -tol):
                act[i] = 0
                changed = True
        if changed:
            continue
        Ax = A @ x
        for i in range(m):
            if act[i] == 0:
                if Ax[i] < l[i] - tol:
                    act[i] = -1
                    changed = True
                elif Ax[i] > u[i] + tol:
                    act[i] = 1
                    changed = True
        if not changed:
            zf = np.minimum(np.maximum(Ax, l), u)
            prim = _inf_norm(Ax - zf)
            dual = _inf_norm(P @ x + q + A.T @ yf)
            return prim <= tol and dual <= tol, x, yf, zf, prim, dual
    return False, x, yf, z, np.inf, np.inf


@njit(cache=True)
def _admm(P, q, A, l, u, x, z, y, rho, tol, max_iter, do_polish):
    """Returns (x, z, y, rho, iterations, status, prim, dual, polished)."""
    prim, dual, Ax, Px, Aty = _residuals(P, q, A, x, z, y)
    if prim <= tol and dual <= tol:
        return x, z, y, rho, 0, 0, prim, dual, False
    rho_vec = _rho_vector(l, u, rho)
    L = _factor(P, A, rho_vec, SIGMA)
    best_x = x.copy()
    best_z = z.copy()
    best_y = y.copy()
    best_res = max(prim, dual)
    next_polish = 10
    it = 0
    # when polishing, run past tol toward a tighter target before giving up
    target = tol * POLISH_TIGHTEN if do_polish else tol
    have_conv = False
    conv_x = x.copy()
    conv_z = z.copy()
    conv_y = y.copy()
    conv_prim = np.inf
    conv_dual = np.inf
    stop_at = max_iter
    while it < max_iter:
        it += 1
        y_prev = y.copy()
        rhs = SIGMA * x - q + A.T @ (rho_vec * z - y)
        xt = _chol_solve(L, rhs)
        zt = A @ xt
        x = ALPHA * xt + (1.0 - ALPHA) * x
        zr = ALPHA * zt + (1.0 - ALPHA) * z
        z = np.minimum(np.maximum(zr + y / rho_vec, l), u)
        y = y + rho_vec * (zr - z)
        prim, dual, Ax, Px, Aty = _residuals(P, q, A, x, z, y)
        if max(prim, dual) < best_res:
            best_res = max(prim, dual)
            best_x[:] = x
            best_z[:] = z
            best_y[:] = y
        converged = prim <= target and dual <= target
        if do_polish and (converged or it >= next_polish):
            next_polish = 2 * next_polish
            ok, xp, yp, zp, pp, dp = _polish(P, q, A, l, u, z, y, tol)
            if ok:
                return xp, zp, yp, rho, it, 0, pp, dp, True
        if prim <= tol and dual <= tol and not have_conv:
            # met the tolerance; keep iterating a while for a polishable iterate
            have_conv = True
            conv_x[:] = x
            conv_z[:] = z
            conv_y[:] = y
            conv_prim, conv_dual = prim, dual
            stop_at = min(max_iter, 3 * it + 50)
        if converged or (have_conv and it >= stop_at):
            if have_conv and not converged:
                return conv_x, conv_z, conv_y, rho, it, 0, conv_prim, conv_dual, False
            return x, z, y, rho, it, 0, prim, dual, False
        # primal infeasibility certificate
        dy = y - y_prev
        ndy = _inf_norm(dy)
        if ndy > 1e-12 and it > 50:
            Atdy = _inf_norm(A.T @ dy)
            supp = 0.0
            for i in range(len(dy)):
                if dy[i] > 0.0:
                    supp += u[i] * dy[i] if u[i] < np.inf else np.inf
                elif dy[i] < 0.0:
                    supp += l[i] * dy[i] if l[i] > -np.inf else np.inf
            if Atdy <= 1e-9 * ndy and supp < -1e-9 * ndy:
                return x, z, y, rho, it, 2, prim, dual, False
        if it % ADAPT_EVERY == 0:
            sp = prim / max(_inf_norm(Ax), _inf_norm(z), 1e-12)
            sd = dual / max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(q), 1e-12)
            ratio = np.sqrt(sp / max(sd, 1e-30))
            if ratio > 5.0 or ratio < 0.2:
                rho = min(max(rho * ratio, RHO_MIN), RHO_MAX)
                rho_vec = _rho_vector(l, u, rho)
                L = _factor(P, A, rho_vec, SIGMA)
    if do_polish:
        ok, xp, yp, zp, pp, dp = _polish(P, q, A, l, u, best_z, best_y, tol)
        if ok:
            return xp, zp, yp, rho, it, 0, pp, dp, True
    prim, dual, Ax, Px, Aty = _residuals(P, q, A, best_x, best_z, best_y)
    return best_x, best_z, best_y, rho, it, 1, prim, dual, False


# ------------------------------------------------------------------------ API


def _run(problem, x, z, y, rho, tol, max_iter, polish):
    x, z, y, rho, it, code, prim, dual, polished = _admm(
        problem.P, problem.q_lin, problem.A, problem.lower, problem.upper,
        x, z, y, float(rho), float(tol), int(max_iter), bool(polish),
    )
    return QpSolution(
        x=x,
        objective=problem.objective(x),
        status=_STATUS[int(code)],
        primal_residual=float(prim),
        dual_residual=float(dual),
        iterations=int(it),
        polished=bool(polished),
        z=z,
        y=y,
        rho=float(rho),
    )


def solve(problem: QpProblem, tol=1e-6, max_iter=4000, polish=True, rho=0.1) -> QpSolution:
    """Solve from a cold start.

    ``status`` is ``"solved"`` when both residuals are below ``tol``,
    ``"max-iterations"`` (best iterate returned) or ``"infeasible"``.
    """
    n, m = problem.n, problem.m
    z0 = np.clip(np.zeros(m), problem.lower, problem.upper)
    return _run(problem, np.zeros(n), z0, np.zeros(m), rho, tol, max_iter, polish)


def warm_start_solve(problem: QpProblem, previous: QpSolution, tol=1e-6, max_iter=4000, polish=True) -> QpSolution:
    """Like :func:`solve`, starting from a previous solution's primal/dual state."""
    if previous.x.shape != (problem.n,) or previous.y is None or previous.y.shape != (problem.m,):
        raise QpError("warm start has mismatched dimensions")
    z0 = np.clip(problem.A @ previous.x, problem.lower, problem.upper)
    return _run(problem, previous.x.copy(), z0, previous.y.copy(), previous.rho, tol, max_iter, polish)


def kkt_residuals(problem: QpProblem, sol: QpSolution):
    """(stationarity, primal infeasibility, complementarity) in the inf-norm.

    A multiplier pointing at an infinite bound counts fully as a
    complementarity violation.
    """
    x, y = sol.x, sol.y
    Ax = problem.A @ x
    stat = np.max(np.abs(problem.P @ x + problem.q_lin + problem.A.T @ y))
    prim = np.max(np.maximum(problem.lower - Ax, 0.0) + np.maximum(Ax - problem.upper, 0.0), initial=0.0)
    y_lo = np.maximum(-y, 0.0)
    y_hi = np.maximum(y, 0.0)
    lo_gap = np.where(np.isfinite(problem.lower), np.abs(Ax - problem.lower), 1.0)
    hi_gap = np.where(np.isfinite(problem.upper), np.abs(problem.upper - Ax), 1.0)
    comp = np.max(np.maximum(y_lo * lo_gap, y_hi * hi_gap), initial=0.0)
    return float(stat), float(prim), float(comp)
