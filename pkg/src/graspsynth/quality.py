"""Force-closure quality metric.

For contacts with inward normals the metric is the squared residual wrench
of the best admissible contact forces::

    e = min || sum_i J_i^T x_i - g ||^2
        s.t. x_i in a linearized friction cone, 0 <= x_i1 <= 1,
             sum_i x_i1 >= lambda_min

Local forces are written in the contact frame (n, d, c) and the wrench
basis is [[n, d, c], [p x n, p x d, p x c]], with torques about the object
origin. The cone is replaced by an inscribed pyramid whose edge weights are
the QP variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import SurfacePoint, TriMesh, interpolated_normal_jacobian
from .qp import QpProblem, QpSolution, solve, warm_start_solve
from .transforms import skew

_AXES = np.eye(3)


class QualityError(ValueError):
    pass


@dataclass
class ContactFrame:
    p: np.ndarray
    n: np.ndarray
    d: np.ndarray
    c: np.ndarray
    axis: int = 0  # canonical axis used to build d

    @property
    def R(self):
        """Columns (n, d, c): maps local force coordinates to world."""
        return np.stack([self.n, self.d, self.c], axis=1)


@dataclass
class QualityConfig:
    mu: float = 0.6
    lambda_min: float = 0.1
    g: np.ndarray = field(default_factory=lambda: np.zeros(6))
    pyramid_edges: int = 8
    torsional_mu: float = 0.0  # pure-torque capacity per unit normal force; 0 disables
    tol: float = 1e-6
    max_iter: int = 4000

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        if self.mu <= 0 or self.lambda_min <= 0:
            raise QualityError("mu and lambda_min must be positive")
        if self.torsional_mu < 0:
            raise QualityError("torsional_mu must be non-negative")
        if self.pyramid_edges < 3:
            raise QualityError("need at least 3 pyramid edges")
        if self.g.shape != (6,):
            raise QualityError("external wrench g must have 6 components")


@dataclass
class QualityResult:
    e: float
    forces: np.ndarray  # (m, 3) local (normal, d, c) components
    wrench_residual: np.ndarray
    torsion: np.ndarray  # (m,) torque about each contact normal
    frames: list
    solution: QpSolution = field(repr=False, default=None)


def build_contact_frame(p, n) -> ContactFrame:
    """Right-handed frame with n = d x c.

    d = normalize(n x a) where a is the coordinate axis least aligned with n
    (highest index on ties, so n = z gives d along -x), and c = n x d.
    """
    n = np.asarray(n, dtype=float)
    norm = np.linalg.norm(n)
    if not norm > 1e-12:
        raise QualityError("contact normal has zero length")
    n = n / norm
    k = 2 - int(np.argmin(np.abs(n[::-1])))
    d = np.cross(n, _AXES[k])
    d /= np.linalg.norm(d)
    c = np.cross(n, d)
    return ContactFrame(np.asarray(p, dtype=float), n, d, c, k)


def wrench_basis(frame: ContactFrame):
    """6x3 matrix whose columns are the wrenches of unit n, d, c forces."""
    R = frame.R
    return np.vstack([R, np.cross(frame.p, R.T).T])


def linearize_cone(mu, edges=8):
    """Unit edge directions of the inscribed pyramid, in local (n, d, c) coordinates."""
    t = 2.0 * np.pi * np.arange(edges) / edges
    E = np.stack([np.ones(edges), mu * np.cos(t), mu * np.sin(t)], axis=1)
    return E / np.sqrt(1.0 + mu * mu)


def _wrench_matrix(frames, edges_local):
    """6 x (m*k) map from edge weights to total wrench."""
    return np.hstack([wrench_basis(f) @ edges_local.T for f in frames])


def assemble_force_qp(frames, config: QualityConfig) -> QpProblem:
    """QP over pyramid edge weights w >= 0.

    Rows: one per contact for 0 <= x_i1 <= 1, one for sum x_i1 >= lambda_min,
    then one nonnegativity row per weight. With torsional friction each
    contact also gets a +/- torque pair (t+ + t- <= torsional_mu * x_i1),
    appended after the edge weights.
    """
    m = len(frames)
    if m == 0:
        raise QualityError("need at least one contact")
    if config.lambda_min > m:
        raise QualityError(f"lambda_min={config.lambda_min} is infeasible with {m} contacts (x_i1 <= 1)")
    E = linearize_cone(config.mu, config.pyramid_edges)
    k = len(E)
    G = _wrench_matrix(frames, E)
    s = E[0, 0]  # normal component of every edge
    nw = m * k
    rows = [np.zeros((m + 1, nw))]
    for i in range(m):
        rows[0][i, i * k : (i + 1) * k] = s
    rows[0][m, :] = s
    lower = [np.zeros(m), [config.lambda_min]]
    upper = [np.ones(m), [np.inf]]
    if config.torsional_mu > 0:
        T = np.zeros((6, 2 * m))
        for i, f in enumerate(frames):
            T[3:, 2 * i] = f.n
            T[3:, 2 * i + 1] = -f.n
        G = np.hstack([G, T])
        cap = np.zeros((m, nw + 2 * m))
        for i in range(m):
            cap[i, i * k : (i + 1) * k] = -config.torsional_mu * s
            cap[i, nw + 2 * i : nw + 2 * i + 2] = 1.0
        rows[0] = np.hstack([rows[0], np.zeros((m + 1, 2 * m))])
        rows.append(cap)
        lower.append(np.full(m, -np.inf))
        upper.append(np.zeros(m))
    n = G.shape[1]
    rows.append(np.eye(n))
    lower.append(np.zeros(n))
    upper.append(np.full(n, np.inf))
    P = 2.0 * G.T @ G
    return QpProblem(0.5 * (P + P.T), -2.0 * G.T @ config.g, np.vstack(rows), np.concatenate(lower), np.concatenate(upper))


def evaluate_quality(points, config: QualityConfig = None, warm: QualityResult = None) -> QualityResult:
    """Metric for contacts at surface points (outward normals are flipped inward).

    ``points`` may be SurfacePoints or (position, inward normal) pairs.
    """
    config = config or QualityConfig()
    frames = []
    for pt in points:
        if isinstance(pt, SurfacePoint):
            frames.append(build_contact_frame(pt.position, -pt.normal))
        else:
            frames.append(build_contact_frame(pt[0], pt[1]))
    problem = assemble_force_qp(frames, config)
    if warm is not None and warm.solution is not None and warm.solution.x.shape == (problem.n,):
        sol = warm_start_solve(problem, warm.solution, config.tol, config.max_iter)
    else:
        sol = solve(problem, config.tol, config.max_iter)
    if sol.status == "infeasible":
        raise QualityError("force QP reported infeasible")
    E = linearize_cone(config.mu, config.pyramid_edges)
    k = len(E)
    m = len(frames)
    w = np.maximum(sol.x, 0.0)
    forces = np.stack([w[i * k : (i + 1) * k] @ E for i in range(m)])
    torsion = np.zeros(m)
    if config.torsional_mu > 0:
        t = w[m * k :].reshape(m, 2)
        torsion = t[:, 0] - t[:, 1]
    resid = -config.g.copy()
    for f, x, tau in zip(frames, forces, torsion):
        resid += wrench_basis(f) @ x
        resid[3:] += tau * f.n
    return QualityResult(float(resid @ resid), forces, resid, torsion, frames, sol)


def _tangent_jacobians(frame: ContactFrame):
    """d(d)/d(n) and d(c)/d(n) for the fixed canonical axis of the frame."""
    n, d = frame.n, frame.d
    u = np.cross(n, _AXES[frame.axis])
    dd = (np.eye(3) - np.outer(d, d)) @ (-skew(_AXES[frame.axis])) / np.linalg.norm(u)
    dc = -skew(d) + skew(n) @ dd
    return dd, dc


def quality_gradient(mesh: TriMesh, points, config: QualityConfig = None, result: QualityResult = None):
    """de/dp for each contact, shape (m, 3).

    Forces are held at the QP optimum (envelope theorem); the inward normal
    moves with the point through the interpolated-normal Jacobian of the
    containing face. Points on a face edge get the one-sided value.
    """
    config = config or QualityConfig()
    if result is None:
        result = evaluate_quality(points, config)
    rf, rt = result.wrench_residual[:3], result.wrench_residual[3:]
    grads = np.zeros((len(points), 3))
    for i, (pt, frame, x) in enumerate(zip(points, result.frames, result.forces)):
        Jn = -interpolated_normal_jacobian(mesh, pt)
        dd, dc = _tangent_jacobians(frame)
        F = frame.R @ x
        Fp = (x[0] * np.eye(3) + x[1] * dd + x[2] * dc) @ Jn
        Tp = -skew(F) + skew(frame.p) @ Fp + result.torsion[i] * Jn
        grads[i] = 2.0 * (Fp.T @ rf + Tp.T @ rt)
    return grads
