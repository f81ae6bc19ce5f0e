"""Watertight triangle meshes with BVH-accelerated proximity queries.

Stored normals point outward. Contact code negates them where an inward
normal is required.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .transforms import invert_pose, transform_points

DEFAULT_SAMPLES = 4096
LEAF_SIZE = 4
GRID_SPACING = 2e-3


class MeshError(ValueError):
    """Raised for structurally invalid meshes (empty, open, bad indices)."""


@dataclass(frozen=True)
class SurfacePoint:
    """A point bound to one face of a mesh.

    ``normal`` is the outward, barycentrically blended vertex normal.
    ``distance`` is the unsigned distance from the query that produced it
    (zero when constructed directly).
    """

    face: int
    bary: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    distance: float = 0.0

    @property
    def on_boundary(self) -> bool:
        return bool(np.min(self.bary) <= 1e-9)


class TriMesh:
    """Immutable triangle mesh with a bounding-volume hierarchy over faces.

    Parameters
    ----------
    vertices : (V, 3) array
    faces : (F, 3) int array, counter-clockwise seen from outside
    vertex_normals : (V, 3) array, optional
        Smooth per-vertex normals. When given they are used for every face
        corner. Otherwise normals are accumulated per corner from incident
        faces whose normal lies within ``crease_angle`` degrees, so flat
        regions (box faces, cylinder caps) keep exact face normals.
    validate : bool
        Reject open or inconsistently oriented meshes.
    """

    def __init__(self, vertices, faces, vertex_normals=None, crease_angle=40.0, validate=True, name=""):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if faces.size == 0 or vertices.size == 0:
            raise MeshError("empty mesh")
        if faces.ndim != 2 or faces.shape[1] != 3 or vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must be (V, 3) and faces (F, 3)")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise MeshError("face index out of range")
        self.name = name
        self.vertices = vertices
        self.faces = faces
        self.triangles = np.ascontiguousarray(vertices[faces])
        e1 = self.triangles[:, 1] - self.triangles[:, 0]
        e2 = self.triangles[:, 2] - self.triangles[:, 0]
        cross = np.cross(e1, e2)
        norm = np.linalg.norm(cross, axis=1)
        if np.any(norm <= 0.0):
            raise MeshError(f"{int(np.sum(norm <= 0.0))} degenerate faces")
        self.areas = 0.5 * norm
        self.face_normals = cross / norm[:, None]
        if validate:
            check_watertight(faces)
            if self.volume <= 0.0:
                raise MeshError("mesh is inside-out (non-positive enclosed volume)")
        self._angles = _corner_angles(self.triangles)
        self.vertex_pseudonormals = self._vertex_sum(self.face_normals, self._angles)
        self.edge_pseudonormals = self._edge_normals()
        if vertex_normals is not None:
            vn = np.asarray(vertex_normals, dtype=float)
            self.vertex_normals = vn / np.linalg.norm(vn, axis=1, keepdims=True)
            self.corner_normals = np.ascontiguousarray(self.vertex_normals[faces])
        else:
            vn = self.vertex_pseudonormals
            self.vertex_normals = vn / np.linalg.norm(vn, axis=1, keepdims=True)
            self.corner_normals = self._crease_normals(np.cos(np.radians(crease_angle)))
        self.bounds = np.array([vertices.min(axis=0), vertices.max(axis=0)])
        self._build_bvh()
        self._samples = {}
        self._grid = None

    # ------------------------------------------------------------------ setup

    @property
    def volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def _vertex_sum(self, per_face, angles):
        out = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(out, self.faces[:, k], per_face * angles[:, k : k + 1])
        return out

    def _edge_normals(self):
        F = len(self.faces)
        a = self.faces
        b = np.roll(self.faces, -1, axis=1)
        key = np.minimum(a, b) * (len(self.vertices) + 1) + np.maximum(a, b)
        flat = key.ravel()
        fidx = np.repeat(np.arange(F), 3)
        order = np.argsort(flat, kind="stable")
        out = np.array(self.face_normals[fidx])
        sk = flat[order]
        same = np.nonzero(sk[1:] == sk[:-1])[0]
        i, j = order[same], order[same + 1]
        out[i] += self.face_normals[fidx[j]]
        out[j] += self.face_normals[fidx[i]]
        return np.ascontiguousarray(out.reshape(F, 3, 3))

    def _crease_normals(self, cos_crease):
        F = len(self.faces)
        out = np.zeros((F, 3, 3))
        corners = self.faces.ravel()
        order = np.argsort(corners, kind="stable")
        bounds = np.searchsorted(corners[order], np.arange(len(self.vertices) + 1))
        fn = self.face_normals
        ang = self._angles.ravel()
        for v in range(len(self.vertices)):
            idx = order[bounds[v] : bounds[v + 1]]
            if len(idx) == 0:
                continue
            fs = idx // 3
            n = fn[fs]
            w = ang[idx]
            agree = (n @ n.T) >= cos_crease
            acc = (agree * w[None, :]) @ n
            acc /= np.linalg.norm(acc, axis=1, keepdims=True)
            out[fs, idx % 3] = acc
        return out

    def _build_bvh(self):
        cent = self.triangles.mean(axis=1)
        tmin = self.triangles.min(axis=1)
        tmax = self.triangles.max(axis=1)
        lo, hi, left, right, start, count = [], [], [], [], [], []
        order = []
        stack = [(np.arange(len(self.faces)), -1, 0)]
        while stack:
            idx, parent, side = stack.pop()
            node = len(lo)
            lo.append(tmin[idx].min(axis=0))
            hi.append(tmax[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            if parent >= 0:
                (left if side == 0 else right)[parent] = node
            if len(idx) <= LEAF_SIZE:
                start[node] = len(order)
                count[node] = len(idx)
                order.extend(idx.tolist())
                continue
            c = cent[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            srt = idx[np.argsort(c[:, axis], kind="stable")]
            half = len(srt) // 2
            stack.append((srt[half:], node, 1))
            stack.append((srt[:half], node, 0))
        self._bvh = (
            np.ascontiguousarray(lo),
            np.ascontiguousarray(hi),
            np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64),
            np.asarray(start, dtype=np.int64),
            np.asarray(count, dtype=np.int64),
            np.asarray(order, dtype=np.int64),
        )

    # ---------------------------------------------------------------- queries

    def closest(self, points, max_distance=np.inf):
        """Batch closest-point query.

        Returns ``(face, bary, feature, distance, closest)`` arrays. Queries
        farther than ``max_distance`` from the surface get face -1.
        """
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        lo, hi, left, right, start, count, order = self._bvh
        face, bary, feat, d2, cp = _kernels.bvh_closest(
            pts, self.triangles, lo, hi, left, right, start, count, order, float(max_distance) ** 2
        )
        return face, bary, feat, np.sqrt(d2), cp

    def signed_distances(self, points, max_distance=np.inf):
        """Signed distance (negative inside) for a batch of points.

        Points farther than ``max_distance`` report ``+inf``; callers using a
        cutoff must know such points are outside by other means.
        """
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        face, bary, feat, dist, cp = self.closest(pts, max_distance)
        sign = _kernels.pseudonormal_sign(
            pts, cp, face, feat, self.faces, self.face_normals, self.edge_pseudonormals, self.vertex_pseudonormals
        )
        return sign * dist, face, cp

    def maybe_within(self, points, margin=0.0):
        """Conservative filter: False only where signed distance surely exceeds ``margin``.

        Uses a lazily built grid of signed distances (2 mm spacing, coarser
        for meshes over ~10 cm, padded by two cells) and the 1-Lipschitz
        bound sd(p) >= sd(node) - |p - node|. ``margin`` must stay below the
        padding.
        """
        origin, h, values = self.distance_grid()
        pts = np.atleast_2d(points)
        idx = np.rint((pts - origin) / h).astype(np.int64)
        shape = np.array(values.shape)
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.zeros(len(pts), dtype=bool)
        if np.any(inside):
            ii = idx[inside]
            r = np.linalg.norm(pts[inside] - (origin + ii * h), axis=1)
            out[inside] = values[ii[:, 0], ii[:, 1], ii[:, 2]] - r <= margin
        return out

    def distance_grid(self):
        """``(origin, spacing, values)`` of the cached coarse signed-distance grid."""
        if self._grid is None:
            h = max(GRID_SPACING, float(np.ptp(self.bounds, axis=0).max()) / 48.0)
            self._grid = _distance_grid(self, h, 2.0 * h)
        return self._grid

    def inside_samples(self, samples, M):
        """Samples mapped by the 4x4 ``M`` that land strictly inside this mesh.

        Returns ``(index, depth, mapped point, closest surface point)``, the
        points in this mesh's frame.
        """
        origin, h, values = self.distance_grid()
        return _kernels.penetrating_samples(
            samples, np.ascontiguousarray(M, dtype=float), self.bounds[0], self.bounds[1], origin, float(h), values,
            self.triangles, *self._bvh, self.faces, self.face_normals, self.edge_pseudonormals, self.vertex_pseudonormals,
        )

    def normal_at(self, face, bary):
        n = np.einsum("k,kj->j", bary, self.corner_normals[face])
        return n / np.linalg.norm(n)

    def normals_at(self, faces, bary):
        n = np.einsum("ik,ikj->ij", bary, self.corner_normals[faces])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def surface_point(self, face, bary) -> SurfacePoint:
        bary = np.asarray(bary, dtype=float)
        pos = bary @ self.triangles[face]
        return SurfacePoint(int(face), bary, pos, self.normal_at(face, bary))

    def sample_surface(self, n, rng):
        """``n`` points uniform by area. Returns ``(faces, bary, positions)``."""
        faces = rng.choice(len(self.faces), size=n, p=self.areas / self.areas.sum())
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
        pos = np.einsum("ik,ikj->ij", bary, self.triangles[faces])
        return faces, bary, pos

    def surface_samples(self, n=DEFAULT_SAMPLES):
        """Deterministic blue-noise surface samples (farthest-point thinning)."""
        if n not in self._samples:
            rng = np.random.default_rng(0)
            _, _, dense = self.sample_surface(6 * n, rng)
            keep = _kernels.farthest_point_subsample(dense, n, 0)
            self._samples[n] = np.ascontiguousarray(dense[np.sort(keep)])
        return self._samples[n]

    def __repr__(self):
        return f"TriMesh({self.name!r}, V={len(self.vertices)}, F={len(self.faces)})"


def _distance_grid(mesh, h, pad):
    lo = mesh.bounds[0] - pad
    n = np.ceil((mesh.bounds[1] + pad - lo) / h).astype(int) + 1
    axes = [lo[k] + h * np.arange(n[k]) for k in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    sd, _, _ = mesh.signed_distances(nodes)
    return lo, h, sd.reshape(n)


def _corner_angles(tris):
    out = np.empty(tris.shape[:2])
    for k in range(3):
        a = tris[:, (k + 1) % 3] - tris[:, k]
        b = tris[:, (k + 2) % 3] - tris[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out[:, k] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return out


def boundary_edges(faces):
    """Directed edges without a matching opposite edge."""
    faces = np.asarray(faces, dtype=np.int64)
    a = faces.ravel()
    b = np.roll(faces, -1, axis=1).ravel()
    fwd = set(zip(a.tolist(), b.tolist()))
    return sorted((i, j) for i, j in fwd if (j, i) not in fwd)


def check_watertight(faces):
    faces = np.asarray(faces, dtype=np.int64)
    a = faces.ravel()
    b = np.roll(faces, -1, axis=1).ravel()
    pairs = np.stack([a, b], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    if np.any(counts > 1):
        dup = uniq[counts > 1][:10].tolist()
        raise MeshError(f"inconsistent orientation or non-manifold edges: {dup}")
    open_edges = boundary_edges(faces)
    if open_edges:
        shown = ", ".join(f"{i}-{j}" for i, j in open_edges[:20])
        more = "" if len(open_edges) <= 20 else f" (+{len(open_edges) - 20} more)"
        raise MeshError(f"mesh is not watertight; {len(open_edges)} boundary edges: {shown}{more}")


# -------------------------------------------------------------------- queries


def closest_surface_point(mesh: TriMesh, query) -> SurfacePoint:
    face, bary, _, dist, cp = mesh.closest(np.asarray(query, dtype=float)[None, :])
    f = int(face[0])
    return SurfacePoint(f, bary[0], cp[0], mesh.normal_at(f, bary[0]), float(dist[0]))


def project_points(mesh: TriMesh, points):
    """Closest surface points for a batch of queries, as SurfacePoints."""
    face, bary, _, dist, cp = mesh.closest(points)
    normals = mesh.normals_at(face, bary)
    return [SurfacePoint(int(face[i]), bary[i], cp[i], normals[i], float(dist[i])) for i in range(len(face))]


def signed_distance(mesh: TriMesh, query) -> float:
    sd, _, _ = mesh.signed_distances(np.asarray(query, dtype=float)[None, :])
    return float(sd[0])


def interpolated_normal_jacobian(mesh: TriMesh, point: SurfacePoint):
    """d(normalized blended outward normal) / d(position), in-face motion only.

    Motion along the face normal is projected out, so the Jacobian has that
    direction in its null space. On a face edge the value is the one-sided
    derivative of the containing face.
    """
    tri = mesh.triangles[point.face]
    N = mesh.corner_normals[point.face]
    E = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)  # 3x2
    dvw = np.linalg.solve(E.T @ E, E.T)  # 2x3: d(v, w)/dp within the plane
    raw = point.bary @ N
    length = np.linalg.norm(raw)
    n = raw / length
    draw = np.stack([N[1] - N[0], N[2] - N[0]], axis=1) @ dvw
    return (np.eye(3) - np.outer(n, n)) @ draw / length


def max_penetration_depth(mesh_a: TriMesh, mesh_b: TriMesh, pose_a=None, pose_b=None, n_samples=DEFAULT_SAMPLES):
    """Deepest sampled penetration between two posed meshes, in millimetres.

    Samples of each body are tested against the other's signed distance and
    the larger of the two depths is returned; 0 when disjoint.
    """
    pose_a = np.eye(4) if pose_a is None else pose_a
    pose_b = np.eye(4) if pose_b is None else pose_b
    a_to_b = invert_pose(pose_b) @ pose_a
    b_to_a = invert_pose(pose_a) @ pose_b
    depth = 0.0
    for src, dst, T in ((mesh_a, mesh_b, a_to_b), (mesh_b, mesh_a, b_to_a)):
        pts = transform_points(T, src.surface_samples(n_samples))
        inside = np.all((pts >= dst.bounds[0]) & (pts <= dst.bounds[1]), axis=1)
        inside[inside] = dst.maybe_within(pts[inside])
        if not np.any(inside):
            continue
        sd, _, _ = dst.signed_distances(pts[inside])
        depth = max(depth, float(-sd.min()))
    return 1000.0 * depth


# ------------------------------------------------------------------------- IO


def load_mesh(path, **kwargs) -> TriMesh:
    """Load an OBJ or binary STL file; open meshes raise MeshError.

    OBJ files carrying one ``vn`` line per ``v`` line keep those as smooth
    vertex normals.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        v, f, vn = _read_obj(path)
        if vn is not None:
            kwargs.setdefault("vertex_normals", vn)
    elif suffix == ".stl":
        v, f = _read_stl(path)
    else:
        raise MeshError(f"unsupported mesh format: {path.suffix}")
    kwargs.setdefault("name", path.stem)
    return TriMesh(v, f, **kwargs)


def _read_obj(path):
    verts, normals, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not faces:
        raise MeshError(f"{path}: no faces")
    vn = np.array(normals, dtype=float) if normals and len(normals) == len(verts) else None
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64), vn


def _read_stl(path):
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise MeshError(f"{path}: truncated STL header")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) < 84 + 50 * n:
        raise MeshError(f"{path}: expected {n} triangles, file too short")
    rec = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    tris = np.frombuffer(data, dtype=rec, count=n, offset=84)["v"].astype(float)
    flat = tris.reshape(-1, 3)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1, 3).astype(np.int64)


def write_stl(path, mesh: TriMesh):
    rec = np.zeros(len(mesh.faces), dtype=[("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["normal"] = mesh.face_normals
    rec["v"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(b"\0" * 80)
        fh.write(struct.pack("<I", len(mesh.faces)))
        fh.write(rec.tobytes())


def write_obj(path, groups):
    """Write ``[(name, vertices, faces[, normals]), ...]`` as one OBJ with named groups."""
    lines = []
    offset = 1
    for group in groups:
        name, verts, faces = group[:3]
        lines.append(f"g {name}")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(verts, dtype=float).tolist())
        if len(group) > 3 and group[3] is not None:
            lines.extend(f"vn {x!r} {y!r} {z!r}" for x, y, z in np.asarray(group[3], dtype=float).tolist())
        lines.extend(f"f {a + offset} {b + offset} {c + offset}" for a, b, c in np.asarray(faces).tolist())
        offset += len(verts)
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj_groups(path):
    """Inverse of :func:`write_obj`: ``{name: (vertices, faces)}``."""
    groups = {}
    current = None
    verts = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "g":
            current = " ".join(parts[1:])
            groups[current] = ([], [])
        elif parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
            groups[current][0].append(len(verts) - 1)
        elif parts[0] == "f":
            groups[current][1].append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    allv = np.array(verts)
    out = {}
    for name, (vidx, faces) in groups.items():
        base = vidx[0] if vidx else 0
        out[name] = (allv[vidx], np.array(faces, dtype=np.int64).reshape(-1, 3) - base)
    return out


# ----------------------------------------------------------------- primitives


def uv_sphere(radius=1.0, n_lon=48, n_lat=24, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Latitude-longitude sphere with pole vertices and exact radial normals."""
    verts = [[0.0, 0.0, 1.0]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2.0 * np.pi * j / n_lon
            verts.append([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    verts.append([0.0, 0.0, -1.0])
    verts = np.array(verts)
    faces = []

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    for j in range(n_lon):
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    south = len(verts) - 1
    for j in range(n_lon):
        faces.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    return TriMesh(verts * radius + np.asarray(center), faces, vertex_normals=verts, name="sphere")


def box(extents=(1.0, 1.0, 1.0), divisions=6, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box; each face is a ``divisions`` x ``divisions`` grid."""
    half = np.asarray(extents, dtype=float) / 2.0
    n = divisions
    grid = np.linspace(-1.0, 1.0, n + 1)
    key_to_idx = {}
    verts = []

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in key_to_idx:
            key_to_idx[key] = len(verts)
            verts.append(p)
        return key_to_idx[key]

    faces = []
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for sgn in (1.0, -1.0):
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = sgn
                        p[u] = grid[i + di]
                        p[v] = grid[j + dj]
                        quad.append(vid(p))
                    a, b, c, d = quad
                    if sgn > 0:
                        faces += [[a, b, c], [a, c, d]]
                    else:
                        faces += [[a, c, b], [a, d, c]]
    verts = np.array(verts) * half + np.asarray(center)
    return TriMesh(verts, faces, name="box")


def cylinder(radius=1.0, height=1.0, n_seg=48, n_h=8, n_cap=4) -> TriMesh:
    """Closed cylinder along z centred at the origin, flat caps."""
    verts = []
    faces = []
    zs = np.linspace(-height / 2, height / 2, n_h + 1)
    ang = 2.0 * np.pi * np.arange(n_seg) / n_seg
    ring_dir = np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def add_ring(r, z):
        base = len(verts)
        for c, s in ring_dir:
            verts.append([r * c, r * s, z])
        return base

    side = [add_ring(radius, z) for z in zs]
    for k in range(n_h):
        a0, b0 = side[k], side[k + 1]
        for j in range(n_seg):
            j1 = (j + 1) % n_seg
            faces += [[a0 + j, a0 + j1, b0 + j1], [a0 + j, b0 + j1, b0 + j]]
    for z, top in ((zs[-1], True), (zs[0], False)):
        rings = [side[-1] if top else side[0]]
        for r in np.linspace(radius, 0.0, n_cap + 1)[1:-1]:
            rings.append(add_ring(r, z))
        centre = len(verts)
        verts.append([0.0, 0.0, z])
        for k in range(len(rings) - 1):
            a0, b0 = rings[k], rings[k + 1]
            for j in range(n_seg):
                j1 = (j + 1) % n_seg
                if top:
                    faces += [[a0 + j, a0 + j1, b0 + j1], [a0 + j, b0 + j1, b0 + j]]
                else:
                    faces += [[a0 + j, b0 + j1, a0 + j1], [a0 + j, b0 + j, b0 + j1]]
        last = rings[-1]
        for j in range(n_seg):
            j1 = (j + 1) % n_seg
            faces.append([last + j, last + j1, centre] if top else [last + j1, last + j, centre])
    return TriMesh(np.array(verts), faces, name="cylinder")


def capsule(radius=1.0, length=1.0, n_lon=32, n_lat=16) -> TriMesh:
    """Capsule along z: cylinder of ``length`` capped by hemispheres."""
    n_lat += n_lat % 2
    verts, normals = [[0.0, 0.0, 1.0]], [[0.0, 0.0, 1.0]]
    rows = []
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        # duplicate the equator row so the straight section has its own ring
        reps = 2 if i == n_lat // 2 else 1
        for r in range(reps):
            offset = length / 2 if (i < n_lat // 2 or (i == n_lat // 2 and r == 0)) else -length / 2
            rows.append(len(verts))
            for j in range(n_lon):
                phi = 2.0 * np.pi * j / n_lon
                n = [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
                normals.append(n)
                verts.append([n[0], n[1], n[2] + offset / radius])
    verts[0][2] += length / 2 / radius
    verts.append([0.0, 0.0, -1.0 - length / 2 / radius])
    normals.append([0.0, 0.0, -1.0])
    south = len(verts) - 1
    faces = []
    for j in range(n_lon):
        faces.append([0, rows[0] + j, rows[0] + (j + 1) % n_lon])
    for k in range(len(rows) - 1):
        a0, b0 = rows[k], rows[k + 1]
        for j in range(n_lon):
            j1 = (j + 1) % n_lon
            faces += [[a0 + j, b0 + j, b0 + j1], [a0 + j, b0 + j1, a0 + j1]]
    last = rows[-1]
    for j in range(n_lon):
        faces.append([south, last + (j + 1) % n_lon, last + j])
    return TriMesh(np.array(verts) * radius, faces, vertex_normals=np.array(normals), name="capsule")


def torus(major=1.0, minor=0.25, n_major=48, n_minor=24) -> TriMesh:
    """Torus around z with exact analytic normals."""
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    v = 2.0 * np.pi * np.arange(n_minor) / n_minor
    U, V = np.meshgrid(u, v, indexing="ij")
    normals = np.stack([np.cos(V) * np.cos(U), np.cos(V) * np.sin(U), np.sin(V)], axis=-1)
    centres = np.stack([major * np.cos(U), major * np.sin(U), np.zeros_like(U)], axis=-1)
    verts = (centres + minor * normals).reshape(-1, 3)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [[a, b, c], [a, c, d]]
    return TriMesh(verts, faces, vertex_normals=normals.reshape(-1, 3), name="torus")
