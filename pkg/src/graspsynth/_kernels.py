"""Compiled inner loops for mesh queries.

Closest-point-on-triangle follows Ericson, *Real-Time Collision Detection*
(2004), section 5.1.5, and additionally reports which feature (face
interior, edge, vertex) the closest point lies on. Feature codes:

    0        face interior
    1, 2, 3  vertex a, b, c
    4, 5, 6  edge ab, bc, ca
"""
import numpy as np
from numba import njit

FEATURE_FACE = 0
FEATURE_VERTEX_A = 1
FEATURE_EDGE_AB = 4


@njit(cache=True)
def closest_point_triangle(p, a, b, c):
    ab0 = b[0] - a[0]
    ab1 = b[1] - a[1]
    ab2 = b[2] - a[2]
    ac0 = c[0] - a[0]
    ac1 = c[1] - a[1]
    ac2 = c[2] - a[2]
    ap0 = p[0] - a[0]
    ap1 = p[1] - a[1]
    ap2 = p[2] - a[2]
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0, 1
    bp0 = p[0] - b[0]
    bp1 = p[1] - b[1]
    bp2 = p[2] - b[2]
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0, 2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return 1.0 - v, v, 0.0, 4
    cp0 = p[0] - c[0]
    cp1 = p[1] - c[1]
    cp2 = p[2] - c[2]
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0, 3
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return 1.0 - w, 0.0, w, 6
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - w, w, 5
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return 1.0 - v - w, v, w, 0


@njit(cache=True)
def _box_dist2(p, lo, hi):
    d = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            t = lo[k] - p[k]
            d += t * t
        elif p[k] > hi[k]:
            t = p[k] - hi[k]
            d += t * t
    return d


@njit(cache=True)
def bvh_closest(points, tris, node_lo, node_hi, node_left, node_right, node_start, node_count, order, max_dist2):
    """Closest surface point for each query.

    Ties in distance go to the lowest face index. Queries with nothing within
    ``sqrt(max_dist2)`` get face -1.
    """
    n = points.shape[0]
    face = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    feat = np.zeros(n, dtype=np.int64)
    dist2 = np.full(n, np.inf)
    cpt = np.zeros((n, 3))
    stack = np.empty(128, dtype=np.int64)
    for i in range(n):
        p = points[i]
        best = max_dist2
        best_f = -1
        bu = 0.0
        bv = 0.0
        bw = 0.0
        bfeat = 0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_dist2(p, node_lo[node], node_hi[node]) > best:
                continue
            left = node_left[node]
            if left < 0:
                s = node_start[node]
                for j in range(s, s + node_count[node]):
                    f = order[j]
                    a = tris[f, 0]
                    b = tris[f, 1]
                    c = tris[f, 2]
                    u, v, w, ft = closest_point_triangle(p, a, b, c)
                    x0 = u * a[0] + v * b[0] + w * c[0] - p[0]
                    x1 = u * a[1] + v * b[1] + w * c[1] - p[1]
                    x2 = u * a[2] + v * b[2] + w * c[2] - p[2]
                    d = x0 * x0 + x1 * x1 + x2 * x2
                    if d < best or (d == best and (best_f < 0 or f < best_f)):
                        best = d
                        best_f = f
                        bu = u
                        bv = v
                        bw = w
                        bfeat = ft
            else:
                right = node_right[node]
                dl = _box_dist2(p, node_lo[left], node_hi[left])
                dr = _box_dist2(p, node_lo[right], node_hi[right])
                # push the farther child first so the nearer one is expanded next
                if dl <= dr:
                    stack[top] = right
                    top += 1
                    stack[top] = left
                    top += 1
                else:
                    stack[top] = left
                    top += 1
                    stack[top] = right
                    top += 1
        if best_f >= 0:
            face[i] = best_f
            bary[i, 0] = bu
            bary[i, 1] = bv
            bary[i, 2] = bw
            feat[i] = bfeat
            dist2[i] = best
            for k in range(3):
                cpt[i, k] = bu * tris[best_f, 0, k] + bv * tris[best_f, 1, k] + bw * tris[best_f, 2, k]
    return face, bary, feat, dist2, cpt


@njit(cache=True)
def pseudonormal_sign(points, cpt, face, feat, faces, face_normals, edge_normals, vertex_normals):
    n = points.shape[0]
    sign = np.ones(n)
    for i in range(n):
        f = face[i]
        if f < 0:
            continue
        ft = feat[i]
        if ft == 0:
            nrm = face_normals[f]
        elif ft <= 3:
            nrm = vertex_normals[faces[f, ft - 1]]
        else:
            nrm = edge_normals[f, ft - 4]
        s = 0.0
        for k in range(3):
            s += (points[i, k] - cpt[i, k]) * nrm[k]
        if s < 0.0:
            sign[i] = -1.0
    return sign


@njit(cache=True)
def farthest_point_subsample(points, n_out, start):
    m = points.shape[0]
    chosen = np.empty(n_out, dtype=np.int64)
    d2 = np.full(m, np.inf)
    cur = start
    for k in range(n_out):
        chosen[k] = cur
        best = -1.0
        best_j = 0
        for j in range(m):
            dx = points[j, 0] - points[cur, 0]
            dy = points[j, 1] - points[cur, 1]
            dz = points[j, 2] - points[cur, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < d2[j]:
                d2[j] = d
            if d2[j] > best:
                best = d2[j]
                best_j = j
        cur = best_j
    return chosen


@njit(cache=True)
def penetrating_samples(samples, M, lo, hi, g_origin, g_h, grid, tris, n_lo, n_hi, n_left, n_right, n_start, n_count, order, faces, face_normals, edge_normals, vertex_normals):
    """Samples that end up strictly inside a mesh after the rigid map ``M``.

    Cheap rejections first (mesh bounds, then the coarse distance grid with
    its 1-Lipschitz bound), exact signed distance for the rest. Returns the
    sample indices, depths, mapped points and closest surface points.
    """
    n = samples.shape[0]
    cand = np.empty((n, 3))
    idx = np.empty(n, dtype=np.int64)
    gx, gy, gz = grid.shape
    k = 0
    for i in range(n):
        s = samples[i]
        p0 = M[0, 0] * s[0] + M[0, 1] * s[1] + M[0, 2] * s[2] + M[0, 3]
        p1 = M[1, 0] * s[0] + M[1, 1] * s[1] + M[1, 2] * s[2] + M[1, 3]
        p2 = M[2, 0] * s[0] + M[2, 1] * s[1] + M[2, 2] * s[2] + M[2, 3]
        if p0 < lo[0] or p0 > hi[0] or p1 < lo[1] or p1 > hi[1] or p2 < lo[2] or p2 > hi[2]:
            continue
        ix = int(np.floor((p0 - g_origin[0]) / g_h + 0.5))
        iy = int(np.floor((p1 - g_origin[1]) / g_h + 0.5))
        iz = int(np.floor((p2 - g_origin[2]) / g_h + 0.5))
        if ix < 0 or iy < 0 or iz < 0 or ix >= gx or iy >= gy or iz >= gz:
            continue
        d0 = p0 - (g_origin[0] + ix * g_h)
        d1 = p1 - (g_origin[1] + iy * g_h)
        d2 = p2 - (g_origin[2] + iz * g_h)
        if grid[ix, iy, iz] - np.sqrt(d0 * d0 + d1 * d1 + d2 * d2) > 0.0:
            continue
        cand[k, 0] = p0
        cand[k, 1] = p1
        cand[k, 2] = p2
        idx[k] = i
        k += 1
    pts = cand[:k]
    face, bary, feat, dist2, cpt = bvh_closest(pts, tris, n_lo, n_hi, n_left, n_right, n_start, n_count, order, np.inf)
    sign = pseudonormal_sign(pts, cpt, face, feat, faces, face_normals, edge_normals, vertex_normals)
    keep = np.flatnonzero((sign < 0.0) & (dist2 > 0.0))
    return idx[:k][keep], np.sqrt(dist2[keep]), pts[keep], cpt[keep]
