"""Reference computations used by the tests.

These are deliberately written differently from the library code (plain
loops, closed forms, scipy LPs) so that agreement means something.
"""

import itertools

import numpy as np
from scipy.optimize import linprog

from agnograsp.fixtures import DATA

UNIT_BOX = str(DATA / "meshes" / "unit_box.obj")


# ------------------------------------------------------------- finite diff
def central_diff(f, x, h=1e-6):
    """Central differences of a scalar or vector function; returns (..., n)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    """Max abs difference scaled by the larger reference magnitude."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


# --------------------------------------------------------------- geometry
def point_triangle_distance(p, a, b, c):
    """Distance by enumerating the interior projection and the three edges."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    proj = p - ((p - a) @ n) * n
    # barycentric coordinates via a least-squares solve
    M = np.stack([b - a, c - a], axis=1)
    uv = np.linalg.lstsq(M, proj - a, rcond=None)[0]
    cands = []
    if uv[0] >= 0 and uv[1] >= 0 and uv.sum() <= 1:
        cands.append(proj)
    for s, e in ((a, b), (b, c), (c, a)):
        t = np.clip((p - s) @ (e - s) / ((e - s) @ (e - s)), 0, 1)
        cands.append(s + t * (e - s))
    d = [np.linalg.norm(p - q) for q in cands]
    k = int(np.argmin(d))
    return d[k], cands[k]


def point_mesh_distance(p, tri):
    """Brute-force distance from ``p`` to every triangle of ``tri`` (F, 3, 3).

    Candidates per triangle are the plane projection (kept when its
    barycentric coordinates are inside) and the clamped projections onto the
    three edges. Returns ``(distance, closest point, face)``.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1, e2 = b - a, c - a
    # normal equations for proj = a + u e1 + v e2
    g11, g12, g22 = (e1 * e1).sum(1), (e1 * e2).sum(1), (e2 * e2).sum(1)
    r = p - a
    r1, r2 = (r * e1).sum(1), (r * e2).sum(1)
    det = g11 * g22 - g12 * g12
    u = (g22 * r1 - g12 * r2) / det
    v = (g11 * r2 - g12 * r1) / det
    inside = (u >= 0) & (v >= 0) & (u + v <= 1)
    proj = a + u[:, None] * e1 + v[:, None] * e2
    cands = [np.where(inside[:, None], proj, np.inf)]
    for s_, e_ in ((a, b), (b, c), (c, a)):
        d = e_ - s_
        t = np.clip(((p - s_) * d).sum(1) / (d * d).sum(1), 0, 1)
        cands.append(s_ + t[:, None] * d)
    C = np.stack(cands, axis=1)  # (F, 4, 3)
    D = np.linalg.norm(C - p, axis=2)
    D = np.where(np.isfinite(D), D, np.inf)
    f, k = np.unravel_index(np.argmin(D), D.shape)
    return float(D[f, k]), C[f, k], int(f)


def segment_segment_distance(p1, q1, p2, q2):
    """Minimum over the unconstrained solution (if feasible) and the four
    endpoint-to-segment distances."""
    def pt_seg(p, s, e):
        t = np.clip((p - s) @ (e - s) / ((e - s) @ (e - s)), 0, 1)
        return np.linalg.norm(p - (s + t * (e - s)))

    best = min(pt_seg(p1, p2, q2), pt_seg(q1, p2, q2), pt_seg(p2, p1, q1), pt_seg(q2, p1, q1))
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    A = np.array([[d1 @ d1, -d1 @ d2], [-d1 @ d2, d2 @ d2]])
    if abs(np.linalg.det(A)) > 1e-14 * (d1 @ d1) * (d2 @ d2):
        s, t = np.linalg.solve(A, [-d1 @ r, d2 @ r])
        if 0 <= s <= 1 and 0 <= t <= 1:
            best = min(best, np.linalg.norm(p1 + s * d1 - p2 - t * d2))
    return best


def mesh_mesh_distance(va, fa, vb, fb):
    """Exhaustive triangle-pair minimum distance for disjoint meshes."""
    best = np.inf
    ta, tb = va[fa], vb[fb]
    for A in ta:
        for B in tb:
            for p in A:
                best = min(best, point_triangle_distance(p, *B)[0])
            for p in B:
                best = min(best, point_triangle_distance(p, *A)[0])
            for i, j in ((0, 1), (1, 2), (2, 0)):
                for k, l in ((0, 1), (1, 2), (2, 0)):
                    best = min(best, segment_segment_distance(A[i], A[j], B[k], B[l]))
    return best


def box_depth(p, lo, hi):
    """Penetration depth of ``p`` into the axis-aligned box, 0 outside."""
    p = np.asarray(p, dtype=float)
    if np.any(p < lo) or np.any(p > hi):
        return 0.0
    return float(min(np.min(p - lo), np.min(hi - p)))


# --------------------------------------------------------------------- Q1
def q1_bruteforce(W, tol=1e-9):
    """Q1 of wrench set ``W`` (n, 6) by enumerating candidate facets.

    Interior membership of the origin is checked with an LP; the ball radius
    is the smallest distance to a supporting hyperplane spanned by 6 wrenches.
    """
    W = np.asarray(W, dtype=float)
    n = len(W)
    if np.linalg.matrix_rank(W, tol=1e-10) < 6:
        return 0.0
    # with a full-dimensional hull, the origin is interior iff it is a convex
    # combination with all weights positive
    eps = 1e-9
    lp = linprog(np.zeros(n), A_eq=np.vstack([W.T, np.ones((1, n))]),
                 b_eq=np.concatenate([np.zeros(6), [1.0]]),
                 bounds=[(eps, None)] * n, method="highs")
    if lp.status != 0:
        return 0.0
    best = np.inf
    for idx in itertools.combinations(range(n), 6):
        P = W[list(idx)]
        # hyperplane n.x = c through the six points
        M = np.hstack([P, -np.ones((6, 1))])
        _, s, vt = np.linalg.svd(M)
        if s[-1] < 1e-10:
            continue
        nc = vt[-1]
        nv, c = nc[:6], nc[6]
        norm = np.linalg.norm(nv)
        if norm < 1e-12:
            continue
        nv, c = nv / norm, c / norm
        side = W @ nv - c
        if np.all(side <= tol):
            best = min(best, abs(c))
        elif np.all(side >= -tol):
            best = min(best, abs(c))
    return float(best) if np.isfinite(best) else 0.0


def ray_mesh_hit(o, d, tri):
    """First hit parameter of the ray ``o + t d`` by intersecting every
    triangle plane and testing the hit point with edge cross products."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    den = n @ d
    ok = np.abs(den) > 1e-15
    t = np.where(ok, ((a - o) * n).sum(1) / np.where(ok, den, 1.0), -1.0)
    x = o + t[:, None] * d
    nn = (n * n).sum(1)
    inside = np.ones(len(tri), dtype=bool)
    for s_, e_ in ((a, b), (b, c), (c, a)):
        inside &= (np.cross(e_ - s_, x - s_) * n).sum(1) >= -1e-12 * nn
    hit = ok & (t > 0) & inside
    return float(t[hit].min()) if hit.any() else np.inf
