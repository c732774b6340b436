"""Axis-aligned bounding volume hierarchy over triangles.

The tree is built in numpy and stored as flat arrays; traversal runs in
numba-compiled loops so that batched queries over thousands of points stay
cheap.
"""

import numpy as np
from numba import njit

LEAF_SIZE = 4


class BVH:
    """Flat AABB tree over the triangles ``tri`` of shape (F, 3, 3)."""

    def __init__(self, tri):
        tri = np.ascontiguousarray(tri, dtype=np.float64)
        if tri.ndim != 3 or tri.shape[1:] != (3, 3) or len(tri) == 0:
            raise ValueError("BVH needs a non-empty (F, 3, 3) triangle array")
        self.tri = tri
        lo_all = tri.min(axis=1)
        hi_all = tri.max(axis=1)
        cen = tri.mean(axis=1)

        order = np.arange(len(tri))
        node_lo, node_hi, left, right, start, count = [], [], [], [], [], []

        def new_node():
            node_lo.append(None)
            node_hi.append(None)
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(node_lo) - 1

        root = new_node()
        stack = [(root, 0, len(tri))]
        while stack:
            node, s, e = stack.pop()
            idx = order[s:e]
            node_lo[node] = lo_all[idx].min(axis=0)
            node_hi[node] = hi_all[idx].max(axis=0)
            if e - s <= LEAF_SIZE:
                start[node], count[node] = s, e - s
                continue
            c = cen[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            # stable sort keeps the build deterministic for repeated centroids
            srt = np.argsort(c[:, axis], kind="stable")
            order[s:e] = idx[srt]
            mid = s + (e - s) // 2
            lch, rch = new_node(), new_node()
            left[node], right[node] = lch, rch
            stack.append((rch, mid, e))
            stack.append((lch, s, mid))

        self.order = np.ascontiguousarray(order, dtype=np.int64)
        self.node_lo = np.ascontiguousarray(node_lo, dtype=np.float64)
        self.node_hi = np.ascontiguousarray(node_hi, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        self.tri_sorted = np.ascontiguousarray(tri[self.order])

    @property
    def n_nodes(self):
        return len(self.left)

    def closest(self, points):
        """Closest surface points for (n, 3) queries.

        Returns ``(dist, closest, face)`` with ``face`` indexing the original
        triangle order.
        """
        P = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        dist = np.empty(len(P))
        cp = np.empty((len(P), 3))
        face = np.empty(len(P), dtype=np.int64)
        _closest_batch(P, self.node_lo, self.node_hi, self.left, self.right,
                       self.start, self.count, self.tri_sorted, dist, cp, face)
        return dist, cp, self.order[face]

    def raycast(self, origins, dirs, t_max=np.inf):
        """First hit along each ray; ``t = inf`` and ``face = -1`` on a miss."""
        O = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        D = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
        if len(O) == 1 and len(D) > 1:
            O = np.ascontiguousarray(np.broadcast_to(O, D.shape))
        t = np.empty(len(D))
        face = np.empty(len(D), dtype=np.int64)
        _raycast_batch(O, D, float(t_max), self.node_lo, self.node_hi, self.left,
                       self.right, self.start, self.count, self.tri_sorted, t, face)
        hit = face >= 0
        out = np.full(len(D), -1, dtype=np.int64)
        out[hit] = self.order[face[hit]]
        return t, out


@njit(cache=True)
def _closest_tri_scalar(px, py, pz, tri, i):
    """Allocation-free closest point on sorted triangle ``i``."""
    ax, ay, az = tri[i, 0, 0], tri[i, 0, 1], tri[i, 0, 2]
    bx, by, bz = tri[i, 1, 0], tri[i, 1, 1], tri[i, 1, 2]
    cx, cy, cz = tri[i, 2, 0], tri[i, 2, 1], tri[i, 2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w)


@njit(cache=True)
def _box_d2(px, py, pz, lo, hi, node):
    s = 0.0
    d = lo[node, 0] - px
    if d > 0.0:
        s += d * d
    else:
        d = px - hi[node, 0]
        if d > 0.0:
            s += d * d
    d = lo[node, 1] - py
    if d > 0.0:
        s += d * d
    else:
        d = py - hi[node, 1]
        if d > 0.0:
            s += d * d
    d = lo[node, 2] - pz
    if d > 0.0:
        s += d * d
    else:
        d = pz - hi[node, 2]
        if d > 0.0:
            s += d * d
    return s


@njit(cache=True)
def _closest_one(px, py, pz, lo, hi, left, right, start, count, tri, stack):
    best = np.inf
    bx = by = bz = 0.0
    best_f = -1
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if _box_d2(px, py, pz, lo, hi, node) >= best:
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                qx, qy, qz = _closest_tri_scalar(px, py, pz, tri, i)
                dx, dy, dz = px - qx, py - qy, pz - qz
                d2 = dx * dx + dy * dy + dz * dz
                # ties resolve to the lowest sorted index for determinism
                if d2 < best or (d2 == best and i < best_f):
                    best = d2
                    bx, by, bz = qx, qy, qz
                    best_f = i
            continue
        l, r = left[node], right[node]
        dl = _box_d2(px, py, pz, lo, hi, l)
        dr = _box_d2(px, py, pz, lo, hi, r)
        # push the farther child first so the nearer one is visited next
        if dl <= dr:
            stack[sp] = r
            stack[sp + 1] = l
        else:
            stack[sp] = l
            stack[sp + 1] = r
        sp += 2
    return np.sqrt(best), bx, by, bz, best_f


@njit(cache=True)
def _closest_batch(P, lo, hi, left, right, start, count, tri, dist, cp, face):
    stack = np.empty(128, dtype=np.int64)
    for i in range(P.shape[0]):
        d, qx, qy, qz, f = _closest_one(P[i, 0], P[i, 1], P[i, 2], lo, hi, left, right,
                                        start, count, tri, stack)
        dist[i] = d
        cp[i, 0] = qx
        cp[i, 1] = qy
        cp[i, 2] = qz
        face[i] = f


@njit(cache=True)
def _ray_box(o, inv, lo, hi, t_best):
    t0 = 0.0
    t1 = t_best
    for k in range(3):
        ta = (lo[k] - o[k]) * inv[k]
        tb = (hi[k] - o[k]) * inv[k]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def _ray_tri(o, d, a, b, c):
    e1 = b - a
    e2 = c - a
    pv = np.cross(d, e2)
    det = e1 @ pv
    if abs(det) < 1e-14:
        return np.inf
    inv = 1.0 / det
    tv = o - a
    u = (tv @ pv) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qv = np.cross(tv, e1)
    v = (d @ qv) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = (e2 @ qv) * inv
    if t <= 1e-12:
        return np.inf
    return t


@njit(cache=True)
def _raycast_batch(O, D, t_max, lo, hi, left, right, start, count, tri, t_out, f_out):
    stack = np.empty(128, dtype=np.int64)
    for r in range(D.shape[0]):
        o = O[r]
        d = D[r]
        inv = np.empty(3)
        for k in range(3):
            inv[k] = 1.0 / d[k] if d[k] != 0.0 else np.inf
        best = t_max
        best_f = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(o, inv, lo[node], hi[node], best):
                continue
            if left[node] < 0:
                for i in range(start[node], start[node] + count[node]):
                    t = _ray_tri(o, d, tri[i, 0], tri[i, 1], tri[i, 2])
                    if t < best:
                        best = t
                        best_f = i
                continue
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
        t_out[r] = best if best_f >= 0 else np.inf
        f_out[r] = best_f
