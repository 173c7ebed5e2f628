# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: range-image normals, 3x3 normal classification, voxel nearest neighbour.

Semantics mirror ``lidarkit._fallback`` exactly.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, acos, floor, ceil, isfinite, INFINITY

cnp.import_array()

DEF GROUND = 0
DEF ROOF = 1
DEF WALL = 2
DEF EDGE = 3
DEF UNKNOWN = 4

cdef long long KEY_BIAS = 1 << 20


cdef inline double _cosang(double ax, double ay, double az, double bx, double by, double bz) nogil:
    cdef double na = sqrt(ax * ax + ay * ay + az * az)
    cdef double nb = sqrt(bx * bx + by * by + bz * bz)
    if not (na > 0 and nb > 0):
        return -2.0
    cdef double c = (ax * bx + ay * by + az * bz) / (na * nb)
    if not isfinite(c):
        return -2.0
    return c


cdef inline bint _near(double a, double b, double disc_abs, double disc_rel) nogil:
    cdef double gate = disc_rel * b
    if gate < disc_abs:
        gate = disc_abs
    return fabs(a - b) <= gate


cdef inline int _index(int i, int n, bint wrap) nogil:
    if wrap:
        i = i % n
        if i < 0:
            i += n
        return i
    if i < 0 or i >= n:
        return -1
    return i


cdef bint _tangent(const double[:, :, ::1] P, const double[:, ::1] R, int v, int u,
                   int dv, int du, bint wrap, double disc_abs, double disc_rel,
                   double crease_cos, double* t) nogil:
    cdef int H = R.shape[0]
    cdef int W = R.shape[1]
    cdef int vm1, um1, vp1, up1, vm2, um2, vp2, up2
    if du != 0:
        vm1 = v; vp1 = v; vm2 = v; vp2 = v
        um1 = _index(u - 1, W, wrap); up1 = _index(u + 1, W, wrap)
        um2 = _index(u - 2, W, wrap); up2 = _index(u + 2, W, wrap)
    else:
        um1 = u; up1 = u; um2 = u; up2 = u
        vm1 = _index(v - 1, H, False); vp1 = _index(v + 1, H, False)
        vm2 = _index(v - 2, H, False); vp2 = _index(v + 2, H, False)
        if vm2 < 0:
            um2 = -1
        if vp2 < 0:
            up2 = -1
    if vm1 < 0 or vp1 < 0 or um1 < 0 or up1 < 0:
        return False
    cdef double rc = R[v, u]
    cdef double rm1 = R[vm1, um1]
    cdef double rp1 = R[vp1, up1]
    if not (isfinite(rc) and isfinite(rm1) and isfinite(rp1)):
        return False
    if not (_near(rm1, rc, disc_abs, disc_rel) and _near(rp1, rc, disc_abs, disc_rel)):
        return False
    cdef double bx = P[v, u, 0] - P[vm1, um1, 0]
    cdef double by = P[v, u, 1] - P[vm1, um1, 1]
    cdef double bz = P[v, u, 2] - P[vm1, um1, 2]
    cdef double fx = P[vp1, up1, 0] - P[v, u, 0]
    cdef double fy = P[vp1, up1, 1] - P[v, u, 1]
    cdef double fz = P[vp1, up1, 2] - P[v, u, 2]
    cdef double cos_c = _cosang(bx, by, bz, fx, fy, fz)
    cdef double cos_b = -2.0
    cdef double cos_f = -2.0
    cdef double r2
    if cos_c < crease_cos:
        if um2 >= 0 and vm2 >= 0:
            r2 = R[vm2, um2]
            if isfinite(r2) and _near(r2, rm1, disc_abs, disc_rel):
                cos_b = _cosang(bx, by, bz,
                                P[vm1, um1, 0] - P[vm2, um2, 0],
                                P[vm1, um1, 1] - P[vm2, um2, 1],
                                P[vm1, um1, 2] - P[vm2, um2, 2])
        if up2 >= 0 and vp2 >= 0:
            r2 = R[vp2, up2]
            if isfinite(r2) and _near(r2, rp1, disc_abs, disc_rel):
                cos_f = _cosang(fx, fy, fz,
                                P[vp2, up2, 0] - P[vp1, up1, 0],
                                P[vp2, up2, 1] - P[vp1, up1, 1],
                                P[vp2, up2, 2] - P[vp1, up1, 2])
        if cos_b >= crease_cos or cos_f >= crease_cos:
            if cos_b >= cos_f:
                t[0] = bx; t[1] = by; t[2] = bz
            else:
                t[0] = fx; t[1] = fy; t[2] = fz
            return True
    t[0] = bx + fx
    t[1] = by + fy
    t[2] = bz + fz
    return True


def normals_kernel(vertex, ranges, bint wrap, double disc_abs, double disc_rel, double crease_cos):
    cdef const double[:, :, ::1] P = np.ascontiguousarray(vertex, dtype=np.float64)
    cdef const double[:, ::1] R = np.ascontiguousarray(ranges, dtype=np.float64)
    cdef int H = R.shape[0]
    cdef int W = R.shape[1]
    out = np.full((H, W, 3), np.nan)
    valid = np.zeros((H, W), dtype=np.bool_)
    cdef double[:, :, ::1] N = out
    cdef cnp.npy_bool[:, ::1] ok = valid
    cdef double tu[3]
    cdef double tv[3]
    cdef double nx, ny, nz, nn
    cdef int v, u
    with nogil:
        for v in range(H):
            for u in range(W):
                if not _tangent(P, R, v, u, 0, 1, wrap, disc_abs, disc_rel, crease_cos, tu):
                    continue
                if not _tangent(P, R, v, u, 1, 0, False, disc_abs, disc_rel, crease_cos, tv):
                    continue
                nx = tu[1] * tv[2] - tu[2] * tv[1]
                ny = tu[2] * tv[0] - tu[0] * tv[2]
                nz = tu[0] * tv[1] - tu[1] * tv[0]
                nn = sqrt(nx * nx + ny * ny + nz * nz)
                if not (nn >= 1e-10):
                    continue
                nx = nx / nn
                ny = ny / nn
                nz = nz / nn
                if nx * P[v, u, 0] + ny * P[v, u, 1] + nz * P[v, u, 2] > 0:
                    nx = -nx
                    ny = -ny
                    nz = -nz
                N[v, u, 0] = nx
                N[v, u, 1] = ny
                N[v, u, 2] = nz
                ok[v, u] = True
    return out, valid


def classify_kernel(normals, valid, bint wrap, double edge_angle, double majority):
    cdef const double[:, :, ::1] N = np.ascontiguousarray(normals, dtype=np.float64)
    cdef const cnp.npy_bool[:, ::1] V = np.ascontiguousarray(valid, dtype=np.bool_)
    cdef int H = V.shape[0]
    cdef int W = V.shape[1]
    labels = np.full((H, W), UNKNOWN, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] L = labels
    cdef double nb[9][3]
    cdef int v, u, dv, du, vv, uu, k, i, j, n_up, n_down, n_wall, pairs
    cdef double ax, ay, az, c, ang_sum, need
    with nogil:
        for v in range(H):
            for u in range(W):
                if not V[v, u]:
                    continue
                k = 0
                for dv in range(-1, 2):
                    vv = v + dv
                    if vv < 0 or vv >= H:
                        continue
                    for du in range(-1, 2):
                        uu = _index(u + du, W, wrap)
                        if uu < 0 or not V[vv, uu]:
                            continue
                        nb[k][0] = N[vv, uu, 0]
                        nb[k][1] = N[vv, uu, 1]
                        nb[k][2] = N[vv, uu, 2]
                        k += 1
                if k < 3:
                    continue
                ang_sum = 0.0
                pairs = 0
                for i in range(k):
                    for j in range(i + 1, k):
                        c = nb[i][0] * nb[j][0] + nb[i][1] * nb[j][1] + nb[i][2] * nb[j][2]
                        if c > 1.0:
                            c = 1.0
                        elif c < -1.0:
                            c = -1.0
                        ang_sum += acos(c)
                        pairs += 1
                if ang_sum / pairs > edge_angle:
                    L[v, u] = EDGE
                    continue
                n_up = 0
                n_down = 0
                n_wall = 0
                for i in range(k):
                    ax = fabs(nb[i][0])
                    ay = fabs(nb[i][1])
                    az = fabs(nb[i][2])
                    if az > ax and az > ay:
                        if nb[i][2] > 0:
                            n_up += 1
                        elif nb[i][2] < 0:
                            n_down += 1
                    elif (ax > ay and ax > az) or (ay > ax and ay > az):
                        n_wall += 1
                need = ceil(majority * k - 1e-9)
                if n_up >= need:
                    L[v, u] = GROUND
                elif n_down >= need:
                    L[v, u] = ROOF
                elif n_wall >= need:
                    L[v, u] = WALL
    return labels


cdef inline long long _pack(long long i, long long j, long long k) nogil:
    return ((i + KEY_BIAS) << 42) | ((j + KEY_BIAS) << 21) | (k + KEY_BIAS)


cdef inline Py_ssize_t _find(const long long[::1] keys, long long key) nogil:
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = keys.shape[0]
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == key:
        return lo
    return -1


cdef inline bint _better(double d2, double x, double y, double z,
                         double bd2, double bx, double by, double bz) nogil:
    if d2 != bd2:
        return d2 < bd2
    if x != bx:
        return x < bx
    if y != by:
        return y < by
    return z < bz


def _sorted_offsets(int rings):
    r = np.arange(-rings, rings + 1)
    off = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    gap = np.maximum(np.abs(off) - 1, 0).astype(np.float64)
    lb = np.sum(gap * gap, axis=1)
    order = np.lexsort((off[:, 2], off[:, 1], off[:, 0], lb))
    return np.ascontiguousarray(off[order], dtype=np.int64), np.ascontiguousarray(lb[order])


cdef inline double _box_gap(double q, long long cell, double vs) nogil:
    cdef double lo = cell * vs
    cdef double hi = lo + vs
    if q < lo:
        return lo - q
    if q > hi:
        return q - hi
    return 0.0


def voxel_nn_kernel(queries, query_labels, vkeys, vstarts, vcounts, points, labels,
                    double voxel_size, int rings, double max_dist):
    cdef const double[:, ::1] Q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    cdef const cnp.uint8_t[::1] QL = np.ascontiguousarray(query_labels, dtype=np.uint8)
    cdef const long long[::1] K = np.ascontiguousarray(vkeys, dtype=np.int64)
    cdef const long long[::1] S = np.ascontiguousarray(vstarts, dtype=np.int64)
    cdef const long long[::1] C = np.ascontiguousarray(vcounts, dtype=np.int64)
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef const cnp.uint8_t[::1] PL = np.ascontiguousarray(labels, dtype=np.uint8)
    off_arr, lb_arr = _sorted_offsets(rings)
    cdef const long long[:, ::1] OFF = off_arr
    cdef const double[::1] LB = lb_arr
    cdef Py_ssize_t n_off = OFF.shape[0]
    cdef Py_ssize_t nq = Q.shape[0]
    any_arr = np.full(nq, -1, dtype=np.int64)
    same_arr = np.full(nq, -1, dtype=np.int64)
    cdef long long[::1] A = any_arr
    cdef long long[::1] SM = same_arr
    cdef double max_d2 = max_dist * max_dist
    cdef double vs2 = voxel_size * voxel_size
    cdef Py_ssize_t qi, slot, p, end, oi
    cdef long long bi, bj, bk, ci, cj, ck
    cdef double qx, qy, qz, dx, dy, dz, d2, best_a, best_s, bound, gx, gy, gz
    cdef long long ia, isame
    cdef bint planar
    if K.shape[0] == 0:
        return any_arr, same_arr
    with nogil:
        for qi in range(nq):
            qx = Q[qi, 0]
            qy = Q[qi, 1]
            qz = Q[qi, 2]
            bi = <long long>floor(qx / voxel_size)
            bj = <long long>floor(qy / voxel_size)
            bk = <long long>floor(qz / voxel_size)
            best_a = INFINITY
            best_s = INFINITY
            ia = -1
            isame = -1
            planar = QL[qi] <= WALL
            for oi in range(n_off):
                # no later voxel can beat both current bests
                bound = best_s if (planar and best_s > best_a) else best_a
                if bound > max_d2:
                    bound = max_d2
                if LB[oi] * vs2 > bound:
                    break
                ci = bi + OFF[oi, 0]
                cj = bj + OFF[oi, 1]
                ck = bk + OFF[oi, 2]
                gx = _box_gap(qx, ci, voxel_size)
                gy = _box_gap(qy, cj, voxel_size)
                gz = _box_gap(qz, ck, voxel_size)
                if gx * gx + gy * gy + gz * gz > bound:
                    continue
                slot = _find(K, _pack(ci, cj, ck))
                if slot < 0:
                    continue
                end = S[slot] + C[slot]
                for p in range(S[slot], end):
                    dx = P[p, 0] - qx
                    dy = P[p, 1] - qy
                    dz = P[p, 2] - qz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 > max_d2:
                        continue
                    if ia < 0 or _better(d2, P[p, 0], P[p, 1], P[p, 2],
                                         best_a, P[ia, 0], P[ia, 1], P[ia, 2]):
                        best_a = d2
                        ia = p
                    if planar and PL[p] == QL[qi]:
                        if isame < 0 or _better(d2, P[p, 0], P[p, 1], P[p, 2],
                                                best_s, P[isame, 0], P[isame, 1], P[isame, 2]):
                            best_s = d2
                            isame = p
            A[qi] = ia
            SM[qi] = isame
    return any_arr, same_arr
