"""Vectorized numpy implementations of the hot kernels.

Used when the compiled ``_core`` extension is unavailable, and as the
reference the compiled path is tested against. Signatures and outputs match
``_core`` exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

LABEL_GROUND, LABEL_ROOF, LABEL_WALL, LABEL_EDGE, LABEL_UNKNOWN = range(5)


def _unit(a):
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return a / n


def _cos(a, b):
    return np.sum(_unit(a) * _unit(b), axis=-1)


def _shift(arr, k, axis, wrap, fill):
    """``out[i] = arr[i + k]`` along ``axis``; out-of-range entries get ``fill``."""
    if wrap:
        return np.roll(arr, -k, axis=axis)
    out = np.full_like(arr, fill)
    n = arr.shape[axis]
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if k >= 0:
        src[axis], dst[axis] = slice(k, n), slice(0, n - k)
    else:
        src[axis], dst[axis] = slice(0, n + k), slice(-k, n)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _tangent(P, R, axis, wrap, disc_abs, disc_rel, crease_cos):
    """Tangent along one image axis, plus the per-pixel ok mask."""
    Pm1 = _shift(P, -1, axis, wrap, np.nan)
    Pp1 = _shift(P, 1, axis, wrap, np.nan)
    Pm2 = _shift(P, -2, axis, wrap, np.nan)
    Pp2 = _shift(P, 2, axis, wrap, np.nan)
    Rm1 = _shift(R, -1, axis, wrap, np.nan)
    Rp1 = _shift(R, 1, axis, wrap, np.nan)
    Rm2 = _shift(R, -2, axis, wrap, np.nan)
    Rp2 = _shift(R, 2, axis, wrap, np.nan)

    def near(a, b):
        with np.errstate(invalid="ignore"):
            return np.abs(a - b) <= np.maximum(disc_abs, disc_rel * b)

    ok = np.isfinite(R) & np.isfinite(Rm1) & np.isfinite(Rp1) & near(Rm1, R) & near(Rp1, R)
    back = P - Pm1
    fwd = Pp1 - P
    central = Pp1 - Pm1
    with np.errstate(invalid="ignore"):
        cos_c = np.nan_to_num(_cos(back, fwd), nan=-2.0)
        cos_b = np.where(np.isfinite(Rm2) & near(Rm2, Rm1), _cos(back, Pm1 - Pm2), -2.0)
        cos_f = np.where(np.isfinite(Rp2) & near(Rp2, Rp1), _cos(fwd, Pp2 - Pp1), -2.0)
        cos_b = np.nan_to_num(cos_b, nan=-2.0)
        cos_f = np.nan_to_num(cos_f, nan=-2.0)
        crease = (cos_c < crease_cos) & (np.maximum(cos_b, cos_f) >= crease_cos)
    use_back = crease & (cos_b >= cos_f)
    use_fwd = crease & ~use_back
    t = np.where(use_back[..., None], back, np.where(use_fwd[..., None], fwd, central))
    return t, ok


def normals_kernel(vertex, ranges, wrap, disc_abs, disc_rel, crease_cos):
    """Range-image normals from central-difference tangents.

    ``vertex`` is (H, W, 3) sensor-frame points (NaN where empty), ``ranges`` is
    (H, W). Returns ``(normals (H, W, 3), valid (H, W) bool)``; invalid normals are NaN.
    """
    P = np.asarray(vertex, dtype=np.float64)
    R = np.asarray(ranges, dtype=np.float64)
    t_u, ok_u = _tangent(P, R, 1, wrap, disc_abs, disc_rel, crease_cos)
    t_v, ok_v = _tangent(P, R, 0, False, disc_abs, disc_rel, crease_cos)
    n = np.cross(t_u, t_v)
    norm = np.linalg.norm(n, axis=-1)
    with np.errstate(invalid="ignore"):
        valid = ok_u & ok_v & (norm >= 1e-10)
    out = np.full(P.shape, np.nan)
    n = n[valid] / norm[valid][:, None]
    flip = np.sum(n * P[valid], axis=1) > 0
    n[flip] = -n[flip]
    out[valid] = n
    return out, valid


def classify_kernel(normals, valid, wrap, edge_angle, majority):
    """Label every pixel from the normals of its 3x3 neighborhood."""
    H, W = valid.shape
    Nz = np.where(valid[..., None], normals, 0.0)
    stack_n = []
    stack_v = []
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            n = _shift(_shift(Nz, dv, 0, False, 0.0), du, 1, wrap, 0.0)
            m = _shift(_shift(valid, dv, 0, False, False), du, 1, wrap, False)
            stack_n.append(n)
            stack_v.append(m)
    N = np.stack(stack_n, axis=2)  # (H, W, 9, 3)
    V = np.stack(stack_v, axis=2)  # (H, W, 9)
    k = V.sum(axis=2)

    ang_sum = np.zeros((H, W))
    pairs = np.zeros((H, W))
    for i in range(9):
        for j in range(i + 1, 9):
            both = V[..., i] & V[..., j]
            c = np.clip(np.sum(N[..., i, :] * N[..., j, :], axis=-1), -1.0, 1.0)
            ang_sum += np.where(both, np.arccos(c), 0.0)
            pairs += both
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_angle = np.where(pairs > 0, ang_sum / np.maximum(pairs, 1), 0.0)

    a = np.abs(N)
    z_dom = (a[..., 2] > a[..., 0]) & (a[..., 2] > a[..., 1]) & V
    x_dom = (a[..., 0] > a[..., 1]) & (a[..., 0] > a[..., 2])
    y_dom = (a[..., 1] > a[..., 0]) & (a[..., 1] > a[..., 2])
    n_up = (z_dom & (N[..., 2] > 0)).sum(axis=2)
    n_down = (z_dom & (N[..., 2] < 0)).sum(axis=2)
    n_wall = ((x_dom | y_dom) & V).sum(axis=2)
    need = np.ceil(majority * k - 1e-9)

    labels = np.full((H, W), LABEL_UNKNOWN, dtype=np.uint8)
    undecided = valid & (k >= 3)
    for mask, lab in (
        (mean_angle > edge_angle, LABEL_EDGE),
        (n_up >= need, LABEL_GROUND),
        (n_down >= need, LABEL_ROOF),
        (n_wall >= need, LABEL_WALL),
    ):
        hit = undecided & mask
        labels[hit] = lab
        undecided &= ~hit
    return labels


def _nearest_exact(tree, pts, q, max_dist, max_d2):
    """Index into ``pts`` of each query's nearest point within ``max_dist`` (-1 if none).

    The tree only proposes candidates: every point within a hair of the tree's
    nearest distance is re-scored with the same squared-distance arithmetic as
    the compiled kernel, and ties go to the smallest (x, y, z), then index.
    """
    out = np.full(len(q), -1, dtype=np.int64)
    if len(q) == 0 or len(pts) == 0:
        return out
    d, _ = tree.query(q, k=1, distance_upper_bound=max_dist * (1 + 1e-9) + 1e-12)
    live = np.flatnonzero(np.isfinite(d))
    if len(live) == 0:
        return out
    balls = tree.query_ball_point(q[live], r=d[live] * (1 + 1e-9) + 1e-12)
    counts = np.fromiter((len(b) for b in balls), dtype=np.int64, count=len(balls))
    cand = np.fromiter((i for b in balls for i in b), dtype=np.int64, count=int(counts.sum()))
    owner = np.repeat(live, counts)
    diff = pts[cand] - q[owner]
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    keep = d2 <= max_d2
    owner, cand, d2 = owner[keep], cand[keep], d2[keep]
    if len(cand) == 0:
        return out
    pc = pts[cand]
    order = np.lexsort((cand, pc[:, 2], pc[:, 1], pc[:, 0], d2, owner))
    o_sorted = owner[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = o_sorted[1:] != o_sorted[:-1]
    out[o_sorted[first]] = cand[order[first]]
    return out


def voxel_nn_kernel(queries, query_labels, vkeys, vstarts, vcounts, points, labels,
                    voxel_size, rings, max_dist):
    """Nearest stored point per query, overall and restricted to the query's label.

    ``vkeys`` are sorted packed voxel keys; the points of voxel ``i`` occupy
    ``points[vstarts[i]:vstarts[i] + vcounts[i]]``. Returns ``(any_idx, same_idx)``,
    -1 where nothing lies within ``max_dist``. The same-label search runs only
    for planar query labels (Ground/Roof/Wall). Ties go to the lexicographically
    smallest target coordinates, then the lowest index.

    The compiled kernel walks the voxel rings; this one uses k-d trees over the
    stored points (an exact Euclidean search gives the same answer), so the
    voxel layout arguments are only checked for emptiness.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    query_labels = np.asarray(query_labels, dtype=np.uint8)
    nq = len(queries)
    same_idx = np.full(nq, -1, dtype=np.int64)
    if nq == 0 or len(vkeys) == 0:
        return np.full(nq, -1, dtype=np.int64), same_idx
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.uint8)
    max_d2 = max_dist * max_dist
    any_idx = _nearest_exact(cKDTree(points), points, queries, max_dist, max_d2)
    for lab in (LABEL_GROUND, LABEL_ROOF, LABEL_WALL):
        qsel = np.flatnonzero(query_labels == lab)
        psel = np.flatnonzero(labels == lab)
        if len(qsel) == 0 or len(psel) == 0:
            continue
        sub = points[psel]
        hit = _nearest_exact(cKDTree(sub), sub, queries[qsel], max_dist, max_d2)
        ok = hit >= 0
        same_idx[qsel[ok]] = psel[hit[ok]]
    return any_idx, same_idx


KEY_BIAS = 1 << 20
KEY_MASK = (1 << 21) - 1


def pack_keys(cells):
    c = np.asarray(cells, dtype=np.int64) + KEY_BIAS
    return (c[:, 0] << 42) | (c[:, 1] << 21) | c[:, 2]


def unpack_keys(keys):
    keys = np.asarray(keys, dtype=np.int64)
    return np.stack([(keys >> 42) & KEY_MASK, (keys >> 21) & KEY_MASK, keys & KEY_MASK],
                    axis=1) - KEY_BIAS
