"""Independent brute-force oracles shared by unit and acceptance tests.

These deliberately reimplement the checked operations in the most naive way
possible and must stay independent of the library code paths they verify.
"""

import numpy as np

from hsikit import splitting as sp


def point_in_polygon_naive(px: float, py: float, vertices) -> bool:
    """Scalar even-odd rule, textbook loop."""
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < xint:
                inside = not inside
    return inside


def rasterize_naive(height, width, polygons):
    """O(pixels x polygons) scan; returns labels and a conflict flag."""
    labels = np.zeros((height, width), dtype=np.int32)
    conflict = False
    for y in range(height):
        for x in range(width):
            hits = [
                p.land_cover
                for p in polygons
                if point_in_polygon_naive(x + 0.5, y + 0.5, p.vertices)
            ]
            if len(set(hits)) > 1:
                conflict = True
            if hits:
                labels[y, x] = hits[0]
    return labels, conflict


def segment_distance_naive(p1, p2, q1, q2) -> float:
    """Min distance between two segments via dense sampling plus endpoints."""
    ts = np.linspace(0.0, 1.0, 64)
    a = p1[None, :] + ts[:, None] * (p2 - p1)[None, :]
    b = q1[None, :] + ts[:, None] * (q2 - q1)[None, :]
    d = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    return float(d.min())


def polygon_distance_naive(a, b) -> float:
    best = np.inf
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            best = min(
                best,
                segment_distance_naive(
                    a[i], a[(i + 1) % a.shape[0]], b[j], b[(j + 1) % b.shape[0]]
                ),
            )
    return best


def grouping_naive(polygons, radius_px: float):
    """All-pairs polygon distance + union-find; returns root labels."""
    n = len(polygons)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if polygon_distance_naive(polygons[i].vertices, polygons[j].vertices) <= radius_px:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    return [find(i) for i in range(n)]


def counts_naive(label_map, group_map, n_groups, n_classes):
    P = np.zeros((n_groups, n_classes), dtype=np.int64)
    h, w = label_map.shape
    for y in range(h):
        for x in range(w):
            k = label_map[y, x]
            g = group_map[y, x]
            if k > 0 and g >= 0:
                P[g, k - 1] += 1
    return P


def brute_force_split(problem: sp.SplitProblem):
    """Enumerate all 4^n assignments; returns (best objective or None,
    best assignment vector or None)."""
    P = problem.P.astype(np.float64)
    n, c = P.shape
    totals = P.sum(axis=0)
    thresholds = np.array(
        [
            [sp._threshold(problem.proportions[s], totals[k]) for k in range(c)]
            for s in sp.CONSTRAINED_SETS
        ]
    )
    group_tot = P.sum(axis=1).astype(np.float32)
    total = float(P.sum())
    best_obj, best_vec = None, None
    n_assign = 4 ** n
    chunk = 1 << 20
    for start in range(0, n_assign, chunk):
        idx = np.arange(start, min(start + chunk, n_assign), dtype=np.int64)
        digits = np.empty((idx.size, n), dtype=np.int8)
        for i in range(n):
            digits[:, i] = ((idx >> (2 * i)) & 3) + 1
        ok = np.ones(idx.size, dtype=bool)
        for si, s in enumerate(sp.CONSTRAINED_SETS):
            sums = (digits == s).astype(np.float32) @ P.astype(np.float32)
            ok &= np.all(sums >= thresholds[si][None, :], axis=1)
        if not ok.any():
            continue
        pool_px = (digits == 2).astype(np.float32) @ group_tot
        obj = total - pool_px
        local = int(np.argmin(np.where(ok, obj, np.inf)))
        if best_obj is None or obj[local] < best_obj - 1e-9:
            best_obj = float(obj[local])
            best_vec = digits[local].copy()
    return best_obj, best_vec


def direct_gabor_response(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Windowed direct cross-correlation with reflect padding (no FFT)."""
    r = kernel.shape[0] // 2
    padded = np.pad(image, r, mode="reflect")
    h, w = image.shape
    out = np.empty((h, w), dtype=complex)
    size = 2 * r + 1
    for i in range(h):
        windows = np.lib.stride_tricks.sliding_window_view(
            padded[i : i + size, :], (size, size)
        )[0]
        out[i] = np.einsum("xab,ab->x", windows, kernel)
    return np.abs(out)
