"""Numba kernel for exact K-th neighbor distances on a uniform grid.

Points are bucketed into cells of side `cell` and reordered so each
cell's points are contiguous (`starts` holds per-cell offsets into the
sorted arrays). Each query walks Chebyshev rings of cells outward,
keeping the K smallest squared distances in a max-heap, and stops once
the heap root is at most (r*cell)^2: any point beyond ring r is at
least r*cell away, so the answer is certified exact.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def grid_kth_distances(pts_sorted, coords_sorted, orig_idx, starts,
                       nx, ny, nz, cell, k):
    n = pts_sorted.shape[0]
    out = np.empty(n)
    heap = np.empty(k)
    max_ring = max(nx, max(ny, nz))
    for q in range(n):
        px = pts_sorted[q, 0]
        py = pts_sorted[q, 1]
        pz = pts_sorted[q, 2]
        cx = coords_sorted[q, 0]
        cy = coords_sorted[q, 1]
        cz = coords_sorted[q, 2]
        hsize = 0
        for r in range(0, max_ring + 1):
            x0 = max(cx - r, 0)
            x1 = min(cx + r, nx - 1)
            y0 = max(cy - r, 0)
            y1 = min(cy + r, ny - 1)
            z0 = max(cz - r, 0)
            z1 = min(cz + r, nz - 1)
            for gx in range(x0, x1 + 1):
                dxr = abs(gx - cx)
                for gy in range(y0, y1 + 1):
                    dyr = abs(gy - cy)
                    inner = r > 0 and dxr < r and dyr < r
                    for gz in range(z0, z1 + 1):
                        # Only the shell of the ring is new at radius r.
                        if inner and abs(gz - cz) < r:
                            continue
                        cid = (gx * ny + gy) * nz + gz
                        for j in range(starts[cid], starts[cid + 1]):
                            if j == q:
                                continue
                            dx = pts_sorted[j, 0] - px
                            dy = pts_sorted[j, 1] - py
                            dz = pts_sorted[j, 2] - pz
                            d2 = dx * dx + dy * dy + dz * dz
                            if hsize < k:
                                # Sift up.
                                c = hsize
                                heap[c] = d2
                                hsize += 1
                                while c > 0:
                                    p = (c - 1) >> 1
                                    if heap[p] < heap[c]:
                                        heap[p], heap[c] = heap[c], heap[p]
                                        c = p
                                    else:
                                        break
                            elif d2 < heap[0]:
                                # Replace the root and sift down.
                                heap[0] = d2
                                c = 0
                                while True:
                                    left = 2 * c + 1
                                    if left >= k:
                                        break
                                    big = left
                                    right = left + 1
                                    if right < k and heap[right] > heap[left]:
                                        big = right
                                    if heap[big] > heap[c]:
                                        heap[big], heap[c] = heap[c], heap[big]
                                        c = big
                                    else:
                                        break
            if hsize == k:
                bound = r * cell
                if heap[0] <= bound * bound:
                    break
        out[orig_idx[q]] = np.sqrt(heap[0]) if hsize == k else np.inf
    return out
