"""Independent reference implementations used to cross-check the library.

Everything here is written the slow, obvious way on purpose: plain Python
flood fill, exhaustive path enumeration, brute-force ranking. None of it
shares code with the package under test.
"""

from collections import deque
from itertools import product

import numpy as np

NEIGHBORS_26 = [d for d in product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]


def flood_fill_component_count(mask) -> int:
    """Count 26-connected components by breadth-first flood fill on the mask."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    count = 0
    for start in map(tuple, np.argwhere(mask)):
        if seen[start]:
            continue
        count += 1
        queue = deque([start])
        seen[start] = True
        while queue:
            x, y, z = queue.popleft()
            for dx, dy, dz in NEIGHBORS_26:
                p = (x + dx, y + dy, z + dz)
                if all(0 <= c < s for c, s in zip(p, mask.shape)) and mask[p] and not seen[p]:
                    seen[p] = True
                    queue.append(p)
    return count


def exhaustive_min_path_weight(n_nodes, weighted_edges, src, dst):
    """Minimum total weight over ALL simple src->dst paths, by full enumeration.

    Only feasible for tiny graphs; returns None when dst is unreachable.
    """
    adj = {}
    for u, v, w in weighted_edges:
        adj.setdefault(u, []).append((v, w))
        adj.setdefault(v, []).append((u, w))
    best = [None]

    def walk(node, used, total):
        if node == dst:
            if best[0] is None or total < best[0]:
                best[0] = total
            return
        for nxt, w in adj.get(node, []):
            if nxt not in used:
                used.add(nxt)
                walk(nxt, used, total + w)
                used.remove(nxt)

    walk(src, {src}, 0.0)
    return best[0]


def brute_box_stats(mask, scale):
    """Per-box foreground counts by explicit triple loop over box origins.

    Boxes are anchored at (0, 0, 0) and step by `scale`; voxels past the
    array edge simply contribute nothing (same as zero padding).
    """
    mask = np.asarray(mask, dtype=bool)
    counts = []
    for bx in range(0, mask.shape[0], scale):
        for by in range(0, mask.shape[1], scale):
            for bz in range(0, mask.shape[2], scale):
                counts.append(
                    int(mask[bx : bx + scale, by : by + scale, bz : bz + scale].sum())
                )
    return counts


def rank_average(values):
    """Average ranks (1-based) with ties sharing the mean rank, O(n^2)."""
    values = list(values)
    ranks = []
    for v in values:
        less = sum(1 for o in values if o < v)
        equal = sum(1 for o in values if o == v)
        ranks.append(less + (equal + 1) / 2.0)
    return ranks


def brute_spearman_rho(x, y):
    """Pearson correlation of brute-force average ranks."""
    rx = np.asarray(rank_average(x))
    ry = np.asarray(rank_average(y))
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0:
        return None
    return float((rx * ry).sum() / denom)


def stepup_bh(pvalues):
    """Benjamini-Hochberg adjusted p-values straight from the definition:
    q_i = min over sorted positions j >= rank(i) of p_(j) * m / j, capped at 1.
    """
    p = list(pvalues)
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    q = [None] * m
    for pos, i in enumerate(order):
        candidates = [p[order[j]] * m / (j + 1) for j in range(pos, m)]
        q[i] = min(1.0, min(candidates))
    return q
