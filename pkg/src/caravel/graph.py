"""Weighted vessel graph: construction from a skeleton, pruning, components,
root selection, and shortest-path segment extraction."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from caravel.skeleton import RadiusField, Skeleton

# The 13 lexicographically positive offsets of the 26-neighborhood; for each,
# the neighbor voxel sorts after the base voxel, so u < v holds by construction.
_POSITIVE_OFFSETS = [d for d in product((-1, 0, 1), repeat=3) if d > (0, 0, 0)]


@dataclass
class VesselGraph:
    """Undirected graph over skeleton voxels with physical edge lengths (mm).

    Node ids are indices into `coords`, which is lexicographically sorted, so
    id order and coordinate order agree everywhere ties are broken by id.
    """

    coords: np.ndarray                   # (N, 3) int64, lexicographically sorted
    radii: np.ndarray                    # (N,) float64
    spacing: tuple[float, float, float]
    edge_u: np.ndarray                   # (E,) int64, edge_u[i] < edge_v[i]
    edge_v: np.ndarray
    edge_w: np.ndarray                   # (E,) float64, mm
    nbr_ids: list = field(init=False, repr=False)
    nbr_wts: list = field(init=False, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.edge_u = np.asarray(self.edge_u, dtype=np.int64)
        self.edge_v = np.asarray(self.edge_v, dtype=np.int64)
        self.edge_w = np.asarray(self.edge_w, dtype=np.float64)
        n = len(self.coords)
        src = np.concatenate([self.edge_u, self.edge_v])
        dst = np.concatenate([self.edge_v, self.edge_u])
        wts = np.concatenate([self.edge_w, self.edge_w])
        order = np.lexsort((dst, src))
        src, dst, wts = src[order], dst[order], wts[order]
        bounds = np.searchsorted(src, np.arange(n + 1))
        self.nbr_ids = [dst[bounds[i]:bounds[i + 1]] for i in range(n)]
        self.nbr_wts = [wts[bounds[i]:bounds[i + 1]] for i in range(n)]

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_edges(self) -> int:
        return len(self.edge_u)

    def degree(self, v: int) -> int:
        return len(self.nbr_ids[v])

    def degrees(self) -> np.ndarray:
        return np.array([len(ids) for ids in self.nbr_ids], dtype=np.int64)

    def total_length_mm(self) -> float:
        return float(self.edge_w.sum())

    def edge_weight(self, u: int, v: int) -> float:
        ids = self.nbr_ids[u]
        pos = np.searchsorted(ids, v)
        if pos == len(ids) or ids[pos] != v:
            raise KeyError(f"no edge ({u}, {v})")
        return float(self.nbr_wts[u][pos])


@dataclass(frozen=True)
class ComponentView:
    """One connected component: sorted node ids and induced edge indices."""

    component_id: int
    nodes: np.ndarray          # sorted node ids
    edge_indices: np.ndarray   # sorted indices into the graph's edge arrays

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edge_indices)


@dataclass(frozen=True)
class RootSet:
    r1: int
    r2: int
    r3: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.r1, self.r2, self.r3)


@dataclass(frozen=True)
class SegmentPath:
    """Shortest path from a root (first node) to an end-point (last node)."""

    nodes: tuple[int, ...]
    geodesic_length_mm: float


def build_graph(skeleton: Skeleton, radii: RadiusField) -> VesselGraph:
    """One node per skeleton voxel; one edge per 26-adjacent voxel pair.

    Edge weight is the physical step length √((Δx·dx)²+(Δy·dy)²+(Δz·dz)²).
    """
    if len(radii) != len(skeleton):
        raise ValueError(
            f"radius field has {len(radii)} entries for {len(skeleton)} skeleton voxels"
        )
    voxels = skeleton.voxels
    radius_values = radii.radii
    order = np.lexsort((voxels[:, 2], voxels[:, 1], voxels[:, 0]))
    voxels = voxels[order]
    radius_values = radius_values[order]
    n = len(voxels)
    shape = skeleton.mask.shape
    index = np.full(shape, -1, dtype=np.int64)
    if n:
        index[voxels[:, 0], voxels[:, 1], voxels[:, 2]] = np.arange(n)

    spacing = np.asarray(skeleton.spacing)
    us, vs, ws = [], [], []
    for offset in _POSITIVE_OFFSETS:
        if n == 0:
            break
        nbr = voxels + np.asarray(offset)
        ok = np.all((nbr >= 0) & (nbr < np.asarray(shape)), axis=1)
        if not ok.any():
            continue
        vids = index[nbr[ok, 0], nbr[ok, 1], nbr[ok, 2]]
        hit = vids >= 0
        if not hit.any():
            continue
        uids = np.flatnonzero(ok)[hit]
        us.append(uids)
        vs.append(vids[hit])
        step = float(np.sqrt(((np.asarray(offset) * spacing) ** 2).sum()))
        ws.append(np.full(hit.sum(), step))

    if us:
        edge_u = np.concatenate(us)
        edge_v = np.concatenate(vs)
        edge_w = np.concatenate(ws)
        order = np.lexsort((edge_v, edge_u))
        edge_u, edge_v, edge_w = edge_u[order], edge_v[order], edge_w[order]
    else:
        edge_u = edge_v = np.zeros(0, dtype=np.int64)
        edge_w = np.zeros(0)
    return VesselGraph(
        coords=voxels,
        radii=radius_values,
        spacing=skeleton.spacing,
        edge_u=edge_u,
        edge_v=edge_v,
        edge_w=edge_w,
    )


def _replace_edges(graph: VesselGraph, keep: np.ndarray) -> VesselGraph:
    return VesselGraph(
        coords=graph.coords,
        radii=graph.radii,
        spacing=graph.spacing,
        edge_u=graph.edge_u[keep],
        edge_v=graph.edge_v[keep],
        edge_w=graph.edge_w[keep],
    )


def prune_triangles(graph: VesselGraph) -> VesselGraph:
    """Drop the strictly longest edge of every 3-cycle, repeated to fixpoint.

    Diagonal steps under 26-connectivity create spurious 3-cycles; removing
    the unique longest edge per triangle cannot disconnect anything because
    the two shorter edges stay. Ties keep all three edges.
    """
    current = graph
    while True:
        adj = [set(ids.tolist()) for ids in current.nbr_ids]
        wmap = {
            (int(u), int(v)): float(w)
            for u, v, w in zip(current.edge_u, current.edge_v, current.edge_w)
        }
        doomed: set[tuple[int, int]] = set()
        for u, v in wmap:
            for w in adj[u] & adj[v]:
                if w <= v:
                    continue
                sides = [
                    (wmap[(u, v)], (u, v)),
                    (wmap[(u, w)], (u, w)),
                    (wmap[(v, w)], (v, w)),
                ]
                lengths = sorted(s[0] for s in sides)
                if lengths[2] > lengths[1]:
                    doomed.add(max(sides)[1])
        if not doomed:
            return current
        keep = np.array(
            [(int(u), int(v)) not in doomed for u, v in zip(current.edge_u, current.edge_v)]
        )
        current = _replace_edges(current, keep)


def prune_spurs(graph: VesselGraph, max_length_mm: float) -> VesselGraph:
    """Iteratively remove terminal branches shorter than max_length_mm.

    Off by default; provided for masks with heavy segmentation noise.
    """
    if max_length_mm <= 0:
        return graph
    current = graph
    while True:
        removed_any = False
        degs = current.degrees()
        drop_edges: set[int] = set()
        for start in np.flatnonzero(degs == 1):
            # Walk from the leaf to the first non-chain node, accumulating length.
            path_edges = []
            length = 0.0
            prev, node = -1, int(start)
            while True:
                nbrs = [int(x) for x in current.nbr_ids[node] if x != prev]
                if not nbrs:
                    break
                nxt = nbrs[0]
                eid = _edge_index(current, node, nxt)
                path_edges.append(eid)
                length += current.edge_w[eid]
                prev, node = node, nxt
                if degs[node] != 2:
                    break
            # Only branches hanging off a junction are spurs; bare paths stay.
            if path_edges and length < max_length_mm and degs[node] >= 3:
                drop_edges.update(path_edges)
                removed_any = True
        if not removed_any:
            return current
        keep = np.ones(current.n_edges, dtype=bool)
        keep[list(drop_edges)] = False
        current = _replace_edges(current, keep)


def _edge_index(graph: VesselGraph, a: int, b: int) -> int:
    u, v = (a, b) if a < b else (b, a)
    lo = np.searchsorted(graph.edge_u, u, side="left")
    hi = np.searchsorted(graph.edge_u, u, side="right")
    pos = lo + np.searchsorted(graph.edge_v[lo:hi], v)
    if pos >= hi or graph.edge_v[pos] != v:
        raise KeyError(f"no edge ({a}, {b})")
    return int(pos)


def components(graph: VesselGraph) -> list[ComponentView]:
    """Maximal connected node sets, ordered by (size desc, smallest node id)."""
    n = graph.n_nodes
    label = np.full(n, -1, dtype=np.int64)
    groups: list[list[int]] = []
    for seed in range(n):
        if label[seed] != -1:
            continue
        cid = len(groups)
        stack = [seed]
        label[seed] = cid
        members = [seed]
        while stack:
            u = stack.pop()
            for v in graph.nbr_ids[u]:
                v = int(v)
                if label[v] == -1:
                    label[v] = cid
                    stack.append(v)
                    members.append(v)
        groups.append(sorted(members))

    order = sorted(range(len(groups)), key=lambda g: (-len(groups[g]), groups[g][0]))
    views = []
    if graph.n_edges:
        edge_comp = label[graph.edge_u]
    else:
        edge_comp = np.zeros(0, dtype=np.int64)
    for new_id, g in enumerate(order):
        views.append(
            ComponentView(
                component_id=new_id,
                nodes=np.array(groups[g], dtype=np.int64),
                edge_indices=np.flatnonzero(edge_comp == g),
            )
        )
    return views


def _argmax_diameter(graph: VesselGraph, candidates) -> int:
    """Node with the largest diameter; ties go to the smallest id (lex coord)."""
    best = -1
    best_d = -np.inf
    for v in candidates:
        d = 2.0 * graph.radii[v]
        if d > best_d:
            best, best_d = int(v), d
    return best


def select_roots(graph: VesselGraph, component: ComponentView) -> RootSet:
    """Pick R1/R2 among end-points and R3 among bifurcations by diameter.

    End-points are degree-1 nodes. With one end-point R2 = R1; with none
    (closed loops) R1 = R2 = the max-diameter node. R3 is the max-diameter
    node of degree >= 3, defaulting to R1 when no such node exists.
    """
    if component.n_nodes == 0:
        raise ValueError("cannot select roots of an empty component")
    nodes = component.nodes
    degs = np.array([graph.degree(int(v)) for v in nodes])
    endpoints = nodes[degs == 1]
    if len(endpoints) >= 2:
        r1 = _argmax_diameter(graph, endpoints)
        r2 = _argmax_diameter(graph, [v for v in endpoints if v != r1])
    elif len(endpoints) == 1:
        r1 = r2 = int(endpoints[0])
    else:
        r1 = r2 = _argmax_diameter(graph, nodes)
    bifurcations = nodes[degs >= 3]
    r3 = _argmax_diameter(graph, bifurcations) if len(bifurcations) else r1
    return RootSet(r1=r1, r2=r2, r3=r3)


def shortest_paths(graph: VesselGraph, root: int) -> tuple[np.ndarray, np.ndarray]:
    """Dijkstra distances and deterministic predecessors from one root.

    Among equally short paths the predecessor with the smallest node id (and
    hence lexicographically smallest coordinate) is chosen, so extracted
    paths never depend on traversal order.
    """
    n = graph.n_nodes
    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    dist[root] = 0.0
    heap = [(0.0, root)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in zip(graph.nbr_ids[u], graph.nbr_wts[u]):
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, int(v)))

    pred = np.full(n, -1, dtype=np.int64)
    for v in range(n):
        if v == root or not np.isfinite(dist[v]):
            continue
        for u, w in zip(graph.nbr_ids[v], graph.nbr_wts[v]):  # ids ascending
            if dist[u] + w == dist[v]:
                pred[v] = u
                break
    return dist, pred


def extract_segments(
    graph: VesselGraph, component: ComponentView, root: int
) -> tuple[list[SegmentPath], np.ndarray]:
    """Shortest paths from the root to every end-point of its component.

    Returns the segments (end-points in ascending node-id order) and the
    per-node path multiplicity n(v) = number of segments containing v.
    """
    nodes = component.nodes
    pos = np.searchsorted(nodes, root)
    if pos >= len(nodes) or nodes[pos] != root:
        raise ValueError(f"root {root} is not in component {component.component_id}")
    dist, pred = shortest_paths(graph, root)
    multiplicity = np.zeros(graph.n_nodes, dtype=np.int64)
    segments = []
    for e in nodes:
        e = int(e)
        if e == root or graph.degree(e) != 1:
            continue
        path = [e]
        while path[-1] != root:
            path.append(int(pred[path[-1]]))
        path.reverse()
        multiplicity[path] += 1
        segments.append(SegmentPath(nodes=tuple(path), geodesic_length_mm=float(dist[e])))
    return segments, multiplicity


def closed_walk(graph: VesselGraph, component: ComponentView):
    """Ordered node cycle when the component is one simple closed loop.

    Returns None unless every node has degree exactly 2. The walk starts at
    the smallest node id and moves to its smaller neighbor first.
    """
    nodes = component.nodes
    if len(nodes) < 3:
        return None
    if any(graph.degree(int(v)) != 2 for v in nodes):
        return None
    start = int(nodes[0])
    walk = [start]
    prev, node = -1, start
    while True:
        nxt = next(int(v) for v in graph.nbr_ids[node] if v != prev)
        if nxt == start:
            break
        walk.append(nxt)
        prev, node = node, nxt
    return walk if len(walk) == len(nodes) else None


def fundamental_cycle_lengths(graph: VesselGraph) -> list[float]:
    """Length of each independent loop via a minimum-spanning-forest basis.

    Edges enter Kruskal in (weight, u, v) order; each rejected (non-tree)
    edge closes exactly one cycle whose length is the tree-path length plus
    the edge itself. Lengths are reported in that deterministic edge order.
    """
    n = graph.n_nodes
    order = np.lexsort((graph.edge_v, graph.edge_u, graph.edge_w))
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree_adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    extra: list[tuple[int, int, float]] = []
    for idx in order:
        u, v, w = int(graph.edge_u[idx]), int(graph.edge_v[idx]), float(graph.edge_w[idx])
        ru, rv = find(u), find(v)
        if ru == rv:
            extra.append((u, v, w))
        else:
            parent[ru] = rv
            tree_adj[u].append((v, w))
            tree_adj[v].append((u, w))
    if not extra:
        return []

    # Root every tree once; a parent-pointer walk answers each path query.
    tree_parent = np.full(n, -1, dtype=np.int64)
    tree_pw = np.zeros(n)
    depth = np.full(n, -1, dtype=np.int64)
    for seed in range(n):
        if depth[seed] != -1:
            continue
        depth[seed] = 0
        stack = [seed]
        while stack:
            x = stack.pop()
            for y, w in tree_adj[x]:
                if depth[y] == -1:
                    depth[y] = depth[x] + 1
                    tree_parent[y] = x
                    tree_pw[y] = w
                    stack.append(y)

    lengths = []
    for u, v, w in extra:
        total = w
        a, b = u, v
        while a != b:
            if depth[a] >= depth[b]:
                total += tree_pw[a]
                a = int(tree_parent[a])
            else:
                total += tree_pw[b]
                b = int(tree_parent[b])
        lengths.append(float(total))
    return lengths


def graph_to_json(graph: VesselGraph, path=None) -> dict:
    """Debug/export dump: node table with mm radii and weighted edge list."""
    doc = {
        "spacing_mm": list(graph.spacing),
        "nodes": [
            {"id": i, "x": int(c[0]), "y": int(c[1]), "z": int(c[2]), "radius_mm": float(r)}
            for i, (c, r) in enumerate(zip(graph.coords, graph.radii))
        ],
        "edges": [
            {"u": int(u), "v": int(v), "w_mm": float(w)}
            for u, v, w in zip(graph.edge_u, graph.edge_v, graph.edge_w)
        ],
    }
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    return doc
