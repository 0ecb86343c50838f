"""Per-node structural descriptors and whole-graph statistics.

Everything here is deterministic: randomized algorithms (label
propagation sweep order, edge stream order) draw from generators seeded
by the caller, and all floating-point work is plain float64 numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataError

PAGERANK_DAMPING = 0.85
PAGERANK_ITERS = 40
LP_MAX_SWEEPS = 20


def _edges_among_neighbors(graph):
    """For each node, the number of edges between its neighbors.

    This is the shared kernel for clustering coefficients, radius-1 ego
    edge counts (spokes + these) and transitivity (the numerator equals
    3 * triangle count summed this way).
    """
    out = np.zeros(graph.num_nodes, dtype=np.int64)
    for i in range(graph.num_nodes):
        nbrs = graph.neighbors(i)
        if len(nbrs) < 2:
            continue
        cnt = 0
        for u in nbrs:
            au = graph.neighbors(u)
            pos = np.searchsorted(nbrs, au)
            pos[pos == len(nbrs)] = 0
            cnt += int(np.count_nonzero(nbrs[pos] == au))
        out[i] = cnt // 2
    return out


def clustering_coefficient(graph, node):
    """Local clustering coefficient: edges among neighbors over C(d, 2)."""
    return clustering_coefficients(graph)[node]


def clustering_coefficients(graph):
    d = graph.degrees.astype(np.float64)
    tri = _edges_among_neighbors(graph).astype(np.float64)
    denom = d * (d - 1) / 2.0
    return np.divide(tri, denom, out=np.zeros_like(tri), where=denom > 0)


def kcore_numbers(graph):
    """Core number per node by iterative peeling (bucket algorithm)."""
    n = graph.num_nodes
    deg = graph.degrees.copy()
    order = np.argsort(deg, kind="stable")
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    max_deg = int(deg.max()) if n else 0
    bin_start = np.zeros(max_deg + 2, dtype=np.int64)
    np.add.at(bin_start, deg + 1, 1)
    np.cumsum(bin_start, out=bin_start)
    core = deg.copy()
    for idx in range(n):
        v = order[idx]
        for u in graph.neighbors(v):
            if core[u] > core[v]:
                # swap u toward the front of its degree bucket, then decrement
                du = core[u]
                first = bin_start[du]
                w = order[first]
                if u != w:
                    order[first], order[pos[u]] = u, w
                    pos[w], pos[u] = pos[u], first
                bin_start[du] += 1
                core[u] -= 1
    return core


def ego_stats(graph, node, radius):
    """(vertex count, edge count, density) of the BFS ball around ``node``."""
    if radius not in (1, 2):
        raise ConfigError(f"radius must be 1 or 2, got {radius}")
    members = _ego_members(graph, node, radius)
    return _induced_stats(graph, members)


def _ego_members(graph, node, radius):
    members = {node}
    frontier = [node]
    for _ in range(radius):
        nxt = []
        for v in frontier:
            for u in graph.neighbors(v):
                if u not in members:
                    members.add(u)
                    nxt.append(u)
        frontier = nxt
    return np.array(sorted(members), dtype=np.int64)


def _induced_stats(graph, members):
    v = len(members)
    mask = np.zeros(graph.num_nodes, dtype=bool)
    mask[members] = True
    e = sum(int(mask[graph.neighbors(m)].sum()) for m in members) // 2
    dens = 2.0 * e / (v * (v - 1)) if v > 1 else 0.0
    return v, e, dens


def pagerank(graph, damping=PAGERANK_DAMPING, iters=PAGERANK_ITERS, history=False):
    """PageRank by a fixed number of power iterations from a uniform start.

    Dangling (degree-0) mass is redistributed uniformly, so every iterate
    is a probability distribution.
    """
    n = graph.num_nodes
    if n == 0:
        raise DataError("pagerank of empty graph")
    p = np.full(n, 1.0 / n)
    adj = graph.adjacency()
    deg = graph.degrees.astype(np.float64)
    dangling = deg == 0
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=~dangling)
    iterates = []
    for _ in range(iters):
        spread = adj @ (p * inv_deg) + p[dangling].sum() / n
        p = (1.0 - damping) / n + damping * spread
        if history:
            iterates.append(p.copy())
    return (p, iterates) if history else p


def _renumber_first_occurrence(assign):
    """Map arbitrary community ids to 0..C-1 in order of first appearance."""
    uniq, first = np.unique(assign, return_index=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    return rank[np.searchsorted(uniq, assign)]


def label_propagation(graph, seed=42, max_sweeps=LP_MAX_SWEEPS):
    """Asynchronous label propagation, at most ``max_sweeps`` sweeps.

    Node order is reshuffled every sweep from the seeded generator. Each
    node takes the modal label among its neighbors' current labels, ties
    broken by the smallest label id; stops early once a sweep changes
    nothing. Output ids are renumbered by first occurrence.
    """
    n = graph.num_nodes
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64)
    for _ in range(max_sweeps):
        changed = False
        for i in rng.permutation(n):
            nbrs = graph.neighbors(i)
            if len(nbrs) == 0:
                continue
            counts = np.bincount(labels[nbrs])
            new = int(np.argmax(counts))
            if new != labels[i]:
                labels[i] = new
                changed = True
        if not changed:
            break
    return _renumber_first_occurrence(labels)


def scoda(graph, seed=42, degree_threshold=None):
    """Streaming community detection over a seed-shuffled edge stream.

    Every node starts in its own community. For each streamed edge (u, v)
    the observed degrees are incremented; if the smaller one is still at
    most the threshold, the endpoint with the smaller observed degree
    adopts the other's community (ties: u adopts v's). The threshold
    defaults to the mode of the full degree distribution (ties: smallest
    degree). Output ids are renumbered by first occurrence.
    """
    n = graph.num_nodes
    if degree_threshold is None:
        deg = graph.degrees
        degree_threshold = int(np.argmax(np.bincount(deg))) if n else 0
    rng = np.random.default_rng(seed)
    edges = graph.edge_array()
    comm = np.arange(n, dtype=np.int64)
    observed = np.zeros(n, dtype=np.int64)
    for idx in rng.permutation(len(edges)):
        u, v = edges[idx]
        observed[u] += 1
        observed[v] += 1
        if min(observed[u], observed[v]) <= degree_threshold:
            if observed[u] <= observed[v]:
                comm[u] = comm[v]
            else:
                comm[v] = comm[u]
    return _renumber_first_occurrence(comm)


def community_stats(graph, assignment):
    """Size and internal edge density per community.

    Returns
    -------
    ids : sorted unique community ids
    sizes : member counts aligned with ``ids``
    densities : 2 * internal_edges / (s * (s - 1)), 0 for singletons
    """
    assignment = np.asarray(assignment)
    if len(assignment) != graph.num_nodes:
        raise DataError("assignment must cover all nodes")
    ids, inverse = np.unique(assignment, return_inverse=True)
    sizes = np.bincount(inverse, minlength=len(ids))
    edges = graph.edge_array()
    internal = np.zeros(len(ids), dtype=np.int64)
    if len(edges):
        same = inverse[edges[:, 0]] == inverse[edges[:, 1]]
        np.add.at(internal, inverse[edges[same, 0]], 1)
    s = sizes.astype(np.float64)
    denom = s * (s - 1) / 2.0
    dens = np.divide(internal, denom, out=np.zeros(len(ids)), where=denom > 0)
    return ids, sizes, dens


def spectral_gap(graph, method="adjacency", max_iter=2000, tol=1e-12):
    """Difference between the two largest (algebraic) eigenvalues.

    ``method`` picks the matrix: plain adjacency (default) or the
    symmetric normalized Laplacian. Dense solve for N <= 2000, shifted
    power iteration with deflation beyond that.
    """
    n = graph.num_nodes
    if n < 2:
        return 0.0
    adj = graph.adjacency()
    if method == "adjacency":
        mat = adj
    elif method == "norm_laplacian":
        deg = graph.degrees.astype(np.float64)
        inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
        import scipy.sparse as sp

        d = sp.diags(inv_sqrt)
        mat = sp.eye(n) - d @ adj @ d
    else:
        raise ConfigError(f"unknown spectral gap method {method!r}")
    if n <= 2000:
        vals = np.linalg.eigvalsh(mat.toarray())
        return float(vals[-1] - vals[-2])
    # shift makes the spectrum nonnegative so power iteration tracks the
    # algebraically largest eigenvalue, not the largest magnitude
    shift = float(graph.degrees.max()) + 1.0
    top = []
    vecs = []
    for _ in range(2):
        v = np.ones(n) / np.sqrt(n)
        lam = 0.0
        for _ in range(max_iter):
            w = mat @ v + shift * v
            for u in vecs:
                w -= (u @ w) * u
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            w /= norm
            new_lam = float(w @ (mat @ w)) + shift
            if abs(new_lam - lam) < tol:
                lam = new_lam
                v = w
                break
            lam, v = new_lam, w
        top.append(lam - shift)
        vecs.append(v)
    return top[0] - top[1]


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_edges: int
    avg_degree: float
    transitivity: float
    deg_q25: int
    deg_q50: int
    deg_q75: int
    spectral_gap: float


def graph_stats(graph, gap_method="adjacency"):
    """Whole-graph statistics used in the prompt's graph(...) section."""
    n = graph.num_nodes
    if n < 1:
        raise DataError("graph_stats requires at least one node")
    deg = graph.degrees
    tri3 = int(_edges_among_neighbors(graph).sum())
    triads = int((deg * (deg - 1) // 2).sum())
    srt = np.sort(deg)

    def nearest_rank(q):
        return int(srt[int(np.ceil(q * n)) - 1])

    return GraphStats(
        num_nodes=n,
        num_edges=graph.num_edges,
        avg_degree=2.0 * graph.num_edges / n,
        transitivity=tri3 / triads if triads else 0.0,
        deg_q25=nearest_rank(0.25),
        deg_q50=nearest_rank(0.50),
        deg_q75=nearest_rank(0.75),
        spectral_gap=spectral_gap(graph, method=gap_method),
    )


@dataclass(frozen=True)
class StructuralProfile:
    """All per-node descriptors, in prompt field order."""

    deg: int
    cc: float
    core: int
    ego1_v: int
    ego1_e: int
    ego1_d: float
    ego2_v: int
    ego2_e: int
    ego2_d: float
    pagerank: float
    lp_comm: int
    lp_size: int
    lp_dens: float
    scoda_comm: int
    scoda_size: int
    scoda_dens: float


PROFILE_COLUMNS = tuple(f.name for f in fields(StructuralProfile))
_INT_COLUMNS = {"deg", "core", "ego1_v", "ego1_e", "ego2_v", "ego2_e",
                "lp_comm", "lp_size", "scoda_comm", "scoda_size"}


def compute_profiles(graph, seed=42):
    """Compute every node's StructuralProfile plus the GraphStats.

    One pass shares the expensive pieces (neighbor-edge counts, cores,
    PageRank, both community runs) across nodes. The seed drives label
    propagation and the SCoDA edge stream.
    """
    n = graph.num_nodes
    deg = graph.degrees
    tri = _edges_among_neighbors(graph)
    cc = clustering_coefficients(graph)
    core = kcore_numbers(graph)
    pr = pagerank(graph)
    lp = label_propagation(graph, seed=seed)
    sc = scoda(graph, seed=seed)
    lp_ids, lp_sizes, lp_dens = community_stats(graph, lp)
    sc_ids, sc_sizes, sc_dens = community_stats(graph, sc)
    lp_at = np.searchsorted(lp_ids, lp)
    sc_at = np.searchsorted(sc_ids, sc)
    profiles = []
    for i in range(n):
        d = int(deg[i])
        e1 = d + int(tri[i])
        v1 = d + 1
        v2, e2, d2 = ego_stats(graph, i, 2)
        profiles.append(StructuralProfile(
            deg=d,
            cc=float(cc[i]),
            core=int(core[i]),
            ego1_v=v1,
            ego1_e=e1,
            ego1_d=2.0 * e1 / (v1 * (v1 - 1)) if v1 > 1 else 0.0,
            ego2_v=v2,
            ego2_e=e2,
            ego2_d=d2,
            pagerank=float(pr[i]),
            lp_comm=int(lp[i]),
            lp_size=int(lp_sizes[lp_at[i]]),
            lp_dens=float(lp_dens[lp_at[i]]),
            scoda_comm=int(sc[i]),
            scoda_size=int(sc_sizes[sc_at[i]]),
            scoda_dens=float(sc_dens[sc_at[i]]),
        ))
    return profiles, graph_stats(graph)


def save_profiles(path, profiles):
    """Export profiles as a TSV with the fixed prompt field order."""
    from . import storage

    rows = [[getattr(p, c) for c in PROFILE_COLUMNS] for p in profiles]
    storage.write_table(path, list(PROFILE_COLUMNS), rows)


def load_profiles(path):
    from . import storage

    header, rows = storage.read_table(path)
    if header != list(PROFILE_COLUMNS):
        raise DataError(f"{path}: unexpected descriptor columns {header}")
    out = []
    for row in rows:
        kw = {}
        for col, cell in zip(header, row):
            kw[col] = int(cell) if col in _INT_COLUMNS else float(cell)
        out.append(StructuralProfile(**kw))
    return out


def save_graph_stats(path, stats):
    from . import storage

    cols = [f.name for f in fields(GraphStats)]
    storage.write_table(path, cols, [[getattr(stats, c) for c in cols]])


def load_graph_stats(path):
    from . import storage

    header, rows = storage.read_table(path)
    cols = [f.name for f in fields(GraphStats)]
    if header != cols or len(rows) != 1:
        raise DataError(f"{path}: not a graph-stats table")
    ints = {"num_nodes", "num_edges", "deg_q25", "deg_q50", "deg_q75"}
    kw = {c: (int(v) if c in ints else float(v)) for c, v in zip(cols, rows[0])}
    return GraphStats(**kw)
