"""Undirected graph container and IO.

Graphs are stored once, in CSR form, with both directions of every
undirected edge present and neighbor lists sorted ascending. All loaders
funnel through the same builder so deduplication and self-loop handling
are uniform.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "valid", "test")


def build_csr(num_nodes, pairs):
    """Build symmetric CSR arrays from an array of (u, v) pairs.

    Self-loops and duplicate edges (in either orientation) are dropped.

    Parameters
    ----------
    num_nodes : int
    pairs : ndarray of shape (m, 2), integer node ids in [0, num_nodes)

    Returns
    -------
    indptr, indices : int64 arrays
    n_self_dropped, n_dup_dropped : int
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        raise DataError(
            f"edge endpoint out of range: ids must lie in [0, {num_nodes})"
        )
    self_mask = pairs[:, 0] == pairs[:, 1]
    n_self = int(self_mask.sum())
    pairs = pairs[~self_mask]
    # canonical orientation u < v, then dedup
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    canon = np.unique(np.stack([lo, hi], axis=1), axis=0) if len(lo) else np.empty((0, 2), np.int64)
    n_dup = len(pairs) - len(canon)
    both = np.concatenate([canon, canon[:, ::-1]], axis=0) if len(canon) else canon
    order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else np.empty(0, np.int64)
    both = both[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, both[:, 0] + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, both[:, 1].copy(), n_self, n_dup


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph in CSR form.

    ``indices[indptr[i]:indptr[i+1]]`` are the neighbors of node ``i``,
    sorted ascending. Optional per-node payloads: ``features`` (float64),
    ``labels`` (binary int8, one column per label), ``split`` (int8 codes
    indexing SPLIT_TAGS), ``original_ids`` (pre-remap ids from a loader).
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    split: np.ndarray | None = None
    original_ids: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_edges(self):
        """Undirected edge count."""
        return len(self.indices) // 2

    @property
    def degrees(self):
        return np.diff(self.indptr)

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edge_array(self):
        """All undirected edges as an (E, 2) array with u < v, lexicographically sorted."""
        if "edges" not in self._cache:
            src = np.repeat(np.arange(self.num_nodes), self.degrees)
            mask = src < self.indices
            self._cache["edges"] = np.stack([src[mask], self.indices[mask]], axis=1)
        return self._cache["edges"]

    def adjacency(self):
        """Binary adjacency as scipy CSR (float64)."""
        if "adj" not in self._cache:
            self._cache["adj"] = sp.csr_matrix(
                (np.ones(len(self.indices)), self.indices, self.indptr),
                shape=(self.num_nodes, self.num_nodes),
            )
        return self._cache["adj"]

    def mean_aggregator(self):
        """Row-normalized adjacency D^-1 A; rows of isolated nodes are zero."""
        if "mean_agg" not in self._cache:
            deg = self.degrees.astype(np.float64)
            inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
            data = np.repeat(inv, self.degrees)
            self._cache["mean_agg"] = sp.csr_matrix(
                (data, self.indices, self.indptr),
                shape=(self.num_nodes, self.num_nodes),
            )
        return self._cache["mean_agg"]

    def content_hash(self):
        """Hex digest of the topology alone (nodes + canonical edges)."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.int64(self.num_nodes).tobytes())
        h.update(np.ascontiguousarray(self.edge_array(), dtype=np.int64).tobytes())
        return h.hexdigest()

    def replace(self, **kw):
        """Copy with some payload fields replaced."""
        base = dict(
            num_nodes=self.num_nodes, indptr=self.indptr, indices=self.indices,
            features=self.features, labels=self.labels, split=self.split,
            original_ids=self.original_ids,
        )
        base.update(kw)
        return Graph(**base)

    @classmethod
    def from_edges(cls, num_nodes, pairs, **payload):
        indptr, indices, n_self, n_dup = build_csr(num_nodes, pairs)
        if n_self or n_dup:
            logger.info("dropped %d self-loop(s) and %d duplicate edge(s)", n_self, n_dup)
        return cls(num_nodes=num_nodes, indptr=indptr, indices=indices, **payload)


def load_edge_list(path, num_nodes=None):
    """Load a whitespace-delimited edge list ("u v" per line, '#' comments).

    Arbitrary non-negative integer ids are remapped to 0..N-1 in sorted
    order; the original ids are kept on ``graph.original_ids``. If
    ``num_nodes`` is given, ids are taken as already in [0, num_nodes) and
    no remapping happens (isolated trailing nodes stay representable).

    Returns
    -------
    Graph
    """
    pairs = []
    with open(path, "rt", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{ln}: expected two node ids, got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{ln}: non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise DataError(f"{path}:{ln}: negative node id in {line!r}")
            pairs.append((u, v))
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    if num_nodes is None:
        if len(pairs) == 0:
            raise DataError(f"{path}: empty edge list and no node count given")
        uniq = np.unique(pairs)
        remap = np.searchsorted(uniq, pairs)
        return Graph.from_edges(len(uniq), remap, original_ids=uniq)
    if len(pairs) and pairs.max() >= num_nodes:
        raise DataError(f"{path}: node id {pairs.max()} >= num_nodes={num_nodes}")
    return Graph.from_edges(num_nodes, pairs)


def save_edge_list(path, graph):
    """Write canonical edges (u < v, sorted) one per line; round-trips byte-identically."""
    with open(path, "wt", encoding="utf-8") as fh:
        for u, v in graph.edge_array():
            fh.write(f"{u} {v}\n")


def generate_sbm(block_sizes, p_in, p_out, seed):
    """Sample a stochastic block model graph.

    Each within-block pair is an edge with probability ``p_in``, each
    cross-block pair with ``p_out``. Labels are one-hot block membership.

    Parameters
    ----------
    block_sizes : sequence of int
    p_in, p_out : float in [0, 1], requires p_in >= p_out
    seed : int

    Returns
    -------
    Graph with ``labels`` set to (N, num_blocks) one-hot int8.
    """
    block_sizes = [int(b) for b in block_sizes]
    if any(b <= 0 for b in block_sizes):
        raise ConfigError("block sizes must be positive")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ConfigError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    n = sum(block_sizes)
    membership = np.repeat(np.arange(len(block_sizes)), block_sizes)
    rng = np.random.default_rng(seed)
    prob = np.where(membership[:, None] == membership[None, :], p_in, p_out)
    draw = rng.random((n, n))
    iu, ju = np.triu_indices(n, k=1)
    keep = draw[iu, ju] < prob[iu, ju]
    pairs = np.stack([iu[keep], ju[keep]], axis=1)
    labels = np.zeros((n, len(block_sizes)), dtype=np.int8)
    labels[np.arange(n), membership] = 1
    return Graph.from_edges(n, pairs, labels=labels)


@dataclass(frozen=True)
class SplitSpec:
    """How to split nodes into train/valid/test.

    mode 'random': ``fractions`` = (train, valid, test), floor counts then
    leftover nodes distributed train-first.
    mode 'by_class': ``class_partition`` = (train_classes, valid_classes,
    test_classes), lists of label column indices; a node with any
    test-class label goes to test, else any valid-class label to valid,
    else train.
    mode 'provided': ``path`` of a file with one split tag per line.
    """

    mode: str
    fractions: tuple = None
    class_partition: tuple = None
    path: str = None


def make_split(graph, spec, seed=42):
    """Assign every node a split code (0 train, 1 valid, 2 test) per ``spec``."""
    n = graph.num_nodes
    if spec.mode == "random":
        tr, va, te = spec.fractions
        if min(tr, va, te) < 0 or abs(tr + va + te - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be nonnegative and sum to 1, got {spec.fractions}")
        counts = [int(np.floor(f * n)) for f in (tr, va, te)]
        k = 0
        while sum(counts) < n:
            counts[k % 3] += 1
            k += 1
        order = np.random.default_rng(seed).permutation(n)
        split = np.empty(n, dtype=np.int8)
        split[order[:counts[0]]] = 0
        split[order[counts[0]:counts[0] + counts[1]]] = 1
        split[order[counts[0] + counts[1]:]] = 2
        return split
    if spec.mode == "by_class":
        if graph.labels is None:
            raise ConfigError("by_class split requires node labels")
        tr_c, va_c, te_c = (np.asarray(c, dtype=np.int64) for c in spec.class_partition)
        overlap = (set(tr_c) & set(va_c)) | (set(tr_c) & set(te_c)) | (set(va_c) & set(te_c))
        if overlap:
            raise ConfigError(f"class partition overlaps on classes {sorted(overlap)}")
        lab = graph.labels
        split = np.zeros(n, dtype=np.int8)
        if len(va_c):
            split[lab[:, va_c].any(axis=1)] = 1
        if len(te_c):
            split[lab[:, te_c].any(axis=1)] = 2
        return split
    if spec.mode == "provided":
        split = load_split(spec.path)
        if len(split) != n:
            raise DataError(f"{spec.path}: {len(split)} split rows for {n} nodes")
        return split
    raise ConfigError(f"unknown split mode {spec.mode!r}")


def load_split(path):
    """Read one split tag per line into int8 codes."""
    codes = []
    with open(path, "rt", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            tag = line.strip()
            if not tag:
                continue
            if tag not in SPLIT_TAGS:
                raise DataError(f"{path}:{ln}: unknown split tag {tag!r}")
            codes.append(SPLIT_TAGS.index(tag))
    return np.array(codes, dtype=np.int8)


def save_split(path, split):
    with open(path, "wt", encoding="utf-8") as fh:
        for code in split:
            fh.write(SPLIT_TAGS[int(code)] + "\n")


def disjoint_union(graphs):
    """Merge graphs into one disconnected graph; returns (merged, offsets).

    Payload arrays are concatenated when present on every input (features
    additionally require matching widths), otherwise dropped.
    """
    if not graphs:
        raise ConfigError("disjoint_union of no graphs")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    pairs = np.concatenate(
        [g.edge_array() + off for g, off in zip(graphs, offsets)], axis=0
    ) if any(g.num_edges for g in graphs) else np.empty((0, 2), np.int64)

    def merged(attr, widths_must_match=False):
        vals = [getattr(g, attr) for g in graphs]
        if any(v is None for v in vals):
            return None
        if widths_must_match and len({v.shape[1] for v in vals}) > 1:
            return None
        return np.concatenate(vals, axis=0)

    g = Graph.from_edges(
        int(offsets[-1]), pairs,
        features=merged("features", True),
        labels=merged("labels", True),
        split=merged("split"),
    )
    return g, offsets[:-1]


def load_graph_dir(root):
    """Load every ``*.edges`` graph under ``root`` with optional sidecars.

    Sidecars per stem: ``<stem>.features.txt``/``.features.bin``,
    ``<stem>.labels.txt``, ``<stem>.split.txt``, ``<stem>.context.bin``
    (precomputed context embeddings, returned separately).

    Returns
    -------
    dict of stem -> (Graph, context ndarray or None), sorted by stem.
    """
    from . import storage

    out = {}
    names = sorted(f for f in os.listdir(root) if f.endswith(".edges"))
    if not names:
        raise DataError(f"{root}: no *.edges files")
    for name in names:
        stem = name[:-len(".edges")]
        g = load_edge_list(os.path.join(root, name))
        payload = {}
        feat_txt = os.path.join(root, stem + ".features.txt")
        feat_bin = os.path.join(root, stem + ".features.bin")
        if os.path.exists(feat_bin):
            payload["features"] = storage.load_matrix(feat_bin).astype(np.float64)
        elif os.path.exists(feat_txt):
            payload["features"] = storage.load_text_matrix(feat_txt)
        lab = os.path.join(root, stem + ".labels.txt")
        if os.path.exists(lab):
            payload["labels"] = storage.load_text_matrix(lab).astype(np.int8)
        spl = os.path.join(root, stem + ".split.txt")
        if os.path.exists(spl):
            payload["split"] = load_split(spl)
        for key, arr in payload.items():
            if len(arr) != g.num_nodes:
                raise DataError(f"{root}/{stem}: {key} has {len(arr)} rows for {g.num_nodes} nodes")
        if payload:
            g = g.replace(**payload)
        ctx_path = os.path.join(root, stem + ".context.bin")
        ctx = storage.load_matrix(ctx_path) if os.path.exists(ctx_path) else None
        out[stem] = (g, ctx)
    return out
