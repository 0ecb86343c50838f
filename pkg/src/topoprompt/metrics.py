"""Evaluation metrics and embedding-space analyses.

ROC-AUC is rank-based (Mann-Whitney with midrank ties); an input with a
single class returns nan, the caller-facing invalid-label signal. All
neighbor analyses use exact cosine distances on the given embeddings
with node-id tie-breaks, so results are deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError

FPR_GRID = np.linspace(0.0, 1.0, 1001)


def _midranks(x):
    """Average ranks (1-based) with ties sharing their midrank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels):
    """Mann-Whitney ROC-AUC; nan when only one class is present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = _midranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class RocCurve:
    """TPR sampled on the fixed 1001-point FPR grid, plus the grid AUC."""

    def __init__(self, tpr):
        tpr = np.asarray(tpr, dtype=np.float64)
        if tpr.shape != FPR_GRID.shape:
            raise DataError(f"curve needs {len(FPR_GRID)} TPR points, got {tpr.shape}")
        self.tpr = tpr
        self.auc = float(np.trapezoid(tpr, FPR_GRID))


def roc_curve(scores, labels):
    """Interpolate the empirical ROC onto the grid (right-continuous steps)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_curve needs both classes")
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(pos[order])
    fp = np.cumsum(~pos[order])
    # collapse ties: keep the last point of each distinct score
    distinct = np.append(scores[order][1:] != scores[order][:-1], True)
    fpr = np.concatenate([[0.0], fp[distinct] / n_neg])
    tpr = np.concatenate([[0.0], tp[distinct] / n_pos])
    idx = np.searchsorted(fpr, FPR_GRID, side="right") - 1
    return RocCurve(tpr[idx])


def macro_roc(curves):
    """Pointwise mean of per-label curves on the shared grid."""
    if not curves:
        raise DataError("macro_roc of no curves")
    return RocCurve(np.mean([c.tpr for c in curves], axis=0))


def f1_best_threshold(scores, labels):
    """Exhaustive threshold scan maximizing F1 for predictions score >= t.

    Candidates are the distinct scores plus one above the maximum (the
    all-negative predictor); ties keep the smallest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    cands = np.unique(scores)
    cands = np.append(cands, cands[-1] + 1.0)
    best_t, best_f1 = cands[0], -1.0
    n_pos = int((labels == 1).sum())
    for t in cands:
        pred = scores >= t
        tp = int((pred & (labels == 1)).sum())
        fp = int((pred & (labels != 1)).sum())
        fn = n_pos - tp
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        if f1 > best_f1:
            best_t, best_f1 = float(t), f1
    return best_t, best_f1


def accuracy_at_thresholds(scores, labels, thresholds):
    """Mean over labels of accuracy at each label's own threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    accs = [
        float(((scores[:, l] >= thresholds[l]).astype(np.int8) == labels[:, l].astype(np.int8)).mean())
        for l in range(labels.shape[1])
    ]
    return float(np.mean(accs))


def spearman(x, y):
    """Spearman rank correlation with midrank ties.

    Returns (rho, degenerate); degenerate is set (and rho is 0.0) when
    either variable has no rank variance.
    """
    rx = _midranks(x)
    ry = _midranks(y)
    sx = rx.std()
    sy = ry.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0, True
    cov = ((rx - rx.mean()) * (ry - ry.mean())).mean()
    return float(cov / (sx * sy)), False


def _cosine_distances(embeddings):
    emb = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    unit = np.divide(emb, norms, out=np.zeros_like(emb), where=norms > 0)
    d = 1.0 - unit @ unit.T
    np.clip(d, 0.0, 2.0, out=d)
    return d


def knn_ids(embeddings, k):
    """(N, k) nearest-neighbor ids by cosine distance, self excluded.

    Ties at equal distance resolve to the smaller node id (stable sort).
    """
    d = _cosine_distances(embeddings)
    np.fill_diagonal(d, np.inf)
    n = d.shape[0]
    if k > n - 1:
        raise ConfigError(f"k={k} too large for {n} nodes")
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def local_density(embeddings, k=15):
    """Inverse mean cosine distance to the k nearest neighbors."""
    d = _cosine_distances(embeddings)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    mean_d = d[np.arange(d.shape[0])[:, None], nn].mean(axis=1)
    return 1.0 / np.maximum(mean_d, 1e-12)


def density_multifunctionality_spearman(embeddings, label_counts, k=15):
    """Spearman of per-node label counts against local embedding density."""
    emb = np.asarray(embeddings)
    if emb.shape[0] <= k:
        raise DataError(f"need more than k={k} nodes, got {emb.shape[0]}")
    return spearman(np.asarray(label_counts, dtype=np.float64), local_density(emb, k=k))


def same_label_enrichment(embeddings, label, k_grid):
    """Mean same-label fraction among k nearest neighbors of positive nodes.

    Returns a list of (k, fraction) with k clipped to N-1.
    """
    label = np.asarray(label)
    pos = np.flatnonzero(label == 1)
    if len(pos) < 2:
        raise DataError("enrichment needs a label with at least 2 positives")
    n = len(label)
    kmax = min(max(k_grid), n - 1)
    nn = knn_ids(embeddings, kmax)
    out = []
    for k in k_grid:
        kk = min(k, n - 1)
        frac = label[nn[pos, :kk]].mean()
        out.append((int(k), float(frac)))
    return out


class CoEnrichmentMatrix:
    """Pairwise label co-enrichment with a clustering-derived display order."""

    def __init__(self, values, order, anchor_labels):
        self.values = values
        self.order = order
        self.anchor_labels = anchor_labels

    def reordered(self):
        return self.values[np.ix_(self.order, self.order)]


def _leaf_order(linkage_matrix, n):
    """Dendrogram leaves, recursing into the smaller subtree first."""
    sizes = {i: 1 for i in range(n)}
    children = {}
    for idx, (a, b, _dist, size) in enumerate(linkage_matrix):
        node = n + idx
        children[node] = (int(a), int(b))
        sizes[node] = int(size)

    order = []
    stack = [n + len(linkage_matrix) - 1] if len(linkage_matrix) else [0]
    while stack:
        node = stack.pop()
        if node < n:
            order.append(node)
            continue
        a, b = children[node]
        first, second = (a, b) if sizes[a] <= sizes[b] else (b, a)
        if sizes[a] == sizes[b]:
            first, second = (a, b) if a < b else (b, a)
        stack.append(second)
        stack.append(first)
    return np.array(order, dtype=np.int64)


def co_enrichment(embeddings, multilabels, anchor_set, k, ratio_mode=False):
    """Label-pair neighborhood enrichment over the anchor label set.

    Entry (a, b): mean over nodes carrying label a of the fraction of
    their k nearest neighbors carrying label b; ratio mode divides by
    the global prevalence of b. Display order comes from average-linkage
    clustering (Euclidean) of the symmetrized matrix.
    """
    labels = np.asarray(multilabels)
    anchor_set = list(anchor_set)
    for a in anchor_set:
        if (labels[:, a] == 1).sum() < 1:
            raise DataError(f"anchor label {a} has no positives")
    nn = knn_ids(embeddings, k)
    p = len(anchor_set)
    values = np.zeros((p, p))
    for i, a in enumerate(anchor_set):
        rows = np.flatnonzero(labels[:, a] == 1)
        neigh = nn[rows]
        for j, bcol in enumerate(anchor_set):
            values[i, j] = labels[neigh, bcol].mean()
    if ratio_mode:
        prev = labels[:, anchor_set].mean(axis=0)
        if (prev == 0).any():
            raise DataError("zero-prevalence label in ratio mode")
        values = values / prev[None, :]
    if p == 1:
        return CoEnrichmentMatrix(values, np.array([0]), anchor_set)
    sym = 0.5 * (values + values.T)
    from scipy.cluster.hierarchy import linkage
    from scipy.spatial.distance import pdist

    lm = linkage(pdist(sym, metric="euclidean"), method="average")
    return CoEnrichmentMatrix(values, _leaf_order(lm, p), anchor_set)


def stratified_auc(per_label_auc, strata):
    """Unweighted mean AUC per stratum; empty strata are simply absent.

    ``per_label_auc`` maps label -> AUC (nan entries are skipped);
    ``strata`` maps label -> stratum name and must cover every label.
    """
    missing = [l for l in per_label_auc if l not in strata]
    if missing:
        raise DataError(f"labels without a stratum: {missing}")
    groups = {}
    for l, auc in per_label_auc.items():
        if np.isfinite(auc):
            groups.setdefault(strata[l], []).append(auc)
    return {s: float(np.mean(v)) for s, v in sorted(groups.items())}
