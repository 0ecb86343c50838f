"""Multi-graph contrastive pretraining.

Positives come from personalized PageRank (top-k per anchor), the loss
is a symmetric InfoNCE over both embedding streams plus a Laplacian
smoothing term over edges, and optimization is plain Adam. Every source
of randomness flows from the config seed through one generator, so runs
are bitwise reproducible.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from . import storage
from .errors import ConfigError, DataError, NumericError
from .model import ModelState, adapt_features, graph_stream, text_stream

logger = logging.getLogger(__name__)

LOSS_HISTORY_COLUMNS = ("step", "graph_id", "nce", "smooth", "total")


@dataclass(frozen=True)
class PretrainConfig:
    """Contrastive pretraining hyperparameters with full-run defaults."""

    epochs: int = 250
    steps_per_epoch: int = 128
    anchor_batch: int = 1024
    temperature: float = 0.1
    smooth_weight: float = 5e-3
    restart_prob: float = 0.15
    ppr_iters: int = 100
    positives_topk: int = 96
    neg_samples: int = 1024
    large_graph_threshold: int = 20000
    lr: float = 1e-5
    weight_decay: float = 5e-4
    seed: int = 42

    def __post_init__(self):
        for f in fields(self):
            if f.name == "smooth_weight":
                continue
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"{f.name} must be positive, got {getattr(self, f.name)}")
        if self.smooth_weight < 0:
            raise ConfigError(f"smooth_weight must be nonnegative, got {self.smooth_weight}")
        if not 0.0 < self.restart_prob < 1.0:
            raise ConfigError(f"restart_prob must be in (0, 1), got {self.restart_prob}")

    @classmethod
    def from_file(cls, path, **overrides):
        """Parse a flat key=value config file; overrides win over file values."""
        kw = _parse_kv_file(path, cls)
        kw.update(overrides)
        return cls(**kw)

    def to_file(self, path):
        with open(path, "wt", encoding="utf-8") as fh:
            for f in fields(self):
                fh.write(f"{f.name} = {getattr(self, f.name)!r}\n")

    def with_overrides(self, **kw):
        return replace(self, **kw)


def _parse_kv_file(path, cls):
    valid = {f.name: f.type for f in fields(cls)}
    kw = {}
    with open(path, "rt", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value, got {line!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in valid:
                raise ConfigError(
                    f"{path}:{ln}: unknown config key {key!r}; valid keys: {', '.join(sorted(valid))}"
                )
            anno = valid[key]
            try:
                if anno in ("int", int):
                    kw[key] = int(val)
                elif anno in ("float", float):
                    kw[key] = float(val)
                elif "tuple" in str(anno):
                    kw[key] = tuple(int(x) for x in val.strip("()").split(",") if x.strip())
                else:
                    kw[key] = val
            except ValueError:
                raise ConfigError(f"{path}:{ln}: bad value {val!r} for {key}") from None
    return kw


class PprIndex:
    """Top-k personalized-PageRank neighbors per anchor, anchor excluded."""

    def __init__(self, ids, scores, restart_prob, iters, topk):
        self.ids = ids
        self.scores = scores
        self.restart_prob = restart_prob
        self.iters = iters
        self.topk = topk

    def save(self, path):
        storage.save_named_arrays(path, {
            "ids": self.ids.astype(np.float64),
            "scores": self.scores,
            "meta": np.array([[self.restart_prob, float(self.iters), float(self.topk)]]),
        })

    @classmethod
    def load(cls, path):
        named = storage.load_named_arrays(path)
        meta = named["meta"][0]
        return cls(named["ids"].astype(np.int64), named["scores"],
                   float(meta[0]), int(meta[1]), int(meta[2]))


def ppr_scores(graph, anchors, restart_prob=0.15, iters=100):
    """Personalized PageRank columns for the given anchors, exact power iteration.

    Dangling mass returns to the anchor, so every column stays a
    probability distribution at every iteration.
    """
    n = graph.num_nodes
    anchors = np.asarray(anchors, dtype=np.int64)
    adj = graph.adjacency()
    deg = graph.degrees.astype(np.float64)
    dangling = deg == 0
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=~dangling)
    x = np.zeros((n, len(anchors)))
    x[anchors, np.arange(len(anchors))] = 1.0
    seed_rows = x.copy()
    for _ in range(iters):
        spread = adj @ (x * inv_deg[:, None])
        spread += seed_rows * x[dangling].sum(axis=0)
        x = (1.0 - restart_prob) * spread + restart_prob * seed_rows
    return x


def ppr_topk(graph, anchor, restart_prob=0.15, iters=100, k=96):
    """(ids, scores) of the top-k PPR nodes for one anchor; ties by node id."""
    if graph.num_nodes < 2:
        raise DataError("ppr_topk needs at least 2 nodes")
    col = ppr_scores(graph, [anchor], restart_prob, iters)[:, 0]
    masked = col.copy()
    masked[anchor] = -np.inf
    order = np.argsort(-masked, kind="stable")
    kk = min(k, graph.num_nodes - 1)
    top = order[:kk]
    return top, col[top]


def build_ppr_index(graph, restart_prob=0.15, iters=100, k=96, block=256):
    """PprIndex over all anchors, computed in column blocks."""
    n = graph.num_nodes
    if n < 2:
        raise DataError("PPR index needs at least 2 nodes")
    kk = min(k, n - 1)
    ids = np.empty((n, kk), dtype=np.int64)
    scores = np.empty((n, kk))
    for start in range(0, n, block):
        anchors = np.arange(start, min(start + block, n))
        cols = ppr_scores(graph, anchors, restart_prob, iters)
        for j, a in enumerate(anchors):
            col = cols[:, j]
            masked = col.copy()
            masked[a] = -np.inf
            order = np.argsort(-masked, kind="stable")[:kk]
            ids[a] = order
            scores[a] = col[order]
    return PprIndex(ids, scores, restart_prob, iters, k)


def ppr_index_for(graph, config, cache_dir=None):
    """Build or load the cached PPR index for a graph (keyed by topology hash)."""
    if cache_dir is None:
        return build_ppr_index(graph, config.restart_prob, config.ppr_iters, config.positives_topk)
    os.makedirs(cache_dir, exist_ok=True)
    key = (f"{graph.content_hash()[:16]}_r{config.restart_prob:g}"
           f"_i{config.ppr_iters}_k{config.positives_topk}.ppr")
    path = os.path.join(cache_dir, key)
    if os.path.exists(path):
        return PprIndex.load(path)
    index = build_ppr_index(graph, config.restart_prob, config.ppr_iters, config.positives_topk)
    index.save(path)
    logger.info("cached PPR index at %s", path)
    return index


def infonce_symmetric(g, z, anchors, positives, temperature, bank=None):
    """Symmetric InfoNCE between the two streams as one fused tape op.

    Direction one scores each anchor's graph-stream row against a bank
    of text-stream rows (which contains its positive); direction two
    swaps the roles. ``bank=None`` uses every node as candidate;
    otherwise candidates are {own positive} union the sampled bank ids.
    Returns the scalar loss Tensor, backward written analytically.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    positives = np.asarray(positives, dtype=np.int64)
    if len(anchors) != len(positives) or len(anchors) == 0:
        raise DataError("anchors and positives must be equal-length and non-empty")
    if bank is not None:
        bank = np.asarray(bank, dtype=np.int64)
        if len(bank) == 0:
            raise DataError("empty negative bank")
    elif g.data.shape[0] == 0:
        raise DataError("empty negative bank")
    G, Z = g.data, z.data
    b = len(anchors)
    inv_t = 1.0 / float(temperature)

    if bank is None:
        s1 = (G[anchors] @ Z.T) * inv_t
        s2 = (Z[positives] @ G.T) * inv_t
        l1 = logsumexp(s1, axis=1) - s1[np.arange(b), positives]
        l2 = logsumexp(s2, axis=1) - s2[np.arange(b), anchors]
        out = ad.Tensor(np.array([[0.5 * (l1 + l2).mean()]]), parents=(g, z))

        def backward():
            w = out.grad.item() * 0.5 / b
            p1 = np.exp(s1 - logsumexp(s1, axis=1, keepdims=True))
            p1[np.arange(b), positives] -= 1.0
            p2 = np.exp(s2 - logsumexp(s2, axis=1, keepdims=True))
            p2[np.arange(b), anchors] -= 1.0
            dG = np.zeros_like(G)
            dZ = np.zeros_like(Z)
            np.add.at(dG, anchors, (w * inv_t) * (p1 @ Z))
            dZ += (w * inv_t) * (p1.T @ G[anchors])
            np.add.at(dZ, positives, (w * inv_t) * (p2 @ G))
            dG += (w * inv_t) * (p2.T @ Z[positives])
            ad._accum(g, dG)
            ad._accum(z, dZ)

        out._backward = backward
        return out

    # sampled variant: candidate column 0 is the positive, the rest the bank
    pos_sim = (G[anchors] * Z[positives]).sum(axis=1) * inv_t
    s1 = np.concatenate([pos_sim[:, None], (G[anchors] @ Z[bank].T) * inv_t], axis=1)
    s2 = np.concatenate([pos_sim[:, None], (Z[positives] @ G[bank].T) * inv_t], axis=1)
    dup1 = bank[None, :] == positives[:, None]
    dup2 = bank[None, :] == anchors[:, None]
    s1[:, 1:][dup1] = -np.inf
    s2[:, 1:][dup2] = -np.inf
    l1 = logsumexp(s1, axis=1) - s1[:, 0]
    l2 = logsumexp(s2, axis=1) - s2[:, 0]
    out = ad.Tensor(np.array([[0.5 * (l1 + l2).mean()]]), parents=(g, z))

    def backward():
        w = out.grad.item() * 0.5 / b
        p1 = np.exp(s1 - logsumexp(s1, axis=1, keepdims=True))
        p1[:, 0] -= 1.0
        p2 = np.exp(s2 - logsumexp(s2, axis=1, keepdims=True))
        p2[:, 0] -= 1.0
        c = w * inv_t
        dG = np.zeros_like(G)
        dZ = np.zeros_like(Z)
        # column 0: the positive-pair similarity feeds both directions
        coeff = c * (p1[:, 0] + p2[:, 0])
        np.add.at(dG, anchors, coeff[:, None] * Z[positives])
        np.add.at(dZ, positives, coeff[:, None] * G[anchors])
        # bank columns, direction one: queries are anchor g rows
        np.add.at(dG, anchors, c * (p1[:, 1:] @ Z[bank]))
        np.add.at(dZ, bank, c * (p1[:, 1:].T @ G[anchors]))
        # bank columns, direction two: queries are positive z rows
        np.add.at(dZ, positives, c * (p2[:, 1:] @ G[bank]))
        np.add.at(dG, bank, c * (p2[:, 1:].T @ Z[positives]))
        ad._accum(g, dG)
        ad._accum(z, dZ)

    out._backward = backward
    return out


def laplacian_smoothing(g, graph, weight):
    """weight * (1/|E|) * sum over edges of the squared embedding difference."""
    if g.data.shape[0] != graph.num_nodes:
        raise DataError(f"embedding rows {g.data.shape[0]} != nodes {graph.num_nodes}")
    edges = graph.edge_array()
    if len(edges) == 0:
        return ad.Tensor(np.zeros((1, 1)), parents=(g,), backward=lambda: None)
    u, v = edges[:, 0], edges[:, 1]
    diff = g.data[u] - g.data[v]
    val = weight * (diff * diff).sum() / len(edges)
    out = ad.Tensor(np.array([[val]]), parents=(g,))

    def backward():
        c = out.grad.item() * 2.0 * weight / len(edges)
        dg = np.zeros_like(g.data)
        np.add.at(dg, u, c * diff)
        np.add.at(dg, v, -c * diff)
        ad._accum(g, dg)

    out._backward = backward
    return out


def contrastive_step(model, gid, graph, context, ppr, config, rng):
    """One step's loss Tensors (nce, smooth, total) on a sampled anchor batch.

    Consumes the generator in a fixed order (anchors, positive columns,
    dropout masks, negative bank) so the loop stays reproducible.
    """
    n = graph.num_nodes
    bsz = min(config.anchor_batch, n)
    anchors = rng.choice(n, size=bsz, replace=False)
    if ppr.ids.shape[1] == 0:
        raise DataError(f"graph {gid}: PPR index has no candidates")
    cols = rng.integers(0, ppr.ids.shape[1], size=bsz)
    positives = ppr.ids[anchors, cols]
    x = adapt_features(graph, context, model.adapters[gid], gid)
    g = graph_stream(x, graph, model.backbone, model.dropout_rate, training=True, rng=rng)
    z = text_stream(x, model.proj)
    bank = None
    if n > config.large_graph_threshold:
        bank = rng.choice(n, size=min(config.neg_samples, n), replace=False)
    nce = infonce_symmetric(g, z, anchors, positives, config.temperature, bank)
    smooth = laplacian_smoothing(g, graph, config.smooth_weight)
    return nce, smooth, ad.add(nce, smooth)


def _clear_grads(model):
    for p in model.named_parameters().values():
        p.grad = None


@dataclass
class PretrainResult:
    model: ModelState
    history: list
    best_step: int
    best_loss: float
    best_state: dict


def pretrain(bundle, config, cache_dir=None, resume_state=None):
    """Train over a dict of graph_id -> (graph, context 384-d rows).

    Each step samples one graph uniformly, an anchor batch, and one PPR
    positive per anchor. The returned model is the lowest-training-loss
    checkpoint; ``best_state`` is the same thing as a named-array dict
    (parameters + optimizer moments + step counter) for exact resume.
    """
    if not bundle:
        raise ConfigError("pretrain needs at least one graph")
    gids = sorted(bundle)
    for gid, (graph, context) in bundle.items():
        if context is None or context.shape[0] != graph.num_nodes:
            raise DataError(f"graph {gid}: missing or misshaped context embeddings")
    ppr = {gid: ppr_index_for(bundle[gid][0], config, cache_dir) for gid in gids}
    if resume_state is None:
        dims = {gid: (bundle[gid][0].features.shape[1] if bundle[gid][0].features is not None else 0)
                for gid in gids}
        model = ModelState.initialize(dims, seed=config.seed)
        start_step = 0
    else:
        model = ModelState.from_arrays(resume_state)
        start_step = int(resume_state.get("meta/step", np.zeros((1, 1)))[0, 0])
        missing = [gid for gid in gids if gid not in model.adapters]
        if missing:
            raise DataError(f"checkpoint has no adapter for graph(s) {missing}")
    opt = ad.Adam(model.named_parameters(), lr=config.lr, weight_decay=config.weight_decay)
    if resume_state is not None:
        opt.load_state_arrays(resume_state)
    rng = np.random.default_rng(config.seed)
    history = []
    if resume_state is not None:
        best_loss = float(resume_state.get("meta/best_loss", np.array([[np.inf]]))[0, 0])
    else:
        best_loss = np.inf
    best_state = None
    best_step = start_step - 1
    step = start_step
    for _epoch in range(config.epochs):
        for _s in range(config.steps_per_epoch):
            gid = gids[rng.integers(len(gids))]
            graph, context = bundle[gid]
            nce, smooth, total = contrastive_step(model, gid, graph, context, ppr[gid], config, rng)
            nce_v, smooth_v, total_v = nce.data.item(), smooth.data.item(), total.data.item()
            if not np.isfinite(total_v):
                raise NumericError(
                    f"non-finite loss at step {step} on graph {gid}: "
                    f"nce={nce_v}, smooth={smooth_v}"
                )
            total.backward()
            opt.step()
            _clear_grads(model)
            history.append((step, gid, nce_v, smooth_v, total_v))
            if total_v < best_loss:
                best_loss = total_v
                best_step = step
                best_state = snapshot_state(model, opt, step + 1, best_loss)
            step += 1
    if best_state is None:
        # zero-step run (resume with epochs=0): keep the incoming state
        best_state = snapshot_state(model, opt, step, best_loss)
    best_model = ModelState.from_arrays(best_state)
    return PretrainResult(model=best_model, history=history, best_step=best_step,
                          best_loss=best_loss, best_state=best_state)


def snapshot_state(model, opt, step, best_loss):
    """Deep-copied named arrays: parameters, optimizer moments, counters."""
    named = {k: v.copy() for k, v in model.to_arrays().items()}
    for k, v in opt.state_arrays().items():
        named[k] = v.copy()
    named["meta/step"] = np.array([[float(step)]])
    named["meta/best_loss"] = np.array([[best_loss]])
    return named


def write_loss_history(path, history):
    storage.write_table(path, list(LOSS_HISTORY_COLUMNS), history)
