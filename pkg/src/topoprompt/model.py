"""The two-stream node embedding model.

Per-graph adapters lift raw features concatenated with 384-d context
embeddings to a shared 1024-d space. From there a shared two-layer
GraphSAGE backbone produces the 256-d graph-stream embedding and a
shared linear projection the 256-d text-stream embedding; both are row
L2-normalized and concatenated with fixed weights 0.7 / 0.3 into the
512-d node embedding.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError

CONTEXT_DIM = 384
ADAPTED_DIM = 1024
HIDDEN_DIM = 512
OUTPUT_DIM = 256
EMBED_DIM = 2 * OUTPUT_DIM
ALPHA = 0.7
DROPOUT_RATE = 0.6

BACKBONE_NAMES = ("backbone/w1_self", "backbone/w1_neigh", "backbone/w2_self", "backbone/w2_neigh")


def _param_rng(seed, name):
    # independent stream per parameter so adding adapters never shifts others
    digest = hashlib.blake2b(name.encode(), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "little")]))


def uniform_fanin(rng, rows, cols, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(rows, cols))


class ModelState:
    """All parameters: per-graph adapters plus shared backbone and projection."""

    def __init__(self, backbone, proj, adapters, alpha=ALPHA, dropout_rate=DROPOUT_RATE):
        self.backbone = backbone
        self.proj = proj
        self.adapters = adapters
        self.alpha = alpha
        self.dropout_rate = dropout_rate

    @classmethod
    def initialize(cls, feature_dims, seed):
        """Fresh model for the given graphs.

        ``feature_dims`` maps graph id -> raw feature width (0 for
        featureless graphs). Every parameter gets its own seeded stream.
        """
        shapes = {
            "backbone/w1_self": (ADAPTED_DIM, HIDDEN_DIM),
            "backbone/w1_neigh": (ADAPTED_DIM, HIDDEN_DIM),
            "backbone/w2_self": (HIDDEN_DIM, OUTPUT_DIM),
            "backbone/w2_neigh": (HIDDEN_DIM, OUTPUT_DIM),
        }
        backbone = {
            name: ad.parameter(uniform_fanin(_param_rng(seed, name), r, c, r))
            for name, (r, c) in shapes.items()
        }
        proj = ad.parameter(uniform_fanin(_param_rng(seed, "proj/w"), ADAPTED_DIM, OUTPUT_DIM, ADAPTED_DIM))
        model = cls(backbone=backbone, proj=proj, adapters={})
        for gid in sorted(feature_dims):
            model.adapters[gid] = model.fresh_adapter(feature_dims[gid], seed, gid)
        return model

    def fresh_adapter(self, feature_dim, seed, gid):
        fan_in = feature_dim + CONTEXT_DIM
        rng_w = _param_rng(seed, f"adapter/{gid}/w")
        rng_b = _param_rng(seed, f"adapter/{gid}/b")
        return {
            "w": ad.parameter(uniform_fanin(rng_w, fan_in, ADAPTED_DIM, fan_in)),
            "b": ad.parameter(uniform_fanin(rng_b, 1, ADAPTED_DIM, fan_in)),
        }

    def named_parameters(self):
        out = dict(self.backbone)
        out["proj/w"] = self.proj
        for gid in sorted(self.adapters):
            out[f"adapter/{gid}/w"] = self.adapters[gid]["w"]
            out[f"adapter/{gid}/b"] = self.adapters[gid]["b"]
        return out

    def adapter_feature_dim(self, gid):
        return self.adapters[gid]["w"].data.shape[0] - CONTEXT_DIM

    def to_arrays(self):
        named = {n: p.data for n, p in self.named_parameters().items()}
        named["meta/alpha"] = np.array([[self.alpha]])
        named["meta/dropout_rate"] = np.array([[self.dropout_rate]])
        return named

    @classmethod
    def from_arrays(cls, named):
        backbone = {}
        proj = None
        adapters = {}
        for name, arr in named.items():
            if name.startswith("backbone/"):
                backbone[name] = ad.parameter(arr)
            elif name == "proj/w":
                proj = ad.parameter(arr)
            elif name.startswith("adapter/"):
                _, gid, part = name.split("/")
                adapters.setdefault(gid, {})[part] = ad.parameter(arr)
        if set(backbone) != set(BACKBONE_NAMES) or proj is None:
            raise DataError("checkpoint is missing backbone or projection parameters")
        return cls(
            backbone=backbone, proj=proj, adapters=adapters,
            alpha=float(named["meta/alpha"][0, 0]),
            dropout_rate=float(named["meta/dropout_rate"][0, 0]),
        )


def adapt_features(graph, context, adapter, gid="?"):
    """Per-graph affine lift of [raw features | context] to the shared width."""
    n = graph.num_nodes
    if context.shape != (n, CONTEXT_DIM):
        raise DataError(f"graph {gid}: context shape {context.shape}, expected ({n}, {CONTEXT_DIM})")
    feats = graph.features if graph.features is not None else np.zeros((n, 0))
    x = np.concatenate([np.asarray(feats, dtype=np.float64), context], axis=1)
    expect = adapter["w"].data.shape[0]
    if x.shape[1] != expect:
        raise DataError(
            f"graph {gid}: adapter expects input width {expect}, "
            f"got {x.shape[1]} ({x.shape[1] - CONTEXT_DIM} raw features)"
        )
    return ad.affine(ad.constant(x), adapter["w"], adapter["b"])


def graph_stream(x_tilde, graph, backbone, dropout_rate=DROPOUT_RATE, training=False, rng=None):
    """Two GraphSAGE layers with dropout before each; ReLU after the first only."""
    if training and rng is None:
        raise ConfigError("training-mode graph stream needs an rng for dropout")
    h = ad.dropout(x_tilde, dropout_rate, training, rng)
    h = ad.sage_layer(h, graph, backbone["backbone/w1_self"], backbone["backbone/w1_neigh"], activation="relu")
    h = ad.dropout(h, dropout_rate, training, rng)
    h = ad.sage_layer(h, graph, backbone["backbone/w2_self"], backbone["backbone/w2_neigh"], activation=None)
    return ad.row_l2_normalize(h)


def text_stream(x_tilde, proj):
    """Linear projection of the adapted features, row normalized; no dropout."""
    return ad.row_l2_normalize(ad.matmul(x_tilde, proj))


def node_embedding(g, z, alpha=ALPHA):
    """Weighted concatenation [alpha * g | (1 - alpha) * z]."""
    return ad.concat_cols(ad.scale(g, alpha), ad.scale(z, 1.0 - alpha))


def embed_graph(model, graph, context, gid, training=False, rng=None):
    """Forward pass; returns (g, z, e) Tensors.

    In eval mode (the default) dropout is identity and the result is
    deterministic given the parameters.
    """
    if gid not in model.adapters:
        raise ConfigError(f"no adapter for graph {gid!r}; known: {sorted(model.adapters)}")
    x = adapt_features(graph, context, model.adapters[gid], gid)
    g = graph_stream(x, graph, model.backbone, model.dropout_rate, training, rng)
    z = text_stream(x, model.proj)
    return g, z, node_embedding(g, z, model.alpha)


def embed_eval(model, graph, context, gid):
    """Eval-mode embeddings as plain arrays: (g, z, e)."""
    g, z, e = embed_graph(model, graph, context, gid, training=False)
    return g.data, z.data, e.data
