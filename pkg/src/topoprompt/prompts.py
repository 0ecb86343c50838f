"""Structural prompt rendering and hashed context embeddings.

The prompt string format is frozen: integers plain, clustering and
densities with 3 decimals, average degree and spectral gap with 2,
PageRank as a two-significant-figure plain decimal (0.00084 style,
never scientific notation). Tests pin the exact bytes; treat any
change here as a format break.
"""

from __future__ import annotations

import hashlib
import math
import re

import numpy as np

from .errors import DataError

CONTEXT_DIM = 384
HASH_SEED = 42

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")
_PAIR_RE = re.compile(r"[A-Za-z0-9_]+=[A-Za-z0-9.+-]+")


def format_sigfig2(x):
    """Two significant figures as a plain decimal: 0.00084, 1.0, 0.50."""
    x = float(x)
    if x <= 0.0 or not math.isfinite(x):
        return "0.0"
    r = round(x, 1 - int(math.floor(math.log10(x))))
    decimals = max(0, 1 - int(math.floor(math.log10(r))))
    return f"{r:.{decimals}f}"


def render_prompt(profile, stats):
    """Render one node's structural prompt line."""
    p, s = profile, stats
    return (
        "Node profile: "
        f"local(deg={p.deg}, cc={p.cc:.3f}, core={p.core}, "
        f"ego1V={p.ego1_v}, ego1E={p.ego1_e}, ego1D={p.ego1_d:.3f}, "
        f"ego2V={p.ego2_v}, ego2E={p.ego2_e}, ego2D={p.ego2_d:.3f}, "
        f"pr={format_sigfig2(p.pagerank)}); "
        f"global(lp_comm={p.lp_comm}, lp_size={p.lp_size}, lp_dens={p.lp_dens:.3f}; "
        f"scoda_comm={p.scoda_comm}, scoda_size={p.scoda_size}, scoda_dens={p.scoda_dens:.3f}); "
        f"graph(N={s.num_nodes}, E={s.num_edges}, avgd={s.avg_degree:.2f}, "
        f"trans={s.transitivity:.3f}, q25={s.deg_q25}, q50={s.deg_q50}, "
        f"q75={s.deg_q75}, spec_gap={s.spectral_gap:.2f})."
    )


def render_prompts(profiles, stats):
    return [render_prompt(p, stats) for p in profiles]


def _hash64(text, seed):
    key = int(seed).to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(text.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def encode_hashed(text, dim=CONTEXT_DIM, seed=HASH_SEED):
    """Deterministic bag-of-features embedding of a prompt string.

    Features are the alphanumeric tokens plus every name=value pair kept
    intact. Each feature hashes to a bucket and a sign; the feature
    vector is the signed bucket sum, L2 normalized. Anything that sums
    to zero (including empty input) maps to the first basis vector so
    the output is always unit length.
    """
    vec = np.zeros(dim)
    feats = _TOKEN_RE.findall(text) + _PAIR_RE.findall(text)
    for feat in feats:
        h = _hash64(feat, seed)
        bucket = h % dim
        sign = 1.0 if (h >> 40) & 1 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return vec / norm


def encode_prompts(prompts, dim=CONTEXT_DIM, seed=HASH_SEED):
    """Stack encode_hashed over a list of prompts into an (N, dim) matrix."""
    out = np.empty((len(prompts), dim))
    for i, text in enumerate(prompts):
        out[i] = encode_hashed(text, dim=dim, seed=seed)
    return out


def context_embeddings(graph, seed=42, dim=CONTEXT_DIM, hash_seed=HASH_SEED):
    """Full pipeline: descriptors -> prompts -> hashed context matrix."""
    from .descriptors import compute_profiles

    profiles, stats = compute_profiles(graph, seed=seed)
    return encode_prompts(render_prompts(profiles, stats), dim=dim, seed=hash_seed)


def load_context(path, graph, dim=CONTEXT_DIM):
    """Load precomputed context embeddings, validating shape and norms.

    Rows are re-normalized to unit length; all-zero rows become the
    first basis vector, with a warning, to keep downstream layers fed
    with unit-norm inputs.
    """
    import logging

    from . import storage

    arr = storage.sniff_load_matrix(path).astype(np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DataError(f"{path}: context must be (N, {dim}), got {arr.shape}")
    if arr.shape[0] != graph.num_nodes:
        raise DataError(f"{path}: {arr.shape[0]} rows for {graph.num_nodes} nodes")
    norms = np.linalg.norm(arr, axis=1)
    zero = norms == 0
    if zero.any():
        logging.getLogger(__name__).warning(
            "%s: %d zero context row(s) replaced with basis vector", path, int(zero.sum())
        )
        arr[zero, 0] = 1.0
        norms[zero] = 1.0
    return arr / norms[:, None]
