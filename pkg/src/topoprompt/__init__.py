"""Topology-derived structural prompts and contrastively aligned node embeddings.

The pipeline: per-node topology descriptors become natural-language
prompts, prompts become hashed context embeddings, a per-graph adapter
plus shared GraphSAGE backbone and text projection produce two aligned
embedding streams, contrastive pretraining over several graphs aligns
them, and frozen embeddings transfer to new graphs through adapter-only
tuning and linear probes.
"""

__version__ = "0.1.0"

from .graphs import Graph, SplitSpec, generate_sbm, load_edge_list, make_split, save_edge_list
from .descriptors import GraphStats, StructuralProfile, compute_profiles, graph_stats
from .prompts import context_embeddings, encode_hashed, render_prompt
from .model import ModelState, embed_eval
from .pretrain import PretrainConfig, pretrain
from .adapt import AdaptConfig, few_shot_curve, finetune_two_stage, zero_shot_probe

__all__ = [
    "Graph", "SplitSpec", "generate_sbm", "load_edge_list", "make_split", "save_edge_list",
    "GraphStats", "StructuralProfile", "compute_profiles", "graph_stats",
    "context_embeddings", "encode_hashed", "render_prompt",
    "ModelState", "embed_eval",
    "PretrainConfig", "pretrain",
    "AdaptConfig", "few_shot_curve", "finetune_two_stage", "zero_shot_probe",
    "__version__",
]
