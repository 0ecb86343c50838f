"""Contrastive pretraining across two graphs, kept small enough to watch.

The two encoder streams (message passing over the graph, projection of the
hashed prompt text) are pulled together on diffusion-chosen positive pairs.

Run with: python3 demos/02_contrastive_pretraining.py
"""

from topoprompt import generate_sbm, PretrainConfig, pretrain
from topoprompt.model import ModelState
from topoprompt.prompts import context_embeddings

bundle = {}
for i, blocks in enumerate(([25, 25], [20, 30])):
    g = generate_sbm(blocks, p_in=0.3, p_out=0.04, seed=i)
    bundle[f"g{i}"] = (g, context_embeddings(g, seed=42))
    print(f"g{i}: {g.num_nodes} nodes, {g.num_edges} edges")

config = PretrainConfig(epochs=6, steps_per_epoch=8, anchor_batch=16,
                        positives_topk=8, seed=42)
result = pretrain(bundle, config)

print("\nloss by epoch (mean over steps):")
per_epoch = {}
for step, gid, nce, smooth, total in result.history:
    per_epoch.setdefault(step // config.steps_per_epoch, []).append(total)
for epoch in sorted(per_epoch):
    vals = per_epoch[epoch]
    print(f"  epoch {epoch}: {sum(vals) / len(vals):.4f}")

print(f"\nbest total loss {result.best_loss:.4f} at step {result.best_step}")

# The checkpoint is a flat name->array dict; rebuilding from it gives a
# working model with one adapter per pretraining graph.
model = ModelState.from_arrays(result.best_state)
print(f"restored model adapters: {sorted(model.adapters)}")
