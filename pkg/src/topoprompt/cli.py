"""Batch command-line surface.

Every command writes its outputs plus exactly one ``manifest.json``
into --out. The manifest records the command, config snapshot, input
content hashes, seed, and tool version; its hash covers everything
except the timestamp, so reruns with identical inputs agree. Exit
codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import __version__, adapt, descriptors, graphs, prompts, storage
from .errors import ConfigError, DataError, NumericError
from .model import ModelState, embed_eval
from .pretrain import PretrainConfig, write_loss_history
from .pretrain import pretrain as run_pretrain

logger = logging.getLogger(__name__)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config, inputs, seed):
    """Emit manifest.json; the hash excludes the timestamp field."""
    body = {
        "command": command,
        "config": config,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "seed": seed,
        "version": __version__,
    }
    body["manifest_hash"] = hashlib.sha256(
        json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = int(epoch) if epoch is not None else int(time.time())
    body["created_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(stamp))
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "wt", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _seed(args):
    return 42 if args.seed is None else args.seed


def _load_graph(args):
    g = graphs.load_edge_list(args.graph)
    if getattr(args, "labels", None):
        lab = storage.load_text_matrix(args.labels).astype(np.int8)
        if len(lab) != g.num_nodes:
            raise DataError(f"{args.labels}: {len(lab)} label rows for {g.num_nodes} nodes")
        g = g.replace(labels=lab)
    if getattr(args, "split", None):
        spl = graphs.load_split(args.split)
        if len(spl) != g.num_nodes:
            raise DataError(f"{args.split}: {len(spl)} split rows for {g.num_nodes} nodes")
        g = g.replace(split=spl)
    return g


def _context_for(graph, args, seed):
    if getattr(args, "context", None):
        return prompts.load_context(args.context, graph)
    return prompts.context_embeddings(graph, seed=seed)


def _graph_inputs(args):
    out = [args.graph]
    for name in ("labels", "split", "context"):
        if getattr(args, name, None):
            out.append(getattr(args, name))
    return out


def cmd_generate(args):
    out = _outdir(args.out)
    seed = _seed(args)
    blocks = [int(b) for b in args.blocks.split(",")]
    g = graphs.generate_sbm(blocks, args.p_in, args.p_out, seed=seed)
    fracs = tuple(float(f) for f in args.split_fractions.split(","))
    split = graphs.make_split(g, graphs.SplitSpec(mode="random", fractions=fracs), seed=seed)
    graphs.save_edge_list(os.path.join(out, f"{args.name}.edges"), g)
    storage.save_text_matrix(os.path.join(out, f"{args.name}.labels.txt"), g.labels, fmt="%d")
    graphs.save_split(os.path.join(out, f"{args.name}.split.txt"), split)
    write_manifest(out, "generate", {
        "blocks": blocks, "p_in": args.p_in, "p_out": args.p_out,
        "split_fractions": list(fracs), "name": args.name,
    }, [], seed)
    print(f"generated {args.name}: {g.num_nodes} nodes, {g.num_edges} edges -> {out}")
    return 0


def cmd_descriptors(args):
    out = _outdir(args.out)
    g = graphs.load_edge_list(args.graph)
    profs, stats = descriptors.compute_profiles(g, seed=_seed(args))
    descriptors.save_profiles(os.path.join(out, "descriptors.tsv"), profs)
    descriptors.save_graph_stats(os.path.join(out, "graph_stats.tsv"), stats)
    if g.original_ids is not None:
        with open(os.path.join(out, "node_ids.txt"), "wt", encoding="utf-8") as fh:
            for i in g.original_ids:
                fh.write(f"{i}\n")
    write_manifest(out, "descriptors", {"graph": os.path.basename(args.graph)},
                   [args.graph], _seed(args))
    print(f"descriptors for {g.num_nodes} nodes -> {out}")
    return 0


def cmd_prompt(args):
    out = _outdir(args.out)
    g = graphs.load_edge_list(args.graph)
    if args.descriptors and args.stats:
        profs = descriptors.load_profiles(args.descriptors)
        stats = descriptors.load_graph_stats(args.stats)
        if len(profs) != g.num_nodes:
            raise DataError(f"{args.descriptors}: {len(profs)} rows for {g.num_nodes} nodes")
    else:
        profs, stats = descriptors.compute_profiles(g, seed=_seed(args))
    lines = prompts.render_prompts(profs, stats)
    with open(os.path.join(out, "prompts.txt"), "wt", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    inputs = [args.graph] + ([args.descriptors, args.stats] if args.descriptors and args.stats else [])
    write_manifest(out, "prompt", {"graph": os.path.basename(args.graph)}, inputs, _seed(args))
    print(f"wrote {len(lines)} prompts -> {out}")
    return 0


def cmd_encode(args):
    out = _outdir(args.out)
    if args.prompts:
        with open(args.prompts, "rt", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        ctx = prompts.encode_prompts(lines, seed=args.hash_seed)
        inputs = [args.prompts]
    else:
        if not args.graph:
            raise ConfigError("encode needs --graph or --prompts")
        g = graphs.load_edge_list(args.graph)
        ctx = prompts.context_embeddings(g, seed=_seed(args), hash_seed=args.hash_seed)
        inputs = [args.graph]
    storage.save_matrix(os.path.join(out, "context.bin"), ctx)
    write_manifest(out, "encode", {"rows": int(ctx.shape[0]), "hash_seed": args.hash_seed},
                   inputs, _seed(args))
    print(f"encoded {ctx.shape[0]} x {ctx.shape[1]} context matrix -> {out}")
    return 0


def _pretrain_config(args):
    overrides = {}
    for f in fields(PretrainConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return PretrainConfig.from_file(args.config, **overrides)
    return PretrainConfig(**overrides)


def cmd_pretrain(args):
    out = _outdir(args.out)
    config = _pretrain_config(args)
    loaded = graphs.load_graph_dir(args.graph_dir)
    bundle = {}
    for gid, (g, ctx) in loaded.items():
        if ctx is None:
            ctx = prompts.context_embeddings(g, seed=config.seed)
        bundle[gid] = (g, ctx)
    resume_state = storage.load_named_arrays(args.resume) if args.resume else None
    result = run_pretrain(bundle, config, cache_dir=args.cache_dir,
                                   resume_state=resume_state)
    storage.save_named_arrays(os.path.join(out, "checkpoint.bin"), result.best_state)
    write_loss_history(os.path.join(out, "loss_history.tsv"), result.history)
    inputs = sorted(
        os.path.join(args.graph_dir, f) for f in os.listdir(args.graph_dir)
        if not f.startswith(".")
    )
    if args.resume:
        inputs.append(args.resume)
    write_manifest(out, "pretrain", {f.name: getattr(config, f.name)
                                     for f in fields(PretrainConfig)},
                   inputs, config.seed)
    print(f"pretrained on {len(bundle)} graph(s), {len(result.history)} steps, "
          f"best loss {result.best_loss:.6f} at step {result.best_step} -> {out}")
    return 0


def cmd_adapt(args):
    out = _outdir(args.out)
    model = ModelState.from_arrays(storage.load_named_arrays(args.checkpoint))
    g = _load_graph(args)
    gid = args.graph_id or os.path.splitext(os.path.basename(args.graph))[0]
    config = PretrainConfig(seed=_seed(args)) if not args.config \
        else PretrainConfig.from_file(
            args.config, **({"seed": args.seed} if args.seed is not None else {}))
    ctx = _context_for(g, args, config.seed)
    d_target = g.features.shape[1] if g.features is not None else 0
    model.adapters[gid] = adapt.init_adapter_from_mean(model, d_target, config.seed, gid=gid)
    history = adapt.tune_adapter_unlabeled(g, ctx, model, gid, args.steps,
                                           config=config, cache_dir=args.cache_dir)
    storage.save_named_arrays(os.path.join(out, "checkpoint.bin"),
                              {k: v.copy() for k, v in model.to_arrays().items()})
    write_loss_history(os.path.join(out, "tuning_history.tsv"), history)
    write_manifest(out, "adapt", {"graph_id": gid, "steps": args.steps,
                                  "checkpoint": os.path.basename(args.checkpoint)},
                   [args.checkpoint] + _graph_inputs(args), config.seed)
    print(f"adapted {gid} for {args.steps} step(s) -> {out}")
    return 0


def _eval_embeddings(model, g, ctx, gid):
    if gid not in model.adapters:
        raise DataError(
            f"checkpoint has no adapter for graph {gid!r}; run the adapt command first"
        )
    expect = model.adapter_feature_dim(gid)
    have = g.features.shape[1] if g.features is not None else 0
    if expect != have:
        raise DataError(
            f"adapter for {gid!r} expects {expect} raw features but the graph has {have}; "
            f"re-adapt the checkpoint to this graph"
        )
    _, _, e = embed_eval(model, g, ctx, gid)
    return e


def cmd_evaluate(args):
    out = _outdir(args.out)
    model = ModelState.from_arrays(storage.load_named_arrays(args.checkpoint))
    g = _load_graph(args)
    gid = args.graph_id or os.path.splitext(os.path.basename(args.graph))[0]
    seed = _seed(args)
    over = {"seed": seed}
    if args.k_grid:
        over["k_grid"] = tuple(int(k) for k in args.k_grid.split(","))
    if args.seeds:
        over["few_shot_seeds"] = args.seeds
    config = adapt.AdaptConfig.from_file(args.config, **over) if args.config \
        else adapt.AdaptConfig(**over)
    ctx = _context_for(g, args, seed)
    if g.labels is None:
        raise DataError("evaluate needs labels (sidecar file or --labels)")
    if g.split is None:
        raise DataError("evaluate needs a split (sidecar file or --split)")
    mode = args.mode
    if mode == "zero-shot":
        emb = _eval_embeddings(model, g, ctx, gid)
        _, report = adapt.zero_shot_probe(
            emb, g.labels, g.split, l2=config.probe_l2, iters=config.probe_iters,
            lr=config.probe_lr, seed=seed)
    elif mode == "few-shot":
        emb = _eval_embeddings(model, g, ctx, gid)
        rows = adapt.few_shot_curve(emb, g.labels, g.split, k_grid=config.k_grid,
                                    seeds=config.few_shot_seeds, l2=config.probe_l2,
                                    iters=config.probe_iters, lr=config.probe_lr)
        report = adapt.EvalReport(kind="few_shot", seed=seed,
                                  config={"k_grid": config.k_grid, "seeds": config.few_shot_seeds},
                                  per_label=[], aggregates={}, few_shot=rows)
    elif mode == "finetune":
        if gid not in model.adapters:
            raise DataError(
                f"checkpoint has no adapter for graph {gid!r}; run the adapt command first"
            )
        _, report, _ = adapt.finetune_two_stage(g, ctx, model, gid, config=config)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    report.to_file(os.path.join(out, "report.txt"))
    write_manifest(out, "evaluate", {"mode": mode, "graph_id": gid,
                                     "checkpoint": os.path.basename(args.checkpoint)},
                   [args.checkpoint] + _graph_inputs(args), seed)
    if report.aggregates:
        print(f"evaluate[{mode}] mean_auc={report.aggregates.get('mean_auc', float('nan')):.4f} -> {out}")
    else:
        print(f"evaluate[{mode}] -> {out}")
    return 0


def cmd_analyze(args):
    from . import metrics

    out = _outdir(args.out)
    emb = storage.sniff_load_matrix(args.embeddings)
    labels = storage.load_text_matrix(args.labels).astype(np.int8)
    if len(labels) != len(emb):
        raise DataError(f"{args.labels}: {len(labels)} label rows for {len(emb)} embeddings")
    which = args.analysis
    inputs = [args.embeddings, args.labels]
    ran = []
    if which in ("all", "density"):
        rho, degenerate = metrics.density_multifunctionality_spearman(
            emb, labels.sum(axis=1), k=args.density_k)
        storage.write_table(os.path.join(out, "density.tsv"),
                            ["spearman_rho", "degenerate", "k"],
                            [[rho, int(degenerate), args.density_k]])
        ran.append("density")
    if which in ("all", "enrichment"):
        k_grid = [int(k) for k in args.enrichment_k_grid.split(",")]
        curve = metrics.same_label_enrichment(emb, labels[:, args.label], k_grid)
        storage.write_table(os.path.join(out, "enrichment.tsv"),
                            ["k", "same_label_fraction"], curve)
        ran.append("enrichment")
    if which in ("all", "coenrichment"):
        anchors = ([int(a) for a in args.anchors.split(",")] if args.anchors
                   else list(range(labels.shape[1])))
        mat = metrics.co_enrichment(emb, labels, anchors, k=args.coenrich_k,
                                    ratio_mode=args.ratio)
        rows = [[mat.anchor_labels[i]] + list(mat.values[i]) for i in range(len(anchors))]
        storage.write_table(os.path.join(out, "coenrichment.tsv"),
                            ["anchor"] + [str(a) for a in mat.anchor_labels], rows)
        storage.write_table(os.path.join(out, "coenrichment_order.tsv"),
                            ["position", "anchor"],
                            [[i, mat.anchor_labels[j]] for i, j in enumerate(mat.order)])
        ran.append("coenrichment")
    if which == "stratified" or (which == "all" and args.report and args.strata):
        if not (args.report and args.strata):
            raise ConfigError("stratified analysis needs --report and --strata")
        rep = adapt.load_report(args.report)
        per_label = {r[0]: r[2] for r in rep.per_label}
        strata = {}
        for header, rows in [storage.read_table(args.strata)]:
            for row in rows:
                strata[int(row[0])] = row[1]
        means = metrics.stratified_auc(per_label, strata)
        storage.write_table(os.path.join(out, "stratified.tsv"),
                            ["stratum", "mean_auc"], sorted(means.items()))
        inputs += [args.report, args.strata]
        ran.append("stratified")
    write_manifest(out, "analyze", {"analysis": which, "ran": ran}, inputs, _seed(args))
    print(f"analyses {', '.join(ran)} -> {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="topoprompt",
        description="Topology-derived prompts and contrastively aligned node embeddings.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for all randomness (default 42)")

    p = sub.add_parser("generate", help="sample a stochastic block model graph")
    common(p)
    p.add_argument("--blocks", default="100,100", help="comma-separated block sizes")
    p.add_argument("--p-in", type=float, default=0.3, dest="p_in")
    p.add_argument("--p-out", type=float, default=0.02, dest="p_out")
    p.add_argument("--name", default="graph", help="basename for the output files")
    p.add_argument("--split-fractions", default="0.8,0.1,0.1", dest="split_fractions")

    p = sub.add_parser("descriptors", help="compute per-node descriptors and graph stats")
    common(p)
    p.add_argument("--graph", required=True)

    p = sub.add_parser("prompt", help="render structural prompt strings")
    common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--descriptors", help="reuse a cached descriptor table")
    p.add_argument("--stats", help="reuse a cached graph-stats table")

    p = sub.add_parser("encode", help="hash prompts into 384-d context embeddings")
    common(p)
    p.add_argument("--graph")
    p.add_argument("--prompts", help="encode an existing prompts.txt instead of a graph")
    p.add_argument("--hash-seed", type=int, default=prompts.HASH_SEED, dest="hash_seed")

    p = sub.add_parser("pretrain", help="contrastive pretraining over a directory of graphs")
    common(p)
    p.add_argument("--graph-dir", required=True, dest="graph_dir")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--resume", help="checkpoint to resume from")
    for f in fields(PretrainConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, type=int if f.type in ("int", int) else float,
                       default=None, dest=f.name)

    p = sub.add_parser("adapt", help="fit an adapter for a new graph without labels")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--labels")
    p.add_argument("--split")
    p.add_argument("--context", help="precomputed context embedding matrix")
    p.add_argument("--graph-id", dest="graph_id")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--config", help="pretrain-style config file for the tuning objective")
    p.add_argument("--cache-dir", dest="cache_dir")

    p = sub.add_parser("evaluate", help="zero-shot, few-shot, or fine-tuned evaluation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--mode", required=True, choices=["zero-shot", "finetune", "few-shot"])
    p.add_argument("--labels")
    p.add_argument("--split")
    p.add_argument("--context")
    p.add_argument("--graph-id", dest="graph_id")
    p.add_argument("--config", help="key=value downstream config file")
    p.add_argument("--k-grid", dest="k_grid", help="comma-separated K values for few-shot")
    p.add_argument("--seeds", type=int, help="seed count for few-shot averaging")

    p = sub.add_parser("analyze", help="embedding-space analyses over exported embeddings")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--analysis", default="all",
                   choices=["all", "density", "enrichment", "coenrichment", "stratified"])
    p.add_argument("--density-k", type=int, default=15, dest="density_k")
    p.add_argument("--label", type=int, default=0, help="label column for enrichment")
    p.add_argument("--enrichment-k-grid", default="5,10,20,30,50,75,100",
                   dest="enrichment_k_grid")
    p.add_argument("--coenrich-k", type=int, default=25, dest="coenrich_k")
    p.add_argument("--anchors", help="comma-separated anchor label columns")
    p.add_argument("--ratio", action="store_true", help="prevalence-normalized ratio mode")
    p.add_argument("--report", help="evaluation report for stratified analysis")
    p.add_argument("--strata", help="label->stratum table for stratified analysis")
    return parser


_HANDLERS = {
    "generate": cmd_generate,
    "descriptors": cmd_descriptors,
    "prompt": cmd_prompt,
    "encode": cmd_encode,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


def entry():
    raise SystemExit(main())
