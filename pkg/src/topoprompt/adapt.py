"""Downstream adaptation and the three evaluation regimes.

A new graph gets an adapter initialized from the mean of the pretrained
ones, optionally tuned without labels under the pretraining objective
(backbone and projection frozen), and is then evaluated by zero-shot
linear probing, two-stage supervised fine-tuning, or few-shot probing.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from . import storage
from .errors import ConfigError, DataError, NumericError
from .metrics import f1_best_threshold, roc_auc
from .model import CONTEXT_DIM, ModelState, embed_graph, uniform_fanin, _param_rng
from .pretrain import PretrainConfig, contrastive_step, ppr_index_for

FEW_SHOT_COLUMNS = ("k", "mean_auc", "sd_auc", "n_valid_labels")
PER_LABEL_COLUMNS = ("label", "valid", "auc", "threshold", "accuracy")


@dataclass(frozen=True)
class AdaptConfig:
    """Downstream knobs: unlabeled tuning, fine-tune schedule, probe settings."""

    tune_steps: int = 2000
    lr_backbone: float = 1e-5
    lr_proj: float = 1e-5
    lr_adapter: float = 1e-4
    lr_head: float = 1e-3
    epochs: int = 100
    patience: int = 20
    weight_decay: float = 0.0
    k_grid: tuple = (1, 5, 10, 20)
    few_shot_seeds: int = 5
    probe_l2: float = 1e-4
    probe_iters: int = 500
    probe_lr: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if self.tune_steps < 0 or self.epochs <= 0 or self.patience <= 0:
            raise ConfigError("tune_steps must be >= 0, epochs and patience positive")
        for name in ("lr_backbone", "lr_proj", "lr_adapter", "lr_head", "probe_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if any(k <= 0 for k in self.k_grid):
            raise ConfigError(f"k_grid values must be positive, got {self.k_grid}")

    @classmethod
    def from_file(cls, path, **overrides):
        from .pretrain import _parse_kv_file

        kw = _parse_kv_file(path, cls)
        kw.update(overrides)
        return cls(**kw)

    def with_overrides(self, **kw):
        return replace(self, **kw)


def init_adapter_from_mean(model, d_target, seed, gid="target"):
    """Adapter for a new graph from the mean of the pretrained adapters.

    The context-input rows (the trailing 384) and the bias are averaged
    elementwise. When every pretrained adapter has exactly ``d_target``
    raw-feature rows those are averaged too (a single same-shape adapter
    copies over exactly); otherwise the feature rows have no cross-graph
    correspondence and are drawn fresh by seeded uniform fan-in.
    """
    if not model.adapters:
        raise ConfigError("mean adapter init needs at least one pretrained adapter")
    order = sorted(model.adapters)
    ws = [model.adapters[g]["w"].data for g in order]
    bs = [model.adapters[g]["b"].data for g in order]
    ctx_block = np.mean([w[-CONTEXT_DIM:] for w in ws], axis=0)
    bias = np.mean(bs, axis=0)
    if all(w.shape[0] - CONTEXT_DIM == d_target for w in ws):
        feat_block = np.mean([w[:-CONTEXT_DIM] for w in ws], axis=0)
    else:
        rng = _param_rng(seed, f"adapter/{gid}/w")
        feat_block = uniform_fanin(rng, d_target, ctx_block.shape[1], d_target + CONTEXT_DIM)
    return {
        "w": ad.parameter(np.concatenate([feat_block, ctx_block], axis=0)),
        "b": ad.parameter(bias),
    }


def tune_adapter_unlabeled(graph, context, model, gid, steps, config=None, cache_dir=None):
    """Tune only the target adapter under the contrastive objective.

    Backbone and projection stay bitwise frozen (they receive gradients
    through the chain rule but are absent from the optimizer). Returns
    the per-step loss history.
    """
    config = config or PretrainConfig()
    if gid not in model.adapters:
        raise ConfigError(f"no adapter registered for {gid!r}; init one first")
    adapter = model.adapters[gid]
    if steps == 0:
        return []
    ppr = ppr_index_for(graph, config, cache_dir)
    opt = ad.Adam(
        {f"adapter/{gid}/w": adapter["w"], f"adapter/{gid}/b": adapter["b"]},
        lr=config.lr, weight_decay=config.weight_decay,
    )
    rng = np.random.default_rng(config.seed)
    history = []
    for step in range(steps):
        nce, smooth, total = contrastive_step(model, gid, graph, context, ppr, config, rng)
        total_v = total.data.item()
        if not np.isfinite(total_v):
            raise NumericError(f"non-finite adapter-tuning loss at step {step} on graph {gid}")
        total.backward()
        opt.step()
        for p in model.named_parameters().values():
            p.grad = None
        history.append((step, gid, nce.data.item(), smooth.data.item(), total_v))
    return history


def fit_logistic(x, y, l2=1e-4, iters=500, lr=1.0):
    """Deterministic full-batch gradient-descent logistic regression.

    Returns (weights, bias). Zero-initialized; the L2 penalty applies to
    the weights only.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(iters):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - y
        w -= lr * (x.T @ err / n + l2 * w)
        b -= lr * err.mean()
    return w, b


@dataclass
class ProbeModel:
    """Per-label logistic probes over embeddings, with decision thresholds.

    Only labels trainable on the split (both classes present in train)
    get weights; thresholds live on the score (logit) scale.
    """

    weights: dict
    biases: dict
    thresholds: dict

    def scores(self, x, label):
        return x @ self.weights[label] + self.biases[label]


@dataclass
class EvalReport:
    """Per-label table plus aggregates for one evaluation run."""

    kind: str
    seed: int
    config: dict
    per_label: list
    aggregates: dict
    few_shot: list | None = None

    def to_file(self, path):
        with open(path, "wt", encoding="utf-8") as fh:
            fh.write("# evaluation report\n")
            fh.write(f"kind\t{self.kind}\n")
            fh.write(f"seed\t{self.seed}\n")
            fh.write("[config]\n")
            for key in sorted(self.config):
                fh.write(f"{key}\t{_fmt(self.config[key])}\n")
            fh.write("[per_label]\n")
            fh.write("\t".join(PER_LABEL_COLUMNS) + "\n")
            for row in self.per_label:
                fh.write("\t".join(_fmt(v) for v in row) + "\n")
            fh.write("[aggregate]\n")
            for key in sorted(self.aggregates):
                fh.write(f"{key}\t{_fmt(self.aggregates[key])}\n")
            if self.few_shot is not None:
                fh.write("[few_shot]\n")
                fh.write("\t".join(FEW_SHOT_COLUMNS) + "\n")
                for row in self.few_shot:
                    fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def load_report(path):
    """Parse an EvalReport file back into the dataclass (strings stay strings)."""
    kind, seed, config, per_label, aggregates, few_shot = None, None, {}, [], {}, None
    section = None
    with open(path, "rt", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    rows_header = None
    for line in lines:
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]")
            rows_header = None
            continue
        cells = line.split("\t")
        if section is None:
            if cells[0] == "kind":
                kind = cells[1]
            elif cells[0] == "seed":
                seed = int(cells[1])
        elif section == "config":
            config[cells[0]] = cells[1]
        elif section == "per_label":
            if rows_header is None:
                rows_header = cells
                continue
            per_label.append((int(cells[0]), bool(int(cells[1])), float(cells[2]),
                              float(cells[3]), float(cells[4])))
        elif section == "aggregate":
            aggregates[cells[0]] = float(cells[1])
        elif section == "few_shot":
            if rows_header is None:
                rows_header = cells
                continue
            if few_shot is None:
                few_shot = []
            few_shot.append((int(cells[0]), float(cells[1]), float(cells[2]), int(cells[3])))
    return EvalReport(kind=kind, seed=seed, config=config, per_label=per_label,
                      aggregates=aggregates, few_shot=few_shot)


def _split_masks(split):
    split = np.asarray(split)
    return split == 0, split == 1, split == 2


def _probe_one_label(emb, y, train, valid, l2, iters, lr):
    """Fit, threshold on validation, return (w, b, threshold) or None if untrainable."""
    ytr = y[train]
    if ytr.min() == ytr.max():
        return None
    w, b = fit_logistic(emb[train], ytr, l2=l2, iters=iters, lr=lr)
    sv = emb[valid] @ w + b
    yv = y[valid]
    if len(yv) and yv.min() != yv.max():
        thr, _ = f1_best_threshold(sv, yv)
    else:
        thr = 0.0
    return w, b, thr


def zero_shot_probe(embeddings, labels, split, l2=1e-4, iters=500, lr=1.0, seed=42,
                    kind="zero_shot", config_echo=None):
    """One-vs-rest logistic probes on frozen embeddings.

    Thresholds are tuned per label on the validation split by maximizing
    F1; ROC-AUC and thresholded accuracy are computed on test. Labels
    with one train class are recorded invalid; labels with one test
    class keep their accuracy but are excluded from the AUC mean.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    train, valid, test = _split_masks(split)
    if not train.any():
        raise DataError("empty train split")
    probe = ProbeModel(weights={}, biases={}, thresholds={})
    per_label = []
    for l in range(labels.shape[1]):
        fitted = _probe_one_label(emb, labels[:, l], train, valid, l2, iters, lr)
        if fitted is None:
            per_label.append((l, False, np.nan, np.nan, np.nan))
            continue
        w, b, thr = fitted
        probe.weights[l], probe.biases[l], probe.thresholds[l] = w, b, thr
        st = emb[test] @ w + b
        yt = labels[test, l]
        auc = roc_auc(st, yt)
        acc = float(((st >= thr).astype(np.int8) == yt).mean()) if len(yt) else np.nan
        per_label.append((l, np.isfinite(auc), auc, thr, acc))
    report = EvalReport(
        kind=kind, seed=seed,
        config={"l2": l2, "iters": iters, "lr": lr, **(config_echo or {})},
        per_label=per_label,
        aggregates=_aggregate(per_label),
    )
    return probe, report


def _aggregate(per_label):
    aucs = np.array([r[2] for r in per_label], dtype=np.float64)
    accs = np.array([r[4] for r in per_label], dtype=np.float64)
    valid_auc = np.isfinite(aucs)
    valid_acc = np.isfinite(accs)
    return {
        "mean_auc": float(aucs[valid_auc].mean()) if valid_auc.any() else np.nan,
        "mean_accuracy": float(accs[valid_acc].mean()) if valid_acc.any() else np.nan,
        "n_valid_labels": int(valid_auc.sum()),
    }


def few_shot_curve(embeddings, labels, split, k_grid=(1, 5, 10, 20), seeds=5,
                   l2=1e-4, iters=500, lr=1.0):
    """Probe AUC as a function of K labeled examples per class.

    Per (K, seed, label): K positives and K negatives are drawn from the
    train split by a generator keyed on (seed, K, label), a probe is fit
    on those 2K points, and test ROC-AUC recorded. Labels lacking K of
    either class in train, or a second class in test, are skipped and
    counted out of ``n_valid_labels``.
    """
    if any(k <= 0 for k in k_grid):
        raise ConfigError(f"k_grid values must be positive, got {tuple(k_grid)}")
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    train, _, test = _split_masks(split)
    train_ids = np.flatnonzero(train)
    rows = []
    for k in k_grid:
        eligible = []
        for l in range(labels.shape[1]):
            ytr = labels[train, l]
            yt = labels[test, l]
            if (ytr == 1).sum() >= k and (ytr == 0).sum() >= k and len(yt) and yt.min() != yt.max():
                eligible.append(l)
        if not eligible:
            rows.append((int(k), np.nan, np.nan, 0))
            continue
        per_seed = []
        for seed in range(seeds):
            aucs = []
            for l in eligible:
                rng = np.random.default_rng(np.random.SeedSequence([seed, int(k), l]))
                pos = train_ids[labels[train_ids, l] == 1]
                neg = train_ids[labels[train_ids, l] == 0]
                pick = np.concatenate([
                    rng.choice(pos, size=k, replace=False),
                    rng.choice(neg, size=k, replace=False),
                ])
                w, b = fit_logistic(emb[pick], labels[pick, l], l2=l2, iters=iters, lr=lr)
                aucs.append(roc_auc(emb[test] @ w + b, labels[test, l]))
            per_seed.append(float(np.mean(aucs)))
        rows.append((int(k), float(np.mean(per_seed)), float(np.std(per_seed)), len(eligible)))
    return rows


def _fresh_head(num_labels, seed):
    rng_w = _param_rng(seed, "head/w")
    rng_b = _param_rng(seed, "head/b")
    from .model import EMBED_DIM

    return {
        "w": ad.parameter(uniform_fanin(rng_w, EMBED_DIM, num_labels, EMBED_DIM)),
        "b": ad.parameter(uniform_fanin(rng_b, 1, num_labels, EMBED_DIM)),
    }


def _val_mean_auc(scores, labels, valid_mask):
    aucs = [roc_auc(scores[:, l], labels[valid_mask, l]) for l in range(labels.shape[1])]
    aucs = [a for a in aucs if np.isfinite(a)]
    return float(np.mean(aucs)) if aucs else np.nan


def finetune_two_stage(graph, context, model, gid, config=None, dropout_rng_seed=None):
    """Two-stage supervised fine-tuning with a fresh affine head.

    Stage one trains adapter + head (backbone and projection frozen);
    stage two unfreezes everything under the four per-group learning
    rates. Each epoch is one full-batch BCE step on the train split;
    validation mean ROC-AUC is tracked after every epoch and the best
    checkpoint (across both stages) is restored before test evaluation.
    Returns (model, report, epoch_log).
    """
    config = config or AdaptConfig()
    if graph.labels is None or graph.split is None:
        raise DataError("fine-tuning needs labels and a split on the graph")
    labels = np.asarray(graph.labels, dtype=np.float64)
    train, valid, test = _split_masks(graph.split)
    if not (train.any() and valid.any() and test.any()):
        raise DataError("fine-tuning needs non-empty train, valid, and test splits")
    head = _fresh_head(labels.shape[1], config.seed)
    rng = np.random.default_rng(config.seed if dropout_rng_seed is None else dropout_rng_seed)
    train_ids = np.flatnonzero(train)
    y_train = labels[train_ids]

    adapter = model.adapters[gid]
    groups = {
        "stage1": {
            f"adapter/{gid}/w": adapter["w"], f"adapter/{gid}/b": adapter["b"],
            "head/w": head["w"], "head/b": head["b"],
        },
        "stage2": {
            **model.named_parameters(),
            "head/w": head["w"], "head/b": head["b"],
        },
    }
    lr_overrides = {"adapter/": config.lr_adapter, "head/": config.lr_head,
                    "backbone/": config.lr_backbone, "proj/": config.lr_proj}
    best = {"auc": -np.inf, "state": None, "stage": None, "epoch": None}
    epoch_log = []

    def snapshot():
        named = {k: v.copy() for k, v in model.to_arrays().items()}
        named["head/w"] = head["w"].data.copy()
        named["head/b"] = head["b"].data.copy()
        return named

    def restore(named):
        for name, tensor in model.named_parameters().items():
            tensor.data[...] = named[name]
        head["w"].data[...] = named["head/w"]
        head["b"].data[...] = named["head/b"]

    def eval_scores(mask):
        g, z, e = embed_graph(model, graph, context, gid, training=False)
        logits = e.data @ head["w"].data + head["b"].data.reshape(1, -1)
        return logits[mask]

    for stage in ("stage1", "stage2"):
        opt = ad.Adam(groups[stage], lr=config.lr_head, weight_decay=config.weight_decay,
                      lr_overrides=lr_overrides)
        since_best = 0
        for epoch in range(config.epochs):
            _, _, e = embed_graph(model, graph, context, gid, training=True, rng=rng)
            logits = ad.affine(e, head["w"], head["b"])
            loss = ad.bce_with_logits(ad.take_rows(logits, train_ids), y_train)
            loss_v = loss.data.item()
            if not np.isfinite(loss_v):
                raise NumericError(f"non-finite fine-tune loss at {stage} epoch {epoch}")
            loss.backward()
            opt.step()
            for p in groups["stage2"].values():
                p.grad = None
            val_auc = _val_mean_auc(eval_scores(valid), labels, valid)
            epoch_log.append((stage, epoch, loss_v, val_auc))
            if np.isfinite(val_auc) and val_auc > best["auc"]:
                best.update(auc=val_auc, state=snapshot(), stage=stage, epoch=epoch)
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
        if best["state"] is not None:
            restore(best["state"])

    st = eval_scores(test)
    yt = labels[test]
    sv = eval_scores(valid)
    yv = labels[valid]
    per_label = []
    for l in range(labels.shape[1]):
        auc = roc_auc(st[:, l], yt[:, l])
        if len(yv) and yv[:, l].min() != yv[:, l].max():
            thr, _ = f1_best_threshold(sv[:, l], yv[:, l])
        else:
            thr = 0.0
        acc = float(((st[:, l] >= thr).astype(np.int8) == yt[:, l].astype(np.int8)).mean())
        per_label.append((l, np.isfinite(auc), auc, thr, acc))
    report = EvalReport(
        kind="finetune", seed=config.seed,
        config={"epochs": config.epochs, "patience": config.patience,
                "lr_backbone": config.lr_backbone, "lr_proj": config.lr_proj,
                "lr_adapter": config.lr_adapter, "lr_head": config.lr_head,
                "best_stage": best["stage"], "best_epoch": best["epoch"],
                "best_val_auc": best["auc"]},
        per_label=per_label,
        aggregates=_aggregate(per_label),
    )
    return model, report, epoch_log
