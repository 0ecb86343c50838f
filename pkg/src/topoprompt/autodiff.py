"""Minimal reverse-mode autodiff over float64 numpy arrays.

Covers exactly the layer set the embedding model needs: affine maps,
neighborhood-mean aggregation, row L2 normalization, dropout,
concatenation, similarity logits, and the losses built on top (those
live next to their modules and plug in through the same Tensor type).
Gradients are accumulated by closures recorded at op construction;
``Tensor.backward`` walks the tape in reverse topological order.

All data is float64; no broadcasting beyond what each op states.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


class Tensor:
    """Array node in the computation tape.

    ``requires_grad`` marks leaves (parameters). Gradients propagate
    through any tensor whose subtree contains such a leaf; everything
    else is skipped for speed.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_needs")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward
        self._needs = self.requires_grad or any(p._needs for p in self._parents)

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        """Backpropagate from a scalar (size-1) tensor."""
        if self.data.size != 1:
            raise DataError(f"backward from non-scalar tensor of shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if id(t) in seen:
                continue
            if expanded:
                seen.add(id(t))
                topo.append(t)
                continue
            stack.append((t, True))
            for p in t._parents:
                if id(p) not in seen and p._needs:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward()

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data):
    return Tensor(data)


def _accum(t, g):
    if not t._needs:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def affine(x, w, b=None):
    """x @ w + b with b broadcast over rows; b may be omitted."""
    if x.data.shape[1] != w.data.shape[0]:
        raise DataError(f"affine shapes {x.shape} @ {w.shape} do not agree")
    y = x.data @ w.data
    if b is not None:
        if b.data.reshape(-1).shape[0] != w.data.shape[1]:
            raise DataError(f"affine bias shape {b.shape} vs output width {w.data.shape[1]}")
        y = y + b.data.reshape(1, -1)
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(y, parents=parents)

    def backward():
        g = out.grad
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        if b is not None:
            _accum(b, g.sum(axis=0).reshape(b.data.shape))

    out._backward = backward
    return out


def matmul(a, b, transpose_b=False):
    """a @ b (or a @ b.T); the similarity-logits workhorse."""
    bd = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bd.shape[0]:
        raise DataError(f"matmul shapes {a.shape} x {bd.shape} do not agree")
    out = Tensor(a.data @ bd, parents=(a, b))

    def backward():
        g = out.grad
        if transpose_b:
            _accum(a, g @ b.data)
            _accum(b, g.T @ a.data)
        else:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

    out._backward = backward
    return out


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,))

    def backward():
        _accum(x, out.grad * (x.data > 0))

    out._backward = backward
    return out


def sparse_matmul(mat, x):
    """mat @ x for a constant scipy sparse ``mat``; backward is mat.T @ grad."""
    out = Tensor(mat @ x.data, parents=(x,))

    def backward():
        _accum(x, mat.T @ out.grad)

    out._backward = backward
    return out


def neigh_mean(x, graph):
    """Mean over neighbors per row; isolated nodes get the zero vector."""
    return sparse_matmul(graph.mean_aggregator(), x)


def sage_layer(h, graph, w_self, w_neigh, activation="relu"):
    """One GraphSAGE mean-aggregator layer.

    out = act(h @ w_self + mean_neigh(h) @ w_neigh), no bias. The
    default activation is ReLU; pass activation=None for a linear layer.
    """
    pre = add(matmul(h, w_self), matmul(neigh_mean(h, graph), w_neigh))
    if activation == "relu":
        return relu(pre)
    if activation is None:
        return pre
    raise DataError(f"unknown activation {activation!r}")


def add(a, b):
    if a.data.shape != b.data.shape:
        raise DataError(f"add shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward():
        _accum(a, out.grad)
        _accum(b, out.grad)

    out._backward = backward
    return out


def scale(x, c):
    c = float(c)
    out = Tensor(x.data * c, parents=(x,))

    def backward():
        _accum(x, out.grad * c)

    out._backward = backward
    return out


def row_l2_normalize(x, guard=1e-12):
    """Divide each row by max(norm, guard); exact backward through the quotient."""
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    denom = np.maximum(norms, guard)
    y = x.data / denom
    out = Tensor(y, parents=(x,))

    def backward():
        g = out.grad
        live = norms > guard
        inner = (g * y).sum(axis=1, keepdims=True)
        gx = (g - np.where(live, inner * y, 0.0)) / denom
        _accum(x, gx)

    out._backward = backward
    return out


def dropout(x, rate, training, rng):
    """Inverted dropout; identity in eval mode. ``rng`` is int seed or Generator."""
    if not 0.0 <= rate < 1.0:
        raise DataError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        out = Tensor(x.data, parents=(x,))

        def backward_id():
            _accum(x, out.grad)

        out._backward = backward_id
        return out
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    keep = rng.random(x.data.shape) >= rate
    factor = keep / (1.0 - rate)
    out = Tensor(x.data * factor, parents=(x,))

    def backward():
        _accum(x, out.grad * factor)

    out._backward = backward
    return out


def concat_cols(a, b):
    if a.data.shape[0] != b.data.shape[0]:
        raise DataError(f"concat_cols row mismatch {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=1), parents=(a, b))
    ca = a.data.shape[1]

    def backward():
        _accum(a, out.grad[:, :ca])
        _accum(b, out.grad[:, ca:])

    out._backward = backward
    return out


def take_rows(x, idx):
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(x.data[idx], parents=(x,))

    def backward():
        if x._needs:
            g = np.zeros_like(x.data)
            np.add.at(g, idx, out.grad)
            _accum(x, g)

    out._backward = backward
    return out


def sum_all(x):
    out = Tensor(np.array([[x.data.sum()]]), parents=(x,))

    def backward():
        _accum(x, np.full_like(x.data, out.grad.item()))

    out._backward = backward
    return out


def mean_all(x):
    return scale(sum_all(x), 1.0 / x.data.size)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy over all entries, numerically stable."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise DataError(f"bce targets shape {t.shape} vs logits {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.array([[loss.mean()]]), parents=(logits,))

    def backward():
        sig = 1.0 / (1.0 + np.exp(-z))
        _accum(logits, out.grad.item() * (sig - t) / z.size)

    out._backward = backward
    return out


class AdamState:
    """Per-parameter moment accumulators plus step counters."""

    def __init__(self, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}

    def ensure(self, name, shape):
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
            self.t[name] = 0


def adam_step(params, grads, state, lr_by_name=None):
    """One classic Adam update with L2 weight decay folded into the gradient.

    ``params`` and ``grads`` are dicts name -> ndarray; entries without a
    gradient are untouched (their step counters do not advance).
    """
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        state.ensure(name, theta.shape)
        if state.weight_decay:
            g = g + state.weight_decay * theta
        state.t[name] += 1
        t = state.t[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        mhat = state.m[name] / (1.0 - state.beta1 ** t)
        vhat = state.v[name] / (1.0 - state.beta2 ** t)
        lr = state.lr if lr_by_name is None else lr_by_name.get(name, state.lr)
        theta -= lr * mhat / (np.sqrt(vhat) + state.eps)


class Adam:
    """Adam over named Tensors; only parameters that received a gradient move.

    ``lr_overrides`` maps name prefixes to learning rates (longest match
    wins), which is how per-group rates are expressed.
    """

    def __init__(self, named_params, lr, weight_decay=0.0, beta1=0.9,
                 beta2=0.999, eps=1e-8, lr_overrides=None):
        self.params = dict(named_params)
        self.state = AdamState(lr, weight_decay, beta1, beta2, eps)
        self.lr_overrides = dict(lr_overrides or {})

    def _lr_for(self, name):
        best = None
        for prefix in self.lr_overrides:
            if name.startswith(prefix) and (best is None or len(prefix) > len(best)):
                best = prefix
        return self.state.lr if best is None else self.lr_overrides[best]

    def step(self):
        live = {n: p for n, p in self.params.items() if p.grad is not None}
        adam_step(
            {n: p.data for n, p in live.items()},
            {n: p.grad for n, p in live.items()},
            self.state,
            lr_by_name={n: self._lr_for(n) for n in live},
        )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        """Flatten optimizer state for the checkpoint container."""
        out = {}
        for name in self.params:
            if name in self.state.m:
                out[f"adam/m/{name}"] = self.state.m[name]
                out[f"adam/v/{name}"] = self.state.v[name]
                out[f"adam/t/{name}"] = np.array([[float(self.state.t[name])]])
        return out

    def load_state_arrays(self, named):
        for name in self.params:
            key = f"adam/m/{name}"
            if key in named:
                self.state.m[name] = named[key].copy()
                self.state.v[name] = named[f"adam/v/{name}"].copy()
                self.state.t[name] = int(named[f"adam/t/{name}"][0, 0])
