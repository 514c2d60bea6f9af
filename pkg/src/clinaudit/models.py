"""Small predictors with analytic gradients: logistic regression, MLPs, CART trees.

Parameter layout (logistic and MLP) is a single flat float64 vector holding,
layer by layer, the weight matrix ``W`` (shape ``out x in``, row-major) followed
by the bias vector.  A logistic model is an MLP with no hidden layers, so its
vector is ``[w_1 .. w_d, b]``.

L2 weight decay penalizes weight coordinates only (biases are free):
``loss = mean log-loss + (lambda / 2) * sum(W**2)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, require_both_classes, sigmoid
from .errors import DataError, DivergenceError

PROB_CLAMP = 1e-12
MODEL_FORMAT_VERSION = 1
MAX_HIDDEN_LAYERS = 3


@dataclass(frozen=True)
class ActivationSpec:
    kind: str = "relu"
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("relu", "softplus"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if not self.beta > 0:
            raise ValueError("softplus beta must be positive")

    def __call__(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        bz = self.beta * z
        return np.logaddexp(0.0, bz) / self.beta

    def derivative(self, z):
        if self.kind == "relu":
            return (z > 0).astype(np.float64)
        return sigmoid(self.beta * z)


@dataclass(frozen=True)
class Architecture:
    """Layer widths between input and the single logit output."""

    hidden: tuple[int, ...] = ()
    activation: ActivationSpec = field(default_factory=ActivationSpec)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if len(self.hidden) > MAX_HIDDEN_LAYERS:
            raise ValueError(f"at most {MAX_HIDDEN_LAYERS} hidden layers supported")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")

    @property
    def kind(self) -> str:
        return "mlp" if self.hidden else "logistic"

    def widths(self, d: int) -> list[int]:
        return [d, *self.hidden, 1]

    def n_params(self, d: int) -> int:
        w = self.widths(d)
        return sum(w[i + 1] * (w[i] + 1) for i in range(len(w) - 1))


def logistic() -> Architecture:
    return Architecture()


def mlp(*hidden: int, activation: str = "relu", beta: float = 1.0) -> Architecture:
    return Architecture(tuple(hidden), ActivationSpec(activation, beta))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0
    loss: str = "log-loss"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss != "log-loss":
            raise ValueError("only log-loss is supported")


@dataclass(frozen=True)
class Model:
    kind: str
    d: int
    arch: Architecture = field(default_factory=Architecture)
    params: np.ndarray | None = None
    tree: tuple[dict, ...] = ()
    trained: bool = True
    feature_names: tuple[str, ...] = ()
    history: tuple[float, ...] = ()

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def to_dict(self) -> dict:
        out = {
            "format": "clinaudit.model",
            "version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "d": self.d,
            "hidden": list(self.arch.hidden),
            "activation": {"kind": self.arch.activation.kind, "beta": self.arch.activation.beta},
            "feature_names": list(self.feature_names),
            "trained": self.trained,
        }
        if self.kind == "tree":
            out["tree"] = [dict(node) for node in self.tree]
        else:
            out["params"] = [float(v) for v in self.params]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "Model":
        if doc.get("format") != "clinaudit.model":
            raise DataError("not a clinaudit model document")
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model version {doc.get('version')}")
        act = doc.get("activation", {})
        arch = Architecture(tuple(doc.get("hidden", ())), ActivationSpec(act.get("kind", "relu"), act.get("beta", 1.0)))
        params = None if doc["kind"] == "tree" else np.asarray(doc["params"], dtype=np.float64)
        if params is not None and params.size != arch.n_params(doc["d"]):
            raise DataError("parameter vector length does not match architecture")
        return cls(doc["kind"], int(doc["d"]), arch, params, tuple(doc.get("tree", ())),
                   bool(doc.get("trained", True)), tuple(doc.get("feature_names", ())))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_model(path) -> Model:
    return Model.load(path)


def make_model(arch: Architecture, params, d: int, trained: bool = True, **kw) -> Model:
    params = np.asarray(params, dtype=np.float64)
    if params.size != arch.n_params(d):
        raise ValueError(f"expected {arch.n_params(d)} parameters, got {params.size}")
    return Model(arch.kind, d, arch, params, trained=trained, **kw)


# ---------------------------------------------------------------- forward / backward


def _layers(params: np.ndarray, widths: list[int]):
    layers, pos = [], 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        W = params[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def _weight_mask(arch: Architecture, d: int) -> np.ndarray:
    mask = []
    w = arch.widths(d)
    for fan_in, fan_out in zip(w[:-1], w[1:]):
        mask += [1.0] * (fan_in * fan_out) + [0.0] * fan_out
    return np.asarray(mask)


def _forward(m: Model, X: np.ndarray):
    layers = _layers(m.params, m.arch.widths(m.d))
    acts, pres = [X], []
    a = X
    for i, (W, b) in enumerate(layers):
        z = a @ W.T + b
        pres.append(z)
        a = z if i == len(layers) - 1 else m.arch.activation(z)
        acts.append(a)
    return layers, acts, pres


def _backward(m: Model, X, y):
    """Per-example output deltas propagated through the network.

    Returns the layer list, activations, per-layer deltas (dLoss_i/dz) where
    Loss_i is the unregularized log-loss of example i, and the output logits.
    """
    layers, acts, pres = _forward(m, X)
    z = pres[-1][:, 0]
    delta = (sigmoid(z) - y)[:, None]
    deltas = [delta]
    for i in range(len(layers) - 1, 0, -1):
        W, _ = layers[i]
        delta = (delta @ W) * m.arch.activation.derivative(pres[i - 1])
        deltas.append(delta)
    deltas.reverse()
    return layers, acts, deltas, z


def _check_width(m: Model, X) -> np.ndarray:
    if not m.trained:
        raise ValueError("model is not trained")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != m.d:
        raise DataError(f"expected {m.d} features, got {X.shape[1]}")
    return X


def predict_proba(m: Model, X) -> np.ndarray:
    """Class-1 probabilities for a row or a matrix of rows."""
    single = np.ndim(X) == 1
    X = _check_width(m, X)
    if m.kind == "tree":
        out = _tree_predict(m.tree, X)
    else:
        out = sigmoid(_forward(m, X)[2][-1][:, 0])
    return out[0] if single else out


def log_loss(y, p) -> np.ndarray:
    """Per-sample log-loss with probabilities clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def logit_log_loss(y, z) -> np.ndarray:
    """Per-sample log-loss evaluated from logits, exact where sigmoid(z) rounds to 0 or 1."""
    return np.logaddexp(0.0, z) - np.asarray(y, dtype=np.float64) * z


def loss_and_grad(m: Model, X, y, weight_decay: float = 0.0) -> tuple[float, np.ndarray]:
    """Mean log-loss plus L2 penalty, and its gradient w.r.t. the flat parameters.

    The loss is evaluated from logits, so it is the exact function whose
    gradient backpropagation returns, even for saturated predictions.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    layers, acts, deltas, z = _backward(m, X, y)
    n = X.shape[0]
    grads = []
    for a, delta in zip(acts[:-1], deltas):
        grads.append((delta.T @ a).ravel() / n)
        grads.append(delta.sum(axis=0) / n)
    grad = np.concatenate(grads)
    loss = float(logit_log_loss(y, z).mean())
    if weight_decay:
        mask = _weight_mask(m.arch, m.d)
        loss += 0.5 * weight_decay * float(np.sum((m.params * mask) ** 2))
        grad = grad + weight_decay * m.params * mask
    return loss, grad


def per_example_grads(m: Model, X, y, weight_decay: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of each example's regularized loss, shape ``(B, n_params)``.

    Also returns the per-example losses.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    layers, acts, deltas, z = _backward(m, X, y)
    parts = []
    for a, delta in zip(acts[:-1], deltas):
        parts.append(np.einsum("bo,bi->boi", delta, a).reshape(X.shape[0], -1))
        parts.append(delta)
    G = np.concatenate(parts, axis=1)
    losses = logit_log_loss(y, z)
    if weight_decay:
        mask = _weight_mask(m.arch, m.d)
        G = G + weight_decay * m.params * mask
        losses = losses + 0.5 * weight_decay * float(np.sum((m.params * mask) ** 2))
    return G, losses


def input_gradient(m: Model, X, y) -> np.ndarray:
    """Gradient of each row's log-loss with respect to that row's inputs."""
    if m.kind == "tree":
        raise TypeError("tree models have no input gradient")
    single = np.ndim(X) == 1
    X = _check_width(m, X)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), (X.shape[0],))
    layers, _, deltas, _ = _backward(m, X, y)
    g = deltas[0] @ layers[0][0]
    return g[0] if single else g


# ---------------------------------------------------------------- training


def init_params(arch: Architecture, d: int, seed: int) -> np.ndarray:
    """Zeros for logistic models; Glorot-uniform weights and zero biases for MLPs."""
    if not arch.hidden:
        return np.zeros(arch.n_params(d))
    rng = np.random.default_rng(seed)
    parts = []
    w = arch.widths(d)
    for fan_in, fan_out in zip(w[:-1], w[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-limit, limit, fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled fixed-size mini-batches for one epoch; the last batch may be short.

    The permutation depends only on ``(seed, epoch)``, so a run split into
    several calls with ``epoch_offset`` sees the same schedule as one long run.
    """
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(ds: Dataset, arch: Architecture, cfg: TrainConfig, init: np.ndarray | None = None,
          epoch_offset: int = 0) -> Model:
    """Mini-batch SGD on mean log-loss + L2 penalty.

    ``init`` overrides the seeded initialization (used for federated clients);
    ``epoch_offset`` shifts the batch schedule.
    """
    require_both_classes(ds)
    params = init_params(arch, ds.d, cfg.seed) if init is None else np.array(init, dtype=np.float64)
    if params.size != arch.n_params(ds.d):
        raise DataError(f"architecture expects {arch.n_params(ds.d)} parameters for d={ds.d}")
    m = Model(arch.kind, ds.d, arch, params, feature_names=ds.feature_names)
    X, y = ds.features, ds.labels
    history = []
    for epoch in range(epoch_offset, epoch_offset + cfg.epochs):
        # overflow surfaces as non-finite parameters, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            for batch in epoch_batches(ds.n, cfg.batch_size, cfg.seed, epoch):
                _, grad = loss_and_grad(m, X[batch], y[batch], cfg.weight_decay)
                m = replace(m, params=m.params - cfg.lr * grad)
            loss = loss_and_grad(m, X, y, cfg.weight_decay)[0]
        if not (np.isfinite(loss) and np.all(np.isfinite(m.params))):
            raise DivergenceError("training diverged", step=epoch)
        history.append(loss)
    return replace(m, history=tuple(history))


# ---------------------------------------------------------------- trees


def _gini(pos: np.ndarray, tot: np.ndarray) -> np.ndarray:
    p = pos / tot
    return 2.0 * p * (1.0 - p)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    n = y.size
    parent = _gini(np.array(y.sum()), np.array(n))
    best = (parent - 1e-12, None, None)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        left_n = np.arange(1, n)
        left_pos = np.cumsum(ys)[:-1]
        right_n = n - left_n
        right_pos = ys.sum() - left_pos
        valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not valid.any():
            continue
        imp = (left_n * _gini(left_pos, left_n) + right_n * _gini(right_pos, right_n)) / n
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        if imp[i] < best[0]:
            best = (imp[i], j, 0.5 * (xs[i] + xs[i + 1]))
    return best[1], best[2]


def train_tree(ds: Dataset, max_depth: int = 3, min_leaf: int = 1) -> Model:
    """Greedy CART tree: Gini impurity, midpoint thresholds, ``x <= t`` goes left.

    Leaves store the training positive fraction, which is the predicted probability.
    """
    require_both_classes(ds)
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf >= 1")
    nodes: list[dict] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        y = ds.labels[idx]
        node_id = len(nodes)
        nodes.append({})
        j = thr = None
        if depth < max_depth and 0 < y.sum() < y.size and y.size >= 2 * min_leaf:
            j, thr = _best_split(ds.features[idx], y, min_leaf)
        if j is None:
            pos = int(y.sum())
            nodes[node_id] = {"leaf": True, "value": pos / y.size, "n": int(y.size),
                              "label": int(2 * pos > y.size)}
            return node_id
        go_left = ds.features[idx, j] <= thr
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        nodes[node_id] = {"leaf": False, "feature": int(j), "threshold": float(thr),
                          "left": left, "right": right, "n": int(y.size)}
        return node_id

    grow(np.arange(ds.n), 0)
    return Model("tree", ds.d, Architecture(), None, tuple(nodes), feature_names=ds.feature_names)


def _tree_predict(nodes, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i, x in enumerate(X):
        node = nodes[0]
        while not node["leaf"]:
            node = nodes[node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]]
        out[i] = node["value"]
    return out


def tree_depth(m: Model) -> int:
    def depth(i):
        node = m.tree[i]
        return 0 if node["leaf"] else 1 + max(depth(node["left"]), depth(node["right"]))
    return depth(0)


def leaf_count(m: Model) -> int:
    return sum(1 for node in m.tree if node["leaf"])
