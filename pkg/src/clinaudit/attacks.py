"""Adversary harness: shadow-model membership inference and FGSM/PGD/ZOO evasion.

Membership inference trains ``S`` shadow models on attacker-held rows
(disjoint from the target's training rows and from the evaluation rows),
labels each shadow's own training rows "in" and an equal number of unseen rows
"out", and fits a logistic attack classifier on per-sample (max confidence,
log-loss) features.  The attack is then scored on the target's members and
an equal number of non-members.

Evasion attacks perturb inputs within an l-infinity ball of radius ``eps``
(and optional box bounds) to increase the log-loss of the true label.  An
attack succeeds on a row that the model classified correctly (threshold 0.5)
and misclassifies after perturbation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .calibration import fit_logistic
from .data import Dataset, sigmoid
from .errors import DataError
from .metrics import roc_auc
from .models import Architecture, Model, TrainConfig, input_gradient, log_loss, train

ATTACK_RIDGE = 1e-2


@dataclass
class AttackResult:
    kind: str
    config: dict
    scores: np.ndarray | None = None
    membership: np.ndarray | None = None
    auc: float | None = None
    advantage: float | None = None
    adversarial: np.ndarray | None = field(default=None, repr=False)
    success_rate: float | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "config": self.config}
        for k in ("auc", "advantage", "success_rate"):
            if getattr(self, k) is not None:
                out[k] = getattr(self, k)
        return out


# ---------------------------------------------------------------- membership inference


def attack_features(model, X, y) -> np.ndarray:
    """Per-sample (max class confidence, log-loss of the true label)."""
    p = np.asarray(_predict(model)(X), dtype=np.float64)
    return np.column_stack([np.maximum(p, 1 - p), log_loss(y, p)])


def score_membership(member_scores, nonmember_scores, config: dict | None = None) -> AttackResult:
    """AUC and advantage (max TPR - FPR) of any membership score, members = positives."""
    member_scores = np.asarray(member_scores, dtype=np.float64)
    nonmember_scores = np.asarray(nonmember_scores, dtype=np.float64)
    if member_scores.size != nonmember_scores.size:
        raise DataError("member and non-member sets must have equal size")
    scores = np.concatenate([member_scores, nonmember_scores])
    membership = np.r_[np.ones(member_scores.size, np.int64), np.zeros(nonmember_scores.size, np.int64)]
    roc = roc_auc(membership, scores)
    return AttackResult("mia", dict(config or {}), scores, membership, roc.auc, float(np.max(roc.tpr - roc.fpr)))


@dataclass(frozen=True)
class MiaSetup:
    target: object
    shadow_arch: Architecture
    shadow_cfg: TrainConfig
    n_shadows: int = 4
    features: str = "both"
    seed: int = 0

    def __post_init__(self):
        if self.n_shadows < 1:
            raise ValueError("need at least one shadow model")
        if self.features not in ("confidence", "loss", "both"):
            raise ValueError(f"unknown attack feature spec {self.features!r}")

    def select(self, F: np.ndarray) -> np.ndarray:
        return {"confidence": F[:, :1], "loss": F[:, 1:], "both": F}[self.features]


def _check_disjoint(*sets: Dataset) -> None:
    seen: set[int] = set()
    for s in sets:
        ids = set(s.row_ids.tolist())
        if len(ids) != s.n or ids & seen:
            raise DataError("member, non-member and shadow rows must be pairwise disjoint")
        seen |= ids


def mia_shadow_attack(setup: MiaSetup, members: Dataset, nonmembers: Dataset, shadow_pool: Dataset,
                      target_train_ids=None) -> AttackResult:
    """Shadow-model membership inference against ``setup.target``.

    Row disjointness is checked on ``row_ids``; pass datasets cut from one
    parent.  ``target_train_ids`` (if given) must not meet the shadow pool.
    """
    if members.n != nonmembers.n:
        raise DataError("member and non-member sets must have equal size")
    _check_disjoint(members, nonmembers, shadow_pool)
    if target_train_ids is not None and set(np.asarray(target_train_ids).tolist()) & set(shadow_pool.row_ids.tolist()):
        raise DataError("shadow pool overlaps the target's training rows")
    m = min(members.n, shadow_pool.n // 2)
    if m < 2:
        raise DataError("shadow pool too small to build disjoint in/out sets")

    rng = np.random.default_rng(setup.seed)
    feats, labels = [], []
    for s in range(setup.n_shadows):
        for _ in range(100):
            pick = rng.permutation(shadow_pool.n)[:2 * m]
            inside, outside = shadow_pool.subset(pick[:m]), shadow_pool.subset(pick[m:])
            if inside.has_both_classes():
                break
        else:
            raise DataError("could not draw a two-class shadow training set")
        shadow = train(inside, setup.shadow_arch, replace(setup.shadow_cfg, seed=setup.seed * 1000 + s))
        feats += [attack_features(shadow, inside.features, inside.labels),
                  attack_features(shadow, outside.features, outside.labels)]
        labels += [np.ones(m), np.zeros(m)]
    F = setup.select(np.vstack(feats))
    mu, sd = F.mean(axis=0), F.std(axis=0)
    sd[sd == 0] = 1.0
    design = np.column_stack([np.ones(F.shape[0]), (F - mu) / sd])
    coef = fit_logistic(design, np.concatenate(labels), ridge=ATTACK_RIDGE)

    def attack_score(ds: Dataset) -> np.ndarray:
        G = setup.select(attack_features(setup.target, ds.features, ds.labels))
        return sigmoid(np.column_stack([np.ones(ds.n), (G - mu) / sd]) @ coef)

    config = {"n_shadows": setup.n_shadows, "features": setup.features, "seed": setup.seed,
              "shadow_size": m, "n_members": members.n,
              "shadow_arch": {"hidden": list(setup.shadow_arch.hidden),
                              "activation": setup.shadow_arch.activation.kind}}
    return score_membership(attack_score(members), attack_score(nonmembers), config)


# ---------------------------------------------------------------- evasion


def _predict(model) -> Callable:
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    if callable(model):
        return model
    raise TypeError("model must be callable or expose predict_proba")


def _require_gradient(model) -> None:
    if not isinstance(model, Model):
        raise TypeError("white-box attacks need a clinaudit logistic or MLP model")
    if model.kind == "tree":
        raise TypeError("tree models have no gradient; use a query-only attack")


def _bounds(bounds, shape):
    if bounds is None:
        return np.full(shape, -np.inf), np.full(shape, np.inf)
    lo, hi = bounds
    return np.broadcast_to(np.asarray(lo, dtype=np.float64), shape), np.broadcast_to(np.asarray(hi, dtype=np.float64), shape)


def project(x_adv, x0, eps: float, bounds=None) -> np.ndarray:
    """Closest point (coordinate-wise) in the eps-ball around ``x0`` and the box.

    Rounding in ``x0 +- eps`` can overshoot by one ulp; those coordinates are
    stepped back toward ``x0`` so ``|x_adv - x0| <= eps`` holds exactly.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    lo, hi = _bounds(bounds, x0.shape)
    out = np.clip(np.asarray(x_adv, dtype=np.float64), x0 - eps, x0 + eps)
    for _ in range(4):
        bad = np.abs(out - x0) > eps
        if not bad.any():
            break
        out = np.where(bad, np.nextafter(out, x0), out)
    out = np.clip(out, lo, hi)
    return out


def fgsm(model, x, y, eps: float, bounds=None) -> np.ndarray:
    """One signed-gradient step of size ``eps`` on the log-loss of label ``y``."""
    _require_gradient(model)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if eps == 0:
        return project(x, x, 0.0, bounds)
    g = input_gradient(model, x, y)
    return project(x + eps * np.sign(g), x, eps, bounds)


def pgd(model, x, y, eps: float, alpha: float, iters: int, bounds=None, grad_fn: Callable | None = None,
        return_path: bool = False):
    """Iterated signed-gradient steps of size ``alpha``, projected after each step.

    Starts at ``x`` (no random start), so ``iters=1, alpha=eps`` equals FGSM.
    ``grad_fn(x_t) -> gradient`` replaces the analytic input gradient (used by
    the query-only attack).  With ``return_path`` the list of iterates is
    returned as well.
    """
    if grad_fn is None:
        _require_gradient(model)
        grad_fn = lambda xt: input_gradient(model, xt, y)  # noqa: E731
    if eps < 0 or alpha < 0 or iters < 0:
        raise ValueError("eps, alpha and iters must be >= 0")
    x0 = np.asarray(x, dtype=np.float64)
    xt = project(x0, x0, eps, bounds)
    path = [xt]
    for _ in range(iters):
        xt = project(xt + alpha * np.sign(grad_fn(xt)), x0, eps, bounds)
        path.append(xt)
    return (xt, path) if return_path else xt


def zoo_gradient(f, x, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient estimate from ``2 d`` queries of ``f``.

    ``f`` maps a 1-D input to a scalar; a model is queried through its
    class-1 probability.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    fn = _predict(f)
    x = np.asarray(x, dtype=np.float64)
    if np.any(x + h == x):
        warnings.warn("h is below the floating-point resolution of x; differences underflow", RuntimeWarning,
                      stacklevel=2)
    g = np.empty(x.size)
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h
        g[j] = (float(fn(x + e)) - float(fn(x - e))) / (2 * h)
    return g


def zoo_loss_gradient(model, x, y, h: float = 1e-4) -> np.ndarray:
    """Query-only estimate of the input gradient of ``model``'s log-loss at label ``y``."""
    f = _predict(model)
    return zoo_gradient(lambda z: float(log_loss([y], [f(z)])[0]), x, h)


def _success_rate(model, X, y, X_adv) -> float:
    f = _predict(model)
    before = (np.asarray(f(X)) >= 0.5).astype(np.int64)
    after = (np.asarray(f(X_adv)) >= 0.5).astype(np.int64)
    correct = before == y
    if not correct.any():
        return 0.0
    return float(np.mean(after[correct] != y[correct]))


def evasion_attack(model, ds: Dataset, method: str = "fgsm", eps: float = 0.1, alpha: float | None = None,
                   iters: int = 10, bounds=None, h: float = 1e-4) -> AttackResult:
    """Attack every row of ``ds`` and report the success rate.

    ``method`` is ``fgsm``, ``pgd`` or ``zoo`` (PGD driven by query-only
    gradient estimates).
    """
    X, y = ds.features, ds.labels
    if method == "fgsm":
        X_adv = fgsm(model, X, y, eps, bounds)
        alpha, iters = eps, 1
    elif method == "pgd":
        alpha = eps / 4 if alpha is None else alpha
        X_adv = pgd(model, X, y, eps, alpha, iters, bounds)
    elif method == "zoo":
        alpha = eps / 4 if alpha is None else alpha
        X_adv = np.vstack([
            pgd(None, X[i], y[i], eps, alpha, iters, bounds,
                grad_fn=lambda z, i=i: zoo_loss_gradient(model, z, y[i], h))
            for i in range(ds.n)
        ])
    else:
        raise ValueError(f"unknown evasion method {method!r}")
    config = {"method": method, "eps": eps, "alpha": alpha, "iters": iters,
              "bounds": None if bounds is None else [np.asarray(b).tolist() for b in bounds]}
    if method == "zoo":
        config["h"] = h
    return AttackResult(method, config, adversarial=X_adv, success_rate=_success_rate(model, X, y, X_adv))


def evaluate_defense(baseline: AttackResult, defended: AttackResult) -> list[dict]:
    """Side-by-side attack numbers for a baseline and a defended model.

    Both results must come from the same attack kind and configuration.
    """
    if baseline.kind != defended.kind or baseline.config != defended.config:
        raise DataError("baseline and defended results use different attack configurations")
    rows = []
    for name in ("auc", "advantage", "success_rate"):
        b, d = getattr(baseline, name), getattr(defended, name)
        if b is None and d is None:
            continue
        rows.append({"metric": name, "baseline": b, "defended": d,
                     "delta": None if b is None or d is None else d - b})
    return rows
