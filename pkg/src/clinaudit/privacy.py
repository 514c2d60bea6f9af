"""Differential privacy: Laplace and Gaussian mechanisms, DP-SGD, basic composition.

DP-SGD follows the textbook loop: per-example gradients are clipped to L2
norm ``C`` (``g / max(1, ||g|| / C)``), averaged over the batch, perturbed with
``N(0, sigma^2 C^2 I)`` and applied with step size ``lr``.  Batches are the same
shuffled fixed-size batches used by :func:`clinaudit.models.train`; the last
batch of an epoch may be short and is averaged over its actual size.

Accounting is basic composition only (sum of per-step epsilons and deltas),
a loose upper bound.  ``sigma`` is supplied directly, never derived from a
target budget.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, require_both_classes
from .errors import DataError, DivergenceError
from .models import Architecture, Model, TrainConfig, epoch_batches, init_params, loss_and_grad, per_example_grads

_NOISE_STREAM = 0x5EED


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float = 1.0
    delta: float = 0.0
    sensitivity: float = 1.0
    clip: float = 1.0
    sigma: float = 0.0
    batch_size: int | None = None
    steps: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if not self.sensitivity > 0:
            raise ValueError("sensitivity must be positive")
        if not self.clip > 0:
            raise ValueError("clip norm must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    @property
    def pure(self) -> bool:
        return self.delta == 0


def _finite_values(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("mechanism inputs must be finite")
    return v


def laplace_scale(sensitivity: float, epsilon: float) -> float:
    if not (sensitivity > 0 and epsilon > 0):
        raise ValueError("sensitivity and epsilon must be positive")
    return sensitivity / epsilon


def laplace_pdf(x, loc, scale: float) -> np.ndarray:
    return np.exp(-np.abs(np.asarray(x, dtype=np.float64) - loc) / scale) / (2.0 * scale)


def laplace_mechanism(values, sensitivity: float, epsilon: float, seed: int = 0):
    """Add Laplace(0, sensitivity / epsilon) noise to every coordinate."""
    v = _finite_values(values)
    b = laplace_scale(sensitivity, epsilon)
    out = v + np.random.default_rng(seed).laplace(0.0, b, v.shape)
    return out if out.ndim else float(out)


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Classic Gaussian-mechanism scale ``sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon``."""
    if delta <= 0:
        raise ValueError("the Gaussian mechanism needs delta > 0 (it cannot give pure epsilon-DP)")
    if not 0 < epsilon < 1:
        raise ValueError("the classic Gaussian bound holds for epsilon in (0, 1)")
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def gaussian_mechanism(values, sensitivity: float, epsilon: float, delta: float, seed: int = 0):
    v = _finite_values(values)
    sigma = gaussian_sigma(sensitivity, epsilon, delta)
    out = v + np.random.default_rng(seed).normal(0.0, sigma, v.shape)
    return out if out.ndim else float(out)


def compose_privacy(steps) -> tuple[float, float]:
    """Basic sequential composition: epsilons and deltas add up."""
    steps = list(steps)
    if not steps:
        raise ValueError("need at least one (epsilon, delta) pair")
    return float(math.fsum(e for e, _ in steps)), float(math.fsum(d for _, d in steps))


def clip_gradient(g, clip: float) -> np.ndarray:
    """Rescale ``g`` to norm at most ``clip``; shorter vectors pass unchanged."""
    return clip_rows(np.asarray(g, dtype=np.float64)[None, :], clip)[0][0]


def clip_rows(G: np.ndarray, clip: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip every row of ``G``; also returns the raw row norms.

    Rows already within ``clip`` are returned bit-for-bit.  Rescaled rows are
    nudged down by an ulp where rounding would leave the norm above ``clip``.
    """
    G = np.asarray(G, dtype=np.float64)
    norms = np.linalg.norm(G, axis=1)
    over = norms > clip
    out = G.copy()
    out[over] = G[over] * (clip / norms[over])[:, None]
    shrink = np.nextafter(1.0, 0.0)
    while True:
        bad = over & (_max_row_norm(out) > clip)
        if not bad.any():
            return out, norms
        out[bad] *= shrink


def _max_row_norm(G: np.ndarray) -> np.ndarray:
    # batched and single-vector norms round differently; bound both
    single = np.array([np.linalg.norm(row) for row in G])
    return np.maximum(np.linalg.norm(G, axis=1), single)


def dp_sgd_train(ds: Dataset, arch: Architecture, cfg: TrainConfig, priv: PrivacySpec,
                 init: np.ndarray | None = None, epoch_offset: int = 0,
                 stream: tuple[int, ...] = ()) -> tuple[Model, list[dict]]:
    """Train with DP-SGD and return the model plus a per-step audit log.

    The batch schedule matches :func:`clinaudit.models.train` for the same
    seed.  Noise is drawn from a separate stream keyed by ``cfg.seed`` and
    ``stream`` (federated clients pass their id and round here).  Training
    runs ``priv.steps`` steps when given, otherwise ``cfg.epochs`` epochs.
    """
    require_both_classes(ds)
    params = init_params(arch, ds.d, cfg.seed) if init is None else np.array(init, dtype=np.float64)
    if params.size != arch.n_params(ds.d):
        raise DataError(f"architecture expects {arch.n_params(ds.d)} parameters for d={ds.d}")
    m = Model(arch.kind, ds.d, arch, params, feature_names=ds.feature_names)
    batch_size = priv.batch_size or cfg.batch_size
    noise_rng = np.random.default_rng([cfg.seed, _NOISE_STREAM, *stream])
    noise_std = priv.sigma * priv.clip
    X, y = ds.features, ds.labels
    log: list[dict] = []
    step = 0
    epoch = epoch_offset
    total = priv.steps
    n_epochs = cfg.epochs if total is None else math.inf
    while (epoch - epoch_offset) < n_epochs and (total is None or step < total):
        for batch in epoch_batches(ds.n, batch_size, cfg.seed, epoch):
            if total is not None and step >= total:
                break
            G, losses = per_example_grads(m, X[batch], y[batch], cfg.weight_decay)
            clipped, raw = clip_rows(G, priv.clip)
            g_bar = clipped.mean(axis=0)
            if noise_std > 0:
                g_bar = g_bar + noise_rng.normal(0.0, noise_std, g_bar.shape)
            m = replace(m, params=m.params - cfg.lr * g_bar)
            if not np.all(np.isfinite(m.params)):
                raise DivergenceError("DP-SGD diverged", step=step)
            log.append({"step": step, "max_raw_norm": float(raw.max()),
                        "max_clipped_norm": float(np.linalg.norm(clipped, axis=1).max()),
                        "noise_scale": noise_std, "loss": float(losses.mean())})
            step += 1
        epoch += 1
    history = (loss_and_grad(m, X, y, cfg.weight_decay)[0],)
    return replace(m, history=history), log


def write_audit_log(log: list[dict], path) -> None:
    """JSON-lines audit log, one object per step."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def read_audit_log(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
