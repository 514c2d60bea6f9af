"""In-process FedAvg simulator: one server, many clients, round-based averaging.

Each round the server samples ``ceil(q * n_clients)`` clients without
replacement, every sampled client trains locally from the current global
parameters (plain SGD or DP-SGD), and the server replaces the global vector
with the sample-count-weighted mean of the returned vectors.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import DataError
from .metrics import auc_score, empirical_risk
from .models import Architecture, Model, TrainConfig, init_params, predict_proba, train
from .privacy import PrivacySpec, dp_sgd_train

logger = logging.getLogger(__name__)


class ClientSkipped(DataError):
    """A client could not produce an update this round."""


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 4
    rounds: int = 10
    client_fraction: float = 1.0
    local_epochs: int = 1
    partition: str = "iid"
    shards_per_client: int = 1
    privacy: PrivacySpec | None = None
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("need at least one client")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must lie in (0, 1]")
        if self.partition not in ("iid", "label-skew"):
            raise ValueError(f"unknown partition plan {self.partition!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.rounds < 0 or self.local_epochs < 0:
            raise ValueError("rounds and local_epochs must be >= 0")

    @property
    def clients_per_round(self) -> int:
        return max(1, math.ceil(self.client_fraction * self.n_clients))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FederationConfig":
        doc = dict(doc)
        priv = doc.pop("privacy", None)
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise DataError(f"unknown federation config keys: {sorted(unknown)}")
        return cls(**doc, privacy=PrivacySpec(**priv) if priv else None)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoundRecord:
    round: int
    selected: list[int]
    sample_counts: dict[int, int]
    skipped: dict[int, str]
    checksum: str
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"round": self.round, "selected": self.selected,
                "sample_counts": {str(k): v for k, v in self.sample_counts.items()},
                "skipped": {str(k): v for k, v in self.skipped.items()},
                "checksum": self.checksum, "metrics": self.metrics}


def partition_data(pool: Dataset, plan: str, n_clients: int, seed: int = 0,
                   shards_per_client: int = 1) -> list[Dataset]:
    """Split ``pool`` into disjoint client datasets covering every row.

    ``iid`` deals a seeded permutation into near-equal parts.  ``label-skew``
    sorts rows by label, cuts the sorted order into ``n_clients *
    shards_per_client`` contiguous shards and deals the shards out at random.
    Rows keep their pool order inside each client.
    """
    if n_clients > pool.n:
        raise DataError(f"{n_clients} clients but only {pool.n} rows")
    if n_clients < 1:
        raise ValueError("need at least one client")
    if n_clients == 1:
        return [pool.subset(np.arange(pool.n))]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(pool.n)
    if plan == "iid":
        parts = np.array_split(perm, n_clients)
    elif plan == "label-skew":
        order = perm[np.argsort(pool.labels[perm], kind="stable")]
        shards = np.array_split(order, n_clients * shards_per_client)
        dealt = rng.permutation(len(shards))
        parts = [np.concatenate([shards[s] for s in dealt[k::n_clients]]) for k in range(n_clients)]
    else:
        raise ValueError(f"unknown partition plan {plan!r}")
    return [pool.subset(np.sort(part)) for part in parts]


def client_update(global_params: np.ndarray, local: Dataset, arch: Architecture, cfg: TrainConfig,
                  priv: PrivacySpec | None = None, epoch_offset: int = 0,
                  stream: tuple[int, ...] = ()) -> tuple[np.ndarray, int]:
    """Train locally from ``global_params`` for ``cfg.epochs`` epochs.

    Raises :class:`ClientSkipped` for single-class local data.
    """
    global_params = np.asarray(global_params, dtype=np.float64)
    if global_params.size != arch.n_params(local.d):
        raise DataError("global parameter vector does not match local feature width")
    if not local.has_both_classes():
        raise ClientSkipped("local data contains a single class")
    if cfg.epochs == 0:
        return global_params.copy(), local.n
    if priv is None:
        model = train(local, arch, cfg, init=global_params, epoch_offset=epoch_offset)
    else:
        model, _ = dp_sgd_train(local, arch, cfg, priv, init=global_params, epoch_offset=epoch_offset,
                                stream=stream)
    return model.params, local.n


def server_aggregate(updates) -> np.ndarray:
    """Weighted mean of client parameter vectors with weights ``n_k / sum(n_k)``.

    ``updates`` is a sequence of ``(params, n_k)`` pairs or a mapping from
    client id to such a pair.  Each coordinate is summed with ``math.fsum``
    (exactly rounded), so the result does not depend on update order.
    """
    items = list(updates.values()) if isinstance(updates, Mapping) else list(updates)
    if not items:
        raise DataError("no client updates to aggregate (all clients skipped)")
    params = [np.asarray(p, dtype=np.float64) for p, _ in items]
    counts = [int(n) for _, n in items]
    if any(p.shape != params[0].shape for p in params):
        raise DataError("client parameter vectors differ in length")
    total = sum(counts)
    if total <= 0:
        raise DataError("client sample counts sum to zero")
    terms = np.stack([p * (n / total) for p, n in zip(params, counts)])
    return np.array([math.fsum(col) for col in terms.T])


def _checksum(params: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()[:16]


def _round_metrics(model: Model, ds: Dataset) -> dict:
    p = predict_proba(model, ds.features)
    out = {"accuracy": 1.0 - empirical_risk(ds.labels, p, "0-1"), "log_loss": empirical_risk(ds.labels, p, "log-loss")}
    out["auc"] = auc_score(ds.labels, p) if ds.has_both_classes() else None
    return out


def fedavg_run(pool: Dataset, fed: FederationConfig, arch: Architecture, cfg: TrainConfig,
               eval_ds: Dataset | None = None,
               clients: Sequence[Dataset] | None = None) -> tuple[Model, list[RoundRecord]]:
    """Run ``fed.rounds`` rounds of FedAvg and return the global model and round log.

    Clients train with ``fed.local_epochs`` epochs per round; their batch
    schedule continues across rounds (round ``r`` uses epochs
    ``r * local_epochs ...``), so a single client with full participation
    reproduces centralized training for ``rounds * local_epochs`` epochs.
    ``clients`` overrides the partition of ``pool``.
    """
    if clients is None:
        clients = partition_data(pool, fed.partition, fed.n_clients, fed.seed, fed.shards_per_client)
    elif len(clients) != fed.n_clients:
        raise DataError("number of client datasets does not match n_clients")
    eval_ds = eval_ds or pool
    local_cfg = replace(cfg, epochs=fed.local_epochs)
    params = init_params(arch, pool.d, cfg.seed)
    records = []
    for r in range(fed.rounds):
        rng = np.random.default_rng([fed.seed, r])
        selected = sorted(int(c) for c in rng.choice(fed.n_clients, fed.clients_per_round, replace=False))
        dropped = rng.random(len(selected)) < fed.dropout if fed.dropout else np.zeros(len(selected), bool)
        updates, counts, skipped = {}, {}, {}
        for cid, drop in zip(selected, dropped):
            if drop:
                skipped[cid] = "dropped out"
                continue
            try:
                updates[cid] = client_update(params, clients[cid], arch, local_cfg, fed.privacy,
                                             epoch_offset=r * fed.local_epochs, stream=(cid, r))
                counts[cid] = updates[cid][1]
            except ClientSkipped as exc:
                logger.info("round %d: client %d skipped: %s", r, cid, exc)
                skipped[cid] = str(exc)
        params = server_aggregate(updates)
        model = Model(arch.kind, pool.d, arch, params, feature_names=pool.feature_names)
        records.append(RoundRecord(r, selected, counts, skipped, _checksum(params), _round_metrics(model, eval_ds)))
    return Model(arch.kind, pool.d, arch, params, feature_names=pool.feature_names), records


def write_round_log(records: Sequence[RoundRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
