"""Communication rounds: selection, local training, FedAvg, optional FedTAD refinement, evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from fedtad.errors import ConfigError, FedTadError, NonFiniteError, ShapeError
from fedtad.graph import gcn_normalize
from fedtad.models import GcnModel, ModelWeights, gcn_forward, masked_cross_entropy
from fedtad.partition import ClientShard
from fedtad.reliability import knowledge_reliability, perturb_reliability
from fedtad.server import DistillConfig, FedTADServer
from fedtad.tensor import SGD, Adam, Tape

log = logging.getLogger(__name__)

AGGREGATORS = ("fedavg",)
POST_PROCESSORS = ("none", "fedtad")


@dataclass
class FedConfig:
    rounds: int = 100
    local_epochs: int = 3
    fraction: float = 1.0
    num_clients: int = 5
    seed: int = 0
    hidden: int = 64
    dropout: float = 0.5
    lr: float = 1e-2
    weight_decay: float = 5e-4
    optimizer: str = "adam"
    aggregator: str = "fedavg"
    post_processor: str = "none"
    distill: DistillConfig = field(default_factory=DistillConfig)
    split_ratios: tuple[float, float, float] = (0.2, 0.4, 0.4)
    walk_length: int = 5
    reliability_noise: float = 0.0
    workers: int = 1

    def validate(self) -> FedConfig:
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}; available: {AGGREGATORS}")
        if self.post_processor not in POST_PROCESSORS:
            raise ConfigError(f"unknown post_processor {self.post_processor!r}; available: {POST_PROCESSORS}")
        if len(self.split_ratios) != 3 or min(self.split_ratios) < 0:
            raise ConfigError("split_ratios must be three nonnegative numbers")
        if self.walk_length < 1:
            raise ConfigError("walk_length must be >= 1")
        if self.reliability_noise < 0:
            raise ConfigError("reliability_noise must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.distill.validate()
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["split_ratios"] = list(self.split_ratios)
        return out


@dataclass
class RoundRecord:
    round: int
    selected: list[int]
    global_test_acc: float
    local_val_acc: dict[int, float]
    seconds: float

    @property
    def mean_local_val_acc(self) -> float:
        values = [v for v in self.local_val_acc.values() if not math.isnan(v)]
        return float(np.mean(values)) if values else float("nan")


@dataclass
class FederationResult:
    records: list[RoundRecord]
    weights: ModelWeights
    reliabilities: np.ndarray
    server: FedTADServer | None = None

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].global_test_acc

    @property
    def best_accuracy(self) -> float:
        return max(r.global_test_acc for r in self.records)


def select_clients(K: int, fraction: float, round_idx: int, seed: int = 0) -> list[int]:
    """Uniform sample of ceil(fraction * K) clients, sorted, fixed per (seed, round)."""
    m = math.ceil(fraction * K - 1e-12)
    if m < 1:
        raise ConfigError(f"fraction {fraction} selects no client out of {K}")
    if m >= K:
        return list(range(K))
    rng = np.random.default_rng([seed, round_idx, 1])
    return sorted(int(k) for k in rng.choice(K, size=m, replace=False))


def fedavg_aggregate(weights_list: Sequence[ModelWeights], node_counts: Sequence[int]) -> ModelWeights:
    """Node-count-weighted average, summed in list order.

    Computed as w_0 + sum_k c_k (w_k - w_0), which equals sum_k c_k w_k because
    the coefficients sum to one, and returns w_0 exactly when all inputs agree.
    """
    if not weights_list:
        raise ValueError("fedavg_aggregate needs at least one model")
    if len(weights_list) != len(node_counts):
        raise ValueError("one node count per model is required")
    ref = weights_list[0]
    for w in weights_list[1:]:
        for (name, a), (other_name, b) in zip(ref, w):
            if name != other_name or a.shape != b.shape:
                raise ShapeError(f"fedavg_aggregate (tensor {other_name!r})", a.shape, b.shape)
        if len(w) != len(ref):
            raise ShapeError("fedavg_aggregate (tensor count)", (len(ref),), (len(w),))
    coef = aggregation_coefficients(node_counts)
    items = []
    for i, (name, base) in enumerate(ref):
        acc = base.copy()
        for c, w in zip(coef, weights_list):
            acc += c * (w.arrays[i] - base)
        items.append((name, acc))
    return ModelWeights(items)


def aggregation_coefficients(node_counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(node_counts, dtype=np.float64)
    if (counts < 0).any() or counts.sum() <= 0:
        raise ValueError("node counts must be nonnegative with a positive total")
    return counts / counts.sum()


class Client:
    """A simulated client: its shard, cached normalized adjacency and optimizer state."""

    def __init__(self, shard: ClientShard, cfg: FedConfig):
        self.shard = shard
        self.cfg = cfg
        self.norm_adj = gcn_normalize(shard.graph)
        self.model: GcnModel | None = None
        self.optimizer = None
        self.epochs_done = 0

    @property
    def client_id(self) -> int:
        return self.shard.client_id

    def _ensure_model(self, weights: ModelWeights) -> GcnModel:
        if self.model is None:
            self.model = GcnModel.from_weights(weights, dropout=self.cfg.dropout)
            if self.cfg.optimizer == "adam":
                self.optimizer = Adam(self.model.parameters(), self.cfg.lr, self.cfg.weight_decay)
            else:
                self.optimizer = SGD(self.model.parameters(), self.cfg.lr, self.cfg.weight_decay)
        else:
            self.model.load_weights(weights)
        return self.model

    def local_update(self, global_weights: ModelWeights, epochs: int | None = None,
                     losses: list | None = None) -> ModelWeights:
        """Train a copy of ``global_weights`` for full-batch epochs on the training mask."""
        epochs = self.cfg.local_epochs if epochs is None else epochs
        model = self._ensure_model(global_weights)
        g = self.shard.graph
        for _ in range(epochs):
            rng = np.random.default_rng([self.cfg.seed, self.client_id, self.epochs_done, 2])
            with Tape() as tape:
                logits = gcn_forward(model, self.norm_adj, g.features, train_mode=True, rng=rng)
                try:
                    loss = masked_cross_entropy(logits, g.labels, self.shard.train)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"client {self.client_id}: {exc}") from exc
            tape.backward(loss)
            self.optimizer.step()
            self.epochs_done += 1
            if losses is not None:
                losses.append(loss.item())
        return model.weights()

    def evaluate(self, weights: ModelWeights, split: str = "test") -> tuple[int, int]:
        """(correct, total) of ``weights`` on this client's ``split`` mask."""
        mask = getattr(self.shard, split)
        if len(mask) == 0:
            return 0, 0
        logits = gcn_forward(GcnModel.from_weights(weights, trainable=False), self.norm_adj,
                             self.shard.graph.features)
        pred = logits.data[mask].argmax(axis=1)
        return int(np.sum(pred == self.shard.graph.labels[mask])), len(mask)


def local_update(shard: ClientShard, global_weights: ModelWeights, epochs: int,
                 cfg: FedConfig | None = None) -> ModelWeights:
    """Stateless variant: fresh optimizer, returns trained weights, leaves the input untouched."""
    return Client(shard, cfg or FedConfig()).local_update(global_weights.copy(), epochs)


def global_test_accuracy(clients: Sequence[Client], weights: ModelWeights) -> float:
    """Accuracy over the union of every client's test mask, each on its own subgraph."""
    correct = total = 0
    for client in clients:
        c, t = client.evaluate(weights, "test")
        correct += c
        total += t
    return correct / total if total else float("nan")


def client_reliabilities(shards: Sequence[ClientShard], cfg: FedConfig) -> np.ndarray:
    phis = []
    for shard in shards:
        phi = shard.reliability if shard.reliability is not None else knowledge_reliability(shard, cfg.walk_length)
        if cfg.reliability_noise > 0:
            phi = perturb_reliability(phi, cfg.reliability_noise, np.random.default_rng([cfg.seed, shard.client_id, 3]))
        phis.append(phi)
    return np.vstack(phis)


def init_global(shards: Sequence[ClientShard], cfg: FedConfig) -> ModelWeights:
    g = shards[0].graph
    return GcnModel.init(g.feature_dim, cfg.hidden, g.num_classes, cfg.dropout, seed=cfg.seed).weights()


def run_federation(shards: Sequence[ClientShard], cfg: FedConfig,
                   on_round: Callable[[RoundRecord], None] | None = None) -> FederationResult:
    if not shards:
        raise ValueError("run_federation needs at least one shard")
    cfg.validate()
    clients = [Client(s, cfg) for s in shards]
    K = len(clients)
    phis = client_reliabilities(shards, cfg)
    g0 = shards[0].graph
    server = None
    if cfg.post_processor == "fedtad":
        server = FedTADServer(g0.feature_dim, g0.num_classes, cfg.distill, seed=cfg.seed)
    weights = init_global(shards, cfg)
    records = []
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for t in range(cfg.rounds):
            start = time.perf_counter()
            selected = select_clients(K, cfg.fraction, t, cfg.seed)
            try:
                jobs = [(clients[k], weights.copy()) for k in selected]
                if pool is not None:
                    local = list(pool.map(lambda job: job[0].local_update(job[1]), jobs))
                else:
                    local = [c.local_update(w) for c, w in jobs]
                val = {k: _ratio(clients[k].evaluate(w, "val")) for k, w in zip(selected, local)}
                weights = fedavg_aggregate(local, [clients[k].shard.num_nodes for k in selected])
                if server is not None:
                    weights = server.refine(weights, local, phis[selected], round_idx=t)
                acc = global_test_accuracy(clients, weights)
            except FedTadError as exc:
                raise type(exc)(f"round {t}: {exc}") from exc
            record = RoundRecord(t, list(selected), acc, val, time.perf_counter() - start)
            records.append(record)
            log.info("round %3d  acc %.4f  val %.4f  %.2fs", t, acc, record.mean_local_val_acc, record.seconds)
            if on_round is not None:
                on_round(record)
    finally:
        if pool is not None:
            pool.shutdown()
    return FederationResult(records, weights, phis, server)


def _ratio(pair: tuple[int, int]) -> float:
    correct, total = pair
    return correct / total if total else float("nan")


def train_centralized(shard: ClientShard, cfg: FedConfig) -> tuple[ModelWeights, float]:
    """Train one model on one shard for rounds * local_epochs epochs; returns weights and test accuracy."""
    cfg.validate()
    client = Client(shard, cfg)
    weights = init_global([shard], cfg)
    weights = client.local_update(weights, cfg.rounds * cfg.local_epochs)
    return weights, _ratio(client.evaluate(weights, "test"))


def write_metrics(records: Sequence[RoundRecord], path, include_time: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["round", "global_test_acc", "mean_local_val_acc"]
        writer.writerow(header + (["seconds"] if include_time else []))
        for r in records:
            row = [r.round, f"{r.global_test_acc:.6f}", f"{r.mean_local_val_acc:.6f}"]
            writer.writerow(row + ([f"{r.seconds:.3f}"] if include_time else []))
