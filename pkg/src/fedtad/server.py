"""Server-side refinement of the aggregated model by topology-aware data-free distillation.

Each outer iteration samples one batch of noise and labels, builds a top-k
pseudo graph from the generated features, then alternates generator ascent
steps and global-model descent steps on the reliability-weighted losses.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from fedtad.errors import ConfigError, NonFiniteError
from fedtad.graph import normalize_adjacency
from fedtad.models import (GcnModel, GeneratorModel, ModelWeights, diversity_loss, gcn_forward,
                           knn_adjacency, sample_noise, weighted_nll_sum)
from fedtad.tensor import Adam, Tape, Tensor, add, clamp_min, log_softmax, mul, row_kl, scale, total

log = logging.getLogger(__name__)

LOG_Q_FLOOR = float(np.log(1e-12))


@dataclass
class DistillConfig:
    lambda1: float = 1e-1
    lambda2: float = 1e-1
    iterations: int = 10
    gen_steps: int = 3
    distill_steps: int = 5
    num_pseudo: int | None = None
    knn_k: int = 5
    gen_lr: float = 1e-3
    distill_lr: float = 1e-3
    noise_dim: int = 32
    gen_hidden: int = 256

    def validate(self, allow_zero_iterations: bool = False) -> DistillConfig:
        floor = 0 if allow_zero_iterations else 1
        if self.iterations < floor:
            raise ConfigError(f"distill.iterations must be >= {floor}")
        for name in ("gen_steps", "distill_steps", "knn_k", "noise_dim", "gen_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"distill.{name} must be >= 1")
        if self.num_pseudo is not None and self.num_pseudo < 2:
            raise ConfigError("distill.num_pseudo must be >= 2")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("distill.lambda1 and distill.lambda2 must be >= 0")
        if self.gen_lr < 0 or self.distill_lr < 0:
            raise ConfigError("learning rates must be >= 0")
        return self

    def pseudo_count(self, num_classes: int) -> int:
        return self.num_pseudo if self.num_pseudo is not None else 4 * num_classes

    def to_dict(self) -> dict:
        return asdict(self)


def reliability_weights(phis) -> np.ndarray:
    """rho[k, c] = phi_k[c] / sum_j phi_j[c]; classes nobody vouches for get all-zero columns."""
    phi = np.asarray(phis, dtype=np.float64)
    if phi.ndim != 2:
        raise ValueError(f"expected a (clients, classes) matrix, got shape {phi.shape}")
    totals = phi.sum(axis=0)
    return np.divide(phi, totals, out=np.zeros_like(phi), where=totals > 0)


@dataclass(eq=False)
class PseudoGraph:
    features: Tensor
    labels: np.ndarray
    adj: sp.csr_matrix
    norm_adj: sp.csr_matrix

    @property
    def size(self) -> int:
        return len(self.labels)


def pseudo_graph(features: Tensor, labels, k: int, adj: sp.spmatrix | None = None) -> PseudoGraph:
    if adj is None:
        adj = knn_adjacency(features, k)
    return PseudoGraph(features, np.asarray(labels), sp.csr_matrix(adj), normalize_adjacency(adj))


def semantic_loss(locals_: Sequence[GcnModel], rho: np.ndarray, pg: PseudoGraph) -> Tensor:
    """Reliability-weighted cross-entropy of every frozen local model on the pseudo nodes."""
    terms = []
    for k, model in enumerate(locals_):
        logits = gcn_forward(model.frozen(), pg.norm_adj, pg.features)
        terms.append(weighted_nll_sum(logits, pg.labels, rho[k][pg.labels]))
    return _sum(terms)


def divergence_loss(global_model: GcnModel, locals_: Sequence[GcnModel], rho: np.ndarray,
                    pg: PseudoGraph, freeze_global: bool = False) -> Tensor:
    """Reliability-weighted KL(global || local_k) summed over clients and pseudo nodes."""
    g_model = global_model.frozen() if freeze_global else global_model
    g_logits = gcn_forward(g_model, pg.norm_adj, pg.features)
    terms = []
    for k, model in enumerate(locals_):
        log_q = clamp_min(log_softmax(gcn_forward(model.frozen(), pg.norm_adj, pg.features)), LOG_Q_FLOOR)
        terms.append(total(mul(row_kl(g_logits, log_q), Tensor(rho[k][pg.labels]))))
    return _sum(terms)


def kl_divergence(p, q, floor: float = 1e-12) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), floor)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def _sum(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


class FedTADServer:
    """Owns the generator and its optimizer state across communication rounds."""

    def __init__(self, feature_dim: int, num_classes: int, cfg: DistillConfig | None = None,
                 seed: int = 0, allow_zero_iterations: bool = False):
        self.cfg = (cfg or DistillConfig()).validate(allow_zero_iterations)
        self.num_classes = num_classes
        self.generator = GeneratorModel.init(feature_dim, num_classes, self.cfg.noise_dim,
                                             self.cfg.gen_hidden, seed=seed)
        self.gen_opt = Adam(self.generator.parameters(), lr=self.cfg.gen_lr)
        self.rng = np.random.default_rng([seed, 7919])
        self.trace: list[dict] = []

    def generator_objective(self, global_model: GcnModel, locals_: Sequence[GcnModel], rho: np.ndarray,
                            pg: PseudoGraph) -> tuple[Tensor, dict]:
        """Loss the generator descends: -(L_diverg - lambda1 L_sem - lambda2 L_div)."""
        l_div = divergence_loss(global_model, locals_, rho, pg, freeze_global=True)
        l_sem = semantic_loss(locals_, rho, pg)
        l_dv = diversity_loss(pg.features)
        loss = add(add(scale(l_div, -1.0), scale(l_sem, self.cfg.lambda1)), scale(l_dv, self.cfg.lambda2))
        return loss, {"sem": l_sem.item(), "div": l_dv.item(), "diverg": l_div.item()}

    def refine(self, global_weights: ModelWeights, local_weights: Sequence[ModelWeights], phis,
               round_idx: int = 0) -> ModelWeights:
        cfg = self.cfg
        if cfg.iterations == 0:
            return global_weights.copy()
        rho = reliability_weights(phis)
        locals_ = [GcnModel.from_weights(w, trainable=False) for w in local_weights]
        global_model = GcnModel.from_weights(global_weights, trainable=True)
        distill_opt = Adam(global_model.parameters(), lr=cfg.distill_lr)
        B = cfg.pseudo_count(self.num_classes)
        gen = self.generator

        for it in range(cfg.iterations):
            z, y = sample_noise(gen, B, self.rng)
            adj = knn_adjacency(gen.forward(z, y), cfg.knn_k)
            terms = {}
            for _ in range(cfg.gen_steps):
                with Tape() as tape:
                    pg = pseudo_graph(gen.forward(z, y), y, cfg.knn_k, adj)
                    loss, terms = self._guard(lambda: self.generator_objective(global_model, locals_, rho, pg),
                                              round_idx, it, "generator")
                tape.backward(loss)
                self.gen_opt.step()

            pg = pseudo_graph(Tensor(gen.forward(z, y).data), y, cfg.knn_k, adj)
            for _ in range(cfg.distill_steps):
                with Tape() as tape:
                    loss = self._guard(lambda: divergence_loss(global_model, locals_, rho, pg),
                                       round_idx, it, "distill")
                tape.backward(loss)
                distill_opt.step()
            terms["diverg_after"] = loss.item()
            self.trace.append({"round": round_idx, "iteration": it, **terms})
            log.debug("round %d iter %d %s", round_idx, it, terms)
        return global_model.weights()

    @staticmethod
    def _guard(fn, round_idx, it, stage):
        try:
            result = fn()
        except NonFiniteError as exc:
            raise NonFiniteError(f"round {round_idx}, iteration {it}, {stage} stage: {exc}") from exc
        loss = result[0] if isinstance(result, tuple) else result
        if not np.isfinite(loss.item()):
            raise NonFiniteError(f"round {round_idx}, iteration {it}, {stage} stage: non-finite loss {result}")
        return result

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "iteration", "L_sem", "L_div", "L_diverg"])
            for row in self.trace:
                writer.writerow([row["round"], row["iteration"], repr(row.get("sem", float("nan"))),
                                 repr(row.get("div", float("nan"))), repr(row.get("diverg", float("nan")))])


def fedtad_refine(global_weights: ModelWeights, local_weights: Sequence[ModelWeights], phis,
                  cfg: DistillConfig | None = None, seed: int = 0, feature_dim: int | None = None,
                  num_classes: int | None = None) -> ModelWeights:
    """One-shot refinement with a fresh generator."""
    F, C = global_weights["W1"].shape[0], global_weights["W2"].shape[1]
    server = FedTADServer(feature_dim or F, num_classes or C, cfg, seed, allow_zero_iterations=True)
    return server.refine(global_weights, local_weights, phis)
