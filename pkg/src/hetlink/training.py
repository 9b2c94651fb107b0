"""Negative sampling, edge dropout, reconstruction loss, Adam and the training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autograd as ad
from .autograd import Tensor
from .graph import EdgeIndex, GraphError, HeteroGraph
from .models import EdgeScorer, ModelConfig, encode, init_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-4
    negative_ratio: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.negative_ratio < 1:
            raise ValueError("negative_ratio must be at least 1")

    @classmethod
    def table_defaults(cls, **overrides) -> "TrainConfig":
        """Alternative preset with the hyper-parameter table's learning rate of 0.01."""
        return cls(**{"learning_rate": 0.01, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a (seed, key...) coordinate."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys])


def sample_negatives(g: HeteroGraph, relation: str, k_per_positive: int, rng: np.random.Generator, *,
                     positives: EdgeIndex | None = None, exclude: EdgeIndex | None = None,
                     candidates: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt the destination of each positive ``k`` times.

    ``positives`` defaults to the relation's edges; ``exclude`` (default: the
    same edges) are never returned. ``candidates`` restricts the replacement
    destinations (default: every node of the destination type).
    """
    rel = g.relations[relation]
    if not rel.is_target:
        raise GraphError(f"{relation!r} is not a target relation")
    pos = g.edges[relation] if positives is None else positives
    excl = pos if exclude is None else exclude
    n_dst = g.num_nodes[rel.dst_type]
    cand = np.arange(n_dst) if candidates is None else np.asarray(candidates, dtype=np.int64)
    src = np.repeat(pos.src, k_per_positive)
    if len(src) == 0:
        return src, src.copy()
    if len(cand) == 0:
        raise GraphError(f"{relation!r}: no candidate destinations to sample from")
    is_cand = np.zeros(n_dst, dtype=bool)
    is_cand[cand] = True
    excl_keys = np.unique(excl.keys(n_dst))
    blocked = np.bincount(excl.src[is_cand[excl.dst]], minlength=g.num_nodes[rel.src_type])
    saturated = np.unique(src[blocked[src] >= len(cand)])
    if len(saturated):
        raise GraphError(f"{relation!r}: source node(s) {saturated[:5].tolist()} already link to every "
                         "candidate destination")
    dst = cand[rng.integers(len(cand), size=len(src))]
    for _ in range(64):
        bad = np.flatnonzero(np.isin(src * n_dst + dst, excl_keys))
        if not len(bad):
            return src, dst
        dst[bad] = cand[rng.integers(len(cand), size=len(bad))]
    # stubborn rows: draw from the explicit allowed set
    for i in np.flatnonzero(np.isin(src * n_dst + dst, excl_keys)):
        taken = excl.out_neighbors(src[i]) if excl.n_src > src[i] else np.zeros(0, np.int64)
        allowed = np.setdiff1d(cand, taken)
        dst[i] = allowed[rng.integers(len(allowed))]
    return src, dst


def edge_dropout(g: HeteroGraph, p: float, rng: np.random.Generator) -> HeteroGraph:
    """Drop each target edge with probability ``p``; reverse twins follow the same mask.

    Meta and other non-target relations are left untouched. ``g`` itself is
    not modified.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"edge dropout probability must lie in [0, 1], got {p}")
    if p == 0:
        return g
    changed = {}
    for r in g.target_relations:
        idx = g.edges[r]
        keep = rng.random(len(idx)) >= p
        kept = idx.select(keep)
        changed[r] = kept
        rev = g.reverse_of(r)
        if rev is not None:
            changed[rev] = kept.transpose(g.num_nodes[g.relations[r].dst_type])
    return g.with_edges(changed)


def bce_loss(pos_scores, neg_scores) -> Tensor:
    """Mean binary cross-entropy over positive and negative logits of one relation."""
    pos = pos_scores if isinstance(pos_scores, Tensor) else Tensor(np.reshape(pos_scores, (-1, 1)),
                                                                   dtype=np.float64)
    neg = neg_scores if isinstance(neg_scores, Tensor) else Tensor(np.reshape(neg_scores, (-1, 1)),
                                                                   dtype=np.float64)
    n = pos.data.size + neg.data.size
    if n == 0:
        raise ValueError("bce_loss needs at least one score")
    if not (np.all(np.isfinite(pos.data)) and np.all(np.isfinite(neg.data))):
        raise FloatingPointError("non-finite score")
    parts = []
    if pos.data.size:
        parts.append(ad.total(ad.softplus(ad.neg(pos))))
    if neg.data.size:
        parts.append(ad.total(ad.softplus(neg)))
    out = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return ad.scale(out, 1.0 / n)


def relation_averaged(losses: Mapping[str, Tensor]) -> Tensor:
    items = list(losses.values())
    out = items[0]
    for x in items[1:]:
        out = out + x
    return ad.scale(out, 1.0 / len(items))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> tuple[Mapping[str, Tensor], AdamState]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        p.data -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype)
    return params, state


def reconstruction_loss(g: HeteroGraph, model_cfg: ModelConfig, params: Mapping[str, Tensor],
                        train_cfg: TrainConfig, epoch: int) -> tuple[Tensor, dict[str, float]]:
    """Training objective of one epoch.

    Message passing runs on an edge-dropped view of ``g`` while positives are
    the full target edge sets of ``g``; negatives are resampled per epoch.
    """
    seed = train_cfg.seed
    view = edge_dropout(g, model_cfg.edge_dropout_p, stream(seed, epoch, 1))
    scorer = EdgeScorer(model_cfg, encode(view, model_cfg, params, training=True, rng=stream(seed, epoch, 2)))
    neg_rng = stream(seed, epoch, 3)
    losses = {}
    for r in g.target_relations:
        idx = g.edges[r]
        if not len(idx):
            continue
        rel = g.relations[r]
        n_src, n_dst = sample_negatives(g, r, train_cfg.negative_ratio, neg_rng)
        pos = scorer(rel.src_type, rel.dst_type, idx.src, idx.dst)
        neg = scorer(rel.src_type, rel.dst_type, n_src, n_dst)
        losses[r] = bce_loss(pos, neg)
    if not losses:
        raise GraphError("no target edges to train on")
    return relation_averaged(losses), {r: l.item() for r, l in losses.items()}


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    losses: list[float]
    relation_losses: list[dict[str, float]]


def train(g: HeteroGraph, model_cfg: ModelConfig, train_cfg: TrainConfig,
          params: dict[str, Tensor] | None = None, dtype=np.float32,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Full-batch training; deterministic for a fixed ``train_cfg.seed``."""
    if not g.target_relations or not any(len(g.edges[r]) for r in g.target_relations):
        raise GraphError("graph has no target edges")
    if params is None:
        params = init_params(g, model_cfg, stream(train_cfg.seed, 0xFFFF), dtype=dtype)
    state = AdamState()
    losses, per_relation = [], []
    for epoch in range(train_cfg.epochs):
        for p in params.values():
            p.grad = None
        loss, rel_losses = reconstruction_loss(g, model_cfg, params, train_cfg, epoch)
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError(f"loss became non-finite at epoch {epoch}")
        loss.backward()
        adam_step(params, {n: p.grad for n, p in params.items() if p.grad is not None}, state, train_cfg)
        losses.append(value)
        per_relation.append(rel_losses)
        if callback is not None:
            callback(epoch, value)
        logger.debug("epoch %d loss %.5f", epoch, value)
    return TrainResult(params, losses, per_relation)
