"""Graph encoders, asymmetric inner-product decoders and the feature-only scorer."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import autograd as ad
from .autograd import Tensor
from .graph import HeteroGraph, HomoGraph, homogenize

ENCODERS = ("gcn", "rgcn", "hge", "sage")
HOMOGENEOUS = ("gcn", "sage")


@dataclass(frozen=True)
class ModelConfig:
    layer_sizes: tuple[int, ...] = (256, 256, 256)
    use_residual: bool = True
    concat_all: bool = True
    interleave_decoder: bool = True
    edge_dropout_p: float = 0.5
    feature_dropout_p: float = 0.2
    encoder_kind: str = "hge"
    activation: str = "relu"
    # False: feature dropout on the projected input only
    dropout_every_layer: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if not self.layer_sizes:
            raise ValueError("at least one layer is required")
        if any(s <= 0 or s % 2 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive and even, got {self.layer_sizes}")
        if self.encoder_kind not in ENCODERS:
            raise ValueError(f"encoder_kind must be one of {ENCODERS}, got {self.encoder_kind!r}")
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"activation must be 'relu' or 'linear', got {self.activation!r}")
        if not 0 <= self.feature_dropout_p < 1:
            raise ValueError("feature_dropout_p must lie in [0, 1)")
        if not 0 <= self.edge_dropout_p <= 1:
            raise ValueError("edge_dropout_p must lie in [0, 1]")

    @property
    def output_dim(self) -> int:
        if self.concat_all:
            return self.layer_sizes[0] + sum(self.layer_sizes)
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype, gain: float = 1.0) -> Tensor:
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, dtype=dtype)


def _layer_inputs(cfg: ModelConfig) -> list[int]:
    return [cfg.layer_sizes[0]] + list(cfg.layer_sizes[:-1])


def init_params(g: HeteroGraph, cfg: ModelConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, Tensor]:
    """Glorot-initialised weights for every relation and node type of ``g``."""
    params: dict[str, Tensor] = {}
    size0 = cfg.layer_sizes[0]
    if cfg.encoder_kind in HOMOGENEOUS:
        width = max((g.feature_dim(t) for t in g.node_types), default=0) + len(g.node_types)
        params["proj"] = _glorot(rng, width, size0, dtype)
        for l, (d_in, d_out) in enumerate(zip(_layer_inputs(cfg), cfg.layer_sizes)):
            fan_in = 2 * d_in if cfg.encoder_kind == "sage" else d_in
            params[f"layer{l}.weight"] = _glorot(rng, fan_in, d_out, dtype)
        return params
    for t in g.node_types:
        if t in g.features:
            params[f"proj.{t}"] = _glorot(rng, g.feature_dim(t), size0, dtype)
        else:
            params[f"emb.{t}"] = _glorot(rng, 1, size0, dtype)
    # a node sums one self term plus one message per incoming relation; split
    # the variance budget between them so depth does not inflate activations
    terms = {t: 1 + sum(rel.dst_type == t for rel in g.relations.values()) for t in g.node_types}
    shared_gain = 1 / np.sqrt(max(terms.values(), default=1))
    for l, (d_in, d_out) in enumerate(zip(_layer_inputs(cfg), cfg.layer_sizes)):
        if cfg.encoder_kind == "rgcn":
            params[f"layer{l}.self"] = _glorot(rng, d_in, d_out, dtype, shared_gain)
        else:
            for t in g.node_types:
                params[f"layer{l}.self.{t}"] = _glorot(rng, d_in, d_out, dtype, 1 / np.sqrt(terms[t]))
        for r, rel in g.relations.items():
            params[f"layer{l}.rel.{r}"] = _glorot(rng, d_in, d_out, dtype, 1 / np.sqrt(terms[rel.dst_type]))
    return params


def _param(params: Mapping[str, Tensor], key: str) -> Tensor:
    try:
        return params[key]
    except KeyError:
        raise KeyError(f"model has no parameter {key!r}; was it trained on this schema?") from None


def _activate(cfg: ModelConfig, z: Tensor, last: bool) -> Tensor:
    if last or cfg.activation == "linear":
        return z
    return ad.relu(z)


def relational_conv_forward(g: HeteroGraph, H: Mapping[str, Tensor], params: Mapping[str, Tensor],
                            layer: int, cfg: ModelConfig, last: bool = False,
                            adjacency: Mapping[str, sp.csr_matrix] | None = None) -> dict[str, Tensor]:
    """One relational convolution with a per-type self-loop.

    ``H'_t = act(sum_{r: dst(r)=t} mean_r(H_src(r)) W_r + H_t W_self^t)``.
    With ``encoder_kind='rgcn'`` a single self-loop weight is shared by all types.
    """
    for t, n in g.num_nodes.items():
        if H[t].shape[0] != n:
            raise ValueError(f"{t!r}: {H[t].shape[0]} representation rows for {n} nodes")
    if adjacency is None:
        adjacency = relation_adjacency(g, H[g.node_types[0]].dtype if g.node_types else None)
    out = {}
    for t in g.node_types:
        key = f"layer{layer}.self" if cfg.encoder_kind == "rgcn" else f"layer{layer}.self.{t}"
        z = H[t] @ _param(params, key)
        for r, rel in g.relations.items():
            if rel.dst_type != t or r not in adjacency:
                continue
            z = z + ad.spmm(adjacency[r], H[rel.src_type]) @ _param(params, f"layer{layer}.rel.{r}")
        out[t] = _activate(cfg, z, last)
    return out


def relation_adjacency(g: HeteroGraph, dtype=None) -> dict[str, sp.csr_matrix]:
    """Mean-aggregation matrix per non-empty relation."""
    out = {}
    for r, rel in g.relations.items():
        idx = g.edges[r]
        if len(idx):
            out[r] = ad.mean_adjacency(idx.src, idx.dst, g.num_nodes[rel.src_type],
                                       g.num_nodes[rel.dst_type], dtype)
    return out


def gcn_adjacency(h: HomoGraph, dtype=None) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` for the symmetric homogeneous graph."""
    off = h.src != h.dst
    n = h.num_nodes
    a = sp.csr_matrix((np.ones(int(off.sum())), (h.dst[off], h.src[off])), shape=(n, n))
    a = a + sp.identity(n, format="csr")
    d = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).reshape(-1))
    return (sp.diags(d) @ a @ sp.diags(d)).tocsr().astype(dtype or ad.default_dtype())


def gcn_conv_forward(h: HomoGraph, H: Tensor, weight: Tensor, cfg: ModelConfig, last: bool = False,
                     norm_adj: sp.csr_matrix | None = None) -> Tensor:
    if H.shape[0] != h.num_nodes:
        raise ValueError(f"{H.shape[0]} rows for {h.num_nodes} nodes")
    if norm_adj is None:
        norm_adj = gcn_adjacency(h, H.dtype)
    return _activate(cfg, ad.spmm(norm_adj, H) @ weight, last)


def sage_mean_layer_forward(h: HomoGraph, H: Tensor, weight: Tensor, cfg: ModelConfig, last: bool = False,
                            mean_adj: sp.csr_matrix | None = None) -> Tensor:
    """``act([H || mean_neighbors(H)] W)``."""
    if H.shape[0] != h.num_nodes:
        raise ValueError(f"{H.shape[0]} rows for {h.num_nodes} nodes")
    if mean_adj is None:
        mean_adj = ad.mean_adjacency(h.src, h.dst, h.num_nodes, h.num_nodes, H.dtype)
    return _activate(cfg, ad.concat_cols([H, ad.spmm(mean_adj, H)]) @ weight, last)


def _maybe_dropout(H: Tensor, cfg: ModelConfig, layer: int, training: bool, rng) -> Tensor:
    if not training or (layer > 0 and not cfg.dropout_every_layer):
        return H
    return ad.dropout(H, cfg.feature_dropout_p, training, rng)


def encode(g: HeteroGraph, cfg: ModelConfig, params: Mapping[str, Tensor], training: bool = False,
           rng: np.random.Generator | None = None) -> dict[str, Tensor]:
    """Per-type node representations.

    Input projection to ``layer_sizes[0]``, then one convolution per layer with
    feature dropout in front of it (training only), an additive residual when
    widths match, and optionally the column-concatenation of every level
    (projected input included) as the final representation.
    """
    if training and rng is None:
        raise ValueError("training mode needs an rng")
    if cfg.encoder_kind in HOMOGENEOUS:
        return _encode_homogeneous(g, cfg, params, training, rng)
    dtype = next(iter(params.values())).dtype
    H = {}
    for t in g.node_types:
        if t in g.features:
            H[t] = Tensor(g.features[t], dtype=dtype) @ _param(params, f"proj.{t}")
        else:
            H[t] = ad.gather_rows(_param(params, f"emb.{t}"), np.zeros(g.num_nodes[t], dtype=np.int64))
    adjacency = relation_adjacency(g, dtype)
    levels = {t: [H[t]] for t in g.node_types}
    n_layers = len(cfg.layer_sizes)
    for l in range(n_layers):
        inputs = {t: _maybe_dropout(H[t], cfg, l, training, rng) for t in g.node_types}
        out = relational_conv_forward(g, inputs, params, l, cfg, last=l == n_layers - 1, adjacency=adjacency)
        for t in g.node_types:
            if cfg.use_residual and out[t].shape[1] == H[t].shape[1]:
                out[t] = out[t] + H[t]
            levels[t].append(out[t])
        H = out
    if cfg.concat_all:
        return {t: ad.concat_cols(levels[t]) for t in g.node_types}
    return H


def _encode_homogeneous(g: HeteroGraph, cfg: ModelConfig, params: Mapping[str, Tensor], training: bool,
                        rng) -> dict[str, Tensor]:
    proj = _param(params, "proj")
    dtype = proj.dtype
    h = homogenize(g, dtype=dtype)
    if h.features.shape[1] != proj.shape[0]:
        raise ValueError(f"unified feature width {h.features.shape[1]} does not match "
                         f"trained width {proj.shape[0]}")
    if cfg.encoder_kind == "gcn":
        adj = gcn_adjacency(h, dtype)
    else:
        adj = ad.mean_adjacency(h.src, h.dst, h.num_nodes, h.num_nodes, dtype)
    H = Tensor(h.features, dtype=dtype) @ proj
    levels = [H]
    n_layers = len(cfg.layer_sizes)
    for l in range(n_layers):
        x = _maybe_dropout(H, cfg, l, training, rng)
        w = _param(params, f"layer{l}.weight")
        last = l == n_layers - 1
        if cfg.encoder_kind == "gcn":
            out = gcn_conv_forward(h, x, w, cfg, last, norm_adj=adj)
        else:
            out = sage_mean_layer_forward(h, x, w, cfg, last, mean_adj=adj)
        if cfg.use_residual and out.shape[1] == H.shape[1]:
            out = out + H
        levels.append(out)
        H = out
    rep = ad.concat_cols(levels) if cfg.concat_all else H
    return {t: ad.gather_rows(rep, h.rows(t, g.num_nodes[t])) for t in g.node_types}


def _pair_tensors(h_src, h_dst) -> tuple[Tensor, Tensor]:
    h_src = h_src if isinstance(h_src, Tensor) else Tensor(np.atleast_2d(h_src), dtype=np.float64)
    h_dst = h_dst if isinstance(h_dst, Tensor) else Tensor(np.atleast_2d(h_dst), dtype=np.float64)
    if h_src.shape != h_dst.shape:
        raise ValueError(f"representation shapes differ: {h_src.shape} vs {h_dst.shape}")
    if h_src.shape[1] % 2:
        raise ValueError(f"decoder needs an even representation width, got {h_src.shape[1]}")
    return h_src, h_dst


def source_part(cfg: ModelConfig, h: Tensor) -> Tensor:
    """Entries of a representation that act as the source side of a link."""
    d = h.shape[1]
    return ad.slice_cols(h, 0, None, 2) if cfg.interleave_decoder else ad.slice_cols(h, 0, d // 2)


def target_part(cfg: ModelConfig, h: Tensor) -> Tensor:
    d = h.shape[1]
    return ad.slice_cols(h, 1, None, 2) if cfg.interleave_decoder else ad.slice_cols(h, d // 2, d)


def decode_block(h_src, h_dst) -> Tensor:
    """Score = first half of the source row . second half of the destination row."""
    h_src, h_dst = _pair_tensors(h_src, h_dst)
    cfg = _BLOCK
    return ad.row_sum(source_part(cfg, h_src) * target_part(cfg, h_dst))


def decode_interleave(h_src, h_dst) -> Tensor:
    """Score = even entries of the source row . odd entries of the destination row."""
    h_src, h_dst = _pair_tensors(h_src, h_dst)
    cfg = _INTERLEAVE
    return ad.row_sum(source_part(cfg, h_src) * target_part(cfg, h_dst))


_BLOCK = ModelConfig(layer_sizes=(2,), interleave_decoder=False)
_INTERLEAVE = ModelConfig(layer_sizes=(2,), interleave_decoder=True)


def decode(cfg: ModelConfig, h_src, h_dst) -> Tensor:
    return decode_interleave(h_src, h_dst) if cfg.interleave_decoder else decode_block(h_src, h_dst)


class EdgeScorer:
    """Scores node pairs from per-type representations.

    Source and target parts are extracted once per node type and cached, so
    scoring many pairs costs one row gather and a row-wise dot product.
    """

    def __init__(self, cfg: ModelConfig, reps: Mapping[str, Tensor]):
        for t, h in reps.items():
            if h.shape[1] % 2:
                raise ValueError(f"decoder needs an even representation width, got {h.shape[1]} for {t!r}")
        self.cfg = cfg
        self.reps = reps
        self._src: dict[str, Tensor] = {}
        self._dst: dict[str, Tensor] = {}

    def __call__(self, src_type: str, dst_type: str, src, dst) -> Tensor:
        if src_type not in self._src:
            self._src[src_type] = source_part(self.cfg, self.reps[src_type])
        if dst_type not in self._dst:
            self._dst[dst_type] = target_part(self.cfg, self.reps[dst_type])
        return ad.row_sum(ad.gather_rows(self._src[src_type], src) * ad.gather_rows(self._dst[dst_type], dst))


def score_edges(cfg: ModelConfig, reps: Mapping[str, Tensor], src_type: str, dst_type: str,
                src, dst) -> Tensor:
    """Logit per ``(src, dst)`` pair, shape ``(m, 1)``."""
    return EdgeScorer(cfg, reps)(src_type, dst_type, src, dst)


def sgd_baseline_score(g: HeteroGraph, relation: str, src, dst, coef: np.ndarray,
                       intercept: float) -> np.ndarray:
    """Logistic score on ``[x_src || x_dst]`` with one linear model per relation."""
    rel = g.relations[relation]
    for t in (rel.src_type, rel.dst_type):
        if t not in g.features:
            raise ValueError(f"node type {t!r} has no features; the feature-only baseline cannot score it")
    x = pair_features(g, relation, src, dst)
    z = x @ np.asarray(coef, dtype=np.float64).reshape(-1) + intercept
    return ad._sigmoid(z.astype(np.float64))


def pair_features(g: HeteroGraph, relation: str, src, dst) -> np.ndarray:
    rel = g.relations[relation]
    xs = np.asarray(g.features[rel.src_type], dtype=np.float64)[np.asarray(src, dtype=np.int64)]
    xd = np.asarray(g.features[rel.dst_type], dtype=np.float64)[np.asarray(dst, dtype=np.int64)]
    return np.concatenate([xs, xd], axis=1)
