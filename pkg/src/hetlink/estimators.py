"""Scikit-learn style link predictors.

All estimators share one protocol: ``fit(graph)`` trains on the target
relations of a :class:`~hetlink.graph.HeteroGraph`, ``transform(graph)``
returns per-type node representations and
``decision_function(graph, relation, src, dst)`` scores node pairs (higher
means more likely linked). ``get_params``/``set_params``/``clone`` come from
:class:`sklearn.base.BaseEstimator`.
"""

from __future__ import annotations

import copy
import logging
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.linear_model import SGDClassifier
from sklearn.utils.validation import check_is_fitted

from .autograd import Tensor
from .enrichment import enrich, plan_enrichment
from .graph import DimensionError, GraphError, HeteroGraph, add_reverse_relations, check_graph, reverse_name
from .models import HOMOGENEOUS, EdgeScorer, ModelConfig, encode, pair_features
from .training import TrainConfig, sample_negatives, stream, train

logger = logging.getLogger(__name__)


def check_pairs(graph: HeteroGraph, relation: str, src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Validate a batch of ``(src, dst)`` node pairs for ``relation``."""
    if relation not in graph.relations:
        raise GraphError(f"unknown relation {relation!r}; graph has {sorted(graph.relations)}")
    rel = graph.relations[relation]
    src = np.asarray(src, dtype=np.int64).reshape(-1)
    dst = np.asarray(dst, dtype=np.int64).reshape(-1)
    if src.shape != dst.shape:
        raise ValueError(f"{len(src)} sources but {len(dst)} destinations")
    for name, idx, t in (("source", src, rel.src_type), ("destination", dst, rel.dst_type)):
        if len(idx) and (idx.min() < 0 or idx.max() >= graph.num_nodes[t]):
            raise IndexError(f"{name} index out of range for {graph.num_nodes[t]} {t!r} nodes")
    return src, dst


class GraphLinkPredictor(BaseEstimator):
    """Graph encoder with an asymmetric inner-product decoder.

    The defaults give the robust enriched model: relational convolution with
    per-type self-loops, residuals, 50% edge dropout on target relations,
    concatenation of all layer outputs and the interleaved decoder. The
    encoder can be switched to ``'rgcn'``, ``'gcn'`` or ``'sage'``.

    Parameters
    ----------
    encoder : {'hge', 'rgcn', 'gcn', 'sage'}
    layer_sizes : tuple of int
        Width of the input projection and of every convolution layer.
    use_residual, concat_all, interleave_decoder : bool
        Architecture toggles.
    edge_dropout, feature_dropout : float
        Drop probabilities during training.
    epochs, learning_rate, negative_ratio :
        Optimisation settings (full-batch Adam).
    enrich : bool
        Inject meta-nodes for categorical attributes before training.
    enrichment_attributes : list of (node_type, attribute), optional
        Attributes to enrich; defaults to all known categorical ones present.
    add_reverse : bool or list of str
        Mirror every forward relation (``True``) or only the named ones so
        messages flow both ways.
    random_state : int
    """

    def __init__(self, encoder="hge", layer_sizes=(256, 256, 256), use_residual=True, concat_all=True,
                 interleave_decoder=True, edge_dropout=0.5, feature_dropout=0.2, activation="relu",
                 dropout_every_layer=True, epochs=200, learning_rate=1e-4, negative_ratio=1, enrich=True,
                 enrichment_attributes=None, date_bucket_years=1, add_reverse=True, random_state=0):
        self.encoder = encoder
        self.layer_sizes = layer_sizes
        self.use_residual = use_residual
        self.concat_all = concat_all
        self.interleave_decoder = interleave_decoder
        self.edge_dropout = edge_dropout
        self.feature_dropout = feature_dropout
        self.activation = activation
        self.dropout_every_layer = dropout_every_layer
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.negative_ratio = negative_ratio
        self.enrich = enrich
        self.enrichment_attributes = enrichment_attributes
        self.date_bucket_years = date_bucket_years
        self.add_reverse = add_reverse
        self.random_state = random_state

    def model_config(self) -> ModelConfig:
        return ModelConfig(layer_sizes=tuple(self.layer_sizes), use_residual=self.use_residual,
                           concat_all=self.concat_all, interleave_decoder=self.interleave_decoder,
                           edge_dropout_p=self.edge_dropout, feature_dropout_p=self.feature_dropout,
                           encoder_kind=self.encoder, activation=self.activation,
                           dropout_every_layer=self.dropout_every_layer)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           negative_ratio=self.negative_ratio, seed=self.random_state)

    def _with_reverses(self, graph: HeteroGraph) -> HeteroGraph:
        if self.add_reverse is True:
            return add_reverse_relations(graph)
        if not self.add_reverse:
            return graph
        names = [r for r in self.add_reverse if r in graph.relations and graph.reverse_of(r) is None]
        return add_reverse_relations(graph, names)

    def prepare(self, graph: HeteroGraph) -> HeteroGraph:
        """Reverse augmentation and enrichment exactly as applied during fit."""
        g = self._with_reverses(graph)
        plan = getattr(self, "enrichment_plan_", None)
        return enrich(g, plan) if plan is not None else g

    def fit(self, graph: HeteroGraph, y=None) -> "GraphLinkPredictor":
        check_graph(graph)
        model_cfg, train_cfg = self.model_config(), self.train_config()
        g = self._with_reverses(graph)
        self.enrichment_plan_ = None
        if self.enrich:
            attrs = None if self.enrichment_attributes is None else [tuple(a) for a in self.enrichment_attributes]
            self.enrichment_plan_ = plan_enrichment(g, attrs, self.date_bucket_years)
            g = enrich(g, self.enrichment_plan_)
        result = train(g, model_cfg, train_cfg)
        self.params_ = result.params
        self.loss_curve_ = result.losses
        self.relation_loss_curve_ = result.relation_losses
        self.target_relations_ = g.target_relations
        return self

    def transform(self, graph: HeteroGraph) -> dict[str, np.ndarray]:
        """Node representations per type of the prepared graph."""
        check_is_fitted(self, "params_")
        reps = encode(self.prepare(graph), self.model_config(), self.params_, training=False)
        return {t: h.data for t, h in reps.items()}

    def decision_function(self, graph: HeteroGraph, relation: str, src, dst,
                          embeddings: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        """Link logits for ``(src, dst)`` pairs of ``relation``."""
        src, dst = check_pairs(graph, relation, src, dst)
        if embeddings is None:
            embeddings = self.transform(graph)
        rel = graph.relations[relation]
        reps = {t: Tensor(embeddings[t], dtype=embeddings[t].dtype) for t in (rel.src_type, rel.dst_type)}
        return EdgeScorer(self.model_config(), reps)(rel.src_type, rel.dst_type, src, dst).data.reshape(-1)

    def predict_proba(self, graph: HeteroGraph, relation: str, src, dst, embeddings=None) -> np.ndarray:
        z = self.decision_function(graph, relation, src, dst, embeddings).astype(np.float64)
        p = 1 / (1 + np.exp(-z))
        return np.stack([1 - p, p], axis=1)

    def predict(self, graph: HeteroGraph, relation: str, src, dst, embeddings=None) -> np.ndarray:
        return self.decision_function(graph, relation, src, dst, embeddings) > 0

    def adapt(self, graph: HeteroGraph, relation_map: Mapping[str, str] | None = None,
              fallback: str | None = None) -> "GraphLinkPredictor":
        """Copy whose weights cover every relation of ``graph``.

        A relation unknown to the model borrows the weights of
        ``relation_map[name]``, else (for a reverse) those of its forward
        relation's counterpart, else those of ``fallback``.
        """
        check_is_fitted(self, "params_")
        g = self.prepare(graph)
        cfg = self.model_config()
        if cfg.encoder_kind in HOMOGENEOUS:
            return self
        params = dict(self.params_)
        for t in g.node_types:
            key = f"proj.{t}" if t in g.features else f"emb.{t}"
            if key not in params:
                raise GraphError(f"model has no input weights for node type {t!r}")
            if t in g.features and params[key].shape[0] != g.feature_dim(t):
                raise DimensionError(f"{t!r} features have width {g.feature_dim(t)}, "
                                     f"model expects {params[key].shape[0]}")
        relation_map = dict(relation_map or {})
        mapping = {}

        def resolve(r: str) -> str:
            if f"layer0.rel.{r}" in params:
                return r
            if r in relation_map:
                return resolve(relation_map[r]) if relation_map[r] != r else r
            rel = g.relations[r]
            if rel.is_reverse and rel.reverse_of is not None:
                fwd = resolve(rel.reverse_of)
                if f"layer0.rel.{reverse_name(fwd)}" in params:
                    return reverse_name(fwd)
            if fallback is not None:
                fb = reverse_name(fallback) if rel.is_reverse else fallback
                if f"layer0.rel.{fb}" in params:
                    return fb
            raise GraphError(f"relation {r!r} is unknown to the model and has no mapping or fallback")

        for r in g.relations:
            source = resolve(r)
            if source != r:
                mapping[r] = source
                for l in range(len(cfg.layer_sizes)):
                    params[f"layer{l}.rel.{r}"] = params[f"layer{l}.rel.{source}"]
        for r, source in mapping.items():
            logger.info("relation %s scored with weights of %s", r, source)
        adapted = copy.copy(self)
        adapted.params_ = params
        adapted.relation_mapping_ = mapping
        return adapted


class SGDLinkPredictor(BaseEstimator):
    """Logistic regression on concatenated endpoint features, one model per relation.

    Ignores topology entirely; trained by stochastic gradient descent.
    """

    def __init__(self, alpha=1e-4, max_iter=20, negative_ratio=1, random_state=0):
        self.alpha = alpha
        self.max_iter = max_iter
        self.negative_ratio = negative_ratio
        self.random_state = random_state

    def fit(self, graph: HeteroGraph, y=None) -> "SGDLinkPredictor":
        check_graph(graph)
        self.coef_, self.intercept_ = {}, {}
        for k, r in enumerate(graph.target_relations):
            rel = graph.relations[r]
            for t in (rel.src_type, rel.dst_type):
                if t not in graph.features:
                    raise GraphError(f"{r!r}: node type {t!r} has no features")
            idx = graph.edges[r]
            if not len(idx):
                continue
            n_src, n_dst = sample_negatives(graph, r, self.negative_ratio, stream(self.random_state, k))
            x = np.concatenate([pair_features(graph, r, idx.src, idx.dst), pair_features(graph, r, n_src, n_dst)])
            y = np.r_[np.ones(len(idx)), np.zeros(len(n_src))]
            clf = SGDClassifier(loss="log_loss", alpha=self.alpha, max_iter=self.max_iter, tol=None,
                                random_state=self.random_state).fit(x, y)
            self.coef_[r] = clf.coef_.reshape(-1).copy()
            self.intercept_[r] = float(clf.intercept_[0])
        if not self.coef_:
            raise GraphError("graph has no target edges")
        return self

    def transform(self, graph: HeteroGraph) -> dict[str, np.ndarray]:
        return dict(graph.features)

    def decision_function(self, graph: HeteroGraph, relation: str, src, dst, embeddings=None) -> np.ndarray:
        check_is_fitted(self, "coef_")
        src, dst = check_pairs(graph, relation, src, dst)
        if relation not in self.coef_:
            raise GraphError(f"no model fitted for relation {relation!r}")
        return pair_features(graph, relation, src, dst) @ self.coef_[relation] + self.intercept_[relation]

    def predict_proba(self, graph: HeteroGraph, relation: str, src, dst, embeddings=None) -> np.ndarray:
        p = 1 / (1 + np.exp(-self.decision_function(graph, relation, src, dst)))
        return np.stack([1 - p, p], axis=1)

    def adapt(self, graph: HeteroGraph, relation_map=None, fallback=None) -> "SGDLinkPredictor":
        check_is_fitted(self, "coef_")
        adapted = copy.copy(self)
        adapted.coef_, adapted.intercept_ = dict(self.coef_), dict(self.intercept_)
        for r in graph.target_relations:
            if r in adapted.coef_:
                continue
            source = (relation_map or {}).get(r, fallback)
            if source not in self.coef_:
                raise GraphError(f"relation {r!r} is unknown to the model and has no mapping or fallback")
            adapted.coef_[r], adapted.intercept_[r] = self.coef_[source], self.intercept_[source]
        return adapted


MODEL_PRESETS: dict[str, dict] = {
    "gcn": dict(encoder="gcn", use_residual=False, concat_all=False, interleave_decoder=False, edge_dropout=0.0),
    "sage": dict(encoder="sage", use_residual=False, concat_all=False, interleave_decoder=False,
                 edge_dropout=0.0),
    "rgcn": dict(encoder="rgcn", use_residual=False, concat_all=False, interleave_decoder=False,
                 edge_dropout=0.0),
    "hge": dict(encoder="hge", use_residual=True, concat_all=False, interleave_decoder=False, edge_dropout=0.0),
    "r-hge": dict(encoder="hge", use_residual=True, concat_all=True, interleave_decoder=True, edge_dropout=0.5),
}


def make_model(name: str, **overrides):
    """Estimator for a model name: ``sgd``, ``gcn``, ``sage``, ``rgcn``, ``hge`` or ``r-hge``."""
    name = name.lower()
    if name == "sgd":
        allowed = SGDLinkPredictor().get_params()
        return SGDLinkPredictor(**{k: v for k, v in overrides.items() if k in allowed})
    if name not in MODEL_PRESETS:
        raise ValueError(f"unknown model {name!r}; choose from {['sgd', *MODEL_PRESETS]}")
    return GraphLinkPredictor(**{**MODEL_PRESETS[name], **overrides})
