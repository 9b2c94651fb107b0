import logging

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hetlink.estimators import MODEL_PRESETS, GraphLinkPredictor, SGDLinkPredictor, check_pairs, make_model
from hetlink.graph import DimensionError, GraphError, RelationType, build_graph
from hetlink.synthetic import generate_preset

TINY = dict(layer_sizes=(6, 6), epochs=2)


def lio(seed=0, **kw):
    base = dict(n_cases=50, n_laws=10, case_case=60, case_law=60, law_law=10, law_case=2, feature_dim=8)
    return generate_preset("lio-like", seed=seed, **{**base, **kw})


def old(seed=0, **kw):
    base = dict(n_cases=50, n_laws=10, case_case=30, case_law=80, feature_dim=8)
    return generate_preset("old-like", seed=seed, **{**base, **kw})


def test_get_params_and_clone():
    est = GraphLinkPredictor(epochs=7, layer_sizes=(4,))
    params = est.get_params()
    assert params["epochs"] == 7 and params["edge_dropout"] == 0.5
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(learning_rate=0.01)
    assert est.learning_rate == 0.01


def test_defaults_describe_robust_model():
    est = GraphLinkPredictor()
    cfg, tcfg = est.model_config(), est.train_config()
    assert cfg.layer_sizes == (256, 256, 256)
    assert cfg.use_residual and cfg.concat_all and cfg.interleave_decoder
    assert (cfg.edge_dropout_p, cfg.feature_dropout_p) == (0.5, 0.2)
    assert tcfg.learning_rate == 1e-4 and tcfg.epochs == 200


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        GraphLinkPredictor().transform(lio())
    with pytest.raises(NotFittedError):
        SGDLinkPredictor().decision_function(lio(), "case-case", [0], [1])


def test_fit_transform_and_scores():
    g = lio()
    est = GraphLinkPredictor(**TINY).fit(g)
    reps = est.transform(g)
    # concatenated projection plus two layers
    assert reps["case"].shape == (50, 18)
    assert "date" in reps  # enrichment meta-node type
    proba = est.predict_proba(g, "case-law", [0, 1, 2], [0, 1, 2])
    assert proba.shape == (3, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert est.predict(g, "case-law", [0], [0]).dtype == bool
    assert len(est.loss_curve_) == 2
    assert set(est.target_relations_) == {"case-case", "case-law"}


def test_embeddings_reuse_matches_fresh_scores():
    g = lio()
    est = GraphLinkPredictor(**TINY).fit(g)
    emb = est.transform(g)
    a = est.decision_function(g, "case-case", [3, 4], [1, 2])
    b = est.decision_function(g, "case-case", [3, 4], [1, 2], embeddings=emb)
    assert np.array_equal(a, b)


def test_check_pairs_errors():
    g = lio()
    with pytest.raises(GraphError, match="unknown relation"):
        check_pairs(g, "nope", [0], [0])
    with pytest.raises(IndexError):
        check_pairs(g, "case-law", [0], [10])
    with pytest.raises(ValueError):
        check_pairs(g, "case-law", [0, 1], [0])


def test_fit_without_enrichment():
    est = GraphLinkPredictor(enrich=False, **TINY).fit(lio())
    assert est.enrichment_plan_ is None
    assert "date" not in est.transform(lio())


def test_partial_reverse_list():
    est = GraphLinkPredictor(add_reverse=["case-law"], enrich=False, **TINY)
    g = est.prepare(lio())
    assert "rev-case-law" in g.relations and "rev-case-case" not in g.relations


def test_fit_is_reproducible():
    g = lio()
    a = GraphLinkPredictor(**TINY, random_state=5).fit(g)
    b = GraphLinkPredictor(**TINY, random_state=5).fit(g)
    assert a.loss_curve_ == b.loss_curve_


def test_adapt_with_fallback(caplog):
    model = GraphLinkPredictor(enrich=False, **TINY).fit(old())
    g = lio(1)
    with pytest.raises(GraphError, match="law-law"):
        model.adapt(g)
    with caplog.at_level(logging.INFO, logger="hetlink.estimators"):
        adapted = model.adapt(g, fallback="case-case")
    assert adapted.relation_mapping_["law-law"] == "case-case"
    assert adapted.relation_mapping_["rev-law-law"] == "rev-case-case"
    assert "law-law" in caplog.text
    assert not hasattr(model, "relation_mapping_")
    assert np.isfinite(adapted.decision_function(g, "case-law", [0, 1], [0, 1])).all()


def test_adapt_relation_map_takes_precedence():
    model = GraphLinkPredictor(enrich=False, **TINY).fit(old())
    adapted = model.adapt(lio(1), relation_map={"law-law": "case-law", "law-case": "case-case"},
                          fallback="case-case")
    assert adapted.relation_mapping_["law-law"] == "case-law"
    assert adapted.relation_mapping_["law-case"] == "case-case"


def test_adapt_rejects_feature_width_change():
    model = GraphLinkPredictor(enrich=False, **TINY).fit(old())
    with pytest.raises(DimensionError):
        model.adapt(lio(1, feature_dim=4), fallback="case-case")


def test_adapt_rejects_unknown_node_type():
    model = GraphLinkPredictor(enrich=False, **TINY).fit(old())
    g = build_graph({"judge": 2}, [RelationType("jj", "judge", "judge", is_target=True)], {"jj": ([0], [1])},
                    features={"judge": np.zeros((2, 8), np.float32)})
    with pytest.raises(GraphError, match="judge"):
        model.adapt(g, fallback="case-case")


def test_sgd_adapt():
    model = SGDLinkPredictor(max_iter=3).fit(lio())
    g = build_graph({"case": 3}, [RelationType("cc2", "case", "case", is_target=True)], {"cc2": ([0], [1])},
                    features={"case": np.ones((3, 8), np.float32)})
    with pytest.raises(GraphError):
        model.adapt(g)
    adapted = model.adapt(g, fallback="case-case")
    assert np.array_equal(adapted.coef_["cc2"], model.coef_["case-case"])
    assert "cc2" not in model.coef_


def test_sgd_needs_features():
    g = build_graph({"a": 3}, [RelationType("aa", "a", "a", is_target=True)], {"aa": ([0], [1])})
    with pytest.raises(GraphError, match="features"):
        SGDLinkPredictor().fit(g)


@pytest.mark.parametrize("name", sorted(MODEL_PRESETS))
def test_make_model_presets_train(name):
    est = make_model(name, **TINY, enrich=False)
    assert est.get_params()["encoder"] == MODEL_PRESETS[name]["encoder"]
    est.fit(old())
    scores = est.decision_function(old(), "case-law", [0, 1], [0, 1])
    assert scores.shape == (2,) and np.isfinite(scores).all()


def test_make_model_sgd_and_unknown():
    assert isinstance(make_model("SGD", epochs=3, alpha=0.1), SGDLinkPredictor)
    assert make_model("sgd", alpha=0.1).alpha == 0.1
    with pytest.raises(ValueError, match="unknown model"):
        make_model("transformer")
