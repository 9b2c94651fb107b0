import numpy as np
import pytest

from hetlink.graph import GraphError, validate_graph
from hetlink.synthetic import SyntheticSpec, generate_preset, generate_synthetic


def test_preset_counts_are_exact():
    g = generate_preset("lio-like", seed=0)
    assert dict(g.num_nodes) == {"case": 500, "law": 50, "court": 5}
    counts = {r: len(e) for r, e in g.edges.items()}
    assert counts == {"case-case": 1200, "case-law": 1200, "case-court": 500, "law-law": 300, "law-case": 5}
    o = generate_preset("old-like", seed=0)
    assert len(o.edges["case-law"]) == 10 * len(o.edges["case-case"])
    assert "law-law" not in o.relations
    assert validate_graph(g) == [] and validate_graph(o) == []


def test_case_citations_point_backwards_in_time():
    g = generate_preset("lio-like", seed=3)
    e, d = g.edges["case-case"], g.dates["case"]
    assert (d[e.dst] <= d[e.src]).all()
    assert (e.src != e.dst).all()


def test_no_duplicate_or_self_law_edges():
    g = generate_preset("lio-like", seed=1)
    ll = g.edges["law-law"]
    assert (ll.src != ll.dst).all()
    for r, e in g.edges.items():
        assert len(set(zip(e.src.tolist(), e.dst.tolist()))) == len(e)


def test_features_unit_norm_and_meta():
    g = generate_preset("old-like", seed=2, feature_dim=16)
    np.testing.assert_allclose(np.linalg.norm(g.features["case"], axis=1), 1.0, atol=1e-5)
    assert g.features["law"].shape == (100, 16)
    assert {"law_book_code", "law_book_title", "section"} <= set(g.meta["law"][0])
    assert "city" in g.meta["court"][0] and "type" in g.meta["case"][0]


def test_same_seed_same_graph():
    assert generate_preset("lio-like", seed=9) == generate_preset("lio-like", seed=9)
    assert generate_preset("lio-like", seed=9) != generate_preset("lio-like", seed=10)


def test_invalid_specs():
    with pytest.raises(GraphError, match="possible pairs"):
        SyntheticSpec(n_cases=5, n_laws=2, case_law=11)
    with pytest.raises(ValueError):
        SyntheticSpec(feature_dim=7)
    with pytest.raises(ValueError):
        SyntheticSpec.preset("tiny")


def test_dense_request_fills_every_pair():
    g = generate_synthetic(SyntheticSpec(n_cases=6, n_laws=3, n_courts=1, case_case=15, case_law=18, seed=4))
    assert len(g.edges["case-case"]) == 15 and len(g.edges["case-law"]) == 18


def top_share(g, frac=0.01):
    indeg = np.bincount(g.edges["case-case"].dst, minlength=g.num_nodes["case"])
    k = max(1, int(frac * len(indeg)))
    return np.sort(indeg)[-k:].sum() / indeg.sum()


def test_attachment_gives_heavier_tail():
    base = dict(n_cases=400, case_case=1200, case_law=400, homophily=0.0)
    pa = [top_share(generate_preset("lio-like", seed=s, **base)) for s in range(20)]
    flat = [top_share(generate_preset("lio-like", seed=s, attachment_exponent=0.0, **base)) for s in range(20)]
    assert np.mean(pa) > 1.5 * np.mean(flat)
