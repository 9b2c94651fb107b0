import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetlink.enrichment import UNKNOWN, EnrichmentPlan, enrich, plan_enrichment, strip_enrichment
from hetlink.graph import GraphError, RelationType, build_graph, validate_graph
from hetlink.synthetic import generate_preset
from hetlink.training import edge_dropout

from helpers import random_graph


def court_graph(cities=("A", "B", "A")):
    return build_graph({"court": len(cities)}, [], {}, meta={"court": [{"city": c} for c in cities]})


def day(iso):
    return int(np.datetime64(iso, "D").astype(np.int64))


def test_city_vocabulary_and_edges():
    g = court_graph()
    plan = plan_enrichment(g, [("court", "city")])
    assert len(plan.attributes[0].vocabulary) == 2
    e = enrich(g, plan)
    assert e.num_nodes["city"] == 2
    assert len(e.edges["has-city"]) == 3
    assert e.relations["has-city"].is_meta and e.relations["rev-has-city"].is_meta
    assert "city" in e.meta_node_types and "city" in e.learnable_types
    # courts 0 and 2 share a city node
    assert e.edges["has-city"].dst.tolist() == [0, 1, 0]


def test_date_buckets_by_year():
    g = build_graph({"case": 3}, [], {}, dates={"case": [day("1990-02-01"), day("1990-11-30"), day("1991-01-01")]})
    plan = plan_enrichment(g, [("case", "date")])
    assert plan.attributes[0].vocabulary == {"1990": 0, "1991": 1}
    assert enrich(g, plan).num_nodes["date"] == 2
    assert len(plan_enrichment(g, [("case", "date")], date_bucket_years=10).attributes[0].vocabulary) == 1


def test_unknown_attribute_lists_available():
    with pytest.raises(GraphError, match="available"):
        plan_enrichment(court_graph(), [("court", "planet")])


def test_default_plan_covers_law_attributes():
    g = generate_preset("old-like", seed=0, n_cases=40, n_laws=20, case_case=30, case_law=80)
    plan = plan_enrichment(g)
    law_attrs = {a.attribute for a in plan.attributes if a.node_type == "law"}
    assert law_attrs == {"law_book_code", "law_book_title", "section"}
    # "type" exists on cases and courts, so it gets type-qualified names
    names = {a.meta_type for a in plan.attributes}
    assert {"case-type", "court-type", "date"} <= names


def test_empty_plan_is_identity():
    g = random_graph(0)
    assert enrich(g, EnrichmentPlan()) is g


def test_unseen_value_goes_to_unknown_node():
    plan = plan_enrichment(court_graph(("A", "B")), [("court", "city")])
    e = enrich(court_graph(("A", "Z", "Q")), plan)
    assert e.num_nodes["city"] == 3
    assert e.ids["city"][-1] == f"city={UNKNOWN}"
    assert e.edges["has-city"].dst.tolist() == [0, 2, 2]


def test_no_unknown_node_when_not_needed():
    plan = plan_enrichment(court_graph(), [("court", "city")])
    assert enrich(court_graph(("B", "B", "A")), plan).num_nodes["city"] == 2


def test_edge_count_matches_bruteforce():
    g = random_graph(5, n_case=40, n_law=10, n_court=6, meta_rel=False)
    attrs = [("case", "type"), ("case", "date"), ("court", "city")]
    e = enrich(g, plan_enrichment(g, attrs))
    defined = sum(1 for rec in g.meta["case"] if "type" in rec) + 40 + sum(1 for rec in g.meta["court"] if "city" in rec)
    assert e.num_edges() == g.num_edges() + 2 * defined
    assert validate_graph(e) == []


def test_enrich_leaves_targets_alone():
    g = random_graph(4, meta_rel=False)
    e = enrich(g, plan_enrichment(g))
    for r in g.target_relations:
        assert e.edges[r] == g.edges[r]


def test_meta_edges_survive_edge_dropout():
    g = random_graph(4, meta_rel=False)
    e = enrich(g, plan_enrichment(g))
    dropped = edge_dropout(e, 1.0, np.random.default_rng(0))
    for r, rel in e.relations.items():
        if rel.is_meta:
            assert dropped.edges[r] == e.edges[r]


def test_strip_on_plain_graph_is_identity():
    g = random_graph(1, meta_rel=False)
    assert strip_enrichment(g) == g


def test_strip_counts_on_200_nodes():
    g = random_graph(9, n_case=150, n_law=40, n_court=10, p=0.02, meta_rel=False)
    assert sum(g.num_nodes.values()) == 200
    e = enrich(g, plan_enrichment(g))
    s = strip_enrichment(e)
    assert dict(s.num_nodes) == dict(g.num_nodes)
    assert s.num_edges() == g.num_edges()


def test_plan_json_round_trip():
    g = random_graph(2, meta_rel=False)
    plan = plan_enrichment(g)
    back = EnrichmentPlan.from_json(plan.to_json())
    assert back == plan
    assert json.loads(plan.to_json())["attributes"][0]["vocabulary"]


def test_name_collision_rejected():
    g = build_graph({"court": 1, "city": 1}, [], {}, meta={"court": [{"city": "A"}]})
    with pytest.raises(GraphError, match="collides"):
        plan_enrichment(g, [("court", "city")])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.sampled_from(["type", "date"]), unique=True),
       st.booleans())
def test_strip_inverts_enrich(seed, case_attrs, with_city):
    g = random_graph(seed, meta_rel=False)
    attrs = [("case", a) for a in case_attrs] + ([("court", "city")] if with_city else [])
    assert strip_enrichment(enrich(g, plan_enrichment(g, attrs))) == g
