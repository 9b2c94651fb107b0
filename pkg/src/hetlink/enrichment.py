"""Meta-feature enrichment: categorical node attributes become meta-nodes.

Every distinct value of an enriched attribute gets its own node of a new meta
type, and each node carrying that value is linked to it by an ``is_meta``
relation plus its reverse. Values unseen at planning time go to a reserved
``<unknown>`` meta-node, which is only materialised when needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import EdgeIndex, GraphError, HeteroGraph, RelationType, reverse_name

UNKNOWN = "<unknown>"
DATE = "date"

# categorical meta-information per node type; names, slugs and free-text
# descriptions are identifiers rather than categories and stay out
DEFAULT_ATTRIBUTES: tuple[tuple[str, str], ...] = (
    ("case", "type"),
    ("case", DATE),
    ("law", "law_book_code"),
    ("law", "law_book_title"),
    ("law", "section"),
    ("court", "type"),
    ("court", "city"),
    ("court", "state"),
    ("court", "jurisdiction"),
    ("court", "level_of_appeal"),
)


@dataclass(frozen=True)
class MetaAttribute:
    node_type: str
    attribute: str
    meta_type: str
    relation: str
    vocabulary: Mapping[str, int]

    def to_dict(self) -> dict:
        return {"node_type": self.node_type, "attribute": self.attribute, "meta_type": self.meta_type,
                "relation": self.relation, "vocabulary": dict(self.vocabulary)}


@dataclass(frozen=True)
class EnrichmentPlan:
    attributes: tuple[MetaAttribute, ...] = ()
    date_bucket_years: int = 1

    def to_json(self) -> str:
        return json.dumps({"date_bucket_years": self.date_bucket_years,
                           "attributes": [a.to_dict() for a in self.attributes]}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnrichmentPlan":
        doc = json.loads(text)
        attrs = tuple(MetaAttribute(a["node_type"], a["attribute"], a["meta_type"], a["relation"],
                                    dict(a["vocabulary"])) for a in doc["attributes"])
        return cls(attrs, int(doc["date_bucket_years"]))


def date_buckets(days: np.ndarray, years: int = 1) -> list[str]:
    """Calendar-year bucket label for each day-since-epoch value."""
    year = np.asarray(days, dtype="datetime64[D]").astype("datetime64[Y]").astype(np.int64) + 1970
    return [str(int(y)) for y in (year // years) * years]


def attribute_values(g: HeteroGraph, node_type: str, attribute: str,
                     date_bucket_years: int = 1) -> list[str | None]:
    """Per-node value of ``attribute`` (``None`` where absent)."""
    if attribute == DATE and node_type in g.dates:
        return list(date_buckets(g.dates[node_type], date_bucket_years))
    records = g.meta.get(node_type, ())
    return [None if (v := rec.get(attribute)) is None else str(v) for rec in records]


def available_attributes(g: HeteroGraph) -> list[tuple[str, str]]:
    found = set()
    for t, records in g.meta.items():
        for rec in records:
            found.update((t, k) for k in rec)
    found.update((t, DATE) for t in g.dates)
    return sorted(found)


def plan_enrichment(g: HeteroGraph, attributes: Sequence[tuple[str, str]] | None = None,
                    date_bucket_years: int = 1) -> EnrichmentPlan:
    """Build vocabularies for the given ``(node_type, attribute)`` pairs.

    With ``attributes=None`` the default categorical attributes are used,
    restricted to those the graph actually carries.
    """
    available = available_attributes(g)
    if attributes is None:
        attributes = [a for a in DEFAULT_ATTRIBUTES if a in set(available)]
    else:
        attributes = [tuple(a) for a in attributes]
        missing = [a for a in attributes if a not in set(available)]
        if missing:
            raise GraphError(f"unknown attribute(s) {missing}; available: {available}")
    attr_count: dict[str, int] = {}
    for _, attr in attributes:
        attr_count[attr] = attr_count.get(attr, 0) + 1
    taken = set(g.num_nodes) | set(g.relations)
    out = []
    for node_type, attr in attributes:
        if attr_count[attr] == 1:
            meta_type, relation = attr, f"has-{attr}"
        else:
            meta_type, relation = f"{node_type}-{attr}", f"{node_type}-has-{attr}"
        for name in (meta_type, relation, reverse_name(relation)):
            if name in taken:
                raise GraphError(f"enrichment name {name!r} collides with an existing type or relation")
            taken.add(name)
        values = attribute_values(g, node_type, attr, date_bucket_years)
        vocab: dict[str, int] = {}
        for v in values:
            if v is not None and v not in vocab:
                vocab[v] = len(vocab)
        out.append(MetaAttribute(node_type, attr, meta_type, relation, vocab))
    return EnrichmentPlan(tuple(out), date_bucket_years)


def enrich(g: HeteroGraph, plan: EnrichmentPlan) -> HeteroGraph:
    """Append meta-nodes and ``is_meta`` relations (with reverses) per the plan."""
    if not plan.attributes:
        return g
    num_nodes = dict(g.num_nodes)
    rels = dict(g.relations)
    edges = dict(g.edges)
    ids = dict(g.ids)
    meta_types = set(g.meta_node_types)
    for attr in plan.attributes:
        if attr.node_type not in g.num_nodes:
            raise GraphError(f"plan refers to node type {attr.node_type!r} absent from graph")
        if attr.meta_type in num_nodes or attr.relation in rels:
            raise GraphError(f"graph already contains {attr.meta_type!r}/{attr.relation!r}")
        values = attribute_values(g, attr.node_type, attr.attribute, plan.date_bucket_years)
        unknown = len(attr.vocabulary)
        src, dst = [], []
        for i, v in enumerate(values):
            if v is None:
                continue
            src.append(i)
            dst.append(attr.vocabulary.get(v, unknown))
        has_unknown = bool(dst) and max(dst) == unknown
        n_meta = len(attr.vocabulary) + int(has_unknown)
        num_nodes[attr.meta_type] = n_meta
        labels = sorted(attr.vocabulary, key=attr.vocabulary.get) + ([UNKNOWN] if has_unknown else [])
        ids[attr.meta_type] = tuple(f"{attr.meta_type}={v}" for v in labels)
        meta_types.add(attr.meta_type)
        fwd = EdgeIndex(src, dst, g.num_nodes[attr.node_type])
        rev = reverse_name(attr.relation)
        rels[attr.relation] = RelationType(attr.relation, attr.node_type, attr.meta_type, is_meta=True)
        rels[rev] = RelationType(rev, attr.meta_type, attr.node_type, is_meta=True,
                                 is_reverse=True, reverse_of=attr.relation)
        edges[attr.relation] = fwd
        edges[rev] = fwd.transpose(n_meta)
    return replace(g, num_nodes=num_nodes, relations=rels, edges=edges, ids=ids,
                   meta_node_types=frozenset(meta_types))


def strip_enrichment(g: HeteroGraph) -> HeteroGraph:
    """Drop every meta relation and meta node type."""
    if not g.meta_node_types and not any(r.is_meta for r in g.relations.values()):
        return g
    keep_rel = [r for r, rel in g.relations.items() if not rel.is_meta]
    dropped = g.meta_node_types
    return replace(
        g,
        num_nodes={t: n for t, n in g.num_nodes.items() if t not in dropped},
        relations={r: g.relations[r] for r in keep_rel},
        edges={r: g.edges[r] for r in keep_rel},
        features={t: x for t, x in g.features.items() if t not in dropped},
        dates={t: d for t, d in g.dates.items() if t not in dropped},
        meta={t: m for t, m in g.meta.items() if t not in dropped},
        ids={t: v for t, v in g.ids.items() if t not in dropped},
        meta_node_types=frozenset(),
    )
