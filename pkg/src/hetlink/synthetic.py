"""Desk-scale synthetic legal citation graphs with preferential attachment."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import GraphError, HeteroGraph, RelationType, build_graph

CASE, LAW, COURT = "case", "law", "court"

_DEFAULT_VOCAB = {
    "case.type": ["judgment", "order", "decision", "ruling"],
    "court.type": ["district", "regional", "higher", "supreme", "labour"],
    "court.city": ["north", "south", "east", "west", "central", "harbour"],
    "court.state": ["A", "B", "C"],
    "court.jurisdiction": ["civil", "criminal", "administrative"],
    "court.level_of_appeal": ["first", "appeal", "final"],
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_cases: int = 500
    n_laws: int = 50
    n_courts: int = 5
    case_case: int = 1200
    case_law: int = 1200
    law_law: int = 0
    law_case: int = 0
    attachment_exponent: float = 1.0
    # strength of topic affinity in link formation; 0 gives pure preferential attachment
    homophily: float = 4.0
    n_topics: int = 8
    feature_dim: int = 32
    feature_noise: float = 0.6
    date_range: tuple[str, str] = ("1950-01-01", "2020-12-31")
    n_law_books: int = 10
    n_sections: int = 20
    vocabularies: dict = field(default_factory=lambda: {k: list(v) for k, v in _DEFAULT_VOCAB.items()})
    seed: int = 0

    def __post_init__(self):
        if min(self.n_cases, self.n_laws, self.n_courts) <= 0:
            raise ValueError("node counts must be positive")
        if self.feature_dim <= 0 or self.feature_dim % 2:
            raise ValueError("feature_dim must be positive and even")
        limits = {
            "case_case": self.n_cases * (self.n_cases - 1) // 2,
            "case_law": self.n_cases * self.n_laws,
            "law_law": self.n_laws * (self.n_laws - 1),
            "law_case": self.n_laws * self.n_cases,
        }
        for name, cap in limits.items():
            count = getattr(self, name)
            if count < 0:
                raise ValueError(f"{name} must be non-negative")
            if count > cap:
                raise GraphError(f"{name}={count} exceeds the {cap} possible pairs")

    @classmethod
    def preset(cls, name: str, **overrides) -> "SyntheticSpec":
        """``old-like``: norm citations outnumber case citations 10:1.
        ``lio-like``: balanced citations plus law-law and a few law-case links."""
        presets = {
            "old-like": dict(n_cases=500, n_laws=100, n_courts=5, case_case=300, case_law=3000),
            "lio-like": dict(n_cases=500, n_laws=50, n_courts=5, case_case=1200, case_law=1200,
                             law_law=300, law_case=5),
        }
        if name not in presets:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(presets)}")
        return cls(**{**presets[name], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["date_range"] = list(self.date_range)
        return d


def _allocate(total: int, capacity: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Spread ``total`` edges over sources uniformly, respecting per-source capacity."""
    counts = np.zeros(len(capacity), dtype=np.int64)
    remaining = total
    while remaining:
        free = capacity - counts
        open_ = free > 0
        if not open_.any():
            raise GraphError("requested more edges than possible pairs")
        draw = rng.multinomial(remaining, open_ / open_.sum())
        add = np.minimum(draw, free)
        counts += add
        remaining -= int(add.sum())
    return counts


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _attach(rng, out_counts, candidate_fn, topics_src, topics_dst, centers, spec, indeg, exclude_self=False):
    src, dst = [], []
    affinity = np.exp(spec.homophily * (centers @ centers.T))
    for u, k in enumerate(out_counts):
        if k == 0:
            continue
        cand = candidate_fn(u)
        if exclude_self:
            cand = cand[cand != u]
        w = (indeg[cand] + 1.0) ** spec.attachment_exponent * affinity[topics_src[u], topics_dst[cand]]
        chosen = rng.choice(cand, size=int(k), replace=False, p=w / w.sum())
        indeg[chosen] += 1
        src.extend([u] * int(k))
        dst.extend(chosen.tolist())
    return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)


def generate_synthetic(spec: SyntheticSpec) -> HeteroGraph:
    """Generate a case/law/court citation graph.

    Cases get increasing dates; each case cites earlier cases and laws with
    probability proportional to ``(in-degree + 1) ** attachment_exponent``
    scaled by topic affinity. Features are unit-norm noisy topic vectors.
    """
    rng = np.random.default_rng(spec.seed)
    nc, nl, nk = spec.n_cases, spec.n_laws, spec.n_courts
    start, end = (np.datetime64(d, "D").astype(np.int64) for d in spec.date_range)
    dates = np.sort(rng.integers(start, end + 1, size=nc))
    centers = _unit_rows(rng.normal(size=(spec.n_topics, spec.feature_dim)))
    case_topic = rng.integers(spec.n_topics, size=nc)
    law_topic = rng.integers(spec.n_topics, size=nl)

    def features(topic):
        noise = rng.normal(scale=spec.feature_noise / np.sqrt(spec.feature_dim),
                           size=(len(topic), spec.feature_dim))
        return _unit_rows(centers[topic] + noise)

    x_case, x_law = features(case_topic), features(law_topic)

    case_in = np.zeros(nc)
    cc_counts = _allocate(spec.case_case, np.arange(nc), rng)
    cc = _attach(rng, cc_counts, lambda u: np.arange(u), case_topic, case_topic, centers, spec, case_in)

    law_in = np.zeros(nl)
    cl_counts = _allocate(spec.case_law, np.full(nc, nl), rng)
    cl = _attach(rng, cl_counts, lambda u: np.arange(nl), case_topic, law_topic, centers, spec, law_in)

    ll_counts = _allocate(spec.law_law, np.full(nl, nl - 1), rng) if spec.law_law else np.zeros(nl, np.int64)
    ll = _attach(rng, ll_counts, lambda u: np.arange(nl), law_topic, law_topic, centers, spec, law_in,
                 exclude_self=True)

    lc_keys = rng.choice(nl * nc, size=spec.law_case, replace=False) if spec.law_case else np.zeros(0, np.int64)
    lc = (lc_keys // nc, lc_keys % nc)

    court_of_case = rng.integers(nk, size=nc)
    vocab = spec.vocabularies

    def pick(key, n):
        values = vocab[key]
        return [values[i] for i in rng.integers(len(values), size=n)]

    case_types = pick("case.type", nc)
    case_meta = [{"type": case_types[i]} for i in range(nc)]
    book_of_law = (law_topic + rng.integers(0, 2, size=nl) * spec.n_topics) % spec.n_law_books
    sections = rng.integers(1, spec.n_sections + 1, size=nl)
    law_meta = [{"law_book_code": f"LB{int(b):02d}", "law_book_title": f"Law book {int(b)}",
                 "section": f"s{int(s)}"} for b, s in zip(book_of_law, sections)]
    court_cols = {k.split(".", 1)[1]: pick(k, nk) for k in vocab if k.startswith("court.")}
    court_meta = [{"name": f"Court {j}", **{a: v[j] for a, v in court_cols.items()}} for j in range(nk)]

    relations = [
        RelationType("case-case", CASE, CASE, is_target=True),
        RelationType("case-law", CASE, LAW, is_target=True),
        RelationType("case-court", CASE, COURT),
    ]
    edges = {"case-case": cc, "case-law": cl, "case-court": (np.arange(nc), court_of_case)}
    if spec.law_law:
        relations.append(RelationType("law-law", LAW, LAW))
        edges["law-law"] = ll
    if spec.law_case:
        relations.append(RelationType("law-case", LAW, CASE))
        edges["law-case"] = lc
    return build_graph(
        num_nodes={CASE: nc, LAW: nl, COURT: nk},
        relations=relations,
        edges=edges,
        features={CASE: x_case.astype(np.float32), LAW: x_law.astype(np.float32)},
        dates={CASE: dates},
        meta={CASE: case_meta, LAW: law_meta, COURT: court_meta},
        ids={CASE: [f"case-{i:05d}" for i in range(nc)], LAW: [f"law-{i:04d}" for i in range(nl)],
             COURT: [f"court-{i:03d}" for i in range(nk)]},
    )


def generate_preset(name: str, seed: int = 0, **overrides) -> HeteroGraph:
    return generate_synthetic(SyntheticSpec.preset(name, seed=seed, **overrides))
