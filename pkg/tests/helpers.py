import numpy as np

from hetlink.graph import RelationType, build_graph


def random_pairs(rng, n_src, n_dst, p, forbid_self=False):
    pairs = [(i, j) for i in range(n_src) for j in range(n_dst)
             if rng.random() < p and not (forbid_self and i == j)]
    if not pairs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    src, dst = zip(*pairs)
    return np.array(src), np.array(dst)


def random_graph(seed=0, n_case=8, n_law=4, n_court=2, p=0.3, dim=3, dated=True, meta_rel=True):
    """Small case/law/court graph with two target relations and a court relation."""
    rng = np.random.default_rng(seed)
    rels = [RelationType("case-case", "case", "case", is_target=True),
            RelationType("case-law", "case", "law", is_target=True),
            RelationType("case-court", "case", "court", is_meta=meta_rel)]
    edges = {"case-case": random_pairs(rng, n_case, n_case, p, forbid_self=True),
             "case-law": random_pairs(rng, n_case, n_law, p),
             "case-court": (np.arange(n_case), rng.integers(n_court, size=n_case))}
    dates = {"case": np.sort(rng.integers(0, 20000, size=n_case))} if dated else {}
    cities = ["A", "B", "C"]
    return build_graph(
        num_nodes={"case": n_case, "law": n_law, "court": n_court},
        relations=rels,
        edges=edges,
        features={"case": rng.normal(size=(n_case, dim)), "law": rng.normal(size=(n_law, dim))},
        dates=dates,
        meta={"case": [{"type": str(rng.choice(["judgment", "order"]))} for _ in range(n_case)],
              "court": [{"city": cities[i % 3]} for i in range(n_court)]},
        ids={"case": [f"c{i}" for i in range(n_case)], "law": [f"l{i}" for i in range(n_law)],
             "court": [f"k{i}" for i in range(n_court)]},
    )
