"""Typed heterogeneous graphs with per-relation sorted adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

REVERSE_PREFIX = "rev-"


class GraphError(ValueError):
    """Base class for malformed graph input."""


class SchemaError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class DimensionError(GraphError):
    pass


def _frozen(arr, dtype=None):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RelationType:
    name: str
    src_type: str
    dst_type: str
    is_target: bool = False
    is_reverse: bool = False
    is_meta: bool = False
    reverse_of: str | None = None

    def __post_init__(self):
        if self.is_target and self.is_meta:
            raise SchemaError(f"relation {self.name!r} cannot be both target and meta")
        if self.is_reverse and self.reverse_of is None:
            raise SchemaError(f"reverse relation {self.name!r} needs reverse_of")


class EdgeIndex:
    """Edge list of one relation sorted source-major, with CSR row pointers.

    ``out_neighbors(i)`` is an O(1) slice.
    """

    __slots__ = ("src", "dst", "indptr")

    def __init__(self, src, dst, n_src: int, *, presorted: bool = False):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        if src.shape != dst.shape:
            raise GraphError("src and dst must have equal length")
        if not presorted and len(src):
            order = np.lexsort((dst, src))
            src, dst = src[order], dst[order]
        counts = np.bincount(src[(src >= 0) & (src < n_src)], minlength=n_src) if n_src else np.zeros(0, np.int64)
        indptr = np.zeros(n_src + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        self.src = _frozen(src)
        self.dst = _frozen(dst)
        self.indptr = _frozen(indptr)

    @classmethod
    def empty(cls, n_src: int) -> "EdgeIndex":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), n_src)

    def __len__(self) -> int:
        return len(self.src)

    @property
    def n_src(self) -> int:
        return len(self.indptr) - 1

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.dst[self.indptr[i]:self.indptr[i + 1]]

    def transpose(self, n_dst: int) -> "EdgeIndex":
        return EdgeIndex(self.dst, self.src, n_dst)

    def select(self, keep: np.ndarray) -> "EdgeIndex":
        """Subset by boolean mask over edges (order preserved)."""
        return EdgeIndex(self.src[keep], self.dst[keep], self.n_src, presorted=True)

    def keys(self, n_dst: int) -> np.ndarray:
        """Scalar key per edge, ``src * n_dst + dst``; sorted because edges are."""
        return self.src * max(n_dst, 1) + self.dst

    def count_duplicates(self) -> int:
        if len(self.src) < 2:
            return 0
        same = (self.src[1:] == self.src[:-1]) & (self.dst[1:] == self.dst[:-1])
        return int(same.sum())

    def dedup(self) -> "EdgeIndex":
        if self.count_duplicates() == 0:
            return self
        keep = np.ones(len(self.src), dtype=bool)
        keep[1:] = (self.src[1:] != self.src[:-1]) | (self.dst[1:] != self.dst[:-1])
        return self.select(keep)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EdgeIndex):
            return NotImplemented
        return (self.n_src == other.n_src and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst))

    def __repr__(self) -> str:
        return f"EdgeIndex(n_edges={len(self)}, n_src={self.n_src})"


def _proxy(mapping) -> Mapping:
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Immutable heterogeneous graph.

    Nodes are dense ``0..n-1`` per type; ``ids`` keeps the external string IDs.
    Types without a feature table are *learnable*: the encoder gives them a
    per-type trainable embedding. ``dates`` holds integer days since the epoch
    for dated types (cases).
    """

    num_nodes: Mapping[str, int]
    relations: Mapping[str, RelationType]
    edges: Mapping[str, EdgeIndex]
    features: Mapping[str, np.ndarray] = field(default_factory=dict)
    dates: Mapping[str, np.ndarray] = field(default_factory=dict)
    meta: Mapping[str, tuple] = field(default_factory=dict)
    ids: Mapping[str, tuple] = field(default_factory=dict)
    meta_node_types: frozenset = frozenset()

    def __post_init__(self):
        for name in ("num_nodes", "relations", "edges", "features", "dates", "meta", "ids"):
            object.__setattr__(self, name, _proxy(getattr(self, name)))
        object.__setattr__(self, "meta_node_types", frozenset(self.meta_node_types))

    @property
    def node_types(self) -> tuple[str, ...]:
        return tuple(self.num_nodes)

    @property
    def target_relations(self) -> tuple[str, ...]:
        return tuple(r for r, rel in self.relations.items() if rel.is_target)

    @property
    def learnable_types(self) -> tuple[str, ...]:
        return tuple(t for t in self.num_nodes if t not in self.features)

    def num_edges(self, relation: str | None = None) -> int:
        if relation is not None:
            return len(self.edges[relation])
        return sum(len(e) for e in self.edges.values())

    def out_neighbors(self, relation: str, node: int) -> np.ndarray:
        return self.edges[relation].out_neighbors(node)

    def feature_dim(self, node_type: str) -> int:
        feats = self.features.get(node_type)
        return 0 if feats is None else feats.shape[1]

    def reverse_of(self, relation: str) -> str | None:
        """Name of the reverse twin of ``relation``, if present."""
        for name, rel in self.relations.items():
            if rel.reverse_of == relation:
                return name
        return None

    def with_edges(self, edges: Mapping[str, EdgeIndex]) -> "HeteroGraph":
        """Same nodes and schema, replaced edge sets (unlisted relations kept)."""
        merged = dict(self.edges)
        merged.update(edges)
        return replace(self, edges=merged)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        if (dict(self.num_nodes) != dict(other.num_nodes)
                or list(self.num_nodes) != list(other.num_nodes)
                or dict(self.relations) != dict(other.relations)
                or self.meta_node_types != other.meta_node_types):
            return False
        if set(self.edges) != set(other.edges) or any(self.edges[r] != other.edges[r] for r in self.edges):
            return False
        for a, b in ((self.features, other.features), (self.dates, other.dates)):
            if set(a) != set(b) or any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return dict(self.meta) == dict(other.meta) and dict(self.ids) == dict(other.ids)

    __hash__ = None

    def __repr__(self) -> str:
        nodes = ", ".join(f"{t}={n}" for t, n in self.num_nodes.items())
        edges = ", ".join(f"{r}={len(e)}" for r, e in self.edges.items())
        return f"HeteroGraph(nodes: {nodes}; edges: {edges})"


@dataclass(frozen=True)
class Violation:
    kind: str  # dangling | duplicate | dimension | schema | date
    where: str
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.where}: {self.message}"


def validate_graph(g: HeteroGraph) -> list[Violation]:
    """List invariant violations; an empty list means the graph is valid."""
    out: list[Violation] = []
    for t, n in g.num_nodes.items():
        if not t:
            out.append(Violation("schema", "<node type>", "empty node type label"))
        if n < 0:
            out.append(Violation("schema", t, f"negative node count {n}"))
    for name, rel in g.relations.items():
        for end in (rel.src_type, rel.dst_type):
            if end not in g.num_nodes:
                out.append(Violation("schema", name, f"unknown node type {end!r}"))
        if name not in g.edges:
            out.append(Violation("schema", name, "declared relation has no edge list"))
        if rel.reverse_of is not None:
            fwd = g.relations.get(rel.reverse_of)
            if fwd is None:
                out.append(Violation("schema", name, f"reverse of unknown relation {rel.reverse_of!r}"))
            elif (fwd.src_type, fwd.dst_type) != (rel.dst_type, rel.src_type):
                out.append(Violation("schema", name, "reverse endpoints are not swapped"))
    for name, idx in g.edges.items():
        rel = g.relations.get(name)
        if rel is None:
            out.append(Violation("schema", name, "edge list for undeclared relation"))
            continue
        n_src = g.num_nodes.get(rel.src_type, 0)
        n_dst = g.num_nodes.get(rel.dst_type, 0)
        bad_src = np.flatnonzero((idx.src < 0) | (idx.src >= n_src))
        bad_dst = np.flatnonzero((idx.dst < 0) | (idx.dst >= n_dst))
        if len(bad_src):
            i = int(bad_src[0])
            out.append(Violation("dangling", name,
                                 f"edge {i} source {int(idx.src[i])} >= {rel.src_type} count {n_src}"))
        if len(bad_dst):
            i = int(bad_dst[0])
            out.append(Violation("dangling", name,
                                 f"edge {i} destination {int(idx.dst[i])} >= {rel.dst_type} count {n_dst}"))
        if idx.n_src != n_src and not len(bad_src):
            out.append(Violation("schema", name, f"adjacency sized for {idx.n_src} sources, expected {n_src}"))
        if len(idx) > 1:
            order_ok = np.all((idx.src[1:] > idx.src[:-1])
                              | ((idx.src[1:] == idx.src[:-1]) & (idx.dst[1:] >= idx.dst[:-1])))
            if not order_ok:
                out.append(Violation("schema", name, "adjacency not sorted source-major"))
        dups = idx.count_duplicates()
        if dups:
            out.append(Violation("duplicate", name, f"{dups} duplicate edge(s)"))
    for t, feats in g.features.items():
        if t not in g.num_nodes:
            out.append(Violation("schema", t, "feature table for unknown node type"))
        elif feats.ndim != 2 or feats.shape[0] != g.num_nodes[t]:
            out.append(Violation("dimension", t,
                                 f"feature table shape {feats.shape} does not match {g.num_nodes[t]} nodes"))
        elif not np.all(np.isfinite(feats)):
            out.append(Violation("dimension", t, "non-finite feature values"))
    for t, d in g.dates.items():
        if t not in g.num_nodes or len(d) != g.num_nodes[t]:
            out.append(Violation("date", t, f"{len(d)} dates for {g.num_nodes.get(t, 0)} nodes"))
    for t, m in g.meta.items():
        if t not in g.num_nodes or len(m) != g.num_nodes[t]:
            out.append(Violation("schema", t, f"{len(m)} meta records for {g.num_nodes.get(t, 0)} nodes"))
    for t, i in g.ids.items():
        if t not in g.num_nodes or len(i) != g.num_nodes[t]:
            out.append(Violation("schema", t, f"{len(i)} ids for {g.num_nodes.get(t, 0)} nodes"))
    return out


_ERRORS = {"dangling": SchemaError, "schema": SchemaError, "duplicate": DuplicateEdgeError,
           "dimension": DimensionError, "date": DimensionError}


def check_graph(g: HeteroGraph) -> HeteroGraph:
    """Raise the matching :class:`GraphError` for the first violation."""
    problems = validate_graph(g)
    if problems:
        first = problems[0]
        raise _ERRORS[first.kind](str(first))
    return g


def build_graph(
    num_nodes: Mapping[str, int],
    relations: Iterable[RelationType],
    edges: Mapping[str, tuple[Sequence[int], Sequence[int]]],
    features: Mapping[str, np.ndarray] | None = None,
    dates: Mapping[str, Sequence[int]] | None = None,
    meta: Mapping[str, Sequence[Mapping[str, str]]] | None = None,
    ids: Mapping[str, Sequence[str]] | None = None,
    meta_node_types: Iterable[str] = (),
) -> HeteroGraph:
    """Validate typed node/edge records and freeze them into a :class:`HeteroGraph`.

    ``edges`` maps a relation name to ``(src, dst)`` index arrays. Relations
    without edges get an empty edge list.
    """
    num_nodes = {str(t): int(n) for t, n in num_nodes.items()}
    rels = {}
    for rel in relations:
        if rel.name in rels:
            raise SchemaError(f"relation {rel.name!r} declared twice")
        rels[rel.name] = rel
    unknown = set(edges) - set(rels)
    if unknown:
        raise SchemaError(f"edges given for undeclared relation(s) {sorted(unknown)}")
    edge_index = {}
    for name, rel in rels.items():
        for end in (rel.src_type, rel.dst_type):
            if end not in num_nodes:
                raise SchemaError(f"relation {name!r} refers to unknown node type {end!r}")
        src, dst = edges.get(name, ((), ()))
        edge_index[name] = EdgeIndex(src, dst, num_nodes[rel.src_type])
    feats = {}
    for t, x in (features or {}).items():
        x = np.asarray(x)
        if x.ndim != 2:
            raise DimensionError(f"feature table for {t!r} must be 2-D, got shape {x.shape}")
        feats[t] = _frozen(x, dtype=np.float32 if x.dtype != np.float64 else np.float64)
    g = HeteroGraph(
        num_nodes=num_nodes,
        relations=rels,
        edges=edge_index,
        features=feats,
        dates={t: _frozen(d, np.int64) for t, d in (dates or {}).items()},
        meta={t: tuple(dict(m) for m in recs) for t, recs in (meta or {}).items()},
        ids={t: tuple(str(i) for i in v) for t, v in (ids or {}).items()},
        meta_node_types=frozenset(meta_node_types),
    )
    return check_graph(g)


def reverse_name(relation: str) -> str:
    return REVERSE_PREFIX + relation


def add_reverse_relations(g: HeteroGraph, relations: Iterable[str] | None = None) -> HeteroGraph:
    """Add a transposed twin ``rev-R`` for each named relation.

    By default every forward relation that has no reverse yet is mirrored.
    The reverse inherits ``is_meta``; it is never itself a target but is
    linked to its forward relation through ``reverse_of``.
    """
    if relations is None:
        relations = [r for r, rel in g.relations.items()
                     if not rel.is_reverse and g.reverse_of(r) is None]
    rels = dict(g.relations)
    edges = dict(g.edges)
    for name in relations:
        if name not in g.relations:
            raise SchemaError(f"unknown relation {name!r}")
        rel = g.relations[name]
        if rel.is_reverse:
            raise SchemaError(f"{name!r} is already a reverse relation")
        rev = reverse_name(name)
        if rev in rels:
            if rels[rev].reverse_of == name:
                continue
            raise SchemaError(f"reverse name {rev!r} is taken")
        rels[rev] = RelationType(rev, rel.dst_type, rel.src_type, is_target=False,
                                 is_reverse=True, is_meta=rel.is_meta, reverse_of=name)
        edges[rev] = g.edges[name].transpose(g.num_nodes[rel.dst_type])
    return replace(g, relations=rels, edges=edges)


@dataclass(frozen=True, eq=False)
class HomoGraph:
    """Single-node-set, symmetric view of a heterogeneous graph."""

    num_nodes: int
    offsets: Mapping[str, int]
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    node_type: np.ndarray  # type position per node

    def __post_init__(self):
        object.__setattr__(self, "offsets", _proxy(self.offsets))

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def rows(self, node_type: str, n: int) -> np.ndarray:
        start = self.offsets[node_type]
        return np.arange(start, start + n)


def homogenize(g: HeteroGraph, dtype=np.float32) -> HomoGraph:
    """Merge all relations into one symmetric, deduplicated edge list.

    Features are zero-padded to the widest type and a node-type one-hot is
    appended, so the unified width is ``max_dim + n_types``.
    """
    types = g.node_types
    offsets, start = {}, 0
    for t in types:
        offsets[t] = start
        start += g.num_nodes[t]
    n = start
    srcs, dsts = [], []
    for name, idx in g.edges.items():
        rel = g.relations[name]
        srcs.append(idx.src + offsets[rel.src_type])
        dsts.append(idx.dst + offsets[rel.dst_type])
    src = np.concatenate(srcs) if srcs else np.zeros(0, np.int64)
    dst = np.concatenate(dsts) if dsts else np.zeros(0, np.int64)
    both_src = np.concatenate([src, dst])
    both_dst = np.concatenate([dst, src])
    keys = np.unique(both_src * max(n, 1) + both_dst)
    src, dst = keys // max(n, 1), keys % max(n, 1)
    max_dim = max((g.feature_dim(t) for t in types), default=0)
    x = np.zeros((n, max_dim + len(types)), dtype=dtype)
    node_type = np.zeros(n, dtype=np.int64)
    for k, t in enumerate(types):
        lo, hi = offsets[t], offsets[t] + g.num_nodes[t]
        if t in g.features:
            x[lo:hi, :g.feature_dim(t)] = g.features[t]
        x[lo:hi, max_dim + k] = 1.0
        node_type[lo:hi] = k
    return HomoGraph(n, offsets, _frozen(src), _frozen(dst), _frozen(x), _frozen(node_type))


def subgraph(g: HeteroGraph, keep_nodes: Mapping[str, np.ndarray],
             keep_edges: Mapping[str, np.ndarray] | None = None) -> tuple[HeteroGraph, dict[str, np.ndarray]]:
    """Induced subgraph on boolean node masks (types not listed are kept whole).

    ``keep_edges`` optionally further masks edges per relation. Returns the new
    graph and, per node type, the old indices of the kept nodes (so
    ``new -> old`` is ``index_map[t][new]``).
    """
    masks = {t: np.ones(n, dtype=bool) for t, n in g.num_nodes.items()}
    for t, m in keep_nodes.items():
        masks[t] = np.asarray(m, dtype=bool)
    old_of_new = {t: np.flatnonzero(m) for t, m in masks.items()}
    new_of_old = {}
    for t, m in masks.items():
        remap = np.full(len(m), -1, dtype=np.int64)
        remap[m] = np.arange(int(m.sum()))
        new_of_old[t] = remap
    num_nodes = {t: int(m.sum()) for t, m in masks.items()}
    edges = {}
    for name, idx in g.edges.items():
        rel = g.relations[name]
        keep = masks[rel.src_type][idx.src] & masks[rel.dst_type][idx.dst]
        if keep_edges is not None and name in keep_edges:
            keep &= keep_edges[name]
        edges[name] = EdgeIndex(new_of_old[rel.src_type][idx.src[keep]],
                                new_of_old[rel.dst_type][idx.dst[keep]],
                                num_nodes[rel.src_type], presorted=True)
    sub = replace(
        g,
        num_nodes=num_nodes,
        edges=edges,
        features={t: _frozen(x[masks[t]]) for t, x in g.features.items()},
        dates={t: _frozen(d[masks[t]]) for t, d in g.dates.items()},
        meta={t: tuple(m[i] for i in old_of_new[t]) for t, m in g.meta.items()},
        ids={t: tuple(v[i] for i in old_of_new[t]) for t, v in g.ids.items()},
    )
    return sub, old_of_new
