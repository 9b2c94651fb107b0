"""JSON-lines graph archives, checkpoints, loss curves and run manifests.

A graph archive is a directory holding

``schema.json``
    node types (count, feature width and dtype, flags) and relation
    declarations (endpoint types, target/meta/reverse flags).
``nodes.jsonl``
    one object per node: ``id``, ``type``, optional ``date`` (ISO day),
    ``meta`` map and ``features`` array.
``edges.jsonl``
    one object per edge: ``src``, ``dst`` (node IDs) and ``relation``.
``features_<type>.npy`` (optional)
    dense feature matrix replacing the per-node ``features`` arrays.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autograd import Tensor
from .enrichment import EnrichmentPlan
from .graph import DimensionError, GraphError, HeteroGraph, RelationType, SchemaError, build_graph

SCHEMA_FILE, NODES_FILE, EDGES_FILE = "schema.json", "nodes.jsonl", "edges.jsonl"
FORMAT_VERSION = 1


class ArchiveError(GraphError):
    """Malformed archive content; the message names file and line."""


def _iso(day: int) -> str:
    return str(np.datetime64(int(day), "D"))


def _parse_day(value, where: str) -> int:
    if isinstance(value, bool):
        raise ArchiveError(f"{where}: invalid date {value!r}")
    if isinstance(value, int):
        return value
    try:
        return int(np.datetime64(str(value), "D").astype(np.int64))
    except ValueError as exc:
        raise ArchiveError(f"{where}: invalid date {value!r}") from exc


def save_graph(g: HeteroGraph, path, sidecar_features: bool = False) -> Path:
    """Write ``g`` as an archive directory; returns the directory path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    node_types = []
    for t, n in g.num_nodes.items():
        x = g.features.get(t)
        entry = {"name": t, "count": n, "feature_dim": None if x is None else int(x.shape[1]),
                 "feature_dtype": None if x is None else x.dtype.name, "dated": t in g.dates,
                 "has_meta": t in g.meta, "has_ids": t in g.ids, "meta_node": t in g.meta_node_types}
        if x is not None and sidecar_features:
            entry["features_file"] = f"features_{t}.npy"
            np.save(root / entry["features_file"], np.asarray(x))
        node_types.append(entry)
    relations = [{"name": r.name, "src": r.src_type, "dst": r.dst_type, "target": r.is_target,
                  "meta": r.is_meta, "reverse_of": r.reverse_of} for r in g.relations.values()]
    schema = {"format_version": FORMAT_VERSION, "node_types": node_types, "relations": relations}
    (root / SCHEMA_FILE).write_text(json.dumps(schema, indent=2) + "\n")

    ids = {t: g.ids[t] if t in g.ids else tuple(f"{t}:{i}" for i in range(n)) for t, n in g.num_nodes.items()}
    with open(root / NODES_FILE, "w") as fh:
        for t, n in g.num_nodes.items():
            x = None if sidecar_features else g.features.get(t)
            for i in range(n):
                rec = {"id": ids[t][i], "type": t}
                if t in g.dates:
                    rec["date"] = _iso(g.dates[t][i])
                if t in g.meta:
                    rec["meta"] = g.meta[t][i]
                if x is not None:
                    rec["features"] = x[i].tolist()
                fh.write(json.dumps(rec) + "\n")
    with open(root / EDGES_FILE, "w") as fh:
        for r, idx in g.edges.items():
            rel = g.relations[r]
            for s, d in zip(idx.src.tolist(), idx.dst.tolist()):
                fh.write(json.dumps({"src": ids[rel.src_type][s], "dst": ids[rel.dst_type][d], "relation": r})
                         + "\n")
    return root


def _read_jsonl(path: Path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ArchiveError(f"{path.name}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ArchiveError(f"{path.name}:{lineno}: expected a JSON object")
            yield lineno, rec


def _load_schema(root: Path) -> tuple[dict, list[RelationType]]:
    try:
        schema = json.loads((root / SCHEMA_FILE).read_text())
    except FileNotFoundError as exc:
        raise ArchiveError(f"{root}: missing {SCHEMA_FILE}") from exc
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{SCHEMA_FILE}: malformed JSON ({exc.msg})") from exc
    types = {}
    for entry in schema.get("node_types", []):
        entry = {"name": entry} if isinstance(entry, str) else dict(entry)
        types[entry["name"]] = entry
    relations = []
    for r in schema.get("relations", []):
        for key in ("name", "src", "dst"):
            if key not in r:
                raise SchemaError(f"{SCHEMA_FILE}: relation declaration without {key!r}: {r}")
        for end in (r["src"], r["dst"]):
            if end not in types:
                raise SchemaError(f"{SCHEMA_FILE}: relation {r['name']!r} uses undeclared node type {end!r}")
        relations.append(RelationType(r["name"], r["src"], r["dst"], is_target=bool(r.get("target", False)),
                                      is_reverse=r.get("reverse_of") is not None, is_meta=bool(r.get("meta", False)),
                                      reverse_of=r.get("reverse_of")))
    return types, relations


def load_graph(path) -> HeteroGraph:
    """Read an archive written by :func:`save_graph` or produced by hand.

    Node indices follow file order within each type. Errors name the
    offending file and line.
    """
    root = Path(path)
    types, relations = _load_schema(root)
    index: dict[str, dict[str, int]] = {t: {} for t in types}
    dates: dict[str, list] = {t: [] for t in types}
    meta: dict[str, list] = {t: [] for t in types}
    feats: dict[str, list] = {t: [] for t in types}
    for lineno, rec in _read_jsonl(root / NODES_FILE):
        where = f"{NODES_FILE}:{lineno}"
        t, node_id = rec.get("type"), rec.get("id")
        if t not in types:
            raise SchemaError(f"{where}: node type {t!r} is not declared in {SCHEMA_FILE}")
        if node_id is None:
            raise ArchiveError(f"{where}: node without id")
        node_id = str(node_id)
        if node_id in index[t]:
            raise ArchiveError(f"{where}: duplicate {t} id {node_id!r}")
        index[t][node_id] = len(index[t])
        dates[t].append(None if rec.get("date") is None else _parse_day(rec["date"], where))
        m = rec.get("meta", {})
        if not isinstance(m, dict):
            raise ArchiveError(f"{where}: meta must be an object")
        meta[t].append(m)
        x = rec.get("features")
        if x is not None:
            try:
                x = np.asarray(x, dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise ArchiveError(f"{where}: features must be a number array") from exc
            if x.ndim != 1:
                raise ArchiveError(f"{where}: features must be a flat number array")
            dim = types[t].get("feature_dim")
            if dim is not None and len(x) != dim:
                raise DimensionError(f"{where}: {t} features have width {len(x)}, schema says {dim}")
        feats[t].append(x)

    num_nodes = {t: len(index[t]) for t in types}
    for t, entry in types.items():
        if entry.get("count") is not None and entry["count"] != num_nodes[t]:
            raise SchemaError(f"{SCHEMA_FILE} declares {entry['count']} {t} nodes, {NODES_FILE} has {num_nodes[t]}")

    features = {}
    for t, entry in types.items():
        dtype = np.dtype(entry.get("feature_dtype") or "float32")
        if entry.get("features_file"):
            x = np.load(root / entry["features_file"])
            if x.shape[0] != num_nodes[t]:
                raise DimensionError(f"{entry['features_file']}: {x.shape[0]} rows for {num_nodes[t]} {t} nodes")
            features[t] = x.astype(dtype, copy=False)
            continue
        rows = feats[t]
        present = [x is not None for x in rows]
        if not any(present):
            continue
        if not all(present):
            missing = present.index(False)
            raise DimensionError(f"{t} node {missing} has no features while others do")
        widths = {len(x) for x in rows}
        if len(widths) > 1:
            raise DimensionError(f"{t} feature arrays have differing widths {sorted(widths)}")
        features[t] = np.stack(rows).astype(dtype)

    date_arrays = {}
    for t, d in dates.items():
        given = [v is not None for v in d]
        if any(given):
            if not all(given):
                raise ArchiveError(f"{t} node {given.index(False)} has no date while others do")
            date_arrays[t] = np.asarray(d, dtype=np.int64)

    rel_by_name = {r.name: r for r in relations}
    src_lists = {r: [] for r in rel_by_name}
    dst_lists = {r: [] for r in rel_by_name}
    for lineno, rec in _read_jsonl(root / EDGES_FILE):
        where = f"{EDGES_FILE}:{lineno}"
        r = rec.get("relation")
        if r not in rel_by_name:
            raise SchemaError(f"{where}: relation {r!r} is not declared in {SCHEMA_FILE}")
        rel = rel_by_name[r]
        for key, t, out in (("src", rel.src_type, src_lists[r]), ("dst", rel.dst_type, dst_lists[r])):
            node = index[t].get(str(rec.get(key)))
            if node is None:
                raise ArchiveError(f"{where}: {key} {rec.get(key)!r} is not a known {t} node")
            out.append(node)

    keep_meta = {t for t, e in types.items() if e.get("has_meta", any(meta[t]))}
    keep_ids = {t for t, e in types.items() if e.get("has_ids", True)}
    return build_graph(
        num_nodes=num_nodes,
        relations=relations,
        edges={r: (src_lists[r], dst_lists[r]) for r in rel_by_name},
        features=features,
        dates=date_arrays,
        meta={t: meta[t] for t in types if t in keep_meta},
        ids={t: list(index[t]) for t in types if t in keep_ids},
        meta_node_types=[t for t, e in types.items() if e.get("meta_node")],
    )


# checkpoints -----------------------------------------------------------------

def encode_array(x: np.ndarray) -> dict:
    """Lossless JSON form of an array (little-endian bytes, base64)."""
    x = np.ascontiguousarray(x)
    return {"shape": list(x.shape), "dtype": x.dtype.name,
            "data": base64.b64encode(x.astype(x.dtype.newbyteorder("<")).tobytes()).decode("ascii")}


def decode_array(doc: Mapping) -> np.ndarray:
    dtype = np.dtype(doc["dtype"]).newbyteorder("<")
    x = np.frombuffer(base64.b64decode(doc["data"]), dtype=dtype).reshape(doc["shape"])
    return x.astype(x.dtype.newbyteorder("="))


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def checkpoint_dict(model) -> dict:
    from .estimators import GraphLinkPredictor, SGDLinkPredictor

    doc = {"format_version": FORMAT_VERSION, "estimator": type(model).__name__,
           "params": _jsonable(model.get_params())}
    if isinstance(model, GraphLinkPredictor):
        plan = model.enrichment_plan_
        doc["state"] = {
            "weights": {k: encode_array(p.data) for k, p in model.params_.items()},
            "enrichment_plan": None if plan is None else json.loads(plan.to_json()),
            "loss_curve": list(model.loss_curve_),
            "relation_loss_curve": list(model.relation_loss_curve_),
            "target_relations": list(model.target_relations_),
        }
    elif isinstance(model, SGDLinkPredictor):
        doc["state"] = {"coef": {r: encode_array(c) for r, c in model.coef_.items()},
                        "intercept": dict(model.intercept_)}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    return doc


def model_from_checkpoint(doc: Mapping):
    from .estimators import GraphLinkPredictor, SGDLinkPredictor

    state = doc["state"]
    params = dict(doc["params"])
    if doc["estimator"] == "GraphLinkPredictor":
        for key in ("layer_sizes", "enrichment_attributes"):
            if isinstance(params.get(key), list):
                params[key] = tuple(tuple(v) if isinstance(v, list) else v for v in params[key])
        model = GraphLinkPredictor(**params)
        model.params_ = {k: Tensor(decode_array(v), requires_grad=True, dtype=np.dtype(v["dtype"]))
                         for k, v in state["weights"].items()}
        plan = state["enrichment_plan"]
        model.enrichment_plan_ = None if plan is None else EnrichmentPlan.from_json(json.dumps(plan))
        model.loss_curve_ = list(state["loss_curve"])
        model.relation_loss_curve_ = [dict(d) for d in state["relation_loss_curve"]]
        model.target_relations_ = tuple(state["target_relations"])
        return model
    if doc["estimator"] == "SGDLinkPredictor":
        model = SGDLinkPredictor(**params)
        model.coef_ = {r: decode_array(c) for r, c in state["coef"].items()}
        model.intercept_ = {r: float(b) for r, b in state["intercept"].items()}
        return model
    raise ValueError(f"unknown estimator {doc['estimator']!r} in checkpoint")


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(model), sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    return model_from_checkpoint(json.loads(Path(path).read_text()))


# reports -------------------------------------------------------------------

def write_loss_csv(path, losses: Sequence[float], relation_losses: Sequence[Mapping[str, float]] = ()) -> Path:
    """Epoch, total loss and one column per target relation."""
    relations = list(dict.fromkeys(r for d in relation_losses for r in d))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", *relations])
        for e, loss in enumerate(losses):
            per = relation_losses[e] if e < len(relation_losses) else {}
            w.writerow([e, repr(float(loss)), *(repr(float(per[r])) if r in per else "" for r in relations)])
    return Path(path)


def read_loss_csv(path) -> tuple[list[float], list[dict[str, float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    losses = [float(r["loss"]) for r in rows]
    per = [{k: float(v) for k, v in r.items() if k not in ("epoch", "loss") and v != ""} for r in rows]
    return losses, per


def config_hash(config: Mapping) -> str:
    blob = json.dumps(_jsonable(dict(config)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def software_version() -> str:
    from . import __version__

    return __version__


def write_manifest(path, config: Mapping, seed: int, status: str, outputs: Sequence[str] = (),
                   command: str | None = None, error: str | None = None) -> Path:
    """Run manifest: config (with hash), seed, software versions and outcome."""
    doc = {
        "config": _jsonable(dict(config)),
        "config_hash": config_hash(config),
        "seed": seed,
        "version": software_version(),
        "numpy": np.__version__,
        "python": platform.python_version(),
        "command": command,
        "status": status,
        "outputs": sorted(outputs),
    }
    if error is not None:
        doc["error"] = error
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return Path(path)


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
