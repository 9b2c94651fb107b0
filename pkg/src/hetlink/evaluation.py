"""Temporal semi-inductive splits, ranking metrics and the transfer harness."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .graph import EdgeIndex, GraphError, HeteroGraph, subgraph
from .training import sample_negatives, stream

DEFAULT_QUANTILES = (0.5, 0.6, 0.7, 0.8, 0.9)


def average_precision(scores, labels) -> float:
    """Sum of ``(recall_k - recall_{k-1}) * precision_k`` down the ranking.

    Scores are ranked descending; ties keep their input order.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].sum() / n_pos)


def auc_roc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC-ROC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass(frozen=True)
class Fold:
    index: int
    cutoff: int
    end: int | None  # start of the next fold's window; None for the last fold

    def train_mask(self, dates: np.ndarray) -> np.ndarray:
        return dates < self.cutoff

    def visible_mask(self, dates: np.ndarray) -> np.ndarray:
        return np.ones(len(dates), dtype=bool) if self.end is None else dates < self.end

    def window_mask(self, dates: np.ndarray) -> np.ndarray:
        return (dates >= self.cutoff) & self.visible_mask(dates)


@dataclass(frozen=True)
class SplitPlan:
    """Cumulative date-based folds.

    Fold ``i`` trains on the graph induced by nodes dated before its cutoff
    and tests on target edges touching a node dated inside
    ``[cutoff_i, cutoff_{i+1})``. Undated node types are always visible.
    """

    folds: tuple[Fold, ...]
    time_type: str = "case"
    fraction: float = 0.9
    n_subsamples: int = 5
    seed: int = 0

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(f.cutoff for f in self.folds)

    def to_dict(self) -> dict:
        return {"time_type": self.time_type, "fraction": self.fraction, "n_subsamples": self.n_subsamples,
                "seed": self.seed, "cutoffs": [str(np.datetime64(c, "D")) for c in self.cutoffs]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitPlan":
        cutoffs = [int(np.datetime64(c, "D").astype(np.int64)) for c in d["cutoffs"]]
        folds = tuple(Fold(i, c, cutoffs[i + 1] if i + 1 < len(cutoffs) else None)
                      for i, c in enumerate(cutoffs))
        return cls(folds, d.get("time_type", "case"), float(d.get("fraction", 0.9)),
                   int(d.get("n_subsamples", 5)), int(d.get("seed", 0)))

    def _hidden_relations(self, g: HeteroGraph) -> set[str]:
        targets = set(g.target_relations)
        return targets | {r for r, rel in g.relations.items() if rel.reverse_of in targets}

    def training_graph(self, g: HeteroGraph, fold: Fold) -> HeteroGraph:
        sub, _ = subgraph(g, {self.time_type: fold.train_mask(g.dates[self.time_type])})
        return sub

    def test_graph(self, g: HeteroGraph, fold: Fold, inductive: bool = False
                   ) -> tuple[HeteroGraph, dict[str, EdgeIndex]]:
        """Message-passing graph at test time plus the held-out target edges.

        Semi-inductive: every node dated before the window end is present, but
        target edges touching the window are hidden and returned as test
        edges. ``inductive=True`` keeps only the window's dated nodes (all of
        them fresh), so nothing seen in training is reused.
        """
        dates = g.dates[self.time_type]
        window = fold.window_mask(dates)
        visible = window if inductive else fold.visible_mask(dates)
        sub, old = subgraph(g, {self.time_type: visible})
        in_window = window[old[self.time_type]]
        hidden = self._hidden_relations(g)
        keep_edges, test_edges = {}, {}
        for r, idx in sub.edges.items():
            if r not in hidden:
                continue
            rel = sub.relations[r]
            touches = np.zeros(len(idx), dtype=bool)
            if rel.src_type == self.time_type:
                touches |= in_window[idx.src]
            if rel.dst_type == self.time_type:
                touches |= in_window[idx.dst]
            keep_edges[r] = ~touches
            if rel.is_target:
                test_edges[r] = idx.select(touches)
        return sub.with_edges({r: sub.edges[r].select(m) for r, m in keep_edges.items()}), test_edges


def temporal_folds(g: HeteroGraph, n_folds: int | None = None, quantiles: Sequence[float] | None = None,
                   time_type: str = "case", fraction: float = 0.9, n_subsamples: int = 5,
                   seed: int = 0) -> SplitPlan:
    """Cutoffs at date quantiles (default 50%..90% for five folds).

    ``n_folds`` defaults to the number of ``quantiles`` when those are given.
    """
    if n_folds is None:
        n_folds = 5 if quantiles is None else len(quantiles)
    if n_folds < 1:
        raise ValueError("n_folds must be at least 1")
    if time_type not in g.dates:
        raise GraphError(f"node type {time_type!r} carries no dates")
    dates = g.dates[time_type]
    if len(dates) != g.num_nodes[time_type]:
        raise GraphError(f"{g.num_nodes[time_type] - len(dates)} {time_type} node(s) lack a date")
    if quantiles is None:
        quantiles = (0.5,) if n_folds == 1 else tuple(np.linspace(0.5, 0.9, n_folds))
    if len(quantiles) != n_folds:
        raise ValueError("one quantile per fold required")
    cutoffs = [int(np.quantile(dates, q, method="higher")) for q in quantiles]
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise GraphError(f"cutoffs {cutoffs} are not strictly increasing; too few distinct dates")
    folds = tuple(Fold(i, c, cutoffs[i + 1] if i + 1 < n_folds else None) for i, c in enumerate(cutoffs))
    plan = SplitPlan(folds, time_type, fraction, n_subsamples, seed)
    for fold in folds:
        _, test = plan.test_graph(g, fold)
        if not any(len(e) for e in test.values()):
            day = np.datetime64(fold.cutoff, "D")
            raise GraphError(f"fold {fold.index} (cutoff {day}) has no test edges")
    return plan


def test_subsamples(n_edges: int, fraction: float = 0.9, n: int = 5, seed: int = 0) -> list[np.ndarray]:
    """``n`` sorted index sets of ``max(1, floor(fraction * n_edges))`` edges drawn without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if n_edges == 0:
        raise ValueError("cannot subsample an empty test set")
    size = max(1, int(math.floor(fraction * n_edges)))
    rng = np.random.default_rng(seed)
    if size == n_edges:
        return [np.arange(n_edges) for _ in range(n)]
    return [np.sort(rng.choice(n_edges, size=size, replace=False)) for _ in range(n)]


test_subsamples.__test__ = False  # not a pytest test despite the name


@dataclass(frozen=True)
class MetricRow:
    model: str
    dataset: str
    fold: int
    subsample: int
    relation: str
    ap: float
    auc_roc: float


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)

    def extend(self, other: "MetricsReport") -> "MetricsReport":
        self.rows.extend(other.rows)
        return self

    def cells(self) -> dict[tuple, dict[str, float]]:
        """Macro average over relations per (model, dataset, fold, subsample)."""
        grouped: dict[tuple, list[MetricRow]] = {}
        for row in self.rows:
            grouped.setdefault((row.model, row.dataset, row.fold, row.subsample), []).append(row)
        return {k: {"ap": float(np.mean([r.ap for r in v])), "auc_roc": float(np.mean([r.auc_roc for r in v]))}
                for k, v in grouped.items()}

    def summary(self) -> dict[tuple[str, str], dict[str, float]]:
        """Mean and standard deviation of the macro metrics over fold x subsample cells."""
        by_run: dict[tuple, list[dict]] = {}
        for (model, dataset, _, _), cell in self.cells().items():
            by_run.setdefault((model, dataset), []).append(cell)
        out = {}
        for key, cells in by_run.items():
            ap = np.array([c["ap"] for c in cells])
            auc = np.array([c["auc_roc"] for c in cells])
            out[key] = {"ap_mean": float(ap.mean()), "ap_std": float(ap.std()),
                        "auc_roc_mean": float(auc.mean()), "auc_roc_std": float(auc.std()),
                        "n_cells": len(cells)}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f.name for f in fields(MetricRow)])
        for r in self.rows:
            writer.writerow([r.model, r.dataset, r.fold, r.subsample, r.relation, repr(r.ap), repr(r.auc_roc)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsReport":
        rows = [MetricRow(d["model"], d["dataset"], int(d["fold"]), int(d["subsample"]), d["relation"],
                          float(d["ap"]), float(d["auc_roc"])) for d in csv.DictReader(io.StringIO(text))]
        return cls(rows)

    def to_markdown(self) -> str:
        """Table with one row per model and AP / AUC-ROC columns per dataset, mean±σ in %."""
        summary = self.summary()
        models = list(dict.fromkeys(k[0] for k in summary))
        datasets = list(dict.fromkeys(k[1] for k in summary))
        head = "| Model | " + " | ".join(f"{d} AP | {d} AUC-ROC" for d in datasets) + " |"
        sep = "|---|" + "---|---|" * len(datasets)
        lines = [head, sep]
        for m in models:
            cols = []
            for d in datasets:
                s = summary.get((m, d))
                if s is None:
                    cols += ["-", "-"]
                else:
                    cols += [f"{100 * s['ap_mean']:.1f} ± {100 * s['ap_std']:.2f}",
                             f"{100 * s['auc_roc_mean']:.1f} ± {100 * s['auc_roc_std']:.2f}"]
            lines.append(f"| {m} | " + " | ".join(cols) + " |")
        return "\n".join(lines) + "\n"


def _edge_union(*parts: EdgeIndex) -> EdgeIndex:
    n_src = max(p.n_src for p in parts)
    return EdgeIndex(np.concatenate([p.src for p in parts]), np.concatenate([p.dst for p in parts]),
                     n_src).dedup()


def score_fold(model, tg: HeteroGraph, test_edges: Mapping[str, EdgeIndex], plan: SplitPlan, fold: int,
               model_name: str = "", dataset: str = "", eval_seed: int = 0) -> list[MetricRow]:
    """Score every subsample of every target relation of one fold.

    Each subsample of positives is paired with an equal number of
    destination-corrupted negatives from a seed fixed per
    (fold, subsample, relation), so all models see the same negatives.
    """
    embeddings = model.transform(tg)
    rows = []
    relations = [r for r in tg.target_relations if r in test_edges and len(test_edges[r])]
    subsets = {r: test_subsamples(len(test_edges[r]), plan.fraction, plan.n_subsamples,
                                  seed=[plan.seed, fold, k]) for k, r in enumerate(relations)}
    for s in range(plan.n_subsamples):
        for k, r in enumerate(relations):
            idx = test_edges[r]
            chosen = np.zeros(len(idx), dtype=bool)
            chosen[subsets[r][s]] = True
            pos = idx.select(chosen)
            known = _edge_union(tg.edges[r], idx)
            n_src, n_dst = sample_negatives(tg, r, 1, stream(eval_seed, fold, s, k), positives=pos,
                                            exclude=known)
            scores = np.concatenate([
                model.decision_function(tg, r, pos.src, pos.dst, embeddings=embeddings),
                model.decision_function(tg, r, n_src, n_dst, embeddings=embeddings),
            ])
            labels = np.r_[np.ones(len(pos), dtype=bool), np.zeros(len(n_src), dtype=bool)]
            rows.append(MetricRow(model_name, dataset, fold, s, r, average_precision(scores, labels),
                                  auc_roc(scores, labels)))
    return rows


def _per_fold(models, plan: SplitPlan) -> Mapping[int, object]:
    if isinstance(models, Mapping):
        return models
    if isinstance(models, Sequence):
        return dict(enumerate(models))
    return {f.index: models for f in plan.folds}


def evaluate(models, g: HeteroGraph, plan: SplitPlan, model_name: str = "", dataset: str = "",
             eval_seed: int = 0) -> MetricsReport:
    """Semi-inductive evaluation; ``models`` holds one fitted model per fold
    (a mapping or sequence indexed by fold, or a single model for all folds)."""
    per_fold = _per_fold(models, plan)
    report = MetricsReport()
    for fold in plan.folds:
        tg, test = plan.test_graph(g, fold)
        report.rows.extend(score_fold(per_fold[fold.index], tg, test, plan, fold.index, model_name,
                                      dataset, eval_seed))
    return report


def transfer_evaluate(models, g_target: HeteroGraph, plan: SplitPlan,
                      relation_map: Mapping[str, str] | None = None, fallback: str | None = None,
                      model_name: str = "", dataset: str = "", eval_seed: int = 0) -> MetricsReport:
    """Apply frozen models to the fresh nodes of each fold of ``g_target``.

    Relations of ``g_target`` unknown to a model are scored with the weights
    of ``relation_map[name]`` or, failing that, of ``fallback``.
    """
    per_fold = _per_fold(models, plan)
    report = MetricsReport()
    for fold in plan.folds:
        model = per_fold[fold.index]
        if getattr(model, "enrichment_plan_", None) is not None:
            raise GraphError("transfer requires a model trained without meta-feature enrichment")
        tg, test = plan.test_graph(g_target, fold, inductive=True)
        if not any(len(e) for e in test.values()):
            continue
        adapted = model.adapt(tg, relation_map=relation_map, fallback=fallback)
        report.rows.extend(score_fold(adapted, tg, test, plan, fold.index, model_name, dataset, eval_seed))
    return report


@dataclass
class TransferResult:
    datasets: tuple[str, ...]
    matrix: dict[str, np.ndarray]  # metric -> [train dataset, eval dataset]
    semi_inductive: dict[str, np.ndarray]  # metric -> per train dataset
    report: MetricsReport

    def deviation(self, metric: str) -> np.ndarray:
        """Diagonal: fully inductive minus semi-inductive score of the same dataset.
        Off-diagonal: transfer score minus the within-dataset score of the evaluation dataset."""
        m = self.matrix[metric]
        out = m - np.diag(m)[None, :]
        np.fill_diagonal(out, np.diag(m) - self.semi_inductive[metric])
        return out

    def to_markdown(self) -> str:
        lines = []
        for metric in ("ap", "auc_roc"):
            m, dev = self.matrix[metric], self.deviation(metric)
            lines.append(f"### {metric.upper()} (train ↓ / eval →), deviation in parentheses\n")
            lines.append("| train \\ eval | " + " | ".join(self.datasets) + " |")
            lines.append("|---|" + "---|" * len(self.datasets))
            for i, a in enumerate(self.datasets):
                cells = [f"{100 * m[i, j]:.1f} ({100 * dev[i, j]:+.1f})" for j in range(len(self.datasets))]
                lines.append(f"| {a} | " + " | ".join(cells) + " |")
            lines.append("")
        return "\n".join(lines)

    def to_rows(self) -> list[dict]:
        rows = []
        for metric in ("ap", "auc_roc"):
            dev = self.deviation(metric)
            for i, a in enumerate(self.datasets):
                for j, b in enumerate(self.datasets):
                    rows.append({"metric": metric, "train": a, "eval": b, "score": float(self.matrix[metric][i, j]),
                                 "deviation": float(dev[i, j])})
        return rows


def transfer_matrix(datasets: Mapping[str, tuple[HeteroGraph, SplitPlan]], fit_model: Callable,
                    model_name: str = "", relation_map: Mapping[str, str] | None = None,
                    fallback: str | None = None, eval_seed: int = 0) -> TransferResult:
    """Train per fold on every dataset and evaluate on every dataset.

    ``fit_model(graph, dataset, fold)`` returns a model fitted on the fold's
    training graph without enrichment.
    """
    names = tuple(datasets)
    k = len(names)
    report = MetricsReport()
    matrix = {m: np.zeros((k, k)) for m in ("ap", "auc_roc")}
    semi = {m: np.zeros(k) for m in ("ap", "auc_roc")}
    for i, a in enumerate(names):
        g_a, plan_a = datasets[a]
        models = {f.index: fit_model(plan_a.training_graph(g_a, f), a, f.index) for f in plan_a.folds}
        within = evaluate(models, g_a, plan_a, model_name, a, eval_seed)
        report.extend(within)
        s = within.summary()[(model_name, a)]
        semi["ap"][i], semi["auc_roc"][i] = s["ap_mean"], s["auc_roc_mean"]
        for j, b in enumerate(names):
            g_b, plan_b = datasets[b]
            label = f"{a}->{b}"
            if len(plan_b.folds) != len(plan_a.folds):
                raise ValueError("transfer needs the same number of folds on every dataset")
            rep = transfer_evaluate(models, g_b, plan_b, relation_map, fallback, model_name, label, eval_seed)
            summary = rep.summary().get((model_name, label))
            if summary is None:
                raise GraphError(f"transfer {label} produced no scored test edges")
            matrix["ap"][i, j] = summary["ap_mean"]
            matrix["auc_roc"][i, j] = summary["auc_roc_mean"]
            report.extend(rep)
    return TransferResult(names, matrix, semi, report)
