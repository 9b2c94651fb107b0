"""Run configuration and the evaluate / ablate / transfer experiment drivers."""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .autograd import GradCheckReport, grad_check, precision
from .estimators import MODEL_PRESETS, make_model
from .evaluation import MetricsReport, SplitPlan, TransferResult, evaluate, temporal_folds, transfer_matrix
from .graph import HeteroGraph, RelationType, add_reverse_relations, build_graph
from .io import load_graph, save_checkpoint, write_loss_csv, write_manifest
from .models import ModelConfig, init_params
from .synthetic import generate_preset
from .training import TrainConfig, reconstruction_loss, stream

logger = logging.getLogger(__name__)

MODES = ("evaluate", "ablate", "transfer")
FAILURE_MARKER = "FAILED"

# each "+" row switches one component on in the plain heterogeneous encoder;
# each "-" row switches one component off in the full model
ABLATION_LADDER: tuple[tuple[str, dict], ...] = (
    ("HGE", MODEL_PRESETS["hge"]),
    ("+ interleave", {**MODEL_PRESETS["hge"], "interleave_decoder": True}),
    ("+ cat all", {**MODEL_PRESETS["hge"], "concat_all": True}),
    ("+ edge drop", {**MODEL_PRESETS["hge"], "edge_dropout": 0.5}),
    ("- residual", {**MODEL_PRESETS["r-hge"], "use_residual": False}),
    ("- interleave", {**MODEL_PRESETS["r-hge"], "interleave_decoder": False}),
    ("R-HGE", MODEL_PRESETS["r-hge"]),
)


@dataclass
class DatasetSpec:
    """A graph archive (``path``) or a synthetic preset with overrides."""

    name: str
    path: str | None = None
    preset: str | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.path is None) == (self.preset is None):
            raise ValueError(f"dataset {self.name!r} needs exactly one of path or preset")

    def load(self, seed: int) -> HeteroGraph:
        if self.path is not None:
            return load_graph(self.path)
        overrides = dict(self.overrides)
        return generate_preset(self.preset, seed=overrides.pop("seed", seed), **overrides)


@dataclass
class RunConfig:
    """Everything a run needs; serialisable to and from JSON.

    ``model_params`` is passed to every model (keys an estimator does not
    know are ignored by the feature-only baseline). ``split`` holds keyword
    arguments of :func:`~hetlink.evaluation.temporal_folds`.
    """

    mode: str = "evaluate"
    datasets: list = field(default_factory=lambda: [DatasetSpec("lio-like", preset="lio-like")])
    models: list = field(default_factory=lambda: ["r-hge"])
    model_params: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    out: str = "runs/latest"
    seed: int = 0
    relation_map: dict = field(default_factory=dict)
    fallback: str | None = None
    save_checkpoints: bool = True

    def __post_init__(self):
        self.datasets = [d if isinstance(d, DatasetSpec) else DatasetSpec(**d) for d in self.datasets]
        self.models = list(self.models)

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError(f"dataset names must be unique, got {names}")
        for d in self.datasets:
            if d.path is not None and not Path(d.path).exists():
                raise FileNotFoundError(f"dataset {d.name!r}: {d.path} does not exist")
        if self.mode == "transfer" and len(self.datasets) < 2:
            raise ValueError("transfer mode needs at least two datasets")
        if self.mode != "ablate":
            for m in self.models:
                make_model(m)  # raises on unknown names
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["datasets"] = [asdict(s) for s in self.datasets]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        d = dict(d.get("config", d))  # a run manifest embeds its config
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ExperimentResult:
    out: Path
    report: MetricsReport
    files: list[str]
    transfer: dict[str, TransferResult] = field(default_factory=dict)


def _split(g: HeteroGraph, cfg: RunConfig) -> SplitPlan:
    return temporal_folds(g, **{"seed": cfg.seed, **cfg.split})


def _fit(name: str, params: Mapping, cfg: RunConfig, graph: HeteroGraph, out: Path, fold: int, files: list):
    model = make_model(name, **{**cfg.model_params, **params, "random_state": cfg.seed}) \
        if name in ("sgd", *MODEL_PRESETS) else None
    if model is None:
        raise ValueError(f"unknown model {name!r}")
    model.fit(graph)
    out.mkdir(parents=True, exist_ok=True)
    if hasattr(model, "loss_curve_"):
        files.append(str(write_loss_csv(out / f"loss_{fold}.csv", model.loss_curve_, model.relation_loss_curve_)))
    if cfg.save_checkpoints:
        files.append(str(save_checkpoint(model, out / f"checkpoint_{fold}.json")))
    return model


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in label).strip("_") or "model"


def summary_rows(report: MetricsReport) -> list[dict]:
    return [{"model": m, "dataset": d, **s} for (m, d), s in report.summary().items()]


def _summary_csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    cols = ["model", "dataset", "ap_mean", "ap_std", "auc_roc_mean", "auc_roc_std", "n_cells"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return buf.getvalue()


def _run_semi_inductive(cfg: RunConfig, entries: list[tuple[str, str, dict]], out: Path, files: list
                        ) -> MetricsReport:
    report = MetricsReport()
    for spec in cfg.datasets:
        g = spec.load(cfg.seed)
        plan = _split(g, cfg)
        for label, preset, params in entries:
            sub = out / _slug(spec.name) / _slug(label)
            models = {f.index: _fit(preset, params, cfg, plan.training_graph(g, f), sub, f.index, files)
                      for f in plan.folds}
            report.extend(evaluate(models, g, plan, label, spec.name, eval_seed=cfg.seed))
            logger.info("%s on %s: %s", label, spec.name, report.summary()[(label, spec.name)])
    return report


def _run_transfer(cfg: RunConfig, out: Path, files: list) -> tuple[MetricsReport, dict[str, TransferResult]]:
    datasets = {}
    for spec in cfg.datasets:
        g = spec.load(cfg.seed)
        datasets[spec.name] = (g, _split(g, cfg))
    report, results = MetricsReport(), {}
    for name in cfg.models:
        def fit(graph, dataset, fold, name=name):
            sub = out / _slug(dataset) / _slug(name)
            return _fit(name, {"enrich": False}, cfg, graph, sub, fold, files)

        res = transfer_matrix(datasets, fit, name, cfg.relation_map or None, cfg.fallback, eval_seed=cfg.seed)
        results[name] = res
        report.extend(res.report)
    return report, results


def run_experiment(cfg: RunConfig, command: str | None = None) -> ExperimentResult:
    """Split, fit, evaluate and write reports into ``cfg.out``.

    On failure a ``FAILED`` marker holding the traceback is written, the
    manifest records the error, partial outputs are kept and the exception
    propagates.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILURE_MARKER).unlink(missing_ok=True)
    config = cfg.to_dict()
    files: list[str] = []
    write_manifest(out / "manifest.json", config, cfg.seed, "running", command=command)
    try:
        transfer = {}
        if cfg.mode == "evaluate":
            report = _run_semi_inductive(cfg, [(m, m, {}) for m in cfg.models], out, files)
        elif cfg.mode == "ablate":
            base = cfg.models[0] if cfg.models and cfg.models[0] in ("hge", "r-hge") else "r-hge"
            entries = [(label, base, params) for label, params in ABLATION_LADDER]
            report = _run_semi_inductive(cfg, entries, out, files)
        else:
            report, transfer = _run_transfer(cfg, out, files)

        (out / "metrics.csv").write_text(report.to_csv())
        rows = summary_rows(report)
        (out / "summary.csv").write_text(_summary_csv(rows))
        summary = [f"# {cfg.mode} run (seed {cfg.seed})\n", report.to_markdown()]
        for name, res in transfer.items():
            summary.append(f"\n## Transfer matrix: {name}\n")
            summary.append(res.to_markdown())
            with open(out / f"transfer_{_slug(name)}.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, ["metric", "train", "eval", "score", "deviation"], lineterminator="\n")
                w.writeheader()
                w.writerows({**r, "score": repr(r["score"]), "deviation": repr(r["deviation"])}
                            for r in res.to_rows())
            files.append(str(out / f"transfer_{_slug(name)}.csv"))
        (out / "summary.md").write_text("\n".join(summary))
        files += [str(out / "metrics.csv"), str(out / "summary.csv"), str(out / "summary.md")]
    except BaseException as exc:
        (out / FAILURE_MARKER).write_text(traceback.format_exc())
        write_manifest(out / "manifest.json", config, cfg.seed, "failed", files, command, error=repr(exc))
        raise
    write_manifest(out / "manifest.json", config, cfg.seed, "ok", files, command)
    return ExperimentResult(out, report, files, transfer)


# gradient check ----------------------------------------------------------

def gradcheck_graph(seed: int = 0, feature_dim: int = 4) -> HeteroGraph:
    """Ten nodes (6 cases, 3 laws, 1 court), two target relations and one meta relation."""
    rng = np.random.default_rng(seed)
    cc = [(i, j) for i in range(6) for j in range(i) if rng.random() < 0.5] or [(1, 0)]
    cl = [(i, j) for i in range(6) for j in range(3) if rng.random() < 0.4] or [(0, 0)]
    return build_graph(
        num_nodes={"case": 6, "law": 3, "court": 1},
        relations=[RelationType("case-case", "case", "case", is_target=True),
                   RelationType("case-law", "case", "law", is_target=True),
                   RelationType("case-court", "case", "court", is_meta=True)],
        edges={"case-case": tuple(zip(*cc)), "case-law": tuple(zip(*cl)),
               "case-court": (np.arange(6), np.zeros(6, dtype=np.int64))},
        features={"case": rng.normal(size=(6, feature_dim)), "law": rng.normal(size=(3, feature_dim))},
        meta_node_types=["court"],
    )


def run_gradcheck(seed: int = 0, eps: float = 1e-3, tolerance: float = 1e-3,
                  layer_sizes=(8, 8)) -> GradCheckReport:
    """Finite-difference check of the full R-HGE training loss in float64."""
    g = add_reverse_relations(gradcheck_graph(seed))
    model_cfg = ModelConfig(layer_sizes=tuple(layer_sizes))
    train_cfg = TrainConfig(epochs=1, seed=seed)
    with precision(np.float64):
        params = init_params(g, model_cfg, stream(seed, 0xFFFF), dtype=np.float64)
        return grad_check(lambda: reconstruction_loss(g, model_cfg, params, train_cfg, 0)[0], params,
                          eps=eps, tolerance=tolerance)
