"""Command line entry point: ``hetlink <subcommand> [options]``.

Subcommands
-----------
generate   write a synthetic graph archive
split      compute date-based folds and write ``split.json``
train      fit one model and write its checkpoint and loss curve
evaluate   semi-inductive evaluation of one or more models
ablate     the component ladder from plain HGE to R-HGE
transfer   train/evaluate matrix across datasets without enrichment
gradcheck  finite-difference check of the R-HGE loss gradients

Exit status is 0 only when every stage succeeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from .experiment import DatasetSpec, RunConfig, run_experiment, run_gradcheck
from .evaluation import temporal_folds
from .io import load_graph, save_checkpoint, save_graph, write_loss_csv, write_manifest
from .estimators import make_model
from .synthetic import generate_preset

log = logging.getLogger("hetlink")

PRESETS = ("old-like", "lio-like")


def _load_config(args) -> dict:
    return json.loads(Path(args.config).read_text()) if args.config else {}


def _graph(args, seed: int):
    if args.graph:
        return load_graph(args.graph)
    return generate_preset(args.preset or "lio-like", seed=seed)


def _run_config(args, mode: str) -> RunConfig:
    doc = _load_config(args)
    doc = dict(doc.get("config", doc))
    doc["mode"] = mode
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out:
        doc["out"] = args.out
    if args.graph:
        doc["datasets"] = [{"name": Path(args.graph).name, "path": args.graph}]
    elif args.preset:
        doc["datasets"] = [{"name": args.preset, "preset": args.preset}]
    if mode == "transfer" and "datasets" not in doc:
        doc["datasets"] = [asdict_spec(DatasetSpec(p, preset=p)) for p in PRESETS]
    if getattr(args, "models", None):
        doc["models"] = args.models
    if getattr(args, "epochs", None):
        doc.setdefault("model_params", {})["epochs"] = args.epochs
    return RunConfig.from_dict(doc)


def asdict_spec(spec: DatasetSpec) -> dict:
    return {"name": spec.name, "path": spec.path, "preset": spec.preset, "overrides": dict(spec.overrides)}


def cmd_generate(args) -> int:
    seed = args.seed or 0
    doc = _load_config(args)
    g = generate_preset(args.preset or doc.pop("preset", "lio-like"), seed=seed, **doc)
    out = Path(args.out or "graph")
    save_graph(g, out, sidecar_features=args.sidecar)
    print(f"wrote {g!r} to {out}")
    return 0


def cmd_split(args) -> int:
    seed = args.seed or 0
    g = _graph(args, seed)
    kwargs = _load_config(args).get("split", {})
    plan = temporal_folds(g, **{"seed": seed, **kwargs})
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    doc = plan.to_dict()
    doc["folds"] = []
    for fold in plan.folds:
        tg, test = plan.test_graph(g, fold)
        doc["folds"].append({"index": fold.index, "train_nodes": int(fold.train_mask(g.dates[plan.time_type]).sum()),
                             "test_edges": {r: len(e) for r, e in test.items()}})
    (out / "split.json").write_text(json.dumps(doc, indent=2) + "\n")
    for f in doc["folds"]:
        print(f"fold {f['index']}: {f['train_nodes']} training {plan.time_type} nodes, test edges {f['test_edges']}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args, "evaluate")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.datasets[0].load(cfg.seed)
    if args.fold is not None:
        plan = temporal_folds(g, **{"seed": cfg.seed, **cfg.split})
        g = plan.training_graph(g, plan.folds[args.fold])
    tag = "all" if args.fold is None else str(args.fold)
    files = []
    model = make_model(cfg.models[0], **{**cfg.model_params, "random_state": cfg.seed})
    try:
        model.fit(g)
        if hasattr(model, "loss_curve_"):
            files.append(str(write_loss_csv(out / f"loss_{tag}.csv", model.loss_curve_, model.relation_loss_curve_)))
            print(f"final loss {model.loss_curve_[-1]:.4f}")
        files.append(str(save_checkpoint(model, out / f"checkpoint_{tag}.json")))
    except Exception as exc:
        write_manifest(out / "manifest.json", cfg.to_dict(), cfg.seed, "failed", files, args.command_line, repr(exc))
        raise
    write_manifest(out / "manifest.json", cfg.to_dict(), cfg.seed, "ok", files, args.command_line)
    return 0


def cmd_run(args) -> int:
    cfg = _run_config(args, args.command)
    result = run_experiment(cfg, command=args.command_line)
    print((result.out / "summary.md").read_text())
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed or 0, eps=args.eps, tolerance=args.tolerance)
    print(report)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (a run manifest also works)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--preset", choices=PRESETS, help="synthetic dataset preset")
    common.add_argument("--graph", help="graph archive directory (overrides --preset)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hetlink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic graph archive")
    p.add_argument("--sidecar", action="store_true", help="store features as .npy matrices")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", parents=[common], help="compute date-based folds")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="fit one model")
    p.add_argument("--model", dest="models", type=lambda s: [s], help="model name (default r-hge)")
    p.add_argument("--fold", type=int, help="train on this fold's training graph only")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    for name, text in (("evaluate", "semi-inductive evaluation"), ("ablate", "component ablation ladder"),
                       ("transfer", "cross-dataset transfer matrix")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--models", nargs="+", help="sgd gcn sage rgcn hge r-hge")
        p.add_argument("--epochs", type=int)
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.command_line = shlex.join(["hetlink", *argv])
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        log.error("%s failed: %s", args.command, exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
