"""Acceptance criteria, one test each, printing a PASS/FAIL/FLAG line.

Run alone with ``pytest tests/test_acceptance.py -v`` to see the verdicts.
"""

import json
import time

import numpy as np
import pytest

from hetlink.autograd import Tensor
from hetlink.cli import main
from hetlink.estimators import GraphLinkPredictor, make_model
from hetlink.evaluation import MetricsReport, auc_roc, average_precision, evaluate, temporal_folds
from hetlink.experiment import DatasetSpec, RunConfig, gradcheck_graph, run_experiment, run_gradcheck
from hetlink.graph import RelationType, add_reverse_relations, build_graph, homogenize
from hetlink.models import (ModelConfig, decode_block, decode_interleave, gcn_conv_forward, relational_conv_forward,
                            sage_mean_layer_forward)
from hetlink.synthetic import generate_preset
from hetlink.training import edge_dropout, sample_negatives, stream

from helpers import random_graph, random_pairs
from oracles import ap_bruteforce, auc_pairwise, dense_gcn, dense_relational_conv, dense_sage


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail="", flag=False):
        status = "FLAG" if flag else ("PASS" if ok else "FAIL")
        with capsys.disabled():
            print(f"\n[acceptance {number:>2}] {status} {title}: {detail}")
        assert ok, detail

    return emit


def t64(x):
    return Tensor(x, dtype=np.float64)


def test_01_gradient_check(verdict):
    g = gradcheck_graph(0)
    shape_ok = sum(g.num_nodes.values()) == 10 and len(g.target_relations) == 2 and \
        sum(r.is_meta for r in g.relations.values()) == 1
    start = time.perf_counter()
    report = run_gradcheck(seed=0, eps=1e-3, tolerance=1e-3, layer_sizes=(8, 8))
    elapsed = time.perf_counter() - start
    worst = max(report.max_rel_error.values())
    ok = shape_ok and report.passed and worst < 1e-3 and elapsed < 30 and report.coverage > 0.9
    verdict(1, "gradient check", ok,
            f"max rel err {worst:.2e} over {len(report.max_rel_error)} tensors, "
            f"{100 * report.coverage:.1f}% entries compared, {elapsed:.1f}s")


def test_02_metric_oracles(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 501))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        labels[rng.integers(n)] = True
        labels[rng.integers(n)] = False
        if labels.all() or not labels.any():
            labels[0], labels[-1] = True, False
        # half of the instances use coarse scores so ties are common
        scores = rng.normal(size=n) if i % 2 else rng.integers(0, 10, size=n).astype(float)
        worst = max(worst, abs(average_precision(scores, labels) - ap_bruteforce(scores, labels)),
                    abs(auc_roc(scores, labels) - auc_pairwise(scores, labels)))
    verdict(2, "metric oracles", worst < 1e-9, f"200 instances, max abs err {worst:.1e}")


def test_03_edge_dropout_contract(verdict):
    rng = np.random.default_rng(0)
    src, dst = [], []
    while len(set(zip(src, dst))) < 100:
        src.append(int(rng.integers(40)))
        dst.append(int(rng.integers(40)))
    pairs = sorted(set(zip(src, dst)))[:100]
    g = add_reverse_relations(build_graph(
        {"case": 40, "court": 3},
        [RelationType("cc", "case", "case", is_target=True), RelationType("court-of", "case", "court", is_meta=True)],
        {"cc": tuple(zip(*pairs)), "court-of": (np.arange(40), np.arange(40) % 3)}))
    fractions, tandem, meta_intact = [], True, True
    for trial in range(10_000):
        view = edge_dropout(g, 0.5, stream(0, trial))
        fwd, rev = view.edges["cc"], view.edges["rev-cc"]
        fractions.append(len(fwd) / 100)
        tandem &= sorted(zip(fwd.src.tolist(), fwd.dst.tolist())) == sorted(zip(rev.dst.tolist(), rev.src.tolist()))
        meta_intact &= view.edges["court-of"] == g.edges["court-of"] and view.edges["rev-court-of"] == g.edges["rev-court-of"]
    mean = float(np.mean(fractions))
    identity = edge_dropout(g, 0.0, stream(1)) == g
    empty = edge_dropout(g, 1.0, stream(1))
    emptied = len(empty.edges["cc"]) == 0 and len(empty.edges["rev-cc"]) == 0 and \
        empty.edges["court-of"] == g.edges["court-of"]
    ok = 0.48 <= mean <= 0.52 and tandem and meta_intact and identity and emptied
    verdict(3, "edge dropout", ok, f"kept mean {mean:.4f}, tandem {tandem}, meta intact {meta_intact}, "
                                   f"p=0 identity {identity}, p=1 empty {emptied}")


def test_04_decoder_algebra(verdict):
    rng = np.random.default_rng(4)
    decomposes = permuted = True
    for _ in range(500):
        n_blocks, dim = int(rng.integers(1, 5)), int(rng.choice([2, 4, 8]))
        bu = [rng.integers(-9, 10, size=dim).astype(float) for _ in range(n_blocks)]
        bv = [rng.integers(-9, 10, size=dim).astype(float) for _ in range(n_blocks)]
        u, v = np.concatenate(bu), np.concatenate(bv)
        whole = decode_interleave(u, v).item()
        decomposes &= whole == sum(decode_interleave(a, b).item() for a, b in zip(bu, bv))
        d = len(u)
        perm = np.r_[np.arange(0, d, 2), np.arange(1, d, 2)]
        permuted &= whole == decode_block(u[perm], v[perm]).item()
    verdict(4, "decoder algebra", decomposes and permuted,
            f"block decomposition exact {decomposes}, stride permutation exact {permuted} (500 draws)")


def test_05_encoder_oracles(verdict):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n_a, n_b = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        rels = [RelationType("aa", "a", "a", is_target=True), RelationType("ab", "a", "b", is_target=True),
                RelationType("ba", "b", "a")]
        edges = {"aa": random_pairs(rng, n_a, n_a, 0.3), "ab": random_pairs(rng, n_a, n_b, 0.3),
                 "ba": random_pairs(rng, n_b, n_a, 0.3)}
        g = build_graph({"a": n_a, "b": n_b}, rels, edges)
        H = {t: rng.normal(size=(n, 4)) for t, n in g.num_nodes.items()}
        W_self = {t: rng.normal(size=(4, 4)) for t in g.node_types}
        W_rel = {r: rng.normal(size=(4, 4)) for r in g.relations}
        params = {**{f"layer0.rel.{r}": t64(w) for r, w in W_rel.items()},
                  **{f"layer0.self.{t}": t64(w) for t, w in W_self.items()}}
        got = relational_conv_forward(g, {t: t64(h) for t, h in H.items()}, params, 0, ModelConfig(layer_sizes=(4,)))
        want = dense_relational_conv(dict(g.num_nodes), {r: (x.src_type, x.dst_type) for r, x in g.relations.items()},
                                     {r: (e.src, e.dst) for r, e in g.edges.items()}, H, W_self, W_rel)
        worst = max(worst, *(np.abs(got[t].data - want[t]).max() for t in g.node_types))

        h = homogenize(random_graph(seed, n_case=7, n_law=5, n_court=3, p=0.25), dtype=np.float64)
        assert h.num_nodes <= 15
        X = rng.normal(size=(h.num_nodes, 4))
        W, W2 = rng.normal(size=(4, 6)), rng.normal(size=(8, 6))
        cfg = ModelConfig(layer_sizes=(6,))
        worst = max(worst, np.abs(gcn_conv_forward(h, t64(X), t64(W), cfg).data
                                  - dense_gcn(h.num_nodes, h.src, h.dst, X, W)).max(),
                    np.abs(sage_mean_layer_forward(h, t64(X), t64(W2), cfg).data
                           - dense_sage(h.num_nodes, h.src, h.dst, X, W2)).max())
    verdict(5, "encoder oracles", worst < 1e-5, f"relational/GCN/SAGE over 50 seeds, max abs err {worst:.1e}")


def train_ap(model, g):
    """Macro AP of the training target edges against 1:1 corrupted negatives."""
    emb = model.transform(g)
    aps = []
    for k, r in enumerate(g.target_relations):
        idx = g.edges[r]
        ns, nd = sample_negatives(g, r, 1, stream(99, k))
        scores = np.r_[model.decision_function(g, r, idx.src, idx.dst, embeddings=emb),
                       model.decision_function(g, r, ns, nd, embeddings=emb)]
        aps.append(average_precision(scores, np.r_[np.ones(len(idx)), np.zeros(len(ns))]))
    return float(np.mean(aps))


@pytest.mark.slow
def test_06_overfit_smoke(verdict):
    g = generate_preset("lio-like", seed=0)
    assert dict(g.num_nodes) == {"case": 500, "law": 50, "court": 5}
    start = time.perf_counter()
    model = GraphLinkPredictor().fit(g)  # all defaults, 200 epochs
    elapsed = time.perf_counter() - start
    ap = train_ap(model, g)
    verdict(6, "overfit smoke", ap >= 0.95 and elapsed < 120,
            f"training AP {ap:.4f} after {len(model.loss_curve_)} epochs, fit {elapsed:.1f}s")


@pytest.mark.slow
def test_07_edge_dropout_direction(verdict):
    # reduced budget: 3 layers of 64, lr 1e-3, 200 epochs, one fold at the 80% date quantile
    scores = {True: [], False: []}
    for seed in range(5):
        g = generate_preset("lio-like", seed=seed)
        plan = temporal_folds(g, quantiles=[0.8], seed=seed)
        train_graph = plan.training_graph(g, plan.folds[0])
        for on in scores:
            model = make_model("r-hge", layer_sizes=(64, 64, 64), epochs=200, learning_rate=1e-3,
                               edge_dropout=0.5 if on else 0.0, random_state=seed).fit(train_graph)
            s = evaluate({0: model}, g, plan, "m", "d", eval_seed=seed).summary()[("m", "d")]
            scores[on].append(s["ap_mean"])
    on_m, off_m = np.mean(scores[True]), np.mean(scores[False])
    sigma = max(np.std(scores[True]), np.std(scores[False]))
    gap = on_m - off_m
    detail = f"AP on {on_m:.4f}±{np.std(scores[True]):.4f}, off {off_m:.4f}±{np.std(scores[False]):.4f}"
    if gap >= 0:
        verdict(7, "edge dropout helps", True, detail)
    else:
        verdict(7, "edge dropout helps", -gap < sigma, detail + " (reversed)", flag=-gap < sigma)


SMALL = {"layer_sizes": [32, 32], "epochs": 60, "learning_rate": 1e-3}
LIO = dict(n_cases=150, n_laws=20, case_case=300, case_law=300, law_law=40, law_case=3, feature_dim=16)
OLD = dict(n_cases=150, n_laws=30, case_case=60, case_law=600, feature_dim=16)


def test_08_determinism(verdict, tmp_path):
    def cfg(name):
        return RunConfig(mode="evaluate", datasets=[DatasetSpec("lio", preset="lio-like", overrides=LIO)],
                         models=["sgd", "r-hge"], model_params=SMALL, split={"n_subsamples": 3}, seed=11,
                         out=str(tmp_path / name))

    a = (run_experiment(cfg("a")).out / "metrics.csv").read_bytes()
    b = (run_experiment(cfg("b")).out / "metrics.csv").read_bytes()
    verdict(8, "determinism", a == b, f"metrics.csv {len(a)} bytes, identical {a == b}")


def test_09_transfer_harness(verdict, tmp_path):
    cfg = RunConfig(mode="transfer", datasets=[DatasetSpec("old-like", preset="old-like", overrides=OLD),
                                               DatasetSpec("lio-like", preset="lio-like", overrides=LIO)],
                    models=["r-hge"], model_params=SMALL, split={"quantiles": [0.7, 0.8], "n_subsamples": 3},
                    fallback="case-case", out=str(tmp_path / "t"))
    res = run_experiment(cfg).transfer["r-hge"]
    checkpoint = json.loads((tmp_path / "t" / "old-like" / "r-hge" / "checkpoint_0.json").read_text())
    unenriched = checkpoint["state"]["enrichment_plan"] is None and checkpoint["params"]["enrich"] is False
    populated = all(res.matrix[m].shape == (2, 2) and np.isfinite(res.matrix[m]).all() and (res.matrix[m] > 0).all()
                    for m in ("ap", "auc_roc"))
    deviations = all(np.isfinite(res.deviation(m)).all() for m in ("ap", "auc_roc"))
    cells = " ".join(f"{100 * v:.1f}" for v in res.matrix["ap"].ravel())
    verdict(9, "transfer harness", unenriched and populated and deviations,
            f"AP cells [{cells}], enrichment off {unenriched}")


def test_10_protocol_fidelity(verdict, tmp_path, capsys):
    gen = tmp_path / "gen.json"
    gen.write_text(json.dumps(LIO))
    assert main(["generate", "--preset", "lio-like", "--config", str(gen), "--seed", "3",
                 "--out", str(tmp_path / "archive")]) == 0
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"model_params": SMALL}))
    code = main(["evaluate", "--graph", str(tmp_path / "archive"), "--config", str(run), "--models", "r-hge",
                 "--seed", "3", "--out", str(tmp_path / "out")])
    capsys.readouterr()
    out = tmp_path / "out"
    report = MetricsReport.from_csv((out / "metrics.csv").read_text())
    folds = {r.fold for r in report.rows}
    subs = {r.subsample for r in report.rows}
    relations = {r.relation for r in report.rows}
    cells = report.cells()
    ap = np.array([c["ap"] for c in cells.values()])
    summary = report.summary()[("r-hge", "archive")]
    line = next(l for l in (out / "summary.md").read_text().splitlines() if l.startswith("| r-hge"))
    expected = f"{100 * ap.mean():.1f} ± {100 * ap.std():.2f}"
    # the negatives must be 1:1 with the sampled positives
    g = generate_preset("lio-like", seed=3, **LIO)
    plan = temporal_folds(g, seed=3)
    _, test = plan.test_graph(g, plan.folds[0])
    sizes = {r: int(np.floor(0.9 * len(e))) for r, e in test.items() if len(e)}
    ok = (code == 0 and folds == set(range(5)) and subs == set(range(5)) and relations == {"case-case", "case-law"}
          and len(cells) == 25 and summary["n_cells"] == 25 and abs(summary["ap_mean"] - ap.mean()) < 1e-12
          and expected in line and min(sizes.values()) > 0)
    verdict(10, "protocol fidelity", ok, f"{len(folds)} folds x {len(subs)} subsamples, macro over "
                                         f"{sorted(relations)}, AP {expected} %")
