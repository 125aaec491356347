"""Acceptance criteria, one pass/fail line each (printed and shown in the terminal summary)."""

import functools
import json
import math
import os
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import ACCEPTANCE_LINES
from kmergraph import ann_index as ai
from kmergraph import config
from kmergraph import pipeline as pl
from kmergraph import ssl_sampling as ss
from kmergraph.cli import main as cli_main
from kmergraph.downstream import edit_distance
from kmergraph.kmer_graph import assemble_graph, frequency_matrix
from kmergraph.seq_corpus import Corpus, KmerVocab, OutOfVocabularyError, all_kmers, extract_kmers, split_corpus
from kmergraph.trainers import GcnEmbedder, TableEmbedder, TrainConfig, train_baseline
from kmergraph.verify import check_contrastive, check_gae

SEEDS = (0, 1, 2)
# desk-scale pre-training budget shared by the edit distance and retrieval experiments
TRAIN = {"epochs": 15, "pairs_per_epoch": 8192, "walks_per_node": 4}


def report(n, ok, detail, status=None):
    line = f"criterion {n}: {status or ('PASS' if ok else 'FAIL')}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


# -- 1 ----------------------------------------------------------------------

def test_criterion_1_figure_graph_oracle():
    t0 = time.perf_counter()
    g = assemble_graph(Corpus.from_strings(["ACTGACT", "ACTGACA", "TGACTGC"]), 3, sub_k_list=[2], t=0.5)
    elapsed = time.perf_counter() - t0
    km = g.vocab.kmer_of
    dbg = {(km[i], km[j]): w for i, j, w in g.dbg.triples()}
    want = {("ACT", "CTG"): 1.0, ("CTG", "TGA"): 2 / 3, ("CTG", "TGC"): 1 / 3,
            ("TGA", "GAC"): 1.0, ("GAC", "ACT"): 2 / 3, ("GAC", "ACA"): 1 / 3}
    dbg_ok = dbg.keys() == want.keys() and all(abs(dbg[e] - w) <= 1e-12 for e, w in want.items())
    kf = g.kf[2]
    kf_ok = len(kf) == 8 and all(abs(w - 0.5) <= 1e-12 for w in kf.weight_)
    ok = dbg_ok and kf_ok and elapsed < 1.0
    assert report(1, ok, f"dBG exact={dbg_ok}, KF_2 edges={len(kf)} all 1/2={kf_ok}, {elapsed:.3f}s < 1s")


# -- 2 ----------------------------------------------------------------------

def test_criterion_2_gradient_suite():
    t0 = time.perf_counter()
    errs = {"encoder+contrastive": check_contrastive(0), "encoder+gae": check_gae(0)}
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in errs.values()) and elapsed < 30
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errs.items())
    assert report(2, ok, f"max rel err {detail} (< 1e-4), {elapsed:.2f}s < 30s")


# -- 3 ----------------------------------------------------------------------

def test_criterion_3_sampling_distributions():
    g = assemble_graph(Corpus.from_strings(["ACTGACT", "ACTGACA", "TGACTGC"]), 3, sub_k_list=[2], t=0.5)
    n = 10_000
    pvals = {}

    kf = g.kf[2]
    edges = [(i, j) for i, j, _ in kf.triples()]
    draws = [tuple(sorted(p)) for p in ss.structural_pairs(kf, n, seed=11).tolist()]
    w = np.array([kf.weight(i, j) for i, j in edges])
    pvals["structural"] = chisquare([draws.count(e) for e in edges], n * w / w.sum()).pvalue

    firsts = []
    for node in range(g.n_nodes):
        out = [(j, wt) for i, j, wt in g.dbg.triples() if i == node]
        if len(out) < 2:
            continue
        walks = ss.biased_random_walks(g.dbg, g.n_nodes, ss.WalkConfig(walk_length=2, walks_per_node=n),
                                       seed=12, start_nodes=[node])
        steps = [wk[1] for wk in walks]
        probs = np.array([wt for _, wt in out])
        pvals[f"walk from {g.vocab.kmer_of[node]}"] = chisquare([steps.count(j) for j, _ in out],
                                                                  n * probs / probs.sum()).pvalue
        firsts.append(node)

    neg = ss.negative_pairs(g.n_nodes, n, seed=13)
    pvals["negative anchor"] = chisquare(np.bincount(neg[:, 0], minlength=g.n_nodes)).pvalue
    pvals["negative partner"] = chisquare(np.bincount(neg[:, 1], minlength=g.n_nodes)).pvalue
    self_pairs = int((neg[:, 0] == neg[:, 1]).sum())

    ok = all(p > 0.01 for p in pvals.values()) and self_pairs == 0 and len(firsts) == 2
    detail = ", ".join(f"{k} p={v:.3f}" for k, v in pvals.items())
    assert report(3, ok, f"{detail}; self-pairs={self_pairs}")


# -- 4 ----------------------------------------------------------------------

def _recursive_ed(a, b):
    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] != b[j]))
    return go(0, 0)


def test_criterion_4_edit_distance_oracle():
    rng = np.random.default_rng(4)
    rand = lambda hi: "".join(rng.choice(list("ACGT"), int(rng.integers(0, hi + 1))))
    mismatches = sum(edit_distance(a, b) != _recursive_ed(a, b)
                     for a, b in ((rand(8), rand(8)) for _ in range(500)))
    violations = 0
    for _ in range(1000):
        a, b, c = rand(30), rand(30), rand(30)
        ab, ba, bc, ac = edit_distance(a, b), edit_distance(b, a), edit_distance(b, c), edit_distance(a, c)
        violations += (ab != ba) or ((ab == 0) != (a == b)) or (ac > ab + bc) or edit_distance(a, a) != 0
    ok = mismatches == 0 and violations == 0
    assert report(4, ok, f"oracle mismatches {mismatches}/500, metric-axiom violations {violations}/1000")


# -- 5 ----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_ann_fidelity():
    t0 = time.perf_counter()
    fm = frequency_matrix(KmerVocab(6, all_kmers(6)), 2)
    index = ai.build(fm.counts.astype(np.float64), nlist=64, seed=0)
    rec8 = ai.recall_at_n(index, 10, 8)
    rec_full = ai.recall_at_n(index, 10, 64)
    elapsed = time.perf_counter() - t0
    ok = rec8 >= 0.8 and rec_full == 1.0 and elapsed < 120
    assert report(5, ok, f"N={index.ntotal}, recall@10 nprobe=8: {rec8:.4f} (>= 0.8), "
                         f"nprobe=nlist: {rec_full:.4f} (== 1), {elapsed:.1f}s < 120s")


# -- 6 and 7 ----------------------------------------------------------------

@pytest.fixture(scope="module")
def edit_distance_runs():
    """Test %RMSE per seed for CL with each edge set and for one-hot, plus timings."""
    out = {}
    for seed in SEEDS:
        res, secs = {}, {}
        for edges in ("both", "dbg", "kf"):
            t0 = time.perf_counter()
            cfg = config.from_dict({"seed": seed, "encoder": {"edges": edges}, "train": TRAIN})
            corpus = pl.synth_corpus(cfg)
            splits, pairs = pl.pair_splits(cfg, corpus)
            trained = pl.pretrain(cfg, splits["train"])
            res[edges] = pl.edit_distance_task(cfg, trained.embedder, f"cl-{edges}", splits, pairs).report.value
            secs[edges] = time.perf_counter() - t0
        t0 = time.perf_counter()
        cfg = config.from_dict({"seed": seed, "train": TRAIN})
        corpus = pl.synth_corpus(cfg)
        assert len(corpus) == 200 and corpus.max_length <= 160
        splits, pairs = pl.pair_splits(cfg, corpus)
        assert len(pairs["train"]) == 2000 and len(pairs["test"]) == 500
        res["one-hot"] = pl.edit_distance_task(cfg, pl.one_hot_embedder(4), "one-hot", splits, pairs).report.value
        secs["one-hot"] = time.perf_counter() - t0
        out[seed] = (res, secs)
    return out


@pytest.mark.slow
def test_criterion_6_cl_beats_one_hot(edit_distance_runs):
    wins = sum(r["both"] < r["one-hot"] for r, _ in edit_distance_runs.values())
    runtime = sum(s["both"] + s["one-hot"] for _, s in edit_distance_runs.values())
    per_seed = "; ".join(f"seed {s}: CL {r['both']:.3f} vs one-hot {r['one-hot']:.3f}"
                         for s, (r, _) in edit_distance_runs.items())
    ok = wins >= 2 and runtime < 15 * 60
    assert report(6, ok, f"{per_seed}; CL lower in {wins}/3 (need >= 2), {runtime:.0f}s < 900s")


@pytest.mark.slow
def test_criterion_7_both_edges_ablation(edit_distance_runs):
    wins = sum(r["both"] <= min(r["dbg"], r["kf"]) + 0.05 for r, _ in edit_distance_runs.values())
    per_seed = "; ".join(f"seed {s}: both {r['both']:.3f} dbg {r['dbg']:.3f} kf {r['kf']:.3f}"
                         for s, (r, _) in edit_distance_runs.items())
    assert report(7, wins >= 2, f"{per_seed}; both <= min + 0.05 in {wins}/3 (need >= 2)")


# -- 8 ----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_zero_shot_retrieval():
    rows = []
    wins = 0
    for seed in SEEDS:
        cfg = config.from_dict({"seed": seed, "train": TRAIN, "eval": {"n_percent": [10]}})
        s = cfg.synth
        data = pl.retrieval_data(100, 50, s.length, s.sub_rate, s.indel_rate, seed)
        trained = pl.pretrain(cfg, data.refs)
        cl = pl.retrieval_task(cfg, trained.embedder, "cl", data, "concat")[0][0].value
        oh = pl.retrieval_task(cfg, pl.one_hot_embedder(4), "one-hot", data, "mean")[0][0].value
        wins += cl >= oh
        rows.append(f"seed {seed}: CL-concat {cl:.0f} vs one-hot-mean {oh:.0f}")
    assert report(8, wins >= 2, f"top-10% accuracy {'; '.join(rows)}; CL >= one-hot in {wins}/3 (need >= 2)")


# -- 9 ----------------------------------------------------------------------

def test_criterion_9_inductivity():
    cfg = config.from_dict({"seed": 0, "graph": {"k": 6},
                            "synth": {"n_refs": 10, "n_mutants_per_ref": 1, "length": 60},
                            "encoder": {"hidden": 16, "dim": 8},
                            "train": {"epochs": 3, "walks_per_node": 2}})
    corpus = pl.synth_corpus(cfg)
    train, _, test = split_corpus(corpus, (0.6, 0.2, 0.2), seed=0)
    trained = pl.pretrain(cfg, train)
    seen = set(trained.embedder.vocab)
    unseen = [km for s in test for km in extract_kmers(s, 6) if km not in seen]
    assert unseen, "test split should contain k-mers absent from training"
    target = unseen[0]

    gcn_vec = trained.embedder.embed_kmers([target])
    gcn_ok = isinstance(trained.embedder, GcnEmbedder) and gcn_vec.shape == (1, 8) and np.isfinite(gcn_vec).all()

    graph = pl.build_graph(cfg, train)
    tcfg = TrainConfig(epochs=2, seed=0)
    tables = {"node2vec": train_baseline("node2vec", graph, tcfg, dim=8).embedder,
              "word2vec": train_baseline("word2vec", graph, tcfg, dim=8, corpus=train).embedder}
    table_ok = {}
    for name, emb in tables.items():
        assert isinstance(emb, TableEmbedder)
        try:
            emb.embed_kmers([target])
            table_ok[name] = False
        except OutOfVocabularyError as exc:
            table_ok[name] = "out-of-vocabulary" in str(exc)
    ok = gcn_ok and all(table_ok.values())
    assert report(9, ok, f"unseen k-mer {target}: GCN embeds={gcn_ok}, "
                         + ", ".join(f"{k} raises OOV={v}" for k, v in table_ok.items()))


# -- 10 ---------------------------------------------------------------------

def test_criterion_10_full_scale_recipe_not_gated(tmp_path):
    """Runs the documented recipe end to end. Without a user dataset it uses a tiny synthetic
    corpus and makes no numeric claim; with ``KMERGRAPH_RECIPE_FASTA`` (and optionally
    ``KMERGRAPH_RECIPE_TARGET``) it reports an advisory comparison at +-0.2."""
    fasta = os.environ.get("KMERGRAPH_RECIPE_FASTA")
    target = os.environ.get("KMERGRAPH_RECIPE_TARGET")
    k = os.environ.get("KMERGRAPH_RECIPE_K", "4" if fasta else "3")
    if fasta is None:
        fasta = tmp_path / "corpus.fa"
        assert cli_main(["synth", "--seed", "0", "--n-refs", "6", "--mutants", "2", "--length", "40",
                         "--out", str(fasta)]) == 0
        quick = ["--epochs", "2", "--dim", "8", "--set", "encoder.hidden=16"]
        head = ["--head-epochs", "5", "--train-pairs", "30", "--val-pairs", "3", "--test-pairs", "3"]
    else:
        quick, head = [], []
    assert cli_main(["build-graph", "--input", str(fasta), "--k", k, "--out", str(tmp_path / "g")]) == 0
    assert cli_main(["pretrain", "--graph", str(tmp_path / "g"), "--corpus", str(fasta),
                     "--out", str(tmp_path / "p"), "--objective", "cl"] + quick) == 0
    assert cli_main(["eval", "--embeddings", str(tmp_path / "p"), "--corpus", str(fasta), "--k", k,
                     "--out", str(tmp_path / "e")] + head) == 0
    value = json.loads((tmp_path / "e" / "report.json").read_text())["value"]
    if target is None:
        detail = f"recipe ran end to end (%RMSE {value:.3f} on a toy corpus); full-scale numbers need external data"
    else:
        gap = abs(value - float(target))
        detail = f"%RMSE {value:.3f} vs target {float(target):.3f}, |gap| {gap:.3f} (advisory +-0.2: " \
                 f"{'within' if gap <= 0.2 else 'outside'})"
    assert math.isfinite(value)
    report(10, True, detail, status="NOT GATED")
