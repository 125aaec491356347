"""Glue between the configuration and the library: graph, pre-training, evaluation.

Everything here is deterministic given the :class:`~kmergraph.config.PipelineConfig`
and its seed; the command-line interface and the acceptance experiments both
call into this module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import downstream as ds
from . import gnn_encoder as gnn
from . import trainers
from .config import ConfigError, PipelineConfig
from .kmer_graph import DBG, MetagenomicGraph, assemble_graph, kf_name
from .seq_corpus import Corpus, DnaSequence, KmerVocab, all_kmers, mutate, random_sequence, split_corpus, \
    synth_generate

log = logging.getLogger(__name__)

ONE_HOT = "one-hot"


def synth_corpus(cfg: PipelineConfig, seed: int | None = None) -> Corpus:
    s = cfg.synth
    return synth_generate(s.n_refs, s.length, s.n_mutants_per_ref, s.sub_rate, s.indel_rate,
                          cfg.seed if seed is None else seed)


def graph_sub_ks(cfg: PipelineConfig) -> list:
    """Similarity edge sets to build; none when only dBG edges are used."""
    return [] if cfg.encoder.edges == "dbg" else list(cfg.graph.sub_k_list)


def build_graph(cfg: PipelineConfig, corpus: Corpus) -> MetagenomicGraph:
    g = cfg.graph
    return assemble_graph(corpus, g.k, sub_k_list=graph_sub_ks(cfg), t=g.t, n_neighbors=g.n_neighbors,
                          mode=g.kf_mode, nlist=g.nlist, nprobe=g.nprobe, seed=cfg.seed)


def encoder_config(cfg: PipelineConfig) -> gnn.EncoderConfig:
    """Explicit ``encoder.layers``, or a three-layer stack whose edge types follow ``encoder.edges``."""
    e = cfg.encoder
    if e.layers:
        try:
            return gnn.EncoderConfig.from_dict({"layers": e.layers, "feature_sub_k": e.feature_sub_k})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid encoder.layers: {exc}") from exc
    kf = kf_name(max(cfg.graph.sub_k_list))
    types = {"both": (DBG, DBG, kf), "dbg": (DBG, DBG, DBG), "kf": (kf, kf, kf)}[e.edges]
    d_in = sum(4 ** s for s in e.feature_sub_k)
    dims = [d_in, e.hidden, e.hidden, e.dim]
    acts = ("relu", "relu", "identity")
    return gnn.EncoderConfig(tuple(gnn.LayerSpec(types[i], dims[i], dims[i + 1], acts[i]) for i in range(3)),
                             tuple(e.feature_sub_k))


def train_config(cfg: PipelineConfig, seed: int | None = None) -> trainers.TrainConfig:
    t = cfg.train
    sampler = {"dbg": "context", "kf": "structural"}.get(cfg.encoder.edges, t.sampler)
    return trainers.TrainConfig(
        epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, seed=cfg.seed if seed is None else seed,
        objective=t.objective, encoder=t.encoder, sampler=sampler, n_negatives=t.n_negatives,
        structural_ratio=t.structural_ratio, pairs_per_epoch=t.pairs_per_epoch, fanouts=t.fanouts,
        walk={"p": t.p, "q": t.q, "walk_length": t.walk_length, "walks_per_node": t.walks_per_node,
              "window": t.window})


def pretrain(cfg: PipelineConfig, corpus: Corpus, graph: MetagenomicGraph | None = None,
             seed: int | None = None) -> trainers.TrainResult:
    graph = build_graph(cfg, corpus) if graph is None else graph
    return trainers.pretrain(graph, encoder_config(cfg), train_config(cfg, seed), corpus=corpus,
                             variant=cfg.train.variant)


def one_hot_embedder(k: int, max_k: int = ds.ONE_HOT_MAX_K, override: bool = False) -> trainers.TableEmbedder:
    """One-hot rows over the complete ``4^k`` k-mer alphabet (never out of vocabulary)."""
    if k > max_k and not override:
        raise ds.CapacityError(f"one-hot encoding for k={k} exceeds the cap k<={max_k}")
    vocab = KmerVocab(k, all_kmers(k))
    return trainers.TableEmbedder(vocab, ds.one_hot_embedding(vocab, max_k, override))


# -- edit distance approximation ---------------------------------------------

@dataclass
class EditDistanceResult:
    report: ds.EvalReport
    head: ds.DistanceHead
    mode: str
    history: list
    test: ds.SequencePairDataset
    predictions: np.ndarray
    val_scores: dict = field(default_factory=dict)


def pair_splits(cfg: PipelineConfig, corpus: Corpus, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    train, val, test = split_corpus(corpus, tuple(cfg.eval.split_ratios), seed=seed)
    e = cfg.eval
    splits = {"train": train, "val": val, "test": test}
    pairs = ds.build_pair_dataset(splits, {"train": e.train_pairs, "val": e.val_pairs, "test": e.test_pairs},
                                  seed=seed, max_length=corpus.max_length)
    return splits, pairs


def _embed_splits(splits: dict, embedder, k: int, mode: str, sparse_ok: bool):
    """Embed all splits together so concatenated widths agree, then slice per split."""
    union = [s for c in splits.values() for s in c]
    emb = ds.embed_corpus(union, embedder, k, mode, sparse_ok=sparse_ok)
    out, lo = {}, 0
    for name, c in splits.items():
        out[name] = emb.matrix[lo:lo + len(c)]
        lo += len(c)
    return out, emb.n_padded


def edit_distance_task(cfg: PipelineConfig, embedder, method: str, splits: dict, pairs: dict,
                       seed: int | None = None) -> EditDistanceResult:
    """Fit the hyperbolic head on train pairs and score %RMSE on test pairs.

    With ``eval.mode: auto`` both aggregations are fitted and the one with the
    lower validation %RMSE is kept.
    """
    e = cfg.eval
    seed = cfg.seed if seed is None else seed
    k = cfg.graph.k
    modes = ["mean", "concat"] if e.mode == "auto" else [e.mode]
    best = None
    val_scores = {}
    for mode in modes:
        x, n_padded = _embed_splits(splits, embedder, k, mode, sparse_ok=(method == ONE_HOT))
        head, history = ds.train_distance_head(x["train"], pairs["train"], pairs["val"], head_dim=e.head_dim,
                                               lr=e.head_lr, epochs=e.head_epochs, seed=seed, x_val=x["val"])
        score = ds.percent_rmse(head, pairs["val"], x["val"])
        val_scores[mode] = score
        log.info("%s %s: val %%RMSE %.4f", method, mode, score)
        if best is None or score < best[0]:
            best = (score, mode, head, history, x, n_padded)
    _, mode, head, history, x, n_padded = best
    test = pairs["test"]
    value = ds.percent_rmse(head, test, x["test"], literal=e.rmse_paper_literal)
    preds = head.predict(x["test"], test.a, test.b, test.max_length)
    report = ds.EvalReport(task="edit-distance", k=k, method=method, seed=seed,
                           metric="percent_rmse_literal" if e.rmse_paper_literal else "percent_rmse",
                           value=value, config=cfg.to_dict(),
                           extras={"mode": mode, "val_percent_rmse": val_scores, "n_padded": n_padded,
                                   "max_length": test.max_length, "n_test_pairs": len(test)})
    return EditDistanceResult(report, head, mode, history, test, preds, val_scores)


# -- closest string retrieval ------------------------------------------------

@dataclass
class RetrievalData:
    refs: Corpus
    queries: Corpus
    truth: np.ndarray


def retrieval_data(n_refs: int, n_queries: int, length: int, sub_rate: float, indel_rate: float,
                   seed: int) -> RetrievalData:
    """Random references plus mutated copies of a subset of them as held-out queries."""
    rng = np.random.default_rng([seed, 17])
    refs = Corpus(tuple(DnaSequence(f"ref{i}", random_sequence(length, rng)) for i in range(n_refs)))
    parents = rng.choice(n_refs, size=n_queries, replace=n_queries > n_refs)
    queries = []
    for qi, p in enumerate(parents):
        mut, _ = mutate(refs[int(p)].bases, sub_rate, indel_rate, rng)
        queries.append(DnaSequence(f"query{qi}_of_ref{int(p)}", mut or refs[int(p)].bases))
    queries = Corpus(tuple(queries))
    return RetrievalData(refs, queries, ds.nearest_by_edit_distance(queries, refs))


def retrieval_task(cfg: PipelineConfig, embedder, method: str, data: RetrievalData, mode: str,
                   seed: int | None = None) -> tuple[list, np.ndarray]:
    """Zero-shot top-n% accuracy (one report per ``eval.n_percent`` entry) and per-query ranks."""
    seed = cfg.seed if seed is None else seed
    splits = {"refs": data.refs, "queries": data.queries}
    x, n_padded = _embed_splits(splits, embedder, cfg.graph.k, mode, sparse_ok=False)
    ranks = ds.retrieval_ranks(x["queries"], x["refs"], data.truth)
    reports = []
    for n in cfg.eval.n_percent:
        cutoff = ds.topn_cutoff(n, len(data.refs))
        acc = float(100.0 * np.mean(ranks <= cutoff))
        reports.append(ds.EvalReport(task="retrieval", k=cfg.graph.k, method=method, seed=seed,
                                     metric=f"top{n:g}%_accuracy", value=acc, config=cfg.to_dict(),
                                     extras={"mode": mode, "cutoff_rank": cutoff, "n_refs": len(data.refs),
                                             "n_queries": len(data.queries), "n_padded": n_padded}))
    return reports, ranks
