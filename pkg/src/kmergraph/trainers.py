"""Self-supervised pre-training: contrastive (pair sampling) and graph-autoencoder objectives.

Two encoder families are supported:

* ``gcn``   -- the inductive heterogeneous GCN of :mod:`kmergraph.gnn_encoder`;
* ``table`` -- one free vector per vocabulary k-mer (Word2Vec / Node2Vec style
  baselines). Tables cannot embed k-mers outside their vocabulary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import gnn_encoder as gnn
from . import ssl_sampling as ss
from . import tensor_core as tc
from .kmer_graph import MetagenomicGraph, assemble_graph, lookup_ids
from .seq_corpus import Corpus, KmerVocab, OutOfVocabularyError, extract_kmers

log = logging.getLogger(__name__)

SAMPLERS = ("both", "context", "structural")


class TrainerError(ValueError):
    """Training configuration that cannot run on the given graph."""


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1024
    lr: float = 1e-3
    seed: int = 0
    objective: str = "contrastive"
    encoder: str = "gcn"
    sampler: str = "both"
    n_negatives: int = 5
    structural_ratio: float = 1.0
    pairs_per_epoch: int | None = None
    fanouts: list | None = None
    walk: ss.WalkConfig = field(default_factory=ss.WalkConfig)

    def __post_init__(self):
        if isinstance(self.walk, dict):
            self.walk = ss.WalkConfig(**self.walk)
        if self.objective not in ("contrastive", "gae"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.encoder not in ("gcn", "table"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler mix {self.sampler!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.n_negatives < 0:
            raise ValueError("epochs, batch_size must be >= 1 and n_negatives >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: dict
    embeddings: np.ndarray
    history: list  # (epoch, split, value)
    embedder: object = None


# -- losses -----------------------------------------------------------------

def contrastive_loss(z, pos_pairs, neg_partners=None):
    """Mean over positive pairs of ``-log s(z_i.z_j) - sum_l log s(-z_i.z_l)``.

    ``neg_partners[p]`` lists the negative partners of the anchor of positive
    pair ``p``. ``z`` may be a Var (for training) or a plain array.
    """
    if not isinstance(z, tc.Var):
        z = tc.Tape().var(z)
    pos_pairs = np.asarray(pos_pairs, dtype=np.int64).reshape(-1, 2)
    n_pos = len(pos_pairs)
    s_pos = tc.rowdot(tc.gather(z, pos_pairs[:, 0]), tc.gather(z, pos_pairs[:, 1]))
    total = tc.sum_(tc.log_sigmoid(s_pos))
    if neg_partners is not None and np.size(neg_partners):
        neg = np.asarray(neg_partners, dtype=np.int64).reshape(n_pos, -1)
        anchors = np.repeat(pos_pairs[:, 0], neg.shape[1])
        s_neg = tc.rowdot(tc.gather(z, anchors), tc.gather(z, neg.ravel()))
        total = total + tc.sum_(tc.log_sigmoid(tc.scale(s_neg, -1.0)))
    return tc.scale(total, -1.0 / n_pos)


def gae_edge_decode(z, src, dst) -> np.ndarray:
    z = np.asarray(z.value if isinstance(z, tc.Var) else z)
    return (z[np.asarray(src)] * z[np.asarray(dst)]).sum(1)


def gae_node_decode(z, decoders: dict) -> dict:
    """``{sub_k: Z @ Theta + b}`` for plain arrays."""
    z = np.asarray(z.value if isinstance(z, tc.Var) else z)
    out = {}
    for s in decoder_sub_ks(decoders):
        theta, b = np.asarray(_v(decoders[f"dec_theta_{s}"])), np.asarray(_v(decoders[f"dec_bias_{s}"]))
        if theta.shape[0] != z.shape[1]:
            raise ValueError(f"decoder for sub_k={s} expects {theta.shape[0]}-dim embeddings, got {z.shape[1]}")
        out[s] = z @ theta + b
    return out


def _v(x):
    return x.value if isinstance(x, tc.Var) else x


def decoder_sub_ks(decoders: dict) -> list[int]:
    return sorted(int(k.rsplit("_", 1)[1]) for k in decoders if k.startswith("dec_theta_"))


def init_decoders(dim: int, sub_ks, seed: int = 0) -> dict:
    rng = np.random.default_rng([seed, 7])
    out = {}
    for s in sub_ks:
        out[f"dec_theta_{s}"] = tc.glorot_uniform((dim, 4 ** s), rng)
        out[f"dec_bias_{s}"] = np.zeros(4 ** s)
    return out


def gae_loss(z, graph: MetagenomicGraph, decoders: dict):
    """L1 edge reconstruction over dBG edges plus the mean (over sub_k) of summed node MSE."""
    tape = z.tape if isinstance(z, tc.Var) else next(
        (v.tape for v in decoders.values() if isinstance(v, tc.Var)), tc.Tape())
    if not isinstance(z, tc.Var):
        z = tape.var(z)
    dec = {k: v if isinstance(v, tc.Var) else tape.var(v, name=k) for k, v in decoders.items()}
    es = graph.dbg
    w_hat = tc.rowdot(tc.gather(z, es.src), tc.gather(z, es.dst))
    edge_term = tc.sum_(tc.abs_(tc.sub(es.weight_, w_hat)))
    sub_ks = decoder_sub_ks(dec)
    if not sub_ks:
        return edge_term
    node_total = None
    for s in sub_ks:
        y = graph.features[s].counts.astype(np.float64)
        y_hat = tc.add(tc.matmul(z, dec[f"dec_theta_{s}"]), dec[f"dec_bias_{s}"])
        term = tc.sum_(tc.square(tc.sub(y, y_hat)))
        node_total = term if node_total is None else node_total + term
    return edge_term + tc.scale(node_total, 1.0 / len(sub_ks))


def gae_loss_terms(z, graph: MetagenomicGraph, decoders: dict) -> tuple[float, float]:
    """Edge and node terms of the GAE loss evaluated independently with numpy."""
    z = np.asarray(_v(z))
    es = graph.dbg
    edge = float(np.abs(es.weight_ - gae_edge_decode(z, es.src, es.dst)).sum())
    preds = gae_node_decode(z, decoders)
    node = sum(float(((graph.features[s].counts - p) ** 2).sum()) for s, p in preds.items())
    return edge, node / max(len(preds), 1)


# -- embedders --------------------------------------------------------------

class GcnEmbedder:
    """Embeds arbitrary k-mers with a trained GCN.

    K-mers absent from the training graph are added as extra nodes (with
    features and similarity edges) before the forward pass.
    """

    def __init__(self, config: gnn.EncoderConfig, params: dict, graph: MetagenomicGraph, corpus: Corpus | None = None):
        self.config = config
        self.params = {k: v for k, v in params.items() if k.startswith("theta_")}
        self.graph = graph
        self.corpus = corpus
        self._z = gnn.embed(graph, config, self.params)

    @property
    def vocab(self) -> KmerVocab:
        return self.graph.vocab

    @property
    def node_embeddings(self) -> np.ndarray:
        return self._z

    def embed_kmers(self, kmers) -> np.ndarray:
        kmers = list(kmers)
        unseen = [km for km in dict.fromkeys(kmers) if km not in self.graph.vocab]
        if not unseen:
            return self._z[lookup_ids(self.graph.vocab, kmers)]
        if self.corpus is None:
            raise OutOfVocabularyError(unseen[0])
        meta = self.graph.meta
        g = assemble_graph(self.corpus, self.graph.k, sub_k_list=meta.get("sub_k_list", sorted(self.graph.kf)),
                           t=meta.get("t"), n_neighbors=meta.get("n_neighbors"), mode=meta.get("mode", "exact"),
                           nlist=meta.get("nlist"), nprobe=meta.get("nprobe"), seed=meta.get("seed", 0),
                           extra_kmers=unseen)
        z = gnn.embed(g, self.config, self.params)
        return z[lookup_ids(g.vocab, kmers)]


class TableEmbedder:
    """Lookup table of k-mer vectors; unknown k-mers raise :class:`OutOfVocabularyError`."""

    def __init__(self, vocab: KmerVocab, table: np.ndarray):
        self.vocab = vocab
        self.table = np.asarray(table)

    @property
    def node_embeddings(self) -> np.ndarray:
        return self.table

    def embed_kmers(self, kmers) -> np.ndarray:
        return self.table[lookup_ids(self.vocab, kmers)]


# -- training loops ---------------------------------------------------------

def _epoch_pairs(graph: MetagenomicGraph, cfg: TrainConfig, epoch: int, pair_source=None) -> np.ndarray:
    n = graph.n_nodes
    seed = int(np.random.SeedSequence([cfg.seed, epoch]).generate_state(1)[0])
    parts = []
    n_context = 0
    if pair_source is not None:
        ctx = pair_source(seed)
        parts.append(ctx)
        n_context = len(ctx)
    elif cfg.sampler in ("both", "context"):
        walks = ss.biased_random_walks(graph.dbg, n, cfg.walk, seed=seed)
        ctx = ss.walks_to_pairs(walks, cfg.walk.window, seed=seed + 1)
        parts.append(ctx)
        n_context = len(ctx)
    if pair_source is None and cfg.sampler in ("both", "structural"):
        if cfg.sampler == "both":
            n_struct = int(round(n_context * cfg.structural_ratio))
        else:
            n_struct = int(round(n * cfg.walk.walks_per_node *
                                 ss.expected_window_pair_count(cfg.walk.walk_length, cfg.walk.window)))
        parts.append(ss.structural_pairs(list(graph.kf.values()), n_struct, seed=seed + 2))
    pairs = np.concatenate(parts)
    rng = np.random.default_rng(seed + 3)
    pairs = pairs[rng.permutation(len(pairs))]
    if cfg.pairs_per_epoch is not None:
        pairs = pairs[:cfg.pairs_per_epoch]
    return pairs


def _check_sampler(graph: MetagenomicGraph, cfg: TrainConfig):
    if cfg.sampler in ("both", "structural") and not any(len(e) for e in graph.kf.values()):
        raise TrainerError(f"sampler mix {cfg.sampler!r} needs similarity (KF) edges, graph has none")
    if cfg.sampler in ("both", "context") and len(graph.dbg) == 0:
        raise TrainerError(f"sampler mix {cfg.sampler!r} needs dBG edges, graph has none")


def _contrastive_loop(graph, cfg: TrainConfig, params: dict, embed_batch, pair_source=None):
    state = tc.AdamState(lr=cfg.lr)
    history = []
    n = graph.n_nodes
    for epoch in range(cfg.epochs):
        pairs = _epoch_pairs(graph, cfg, epoch, pair_source)
        rng = np.random.default_rng([cfg.seed, epoch, 11])
        total, count = 0.0, 0
        for lo in range(0, len(pairs), cfg.batch_size):
            batch = pairs[lo:lo + cfg.batch_size]
            neg = ss.negatives_for_anchors(batch[:, 0], n, cfg.n_negatives, seed=rng) if cfg.n_negatives else None
            tape = tc.Tape()
            vars_ = {k: tape.var(v, name=k) for k, v in params.items()}
            z, remap = embed_batch(tape, vars_, batch, neg, rng)
            loss = contrastive_loss(z, remap(batch), None if neg is None else remap(neg))
            tape.backward(loss)
            if not np.isfinite(loss.value):
                raise tc.NumericError(f"non-finite loss at epoch {epoch}")
            tc.adam_step(params, {k: v.grad if v.grad is not None else np.zeros_like(v.value)
                                  for k, v in vars_.items()}, state)
            total += float(loss.value) * len(batch)
            count += len(batch)
        history.append((epoch, "train", total / max(count, 1)))
        log.debug("epoch %d loss %.6f", epoch, history[-1][2])
    return history


def train_contrastive(graph: MetagenomicGraph, encoder_config: gnn.EncoderConfig, train_config: TrainConfig,
                      corpus: Corpus | None = None) -> TrainResult:
    """Contrastive pre-training of the GCN encoder.

    Each epoch regenerates walks and pairs, then takes one Adam step per
    mini-batch of positive pairs (each with ``n_negatives`` negatives). With
    ``fanouts`` set, every batch runs on neighbourhood-sampled blocks;
    otherwise on the full graph, which is what unlimited fanouts reduce to.
    """
    cfg = train_config
    _check_sampler(graph, cfg)
    for et in encoder_config.edge_types:
        graph.edges(et)
    inputs = gnn.GraphInputs.from_graph(graph, encoder_config)
    params = gnn.init_params(encoder_config, cfg.seed)
    layer_adjs = inputs.layer_adjs(encoder_config)
    use_blocks = cfg.fanouts is not None and any(f is not None for f in cfg.fanouts)

    def embed_batch(tape, vars_, batch, neg, rng):
        if not use_blocks:
            return gnn.forward(inputs, encoder_config, vars_, tape), lambda ids: ids
        ids = batch.ravel() if neg is None else np.concatenate([batch.ravel(), neg.ravel()])
        seeds = np.unique(ids)
        blocks = ss.neighborhood_sample(layer_adjs, seeds, cfg.fanouts, seed=rng)
        z = gnn.forward_blocks(blocks, inputs.h0, encoder_config, vars_, tape)
        return z, lambda x: np.searchsorted(seeds, x)

    history = _contrastive_loop(graph, cfg, params, embed_batch)
    embedder = GcnEmbedder(encoder_config, params, graph, corpus)
    return TrainResult(params=params, embeddings=embedder.node_embeddings, history=history, embedder=embedder)


def train_gae(graph: MetagenomicGraph, encoder_config: gnn.EncoderConfig, train_config: TrainConfig,
              corpus: Corpus | None = None) -> TrainResult:
    """Full-batch Adam on the graph-autoencoder reconstruction loss."""
    cfg = train_config
    if len(graph.dbg) == 0:
        raise TrainerError("GAE needs dBG edges")
    sub_ks = sorted(graph.kf) or sorted(graph.features)
    inputs = gnn.GraphInputs.from_graph(graph, encoder_config)
    params = gnn.init_params(encoder_config, cfg.seed)
    params.update(init_decoders(encoder_config.dim, sub_ks, cfg.seed))
    state = tc.AdamState(lr=cfg.lr)
    history = []

    def objective(tape, vars_):
        z = gnn.forward(inputs, encoder_config, {k: v for k, v in vars_.items() if k.startswith("theta_")}, tape)
        return gae_loss(z, graph, {k: v for k, v in vars_.items() if k.startswith("dec_")})

    for epoch in range(cfg.epochs):
        loss, grads = tc.value_and_grad(objective, params)
        if not np.isfinite(loss):
            raise tc.NumericError(f"non-finite GAE loss at epoch {epoch}")
        history.append((epoch, "train", loss))
        tc.adam_step(params, grads, state)
    embedder = GcnEmbedder(encoder_config, params, graph, corpus)
    return TrainResult(params=params, embeddings=embedder.node_embeddings, history=history, embedder=embedder)


def train_baseline(variant: str, graph: MetagenomicGraph, train_config: TrainConfig, dim: int = 64,
                   corpus: Corpus | None = None) -> TrainResult:
    """Embedding-table baselines trained with the same contrastive loss.

    ``node2vec`` draws context pairs from biased walks on the dBG edges;
    ``word2vec`` draws them from windows over the raw k-mer streams of
    ``corpus``.
    """
    cfg = train_config
    if variant not in ("word2vec", "node2vec"):
        raise ValueError(f"unknown baseline variant {variant!r}")
    if variant == "word2vec" and corpus is None:
        raise TrainerError("word2vec baseline needs the sequence corpus")
    if variant == "node2vec" and len(graph.dbg) == 0:
        raise TrainerError("node2vec baseline needs dBG edges")
    rng = np.random.default_rng([cfg.seed, 3])
    params = {"table": rng.normal(0.0, 0.1, size=(graph.n_nodes, dim))}

    if variant == "word2vec":
        def pair_source(seed):
            return ss.sequence_window_pairs(corpus, graph.vocab, cfg.walk.window, seed=seed)
    else:
        def pair_source(seed):
            walks = ss.biased_random_walks(graph.dbg, graph.n_nodes, cfg.walk, seed=seed)
            return ss.walks_to_pairs(walks, cfg.walk.window, seed=seed + 1)

    def embed_batch(tape, vars_, batch, neg, rng):
        return vars_["table"], lambda ids: ids

    history = _contrastive_loop(graph, cfg, params, embed_batch, pair_source=pair_source)
    embedder = TableEmbedder(graph.vocab, params["table"])
    return TrainResult(params=params, embeddings=params["table"], history=history, embedder=embedder)


def pretrain(graph: MetagenomicGraph, encoder_config: gnn.EncoderConfig, train_config: TrainConfig,
             corpus: Corpus | None = None, variant: str = "node2vec") -> TrainResult:
    """Dispatch on objective and encoder family."""
    if train_config.encoder == "table":
        return train_baseline(variant, graph, train_config, dim=encoder_config.dim, corpus=corpus)
    if train_config.objective == "gae":
        return train_gae(graph, encoder_config, train_config, corpus)
    return train_contrastive(graph, encoder_config, train_config, corpus)


def sequence_kmers(corpus: Corpus, k: int) -> list[str]:
    return [km for seq in corpus for km in extract_kmers(seq, k)]
