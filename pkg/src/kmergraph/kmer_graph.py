"""Heterogeneous k-mer graph: De Bruijn transition edges plus sub-k-mer similarity edges.

Edge types are named ``"dBG"`` and ``"KF_<sub_k>"`` (e.g. ``"KF_2"``).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from . import ann_index
from .seq_corpus import Corpus, KmerVocab, build_vocab, encode_kmer, OutOfVocabularyError

DBG = "dBG"


def kf_name(sub_k: int) -> str:
    return f"KF_{sub_k}"


def parse_edge_type(name: str) -> int | None:
    """Return the sub_k of a ``KF_<sub_k>`` edge type, or ``None`` for ``dBG``."""
    if name == DBG:
        return None
    if name.startswith("KF_") and name[3:].isdigit():
        return int(name[3:])
    raise ValueError(f"unknown edge type {name!r}")


@dataclass
class EdgeSet:
    """Weighted edges of one type.

    Directed sets hold one triple per arc. Undirected (KF) sets hold each
    unordered pair once with ``src < dst``; :meth:`weight` and :meth:`to_csr`
    expose both orientations.
    """

    edge_type: str
    src: np.ndarray
    dst: np.ndarray
    weight_: np.ndarray
    directed: bool

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight_ = np.asarray(self.weight_, dtype=np.float64)

    def __len__(self):
        return len(self.src)

    def triples(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight_.tolist()))

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(i, j): w for i, j, w in self.triples()}

    def weight(self, i: int, j: int) -> float:
        d = self._lookup()
        if (i, j) in d:
            return d[(i, j)]
        if not self.directed and (j, i) in d:
            return d[(j, i)]
        return 0.0

    def _lookup(self):
        if not hasattr(self, "_cache"):
            self._cache = self.as_dict()
        return self._cache

    def to_csr(self, n: int, symmetric: bool | None = None) -> sp.csr_matrix:
        """Adjacency matrix; undirected sets are mirrored by default."""
        symmetric = (not self.directed) if symmetric is None else symmetric
        if symmetric and not self.directed:
            rows = np.concatenate([self.src, self.dst])
            cols = np.concatenate([self.dst, self.src])
            vals = np.concatenate([self.weight_, self.weight_])
        else:
            rows, cols, vals = self.src, self.dst, self.weight_
        m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        m.sort_indices()
        return m


@dataclass
class SubKmerFrequencyMatrix:
    sub_k: int
    counts: np.ndarray  # (N, 4**sub_k) integer counts

    @property
    def dim(self) -> int:
        return 4 ** self.sub_k


@dataclass
class MetagenomicGraph:
    vocab: KmerVocab
    dbg: EdgeSet
    kf: dict = field(default_factory=dict)        # sub_k -> EdgeSet
    features: dict = field(default_factory=dict)  # sub_k -> SubKmerFrequencyMatrix
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.vocab)

    @property
    def k(self) -> int:
        return self.vocab.k

    @property
    def edge_types(self) -> list[str]:
        return [DBG] + [kf_name(s) for s in sorted(self.kf)]

    def edges(self, edge_type: str) -> EdgeSet:
        sub_k = parse_edge_type(edge_type)
        if sub_k is None:
            return self.dbg
        if sub_k not in self.kf:
            raise KeyError(f"graph has no {edge_type} edges")
        return self.kf[sub_k]

    def summary(self) -> str:
        parts = [f"N={self.n_nodes}", f"dBG={len(self.dbg)}"]
        parts += [f"{kf_name(s)}={len(self.kf[s])}" for s in sorted(self.kf)]
        return ", ".join(parts)


def count_transitions(corpus: Corpus | Iterable, vocab: KmerVocab) -> Counter:
    """``T[(i, j)]`` = number of times k-mer ``i`` directly precedes k-mer ``j``."""
    k = vocab.k
    counts: Counter = Counter()
    for seq in corpus:
        bases = seq.bases if hasattr(seq, "bases") else seq
        ids = [vocab.index(bases[p:p + k]) for p in range(len(bases) - k + 1)]
        counts.update(zip(ids, ids[1:]))
    return counts


def dbg_edges(counts: Counter) -> EdgeSet:
    """Transition counts normalised to per-source probabilities."""
    out_total: Counter = Counter()
    for (i, _), c in counts.items():
        out_total[i] += c
    keys = sorted(counts)
    src = [i for i, _ in keys]
    dst = [j for _, j in keys]
    w = [counts[key] / out_total[key[0]] for key in keys]
    return EdgeSet(DBG, src, dst, w, directed=True)


def subkmer_frequency(kmer: str, sub_k: int) -> np.ndarray:
    """Counts of every length-``sub_k`` window of ``kmer``, indexed by packed code."""
    if not 1 <= sub_k <= len(kmer):
        raise ValueError(f"sub_k must be in [1, {len(kmer)}], got {sub_k}")
    y = np.zeros(4 ** sub_k, dtype=np.int64)
    for p in range(len(kmer) - sub_k + 1):
        y[encode_kmer(kmer[p:p + sub_k])] += 1
    return y


def frequency_matrix(vocab: KmerVocab, sub_k: int) -> SubKmerFrequencyMatrix:
    rows = np.zeros((len(vocab), 4 ** sub_k), dtype=np.int64)
    for i, km in enumerate(vocab.kmer_of):
        rows[i] = subkmer_frequency(km, sub_k)
    return SubKmerFrequencyMatrix(sub_k, rows)


def kf_similarity(y_i, y_j) -> float:
    """Cosine similarity of two count vectors.

    Computed as ``dot / sqrt(|y_i|^2 |y_j|^2)`` so that integer inputs whose
    norm product is a perfect square (e.g. 1/2) come out exact.
    """
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    return float(y_i @ y_j / math.sqrt(float(y_i @ y_i) * float(y_j @ y_j)))


def _cosine_block(y, rows, cols=None):
    y = y.astype(np.float64)
    sq = (y * y).sum(1)
    other = y if cols is None else y[cols]
    osq = sq if cols is None else sq[cols]
    return (y[rows] @ other.T) / np.sqrt(sq[rows, None] * osq[None, :])


def kf_edges_exact(features: SubKmerFrequencyMatrix, t: float = 0.5, block: int = 1024) -> EdgeSet:
    """All unordered pairs with cosine >= ``t`` (inclusive), self-pairs excluded."""
    if not 0 < t <= 1:
        raise ValueError(f"threshold t must be in (0, 1], got {t}")
    y = features.counts
    n = len(y)
    if n < 2:
        raise ValueError("need at least two nodes for similarity edges")
    src, dst, w = [], [], []
    for lo in range(0, n, block):
        rows = np.arange(lo, min(lo + block, n))
        cos = _cosine_block(y, rows)
        ii, jj = np.nonzero((cos >= t) & (np.arange(n)[None, :] > rows[:, None]))
        src.append(rows[ii])
        dst.append(jj)
        w.append(cos[ii, jj])
    return EdgeSet(kf_name(features.sub_k), np.concatenate(src), np.concatenate(dst),
                   np.concatenate(w), directed=False)


def kf_edges_ann(features: SubKmerFrequencyMatrix, n_neighbors: int, nlist: int | None = None,
                 nprobe: int | None = None, seed: int = 0, t: float | None = None) -> EdgeSet:
    """Similarity edges from each node to its approximate top ``n_neighbors`` by cosine.

    Neighbour lists are symmetrised by union and stored once per pair. Weights
    are the cosine of the raw count vectors (the exact-path formula), so both
    paths share one weight scale. Zero-similarity neighbours are dropped, and
    ``t`` optionally applies the same inclusive threshold as the exact path.
    """
    y = features.counts
    n = len(y)
    if not 1 <= n_neighbors < n:
        raise ValueError(f"n_neighbors must be in [1, {n - 1}], got {n_neighbors}")
    pairs: set[tuple[int, int]] = set()
    if np.all(y == y[0]):
        # degenerate input: every vector identical, clustering is meaningless
        for i in range(n):
            for j, _ in ann_index.brute_force_topn(y, i, n_neighbors):
                pairs.add((min(i, j), max(i, j)))
    else:
        nlist = ann_index.default_nlist(n) if nlist is None else min(nlist, n)
        nprobe = ann_index.default_nprobe(nlist) if nprobe is None else min(nprobe, nlist)
        index = ann_index.build(y, nlist=nlist, seed=seed)
        for i in range(n):
            for j, _ in index.search_id(i, n_neighbors, nprobe):
                pairs.add((min(i, j), max(i, j)))
    if not pairs:
        return EdgeSet(kf_name(features.sub_k), [], [], [], directed=False)
    ps = np.array(sorted(pairs), dtype=np.int64)
    yf = y.astype(np.float64)
    sq = (yf * yf).sum(1)
    w = (yf[ps[:, 0]] * yf[ps[:, 1]]).sum(1) / np.sqrt(sq[ps[:, 0]] * sq[ps[:, 1]])
    keep = w > 0 if t is None else w >= t
    ps, w = ps[keep], w[keep]
    return EdgeSet(kf_name(features.sub_k), ps[:, 0], ps[:, 1], w, directed=False)


def assemble_graph(corpus: Corpus, k: int, sub_k_list=(2,), t: float | None = None,
                   n_neighbors: int | None = None, mode: str = "exact", nlist: int | None = None,
                   nprobe: int | None = None, seed: int = 0, extra_kmers: Iterable[str] = ()) -> MetagenomicGraph:
    """Build the full heterogeneous graph from a corpus.

    ``t`` defaults to 0.5 in exact mode; in ann mode it is an optional extra
    filter on top of the neighbour lists. ``extra_kmers`` adds nodes that carry features (and similarity edges) but
    have no observed transitions, which is how unseen k-mers get embedded.
    """
    if mode not in ("exact", "ann"):
        raise ValueError(f"mode must be 'exact' or 'ann', got {mode!r}")
    sub_k_list = sorted(set(sub_k_list))
    for s in sub_k_list:
        if not 1 <= s <= k:
            raise ValueError(f"sub_k={s} out of range for k={k}")
    vocab = build_vocab(corpus, k)
    for km in extra_kmers:
        vocab.add(km)
    dbg = dbg_edges(count_transitions(corpus, vocab))
    features, kf = {}, {}
    for s in sub_k_list:
        features[s] = frequency_matrix(vocab, s)
        if mode == "exact":
            kf[s] = kf_edges_exact(features[s], 0.5 if t is None else t)
        else:
            nn = n_neighbors if n_neighbors is not None else min(10, len(vocab) - 1)
            kf[s] = kf_edges_ann(features[s], nn, nlist=nlist, nprobe=nprobe, seed=seed, t=t)
    meta = {"k": k, "sub_k_list": sub_k_list, "t": t, "n_neighbors": n_neighbors, "mode": mode,
            "nlist": nlist, "nprobe": nprobe, "seed": seed, "corpus_fingerprint": corpus.fingerprint()}
    return MetagenomicGraph(vocab=vocab, dbg=dbg, kf=kf, features=features, meta=meta)


def with_features(graph: MetagenomicGraph, sub_k_list) -> MetagenomicGraph:
    """Ensure frequency matrices exist for every ``sub_k`` (without adding edges)."""
    for s in sub_k_list:
        if s not in graph.features:
            graph.features[s] = frequency_matrix(graph.vocab, s)
    return graph


# -- serialization ----------------------------------------------------------

def _write_edges(path: Path, es: EdgeSet):
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, w in es.triples():
            fh.write(f"{i}\t{j}\t{w:.17g}\n")


def _read_edges(path: Path, edge_type: str, directed: bool) -> EdgeSet:
    src, dst, w = [], [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            a, b, c = line.split("\t")
            src.append(int(a))
            dst.append(int(b))
            w.append(float(c))
    return EdgeSet(edge_type, src, dst, w, directed=directed)


def save_graph(graph: MetagenomicGraph, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "nodes.tsv").write_text(graph.vocab.to_tsv(), encoding="utf-8")
    _write_edges(out / "edges_dbg.tsv", graph.dbg)
    for s, es in sorted(graph.kf.items()):
        _write_edges(out / f"edges_kf_{s}.tsv", es)
    for s, fm in sorted(graph.features.items()):
        fm.counts.astype("<u4").tofile(out / f"features_{s}.bin")
    meta = dict(graph.meta)
    meta.setdefault("k", graph.k)
    meta["kf_sub_k"] = sorted(graph.kf)
    meta["feature_sub_k"] = sorted(graph.features)
    meta["n_nodes"] = graph.n_nodes
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_graph(in_dir) -> MetagenomicGraph:
    d = Path(in_dir)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    vocab = KmerVocab.from_tsv((d / "nodes.tsv").read_text(encoding="utf-8"), k=meta["k"])
    dbg = _read_edges(d / "edges_dbg.tsv", DBG, directed=True)
    kf = {s: _read_edges(d / f"edges_kf_{s}.tsv", kf_name(s), directed=False) for s in meta["kf_sub_k"]}
    features = {}
    for s in meta["feature_sub_k"]:
        counts = np.fromfile(d / f"features_{s}.bin", dtype="<u4").astype(np.int64)
        features[s] = SubKmerFrequencyMatrix(s, counts.reshape(len(vocab), 4 ** s))
    return MetagenomicGraph(vocab=vocab, dbg=dbg, kf=kf, features=features, meta=meta)


def lookup_ids(vocab: KmerVocab, kmers: Iterable[str]) -> np.ndarray:
    try:
        return np.array([vocab.id_of[km] for km in kmers], dtype=np.int64)
    except KeyError as e:
        raise OutOfVocabularyError(e.args[0]) from None
