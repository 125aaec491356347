"""Positive/negative pair samplers and neighbourhood-sampled mini-batch blocks.

Pairs are returned as ``(P, 2)`` int64 arrays of ``(anchor, partner)`` ids.
Every sampler is a pure function of its inputs and seed.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .kmer_graph import EdgeSet
from .seq_corpus import KmerVocab, extract_kmers


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 20
    walks_per_node: int = 10
    window: int = 5

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _out_lists(edges: EdgeSet, n_nodes: int):
    nbrs = [[] for _ in range(n_nodes)]
    wts = [[] for _ in range(n_nodes)]
    for i, j, w in sorted(edges.triples()):
        nbrs[i].append(j)
        wts[i].append(w)
        if not edges.directed and i != j:
            nbrs[j].append(i)
            wts[j].append(w)
    return nbrs, wts


def biased_random_walks(dbg_edges: EdgeSet, n_nodes: int, cfg: WalkConfig = WalkConfig(), seed: int = 0,
                        start_nodes=None) -> list[list[int]]:
    """Second-order (node2vec) walks over the transition edges.

    From ``cur`` with predecessor ``prev`` the unnormalised weight of moving to
    ``x`` is ``w(cur, x) * alpha`` with ``alpha = 1/p`` if ``x == prev``,
    ``1`` if ``prev -> x`` is an edge, and ``1/q`` otherwise. The first step
    uses the raw weights. Walks stop early at nodes without out-edges.

    Each walk draws from its own generator seeded with ``(seed, node, index)``,
    so walks can be produced in any order or in parallel with the same result.
    """
    if len(dbg_edges) == 0:
        raise ValueError("cannot walk on an empty edge set")
    nbrs, wts = _out_lists(dbg_edges, n_nodes)
    nbr_sets = [set(x) for x in nbrs]
    inv_p, inv_q = 1.0 / cfg.p, 1.0 / cfg.q
    starts = range(n_nodes) if start_nodes is None else start_nodes
    walks = []
    for node in starts:
        for r in range(cfg.walks_per_node):
            u = np.random.default_rng([seed, int(node), r]).random(cfg.walk_length)
            walk = [int(node)]
            for step in range(1, cfg.walk_length):
                cur = walk[-1]
                cand = nbrs[cur]
                if not cand:
                    break
                if step == 1:
                    weights = wts[cur]
                else:
                    prev = walk[-2]
                    prev_out = nbr_sets[prev]
                    weights = [w * (inv_p if x == prev else 1.0 if x in prev_out else inv_q)
                               for x, w in zip(cand, wts[cur])]
                cum = np.cumsum(weights).tolist()
                pick = bisect.bisect_right(cum, u[step] * cum[-1])
                walk.append(cand[min(pick, len(cand) - 1)])
            walks.append(walk)
    return walks


def window_pairs(walk, m: int, seed=0) -> np.ndarray:
    """Context pairs from one walk with a shrinking window.

    For each position ``i`` a half-width ``delta`` is drawn uniformly from
    ``{1..m}`` and ``(walk[i], walk[j])`` is emitted for every ``j != i``
    with ``|i - j| <= delta`` inside the walk.
    """
    return _window_pairs(np.asarray(walk, dtype=np.int64), m, _rng(seed))


def _window_pairs(walk: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    if m < 1:
        raise ValueError("window must be >= 1")
    n = len(walk)
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    delta = rng.integers(1, m + 1, size=n)
    out = []
    pos = np.arange(n)
    for o in range(1, min(m, n - 1) + 1):
        fwd = pos[(delta >= o) & (pos + o < n)]
        bwd = pos[(delta >= o) & (pos - o >= 0)]
        out.append(np.stack([walk[fwd], walk[fwd + o]], 1))
        out.append(np.stack([walk[bwd], walk[bwd - o]], 1))
    return np.concatenate(out) if out else np.empty((0, 2), dtype=np.int64)


def walks_to_pairs(walks, m: int, seed=0) -> np.ndarray:
    rng = _rng(seed)
    parts = [_window_pairs(np.asarray(w, dtype=np.int64), m, rng) for w in walks]
    return np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.int64)


def expected_window_pair_count(length: int, m: int) -> float:
    """Exact expected number of pairs :func:`window_pairs` emits for a walk of ``length``."""
    total = 0.0
    for i in range(length):
        for d in range(1, m + 1):
            total += (min(i + d, length - 1) - max(i - d, 0)) / m
    return total


def structural_pairs(kf_edges, n_pairs: int, seed=0) -> np.ndarray:
    """Pairs drawn with probability proportional to similarity edge weight.

    ``kf_edges`` may be one :class:`EdgeSet` or several; with several sets a
    draw picks a set in proportion to its total weight, which is the same as
    pooling all edges. Each drawn pair is oriented at random.
    """
    sets = [kf_edges] if isinstance(kf_edges, EdgeSet) else list(kf_edges)
    src = np.concatenate([e.src for e in sets]) if sets else np.empty(0, np.int64)
    dst = np.concatenate([e.dst for e in sets]) if sets else np.empty(0, np.int64)
    w = np.concatenate([e.weight_ for e in sets]) if sets else np.empty(0)
    if len(w) == 0 or w.sum() <= 0:
        raise ValueError("structural sampling needs a non-empty similarity edge set")
    rng = _rng(seed)
    cum = np.cumsum(w)
    idx = np.searchsorted(cum, rng.random(n_pairs) * cum[-1], side="right")
    idx = np.minimum(idx, len(w) - 1)
    flip = rng.random(n_pairs) < 0.5
    a = np.where(flip, dst[idx], src[idx])
    b = np.where(flip, src[idx], dst[idx])
    return np.stack([a, b], 1)


def negative_pairs(n_nodes: int, n_pairs: int, seed=0) -> np.ndarray:
    """Uniform draws from all ordered pairs ``(i, j)`` with ``i != j``."""
    if n_nodes < 2:
        raise ValueError("negative sampling needs at least two nodes")
    rng = _rng(seed)
    i = rng.integers(n_nodes, size=n_pairs)
    return np.stack([i, _other_than(i, n_nodes, rng)], 1)


def negatives_for_anchors(anchors, n_nodes: int, n_neg: int, seed=0) -> np.ndarray:
    """``(len(anchors), n_neg)`` partners, uniform over nodes other than the anchor."""
    if n_nodes < 2:
        raise ValueError("negative sampling needs at least two nodes")
    rng = _rng(seed)
    anchors = np.repeat(np.asarray(anchors, dtype=np.int64)[:, None], n_neg, 1)
    return _other_than(anchors, n_nodes, rng)


def _other_than(i, n, rng):
    j = rng.integers(n - 1, size=np.shape(i))
    return j + (j >= i)


def sequence_window_pairs(corpus, vocab: KmerVocab, m: int, seed=0) -> np.ndarray:
    """Window pairs over each sequence's k-mer stream (Word2Vec-style context)."""
    rng = _rng(seed)
    parts = []
    for seq in corpus:
        ids = np.array([vocab.index(km) for km in extract_kmers(seq, vocab.k)], dtype=np.int64)
        parts.append(_window_pairs(ids, m, rng))
    return np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.int64)


@dataclass
class Blocks:
    """Layer-wise sampled receptive fields.

    ``nodes[0]`` are the input nodes and ``nodes[-1]`` the seeds. ``mats[l]``
    maps layer ``l`` inputs (``nodes[l]``) to its outputs (``nodes[l + 1]``);
    each ``nodes[l + 1]`` is a prefix of ``nodes[l]``.
    """

    nodes: list
    mats: list

    @property
    def seeds(self) -> np.ndarray:
        return self.nodes[-1]


def neighborhood_sample(layer_adjs, seeds, fanouts, seed=0) -> Blocks:
    """Sample per-layer neighbourhoods of ``seeds``.

    ``layer_adjs`` holds the normalised propagation matrix of every encoder
    layer (input layer first) and ``fanouts`` the per-layer neighbour budget;
    ``None`` or ``inf`` keeps all neighbours. When a node has more neighbours
    than its fanout, a uniform subset is kept and their weights are scaled by
    ``degree / fanout`` so the aggregation stays unbiased. Full-graph degrees
    are used throughout; the self-loop is always kept.
    """
    if len(fanouts) != len(layer_adjs):
        raise ValueError(f"{len(fanouts)} fanouts for {len(layer_adjs)} layers")
    rng = _rng(seed)
    dst = np.asarray(seeds, dtype=np.int64)
    nodes = [dst]
    mats = []
    for adj, fan in zip(reversed(layer_adjs), reversed(list(fanouts))):
        unlimited = fan is None or (isinstance(fan, float) and math.isinf(fan))
        pos = {int(v): i for i, v in enumerate(dst)}
        src = list(dst.tolist())
        rows, cols, vals = [], [], []
        indptr, indices, data = adj.indptr, adj.indices, adj.data
        for r, u in enumerate(dst.tolist()):
            lo, hi = indptr[u], indptr[u + 1]
            nb, w = indices[lo:hi], data[lo:hi]
            self_mask = nb == u
            rows.append(r)
            cols.append(r)
            vals.append(float(w[self_mask].sum()))
            nb, w = nb[~self_mask], w[~self_mask]
            if not unlimited and len(nb) > fan:
                keep = np.sort(rng.choice(len(nb), size=int(fan), replace=False))
                w = w[keep] * (len(nb) / fan)
                nb = nb[keep]
            for v, wv in zip(nb.tolist(), w.tolist()):
                c = pos.get(v)
                if c is None:
                    c = len(src)
                    pos[v] = c
                    src.append(v)
                rows.append(r)
                cols.append(c)
                vals.append(wv)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(dst), len(src)))
        mats.append(mat)
        dst = np.asarray(src, dtype=np.int64)
        nodes.append(dst)
    return Blocks(nodes=nodes[::-1], mats=mats[::-1])
