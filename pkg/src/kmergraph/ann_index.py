"""Inverted-file (IVF) nearest-neighbour index over L2-normalised vectors.

A k-means coarse quantizer partitions the vectors into ``nlist`` cells.
Queries scan the ``nprobe`` cells whose centroids are closest and rank the
candidates by inner product, which equals cosine similarity because every
stored vector has unit norm. Vectors are stored flat (no residual
quantization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def default_nlist(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n)))


def default_nprobe(nlist: int) -> int:
    return max(1, math.ceil(nlist / 8))


def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(vectors, nlist: int, iters: int = 20, seed: int = 0, trace: list | None = None) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations.

    A cluster that ends up empty is re-seeded at the point currently farthest
    from its centroid. If ``trace`` is given, the objective (sum of squared
    distances) after each assignment step is appended to it.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = len(x)
    if nlist > n:
        raise ValueError(f"nlist={nlist} exceeds number of vectors {n}")
    if nlist < 1 or iters < 1:
        raise ValueError("nlist and iters must be >= 1")
    rng = np.random.default_rng(seed)

    centroids = np.empty((nlist, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    closest = ((x - centroids[0]) ** 2).sum(1)
    for c in range(1, nlist):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = min(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"), n - 1)
        centroids[c] = x[idx]
        closest = np.minimum(closest, ((x - centroids[c]) ** 2).sum(1))

    for _ in range(iters):
        d = _sq_dists(x, centroids)
        assign = d.argmin(1)
        point_cost = d[np.arange(n), assign]
        counts = np.bincount(assign, minlength=nlist)
        for c in np.flatnonzero(counts == 0):
            far = int(point_cost.argmax())
            centroids[c] = x[far]
            old = assign[far]
            counts[old] -= 1
            assign[far] = c
            counts[c] = 1
            point_cost[far] = 0.0
        if trace is not None:
            trace.append(float(point_cost.sum()))
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
    return centroids


@dataclass
class IvfIndex:
    centroids: np.ndarray
    vectors: np.ndarray
    assignments: np.ndarray
    postings: list

    @property
    def nlist(self) -> int:
        return len(self.centroids)

    @property
    def ntotal(self) -> int:
        return len(self.vectors)

    def search(self, query, n: int, nprobe: int, exclude: int | None = None) -> list[tuple[int, float]]:
        """Top-``n`` ``(id, cosine)`` pairs, best first, ties broken by ascending id."""
        if not 1 <= nprobe <= self.nlist:
            raise ValueError(f"nprobe must be in [1, {self.nlist}], got {nprobe}")
        if n < 1:
            raise ValueError("n must be >= 1")
        q = normalize_rows(np.asarray(query, dtype=np.float64)[None, :])[0]
        if nprobe == self.nlist:
            cand = np.arange(self.ntotal)
        else:
            cell_d = ((self.centroids - q) ** 2).sum(1)
            cells = np.lexsort((np.arange(self.nlist), cell_d))[:nprobe]
            cand = np.sort(np.concatenate([self.postings[c] for c in cells]))
        if exclude is not None:
            cand = cand[cand != exclude]
        scores = self.vectors[cand] @ q
        order = _rank(cand, scores)[:n]
        return [(int(cand[o]), float(scores[o])) for o in order]

    def search_id(self, i: int, n: int, nprobe: int) -> list[tuple[int, float]]:
        """Neighbours of an indexed vector, excluding the vector itself."""
        return self.search(self.vectors[i], n, nprobe, exclude=i)


def _rank(ids, scores) -> np.ndarray:
    # Round so cosines equal up to float noise count as ties and fall back to id order.
    return np.lexsort((ids, -np.round(scores, 12)))


def normalize_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError("cannot normalise a zero vector")
    return x / norms[:, None]


def build(vectors, nlist: int | None = None, seed: int = 0, iters: int = 20) -> IvfIndex:
    """Normalise ``vectors``, train the coarse quantizer and fill the posting lists."""
    x = normalize_rows(vectors)
    if len(x) < 1:
        raise ValueError("cannot index an empty set of vectors")
    if nlist is None:
        nlist = default_nlist(len(x))
    centroids = kmeans(x, nlist, iters=iters, seed=seed)
    assign = _sq_dists(x, centroids).argmin(1)
    postings = [np.flatnonzero(assign == c) for c in range(nlist)]
    return IvfIndex(centroids=centroids, vectors=x, assignments=assign, postings=postings)


def brute_force_topn(vectors, i: int, n: int) -> list[tuple[int, float]]:
    """Exact top-``n`` cosine neighbours of row ``i`` (excluding ``i``), same tie rule as the index."""
    x = normalize_rows(vectors)
    scores = x @ x[i]
    ids = np.arange(len(x))
    keep = ids != i
    ids, scores = ids[keep], scores[keep]
    order = _rank(ids, scores)[:n]
    return [(int(ids[o]), float(scores[o])) for o in order]


def recall_at_n(index: IvfIndex, n: int, nprobe: int, queries=None) -> float:
    """Mean fraction of the exact top-``n`` ids returned by the index for indexed queries."""
    x = index.vectors
    queries = range(index.ntotal) if queries is None else queries
    hits = total = 0
    for i in queries:
        scores = x @ x[i]
        ids = np.arange(len(x))
        keep = ids != i
        exact = set(ids[keep][_rank(ids[keep], scores[keep])[:n]].tolist())
        got = {j for j, _ in index.search_id(i, n, nprobe)}
        hits += len(exact & got)
        total += len(exact)
    return hits / total if total else 1.0
