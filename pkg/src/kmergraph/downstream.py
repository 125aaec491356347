"""Evaluation tasks: edit distance approximation and closest string retrieval.

Sequence embeddings are built by aggregating k-mer embeddings (mean or
concatenation). For edit distance approximation a single linear layer maps
them into the Poincare ball, and ``l * hyperbolic_distance`` is regressed
onto the true edit distance (``l`` = the dataset's maximum sequence length).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from . import tensor_core as tc
from .seq_corpus import Corpus, KmerVocab, extract_kmers

ONE_HOT_MAX_K = 7


class CapacityError(MemoryError):
    """One-hot encoding requested above the configured size cap."""


# -- edit distance ----------------------------------------------------------

def edit_distance(s1: str, s2: str) -> int:
    """Levenshtein distance (unit insert/delete/substitute), two-row DP.

    Each DP row is computed with vectorised numpy: substitutions and
    deletions elementwise, then insertions via a running minimum of
    ``row[j] - j``.
    """
    if len(s1) < len(s2):
        s1, s2 = s2, s1
    if not s2:
        return len(s1)
    b = np.frombuffer(s2.encode("ascii"), dtype=np.uint8)
    j = np.arange(len(s2) + 1)
    prev = j.copy()
    cur = np.empty_like(prev)
    for ch in s1.encode("ascii"):
        cur[0] = prev[0] + 1
        np.minimum(prev[1:] + 1, prev[:-1] + (b != ch), out=cur[1:])
        prev = np.minimum.accumulate(cur - j) + j
    return int(prev[-1])


# -- hyperbolic geometry ----------------------------------------------------

def project_to_ball(x, eps: float = tc.BALL_EPS) -> np.ndarray:
    """``x / (1 + |x|)`` clamped to norm ``<= 1 - eps`` (row-wise for matrices)."""
    return tc.project_to_ball_np(x, eps)


def hyperbolic_distance(u, v) -> np.ndarray | float:
    """Poincare-ball distance ``arccosh(1 + 2|u-v|^2 / ((1-|u|^2)(1-|v|^2)))``."""
    d = tc.poincare_distance_np(u, v)
    return float(d) if np.ndim(d) == 0 else d


# -- sequence embeddings ----------------------------------------------------

def one_hot_embedding(vocab: KmerVocab, max_k: int = ONE_HOT_MAX_K, override: bool = False) -> np.ndarray:
    """Identity rows, one per vocabulary k-mer."""
    if vocab.k > max_k and not override:
        raise CapacityError(f"one-hot encoding for k={vocab.k} exceeds the cap k<={max_k} "
                            f"(4^{vocab.k} dimensions); pass override to force it")
    return np.eye(len(vocab))


def embed_sequence(seq, embedder, k: int, mode: str = "mean") -> np.ndarray:
    """Mean of the sequence's k-mer embeddings, or their in-order concatenation."""
    bases = seq.bases if hasattr(seq, "bases") else seq
    e = embedder.embed_kmers(extract_kmers(bases, k))
    if mode == "mean":
        return e.mean(0)
    if mode == "concat":
        return e.reshape(-1)
    raise ValueError(f"unknown aggregation mode {mode!r}")


@dataclass
class SequenceEmbeddings:
    matrix: object  # ndarray or scipy sparse, one row per sequence
    mode: str
    n_padded: int = 0


def embed_corpus(corpus: Corpus, embedder, k: int, mode: str = "mean", sparse_ok: bool = False) -> SequenceEmbeddings:
    """Embed every sequence of ``corpus``.

    In ``concat`` mode sequences shorter than the longest are padded by
    repeating their last k-mer embedding; ``n_padded`` reports how many were.
    With ``sparse_ok`` a mostly-zero result (e.g. one-hot) is returned as CSR.
    """
    kmer_lists = [extract_kmers(s, k) for s in corpus]
    uniq = list(dict.fromkeys(km for kms in kmer_lists for km in kms))
    table = embedder.embed_kmers(uniq)
    pos = {km: i for i, km in enumerate(uniq)}
    idx = [np.array([pos[km] for km in kms]) for kms in kmer_lists]
    if mode == "mean":
        mat = np.stack([table[ix].mean(0) for ix in idx])
        return SequenceEmbeddings(mat, mode)
    if mode != "concat":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    width = max(len(ix) for ix in idx)
    n_padded = 0
    padded = []
    for ix in idx:
        if len(ix) < width:
            n_padded += 1
            ix = np.concatenate([ix, np.full(width - len(ix), ix[-1])])
        padded.append(ix)
    padded = np.stack(padded)
    d = table.shape[1]
    if sparse_ok and np.count_nonzero(table) <= 0.05 * table.size:
        t = sp.coo_matrix(table)
        row_of = {}
        for r, c, v in zip(t.row, t.col, t.data):
            row_of.setdefault(r, []).append((c, v))
        rows, cols, vals = [], [], []
        for s, ix in enumerate(padded):
            for p, km in enumerate(ix):
                for c, v in row_of.get(km, ()):
                    rows.append(s)
                    cols.append(p * d + c)
                    vals.append(v)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(padded), width * d))
    else:
        mat = table[padded].reshape(len(padded), width * d)
    return SequenceEmbeddings(mat, mode, n_padded)


# -- pair datasets ----------------------------------------------------------

@dataclass
class SequencePairDataset:
    corpus: Corpus
    a: np.ndarray
    b: np.ndarray
    ed: np.ndarray
    max_length: int

    def __len__(self):
        return len(self.a)

    def to_tsv(self) -> str:
        ids = [s.id for s in self.corpus]
        return "".join(f"{ids[i]}\t{ids[j]}\t{e}\n" for i, j, e in zip(self.a, self.b, self.ed))


def sample_pairs(n: int, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform unordered pairs of distinct indices; without replacement when possible."""
    if n < 2:
        raise ValueError("need at least two sequences to form pairs")
    total = n * (n - 1) // 2
    if n_pairs <= total:
        flat = rng.choice(total, size=n_pairs, replace=False)
        combos = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
        return combos[flat]
    i = rng.integers(n, size=n_pairs)
    j = rng.integers(n - 1, size=n_pairs)
    return np.stack([i, j + (j >= i)], 1)


def build_pair_dataset(splits: dict, pairs_per_split, seed: int = 0, max_length: int | None = None) -> dict:
    """Random within-split sequence pairs labelled with their exact edit distance.

    ``pairs_per_split`` is an int or a ``{split: count}`` mapping. ``max_length``
    defaults to the longest sequence over all splits.
    """
    if max_length is None:
        max_length = max(c.max_length for c in splits.values())
    out = {}
    for n, (name, corpus) in enumerate(splits.items()):
        count = pairs_per_split[name] if isinstance(pairs_per_split, dict) else pairs_per_split
        if len(corpus) < 2:
            raise ValueError(f"split {name!r} has fewer than 2 sequences")
        rng = np.random.default_rng([seed, n])
        pairs = sample_pairs(len(corpus), count, rng)
        ed = np.array([edit_distance(corpus[i].bases, corpus[j].bases) for i, j in pairs], dtype=np.int64)
        out[name] = SequencePairDataset(corpus, pairs[:, 0], pairs[:, 1], ed, max_length)
    return out


# -- distance head ----------------------------------------------------------

@dataclass
class DistanceHead:
    """``f(x) = project_to_ball(s * (x - mu) @ W + b)``.

    ``mu`` and ``s`` are fixed input statistics (training mean and inverse
    mean row norm); they only reparametrise the affine map.
    """

    weight: np.ndarray
    bias: np.ndarray
    input_scale: float = 1.0
    input_mean: np.ndarray | None = None

    def linear(self, x) -> np.ndarray:
        z = np.asarray(x @ self.weight)
        if self.input_mean is not None:
            z = z - self.input_mean @ self.weight
        return z * self.input_scale + self.bias

    def apply(self, x) -> np.ndarray:
        return project_to_ball(self.linear(x))

    def predict(self, x, a, b, length: int) -> np.ndarray:
        f = self.apply(x)
        return length * tc.poincare_distance_np(f[np.asarray(a)], f[np.asarray(b)])


def _head_objective(x, a, b, ed, length, input_scale, input_mean):
    def fn(tape, v):
        lin = tc.spmm(x, v["weight"]) if sp.issparse(x) else tc.matmul(x, v["weight"])
        lin = tc.sub(lin, tc.matmul(input_mean[None, :], v["weight"]))
        f = tc.project_to_ball(tc.add(tc.scale(lin, input_scale), v["bias"]))
        h = tc.poincare_distance(tc.gather(f, a), tc.gather(f, b))
        return tc.mean(tc.square(tc.sub(tc.scale(h, float(length)), ed.astype(np.float64))))
    return fn


def input_stats(x) -> tuple[np.ndarray, float]:
    """Column mean and the scalar making the average centred row norm 1."""
    mu = np.asarray(x.mean(0)).ravel()
    if sp.issparse(x):
        sq = np.asarray(x.multiply(x).sum(1)).ravel() - 2 * np.asarray(x @ mu).ravel() + mu @ mu
    else:
        sq = ((np.asarray(x) - mu) ** 2).sum(1)
    m = np.sqrt(np.maximum(sq, 0)).mean()
    return mu, (1.0 / m if m > 0 else 1.0)


def train_distance_head(x, train: SequencePairDataset, val: SequencePairDataset | None = None,
                        head_dim: int = 128, lr: float = 1e-3, epochs: int = 200, seed: int = 0,
                        batch_size: int | None = None, x_val=None) -> tuple[DistanceHead, list]:
    """Fit a linear map into the Poincare ball so ``l * h`` matches edit distances.

    Full-batch Adam by default. The parameters with the best validation
    %RMSE (training loss when no validation set is given) are returned along
    with the history ``[(epoch, split, value), ...]``.
    """
    rng = np.random.default_rng([seed, 5])
    dim_in = x.shape[1]
    mu, scale_ = input_stats(x)
    params = {"weight": tc.glorot_uniform((dim_in, head_dim), rng), "bias": np.zeros(head_dim)}
    state = tc.AdamState(lr=lr)
    x_val = x if x_val is None else x_val
    history = []
    best, best_score = None, math.inf
    n = len(train)
    for epoch in range(epochs):
        order = np.arange(n) if batch_size is None else rng.permutation(n)
        step = n if batch_size is None else batch_size
        losses = []
        for lo in range(0, n, step):
            sel = order[lo:lo + step]
            fn = _head_objective(x, train.a[sel], train.b[sel], train.ed[sel], train.max_length, scale_, mu)
            loss, grads = tc.value_and_grad(fn, params)
            if not math.isfinite(loss):
                raise tc.NumericError(f"non-finite head loss at epoch {epoch}, step {state.step + 1}")
            tc.adam_step(params, grads, state)
            losses.append(loss)
        head = DistanceHead(params["weight"].copy(), params["bias"].copy(), scale_, mu)
        train_rmse = percent_rmse(head, train, x)
        history.append((epoch, "train", train_rmse))
        score = train_rmse
        if val is not None:
            score = percent_rmse(head, val, x_val)
            history.append((epoch, "val", score))
        if score < best_score:
            best, best_score = head, score
    return best, history


def percent_rmse(head: DistanceHead, pairs: SequencePairDataset, x, literal: bool = False) -> float:
    """``(100 / l) * sqrt(mean((ED - l * h)^2))``.

    ``literal=True`` drops the division by the number of pairs (sum instead of
    mean under the root).
    """
    if len(pairs) == 0:
        raise ValueError("no pairs to evaluate")
    pred = head.predict(x, pairs.a, pairs.b, pairs.max_length)
    sq = (pairs.ed - pred) ** 2
    agg = sq.sum() if literal else sq.mean()
    return float(100.0 / pairs.max_length * math.sqrt(agg))


# -- retrieval --------------------------------------------------------------

def nearest_by_edit_distance(queries: Corpus, refs: Corpus) -> np.ndarray:
    """Boolean ``(Q, R)`` matrix marking, per query, every reference at minimum edit distance."""
    if len(refs) == 0:
        raise ValueError("empty reference set")
    d = np.array([[edit_distance(q.bases, r.bases) for r in refs] for q in queries])
    return d == d.min(1, keepdims=True)


def retrieval_ranks(query_emb, ref_emb, truth: np.ndarray) -> np.ndarray:
    """1-based rank of the best-placed true nearest reference for each query.

    References are ordered by hyperbolic distance between ball-projected
    embeddings; rank is one plus the number of references strictly closer.
    """
    q = project_to_ball(np.asarray(query_emb, dtype=np.float64))
    r = project_to_ball(np.asarray(ref_emb, dtype=np.float64))
    if len(r) == 0:
        raise ValueError("empty reference set")
    ranks = np.empty(len(q), dtype=np.int64)
    for i in range(len(q)):
        d = tc.poincare_distance_np(np.broadcast_to(q[i], r.shape), r)
        best_true = d[truth[i]].min()
        ranks[i] = 1 + int((d < best_true).sum())
    return ranks


def topn_cutoff(n_percent: float, n_refs: int) -> int:
    return max(1, math.ceil(n_percent / 100.0 * n_refs - 1e-9))


def retrieval_topn(query_emb, ref_emb, truth: np.ndarray, n_percent: float) -> float:
    """Percentage of queries whose true closest reference ranks within the top ``n_percent``."""
    truth = np.asarray(truth, dtype=bool)
    ranks = retrieval_ranks(query_emb, ref_emb, truth)
    return float(100.0 * np.mean(ranks <= topn_cutoff(n_percent, truth.shape[1])))


# -- reports ----------------------------------------------------------------

def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvalReport:
    task: str
    k: int
    method: str
    seed: int
    metric: str
    value: float
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def config_fingerprint(self) -> str:
        return fingerprint(self.config)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config_fingerprint"] = self.config_fingerprint
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n"
