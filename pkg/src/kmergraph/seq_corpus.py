"""DNA sequence ingestion, k-mer extraction, vocabularies and synthetic corpora.

All sequence data is handled as upper-case ASCII strings over ``ACGT``.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

ALPHABET = "ACGT"
MAX_PACKED_K = 31

_BASE_CODE = {b: i for i, b in enumerate(ALPHABET)}
_INVALID_RUN = re.compile(r"[^ACGT]+")

# Qiita-like amplicon preset used by the synthetic benchmarks.
QIITA_PRESET = {"length": 150, "sub_rate": 0.05, "indel_rate": 0.01}


class CorpusError(ValueError):
    """Raised for malformed or unusable sequence input."""


class OutOfVocabularyError(KeyError):
    """A k-mer was requested that the vocabulary (or embedding table) does not hold."""

    def __str__(self):
        return f"out-of-vocabulary k-mer: {self.args[0]!r}"


@dataclass(frozen=True)
class DnaSequence:
    id: str
    bases: str

    def __len__(self):
        return len(self.bases)


@dataclass(frozen=True)
class Corpus:
    sequences: tuple[DnaSequence, ...]
    alphabet_size: int = field(default=4, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        seen = set()
        for s in self.sequences:
            if s.id in seen:
                raise CorpusError(f"duplicate sequence id {s.id!r}")
            seen.add(s.id)

    @classmethod
    def from_strings(cls, seqs: Iterable[str], prefix: str = "seq") -> "Corpus":
        return cls(tuple(DnaSequence(f"{prefix}{i}", _validated(s)) for i, s in enumerate(seqs)))

    def __len__(self):
        return len(self.sequences)

    def __iter__(self) -> Iterator[DnaSequence]:
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    @property
    def max_length(self) -> int:
        return max((len(s) for s in self.sequences), default=0)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for s in self.sequences:
            h.update(s.id.encode())
            h.update(b"\t")
            h.update(s.bases.encode())
            h.update(b"\n")
        return h.hexdigest()[:16]

    def to_fasta(self) -> str:
        return "".join(f">{s.id}\n{s.bases}\n" for s in self.sequences)


def _validated(bases: str) -> str:
    bases = bases.strip().upper()
    m = _INVALID_RUN.search(bases)
    if m:
        raise CorpusError(f"invalid base {m.group()[0]!r} in sequence")
    return bases


def parse_fasta(data: bytes | str, policy: str = "strip") -> Corpus:
    """Parse FASTA or one-sequence-per-line text into a :class:`Corpus`.

    The format is chosen from the first non-blank byte: ``>`` means FASTA,
    anything else is treated as plain lines (ids ``seq0``, ``seq1``, ...).
    Lower-case bases are upper-cased.

    ``policy`` controls non-ACGT characters: ``"strip"`` splits a record at
    every invalid run into ``<id>/0``, ``<id>/1``, ... and ``"reject"`` raises
    :class:`CorpusError`.
    """
    if policy not in ("strip", "reject"):
        raise ValueError(f"unknown policy {policy!r}")
    text = data.decode("ascii", errors="replace") if isinstance(data, (bytes, bytearray)) else data
    if not text.strip():
        raise CorpusError("empty input")

    records: list[tuple[str, str]] = []
    if text.lstrip().startswith(">"):
        cur_id, chunks = None, []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                if cur_id is not None:
                    records.append((cur_id, "".join(chunks)))
                cur_id = line[1:].split()[0] if line[1:].strip() else f"seq{len(records)}"
                chunks = []
            else:
                chunks.append(line)
        if cur_id is not None:
            records.append((cur_id, "".join(chunks)))
    else:
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        records = [(f"seq{i}", ln) for i, ln in enumerate(lines)]

    out: list[DnaSequence] = []
    for rid, raw in records:
        bases = raw.upper()
        if not _INVALID_RUN.search(bases):
            if bases:
                out.append(DnaSequence(rid, bases))
            continue
        if policy == "reject":
            bad = _INVALID_RUN.search(bases).group()[0]
            raise CorpusError(f"invalid character {bad!r} in record {rid!r}")
        pieces = [p for p in _INVALID_RUN.split(bases) if p]
        out.extend(DnaSequence(f"{rid}/{i}", p) for i, p in enumerate(pieces))

    if not out:
        raise CorpusError("no sequences in input")
    return Corpus(tuple(out))


def extract_kmers(seq: DnaSequence | str, k: int) -> list[str]:
    """Return the ``len(seq) - k + 1`` overlapping windows of length ``k``, in order."""
    bases = seq.bases if isinstance(seq, DnaSequence) else seq
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(bases):
        raise ValueError(f"k={k} exceeds sequence length {len(bases)}")
    return [bases[i:i + k] for i in range(len(bases) - k + 1)]


def encode_kmer(kmer: str) -> int:
    """Pack a k-mer into an integer, 2 bits per base (A=0, C=1, G=2, T=3), big-endian."""
    if not 1 <= len(kmer) <= MAX_PACKED_K:
        raise ValueError(f"k-mer length must be in [1, {MAX_PACKED_K}], got {len(kmer)}")
    code = 0
    for b in kmer:
        try:
            code = (code << 2) | _BASE_CODE[b]
        except KeyError:
            raise ValueError(f"invalid base {b!r}") from None
    return code


def decode_kmer(code: int, k: int) -> str:
    if not 1 <= k <= MAX_PACKED_K:
        raise ValueError(f"k must be in [1, {MAX_PACKED_K}], got {k}")
    if not 0 <= code < 4 ** k:
        raise ValueError(f"code {code} out of range for k={k}")
    out = []
    for _ in range(k):
        out.append(ALPHABET[code & 3])
        code >>= 2
    return "".join(reversed(out))


def all_kmers(k: int) -> list[str]:
    """Every k-mer over ACGT in packed-code order."""
    return [decode_kmer(i, k) for i in range(4 ** k)]


class KmerVocab:
    """Bijection between observed k-mers and dense ids ``0..N-1``.

    Ids are assigned in order of first occurrence.
    """

    def __init__(self, k: int, kmers: Sequence[str] = ()):
        self.k = k
        self.kmer_of: list[str] = []
        self.id_of: dict[str, int] = {}
        for km in kmers:
            self.add(km)

    def add(self, kmer: str) -> int:
        if len(kmer) != self.k:
            raise ValueError(f"k-mer {kmer!r} has length {len(kmer)}, vocab k={self.k}")
        idx = self.id_of.get(kmer)
        if idx is None:
            idx = len(self.kmer_of)
            self.id_of[kmer] = idx
            self.kmer_of.append(kmer)
        return idx

    def __len__(self):
        return len(self.kmer_of)

    def __contains__(self, kmer):
        return kmer in self.id_of

    def __iter__(self):
        return iter(self.kmer_of)

    def __eq__(self, other):
        return isinstance(other, KmerVocab) and self.k == other.k and self.kmer_of == other.kmer_of

    def __repr__(self):
        return f"KmerVocab(k={self.k}, N={len(self)})"

    def index(self, kmer: str) -> int:
        try:
            return self.id_of[kmer]
        except KeyError:
            raise OutOfVocabularyError(kmer) from None

    def to_tsv(self) -> str:
        return "".join(f"{i}\t{km}\n" for i, km in enumerate(self.kmer_of))

    @classmethod
    def from_tsv(cls, text: str, k: int | None = None) -> "KmerVocab":
        rows = [ln.split("\t") for ln in text.splitlines() if ln.strip()]
        kmers = [km for _, km in sorted(((int(i), km) for i, km in rows))]
        if k is None:
            k = len(kmers[0]) if kmers else 1
        return cls(k, kmers)


def build_vocab(corpus: Corpus | Iterable[DnaSequence], k: int) -> KmerVocab:
    vocab = KmerVocab(k)
    n_seqs = 0
    for seq in corpus:
        n_seqs += 1
        for km in extract_kmers(seq, k):
            vocab.add(km)
    if n_seqs == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    return vocab


def split_corpus(corpus: Corpus, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic train/val/test partition.

    Validation and test sizes are ``floor(n * ratio)``; the remainder goes to
    train. Sequences keep their original relative order inside each split.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(corpus)
    if n < 3:
        raise CorpusError(f"need at least 3 sequences to split, got {n}")
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = sorted(perm[:n_val])
    test_idx = sorted(perm[n_val:n_val + n_test])
    train_idx = sorted(perm[n_val + n_test:])
    pick = lambda idx: Corpus(tuple(corpus[i] for i in idx))
    return pick(train_idx), pick(val_idx), pick(test_idx)


def random_sequence(length: int, rng: np.random.Generator) -> str:
    return "".join(ALPHABET[i] for i in rng.integers(0, 4, size=length))


def mutate(bases: str, sub_rate: float, indel_rate: float, rng: np.random.Generator) -> tuple[str, int]:
    """Apply random point mutations; returns the mutant and the number of events.

    Before each base an insertion happens with probability ``indel_rate``;
    the base itself is then deleted with probability ``indel_rate`` or else
    substituted (by one of the three other bases) with probability ``sub_rate``.
    The event count is an upper bound on the edit distance to ``bases``.
    """
    out = []
    events = 0
    for b in bases:
        u = rng.random(3)
        if u[0] < indel_rate:
            out.append(ALPHABET[rng.integers(4)])
            events += 1
        if u[1] < indel_rate:
            events += 1
            continue
        if u[2] < sub_rate:
            out.append(ALPHABET[(_BASE_CODE[b] + rng.integers(1, 4)) % 4])
            events += 1
        else:
            out.append(b)
    return "".join(out), events


def synth_generate(n_refs: int, length: int, n_mutants_per_ref: int = 0, sub_rate: float = 0.0,
                   indel_rate: float = 0.0, seed: int = 0) -> Corpus:
    """Random reference sequences plus mutated copies of each.

    Records are ordered family by family: ``ref{i}`` followed by
    ``ref{i}_m1 .. ref{i}_m{n}``.
    """
    if n_refs < 1:
        raise CorpusError("synthetic corpus needs at least one reference (empty corpus)")
    if length < 1:
        raise ValueError("length must be >= 1")
    if not (0 <= sub_rate < 1 and 0 <= indel_rate < 1):
        raise ValueError("mutation rates must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    seqs = []
    for r in range(n_refs):
        ref = random_sequence(length, rng)
        seqs.append(DnaSequence(f"ref{r}", ref))
        for m in range(1, n_mutants_per_ref + 1):
            mut, _ = mutate(ref, sub_rate, indel_rate, rng)
            if not mut:
                mut = ref
            seqs.append(DnaSequence(f"ref{r}_m{m}", mut))
    return Corpus(tuple(seqs))
