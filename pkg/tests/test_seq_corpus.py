import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kmergraph.downstream import edit_distance
from kmergraph.seq_corpus import (
    Corpus, CorpusError, KmerVocab, OutOfVocabularyError, all_kmers, build_vocab, decode_kmer, encode_kmer,
    extract_kmers, mutate, parse_fasta, split_corpus, synth_generate,
)

dna = st.text(alphabet="ACGT", min_size=1, max_size=60)


def test_parse_fasta_records():
    c = parse_fasta(b">a\nACTG\n>b\nTGCA")
    assert [s.id for s in c] == ["a", "b"]
    assert [s.bases for s in c] == ["ACTG", "TGCA"]


def test_parse_plain_lines():
    c = parse_fasta(b"ACTGACT\nACTGACA\nTGACTGC")
    assert [s.bases for s in c] == ["ACTGACT", "ACTGACA", "TGACTGC"]


def test_parse_multiline_fasta_and_lowercase():
    c = parse_fasta(">x desc\nacg\nTT\n")
    assert c[0].id == "x" and c[0].bases == "ACGTT"


def test_parse_strip_policy_splits_at_invalid_runs():
    c = parse_fasta(b">a\nACNNGT")
    assert [(s.id, s.bases) for s in c] == [("a/0", "AC"), ("a/1", "GT")]


def test_parse_reject_policy():
    with pytest.raises(CorpusError):
        parse_fasta(b">a\nACNNGT", policy="reject")


@pytest.mark.parametrize("data", [b"", b"  \n\n"])
def test_parse_empty(data):
    with pytest.raises(CorpusError):
        parse_fasta(data)


def test_duplicate_ids_rejected():
    with pytest.raises(CorpusError):
        parse_fasta(">a\nAC\n>a\nGT")


def test_extract_kmers_examples():
    assert extract_kmers("ACTGACT", 3) == ["ACT", "CTG", "TGA", "GAC", "ACT"]
    assert extract_kmers("ACTG", 4) == ["ACTG"]
    assert extract_kmers("TGACTGC", 3) == ["TGA", "GAC", "ACT", "CTG", "TGC"]


@pytest.mark.parametrize("k", [0, -1, 5])
def test_extract_kmers_bad_k(k):
    with pytest.raises(ValueError):
        extract_kmers("ACTG", k)


@given(dna, st.integers(1, 8))
def test_extract_kmers_reconstructs(seq, k):
    if k > len(seq):
        return
    kms = extract_kmers(seq, k)
    assert len(kms) == len(seq) - k + 1
    assert "".join(km[0] for km in kms) + kms[-1][1:] == seq


def test_encode_examples():
    assert encode_kmer("AAA") == 0
    assert encode_kmer("ACT") == 7


def test_encode_roundtrip_all_3mers():
    kms = all_kmers(3)
    assert len(kms) == 64
    for km in kms:
        assert decode_kmer(encode_kmer(km), 3) == km
    assert sorted(encode_kmer(km) for km in kms) == list(range(64))


@pytest.mark.parametrize("bad", ["ACN", "", "A" * 32])
def test_encode_invalid(bad):
    with pytest.raises(ValueError):
        encode_kmer(bad)


def test_build_vocab_examples(fig1_corpus):
    v = build_vocab(fig1_corpus, 3)
    assert list(v) == ["ACT", "CTG", "TGA", "GAC", "ACA", "TGC"]
    assert len(build_vocab(Corpus.from_strings(["AAAA"]), 2)) == 1
    dinucs = ["".join(p) for p in itertools.product("ACGT", repeat=2)]
    assert len(build_vocab(Corpus.from_strings(dinucs), 2)) == 16


@given(st.lists(dna, min_size=1, max_size=5), st.integers(1, 4))
def test_vocab_size_bound(seqs, k):
    seqs = [s for s in seqs if len(s) >= k]
    if not seqs:
        return
    v = build_vocab(Corpus.from_strings(seqs), k)
    windows = sum(len(s) - k + 1 for s in seqs)
    assert len(v) <= min(4 ** k, windows)
    assert sorted(v.id_of.values()) == list(range(len(v)))


def test_vocab_oov_and_tsv_roundtrip():
    v = KmerVocab(2, ["AC", "GT"])
    with pytest.raises(OutOfVocabularyError, match="out-of-vocabulary"):
        v.index("TT")
    assert KmerVocab.from_tsv(v.to_tsv()) == v


def test_split_sizes_and_partition():
    c = Corpus.from_strings(["A" * (i + 1) for i in range(10)])
    tr, va, te = split_corpus(c, (0.8, 0.1, 0.1), seed=7)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    again = split_corpus(c, (0.8, 0.1, 0.1), seed=7)
    assert [s.id for s in tr] == [s.id for s in again[0]]
    ids = sorted(s.id for part in (tr, va, te) for s in part)
    assert ids == sorted(s.id for s in c)


def test_split_errors():
    with pytest.raises(CorpusError):
        split_corpus(Corpus.from_strings(["A", "C"]), (0.8, 0.1, 0.1))
    with pytest.raises(ValueError):
        split_corpus(Corpus.from_strings(["A", "C", "G"]), (0.5, 0.1, 0.1))


def test_synth_examples():
    c = synth_generate(1, 100, 0, 0, 0, seed=3)
    assert len(c) == 1 and len(c[0]) == 100
    c = synth_generate(1, 100, 1, 0, 0, seed=3)
    assert c[0].bases == c[1].bases


def test_synth_deterministic():
    a = synth_generate(3, 50, 2, 0.05, 0.01, seed=11)
    b = synth_generate(3, 50, 2, 0.05, 0.01, seed=11)
    assert a == b and a.fingerprint() == b.fingerprint()


def test_synth_empty_error():
    with pytest.raises(CorpusError):
        synth_generate(0, 100, 1, 0.0, 0.0, seed=0)


def test_synth_mutant_distance_matches_expectation():
    # Expected events per base: substitution sub_rate * (1 - indel) plus two
    # indel chances; edit distance is at most the event count and close to it.
    c = synth_generate(5, 150, 3, 0.05, 0.01, seed=5)
    assert len(c) == 20
    eds = []
    for r in range(5):
        ref = c[4 * r].bases
        eds += [edit_distance(ref, c[4 * r + m].bases) for m in range(1, 4)]
    expected = 150 * (0.05 * (1 - 0.01) + 2 * 0.01)
    assert abs(np.mean(eds) - expected) < 0.35 * expected


def test_mutate_event_count_bounds_distance():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ref = "".join(rng.choice(list("ACGT"), 40))
        mut, events = mutate(ref, 0.1, 0.05, rng)
        assert edit_distance(ref, mut) <= events
