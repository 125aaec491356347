import math

import numpy as np
import pytest

from kmergraph import gnn_encoder as gnn
from kmergraph import tensor_core as tc
from kmergraph import trainers as tr
from kmergraph.kmer_graph import DBG, EdgeSet, assemble_graph
from kmergraph.seq_corpus import Corpus, OutOfVocabularyError
from kmergraph.verify import check_contrastive, check_gae, small_encoder


def test_contrastive_loss_examples():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
    assert float(tr.contrastive_loss(z, [[0, 1]]).value) == pytest.approx(math.log(2))
    assert float(tr.contrastive_loss(z, [[0, 1]], [[2]]).value) == pytest.approx(2 * math.log(2))
    z = np.array([[1.0, 0.0], [10.0, 0.0], [-10.0, 0.0]])
    expected = 2 * math.log1p(math.exp(-10))
    assert float(tr.contrastive_loss(z, [[0, 1]], [[2]]).value) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(9.08e-5, rel=1e-3)


def test_contrastive_loss_mean_over_pairs_and_nonnegative():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5, 3))
    pos = np.array([[0, 1], [2, 3], [4, 0]])
    neg = rng.integers(0, 5, (3, 2))
    total = sum(-tc.log_sigmoid_np(z[i] @ z[j]) - sum(tc.log_sigmoid_np(-(z[i] @ z[l])) for l in neg[p])
                for p, (i, j) in enumerate(pos))
    got = float(tr.contrastive_loss(z, pos, neg).value)
    assert got == pytest.approx(total / 3) and got >= 0


def test_edge_decode():
    u = np.array([[0.6, 0.8], [0.6, 0.8], [-0.8, 0.6]])
    assert tr.gae_edge_decode(u, [0, 0], [1, 2]).tolist() == pytest.approx([1.0, 0.0])
    z = np.random.default_rng(1).standard_normal((4, 4))
    assert tr.gae_edge_decode(z, [3], [1])[0] == pytest.approx(float(np.dot(z[3], z[1])))


def test_node_decode():
    out = tr.gae_node_decode(np.array([[3.0]]), {"dec_theta_1": np.array([[2.0, 0, 0, 0]]),
                                                 "dec_bias_1": np.zeros(4)})
    assert out[1].tolist() == [[6.0, 0, 0, 0]]
    y = np.array([[1.0, 2.0, 0.0, 1.0]])
    out = tr.gae_node_decode(np.ones((1, 2)), {"dec_theta_1": np.zeros((2, 4)), "dec_bias_1": y[0]})
    assert (out[1] == y).all()
    with pytest.raises(ValueError):
        tr.gae_node_decode(np.ones((1, 3)), {"dec_theta_1": np.zeros((2, 4)), "dec_bias_1": np.zeros(4)})


def test_node_decoder_mse_gradient():
    rng = np.random.default_rng(2)
    z, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 16))
    fn = lambda t, v: tc.sum_(tc.square(tc.sub(y, tc.add(tc.matmul(z, v["th"]), v["b"]))))
    assert tc.grad_check(fn, {"th": rng.standard_normal((3, 16)), "b": rng.standard_normal(16)}) < 1e-4


class _Stub:
    def __init__(self, dbg, features):
        self.dbg, self.features = dbg, features


def test_gae_loss_examples():
    one_edge = EdgeSet(DBG, np.array([0]), np.array([1]), np.array([1.0]), True)
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert float(tr.gae_loss(z, _Stub(one_edge, {}), {}).value) == pytest.approx(1.0)
    # orthogonal embeddings reproduce a zero-weight edge; zero decoder matches zero features

    class F:
        counts = np.zeros((2, 16))
    perfect = EdgeSet(DBG, np.array([0]), np.array([1]), np.array([0.0]), True)
    dec = {"dec_theta_2": np.zeros((2, 16)), "dec_bias_2": np.zeros(16)}
    assert float(tr.gae_loss(z, _Stub(perfect, {2: F}), dec).value) == 0.0


def test_gae_term_decomposition(fig1_graph):
    z = np.random.default_rng(0).standard_normal((6, 4))
    dec = tr.init_decoders(4, [2], seed=1)
    edge, node = tr.gae_loss_terms(z, fig1_graph, dec)
    assert float(tr.gae_loss(z, fig1_graph, dec).value) == pytest.approx(edge + node, abs=1e-9)


def test_full_pipeline_gradients():
    assert check_contrastive(0) < 1e-4
    assert check_gae(0) < 1e-4


@pytest.fixture(scope="module")
def fig1_cl():
    g = assemble_graph(Corpus.from_strings(("ACTGACT", "ACTGACA", "TGACTGC")), 3, sub_k_list=(2,), t=0.5)
    cfg = small_encoder(hidden=16, dim=8)
    res = tr.train_contrastive(g, cfg, tr.TrainConfig(epochs=200, batch_size=64, lr=1e-2, seed=0))
    return g, cfg, res


def _epoch_means(history):
    return [v for _, s, v in history if s == "train"]


def test_contrastive_training_progress(fig1_cl):
    g, _, res = fig1_cl
    losses = _epoch_means(res.history)
    assert len(losses) == 200 and losses[-1] < losses[0]
    z = res.embeddings
    walks_pos = tr._epoch_pairs(g, tr.TrainConfig(seed=99), 0)
    neg = np.random.default_rng(5).integers(0, 6, (len(walks_pos), 2))
    keep = neg[:, 0] != neg[:, 1]
    s_pos = tc.sigmoid_np((z[walks_pos[:, 0]] * z[walks_pos[:, 1]]).sum(1)).mean()
    s_neg = tc.sigmoid_np((z[neg[keep, 0]] * z[neg[keep, 1]]).sum(1)).mean()
    assert s_pos > s_neg


def test_contrastive_deterministic(fig1_cl):
    g, cfg, res = fig1_cl
    again = tr.train_contrastive(g, cfg, tr.TrainConfig(epochs=200, batch_size=64, lr=1e-2, seed=0))
    assert all(again.params[k].tobytes() == v.tobytes() for k, v in res.params.items())


def test_sampler_mix_changes_history(fig1_graph):
    cfg = small_encoder()
    h = {m: tr.train_contrastive(fig1_graph, cfg, tr.TrainConfig(epochs=3, sampler=m, seed=0)).history
         for m in ("both", "context")}
    assert h["both"] != h["context"]


def test_sampler_incompatible(fig1_corpus):
    g = assemble_graph(fig1_corpus, 3, sub_k_list=[])
    cfg = small_encoder(layers=(DBG, DBG))
    with pytest.raises(tr.TrainerError):
        tr.train_contrastive(g, cfg, tr.TrainConfig(epochs=1, sampler="structural"))


def test_fanout_minibatch_training_runs(fig1_graph):
    res = tr.train_contrastive(fig1_graph, small_encoder(), tr.TrainConfig(epochs=3, fanouts=[2, 2, 2], seed=1))
    assert np.all(np.isfinite(res.embeddings)) and res.embeddings.shape == (6, 4)


def test_gae_training(fig1_graph):
    cfg = small_encoder(hidden=16, dim=8)
    res = tr.train_gae(fig1_graph, cfg, tr.TrainConfig(objective="gae", epochs=200, lr=1e-2, seed=0))
    losses = _epoch_means(res.history)
    assert losses[-1] < losses[0]
    dec = {k: v for k, v in res.params.items() if k.startswith("dec_")}
    y = fig1_graph.features[2].counts
    pred = tr.gae_node_decode(res.embeddings, dec)[2]
    assert ((y - pred) ** 2).sum(1).mean() < ((y - y.mean(0)) ** 2).sum(1).mean()
    again = tr.train_gae(fig1_graph, cfg, tr.TrainConfig(objective="gae", epochs=200, lr=1e-2, seed=0))
    assert again.history == res.history


def test_node2vec_chain_separation():
    c = Corpus.from_strings(["ACGTTGCAAGTC"])
    g = assemble_graph(c, 3, sub_k_list=[2], t=0.5)
    res = tr.train_baseline("node2vec", g, tr.TrainConfig(epochs=60, lr=1e-2, seed=0, n_negatives=5), dim=8)
    z = res.embeddings
    n = g.n_nodes
    adj = {(i, j) for i, j, _ in g.dbg.triples()}
    adj |= {(j, i) for i, j in adj}
    near = [z[i] @ z[j] for i, j in adj]
    far = [z[i] @ z[j] for i in range(n) for j in range(n) if i != j and (i, j) not in adj]
    assert np.mean(near) > np.mean(far)


def test_baselines_oov_and_differ(fig1_corpus, fig1_graph):
    cfg = tr.TrainConfig(epochs=5, seed=0)
    n2v = tr.train_baseline("node2vec", fig1_graph, cfg, dim=4)
    w2v = tr.train_baseline("word2vec", fig1_graph, cfg, dim=4, corpus=fig1_corpus)
    assert not np.allclose(n2v.embeddings, w2v.embeddings)
    with pytest.raises(OutOfVocabularyError, match="out-of-vocabulary"):
        n2v.embedder.embed_kmers(["GGG"])
    with pytest.raises(tr.TrainerError):
        tr.train_baseline("word2vec", fig1_graph, cfg, dim=4)


def test_gcn_embedder_inductive(fig1_corpus, fig1_graph):
    cfg = small_encoder()
    params = gnn.init_params(cfg, 0)
    emb = tr.GcnEmbedder(cfg, params, fig1_graph, fig1_corpus)
    known = emb.embed_kmers(["ACT", "CTG"])
    assert np.allclose(known, emb.node_embeddings[[0, 1]])
    new = emb.embed_kmers(["GGG", "ACT"])
    assert new.shape == (2, 4) and np.all(np.isfinite(new))
    with pytest.raises(OutOfVocabularyError):
        tr.GcnEmbedder(cfg, params, fig1_graph).embed_kmers(["GGG"])


def test_train_config_validation():
    for kw in ({"objective": "x"}, {"encoder": "x"}, {"sampler": "x"}, {"epochs": 0}):
        with pytest.raises(ValueError):
            tr.TrainConfig(**kw)
