"""Finite-difference gradient checks for every trainable objective.

Run from the command line with ``kmergraph gradcheck``. Each check builds a
tiny problem (at most 8 graph nodes) and compares reverse-mode gradients with
central differences in float64.
"""

from __future__ import annotations

import numpy as np

from . import downstream as ds
from . import gnn_encoder as gnn
from . import tensor_core as tc
from . import trainers
from .kmer_graph import DBG, assemble_graph, kf_name
from .seq_corpus import Corpus

EXAMPLE_SEQUENCES = ("ACTGACT", "ACTGACA", "TGACTGC")
TOLERANCE = 1e-4


def example_graph():
    return assemble_graph(Corpus.from_strings(EXAMPLE_SEQUENCES), 3, sub_k_list=(2,), t=0.5)


def small_encoder(hidden: int = 6, dim: int = 4, layers=(DBG, DBG, kf_name(2))) -> gnn.EncoderConfig:
    d_in = 4 + 16
    dims = [d_in] + [hidden] * (len(layers) - 1) + [dim]
    acts = ["relu"] * (len(layers) - 1) + ["identity"]
    return gnn.EncoderConfig(tuple(gnn.LayerSpec(layers[i], dims[i], dims[i + 1], acts[i])
                                   for i in range(len(layers))), (1, 2))


def _perturb_away_from_kinks(params, rng):
    # Finite differences are unreliable next to relu kinks; random weights
    # keep pre-activations away from 0 with overwhelming probability.
    return {k: v + 0.01 * rng.standard_normal(v.shape) for k, v in params.items()}


def check_contrastive(seed: int = 0, eps: float = 1e-5) -> float:
    graph = example_graph()
    cfg = small_encoder()
    inputs = gnn.GraphInputs.from_graph(graph, cfg)
    rng = np.random.default_rng(seed)
    params = _perturb_away_from_kinks(gnn.init_params(cfg, seed), rng)
    pos = np.array([[0, 1], [1, 2], [3, 4], [5, 0]])
    neg = rng.integers(0, graph.n_nodes, size=(len(pos), 3))

    def fn(tape, v):
        return trainers.contrastive_loss(gnn.forward(inputs, cfg, v, tape), pos, neg)
    return tc.grad_check(fn, params, eps=eps)


def check_gae(seed: int = 0, eps: float = 1e-5) -> float:
    graph = example_graph()
    cfg = small_encoder()
    inputs = gnn.GraphInputs.from_graph(graph, cfg)
    rng = np.random.default_rng(seed)
    params = _perturb_away_from_kinks(gnn.init_params(cfg, seed), rng)
    params.update(trainers.init_decoders(cfg.dim, sorted(graph.kf), seed))

    def fn(tape, v):
        z = gnn.forward(inputs, cfg, {k: x for k, x in v.items() if k.startswith("theta_")}, tape)
        return trainers.gae_loss(z, graph, {k: x for k, x in v.items() if k.startswith("dec_")})
    return tc.grad_check(fn, params, eps=eps)


def check_distance_head(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 5))
    a = np.array([0, 1, 2, 3, 4])
    b = np.array([1, 2, 3, 4, 5])
    ed = rng.integers(0, 10, size=5)
    params = {"weight": 0.3 * rng.standard_normal((5, 3)), "bias": 0.1 * rng.standard_normal(3)}
    fn = ds._head_objective(x, a, b, ed, 12, 0.7, x.mean(0))
    return tc.grad_check(fn, params, eps=eps)


CHECKS = {
    "encoder+contrastive": check_contrastive,
    "encoder+gae": check_gae,
    "distance-head": check_distance_head,
}


def run_all(seed: int = 0) -> dict:
    return {name: fn(seed) for name, fn in CHECKS.items()}
