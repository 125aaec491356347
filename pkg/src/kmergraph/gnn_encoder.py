"""Heterogeneous GCN encoder over a :class:`~kmergraph.kmer_graph.MetagenomicGraph`.

Every layer propagates over a single edge type::

    H_next = act(A_hat[edge_type] @ H @ Theta)

where ``A_hat`` is the symmetrically normalised adjacency with self-loops.
Node inputs are sub-k-mer frequency vectors, so the encoder has no
per-node parameters and can embed k-mers it never saw during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor_core as tc
from .kmer_graph import DBG, MetagenomicGraph, parse_edge_type, with_features


@dataclass(frozen=True)
class LayerSpec:
    edge_type: str
    in_channels: int
    out_channels: int
    activation: str = "relu"

    def __post_init__(self):
        parse_edge_type(self.edge_type)
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class EncoderConfig:
    layers: tuple
    feature_sub_k: tuple = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "feature_sub_k", tuple(self.feature_sub_k))
        if not self.layers:
            raise ValueError("encoder needs at least one layer")
        if self.layers[0].in_channels != self.input_dim:
            raise ValueError(f"first layer expects {self.layers[0].in_channels} inputs, "
                             f"features provide {self.input_dim}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(f"channel mismatch between layers: {a.out_channels} -> {b.in_channels}")

    @property
    def input_dim(self) -> int:
        return sum(4 ** s for s in self.feature_sub_k)

    @property
    def dim(self) -> int:
        return self.layers[-1].out_channels

    @property
    def edge_types(self) -> list[str]:
        return [l.edge_type for l in self.layers]

    def to_dict(self) -> dict:
        return {"feature_sub_k": list(self.feature_sub_k),
                "layers": [[l.edge_type, l.in_channels, l.out_channels, l.activation] for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(tuple(LayerSpec(*row) for row in d["layers"]), tuple(d.get("feature_sub_k", (1, 2))))


def default_config(dim: int = 64, hidden: int = 128, feature_sub_k=(1, 2), kf_edge: str = "KF_2") -> EncoderConfig:
    """Two dBG layers followed by one similarity layer."""
    d_in = sum(4 ** s for s in feature_sub_k)
    return EncoderConfig((LayerSpec(DBG, d_in, hidden, "relu"),
                          LayerSpec(DBG, hidden, hidden, "relu"),
                          LayerSpec(kf_edge, hidden, dim, "identity")), tuple(feature_sub_k))


def init_features(graph: MetagenomicGraph, sub_k_list) -> np.ndarray:
    """Concatenated sub-k-mer frequency vectors, each block L2-normalised per row."""
    blocks = []
    for s in sub_k_list:
        if s not in graph.features:
            raise KeyError(f"graph has no sub-k-mer features for sub_k={s}")
        y = graph.features[s].counts.astype(np.float64)
        blocks.append(y / np.linalg.norm(y, axis=1, keepdims=True))
    return np.hstack(blocks)


def prepare_propagation(graph: MetagenomicGraph, edge_type: str) -> sp.csr_matrix:
    """Normalised propagation matrix for one edge type.

    Directed dBG weights are symmetrised as ``(W + W.T) / 2`` first.
    """
    n = graph.n_nodes
    es = graph.edges(edge_type)
    if edge_type == DBG:
        w = es.to_csr(n, symmetric=False)
        w = (w + w.T) * 0.5
    else:
        w = es.to_csr(n)
    return tc.sym_normalize(w, 1.0)


@dataclass
class GraphInputs:
    """Features and per-edge-type propagation matrices of one graph, computed once."""

    h0: np.ndarray
    adj: dict = field(default_factory=dict)

    @classmethod
    def from_graph(cls, graph: MetagenomicGraph, config: EncoderConfig) -> "GraphInputs":
        with_features(graph, config.feature_sub_k)
        adj = {et: prepare_propagation(graph, et) for et in dict.fromkeys(config.edge_types)}
        return cls(init_features(graph, config.feature_sub_k), adj)

    def layer_adjs(self, config: EncoderConfig) -> list:
        return [self.adj[et] for et in config.edge_types]


def init_params(config: EncoderConfig, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    return {f"theta_{i}": tc.glorot_uniform((l.in_channels, l.out_channels), rng)
            for i, l in enumerate(config.layers)}


def _activate(x, name):
    return tc.relu(x) if name == "relu" else x


def _as_vars(tape, params):
    return {k: v if isinstance(v, tc.Var) else tape.var(v, name=k) for k, v in params.items()}


def forward(graph_or_inputs, config: EncoderConfig, params: dict, tape: tc.Tape | None = None) -> tc.Var:
    """Full-graph forward pass recorded on ``tape``; returns the N x d embedding Var."""
    inputs = graph_or_inputs if isinstance(graph_or_inputs, GraphInputs) else \
        GraphInputs.from_graph(graph_or_inputs, config)
    if tape is None:
        tape = next((v.tape for v in params.values() if isinstance(v, tc.Var)), None) or tc.Tape()
    p = _as_vars(tape, params)
    h = inputs.h0
    for i, layer in enumerate(config.layers):
        theta = p[f"theta_{i}"]
        if theta.shape != (layer.in_channels, layer.out_channels):
            raise ValueError(f"theta_{i} has shape {theta.shape}, layer expects "
                             f"{(layer.in_channels, layer.out_channels)}")
        a = inputs.adj[layer.edge_type]
        h = _activate(tc.spmm(a, tc.matmul(h, theta), adj_t=a), layer.activation)
    return h


def embed(graph_or_inputs, config: EncoderConfig, params: dict) -> np.ndarray:
    """Embeddings as a plain array (no gradient bookkeeping kept)."""
    return forward(graph_or_inputs, config, {k: np.asarray(v) for k, v in params.items()}).value.copy()


def forward_blocks(blocks, h0: np.ndarray, config: EncoderConfig, params: dict,
                   tape: tc.Tape | None = None) -> tc.Var:
    """Forward pass over sampled receptive fields; rows follow ``blocks.seeds``.

    ``blocks`` comes from :func:`kmergraph.ssl_sampling.neighborhood_sample`
    with one block per layer.
    """
    if len(blocks.mats) != len(config.layers):
        raise ValueError(f"{len(blocks.mats)} blocks for a {len(config.layers)}-layer encoder")
    if tape is None:
        tape = next((v.tape for v in params.values() if isinstance(v, tc.Var)), None) or tc.Tape()
    p = _as_vars(tape, params)
    h = h0[blocks.nodes[0]]
    for i, layer in enumerate(config.layers):
        h = _activate(tc.spmm(blocks.mats[i], tc.matmul(h, p[f"theta_{i}"])), layer.activation)
    return h
