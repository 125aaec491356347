"""Pipeline configuration: one YAML document, validated into dataclasses.

Unknown keys are rejected at every level. Command-line flags are applied on
top of the file with :func:`override`, and the fully resolved result is what
gets written next to every artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .seq_corpus import QIITA_PRESET


class ConfigError(ValueError):
    pass


@dataclass
class SynthSection:
    n_refs: int = 40
    n_mutants_per_ref: int = 4
    length: int = QIITA_PRESET["length"]
    sub_rate: float = QIITA_PRESET["sub_rate"]
    indel_rate: float = QIITA_PRESET["indel_rate"]


@dataclass
class GraphSection:
    k: int = 4
    sub_k_list: list = field(default_factory=lambda: [2])
    t: float | None = None
    kf_mode: str = "exact"
    n_neighbors: int | None = None
    nlist: int | None = None
    nprobe: int | None = None

    def validate(self):
        if self.k < 1:
            raise ConfigError("graph.k must be >= 1")
        if not self.sub_k_list or any(not 1 <= s <= self.k for s in self.sub_k_list):
            raise ConfigError("graph.sub_k_list entries must lie in [1, k]")
        if self.kf_mode not in ("exact", "ann"):
            raise ConfigError("graph.kf_mode must be 'exact' or 'ann'")
        if self.t is not None and not 0 < self.t <= 1:
            raise ConfigError("graph.t must lie in (0, 1]")


@dataclass
class EncoderSection:
    dim: int = 64
    hidden: int = 128
    feature_sub_k: list = field(default_factory=lambda: [1, 2])
    edges: str = "both"  # which edge types the layer stack uses: dbg | kf | both
    # explicit stack as [[edge_type, in, out, activation], ...]; overrides edges/dim/hidden
    layers: list | None = None

    def validate(self):
        if self.edges not in ("dbg", "kf", "both"):
            raise ConfigError("encoder.edges must be dbg, kf or both")
        if self.layers is not None and (not self.layers or any(len(row) != 4 for row in self.layers)):
            raise ConfigError("encoder.layers must be a non-empty list of [edge_type, in, out, activation]")
        if self.dim < 1 or self.hidden < 1:
            raise ConfigError("encoder.dim and encoder.hidden must be positive")


@dataclass
class TrainSection:
    objective: str = "contrastive"
    encoder: str = "gcn"
    variant: str = "node2vec"
    sampler: str = "both"
    epochs: int = 200
    batch_size: int = 1024
    lr: float = 1e-3
    n_negatives: int = 5
    structural_ratio: float = 1.0
    pairs_per_epoch: int | None = None
    fanouts: list | None = None
    p: float = 1.0
    q: float = 1.0
    walk_length: int = 20
    walks_per_node: int = 10
    window: int = 5

    def validate(self):
        if self.objective not in ("contrastive", "gae"):
            raise ConfigError("train.objective must be contrastive or gae")
        if self.encoder not in ("gcn", "table"):
            raise ConfigError("train.encoder must be gcn or table")
        if self.variant not in ("node2vec", "word2vec"):
            raise ConfigError("train.variant must be node2vec or word2vec")
        if self.sampler not in ("both", "context", "structural"):
            raise ConfigError("train.sampler must be both, context or structural")


@dataclass
class EvalSection:
    task: str = "edit-distance"
    mode: str = "auto"  # mean | concat | auto (pick by validation score)
    split_ratios: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    train_pairs: int = 2000
    val_pairs: int = 500
    test_pairs: int = 500
    head_dim: int = 128
    head_lr: float = 1e-3
    head_epochs: int = 200
    n_percent: list = field(default_factory=lambda: [1.0, 10.0])
    n_queries: int = 50
    n_refs: int = 100
    rmse_paper_literal: bool = False
    one_hot_max_k: int = 7

    def validate(self):
        if self.task not in ("edit-distance", "retrieval"):
            raise ConfigError("eval.task must be edit-distance or retrieval")
        if self.mode not in ("mean", "concat", "auto"):
            raise ConfigError("eval.mode must be mean, concat or auto")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1) > 1e-9:
            raise ConfigError("eval.split_ratios must be three fractions summing to 1")


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 1
    synth: SynthSection = field(default_factory=SynthSection)
    graph: GraphSection = field(default_factory=GraphSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "PipelineConfig":
        for f in dataclasses.fields(self):
            sec = getattr(self, f.name)
            if hasattr(sec, "validate"):
                sec.validate()
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict | None) -> PipelineConfig:
    return _build(PipelineConfig, data or {}, "").validate()


def load(path=None) -> PipelineConfig:
    """Read a YAML config (or defaults when ``path`` is None)."""
    if path is None:
        return from_dict({})
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return from_dict(data)


def override(cfg: PipelineConfig, dotted: dict) -> PipelineConfig:
    """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
    data = cfg.to_dict()
    for key, value in dotted.items():
        if value is None:
            continue
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return from_dict(data)


def parse_assignment(text: str) -> tuple[str, object]:
    """``section.key=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)
