"""``kmergraph`` command-line interface.

Subcommands: ``synth``, ``build-graph``, ``pretrain``, ``eval``, ``gradcheck``.
Every command takes ``--config`` (YAML) plus flags that override it, and
writes the fully resolved config next to its outputs.

Exit codes: 0 success, 2 validation error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("kmergraph")


def _limit_threads(n: int):
    # Must run before numpy is first imported to take effect.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _resolve(args, mapping: dict):
    from . import config
    cfg = config.load(args.config)
    overrides = {"seed": args.seed, "threads": args.threads}
    overrides.update({key: getattr(args, attr) for attr, key in mapping.items()})
    for text in args.set or ():
        key, value = config.parse_assignment(text)
        overrides[key] = value
    return config.override(cfg, overrides)


def _write_config(cfg, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    (out_dir / "fingerprint.txt").write_text(cfg.fingerprint() + "\n", encoding="utf-8")


def _read_corpus(path):
    from .seq_corpus import parse_fasta
    return parse_fasta(Path(path).read_bytes())


# -- synth ------------------------------------------------------------------

SYNTH_FLAGS = {"n_refs": "synth.n_refs", "mutants": "synth.n_mutants_per_ref", "length": "synth.length",
               "sub_rate": "synth.sub_rate", "indel_rate": "synth.indel_rate"}


def cmd_synth(args) -> int:
    from .pipeline import synth_corpus
    cfg = _resolve(args, SYNTH_FLAGS)
    corpus = synth_corpus(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(corpus.to_fasta(), encoding="utf-8")
    print(f"wrote {len(corpus)} sequences to {out} (fingerprint {corpus.fingerprint()})")
    return EXIT_OK


# -- build-graph ------------------------------------------------------------

GRAPH_FLAGS = {"k": "graph.k", "sub_k": "graph.sub_k_list", "t": "graph.t", "kf_mode": "graph.kf_mode",
               "neighbors": "graph.n_neighbors", "nlist": "graph.nlist", "nprobe": "graph.nprobe",
               "edges": "encoder.edges"}


def cmd_build_graph(args) -> int:
    import numpy as np
    from . import ann_index
    from .kmer_graph import save_graph
    from .pipeline import build_graph
    cfg = _resolve(args, GRAPH_FLAGS)
    corpus = _read_corpus(args.input)
    graph = build_graph(cfg, corpus)
    out = save_graph(graph, args.out)
    _write_config(cfg, out)
    print(graph.summary())
    if cfg.graph.kf_mode == "ann":
        for s, fm in sorted(graph.features.items()):
            n = min(graph.meta.get("n_neighbors") or 10, graph.n_nodes - 1)
            vecs = fm.counts.astype(float)
            if n < 1 or np.ptp(vecs, axis=0).max() == 0:
                continue
            index = ann_index.build(vecs, cfg.graph.nlist, seed=cfg.seed)
            nprobe = cfg.graph.nprobe or ann_index.default_nprobe(index.nlist)
            rec = ann_index.recall_at_n(index, n, nprobe)
            print(f"KF_{s} recall@{n} vs exact (nlist={index.nlist}, nprobe={nprobe}): {rec:.4f}")
    return EXIT_OK


# -- pretrain ---------------------------------------------------------------

PRETRAIN_FLAGS = {"objective": "train.objective", "edges": "encoder.edges", "encoder": "train.encoder",
                  "variant": "train.variant", "epochs": "train.epochs", "lr": "train.lr",
                  "batch_size": "train.batch_size", "pairs_per_epoch": "train.pairs_per_epoch",
                  "dim": "encoder.dim"}


def _write_embeddings(vocab, z, out: Path):
    import numpy as np
    with open(out / "embeddings.tsv", "w", encoding="utf-8") as fh:
        for km, row in zip(vocab, z):
            fh.write(km + "\t" + "\t".join(f"{v:.10g}" for v in row) + "\n")
    np.ascontiguousarray(z, dtype="<f8").tofile(out / "embeddings.bin")
    (out / "embeddings.json").write_text(json.dumps({"dtype": "<f8", "shape": list(z.shape)}) + "\n")


def cmd_pretrain(args) -> int:
    from . import tensor_core as tc
    from .kmer_graph import load_graph
    from .pipeline import encoder_config, pretrain
    from .report import plot_history, write_history_csv
    if args.objective == "cl":
        args.objective = "contrastive"
    cfg = _resolve(args, PRETRAIN_FLAGS)
    graph = load_graph(args.graph)
    if graph.k != cfg.graph.k:
        cfg = _override(cfg, {"graph.k": graph.k})
    if graph.kf:
        cfg = _override(cfg, {"graph.sub_k_list": sorted(graph.kf)})
    corpus = _read_corpus(args.corpus) if args.corpus else None
    if cfg.train.encoder == "table" and cfg.train.variant == "word2vec" and corpus is None:
        raise ValueError("the word2vec baseline needs --corpus")
    result = pretrain(cfg, corpus, graph=graph)
    out = Path(args.out)
    _write_config(cfg, out)
    tc.save_params(result.params, out / "params")
    _write_embeddings(graph.vocab, result.embeddings, out)
    write_history_csv(result.history, out / "loss.csv")
    plot_history(result.history, out / "loss.png", title=f"{cfg.train.objective} loss")
    run = {"graph": str(Path(args.graph).resolve()), "corpus": str(Path(args.corpus).resolve()) if args.corpus else None,
           "encoder": cfg.train.encoder, "encoder_config": encoder_config(cfg).to_dict(),
           "fingerprint": cfg.fingerprint()}
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n", encoding="utf-8")
    first, last = result.history[0][2], result.history[-1][2]
    print(f"trained {len(result.history)} epochs: loss {first:.6f} -> {last:.6f}; wrote {out}")
    return EXIT_OK


def _override(cfg, d):
    from . import config
    return config.override(cfg, d)


def load_embedder(path, k: int, max_k: int = 7):
    """``one-hot`` or a ``pretrain`` output directory."""
    from . import gnn_encoder as gnn
    from . import tensor_core as tc
    from .kmer_graph import load_graph
    from .pipeline import one_hot_embedder
    from .seq_corpus import KmerVocab
    from .trainers import GcnEmbedder, TableEmbedder
    import numpy as np
    if str(path) == "one-hot":
        return "one-hot", one_hot_embedder(k, max_k)
    d = Path(path)
    run = json.loads((d / "run.json").read_text(encoding="utf-8"))
    graph = load_graph(run["graph"])
    if graph.k != k:
        raise ValueError(f"embeddings were trained with k={graph.k}, eval config has k={k}")
    if run["encoder"] == "table":
        shape = json.loads((d / "embeddings.json").read_text())["shape"]
        table = np.fromfile(d / "embeddings.bin", dtype="<f8").reshape(shape)
        vocab = KmerVocab(graph.k, list(graph.vocab))
        return "table", TableEmbedder(vocab, table)
    corpus = _read_corpus(run["corpus"]) if run.get("corpus") else None
    params = tc.load_params(d / "params")
    return "gcn", GcnEmbedder(gnn.EncoderConfig.from_dict(run["encoder_config"]), params, graph, corpus)


# -- eval -------------------------------------------------------------------

EVAL_FLAGS = {"task": "eval.task", "mode": "eval.mode", "k": "graph.k", "head_epochs": "eval.head_epochs",
              "train_pairs": "eval.train_pairs", "val_pairs": "eval.val_pairs", "test_pairs": "eval.test_pairs",
              "n_percent": "eval.n_percent", "rmse_paper_literal": "eval.rmse_paper_literal"}


def cmd_eval(args) -> int:
    from . import pipeline as pl
    from . import report
    from .downstream import nearest_by_edit_distance
    if not args.rmse_paper_literal:
        args.rmse_paper_literal = None
    cfg = _resolve(args, EVAL_FLAGS)
    method, embedder = load_embedder(args.embeddings, cfg.graph.k, cfg.eval.one_hot_max_k)
    method = args.method or method
    corpus = _read_corpus(args.corpus)
    out = Path(args.out)
    _write_config(cfg, out)
    if cfg.eval.task == "edit-distance":
        splits, pairs = pl.pair_splits(cfg, corpus)
        for name, p in pairs.items():
            (out / f"pairs_{name}.tsv").write_text(p.to_tsv(), encoding="utf-8")
        res = pl.edit_distance_task(cfg, embedder, method, splits, pairs)
        reports = [res.report]
        report.write_residuals_csv(res.test, res.predictions, out / "residuals.csv")
        report.plot_edit_distance_scatter(res.test.ed, res.predictions, out / "residuals.png",
                                          title=f"{method} ({res.mode})")
        report.write_history_csv(res.history, out / "head_history.csv")
        report.plot_history(res.history, out / "head_history.png", title="head %RMSE")
    else:
        if not args.queries:
            raise ValueError("retrieval needs --queries (the corpus is the reference set)")
        queries = _read_corpus(args.queries)
        data = pl.RetrievalData(corpus, queries, nearest_by_edit_distance(queries, corpus))
        mode = "concat" if cfg.eval.mode == "auto" else cfg.eval.mode
        reports, ranks = pl.retrieval_task(cfg, embedder, method, data, mode)
        report.write_ranks_csv(queries, ranks, out / "ranks.csv")
        report.plot_rank_histogram(ranks, len(corpus), out / "ranks.png", title=f"{method} ({mode})")
    payload = [r.to_dict() for r in reports]
    (out / "report.json").write_text(json.dumps(payload if len(payload) > 1 else payload[0], indent=2,
                                                sort_keys=True, default=str) + "\n", encoding="utf-8")
    for r in reports:
        print(f"{r.task}\t{r.method}\tk={r.k}\tseed={r.seed}\t{r.metric}\t{r.value:.4f}")
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .verify import TOLERANCE, run_all
    results = run_all(args.seed or 0)
    ok = True
    for name, err in results.items():
        passed = err < TOLERANCE
        ok &= passed
        print(f"{name}\tmax_rel_err={err:.3e}\t{'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kmergraph", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML pipeline config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="cap on BLAS / worker threads")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. train.epochs=50")

    s = sub.add_parser("synth", help="generate a synthetic corpus (FASTA)")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--n-refs", type=int)
    s.add_argument("--mutants", type=int)
    s.add_argument("--length", type=int)
    s.add_argument("--sub-rate", type=float)
    s.add_argument("--indel-rate", type=float)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-graph", help="build and save the metagenomic graph")
    common(s)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--sub-k", type=int, nargs="+")
    s.add_argument("--t", type=float)
    s.add_argument("--kf-mode", choices=["exact", "ann"])
    s.add_argument("--neighbors", type=int)
    s.add_argument("--nlist", type=int)
    s.add_argument("--nprobe", type=int)
    s.add_argument("--edges", choices=["dbg", "kf", "both"])
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("pretrain", help="self-supervised pre-training")
    common(s)
    s.add_argument("--graph", required=True)
    s.add_argument("--corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--objective", choices=["cl", "contrastive", "gae"])
    s.add_argument("--edges", choices=["dbg", "kf", "both"])
    s.add_argument("--encoder", choices=["gcn", "table"])
    s.add_argument("--variant", choices=["node2vec", "word2vec"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--pairs-per-epoch", type=int)
    s.add_argument("--dim", type=int)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("eval", help="edit distance approximation or closest string retrieval")
    common(s)
    s.add_argument("--embeddings", required=True, help="pretrain output directory, or 'one-hot'")
    s.add_argument("--corpus", required=True)
    s.add_argument("--queries")
    s.add_argument("--out", required=True)
    s.add_argument("--task", choices=["edit-distance", "retrieval"])
    s.add_argument("--mode", choices=["mean", "concat", "auto"])
    s.add_argument("--method", help="label used in the report")
    s.add_argument("--k", type=int)
    s.add_argument("--head-epochs", type=int)
    s.add_argument("--train-pairs", type=int)
    s.add_argument("--val-pairs", type=int)
    s.add_argument("--test-pairs", type=int)
    s.add_argument("--n-percent", type=float, nargs="+")
    s.add_argument("--rmse-paper-literal", action="store_true",
                   help="sum instead of mean of squared errors under the root")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient verification suite")
    common(s)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        _limit_threads(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .config import ConfigError
    from .seq_corpus import CorpusError, OutOfVocabularyError
    from .downstream import CapacityError
    from .tensor_core import NumericError
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, OutOfVocabularyError, CapacityError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
