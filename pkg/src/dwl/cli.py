"""Command line: ``dwl {synth,train,eval,recommend,export-graph}``.

Every command writes its outputs under ``--out`` together with a
``manifest.json`` describing the run.  Exit codes: 0 success, 1 bad input
or configuration, 2 numerical divergence during training.
"""

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .corpus import generate_synthetic, load_corpus, save_corpus, split_corpus
from .errors import DWLError
from .evaluation import (
    FEATURE_MODES,
    METRICS,
    doc_features,
    knn_graph,
    knn_predict,
    pairwise_distances,
    recommend_procedures,
    topn_prf,
)
from .embedding import cost_matrix
from .io import atomic_write_text, file_digest
from .topic import softmax_columns
from .trainer import TrainConfig, TrainingDiverged, load_checkpoint, save_checkpoint, train

log = logging.getLogger("dwl")


class UsageError(DWLError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other bad input; 2 is reserved
    # for training divergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(x):
    return f"{x:.6g}"


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_manifest(args, out_dir, inputs, outputs, config, started):
    manifest = {
        "command": args.command,
        "config": config,
        "inputs": {os.path.basename(p): file_digest(p) for p in inputs if p},
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "wall_time": time.perf_counter() - started,
        "versions": {"dwl": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _require_file(path, what):
    if not path or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _load_inputs(args):
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.records, "records file")
    ckpt = load_checkpoint(args.checkpoint)
    vocab = ckpt.vocab
    if vocab is None:
        raise UsageError("checkpoint carries no vocabulary")
    corpus = load_corpus(args.records, vocab=vocab)
    if corpus.rejected:
        raise UsageError(
            f"records use {len(corpus.rejected)} tokens outside the checkpoint vocabulary, "
            f"e.g. {corpus.rejected[0][1]!r}"
        )
    return ckpt, corpus


def _eval_splits(corpus, args):
    corpus = split_corpus(corpus, seed=args.seed)
    train_idx, test_idx = corpus.split("train"), corpus.split("test")
    if args.allow_overlap:
        test_idx = train_idx
    if len(test_idx) == 0:
        raise UsageError("test split is empty")
    return corpus, train_idx, test_idx


def cmd_synth(args):
    corpus, truth = generate_synthetic(
        args.n_words, args.topics, args.docs, args.doc_length, args.concentration, seed=args.seed
    )
    records = os.path.join(args.out, "records.jsonl")
    vocab = os.path.join(args.out, "vocab.tsv")
    truth_path = os.path.join(args.out, "truth.json")
    save_corpus(corpus, records, vocab)
    _write_json(truth_path, {
        "true_topics": truth.true_topics.tolist(),
        "true_weights": truth.true_weights.tolist(),
        "true_cluster": truth.true_cluster.tolist(),
        "generator_seed": truth.generator_seed,
    })
    return [records, vocab, truth_path], [], vars_subset(args, "n_words", "topics", "docs", "doc_length", "concentration", "seed")


def vars_subset(args, *names):
    return {n: getattr(args, n) for n in names}


def _train_config(args):
    overrides = {
        "epochs": args.epochs, "topics": args.topics, "batch_size": args.batch_size,
        "learning_rate": args.learning_rate, "epsilon": args.epsilon, "tau": args.tau,
        "beta": args.beta, "embed_dim": args.embed_dim, "inner_iters": args.inner_iters,
        "seed": args.seed, "init_embeddings": args.init_embeddings,
        "supervised": args.supervised,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        _require_file(args.config, "config file")
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig.from_dict(overrides)


def cmd_train(args):
    _require_file(args.records, "records file")
    if args.vocab:
        _require_file(args.vocab, "vocabulary file")
    config = _train_config(args)
    corpus = load_corpus(args.records, vocab_path=args.vocab)
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    result = train(corpus, config, workers=args.workers)
    save_checkpoint(ckpt_path, result.checkpoint)
    tele_path = os.path.join(args.out, "telemetry.csv")
    _write_csv(tele_path, ["epoch", "mean_loss", "grad_norm"],
               [(s.epoch, s.mean_loss, s.grad_norm) for s in result.telemetry.epochs])
    return [ckpt_path, tele_path], [args.records, args.vocab, args.config], config.to_dict()


def cmd_eval(args):
    ckpt, corpus = _load_inputs(args)
    for f in args.feature:
        if f not in FEATURE_MODES:
            raise UsageError(f"unknown feature {f!r}; choose from {', '.join(FEATURE_MODES)}")
    corpus, train_idx, test_idx = _eval_splits(corpus, args)
    labels = corpus.label_array(args.label)
    Y = corpus.Y
    Lambda = None
    if "topic_weight" in args.feature:
        if ckpt.A.shape[1] != corpus.n_docs:
            raise UsageError("topic weights are only available for the corpus the checkpoint was trained on")
        Lambda = softmax_columns(ckpt.A)
    cost = cost_matrix(ckpt.theta)
    rows = []
    for feature in args.feature:
        feats = doc_features(Y, feature, ckpt.theta, Lambda)
        for metric in args.metric:
            if metric == "wasserstein" and feature != "word_distribution":
                continue
            d = pairwise_distances(feats[test_idx], feats[train_idx], metric, cost, args.epsilon)
            for k in args.knn:
                pred = knn_predict(d, labels[train_idx], k)
                acc = float(np.mean(pred == labels[test_idx]))
                rows.append((feature, metric, k, acc))
    if not rows:
        raise UsageError("no valid (feature, metric) combination requested")
    path = os.path.join(args.out, "metrics.csv")
    _write_csv(path, ["feature", "metric", "k", "accuracy"], rows)
    return [path], [args.checkpoint, args.records], vars_subset(args, "feature", "metric", "knn", "label", "seed", "epsilon")


def cmd_recommend(args):
    ckpt, corpus = _load_inputs(args)
    vocab = corpus.vocab
    procedures = vocab.indices_of_kind("procedure")
    diseases = set(vocab.indices_of_kind("disease").tolist())
    if procedures.size == 0:
        raise UsageError("vocabulary has no procedure tokens")
    for top in args.top:
        if not 1 <= top <= procedures.size:
            raise UsageError(f"--top {top} exceeds the {procedures.size} procedures in the vocabulary")
    corpus, _, test_idx = _eval_splits(corpus, args)
    admissions = []
    for m in test_idx:
        present = np.flatnonzero(corpus.counts[:, m])
        d_idx = [n for n in present if n in diseases]
        truth = [n for n in present if vocab.kinds[n] == "procedure"]
        if d_idx and truth:
            admissions.append((m, d_idx, truth))
    if not admissions:
        raise UsageError("no test admissions with both diseases and procedures")
    rec_rows, prf_rows = [], []
    for top in args.top:
        lists = []
        for m, d_idx, truth in admissions:
            ranked = recommend_procedures(d_idx, ckpt.theta, procedures, top, args.aggregate)
            lists.append(ranked)
            rec_rows.append((corpus.ids[m], top, " ".join(vocab.tokens[n] for n in ranked)))
        p, r, f1 = topn_prf(lists, [t for _, _, t in admissions])
        prf_rows.append((top, p, r, f1))
    rec_path = os.path.join(args.out, "recommendations.csv")
    prf_path = os.path.join(args.out, "prf.csv")
    _write_csv(rec_path, ["id", "top", "procedures"], rec_rows)
    _write_csv(prf_path, ["top", "precision", "recall", "f1"], prf_rows)
    return [rec_path, prf_path], [args.checkpoint, args.records], vars_subset(args, "top", "aggregate", "seed")


def cmd_export_graph(args):
    _require_file(args.checkpoint, "checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.vocab is None:
        raise UsageError("checkpoint carries no vocabulary")
    graph = knn_graph(ckpt.theta, list(ckpt.vocab.tokens), list(ckpt.vocab.kinds), k=args.k)
    path = os.path.join(args.out, "graph.json")
    _write_json(path, graph)
    return [path], [args.checkpoint], vars_subset(args, "k")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default 0, or the config file value)")
    common.add_argument("--config", help="key=value training config file")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="dwl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--n-words", type=int, default=30)
    p.add_argument("--topics", type=int, default=4)
    p.add_argument("--docs", type=int, default=500)
    p.add_argument("--doc-length", type=int, default=100)
    p.add_argument("--concentration", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train embeddings and topics")
    p.add_argument("--records", required=True)
    p.add_argument("--vocab")
    p.add_argument("--epochs", type=int)
    p.add_argument("--topics", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--inner-iters", type=int)
    p.add_argument("--init-embeddings", help="embedding table to fine-tune from")
    p.add_argument("--supervised", metavar="LABEL", help="fix each document's closest topic to this label")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="k-NN document classification")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--label", required=True, help="label name to classify")
    p.add_argument("--feature", nargs="+", default=list(FEATURE_MODES))
    p.add_argument("--metric", nargs="+", choices=METRICS, default=["euclidean"])
    p.add_argument("--knn", nargs="+", type=int, default=[1, 5])
    p.add_argument("--epsilon", type=float, default=0.01, help="Sinkhorn weight for the wasserstein metric")
    p.add_argument("--allow-overlap", action="store_true", help="evaluate on the training split itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", parents=[common], help="top-L procedure recommendation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--top", nargs="+", type=int, default=[1, 3, 5])
    p.add_argument("--aggregate", choices=("mean", "min"), default="mean")
    p.add_argument("--allow-overlap", action="store_true")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("export-graph", parents=[common], help="k-NN graph of embeddings as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=4)
    p.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None and args.command != "train":
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        os.makedirs(args.out, exist_ok=True)
        outputs, inputs, config = args.func(args)
        _write_manifest(args, args.out, inputs, outputs, config, started)
    except TrainingDiverged as exc:
        save_checkpoint(os.path.join(args.out, "last_good_checkpoint.json"), exc.checkpoint)
        print(f"dwl: training diverged: {exc}", file=sys.stderr)
        return 2
    except (DWLError, OSError, KeyError, ValueError) as exc:
        print(f"dwl: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
