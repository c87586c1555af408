"""Command-line interface: ``tilda {train,topics,categories,eval,generate,split}``.

Exit status is 0 on success, 1 on a runtime error and 2 on a usage error.
Data goes to standard output (or ``--output``); logs go to standard error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from tilda.corpus import (SPLIT_MODES, CorpusFormatError, HierCorpus, build_corpus,
                          corpus_from_dir, flatten, load_uci_bagofwords,
                          preprocess, prune_barren, read_documents, read_stopwords,
                          read_vocabulary, split_corpus, write_tree_corpus)
from tilda.evaluation import document_completion_ll
from tilda.model import ModelFormatError, ModelParams, TrainedModel, load_model, save_model
from tilda.scheduler import TrainConfig, TrainingError, train
from tilda.synth import TreeShape, generate_corpus, write_latents

log = logging.getLogger("tilda")


class UsageError(Exception):
    pass


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {s}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {s}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a real > 0, got {s}")
    return v


# sidecars ---------------------------------------------------------------


def _vocab_path(model_path):
    return Path(str(model_path) + ".vocab")


def _labels_path(model_path):
    return Path(str(model_path) + ".labels")


def _write_sidecars(model_path, corpus: HierCorpus):
    with open(_vocab_path(model_path), "w", encoding="utf-8", newline="\n") as f:
        f.writelines(t + "\n" for t in corpus.vocabulary.terms)
    with open(_labels_path(model_path), "w", encoding="utf-8", newline="\n") as f:
        for node in corpus.nodes:
            f.write(f"{node.id}\t{node.label}\t{len(node.documents)}\n")


def _read_terms(model_path, V):
    p = _vocab_path(model_path)
    if not p.exists():
        return [str(v) for v in range(V)]
    terms = read_vocabulary(p).terms
    if len(terms) != V:
        raise ModelFormatError(f"{p} has {len(terms)} terms, model has {V}")
    return list(terms)


def _read_labels(model_path, n_nodes):
    """(labels, documents per node); synthesized when the sidecar is absent."""
    p = _labels_path(model_path)
    if not p.exists():
        return [str(t) for t in range(n_nodes)], [0] * n_nodes
    labels, ndocs = [], []
    with open(p, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[0] != str(lineno - 1):
                raise ModelFormatError(f"{p}: bad label record", lineno)
            labels.append(parts[1])
            ndocs.append(int(parts[2]))
    if len(labels) != n_nodes:
        raise ModelFormatError(f"{p} has {len(labels)} nodes, model has {n_nodes}")
    return labels, ndocs


# train ------------------------------------------------------------------


def _load_training_corpus(args) -> HierCorpus:
    path = Path(args.corpus)
    if path.is_dir():
        corpus = corpus_from_dir(path)
    else:
        if args.vocab is None:
            raise UsageError("--vocab is required when --corpus is a UCI docword file")
        corpus = load_uci_bagofwords(path, args.vocab)
    stop = read_stopwords(args.stopwords) if args.stopwords else ()
    if stop or args.min_df > 1:
        corpus = preprocess(corpus, stop, args.min_df)
    if args.prune_min_docs > 1:
        corpus = prune_barren(corpus, args.prune_min_docs)
    if args.flat:
        corpus = flatten(corpus)
    if corpus.n_docs == 0:
        raise ValueError("no documents left to train on")
    return corpus


def cmd_train(args) -> int:
    corpus = _load_training_corpus(args)
    log.info("corpus: %d categories, %d documents, %d terms, %d tokens",
             corpus.n_nodes, corpus.n_docs, corpus.V, corpus.n_tokens)
    logfile = open(args.log, "w", encoding="utf-8", newline="\n") if args.log else None

    def progress(sweep, elbo, seconds):
        line = f"{sweep}\t{elbo!r}\t{seconds:.3f}\n"
        sys.stderr.write(line)
        if logfile:
            logfile.write(line)
            logfile.flush()

    cfg = TrainConfig(K=args.k, max_outer_sweeps=args.max_sweeps, elbo_rel_tol=args.tol,
                      threads=args.threads, seed=args.seed, learn_alpha=args.learn_alpha,
                      learn_gamma=args.learn_gamma, learn_eta=args.learn_eta,
                      deterministic=args.deterministic, gamma=args.gamma, eta=args.eta,
                      alpha0=args.alpha0, progress=progress)
    try:
        res = train(corpus, cfg)
    finally:
        if logfile:
            logfile.close()
    model = TrainedModel.from_state(corpus, res.params, res.state)
    save_model(args.output, model)
    _write_sidecars(args.output, corpus)
    return 0


# topics -----------------------------------------------------------------


def top_terms(lam_row: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n largest entries; ties go to the smaller term id."""
    order = np.lexsort((np.arange(lam_row.size), -lam_row))
    return order[:n]


def cmd_topics(args) -> int:
    model = load_model(args.model)
    terms = _read_terms(args.model, model.topics.V)
    beta = model.topics.topic_word()
    out = ["topic\trank\tterm\tweight"]
    for k in range(model.params.K):
        for r, v in enumerate(top_terms(model.topics.lam[k], args.top_n)):
            out.append(f"{k}\t{r + 1}\t{terms[v]}\t{beta[k, v]:.6g}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


# categories -------------------------------------------------------------


def _depths(parents):
    depth = [0] * len(parents)
    for t in range(1, len(parents)):
        depth[t] = depth[parents[t]] + 1  # parents precede children
    return depth


def category_rows(model: TrainedModel, labels, ndocs):
    subcats = [0] * len(model.parents)
    for p in model.parents[1:]:
        subcats[p] += 1
    rows = []
    for t, cat in enumerate(model.categories):
        props = cat.mean
        rows.append({"node": t, "label": labels[t] or "/", "alpha": float(model.params.alpha[t]),
                     "proportions": props, "dominant": int(np.argmax(props)),
                     "children": subcats[t] + ndocs[t], "leaf": subcats[t] == 0})
    return rows


def aggregate_proportions(proportions) -> np.ndarray:
    """Sum of topic proportions over categories, normalized to ratios."""
    total = np.sum(proportions, axis=0)
    return total / total.sum()


def cmd_categories(args) -> int:
    model = load_model(args.model)
    labels, ndocs = _read_labels(args.model, len(model.categories))
    rows = category_rows(model, labels, ndocs)
    if args.level is None:
        chosen = [r for r in rows if r["leaf"]]
    else:
        depth = _depths(model.parents)
        chosen = [r for r in rows if depth[r["node"]] == args.level]
        if not chosen:
            raise UsageError(f"no categories at level {args.level}")
    if args.sort == "alpha":
        rows = sorted(rows, key=lambda r: (-r["alpha"], r["node"]))
    out = ["node\tlabel\talpha\tdominant\tchildren\tproportions"]
    for r in rows:
        props = " ".join(f"{x:.6g}" for x in r["proportions"])
        out.append(f"{r['node']}\t{r['label']}\t{r['alpha']:.6g}\t{r['dominant']}"
                   f"\t{r['children']}\t{props}")
    ratios = aggregate_proportions([r["proportions"] for r in chosen])
    for k, x in enumerate(ratios):
        out.append(f"aggregate\t{k}\t{x:.6g}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


# eval -------------------------------------------------------------------


def _load_heldout(args, model_terms, labels):
    path = Path(args.heldout)
    if path.is_dir():
        vocab_path, docs_path = path / "vocab.txt", path / "docs.txt"
    else:
        vocab_path, docs_path = args.heldout_vocab, path
    if vocab_path is None:
        terms = model_terms
    else:
        terms = list(read_vocabulary(vocab_path).terms)
    index = {t: i for i, t in enumerate(model_terms)}
    unknown = [t for t in terms if t not in index]
    if unknown:
        raise ValueError(f"{len(unknown)} held-out terms are not in the model vocabulary; "
                         f"first {min(5, len(unknown))}: {' '.join(unknown[:5])}")
    remap = np.array([index[t] for t in terms], dtype=np.int64)
    node_of = {lab: t for t, lab in enumerate(labels)}
    docs = []
    for lab, doc in read_documents(docs_path, len(terms)):
        parent = 0 if args.root else node_of.get(lab, -1)
        pairs = zip(remap[doc.term_ids].tolist(), doc.counts.tolist())
        docs.append(type(doc).from_pairs(pairs, parent))
    return docs


def cmd_eval(args) -> int:
    model = load_model(args.model)
    terms = _read_terms(args.model, model.topics.V)
    labels, _ = _read_labels(args.model, len(model.categories))
    docs = _load_heldout(args, terms, labels)
    report = document_completion_ll(model.params, model.state, docs, args.split)
    if args.per_doc:
        sys.stdout.write(report.per_doc_tsv())
    sys.stdout.write(report.summary() + "\n")
    return 0


# generate / split -------------------------------------------------------


def cmd_generate(args) -> int:
    shape = TreeShape(args.depth, args.branching, args.docs, args.doc_length, args.vocab_size)
    params = ModelParams(args.k, args.gamma, args.eta, [args.alpha])
    corpus, latents = generate_corpus(params, shape, args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_tree_corpus(corpus, out / "vocab.txt", out / "docs.txt")
    write_latents(out / "latents.txt", corpus, latents)
    log.info("wrote %d documents in %d categories to %s", corpus.n_docs, corpus.n_nodes, out)
    return 0


def cmd_split(args) -> int:
    corpus = corpus_from_dir(args.corpus)
    train_c, held = split_corpus(corpus, args.heldout_fraction, args.seed)
    out = Path(args.output)
    for sub in ("train", "heldout"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_tree_corpus(train_c, out / "train" / "vocab.txt", out / "train" / "docs.txt")
    labels = [n.label for n in train_c.nodes]
    held_c = build_corpus(train_c.vocabulary, labels, [(labels[d.parent], d) for d in held])
    write_tree_corpus(held_c, out / "heldout" / "vocab.txt", out / "heldout" / "docs.txt")
    return 0


# parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tilda", description="Tree-informed LDA toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress details")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model by variational EM")
    t.add_argument("--corpus", required=True,
                   help="directory with vocab.txt and docs.txt, or a UCI docword file")
    t.add_argument("--vocab", help="vocabulary file for a UCI docword corpus")
    t.add_argument("--k", type=_positive_int, required=True, help="number of topics")
    t.add_argument("--max-sweeps", type=_positive_int, default=100)
    t.add_argument("--tol", type=_positive_float, default=1e-5,
                   help="relative improvement of the bound that ends training")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=_positive_int, default=1)
    t.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    t.add_argument("--learn-alpha", action="store_true")
    t.add_argument("--learn-gamma", action="store_true")
    t.add_argument("--learn-eta", action="store_true")
    t.add_argument("--gamma", type=_positive_float, default=1.0)
    t.add_argument("--eta", type=_positive_float, default=1.0)
    t.add_argument("--alpha0", type=_positive_float, default=1.0,
                   help="initial concentration of every category")
    t.add_argument("--stopwords", help="file with one stopword per line")
    t.add_argument("--min-df", type=_positive_int, default=1,
                   help="drop terms found in fewer documents")
    t.add_argument("--prune-min-docs", type=_positive_int, default=1,
                   help="drop subtrees holding fewer documents")
    t.add_argument("--flat", action="store_true", help="attach every document to the root")
    t.add_argument("--log", help="also write the sweep log to this file")
    t.add_argument("--output", required=True, help="model file to write")
    t.set_defaults(func=cmd_train)

    t = sub.add_parser("topics", help="print the most probable terms of each topic")
    t.add_argument("--model", required=True)
    t.add_argument("--top-n", type=_nonneg_int, default=8)
    t.set_defaults(func=cmd_topics)

    t = sub.add_parser("categories", help="per-category proportions and concentrations")
    t.add_argument("--model", required=True)
    t.add_argument("--sort", choices=("alpha", "node"), default="node")
    t.add_argument("--level", type=_nonneg_int,
                   help="tree level to aggregate over (root is 0; default: leaf categories)")
    t.set_defaults(func=cmd_categories)

    t = sub.add_parser("eval", help="held-out per-word log-likelihood")
    t.add_argument("--model", required=True)
    t.add_argument("--heldout", required=True,
                   help="directory with vocab.txt and docs.txt, or a documents file")
    t.add_argument("--heldout-vocab", help="vocabulary of a held-out documents file "
                                           "(default: the model's)")
    t.add_argument("--split", choices=SPLIT_MODES, default="alternating")
    t.add_argument("--per-doc", action="store_true", help="print doc-id, ll, n2 per document")
    t.add_argument("--root", action="store_true", help="score every document under the root")
    t.set_defaults(func=cmd_eval)

    t = sub.add_parser("generate", help="sample a synthetic corpus")
    t.add_argument("--k", type=_positive_int, default=5)
    t.add_argument("--depth", type=_positive_int, default=3,
                   help="category levels including the root")
    t.add_argument("--branching", type=_positive_int, default=3)
    t.add_argument("--docs", type=_positive_int, default=30, help="documents per bottom category")
    t.add_argument("--doc-length", type=_positive_int, default=100)
    t.add_argument("--vocab-size", type=_positive_int, default=500)
    t.add_argument("--alpha", type=_positive_float, default=5.0)
    t.add_argument("--gamma", type=_positive_float, default=1.0)
    t.add_argument("--eta", type=_positive_float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--output", required=True, help="output directory")
    t.set_defaults(func=cmd_generate)

    t = sub.add_parser("split", help="stratified train/held-out split of a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--heldout-fraction", type=float, default=0.2)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--output", required=True)
    t.set_defaults(func=cmd_split)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tilda: error: {exc}", file=sys.stderr)
        return 2
    except (CorpusFormatError, ModelFormatError, TrainingError, ValueError, OSError) as exc:
        print(f"tilda: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
