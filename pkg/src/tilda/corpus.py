"""Hierarchical corpora: an arena of category nodes plus bag-of-words documents.

Documents may hang off any category, not just the deepest ones.  Node 0 is
always the root, whose label is the empty path.  Category labels are
slash-separated paths (``"sports/tennis"``).

Native on-disk format
---------------------
* vocabulary file: one term per line; line ``i`` (0-based) is term id ``i``.
* documents file: one document per line, ``<path>\\t<id>:<count> <id>:<count> ...``
  with 0-based term ids.  An empty path attaches the document to the root.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class CorpusFormatError(ValueError):
    """Malformed corpus input; carries the 1-based line number when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_terms(cls, terms: Iterable[str]) -> "Vocabulary":
        terms = tuple(terms)
        index = {}
        for i, t in enumerate(terms):
            if t in index:
                raise CorpusFormatError(f"duplicate term {t!r}", line=i + 1)
            index[t] = i
        return cls(terms, index)

    def __len__(self) -> int:
        return len(self.terms)

    def __getitem__(self, i: int) -> str:
        return self.terms[i]


@dataclass(frozen=True, eq=False)
class Document:
    """Bag of words attached to a category node.

    ``term_ids`` is strictly increasing; ``counts`` are positive integers.
    ``weights`` is ``counts`` as float64, kept for the numerical kernels.
    """

    term_ids: np.ndarray
    counts: np.ndarray
    parent: int
    weights: np.ndarray = field(repr=False)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], parent: int) -> "Document":
        acc: dict[int, int] = {}
        for t, c in pairs:
            acc[int(t)] = acc.get(int(t), 0) + int(c)
        ids = np.array(sorted(acc), dtype=np.int64)
        counts = np.array([acc[t] for t in ids.tolist()], dtype=np.int64)
        return cls._make(ids, counts, parent)

    @classmethod
    def _make(cls, ids, counts, parent):
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        counts = np.ascontiguousarray(counts, dtype=np.int64)
        for a in (ids, counts):
            a.setflags(write=False)
        w = counts.astype(np.float64)
        w.setflags(write=False)
        return cls(ids, counts, int(parent), w)

    @property
    def length(self) -> int:
        """N_d, the total token count."""
        return int(self.counts.sum())

    @property
    def tokens(self) -> list[tuple[int, int]]:
        return list(zip(self.term_ids.tolist(), self.counts.tolist()))

    def with_parent(self, parent: int) -> "Document":
        return Document(self.term_ids, self.counts, int(parent), self.weights)

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return (self.parent == other.parent
                and np.array_equal(self.term_ids, other.term_ids)
                and np.array_equal(self.counts, other.counts))

    __hash__ = None


@dataclass(frozen=True)
class CategoryNode:
    id: int
    parent: int | None
    subcategories: tuple[int, ...]
    documents: tuple[int, ...]
    label: str

    @property
    def n_children(self) -> int:
        """|C_t|: subcategories plus documents."""
        return len(self.subcategories) + len(self.documents)


@dataclass(frozen=True)
class HierCorpus:
    vocabulary: Vocabulary
    nodes: tuple[CategoryNode, ...]
    documents: tuple[Document, ...]
    info: dict = field(default_factory=dict, compare=False)

    @property
    def V(self) -> int:
        return len(self.vocabulary)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_docs(self) -> int:
        return len(self.documents)

    @property
    def n_tokens(self) -> int:
        return sum(d.length for d in self.documents)

    @property
    def root(self) -> CategoryNode:
        return self.nodes[0]

    def node_by_label(self) -> dict[str, int]:
        return {n.label: n.id for n in self.nodes}

    def postorder(self, start: int = 0) -> list[int]:
        """Category ids with every child before its parent."""
        out, stack = [], [(start, False)]
        while stack:
            t, done = stack.pop()
            if done:
                out.append(t)
                continue
            stack.append((t, True))
            for c in reversed(self.nodes[t].subcategories):
                stack.append((c, False))
        return out

    def subtree_documents(self, t: int) -> list[int]:
        docs = []
        for c in reversed(self.postorder(t)):
            docs.extend(self.nodes[c].documents)
        return sorted(docs)

    def subtree_doc_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_nodes, dtype=np.int64)
        for t in self.postorder():
            node = self.nodes[t]
            counts[t] = len(node.documents) + sum(counts[c] for c in node.subcategories)
        return counts

    def depths(self) -> np.ndarray:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for t in reversed(self.postorder()):
            for c in self.nodes[t].subcategories:
                depth[c] = depth[t] + 1
        return depth

    def validate(self) -> None:
        if not self.nodes or self.nodes[0].parent is not None:
            raise ValueError("node 0 must be the root")
        seen = set(self.postorder())
        if len(seen) != self.n_nodes:
            raise ValueError("category tree is not connected")
        for n in self.nodes:
            for c in n.subcategories:
                if self.nodes[c].parent != n.id:
                    raise ValueError(f"inconsistent parent link at node {c}")
            for d in n.documents:
                if self.documents[d].parent != n.id:
                    raise ValueError(f"inconsistent parent link at document {d}")
        V = self.V
        for i, d in enumerate(self.documents):
            if d.term_ids.size and (d.term_ids[-1] >= V or d.term_ids[0] < 0):
                raise ValueError(f"document {i} has term ids outside [0, {V})")
            if d.counts.size and d.counts.min() < 1:
                raise ValueError(f"document {i} has a non-positive count")


def _label_parent(label: str) -> str | None:
    if label == "":
        return None
    return label.rsplit("/", 1)[0] if "/" in label else ""


def build_corpus(vocabulary: Vocabulary, labels: Sequence[str],
                 docs: Sequence[tuple[str, Document]], info: dict | None = None) -> HierCorpus:
    """Assemble a corpus from category labels and (label, document) pairs.

    Every prefix of every label becomes a node; nodes are numbered in order
    of first appearance with the root first.  Document parents are rewritten
    to the assembled node ids.
    """
    ids: dict[str, int] = {"": 0}
    order = [""]

    def ensure(label):
        if label in ids:
            return ids[label]
        parent = _label_parent(label)
        ensure(parent)
        ids[label] = len(order)
        order.append(label)
        return ids[label]

    for lab in labels:
        ensure(lab)
    for lab, _ in docs:
        ensure(lab)
    subcats: list[list[int]] = [[] for _ in order]
    child_docs: list[list[int]] = [[] for _ in order]
    for lab in order[1:]:
        subcats[ids[_label_parent(lab)]].append(ids[lab])
    documents = []
    for j, (lab, doc) in enumerate(docs):
        t = ids[lab]
        child_docs[t].append(j)
        documents.append(doc.with_parent(t))
    nodes = tuple(
        CategoryNode(i, None if i == 0 else ids[_label_parent(lab)],
                     tuple(subcats[i]), tuple(child_docs[i]), lab)
        for i, lab in enumerate(order))
    return HierCorpus(vocabulary, nodes, tuple(documents), dict(info or {}))


def _rebuild(corpus: HierCorpus, keep_nodes, docs, vocabulary=None, info=None) -> HierCorpus:
    labels = [corpus.nodes[t].label for t in sorted(keep_nodes)]
    pairs = [(corpus.nodes[d.parent].label, d) for d in docs]
    return build_corpus(vocabulary or corpus.vocabulary, labels, pairs, info)


def read_vocabulary(path) -> Vocabulary:
    terms = []
    index: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            term = line.rstrip("\n").rstrip("\r")
            if term == "":
                raise CorpusFormatError("empty term", path, lineno)
            if term in index:
                raise CorpusFormatError(f"duplicate term {term!r}", path, lineno)
            index[term] = len(terms)
            terms.append(term)
    return Vocabulary(tuple(terms), index)


def parse_doc_line(line: str, V: int, path=None, lineno=None) -> tuple[str, list[tuple[int, int]]]:
    """Parse one native-format document line into (label, [(term, count)])."""
    line = line.rstrip("\n").rstrip("\r")
    if "\t" not in line:
        raise CorpusFormatError("expected <path>TAB<termId:count ...>", path, lineno)
    label, body = line.split("\t", 1)
    if label and any(part == "" for part in label.split("/")):
        raise CorpusFormatError(f"bad category path {label!r}", path, lineno)
    pairs = []
    for tok in body.split():
        t, sep, c = tok.partition(":")
        try:
            if not sep:
                raise ValueError
            t, c = int(t), int(c)
        except ValueError:
            raise CorpusFormatError(f"bad token {tok!r}", path, lineno) from None
        if t < 0 or t >= V:
            raise CorpusFormatError(f"term id {t} out of range [0, {V})", path, lineno)
        if c < 1:
            raise CorpusFormatError(f"count must be >= 1, got {c}", path, lineno)
        pairs.append((t, c))
    if not pairs:
        raise CorpusFormatError("empty document", path, lineno)
    return label, pairs


def read_documents(path, V: int) -> list[tuple[str, Document]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip("\n"):
                continue
            label, pairs = parse_doc_line(line, V, path, lineno)
            out.append((label, Document.from_pairs(pairs, 0)))
    return out


def load_tree_corpus(vocab_path, docs_path) -> HierCorpus:
    """Load a corpus in the native vocabulary + documents format."""
    vocab = read_vocabulary(vocab_path)
    docs = read_documents(docs_path, len(vocab))
    return build_corpus(vocab, [], docs)


def write_tree_corpus(corpus: HierCorpus, vocab_path, docs_path) -> None:
    with open(vocab_path, "w", encoding="utf-8", newline="\n") as f:
        for term in corpus.vocabulary.terms:
            f.write(term + "\n")
    with open(docs_path, "w", encoding="utf-8", newline="\n") as f:
        for doc in corpus.documents:
            body = " ".join(f"{t}:{c}" for t, c in doc.tokens)
            f.write(f"{corpus.nodes[doc.parent].label}\t{body}\n")


def load_uci_bagofwords(docword_path, vocab_path) -> HierCorpus:
    """Load a UCI ``docword.*.txt`` / ``vocab.*.txt`` pair as a flat corpus.

    Header lines are D, W and NNZ; the body holds ``docID wordID count``
    triples with 1-based ids in any order.  Repeated (doc, word) pairs are
    summed.  Documents without any triple are dropped and counted in
    ``info["empty_docs"]``.
    """
    vocab = read_vocabulary(vocab_path)
    with open(docword_path, encoding="ascii") as f:
        header = []
        lineno = 0
        while len(header) < 3:
            line = f.readline()
            lineno += 1
            if not line:
                raise CorpusFormatError("truncated header", docword_path, lineno)
            if not line.strip():
                continue
            try:
                header.append(int(line))
            except ValueError:
                raise CorpusFormatError("bad header value", docword_path, lineno) from None
        D, W, nnz = header
        if W != len(vocab):
            raise CorpusFormatError(
                f"header W={W} but vocabulary has {len(vocab)} terms", docword_path, 2)
        data = np.loadtxt(f, dtype=np.int64, ndmin=2) if nnz else np.empty((0, 3), np.int64)
    if data.size == 0:
        data = data.reshape(0, 3)
    if data.shape[1] != 3:
        raise CorpusFormatError("expected docID wordID count triples", docword_path)
    if data.shape[0] != nnz:
        raise CorpusFormatError(
            f"body-count mismatch: header NNZ={nnz}, found {data.shape[0]} triples",
            docword_path)
    doc_ids, word_ids, counts = data[:, 0], data[:, 1], data[:, 2]
    for name, arr, hi in (("docID", doc_ids, D), ("wordID", word_ids, W)):
        bad = np.nonzero((arr < 1) | (arr > hi))[0]
        if bad.size:
            raise CorpusFormatError(f"{name} {arr[bad[0]]} out of range [1, {hi}]",
                                    docword_path, int(bad[0]) + 4)
    bad = np.nonzero(counts < 1)[0]
    if bad.size:
        raise CorpusFormatError("count must be >= 1", docword_path, int(bad[0]) + 4)
    order = np.lexsort((word_ids, doc_ids))
    doc_ids, word_ids, counts = doc_ids[order], word_ids[order] - 1, counts[order]
    docs = []
    starts = np.searchsorted(doc_ids, np.arange(1, D + 2))
    empty = 0
    for d in range(D):
        lo, hi = starts[d], starts[d + 1]
        if lo == hi:
            empty += 1
            continue
        w, c = word_ids[lo:hi], counts[lo:hi]
        uniq, inv = np.unique(w, return_inverse=True)
        docs.append(("", Document._make(uniq, np.bincount(inv, weights=c).astype(np.int64), 0)))
    return build_corpus(vocab, [], docs, {"empty_docs": empty})


def preprocess(corpus: HierCorpus, stopwords: Iterable[str] = (), min_doc_freq: int = 1,
               stem: Callable[[str], str] | None = None) -> HierCorpus:
    """Drop stopwords and rare terms, re-index the vocabulary, drop empty docs.

    ``stem`` is an optional term -> stem hook; terms sharing a stem are
    merged before frequencies are computed.  Document frequency counts each
    document once.  ``info`` records what was removed and whether the result
    is empty.
    """
    if min_doc_freq < 1:
        raise ValueError("min_doc_freq must be >= 1")
    terms = corpus.vocabulary.terms
    if stem is not None:
        stems = [stem(t) for t in terms]
        merged = list(dict.fromkeys(stems))
        pos = {s: i for i, s in enumerate(merged)}
        remap = np.array([pos[s] for s in stems], dtype=np.int64)
        terms = tuple(merged)
    else:
        remap = np.arange(len(terms), dtype=np.int64)
    stop = set(stopwords)
    df = np.zeros(len(terms), dtype=np.int64)
    for doc in corpus.documents:
        df[np.unique(remap[doc.term_ids])] += 1
    keep = (df >= min_doc_freq) & np.array([t not in stop for t in terms], dtype=bool)
    new_id = np.full(len(terms), -1, dtype=np.int64)
    new_id[keep] = np.arange(int(keep.sum()))
    vocab = Vocabulary.from_terms(t for t, k in zip(terms, keep) if k)
    docs = []
    dropped = 0
    for doc in corpus.documents:
        ids = new_id[remap[doc.term_ids]]
        m = ids >= 0
        if not m.any():
            dropped += 1
            continue
        acc: dict[int, int] = {}
        for t, c in zip(ids[m].tolist(), doc.counts[m].tolist()):
            acc[t] = acc.get(t, 0) + c
        docs.append(Document.from_pairs(acc.items(), doc.parent))
    info = dict(corpus.info)
    info.update(removed_terms=int((~keep).sum()), dropped_docs=dropped,
                empty=len(docs) == 0 or len(vocab) == 0)
    return _rebuild(corpus, range(corpus.n_nodes), docs, vocab, info)


def prune_barren(corpus: HierCorpus, min_leaf_descendants: int) -> HierCorpus:
    """Remove non-root subtrees holding fewer than ``min_leaf_descendants`` docs.

    Passes repeat until nothing changes, since removing a subtree can push
    its ancestors under the threshold.  The root is never removed.
    """
    if min_leaf_descendants < 1:
        raise ValueError("min_leaf_descendants must be >= 1")
    alive = np.ones(corpus.n_nodes, dtype=bool)
    nodes = corpus.nodes
    while True:
        counts = np.zeros(corpus.n_nodes, dtype=np.int64)
        for t in corpus.postorder():
            if not alive[t]:
                continue
            counts[t] = len(nodes[t].documents) + sum(
                counts[c] for c in nodes[t].subcategories if alive[c])
        doomed = [t for t in range(1, corpus.n_nodes)
                  if alive[t] and counts[t] < min_leaf_descendants]
        if not doomed:
            break
        for t in doomed:
            for c in corpus.postorder(t):
                alive[c] = False
    docs = [d for d in corpus.documents if alive[d.parent]]
    info = dict(corpus.info)
    info.update(pruned_nodes=int((~alive).sum()), pruned_docs=corpus.n_docs - len(docs))
    return _rebuild(corpus, np.nonzero(alive)[0].tolist(), docs, info=info)


def flatten(corpus: HierCorpus) -> HierCorpus:
    """The same documents attached directly to the root (a two-level tree)."""
    docs = [("", d) for d in corpus.documents]
    return build_corpus(corpus.vocabulary, [], docs, dict(corpus.info))


def split_corpus(corpus: HierCorpus, heldout_fraction: float, seed: int):
    """Random train/held-out split of documents, stratified per category.

    Returns ``(train, heldout)`` where ``heldout`` is a list of documents whose
    ``parent`` refers to node ids of ``train``.  Category nodes are kept in
    ``train`` even if all their documents were held out.
    """
    if not 0.0 <= heldout_fraction < 1.0:
        raise ValueError("heldout_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    held = set()
    for node in corpus.nodes:
        docs = list(node.documents)
        n_held = int(round(heldout_fraction * len(docs)))
        if n_held:
            held.update(rng.choice(docs, size=n_held, replace=False).tolist())
    train_docs = [d for i, d in enumerate(corpus.documents) if i not in held]
    train = _rebuild(corpus, range(corpus.n_nodes), train_docs)
    ids = train.node_by_label()
    heldout = [corpus.documents[i].with_parent(ids[corpus.nodes[corpus.documents[i].parent].label])
               for i in sorted(held)]
    return train, heldout


SPLIT_MODES = ("alternating", "first-half")


def split_document(doc: Document, mode: str = "alternating"):
    """Split a document's tokens into two non-empty parts.

    Tokens are expanded in term-id order (runs of repeated terms).  In
    ``alternating`` mode even positions go to part one; in ``first-half``
    mode part one gets the first ceil(N/2) tokens.  Returns ``None`` when
    the document has fewer than two tokens.
    """
    if mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {mode!r}")
    n = doc.length
    if n < 2:
        return None
    seq = np.repeat(doc.term_ids, doc.counts)
    if mode == "alternating":
        a, b = seq[0::2], seq[1::2]
    else:
        h = math.ceil(n / 2)
        a, b = seq[:h], seq[h:]
    return _from_sequence(a, doc.parent), _from_sequence(b, doc.parent)


def _from_sequence(seq, parent) -> Document:
    ids, counts = np.unique(seq, return_counts=True)
    return Document._make(ids, counts, parent)


def read_stopwords(path) -> set[str]:
    with open(path, encoding="utf-8") as f:
        return {line.strip() for line in f if line.strip()}


def corpus_from_dir(path) -> HierCorpus:
    """Load ``vocab.txt`` + ``docs.txt`` from a directory."""
    path = Path(path)
    return load_tree_corpus(path / "vocab.txt", path / "docs.txt")
