"""Sample corpora from the tree-structured generative model.

Topics are drawn from a symmetric Dirichlet(eta/V), the root proportions
from a symmetric Dirichlet(gamma/K), and every child (category or document)
of a category t from Dirichlet(alpha_t * theta_t).  Words are drawn by first
picking a topic from the document's proportions and then a term from that
topic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tilda.corpus import Document, HierCorpus, Vocabulary, build_corpus
from tilda.model import ModelParams


@dataclass(frozen=True)
class TreeShape:
    """A complete tree of categories.

    ``depth`` counts category levels including the root, so ``depth=1`` is a
    flat corpus with every document under the root.  Documents attach to
    the bottom level only.
    """

    depth: int
    branching: int
    docs_per_category: int
    doc_length: int
    V: int

    def __post_init__(self):
        for name in ("depth", "branching", "docs_per_category", "doc_length", "V"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def n_nodes(self) -> int:
        return sum(self.branching ** level for level in range(self.depth))

    @property
    def n_leaves(self) -> int:
        return self.branching ** (self.depth - 1)

    @property
    def n_docs(self) -> int:
        return self.n_leaves * self.docs_per_category


@dataclass
class Latents:
    """Everything sampled on the way to the observed words."""

    beta: np.ndarray          # K x V
    node_theta: np.ndarray    # nodes x K
    doc_theta: np.ndarray     # docs x K
    topic_counts: np.ndarray  # docs x K, tokens drawn from each topic


def sample_dirichlet(rng: np.random.Generator, alpha: np.ndarray) -> np.ndarray:
    """Dirichlet draw that stays accurate for tiny parameters.

    Uses log G(a) = log G(a + 1) + log(U) / a so that Gamma variates with
    a << 1 do not underflow to zero.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[-1] == 1:
        return np.ones_like(alpha)
    g = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.shape)) / alpha
    g -= g.max(axis=-1, keepdims=True)
    x = np.exp(g)
    x = np.maximum(x / x.sum(axis=-1, keepdims=True), np.finfo(np.float64).tiny)
    return x / x.sum(axis=-1, keepdims=True)


def tree_labels(shape: TreeShape) -> list[str]:
    """Category labels in breadth-first order, root first."""
    labels = [""]
    level = [""]
    for _ in range(shape.depth - 1):
        nxt = []
        for parent in level:
            for j in range(shape.branching):
                nxt.append(f"{parent}/c{j}" if parent else f"c{j}")
        labels.extend(nxt)
        level = nxt
    return labels


def generate_corpus(params: ModelParams, shape: TreeShape, seed: int):
    """Sample a corpus and its latent variables; deterministic given ``seed``.

    ``params.alpha`` holds one concentration per category in breadth-first
    order, or a single value used everywhere.
    """
    K, V = params.K, shape.V
    n_nodes = shape.n_nodes
    alpha = params.alpha
    if alpha.size == 1:
        alpha = np.full(n_nodes, float(alpha[0]))
    elif alpha.size != n_nodes:
        raise ValueError(f"need {n_nodes} alpha values for this tree, got {alpha.size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    beta = sample_dirichlet(rng, np.full((K, V), params.eta / V))
    labels = tree_labels(shape)
    index = {lab: i for i, lab in enumerate(labels)}
    theta = np.empty((n_nodes, K))
    theta[0] = sample_dirichlet(rng, np.full(K, params.gamma / K))
    for t, lab in enumerate(labels[1:], 1):
        p = index[lab.rsplit("/", 1)[0] if "/" in lab else ""]
        theta[t] = sample_dirichlet(rng, alpha[p] * theta[p])
    leaves = labels[n_nodes - shape.n_leaves:]
    docs = []
    doc_theta = np.empty((shape.n_docs, K))
    zcounts = np.empty((shape.n_docs, K), dtype=np.int64)
    j = 0
    for lab in leaves:
        t = index[lab]
        for _ in range(shape.docs_per_category):
            th = sample_dirichlet(rng, alpha[t] * theta[t])
            nz = rng.multinomial(shape.doc_length, th)
            words = np.zeros(V, dtype=np.int64)
            for k in np.nonzero(nz)[0]:
                words += rng.multinomial(nz[k], beta[k])
            ids = np.nonzero(words)[0]
            docs.append((lab, Document._make(ids, words[ids], 0)))
            doc_theta[j] = th
            zcounts[j] = nz
            j += 1
    vocab = Vocabulary.from_terms(f"w{v}" for v in range(V))
    corpus = build_corpus(vocab, labels, docs, {"seed": seed})
    return corpus, Latents(beta, theta, doc_theta, zcounts)


def write_latents(path, corpus: HierCorpus, latents: Latents) -> None:
    """Tab-separated sidecar: one ``beta``, ``node`` or ``doc`` record per line."""
    def row(v):
        return " ".join(repr(float(x)) for x in v)

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        K, V = latents.beta.shape
        f.write(f"#latents\tK={K}\tV={V}\tnodes={corpus.n_nodes}\tdocs={corpus.n_docs}\n")
        for k, b in enumerate(latents.beta):
            f.write(f"beta\t{k}\t{row(b)}\n")
        for node in corpus.nodes:
            f.write(f"node\t{node.id}\t{node.label}\t{row(latents.node_theta[node.id])}\n")
        for d, doc in enumerate(corpus.documents):
            z = " ".join(str(int(c)) for c in latents.topic_counts[d])
            f.write(f"doc\t{d}\t{doc.parent}\t{row(latents.doc_theta[d])}\t{z}\n")
