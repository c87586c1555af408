"""Held-out scoring by document completion.

Each held-out document is split in two.  The first part fixes an estimate of
the document's topic proportions; the second part is scored under the
resulting mixture of the expected topics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tilda.corpus import Document, split_document
from tilda.inference import DOC_MAX_ITERS, DOC_TOL, opt_document
from tilda.model import CategoryVarParams, ModelParams, TopicVarParams, VariationalState


@dataclass
class EvalReport:
    per_word_ll: float
    docs_scored: int
    docs_skipped: int
    tokens_scored: int = 0
    per_doc: list = field(default_factory=list, repr=False)  # (index, ll per word, n2)

    def summary(self) -> str:
        return (f"per_word_ll\t{self.per_word_ll!r}\tdocs_scored\t{self.docs_scored}"
                f"\tdocs_skipped\t{self.docs_skipped}\ttokens\t{self.tokens_scored}")

    def per_doc_tsv(self) -> str:
        return "".join(f"{i}\t{ll!r}\t{n}\n" for i, ll, n in self.per_doc)


def estimate_heldout_theta(part1: Document, parent: CategoryVarParams, alpha_parent: float,
                           topics: TopicVarParams, tol: float = DOC_TOL,
                           max_iters: int = DOC_MAX_ITERS) -> np.ndarray:
    """E_q[theta_d] after fitting q(theta_d) to ``part1`` from a cold start."""
    q = opt_document(part1, parent, alpha_parent, topics, tol, max_iters)
    return q.nu / q.nu.sum()


def score_part(theta: np.ndarray, beta_hat: np.ndarray, part2: Document) -> float:
    """sum over tokens of ln sum_k theta_k beta_hat[k, w]."""
    p = theta @ beta_hat[:, part2.term_ids]
    return float(part2.weights @ np.log(p))


def document_completion_ll(model: ModelParams, state: VariationalState, heldout,
                           split: str = "alternating", tol: float = DOC_TOL,
                           max_iters: int = DOC_MAX_ITERS) -> EvalReport:
    """Token-weighted per-word log-likelihood of the held-out second halves.

    Documents with fewer than two tokens, or whose parent category is not
    part of the model, are skipped and counted.
    """
    topics = state.topics
    V = topics.V
    beta_hat = topics.topic_word()
    n_nodes = len(state.categories)
    total, tokens, skipped = 0.0, 0, 0
    per_doc = []
    for i, doc in enumerate(heldout):
        if doc.term_ids.size and doc.term_ids[-1] >= V:
            raise ValueError(f"held-out document {i} uses term ids outside the model vocabulary")
        parts = split_document(doc, split)
        if parts is None or not 0 <= doc.parent < n_nodes:
            skipped += 1
            continue
        part1, part2 = parts
        theta = estimate_heldout_theta(part1, state.categories[doc.parent],
                                       float(model.alpha[doc.parent]), topics, tol, max_iters)
        ll = score_part(theta, beta_hat, part2)
        n2 = part2.length
        total += ll
        tokens += n2
        per_doc.append((i, ll / n2, n2))
    scored = len(per_doc)
    avg = total / tokens if tokens else math.nan
    return EvalReport(avg, scored, skipped, tokens, per_doc)
