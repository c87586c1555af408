import math

import numpy as np
import pytest

from tilda.corpus import Document, split_document
from tilda.evaluation import document_completion_ll, estimate_heldout_theta
from tilda.inference import opt_document
from tilda.model import (CategoryVarParams, ModelParams, TopicVarParams, VariationalState,
                         init_state)

from conftest import random_instance


def uniform_model(K, V, n_nodes=1):
    p = ModelParams.uniform(K, n_nodes)
    cats = [CategoryVarParams(float(K), np.full(K, 1.0 / K)) for _ in range(n_nodes)]
    return p, VariationalState(cats, [], TopicVarParams(np.ones((K, V))))


def docs(*pairs_list, parent=0):
    return [Document.from_pairs(p, parent) for p in pairs_list]


def test_uniform_unigram():
    p, s = uniform_model(1, 10)
    r = document_completion_ll(p, s, docs([(0, 3), (4, 2)], [(9, 7)]))
    assert r.per_word_ll == pytest.approx(math.log(0.1), abs=1e-12)
    assert r.docs_scored == 2 and r.docs_skipped == 0


def test_one_hot_topics_score_log_theta():
    p, s = uniform_model(2, 2)
    s.topics = TopicVarParams(np.array([[1.0, 1e-300], [1e-300, 1.0]]))
    d = Document.from_pairs([(0, 2), (1, 2)], 0)
    part1, part2 = split_document(d)
    theta = estimate_heldout_theta(part1, s.categories[0], 1.0, s.topics)
    r = document_completion_ll(p, s, [d])
    assert r.per_word_ll == pytest.approx(np.log(theta).mean(), rel=1e-12)


def test_single_topic_theta():
    p, s = uniform_model(1, 4)
    th = estimate_heldout_theta(docs([(1, 2)])[0], s.categories[0], 1.0, s.topics)
    np.testing.assert_array_equal(th, [1.0])


def test_no_evidence_returns_parent_mean():
    empty = Document._make(np.array([], dtype=np.int64), np.array([], dtype=np.int64), 0)
    parent = CategoryVarParams(7.0, np.array([0.2, 0.5, 0.3]))
    th = estimate_heldout_theta(empty, parent, 3.0, TopicVarParams(np.ones((3, 4))))
    np.testing.assert_allclose(th, parent.kappa, rtol=1e-14)


def test_symmetric_evidence_gives_uniform_theta():
    p, s = uniform_model(3, 4)
    th = estimate_heldout_theta(docs([(0, 2), (3, 1)])[0], s.categories[0], 1.0, s.topics)
    np.testing.assert_allclose(th, 1 / 3, rtol=1e-14)


def test_skips_are_counted():
    p, s = uniform_model(2, 5, n_nodes=2)
    held = docs([(0, 1)]) + docs([(1, 3)], parent=7) + docs([(2, 2)], parent=1)
    r = document_completion_ll(p, s, held)
    assert (r.docs_scored, r.docs_skipped) == (1, 2)
    assert r.docs_scored + r.docs_skipped == len(held)


def test_vocabulary_mismatch_raises():
    p, s = uniform_model(2, 3)
    with pytest.raises(ValueError):
        document_completion_ll(p, s, docs([(5, 2)]))


def brute_force(params, state, held, split):
    lam = state.topics.lam
    beta = lam / lam.sum(axis=1, keepdims=True)
    total, n = 0.0, 0
    for d in held:
        a, b = split_document(d, split)
        cat = state.categories[d.parent]
        q = opt_document(a, cat, params.alpha[d.parent], state.topics)
        theta = q.nu / q.nu.sum()
        for w, c in b.tokens:
            total += c * math.log(sum(theta[k] * beta[k, w] for k in range(params.K)))
            n += c
    return total / n


@pytest.mark.parametrize("split", ["alternating", "first-half"])
@pytest.mark.parametrize("seed", range(3))
def test_matches_brute_force(seed, split):
    c, p, s = random_instance(seed)
    held = [d for d in c.documents if d.length >= 2]
    r = document_completion_ll(p, s, held, split)
    assert r.per_word_ll == pytest.approx(brute_force(p, s, held, split), rel=1e-12)
    assert r.per_word_ll <= 0
    assert len(r.per_doc) == r.docs_scored
    assert r.tokens_scored == sum(n for _, _, n in r.per_doc)


@pytest.mark.parametrize("seed", range(3))
def test_topic_permutation_invariance(seed):
    c, p, s = random_instance(seed)
    held = list(c.documents)
    base = document_completion_ll(p, s, held).per_word_ll
    perm = np.random.default_rng(seed).permutation(p.K)
    s2 = s.copy()
    s2.topics = TopicVarParams(s.topics.lam[perm])
    for cat in s2.categories:
        cat.kappa = cat.kappa[perm]
    assert document_completion_ll(p, s2, held).per_word_ll == pytest.approx(base, rel=1e-12)


def test_report_formatting():
    p, s = uniform_model(1, 10)
    r = document_completion_ll(p, s, docs([(0, 2)], [(1, 1)], [(2, 4)]))
    assert r.summary().startswith("per_word_ll\t")
    assert "docs_skipped\t1" in r.summary()
    rows = r.per_doc_tsv().splitlines()
    assert len(rows) == 2 and rows[0].split("\t")[0] == "0" and rows[1].split("\t")[2] == "2"
