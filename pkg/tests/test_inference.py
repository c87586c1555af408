import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln

from tilda import inference as inf
from tilda.corpus import Document
from tilda.inference import ElboError, compute_elbo, opt_document, update_lambda
from tilda.model import CategoryVarParams, DocVarParams, ModelParams, TopicVarParams, init_state
from tilda.special import dirichlet_stats, elog_gamma_bound_vector

from conftest import make_corpus, random_instance, randomize_state
from oracles import MinimalLDA, dirichlet_multinomial_logml, flat_log_marginal_is


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# the bound ---------------------------------------------------------------


def test_single_topic_bound_is_exact():
    c = make_corpus([("x", [(0, 2), (1, 1)]), ("", [(2, 3), (0, 1)])], V=3)
    p = ModelParams.uniform(1, c.n_nodes, eta=0.7, gamma=2.0, alpha=3.0)
    s = init_state(c, p, 0)
    s.topics = update_lambda(c, p, s)
    got = compute_elbo(c, p, s).total
    assert got == pytest.approx(dirichlet_multinomial_logml([3, 1, 3], 0.7), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_breakdown_sums_to_total(seed):
    c, p, s = random_instance(seed)
    b = compute_elbo(c, p, s)
    parts = sum(b.components().values())
    assert parts == pytest.approx(b.total, rel=1e-12)
    assert set(b.components()) == {"root_prior", "category_coupling", "document_coupling",
                                   "tokens", "topic_prior", "entropy"}


def test_identical_siblings_contribute_identically():
    c = make_corpus([("a", [(0, 2), (1, 1)]), ("a", [(0, 2), (1, 1)])], V=2)
    p = ModelParams.uniform(2, c.n_nodes)
    s = randomize_state(c, p, 1)
    s.documents[1] = s.documents[0].copy()
    single = make_corpus([("a", [(0, 2), (1, 1)])], V=2)
    s1 = s.copy()
    s1.documents = s.documents[:1]
    both, one = compute_elbo(c, p, s), compute_elbo(single, p, s1)
    for name in ("document_coupling", "tokens"):
        assert getattr(both, name) == pytest.approx(2 * getattr(one, name), rel=1e-13)


def test_non_finite_bound_names_node():
    c, p, s = random_instance(0)
    s.categories[2] = CategoryVarParams(1.0, np.array([1.0, np.nan, 0.0]))
    with pytest.raises(ElboError) as err:
        compute_elbo(c, p, s)
    assert err.value.node == 2


@pytest.mark.parametrize("optimize", [False, True])
def test_bound_below_log_marginal(optimize):
    docs = [[(0, 2), (2, 1)], [(1, 1), (2, 1)]]
    c = make_corpus([("", d) for d in docs], V=3)
    p = ModelParams(2, 1.5, 1.2, [2.0])
    s = randomize_state(c, p, 4)
    if optimize:
        for _ in range(30):
            for j, d in enumerate(c.documents):
                s.documents[j] = opt_document(d, s.categories[0], 2.0, s.topics, 1e-10, 100,
                                              init=s.documents[j])
            s.categories[0] = inf.optimize_category(s.categories[0],
                                                    inf.category_context(0, c, p, s))
            s.topics = update_lambda(c, p, s)
    bound = compute_elbo(c, p, s).total
    arrays = [(np.array([t for t, _ in d]), np.array([n for _, n in d], float)) for d in docs]
    est, se = flat_log_marginal_is(arrays, 2, 3, 1.5, 2.0, 1.2, 400_000, seed=9)
    assert bound <= est + 3 * se + 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_bound_below_monte_carlo_objective(seed):
    """Using MC values of the E[lnGamma] couplings instead of their bounds can only raise L'."""
    c, p, s = random_instance(seed)
    rng = np.random.default_rng(100 + seed)
    gap, var = 0.0, 0.0
    for node in c.nodes:
        n = node.n_children
        if n == 0:
            continue
        nu = s.categories[node.id].nu
        alpha = p.alpha[node.id]
        x = np.maximum(rng.dirichlet(nu, size=400_000), 1e-300)
        v = gammaln(alpha * x).sum(axis=1)
        bound = float(elog_gamma_bound_vector(alpha, dirichlet_stats(nu)).sum())
        gap += n * (bound - v.mean())
        var += (n * v.std()) ** 2 / v.size
    # exact objective minus L' equals the summed bound gaps
    assert gap >= -3 * math.sqrt(var)


# documents ---------------------------------------------------------------


def test_symmetric_fixed_point():
    K, alpha = 3, 2.0
    doc = Document.from_pairs([(0, 2), (1, 3)], 0)
    topics = TopicVarParams(np.full((K, 2), 1.7))
    q = opt_document(doc, CategoryVarParams(5.0, np.full(K, 1 / K)), alpha, topics, 1e-10, 50)
    np.testing.assert_allclose(q.rho, 1 / K, atol=1e-15)
    np.testing.assert_allclose(q.nu, alpha / K + doc.length / K, rtol=1e-14)


def test_nu_update_arithmetic():
    doc = Document.from_pairs([(0, 3), (1, 1)], 0)
    topics = TopicVarParams(np.array([[1e6, 1e-6], [1e-6, 1e6]]))
    q = opt_document(doc, CategoryVarParams(4.0, np.array([0.5, 0.5])), 4.0, topics)
    np.testing.assert_allclose(q.nu, [5.0, 3.0], rtol=1e-12)


def test_one_token_responsibilities():
    doc = Document.from_pairs([(0, 1)], 0)
    topics = TopicVarParams(np.array([[2.0, 1.0], [1.0, 2.0]]))
    q = opt_document(doc, CategoryVarParams(2.0, np.array([0.5, 0.5])), 1.0, topics, 1e-8, 1,
                     init=DocVarParams(np.array([1.0, 1.0]), np.full((1, 2), 0.5)))
    e = math.e
    np.testing.assert_allclose(q.rho[0], [e / (e + 1), 1 / (e + 1)], rtol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_opt_document_satisfies_nu_update(seed):
    c, p, s = random_instance(seed)
    for j, d in enumerate(c.documents):
        parent = s.categories[d.parent]
        q = opt_document(d, parent, p.alpha[d.parent], s.topics, 1e-6, 100)
        prior = p.alpha[d.parent] * parent.mean
        np.testing.assert_allclose(q.nu, prior + d.weights @ q.rho, rtol=1e-12)
        np.testing.assert_allclose(q.rho.sum(axis=1), 1.0, atol=1e-12)


def test_opt_document_warm_start_does_not_modify_init():
    c, p, s = random_instance(1)
    d = c.documents[0]
    before = s.documents[0].copy()
    opt_document(d, s.categories[d.parent], p.alpha[d.parent], s.topics, init=s.documents[0])
    np.testing.assert_array_equal(before.nu, s.documents[0].nu)


def test_flat_reduction_matches_minimal_lda():
    docs = [[(0, 2), (1, 1)], [(1, 3), (2, 1)], [(0, 1), (2, 2)]]
    c = make_corpus([("", d) for d in docs], V=3)
    rng = np.random.default_rng(0)
    lam = rng.uniform(0.5, 3.0, (2, 3))
    root = CategoryVarParams(3.0, np.array([0.3, 0.7]))
    alpha = 2.5
    lda = MinimalLDA(alpha * root.kappa, lam)
    topics = TopicVarParams(lam)
    for d in c.documents:
        q = DocVarParams(alpha * root.kappa + d.length / 2, np.full((d.term_ids.size, 2), 0.5))
        gamma = q.nu.copy()
        for _ in range(5):
            q = opt_document(d, root, alpha, topics, 1e-300, 1, init=q)
            phi, gamma = lda.step(d.term_ids, d.weights, gamma)
            assert np.max(np.abs(q.rho - phi)) <= 1e-10
            assert np.max(np.abs(q.nu - gamma)) <= 1e-10


# categories --------------------------------------------------------------


def test_kappa_direction_closed_form():
    step = inf.newton_kappa_direction(np.array([1.0, -1.0]), np.array([-2.0, -2.0]))
    np.testing.assert_allclose(step, [0.5, -0.5])
    assert abs(step.sum()) < 1e-15


@pytest.mark.parametrize("seed", range(5))
def test_category_gradient_matches_bound(seed):
    c, p, s = random_instance(seed)
    for t in range(c.n_nodes):
        ctx = inf.category_context(t, c, p, s)
        nu = s.categories[t].nu
        g = inf.category_gradient(nu, ctx)
        for i in range(p.K):
            h = 1e-5 * nu[i]

            def f(x):
                s2 = s.copy()
                v = nu.copy()
                v[i] = x
                s2.categories[t] = CategoryVarParams(1.0, v)
                return compute_elbo(c, p, s2).total

            fd = (f(nu[i] + h) - f(nu[i] - h)) / (2 * h)
            assert abs(g[i] - fd) <= 1e-5 * max(abs(fd), 1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_kappa_curvature_along_tangent_directions(seed):
    c, p, s = random_instance(seed)
    rng = np.random.default_rng(seed)
    for t in range(c.n_nodes):
        ctx = inf.category_context(t, c, p, s)
        cat = s.categories[t]
        h = inf.kappa_hessian_diag(cat.tau, cat.kappa, ctx)
        u = rng.normal(size=p.K)
        u -= u.mean()
        eps = 1e-4 * cat.kappa.min() / np.abs(u).max()
        f = lambda e: inf.category_objective(cat.tau * (cat.kappa + e * u), ctx)
        fd = (f(eps) - 2 * f(0) + f(-eps)) / eps ** 2
        assert float(h @ (u * u)) == pytest.approx(fd, rel=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_tau_derivatives(seed):
    c, p, s = random_instance(seed)
    for t in range(c.n_nodes):
        ctx = inf.category_context(t, c, p, s)
        cat = s.categories[t]
        g, h = inf.tau_derivatives(cat.tau, cat.kappa, ctx)
        f = lambda x: inf.category_objective(x * cat.kappa, ctx)
        e = 1e-4 * cat.tau
        assert g == pytest.approx((f(cat.tau + e) - f(cat.tau - e)) / (2 * e), rel=1e-6, abs=1e-9)
        assert h == pytest.approx((f(cat.tau + e) - 2 * f(cat.tau) + f(cat.tau - e)) / e ** 2,
                                  rel=1e-4, abs=1e-6)


def test_kappa_stays_uniform_under_symmetry():
    c = make_corpus([("a", [(0, 1), (1, 1)]), ("b", [(0, 1), (1, 1)])], V=2)
    p = ModelParams.uniform(2, c.n_nodes, alpha=3.0)
    s = init_state(c, p, 0)
    s.topics = TopicVarParams(np.ones((2, 2)))
    for q in s.documents:
        q.nu = np.array([1.7, 1.7])
    for t in range(c.n_nodes):
        new = inf.update_kappa(t, s, c, p)
        np.testing.assert_allclose(new.kappa, [0.5, 0.5], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_category_updates_keep_invariants_and_improve(seed):
    c, p, s = random_instance(seed)
    for t in range(c.n_nodes):
        before = compute_elbo(c, p, s).total
        s.categories[t] = inf.update_kappa(t, s, c, p)
        mid = compute_elbo(c, p, s).total
        s.categories[t] = inf.update_tau(t, s, c, p)
        after = compute_elbo(c, p, s).total
        assert mid >= before - 1e-8 * abs(before)
        assert after >= mid - 1e-8 * abs(mid)
        cat = s.categories[t]
        assert cat.tau > 0 and np.all(cat.kappa > 0)
        assert abs(cat.kappa.sum() - 1) <= 1e-10


def test_tau_stationary_point_unchanged():
    c, p, s = random_instance(3)
    ctx = inf.category_context(1, c, p, s)
    cat = s.categories[1]
    for _ in range(60):
        cat = inf.tau_step(cat, ctx)
    g, _ = inf.tau_derivatives(cat.tau, cat.kappa, ctx)
    assert abs(g) < 1e-8
    again = inf.tau_step(cat, ctx)
    assert again.tau == pytest.approx(cat.tau, rel=1e-12)


def test_tau_positive_on_random_instances():
    for seed in range(100):
        c, p, s = random_instance(seed, K=2 + seed % 4)
        t = seed % c.n_nodes
        assert inf.update_tau(t, s, c, p).tau > 0


def test_kappa_fallback_on_non_concave_curvature(caplog, monkeypatch):
    c, p, s = random_instance(0)
    monkeypatch.setattr(inf, "kappa_hessian_diag", lambda *a: np.ones(p.K))
    before = compute_elbo(c, p, s).total
    s.categories[1] = inf.update_kappa(1, s, c, p)
    assert "projected gradient" in caplog.text
    assert compute_elbo(c, p, s).total >= before - 1e-8 * abs(before)


# topics ------------------------------------------------------------------


def test_lambda_closed_form():
    c = make_corpus([("", [(0, 3), (1, 1)])], V=2)
    p = ModelParams.uniform(1, 1, eta=2.0)
    s = init_state(c, p, 0)
    np.testing.assert_allclose(update_lambda(c, p, s).lam, [[4.0, 2.0]])


def test_lambda_without_documents():
    c = make_corpus([("", [(0, 1)])], V=3)
    p = ModelParams.uniform(2, 1, eta=1.5)
    s = init_state(c, p, 0)
    lam = update_lambda(c, p, s, order=[]).lam
    np.testing.assert_allclose(lam, 0.5)


def test_lambda_identical_columns():
    c, p, s = random_instance(2)
    for q in s.documents:
        q.rho[:, 1] = q.rho[:, 0]
        q.rho /= q.rho.sum(axis=1, keepdims=True)
    lam = update_lambda(c, p, s).lam
    np.testing.assert_array_equal(lam[0], lam[1])


# monotone sweeps --------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_any_update_sequence_is_monotone(seed):
    c, p, s = random_instance(seed)
    rng = np.random.default_rng(seed)
    prev = compute_elbo(c, p, s).total
    for _ in range(15):
        op = rng.integers(4)
        if op == 0:
            j = int(rng.integers(c.n_docs))
            d = c.documents[j]
            s.documents[j] = opt_document(d, s.categories[d.parent], p.alpha[d.parent],
                                          s.topics, init=s.documents[j])
        elif op == 1:
            t = int(rng.integers(c.n_nodes))
            s.categories[t] = inf.update_kappa(t, s, c, p)
        elif op == 2:
            t = int(rng.integers(c.n_nodes))
            s.categories[t] = inf.update_tau(t, s, c, p)
        else:
            s.topics = update_lambda(c, p, s)
        cur = compute_elbo(c, p, s).total
        assert cur >= prev - 1e-8 * abs(prev)
        s.check(c)
        prev = cur
