"""Variational E-step: the surrogate bound L' and its coordinate-ascent updates.

The intractable averages E[ln Gamma(alpha_p theta_{p,i})] that appear in
every parent-to-child Dirichlet coupling are replaced by the upper bound of
:func:`tilda.special.elog_gamma_upper_bound`, so every quantity below is a
rigorous lower bound on the corpus log-likelihood.

Categories are parameterized as nu_t = tau_t * kappa_t.  All bound
evaluations use nu_t directly (so nu_t0 = sum(nu_t)), which keeps the
objective well defined off the simplex for finite-difference checks.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from tilda import _optim
from tilda._backend import kernels
from tilda.corpus import Document, HierCorpus
from tilda.model import (CategoryVarParams, DocVarParams, ModelParams,
                         TopicVarParams, VariationalState, init_doc_params)

log = logging.getLogger(__name__)

KAPPA_FLOOR = 1e-10
DOC_TOL = 1e-4
DOC_MAX_ITERS = 100
CATEGORY_TOL = 1e-5
CATEGORY_MAX_ROUNDS = 100


class ElboError(FloatingPointError):
    def __init__(self, message, node=None):
        super().__init__(f"{message} (node {node})" if node is not None else message)
        self.node = node


# ---------------------------------------------------------------------------
# Dirichlet building blocks


class DirTerms(NamedTuple):
    nu: np.ndarray
    nu0: float
    m: np.ndarray
    dg: np.ndarray
    dg0: float
    E: np.ndarray  # E[log theta]


def dir_terms(nu: np.ndarray) -> DirTerms:
    nu0 = float(nu.sum())
    dg = kernels.digamma(nu)
    dg0 = float(kernels.digamma(nu0))
    return DirTerms(nu, nu0, nu / nu0, dg, dg0, dg - dg0)


def coupling_const(alpha: float, p: DirTerms) -> float:
    """Part of E[log Dir(theta_c | alpha theta_p)] that does not involve the child.

    The full coupling is this plus ``sum((alpha * p.m - 1) * E_c)``.
    """
    am = alpha * p.m
    K = p.nu.shape[0]
    return (math.lgamma(alpha) - alpha * (K - 1) / p.nu0
            - float(kernels.lgamma(am).sum())
            - float(((1.0 - am) * (np.log(p.m) + p.dg0 - p.dg)).sum()))


def neg_entropy_term(d: DirTerms) -> float:
    """-E_q[log q(theta)] for q = Dirichlet(nu)."""
    return -(math.lgamma(d.nu0) - float(kernels.lgamma(d.nu).sum())
             + float(((d.nu - 1.0) * d.E).sum()))


def doc_prior(parent: CategoryVarParams, alpha_parent: float) -> np.ndarray:
    """Dirichlet prior alpha_p * E[theta_p] inherited by a child."""
    nu = parent.nu
    return alpha_parent * nu / nu.sum()


# ---------------------------------------------------------------------------
# The bound


@dataclass
class ElboBreakdown:
    root_prior: float = 0.0
    category_coupling: float = 0.0
    document_coupling: float = 0.0
    tokens: float = 0.0
    topic_prior: float = 0.0
    entropy: float = 0.0

    @property
    def total(self) -> float:
        return (self.root_prior + self.category_coupling + self.document_coupling
                + self.tokens + self.topic_prior + self.entropy)

    def components(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def root_prior_term(gamma: float, root: DirTerms) -> float:
    K = root.nu.shape[0]
    return (math.lgamma(gamma) - K * math.lgamma(gamma / K)
            + (gamma / K - 1.0) * float(root.E.sum()))


def topic_terms(eta: float, topics: TopicVarParams) -> tuple[float, float]:
    """(prior, negative entropy) contributions of q(beta)."""
    K, V = topics.lam.shape
    elb = topics.elogbeta_t.T
    prior = K * (math.lgamma(eta) - V * math.lgamma(eta / V)) + (eta / V - 1.0) * float(elb.sum())
    lam0 = topics.lam.sum(axis=1)
    ent = -(float(kernels.lgamma(lam0).sum()) - float(kernels.lgamma(topics.lam).sum())
            + float(((topics.lam - 1.0) * elb).sum()))
    return prior, ent


def compute_elbo(corpus: HierCorpus, params: ModelParams, state: VariationalState) -> ElboBreakdown:
    """Evaluate L' term by term."""
    out = ElboBreakdown()
    cats = [dir_terms(c.nu) for c in state.categories]
    consts = [coupling_const(params.alpha[t], cats[t]) for t in range(corpus.n_nodes)]
    out.root_prior = root_prior_term(params.gamma, cats[0])
    for node in corpus.nodes:
        t = node.id
        out.entropy += neg_entropy_term(cats[t])
        if node.parent is not None:
            p = node.parent
            out.category_coupling += consts[p] + float(
                ((params.alpha[p] * cats[p].m - 1.0) * cats[t].E).sum())
        if not math.isfinite(out.total):
            raise ElboError("non-finite bound", t)
    eb = state.topics.elogbeta_t
    for j, doc in enumerate(corpus.documents):
        q = state.documents[j]
        dt = dir_terms(q.nu)
        p = doc.parent
        out.document_coupling += consts[p] + float(
            ((params.alpha[p] * cats[p].m - 1.0) * dt.E).sum())
        w = doc.weights[:, None]
        rho = q.rho
        out.tokens += float((w * rho * (dt.E[None, :] + eb[doc.term_ids])).sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            rlr = np.where(rho > 0, rho * np.log(rho), 0.0)
        out.entropy += neg_entropy_term(dt) - float((w * rlr).sum())
        if not math.isfinite(out.total):
            raise ElboError(f"non-finite bound at document {j}", p)
    prior, ent = topic_terms(params.eta, state.topics)
    out.topic_prior = prior
    out.entropy += ent
    if not math.isfinite(out.total):
        raise ElboError("non-finite bound in topic terms")
    return out


# ---------------------------------------------------------------------------
# Documents


def opt_document(doc: Document, parent: CategoryVarParams, alpha_parent: float,
                 topics: TopicVarParams, tol: float = DOC_TOL, max_iters: int = DOC_MAX_ITERS,
                 init: DocVarParams | None = None) -> DocVarParams:
    """Alternate the rho and nu_d updates for one document.

    Without ``init`` the document starts from rho = 1/K and
    nu_d = prior + N_d/K; with ``init`` it continues from those parameters
    (warm start).  Stops when the document's share of L' improves by less
    than ``tol`` relative, or after ``max_iters`` sweeps.
    """
    prior = doc_prior(parent, alpha_parent)
    q = (init.copy() if init is not None
         else init_doc_params(doc.term_ids.size, doc.length, prior))
    kernels.doc_estep(doc.term_ids, doc.weights, prior, topics.elogbeta_t,
                      q.nu, q.rho, tol, max_iters)
    return q


def doc_objective(doc: Document, prior: np.ndarray, topics: TopicVarParams, q: DocVarParams) -> float:
    """The document's share of L', minus the parent-only coupling constant."""
    return kernels.doc_objective(doc.term_ids, doc.weights, prior, topics.elogbeta_t, q.nu, q.rho)


# ---------------------------------------------------------------------------
# Categories


class CategoryContext(NamedTuple):
    """What a category update needs from its neighbours (held fixed)."""

    prior: np.ndarray   # gamma/K at the root, alpha_p * E[theta_p] elsewhere
    alpha: float        # the category's own concentration alpha_t
    n_children: int     # |C_t|
    S: np.ndarray       # sum over children of E[log theta_c]


def category_context(t: int, corpus: HierCorpus, params: ModelParams,
                     state: VariationalState) -> CategoryContext:
    node = corpus.nodes[t]
    K = params.K
    if node.parent is None:
        prior = np.full(K, params.gamma / K)
    else:
        prior = doc_prior(state.categories[node.parent], params.alpha[node.parent])
    S = np.zeros(K)
    for c in node.subcategories:
        S += dir_terms(state.categories[c].nu).E
    for d in node.documents:
        S += dir_terms(state.documents[d].nu).E
    return CategoryContext(prior, float(params.alpha[t]), node.n_children, S)


def category_objective(nu: np.ndarray, ctx: CategoryContext) -> float:
    """Terms of L' that involve nu_t."""
    d = dir_terms(nu)
    val = float(((ctx.prior - 1.0) * d.E).sum()) + neg_entropy_term(d)
    if ctx.n_children:
        val += ctx.n_children * coupling_const(ctx.alpha, d)
        val += float(((ctx.alpha * d.m - 1.0) * ctx.S).sum())
    return val


def category_gradient(nu: np.ndarray, ctx: CategoryContext) -> np.ndarray:
    """d L' / d nu_t (unconstrained)."""
    K = nu.shape[0]
    d = dir_terms(nu)
    tg = kernels.trigamma(nu)
    tg0 = float(kernels.trigamma(d.nu0))
    a = ctx.prior
    g = (a - 1.0) * tg - tg0 * float((a - 1.0).sum())
    g += -(nu - 1.0) * tg + tg0 * (d.nu0 - K)
    if ctx.n_children:
        al, m = ctx.alpha, d.m

        def proj(u):
            return (u - float(m @ u)) / d.nu0

        L = np.log(m) + d.dg0 - d.dg
        g += ctx.n_children * (al * (K - 1) / d.nu0 ** 2 + (1.0 - al * m) * (tg - 1.0 / nu)
                               + (K - al) * (1.0 / d.nu0 - tg0)
                               + al * proj(L - kernels.digamma(al * m)))
        g += al * proj(ctx.S)
    return g


def kappa_hessian_diag(tau: float, kappa: np.ndarray, ctx: CategoryContext) -> np.ndarray:
    """Diagonal curvature of L' in kappa_t with nu_t0 tied to tau_t.

    On the simplex this form coincides with the unconstrained bound, so the
    equality-constrained Newton step built from it is exact.
    """
    x = tau * kappa
    n, al = ctx.n_children, ctx.alpha
    B = ctx.prior - x + n * (1.0 - al * kappa)
    tg = kernels.trigamma(x)
    h = tau * tau * (kernels.tetragamma(x) * B - tg)
    if n:
        h += (-2.0 * n * al * tau * tg - n * al * al * kernels.trigamma(al * kappa)
              + n * al / kappa + n / (kappa * kappa))
    return h


def tau_derivatives(tau: float, kappa: np.ndarray, ctx: CategoryContext) -> tuple[float, float]:
    """First and second derivative of L' in tau_t (kappa_t on the simplex)."""
    K = kappa.shape[0]
    g = float(kappa @ category_gradient(tau * kappa, ctx))
    x = tau * kappa
    n, al = ctx.n_children, ctx.alpha
    B = ctx.prior + n * (1.0 - al * kappa) - x
    h = (float(((kappa * kappa * kernels.tetragamma(x) - float(kernels.tetragamma(tau))) * B).sum())
         - float((kappa * kappa * kernels.trigamma(x)).sum()) + float(kernels.trigamma(tau))
         - 2.0 * n * al * (K - 1) / tau ** 3)
    return g, h


def newton_kappa_direction(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Solve the KKT system [diag(h) 1; 1^T 0][dk; u] = [-g; 0]."""
    inv = 1.0 / h
    return (float((g * inv).sum()) / float(inv.sum())) * inv - g * inv


def kappa_step(cat: CategoryVarParams, ctx: CategoryContext, node=None) -> CategoryVarParams:
    """One constrained Newton step on kappa_t with backtracking."""
    K = cat.kappa.shape[0]
    if K == 1:
        return cat
    tau, kappa = cat.tau, cat.kappa
    g = tau * category_gradient(tau * kappa, ctx)
    h = kappa_hessian_diag(tau, kappa, ctx)
    if np.all(h < 0):
        step = newton_kappa_direction(g, h)
    else:
        log.warning("kappa curvature not negative at node %s; using projected gradient", node)
        step = g - g.mean()
    slope = float(g @ step)
    neg = step < 0
    smax = float(np.min((kappa[neg] - KAPPA_FLOOR) / -step[neg])) if neg.any() else np.inf
    f0 = category_objective(tau * kappa, ctx)
    res = _optim.backtrack(lambda k: category_objective(tau * k, ctx), f0, slope,
                           min(1.0, smax), lambda s: np.maximum(kappa + s * step, KAPPA_FLOOR))
    if res is None:
        return cat
    k_new = res[0]
    return CategoryVarParams(tau, k_new / k_new.sum())


def tau_step(cat: CategoryVarParams, ctx: CategoryContext, node=None) -> CategoryVarParams:
    """One Newton step on tau_t with backtracking; tau stays positive."""
    tau, kappa = cat.tau, cat.kappa
    g, h = tau_derivatives(tau, kappa, ctx)
    if not math.isfinite(g) or g == 0.0:
        return cat
    if math.isfinite(h) and h < 0:
        d = -g / h
    else:
        log.warning("tau curvature not negative at node %s; using gradient step", node)
        d = g * tau
    step0 = 1.0 if tau + d > 0 else 0.5 * tau / -d
    f0 = category_objective(tau * kappa, ctx)
    res = _optim.backtrack(lambda x: category_objective(x * kappa, ctx), f0, g * d,
                           step0, lambda s: tau + s * d)
    if res is None:
        return cat
    return CategoryVarParams(float(res[0]), kappa)


def optimize_category(cat: CategoryVarParams, ctx: CategoryContext, node=None,
                      tol: float = CATEGORY_TOL, max_rounds: int = CATEGORY_MAX_ROUNDS) -> CategoryVarParams:
    """Alternate kappa and tau steps until the joint improvement is small."""
    if ctx.prior.shape[0] == 1:
        return cat
    f = category_objective(cat.nu, ctx)
    for _ in range(max_rounds):
        cat = tau_step(kappa_step(cat, ctx, node), ctx, node)
        f_new = category_objective(cat.nu, ctx)
        if f_new - f < tol * abs(f_new):
            break
        f = f_new
    return cat


def update_kappa(t: int, state: VariationalState, corpus: HierCorpus,
                 params: ModelParams) -> CategoryVarParams:
    ctx = category_context(t, corpus, params, state)
    return kappa_step(state.categories[t], ctx, t)


def update_tau(t: int, state: VariationalState, corpus: HierCorpus,
               params: ModelParams) -> CategoryVarParams:
    ctx = category_context(t, corpus, params, state)
    return tau_step(state.categories[t], ctx, t)


# ---------------------------------------------------------------------------
# Topics


def topic_statistics(corpus: HierCorpus, state: VariationalState, order=None) -> np.ndarray:
    """sum_d sum_n rho_dnk [w_dn = v] as a V x K array, in a fixed document order."""
    stats = np.zeros((corpus.V, state.topics.K))
    for j in (range(corpus.n_docs) if order is None else order):
        doc = corpus.documents[j]
        stats[doc.term_ids] += doc.weights[:, None] * state.documents[j].rho
    return stats


def update_lambda(corpus: HierCorpus, params: ModelParams, state: VariationalState,
                  order=None) -> TopicVarParams:
    """Closed-form lambda_kv = eta/V + expected count of term v under topic k."""
    stats = topic_statistics(corpus, state, order)
    return TopicVarParams(params.eta / corpus.V + stats.T)
