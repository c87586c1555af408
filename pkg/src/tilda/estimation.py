"""Variational M-step: Newton updates of alpha_t, gamma and eta on L'."""
from __future__ import annotations

import logging
import math

import numpy as np

from tilda import _optim
from tilda._backend import kernels
from tilda.corpus import HierCorpus
from tilda.inference import (DirTerms, category_context, coupling_const,
                             dir_terms, root_prior_term)
from tilda.model import ModelParams, TopicVarParams, VariationalState

log = logging.getLogger(__name__)

HYPER_MIN = 1e-6
HYPER_MAX = 1e8
NEWTON_TOL = 1e-6
NEWTON_MAX_ITER = 50


def _newton(f, gh, x0, what):
    x, _, fallback = _optim.newton_1d(f, gh, x0, HYPER_MIN, HYPER_MAX,
                                      NEWTON_TOL, NEWTON_MAX_ITER)
    if fallback:
        log.warning("non-concave curvature while updating %s; took gradient steps", what)
    return x


# alpha_t


def alpha_objective(alpha: float, cat: DirTerms, n_children: int, S: np.ndarray) -> float:
    """Terms of L' that involve alpha_t."""
    return n_children * coupling_const(alpha, cat) + float(((alpha * cat.m - 1.0) * S).sum())


def alpha_derivatives(alpha: float, cat: DirTerms, n_children: int, S: np.ndarray) -> tuple[float, float]:
    m = cat.m
    K = m.shape[0]
    L = np.log(m) + cat.dg0 - cat.dg
    am = alpha * m
    g = (n_children * (float(kernels.digamma(alpha)) - (K - 1) / cat.nu0
                       - float(m @ kernels.digamma(am)) + float(m @ L))
         + float(m @ S))
    h = n_children * (float(kernels.trigamma(alpha)) - float((m * m) @ kernels.trigamma(am)))
    return g, h


def optimize_alpha(alpha: float, cat: DirTerms, n_children: int, S: np.ndarray, node=None) -> float:
    if n_children == 0 or cat.m.shape[0] == 1:
        return alpha
    return _newton(lambda a: alpha_objective(a, cat, n_children, S),
                   lambda a: alpha_derivatives(a, cat, n_children, S),
                   alpha, f"alpha at node {node}")


def update_alpha(t: int, state: VariationalState, corpus: HierCorpus, params: ModelParams) -> float:
    """Maximize L' over the concentration alpha_t of category t."""
    ctx = category_context(t, corpus, params, state)
    cat = dir_terms(state.categories[t].nu)
    return optimize_alpha(float(params.alpha[t]), cat, ctx.n_children, ctx.S, t)


# gamma


def gamma_derivatives(gamma: float, root: DirTerms) -> tuple[float, float]:
    K = root.nu.shape[0]
    g = float(kernels.digamma(gamma)) - float(kernels.digamma(gamma / K)) + float(root.E.sum()) / K
    h = float(kernels.trigamma(gamma)) - float(kernels.trigamma(gamma / K)) / K
    return g, h


def update_gamma(state: VariationalState, params: ModelParams) -> float:
    """Maximize L' over the root scale gamma."""
    if params.K == 1:
        return params.gamma
    root = dir_terms(state.categories[0].nu)
    return _newton(lambda x: root_prior_term(x, root),
                   lambda x: gamma_derivatives(x, root), params.gamma, "gamma")


# eta


def eta_objective(eta: float, K: int, V: int, elog_sum: float) -> float:
    return K * (math.lgamma(eta) - V * math.lgamma(eta / V)) + (eta / V - 1.0) * elog_sum


def eta_derivatives(eta: float, K: int, V: int, elog_sum: float) -> tuple[float, float]:
    g = (K * (float(kernels.digamma(eta)) - float(kernels.digamma(eta / V)))
         + elog_sum / V)
    h = K * (float(kernels.trigamma(eta)) - float(kernels.trigamma(eta / V)) / V)
    return g, h


def update_eta(state: VariationalState, params: ModelParams) -> float:
    """Maximize L' over the topic smoothing eta with lambda held fixed."""
    topics: TopicVarParams = state.topics
    K, V = topics.K, topics.V
    if V == 1:
        return params.eta
    s = float(topics.elogbeta_t.sum())
    return _newton(lambda x: eta_objective(x, K, V, s),
                   lambda x: eta_derivatives(x, K, V, s), params.eta, "eta")
