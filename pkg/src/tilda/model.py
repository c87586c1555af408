"""Model hyperparameters, variational parameters, initialization and persistence."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from tilda._backend import kernels
from tilda.corpus import HierCorpus

FORMAT_TAG = "TILDA1"


@dataclass
class ModelParams:
    """K topics, root scale gamma, topic smoothing eta, per-category alpha."""

    K: int
    gamma: float
    eta: float
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=np.float64).reshape(-1)
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not (self.gamma > 0 and self.eta > 0):
            raise ValueError("gamma and eta must be positive")
        if not np.all(self.alpha > 0):
            raise ValueError("every alpha_t must be positive")

    @classmethod
    def uniform(cls, K: int, n_nodes: int, gamma=1.0, eta=1.0, alpha=1.0) -> "ModelParams":
        return cls(K, float(gamma), float(eta), np.full(n_nodes, float(alpha)))

    def copy(self) -> "ModelParams":
        return ModelParams(self.K, self.gamma, self.eta, self.alpha.copy())


@dataclass
class CategoryVarParams:
    """q(theta_t) = Dirichlet(tau * kappa) with kappa on the simplex."""

    tau: float
    kappa: np.ndarray

    @property
    def nu(self) -> np.ndarray:
        return self.tau * self.kappa

    @property
    def mean(self) -> np.ndarray:
        return self.kappa / self.kappa.sum()


@dataclass
class DocVarParams:
    """q(theta_d) = Dirichlet(nu); one responsibility row per distinct term."""

    nu: np.ndarray
    rho: np.ndarray

    def copy(self) -> "DocVarParams":
        return DocVarParams(self.nu.copy(), self.rho.copy())


@dataclass
class TopicVarParams:
    """q(beta_k) = Dirichlet(lambda_k).  ``elogbeta_t`` is E[log beta] as V x K."""

    lam: np.ndarray
    elogbeta_t: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lam = np.ascontiguousarray(self.lam, dtype=np.float64)
        dg = kernels.digamma(self.lam)
        dg0 = kernels.digamma(self.lam.sum(axis=1))
        self.elogbeta_t = np.ascontiguousarray((dg - dg0[:, None]).T)

    @property
    def K(self) -> int:
        return self.lam.shape[0]

    @property
    def V(self) -> int:
        return self.lam.shape[1]

    def topic_word(self) -> np.ndarray:
        """E_q[beta], rows normalized."""
        return self.lam / self.lam.sum(axis=1, keepdims=True)


@dataclass
class VariationalState:
    categories: list[CategoryVarParams]
    documents: list[DocVarParams]
    topics: TopicVarParams

    def copy(self) -> "VariationalState":
        return copy.deepcopy(self)

    def check(self, corpus: HierCorpus | None = None, atol=1e-10) -> None:
        """Raise AssertionError if any type invariant is violated."""
        for t, c in enumerate(self.categories):
            assert c.tau > 0, f"tau <= 0 at node {t}"
            assert np.all(c.kappa > 0), f"kappa not positive at node {t}"
            assert abs(c.kappa.sum() - 1.0) <= atol, f"kappa not normalized at node {t}"
        for d, p in enumerate(self.documents):
            assert np.all(p.nu > 0), f"nu not positive at document {d}"
            assert np.allclose(p.rho.sum(axis=1), 1.0, rtol=0, atol=atol), \
                f"rho rows not normalized at document {d}"
        assert np.all(self.topics.lam > 0)
        if corpus is not None:
            assert len(self.categories) == corpus.n_nodes
            assert len(self.documents) == corpus.n_docs


def init_doc_params(n_terms: int, N: float, prior: np.ndarray) -> DocVarParams:
    K = prior.shape[0]
    return DocVarParams(prior + N / K, np.full((n_terms, K), 1.0 / K))


def init_state(corpus: HierCorpus, params: ModelParams, seed: int) -> VariationalState:
    """Uniform base measures, tau = K, seeded perturbation of lambda."""
    K, V = params.K, corpus.V
    if corpus.n_docs == 0:
        raise ValueError("cannot initialize on an empty corpus")
    rng = np.random.default_rng(seed)
    lam = params.eta / V + rng.uniform(0.0, 1.0 / V, size=(K, V))
    cats = [CategoryVarParams(float(K), np.full(K, 1.0 / K)) for _ in corpus.nodes]
    docs = []
    for d in corpus.documents:
        prior = params.alpha[d.parent] * cats[d.parent].mean
        docs.append(init_doc_params(d.term_ids.size, d.length, prior))
    return VariationalState(cats, docs, TopicVarParams(lam))


class ModelFormatError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class TrainedModel:
    """Everything needed to score new documents: tree, alphas, q(theta_t), lambda."""

    params: ModelParams
    parents: list[int]
    categories: list[CategoryVarParams]
    topics: TopicVarParams
    n_docs: int = 0

    @classmethod
    def from_state(cls, corpus: HierCorpus, params: ModelParams,
                   state: VariationalState) -> "TrainedModel":
        parents = [-1 if n.parent is None else n.parent for n in corpus.nodes]
        return cls(params, parents, state.categories, state.topics, corpus.n_docs)

    @property
    def state(self) -> VariationalState:
        return VariationalState(self.categories, [], self.topics)


def _fmt(x) -> str:
    return repr(float(x))


def save_model(path, model: TrainedModel) -> None:
    p = model.params
    K, V = p.K, model.topics.V
    lines = [f"{FORMAT_TAG} {K} {V} {len(model.categories)} {model.n_docs}"]
    for t, c in enumerate(model.categories):
        fields = [str(t), str(model.parents[t]), _fmt(p.alpha[t]), _fmt(c.tau)]
        fields += [_fmt(x) for x in c.kappa]
        lines.append(" ".join(fields))
    for k in range(K):
        lines.append(" ".join(_fmt(x) for x in model.topics.lam[k]))
    lines.append(f"{_fmt(p.gamma)} {_fmt(p.eta)}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _floats(tokens, n, lineno):
    if len(tokens) != n:
        raise ModelFormatError(f"expected {n} fields, found {len(tokens)}", lineno)
    try:
        return [float(x) for x in tokens]
    except ValueError:
        raise ModelFormatError("bad number", lineno) from None


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ModelFormatError("empty model file", 1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != FORMAT_TAG:
        raise ModelFormatError(f"expected header '{FORMAT_TAG} K V nodeCount docCount'", 1)
    try:
        K, V, n_nodes, n_docs = (int(x) for x in head[1:])
    except ValueError:
        raise ModelFormatError("bad header integers", 1) from None
    if len(lines) != 1 + n_nodes + K + 1:
        raise ModelFormatError(
            f"expected {2 + n_nodes + K} lines, found {len(lines)}", len(lines))
    parents, alpha, cats = [], [], []
    for t in range(n_nodes):
        lineno = 2 + t
        tok = lines[1 + t].split()
        if len(tok) != 4 + K:
            raise ModelFormatError(f"expected {4 + K} fields, found {len(tok)}", lineno)
        try:
            node, parent = int(tok[0]), int(tok[1])
        except ValueError:
            raise ModelFormatError("bad node id", lineno) from None
        if node != t:
            raise ModelFormatError(f"expected node id {t}, found {node}", lineno)
        if (t == 0 and parent != -1) or (t > 0 and not 0 <= parent < n_nodes) or parent == t:
            raise ModelFormatError(f"bad parent id {parent}", lineno)
        vals = _floats(tok[2:], 2 + K, lineno)
        if vals[0] <= 0 or vals[1] <= 0 or min(vals[2:]) <= 0:
            raise ModelFormatError("parameters must be positive", lineno)
        parents.append(parent)
        alpha.append(vals[0])
        cats.append(CategoryVarParams(vals[1], np.array(vals[2:])))
    lam = np.empty((K, V))
    for k in range(K):
        lineno = 2 + n_nodes + k
        lam[k] = _floats(lines[1 + n_nodes + k].split(), V, lineno)
        if lam[k].min() <= 0:
            raise ModelFormatError("lambda must be positive", lineno)
    lineno = 2 + n_nodes + K
    gamma, eta = _floats(lines[-1].split(), 2, lineno)
    params = ModelParams(K, gamma, eta, np.array(alpha))
    return TrainedModel(params, parents, cats, TopicVarParams(lam), n_docs)
