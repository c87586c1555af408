"""Training drivers: the recursive subtree optimizer and its task-queue form.

Both drivers are built from the same three node-level steps, so they perform
identical arithmetic on identical data:

* ``enter(t)`` refreshes the cached subtree values below ``t`` and records
  the subtree's current contribution to L'.
* ``document(d)`` runs coordinate ascent on one document (warm started).
* ``repeat(t)`` updates the node's own parameters from its children's
  cached statistics and decides whether the subtree needs another pass.

The cached quantity for every child c of a category t is split as

    F_c = const(t) + sum((alpha_t * E[theta_t] - 1) * E[log theta_c]) + inner(c)

so updating t only needs E[log theta_c] and inner(c), which do not depend on t.
"""
from __future__ import annotations

import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from tilda._backend import kernels
from tilda.corpus import HierCorpus
from tilda.estimation import optimize_alpha, update_eta, update_gamma
from tilda.inference import (CategoryContext, ElboError, coupling_const, dir_terms,
                             doc_prior, neg_entropy_term, optimize_category,
                             root_prior_term, topic_terms, update_lambda)
from tilda.model import ModelParams, VariationalState, init_state

log = logging.getLogger(__name__)

START, DOCUMENT, REPEAT = "start", "document", "repeat"


class Task(NamedTuple):
    kind: str
    id: int

    def __str__(self):
        return f"{self.kind}({self.id})"


def Start(t: int) -> Task:
    return Task(START, t)


def Document(d: int) -> Task:
    return Task(DOCUMENT, d)


def Repeat(t: int) -> Task:
    return Task(REPEAT, t)


@dataclass
class TrainConfig:
    K: int
    max_outer_sweeps: int = 100
    elbo_rel_tol: float = 1e-5
    threads: int = 1
    seed: int = 0
    learn_alpha: bool = False
    learn_gamma: bool = False
    learn_eta: bool = False
    deterministic: bool = True
    gamma: float = 1.0
    eta: float = 1.0
    alpha0: float = 1.0
    max_inner_sweeps: int = 20
    doc_tol: float = 1e-4
    doc_max_iters: int = 100
    check_invariants: bool = False
    progress: Callable[[int, float, float], None] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not (self.elbo_rel_tol > 0 and self.doc_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer_sweeps < 1 or self.max_inner_sweeps < 1 or self.doc_max_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        if not (self.gamma > 0 and self.eta > 0 and self.alpha0 > 0):
            raise ValueError("gamma, eta and alpha0 must be positive")


class TrainResult(NamedTuple):
    params: ModelParams
    state: VariationalState
    trace: list


class TrainingError(RuntimeError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class _Trainer:
    def __init__(self, corpus: HierCorpus, config: TrainConfig, events: list | None):
        self.corpus = corpus
        self.cfg = config
        self.params = ModelParams.uniform(config.K, corpus.n_nodes, config.gamma,
                                          config.eta, config.alpha0)
        self.state = init_state(corpus, self.params, config.seed)
        n_items = corpus.n_nodes + corpus.n_docs
        # E[log theta] and inner value per child, categories first then documents
        self.E = [None] * n_items
        self.inner = [0.0] * n_items
        self.prev = [0.0] * corpus.n_nodes
        self.rounds = [0] * corpus.n_nodes
        self.trace: list[float] = []
        self.events = events
        self.doc_order: dict[int, None] = {}
        self.t0 = time.perf_counter()

    # -- helpers

    def _key(self, kind, i):
        return i if kind == START else self.corpus.n_nodes + i

    def _children(self, t):
        node = self.corpus.nodes[t]
        return ([(START, c) for c in node.subcategories]
                + [(DOCUMENT, d) for d in node.documents])

    def _prior(self, t):
        return doc_prior(self.state.categories[t], self.params.alpha[t])

    def _coupling(self, t, terms):
        p = self.corpus.nodes[t].parent
        if p is None:
            return root_prior_term(self.params.gamma, terms)
        pt = dir_terms(self.state.categories[p].nu)
        return coupling_const(self.params.alpha[p], pt) + float(
            ((self.params.alpha[p] * pt.m - 1.0) * terms.E).sum())

    def _children_value(self, t, terms):
        """sum over children of F_c, from the caches."""
        keys = [self._key(k, i) for k, i in self._children(t)]
        if not keys:
            return 0.0
        const = coupling_const(self.params.alpha[t], terms)
        a1 = self.params.alpha[t] * terms.m - 1.0
        return sum(const + float(a1 @ self.E[j]) + self.inner[j] for j in keys)

    def _value(self, t):
        """F_t (plus topic terms at the root) from the caches of t's children."""
        terms = dir_terms(self.state.categories[t].nu)
        inner = neg_entropy_term(terms) + self._children_value(t, terms)
        val = self._coupling(t, terms) + inner
        if t == 0:
            val += sum(topic_terms(self.params.eta, self.state.topics))
        if not math.isfinite(val):
            raise ElboError("non-finite bound", t)
        return val, terms, inner

    def _refresh_doc(self, d, obj=None):
        doc = self.corpus.documents[d]
        q = self.state.documents[d]
        prior = self._prior(doc.parent)
        if obj is None:
            obj = kernels.doc_objective(doc.term_ids, doc.weights, prior,
                                        self.state.topics.elogbeta_t, q.nu, q.rho)
        E = dir_terms(q.nu).E
        j = self._key(DOCUMENT, d)
        self.E[j] = E
        self.inner[j] = obj - float((prior - 1.0) @ E)

    def _refresh_subtree(self, t):
        corpus = self.corpus
        for s in corpus.postorder(t):
            for d in corpus.nodes[s].documents:
                self._refresh_doc(d)
            if s != t:
                _, terms, inner = self._value(s)
                self.E[s] = terms.E
                self.inner[s] = inner

    def _log(self, kind, task):
        if self.events is not None:
            self.events.append((kind, task))

    # -- the three steps

    def enter(self, t):
        self._refresh_subtree(t)
        self.prev[t] = self._value(t)[0]
        self.rounds[t] = 0
        if t == 0 and not self.trace:
            self._record(self.prev[0])

    def document(self, d):
        doc = self.corpus.documents[d]
        q = self.state.documents[d]
        prior = self._prior(doc.parent)
        try:
            _, obj = kernels.doc_estep(doc.term_ids, doc.weights, prior,
                                       self.state.topics.elogbeta_t, q.nu, q.rho,
                                       self.cfg.doc_tol, self.cfg.doc_max_iters)
        except FloatingPointError as exc:
            raise TrainingError(f"document {d} under node {doc.parent}: {exc}", doc.parent) from exc
        self._refresh_doc(d, obj)

    def repeat(self, t) -> bool:
        """Update node t; return True when the subtree needs another pass."""
        cfg, params, state = self.cfg, self.params, self.state
        node = self.corpus.nodes[t]
        keys = [self._key(k, i) for k, i in self._children(t)]
        S = np.zeros(cfg.K)
        for j in keys:
            S += self.E[j]
        prior = (np.full(cfg.K, params.gamma / cfg.K) if node.parent is None
                 else self._prior(node.parent))
        ctx = CategoryContext(prior, float(params.alpha[t]), len(keys), S)
        state.categories[t] = optimize_category(state.categories[t], ctx, t)
        if cfg.learn_alpha and keys and cfg.K > 1:
            params.alpha[t] = optimize_alpha(params.alpha[t], dir_terms(state.categories[t].nu),
                                             len(keys), S, t)
        if t == 0:
            order = None if cfg.deterministic else list(self.doc_order)
            state.topics = update_lambda(self.corpus, params, state, order)
            if cfg.learn_eta:
                params.eta = update_eta(state, params)
            if cfg.learn_gamma:
                params.gamma = update_gamma(state, params)
            self._refresh_subtree(0)
        new, terms, inner = self._value(t)
        self.rounds[t] += 1
        if t == 0:
            self._record(new)
            if cfg.check_invariants:
                state.check(self.corpus)
        limit = cfg.max_outer_sweeps if t == 0 else cfg.max_inner_sweeps
        again = new - self.prev[t] >= cfg.elbo_rel_tol * abs(new) and self.rounds[t] < limit
        self.prev[t] = new
        if not again and t != 0:
            self.E[t] = terms.E
            self.inner[t] = inner
        return again

    def _record(self, value):
        value = float(value)
        self.trace.append(value)
        if self.cfg.progress is not None:
            self.cfg.progress(len(self.trace) - 1, value, time.perf_counter() - self.t0)

    def result(self) -> TrainResult:
        return TrainResult(self.params, self.state, self.trace)

    # -- drivers

    def run_sequential(self):
        self._subtree(0)

    def _subtree(self, t):
        self._log("start", Start(t))
        self.enter(t)
        self._log("end", Start(t))
        while True:
            for kind, i in self._children(t):
                if kind == START:
                    self._subtree(i)
                else:
                    self._log("start", Document(i))
                    self.document(i)
                    self._log("end", Document(i))
            self._log("start", Repeat(t))
            again = self.repeat(t)
            self._log("end", Repeat(t))
            if not again:
                self._log("complete", Start(t))
                return

    def run_parallel(self):
        cfg = self.cfg
        tasks = queue.Queue() if cfg.deterministic else queue.LifoQueue()
        lock = threading.Lock()
        pending = [0] * self.corpus.n_nodes
        finished = threading.Event()
        errors: list[BaseException] = []

        def schedule(task):
            self._log("schedule", task)
            tasks.put(task)

        def schedule_children(t):
            kids = self._children(t)
            pending[t] = len(kids)
            if not kids:
                schedule(Repeat(t))
            for kind, i in kids:
                schedule(Task(kind, i))

        def child_done(t):
            pending[t] -= 1
            if pending[t] == 0:
                schedule(Repeat(t))

        def run(task):
            if task.kind == START:
                self.enter(task.id)
                with lock:
                    self._log("end", task)
                    schedule_children(task.id)
            elif task.kind == DOCUMENT:
                self.document(task.id)
                with lock:
                    self._log("end", task)
                    if not cfg.deterministic:
                        self.doc_order.pop(task.id, None)
                        self.doc_order[task.id] = None
                    child_done(self.corpus.documents[task.id].parent)
            else:
                t = task.id
                again = self.repeat(t)
                with lock:
                    self._log("end", task)
                    if again:
                        schedule_children(t)
                    else:
                        self._log("complete", Start(t))
                        parent = self.corpus.nodes[t].parent
                        if parent is None:
                            finished.set()
                        else:
                            child_done(parent)

        def worker():
            while not finished.is_set():
                try:
                    task = tasks.get(timeout=0.05)
                except queue.Empty:
                    continue
                if finished.is_set():
                    break
                try:
                    with lock:
                        self._log("start", task)
                    run(task)
                except BaseException as exc:  # surface the first failure
                    with lock:
                        errors.append(exc)
                    finished.set()

        with lock:
            schedule(Start(0))
        pool = [threading.Thread(target=worker, name=f"tilda-worker-{i}", daemon=True)
                for i in range(cfg.threads)]
        for th in pool:
            th.start()
        for th in pool:
            th.join()
        if errors:
            raise errors[0]


def _check_corpus(corpus: HierCorpus):
    if corpus.n_docs == 0:
        raise ValueError("cannot train on a corpus without documents")


def train_sequential(corpus: HierCorpus, config: TrainConfig, events: list | None = None) -> TrainResult:
    """Recursive subtree optimization; returns final params, state and the L' trace.

    The trace holds L' at initialization followed by one value per root sweep.
    """
    _check_corpus(corpus)
    tr = _Trainer(corpus, config, events)
    tr.run_sequential()
    return tr.result()


def train_parallel(corpus: HierCorpus, config: TrainConfig, events: list | None = None) -> TrainResult:
    """Same optimization driven by a pool of ``config.threads`` workers.

    A category's REPEAT task is queued only after all its children report
    completion.  In deterministic mode the result matches
    :func:`train_sequential` exactly.
    """
    _check_corpus(corpus)
    tr = _Trainer(corpus, config, events)
    tr.run_parallel()
    return tr.result()


def train(corpus: HierCorpus, config: TrainConfig, events: list | None = None) -> TrainResult:
    if config.threads == 1:
        return train_sequential(corpus, config, events)
    return train_parallel(corpus, config, events)
