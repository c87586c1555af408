"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--docs 300] [--k 20] [--repeat 3]

Times document coordinate ascent and the special functions on identical
random inputs and checks that both backends agree.
"""
import argparse
import time

import numpy as np

from tilda import _pykernels

try:
    from tilda import _kernels
except ImportError:
    _kernels = None


def make_docs(rng, n_docs, V, length):
    docs = []
    for _ in range(n_docs):
        words = rng.integers(0, V, size=length)
        ids, counts = np.unique(words, return_counts=True)
        docs.append((ids.astype(np.int64), counts.astype(np.float64)))
    return docs


def run_estep(mod, docs, prior, elogbeta_t, K):
    total = 0.0
    for ids, counts in docs:
        nu = prior + counts.sum() / K
        rho = np.full((ids.size, K), 1.0 / K)
        _, obj = mod.doc_estep(ids, counts, prior, elogbeta_t, nu, rho, 1e-4, 100)
        total += obj
    return total


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--docs", type=int, default=300)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--vocab", type=int, default=2000)
    ap.add_argument("--length", type=int, default=150)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; nothing to compare")
        return
    rng = np.random.default_rng(0)
    K = args.k
    lam = 0.05 + rng.gamma(1.0, 1.0, size=(K, args.vocab))
    elogbeta_t = np.ascontiguousarray((_pykernels.digamma(lam)
                                       - _pykernels.digamma(lam.sum(1))[:, None]).T)
    prior = rng.uniform(0.1, 1.0, size=K)
    docs = make_docs(rng, args.docs, args.vocab, args.length)
    x = rng.uniform(1e-3, 1e3, size=200_000)

    print("kernel\tpython_s\tcython_s\tspeedup\tmax_abs_diff")
    for name, fn in [
        ("doc_estep", lambda m: run_estep(m, docs, prior, elogbeta_t, K)),
        ("digamma", lambda m: m.digamma(x)),
        ("trigamma", lambda m: m.trigamma(x)),
        ("lgamma", lambda m: m.lgamma(x)),
    ]:
        tp, rp = best_of(lambda: fn(_pykernels), args.repeat)
        tc, rc = best_of(lambda: fn(_kernels), args.repeat)
        diff = float(np.max(np.abs(np.asarray(rp) - np.asarray(rc))))
        print(f"{name}\t{tp:.4f}\t{tc:.4f}\t{tp / tc:.1f}x\t{diff:.3g}")


if __name__ == "__main__":
    main()
