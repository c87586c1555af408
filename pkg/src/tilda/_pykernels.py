"""Pure numpy implementations of the numerical kernels.

This module mirrors ``tilda._kernels`` (the compiled extension) function by
function.  It is used when the extension is not built or when
``TILDA_BACKEND=python`` is set in the environment.
"""
import math

import numpy as np

_SPLIT = 134217729.0  # 2**27 + 1, Veltkamp splitting constant
_SHIFT = 6.0



def _lgamma_scalar(x: float) -> float:
    # C semantics: poles give inf and NaN propagates, instead of raising
    try:
        return math.lgamma(x)
    except ValueError:
        return math.nan if math.isnan(x) else math.inf


_lgamma_ufunc = np.frompyfunc(_lgamma_scalar, 1, 1)


def _two_prod_err(a, b):
    # error term of the floating point product a*b (Dekker)
    p = a * b
    c = _SPLIT * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLIT * b
    bh = c - (c - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _digamma_asym(y):
    r = 1.0 / (y * y)
    series = r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (
        1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r / 12.0))))))
    return np.log(y) - 0.5 / y - series


def digamma(x):
    x = np.asarray(x, dtype=np.float64)
    y = x.copy()
    acc = np.zeros_like(y)
    inv = np.zeros_like(y)
    err = np.zeros_like(y)
    # compensated leading reciprocal keeps the result within half an ulp
    # when 1/x dominates
    tiny = (y < 1.0) & (y > 1e-290)
    if np.any(tiny):
        xt = y[tiny]
        it = 1.0 / xt
        p, e = _two_prod_err(it, xt)
        inv[tiny] = it
        err[tiny] = ((1.0 - p) - e) / xt
        y[tiny] += 1.0
    for _ in range(int(_SHIFT) + 1):
        m = y < _SHIFT
        if not np.any(m):
            break
        acc[m] -= 1.0 / y[m]
        y[m] += 1.0
    return ((_digamma_asym(y) + acc) - err) - inv


def trigamma(x):
    y = np.array(x, dtype=np.float64, copy=True)
    acc = np.zeros_like(y)
    for _ in range(int(_SHIFT) + 1):
        m = y < _SHIFT
        if not np.any(m):
            break
        acc[m] += 1.0 / (y[m] * y[m])
        y[m] += 1.0
    r = 1.0 / (y * y)
    series = r * (1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (
        1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * 7.0 / 6))))))
    return acc + (1.0 + 0.5 / y + series) / y


def tetragamma(x):
    y = np.array(x, dtype=np.float64, copy=True)
    acc = np.zeros_like(y)
    for _ in range(int(_SHIFT) + 1):
        m = y < _SHIFT
        if not np.any(m):
            break
        acc[m] -= 2.0 / (y[m] * y[m] * y[m])
        y[m] += 1.0
    r = 1.0 / (y * y)
    series = r * (0.5 - r * (1.0 / 6 - r * (1.0 / 6 - r * (
        3.0 / 10 - r * (5.0 / 6 - r * (691.0 / 210 - r * 35.0 / 2))))))
    return acc - (1.0 + 1.0 / y + series) * r


def lgamma(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return np.float64(_lgamma_scalar(float(x)))
    return _lgamma_ufunc(x).astype(np.float64)


def doc_objective(ids, counts, prior, elogbeta_t, nu, rho):
    """Terms of the bound that depend on one document's nu and rho.

    Excludes the part of the parent coupling that depends only on the
    parent.
    """
    dg = digamma(nu)
    elog = dg - digamma(nu.sum())
    n = counts @ rho
    eb = elogbeta_t[ids]
    with np.errstate(divide="ignore", invalid="ignore"):
        rlr = np.where(rho > 0.0, rho * np.log(rho), 0.0)
    tok = counts @ (rho * eb - rlr).sum(axis=1)
    return float((prior + n - nu) @ elog + tok
                 - math.lgamma(nu.sum()) + lgamma(nu).sum())


def doc_estep(ids, counts, prior, elogbeta_t, nu, rho, tol, max_iters):
    """Coordinate ascent on (rho, nu) for one document, in place.

    Returns ``(iterations, objective)``.
    """
    eb = elogbeta_t[ids]
    prev = doc_objective(ids, counts, prior, elogbeta_t, nu, rho)
    obj = prev
    it = 0
    while it < max_iters:
        it += 1
        logr = digamma(nu)[None, :] + eb
        logr -= logr.max(axis=1, keepdims=True)
        r = np.exp(logr)
        r /= r.sum(axis=1, keepdims=True)
        bad = np.nonzero(~np.isfinite(r).all(axis=1))[0]
        if bad.size:
            raise FloatingPointError(
                f"non-finite document update at token {int(bad[0])}")
        rho[...] = r
        nu[...] = prior + counts @ rho
        obj = doc_objective(ids, counts, prior, elogbeta_t, nu, rho)
        if obj - prev < tol * abs(obj):
            break
        prev = obj
    return it, obj
