# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numerical kernels: special functions and the per-document E-step.

Function signatures match ``tilda._pykernels`` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, lgamma as c_lgamma, fma, isfinite, fabs

cnp.import_array()

cdef double SHIFT = 6.0


cdef inline double _digamma(double x) nogil:
    cdef double acc = 0.0, inv = 0.0, err = 0.0, r, series
    if x < 1.0 and x > 1e-290:
        inv = 1.0 / x
        err = fma(-inv, x, 1.0) / x
        x += 1.0
    while x < SHIFT:
        acc -= 1.0 / x
        x += 1.0
    r = 1.0 / (x * x)
    series = r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (
        1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r / 12.0))))))
    return ((log(x) - 0.5 / x - series + acc) - err) - inv


cdef inline double _trigamma(double x) nogil:
    cdef double acc = 0.0, r, series
    while x < SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    r = 1.0 / (x * x)
    series = r * (1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (
        1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * 7.0 / 6))))))
    return acc + (1.0 + 0.5 / x + series) / x


cdef inline double _tetragamma(double x) nogil:
    cdef double acc = 0.0, r, series
    while x < SHIFT:
        acc -= 2.0 / (x * x * x)
        x += 1.0
    r = 1.0 / (x * x)
    series = r * (0.5 - r * (1.0 / 6 - r * (1.0 / 6 - r * (
        3.0 / 10 - r * (5.0 / 6 - r * (691.0 / 210 - r * 35.0 / 2))))))
    return acc - (1.0 + 1.0 / x + series) * r


def _apply(f, x):
    arr = np.asarray(x, dtype=np.float64, order="C")
    out = np.empty_like(arr)
    cdef double[::1] src = arr.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i, n = src.shape[0]
    if f == 0:
        with nogil:
            for i in range(n):
                dst[i] = _digamma(src[i])
    elif f == 1:
        with nogil:
            for i in range(n):
                dst[i] = _trigamma(src[i])
    elif f == 2:
        with nogil:
            for i in range(n):
                dst[i] = _tetragamma(src[i])
    else:
        with nogil:
            for i in range(n):
                dst[i] = c_lgamma(src[i])
    if out.ndim == 0:
        return out[()]
    return out


def digamma(x):
    return _apply(0, x)


def trigamma(x):
    return _apply(1, x)


def tetragamma(x):
    return _apply(2, x)


def lgamma(x):
    return _apply(3, x)


cdef double _objective(const cnp.int64_t[::1] ids, const double[::1] counts,
                       const double[::1] prior, const double[:, ::1] eb,
                       const double[::1] nu, const double[:, ::1] rho,
                       double[::1] ntop) noexcept nogil:
    cdef Py_ssize_t n = ids.shape[0], K = nu.shape[0], j, i
    cdef double nu0 = 0.0, dg0, obj = 0.0, r, c, s
    for i in range(K):
        nu0 += nu[i]
        ntop[i] = 0.0
    dg0 = _digamma(nu0)
    for j in range(n):
        c = counts[j]
        s = 0.0
        for i in range(K):
            r = rho[j, i]
            ntop[i] += c * r
            if r > 0.0:
                s += r * (eb[ids[j], i] - log(r))
        obj += c * s
    for i in range(K):
        obj += (prior[i] + ntop[i] - nu[i]) * (_digamma(nu[i]) - dg0) + c_lgamma(nu[i])
    return obj - c_lgamma(nu0)


def doc_objective(const cnp.int64_t[::1] ids, const double[::1] counts,
                  const double[::1] prior, const double[:, ::1] elogbeta_t,
                  const double[::1] nu, const double[:, ::1] rho):
    """Terms of the bound that depend on one document's nu and rho."""
    cdef double[::1] ntop = np.empty(nu.shape[0])
    cdef double out
    with nogil:
        out = _objective(ids, counts, prior, elogbeta_t, nu, rho, ntop)
    return out


def doc_estep(const cnp.int64_t[::1] ids, const double[::1] counts,
              const double[::1] prior, const double[:, ::1] elogbeta_t,
              double[::1] nu, double[:, ::1] rho, double tol, int max_iters):
    """Coordinate ascent on (rho, nu) for one document, in place.

    Returns ``(iterations, objective)``.  Releases the GIL.
    """
    cdef Py_ssize_t n = ids.shape[0], K = nu.shape[0], j, i
    cdef double[::1] ntop = np.empty(K)
    cdef double[::1] dg = np.empty(K)
    cdef double prev, obj, mx, s, v
    cdef int it = 0
    cdef Py_ssize_t bad = -1
    with nogil:
        prev = _objective(ids, counts, prior, elogbeta_t, nu, rho, ntop)
        obj = prev
        while it < max_iters:
            it += 1
            for i in range(K):
                dg[i] = _digamma(nu[i])
                ntop[i] = 0.0
            for j in range(n):
                mx = -1e308
                for i in range(K):
                    v = dg[i] + elogbeta_t[ids[j], i]
                    rho[j, i] = v
                    if v > mx:
                        mx = v
                s = 0.0
                for i in range(K):
                    v = exp(rho[j, i] - mx)
                    rho[j, i] = v
                    s += v
                if not isfinite(s) or s <= 0.0:
                    bad = j
                    break
                for i in range(K):
                    rho[j, i] /= s
                    ntop[i] += counts[j] * rho[j, i]
            if bad >= 0:
                break
            for i in range(K):
                nu[i] = prior[i] + ntop[i]
            obj = _objective(ids, counts, prior, elogbeta_t, nu, rho, ntop)
            if obj - prev < tol * fabs(obj):
                break
            prev = obj
    if bad >= 0:
        raise FloatingPointError(f"non-finite document update at token {bad}")
    return it, obj
