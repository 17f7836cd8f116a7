# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: threshold worst case and fused objective terms.

Same signatures and results as ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

LOGISTIC = 0
LINEAR = 1


cdef inline bint _less(const double* v, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    # total order: by value, ties by original index
    return v[a] < v[b] or (v[a] == v[b] and a < b)


cdef void _merge_argsort(const double* v, Py_ssize_t* idx, Py_ssize_t* tmp, Py_ssize_t n) noexcept nogil:
    # bottom-up merge sort of idx under _less
    cdef Py_ssize_t width = 1, lo, mid, hi, i, j, k
    cdef Py_ssize_t* src = idx
    cdef Py_ssize_t* dst = tmp
    cdef Py_ssize_t* swap
    while width < n:
        lo = 0
        while lo < n:
            mid = lo + width
            if mid > n:
                mid = n
            hi = lo + 2 * width
            if hi > n:
                hi = n
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if _less(v, src[j], src[i]):
                    dst[k] = src[j]
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
            lo = hi
        swap = src
        src = dst
        dst = swap
        width *= 2
    if src != idx:
        for i in range(n):
            idx[i] = src[i]


cdef void _sort_order(const double* v, Py_ssize_t* idx, Py_ssize_t* tmp, Py_ssize_t n, bint hinted) noexcept nogil:
    """Sort idx (a permutation) under _less.

    With a hint the permutation is usually nearly sorted, so insertion sort
    runs first under a move budget; past the budget merge sort finishes.
    """
    cdef Py_ssize_t i, j, cur, moves = 0, budget = 8 * n + 64
    if hinted:
        for i in range(1, n):
            cur = idx[i]
            j = i - 1
            while j >= 0 and _less(v, cur, idx[j]):
                idx[j + 1] = idx[j]
                j -= 1
                moves += 1
            idx[j + 1] = cur
            if moves > budget:
                _merge_argsort(v, idx, tmp, n)
                return
        return
    _merge_argsort(v, idx, tmp, n)


cdef double _threshold(const double* psi, const Py_ssize_t* order, Py_ssize_t n,
                       double l, double u, Py_ssize_t* k_out) noexcept nogil:
    cdef double total = 0.0, prefix = 0.0, lam, nxt
    cdef Py_ssize_t k
    for k in range(n):
        total += psi[k]
    if l == u:
        # every threshold gives the same weights; report k = 0
        k_out[0] = 0
        return total / n
    for k in range(n + 1):
        lam = (l * prefix + u * (total - prefix)) / (l * k + u * (n - k))
        nxt = psi[order[k]] if k < n else INFINITY
        if lam <= nxt:
            k_out[0] = k
            return lam
        prefix += psi[order[k]]
    k_out[0] = n
    return lam


def worst_case(psi, double l, double u, order_hint=None):
    cdef cnp.ndarray[double, ndim=1, mode="c"] p = np.ascontiguousarray(psi, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], k_star = 0, i
    cdef bint hinted = order_hint is not None
    # numpy's stable argsort matches _less (value, then index) and beats the merge sort
    order = np.array(order_hint, dtype=np.intp) if hinted else np.argsort(p, kind="stable").astype(np.intp)
    cdef Py_ssize_t[::1] ov = order
    cdef Py_ssize_t* tmp = <Py_ssize_t*> malloc(max(n, 1) * sizeof(Py_ssize_t))
    cdef double value
    if tmp == NULL:
        raise MemoryError()
    try:
        with nogil:
            _sort_order(&p[0], &ov[0], tmp, n, True)
            value = _threshold(&p[0], &ov[0], n, l, u, &k_star)
    finally:
        free(tmp)
    return value, int(k_star), order


def weights_from_threshold(order, Py_ssize_t k_star, double l, double u):
    r = np.full(order.shape[0], u)
    r[order[:k_star]] = l
    return r


def scores(x, theta, alpha, beta, int kind):
    z = np.asarray(x, dtype=float) @ np.asarray(theta, dtype=float)
    if kind == LOGISTIC:
        prob = 0.5 * np.tanh(0.5 * z) + 0.5
    else:
        prob = np.clip(z, 0.0, 1.0)
    return alpha * prob + beta


def objective_terms(x, theta, alpha, beta, int kind, double lam, double l, double u, hweights, order_hint=None):
    cdef cnp.ndarray[double, ndim=2, mode="c"] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] A = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] B = np.ascontiguousarray(beta, dtype=np.float64)
    cdef bint use_h = hweights is not None
    cdef cnp.ndarray[double, ndim=1, mode="c"] C
    if use_h:
        C = np.ascontiguousarray(hweights, dtype=np.float64)
    else:
        C = np.zeros(1)
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j, k_star = 0
    grad = np.zeros(d)
    hgrad = np.zeros(d)
    cdef double[::1] gv = grad
    cdef double[::1] hv = hgrad
    psi_arr = np.empty(max(n, 1))
    cdef double[::1] psiv = psi_arr
    cdef double* psi = &psiv[0]
    cdef Py_ssize_t[::1] presorted
    cdef double* dpsi = <double*> malloc(max(n, 1) * sizeof(double))
    cdef double* dhi = <double*> malloc(max(n, 1) * sizeof(double))
    cdef bint hinted = order_hint is not None
    cdef Py_ssize_t[::1] hint
    if hinted:
        hint = order_hint
        if hint.shape[0] != n:
            raise ValueError("order_hint length does not match the number of samples")
    cdef Py_ssize_t* order = <Py_ssize_t*> malloc(max(n, 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* tmp = <Py_ssize_t*> malloc(max(n, 1) * sizeof(Py_ssize_t))
    cdef double z, t, prob, dprob, g, h, dg, dh, a, quad, value, hsum = 0.0, rsum, coef
    if dpsi == NULL or dhi == NULL or order == NULL or tmp == NULL:
        free(dpsi); free(dhi); free(order); free(tmp)
        raise MemoryError()
    with nogil:
        for i in range(n):
            z = 0.0
            for j in range(d):
                z += X[i, j] * th[j]
            if kind == 0:
                t = tanh(0.5 * z)
                prob = 0.5 * t + 0.5
                dprob = 0.25 * (1.0 - t * t)
                if z >= 0.0:
                    g = 0.25 * z + 0.5
                    h = 0.25 * z - 0.5 * t
                    dg = 0.25
                    dh = 0.25 - dprob
                else:
                    g = prob
                    h = 0.0
                    dg = dprob
                    dh = 0.0
            else:
                prob = z if z > 0.0 else 0.0
                if prob > 1.0:
                    prob = 1.0
                dprob = 1.0 if (z >= 0.0 and z < 1.0) else 0.0
                g = z if z > 0.0 else 0.0
                h = g - 1.0 if g > 1.0 else 0.0
                dg = 1.0 if z >= 0.0 else 0.0
                dh = 1.0 if z >= 1.0 else 0.0
            a = A[i]
            psi[i] = a * prob + B[i]
            dpsi[i] = a * dprob
            if use_h:
                quad = 0.5 * lam * z * z
                if a >= 0.0:
                    hsum += C[i] * a * (h + quad)
                    dhi[i] = C[i] * a * (dh + lam * z)
                else:
                    hsum += C[i] * (-a) * (g + quad)
                    dhi[i] = C[i] * (-a) * (dg + lam * z)
            if hinted:
                order[i] = hint[i]
    if not hinted:
        presorted = np.argsort(psi_arr[:n], kind="stable").astype(np.intp)
        for i in range(n):
            order[i] = presorted[i]
    with nogil:
        _sort_order(psi, order, tmp, n, True)
        value = _threshold(psi, order, n, l, u, &k_star)
        rsum = l * k_star + u * (n - k_star)
        for i in range(k_star):
            dpsi[order[i]] *= l
        for i in range(k_star, n):
            dpsi[order[i]] *= u
        for i in range(n):
            coef = dpsi[i] / rsum
            for j in range(d):
                gv[j] += coef * X[i, j]
            if use_h:
                for j in range(d):
                    hv[j] += dhi[i] * X[i, j]
        if hinted:
            for i in range(n):
                hint[i] = order[i]
    free(dpsi); free(dhi); free(order); free(tmp)
    return value, grad, hsum, hgrad, int(k_star)
