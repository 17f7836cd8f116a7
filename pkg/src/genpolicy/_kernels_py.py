"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or ``GENPOLICY_PURE_PYTHON=1`` is set.
"""

import numpy as np

LOGISTIC = 0
LINEAR = 1


def worst_case(psi, l, u, order_hint=None):
    """Maximise the self-normalised mean of ``psi`` over weights in ``[l, u]``.

    Returns ``(value, k_star, order)`` where ``order`` is the stable
    ascending argsort of ``psi``; the ``k_star`` smallest entries get weight
    ``l`` and the rest ``u``.  ``order_hint`` is accepted for signature
    parity with the compiled kernel and ignored.
    """
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    order = np.argsort(psi, kind="stable")
    s = psi[order]
    prefix = np.concatenate(([0.0], np.cumsum(s)))
    total = prefix[-1]
    k = np.arange(n + 1)
    lam = (l * prefix + u * (total - prefix)) / (l * k + u * (n - k))
    nxt = np.append(s, np.inf)
    # with l == u every threshold gives the same weights; report k = 0
    k_star = 0 if l == u else int(np.flatnonzero(lam <= nxt)[0])
    return float(lam[k_star]), k_star, order


def weights_from_threshold(order, k_star, l, u):
    r = np.full(order.shape[0], u)
    r[order[:k_star]] = l
    return r


def _index_terms(kind, z, lam):
    if kind == LOGISTIC:
        th = np.tanh(0.5 * z)
        prob = 0.5 * th + 0.5
        dprob = 0.25 * (1.0 - th * th)
        pos = z >= 0.0
        g = np.where(pos, 0.25 * z + 0.5, prob)
        h = np.where(pos, 0.25 * z - 0.5 * th, 0.0)
        dg = np.where(pos, 0.25, dprob)
        dh = np.where(pos, 0.25 - dprob, 0.0)
    else:
        prob = np.clip(z, 0.0, 1.0)
        dprob = ((z >= 0.0) & (z < 1.0)).astype(float)
        g = np.maximum(z, 0.0)
        h = np.maximum(g - 1.0, 0.0)
        dg = (z >= 0.0).astype(float)
        dh = (z >= 1.0).astype(float)
    quad = 0.5 * lam * z * z
    return prob, dprob, g + quad, h + quad, dg + lam * z, dh + lam * z


def scores(x, theta, alpha, beta, kind):
    z = x @ theta
    if kind == LOGISTIC:
        prob = 0.5 * np.tanh(0.5 * z) + 0.5
    else:
        prob = np.clip(z, 0.0, 1.0)
    return alpha * prob + beta


def objective_terms(x, theta, alpha, beta, kind, lam, l, u, hweights, order_hint=None):
    """Worst-case value, its subgradient and the weighted concave part.

    Returns ``(value, grad, hsum, hgrad, k_star)`` where ``hsum`` is
    ``sum_i hweights_i * h_i(theta)`` and ``h_i`` is the convex piece
    subtracted in the per-sample split of ``psi_i``.  ``hweights=None``
    skips the concave part (``hsum = 0``, ``hgrad = 0``).  ``order_hint``,
    if given, is overwritten with the sorted order (the compiled kernel also
    reads it as a starting permutation).
    """
    z = x @ theta
    prob, dprob, g, h, dg, dh = _index_terms(kind, z, lam)
    psi = alpha * prob + beta
    value, k_star, order = worst_case(psi, l, u)
    if order_hint is not None:
        order_hint[:] = order
    r = weights_from_threshold(order, k_star, l, u)
    grad = x.T @ (r * alpha * dprob) / r.sum()
    if hweights is None:
        return value, grad, 0.0, np.zeros_like(theta), k_star
    pos = alpha >= 0.0
    a = np.abs(alpha)
    hi = a * np.where(pos, h, g)
    dhi = a * np.where(pos, dh, dg)
    return value, grad, float(hweights @ hi), x.T @ (hweights * dhi), k_star
