"""
Hot numeric loops.

Each kernel has a numba-compatible loop implementation.  When numba is active
(see :mod:`uwar._accel`) the loop is compiled; otherwise the pure-numpy
variant is used.  For the history accumulation the numpy variant is a batched
``einsum`` formulation rather than the interpreted loop, so the two backends
are independent implementations of the same sums.

Random draws are always produced by a ``numpy.random.Generator`` outside the
kernels and passed in as arrays, so results do not depend on the backend's
RNG.
"""

import numpy as np

from uwar._accel import HAS_NUMBA, njit

__all__ = [
    "BACKEND",
    "filter_loop",
    "history_terms",
    "uwar_path",
    "filter_loop_py",
    "history_terms_loop",
    "history_terms_numpy",
    "uwar_path_py",
    "uwar_lagged_path",
    "uwar_lagged_path_py",
]

# status codes returned by the loop kernels
OK = 0
NOT_PD = 1
BAD_QUAD = 2


def filter_loop_py(resid, a_path, lam, f0, k):
    """
    Conjugate precision filter.

    Parameters
    ----------
    resid : (N, p) residuals ``y_t - mu``
    a_path : (N, p, p) AR matrix used at each step
    lam : (N, p, p) additive scale term
    f0 : (p, p) initial posterior scale
    k : float

    Returns
    -------
    r : (N, p, p) prior scales ``k A F_{t-1} A' + Lambda_t``
    f : (N + 1, p, p) posterior scales, ``f[0] = f0``
    logdet_r : (N,)
    quad : (N,) ``e_t' R_t e_t``
    status, step : int
    """
    n, p = resid.shape
    r = np.zeros((n, p, p))
    f = np.zeros((n + 1, p, p))
    logdet_r = np.zeros(n)
    quad = np.zeros(n)
    f[0] = f0
    for t in range(n):
        a = a_path[t]
        rt = k * (a @ f[t] @ a.T) + lam[t]
        rt = 0.5 * (rt + rt.T)
        for i in range(p):
            if not rt[i, i] > 0.0:
                return r, f, logdet_r, quad, NOT_PD, t
        lower = np.linalg.cholesky(rt)
        ld = 0.0
        for i in range(p):
            ld += 2.0 * np.log(lower[i, i])
        e = resid[t]
        re = rt @ e
        q = 0.0
        for i in range(p):
            q += e[i] * re[i]
        denom = 1.0 + q
        if not (denom > 0.0 and np.isfinite(denom)):
            return r, f, logdet_r, quad, BAD_QUAD, t
        ft = rt - np.outer(re, re) / denom
        f[t + 1] = 0.5 * (ft + ft.T)
        r[t] = rt
        logdet_r[t] = ld
        quad[t] = q
    return r, f, logdet_r, quad, OK, n


def history_terms_loop(a, fs, es, lams, k, s, gamma, want_hess):
    """
    Likelihood part of the A log-posterior, its gradient and Hessian.

    The per-term contribution is ``-s/2 log(1 + e'Re) + gamma/2 log|R|`` with
    ``R = k A F A' + Lambda``.  Returns ``(value, grad, hess, ok)``; ``ok`` is
    False when some ``R`` is not positive definite.
    """
    t_len = fs.shape[0]
    p = a.shape[0]
    pp = p * p
    value = 0.0
    grad = np.zeros((p, p))
    hess = np.zeros((pp, pp))
    for j in range(t_len):
        f = fs[j]
        e = es[j]
        af = a @ f
        r = k * (af @ a.T) + lams[j]
        r = 0.5 * (r + r.T)
        ok = True
        for i in range(p):
            if not r[i, i] > 0.0:
                ok = False
        if not ok:
            return -np.inf, grad, hess, False
        lower = np.linalg.cholesky(r)
        ld = 0.0
        for i in range(p):
            ld += 2.0 * np.log(lower[i, i])
        re = r @ e
        q = 0.0
        for i in range(p):
            q += e[i] * re[i]
        value += -0.5 * s * np.log1p(q) + 0.5 * gamma * ld
        rinv = np.linalg.inv(r)
        rinv = 0.5 * (rinv + rinv.T)
        eet = np.outer(e, e)
        t1 = (eet @ af) / (1.0 + q)
        t2 = rinv @ af
        grad += -s * k * t1 + gamma * k * t2
        if want_hess:
            c1 = -s * k / (1.0 + q)
            c2 = 2.0 * s * k * k / (1.0 + q) ** 2
            g = np.zeros(pp)
            eaf = eet @ af
            for col in range(p):
                for row in range(p):
                    g[col * p + row] = eaf[row, col]
            m1 = af.T @ rinv @ af  # F A' R^-1 A F
            m2 = af.T @ rinv  # F A' R^-1
            m3 = rinv @ af  # R^-1 A F
            for a1 in range(p):
                for b1 in range(p):
                    for c1_ in range(p):
                        for d1 in range(p):
                            row_i = a1 * p + c1_
                            col_i = b1 * p + d1
                            h = c1 * f[a1, b1] * eet[c1_, d1]
                            h += gamma * k * f[a1, b1] * rinv[c1_, d1]
                            h -= gamma * k * k * m1[a1, b1] * rinv[c1_, d1]
                            hess[row_i, col_i] += h
                            # kron(m2, m3) K_p: column b1*p+d1 of the product is
                            # column d1*p+b1 of the Kronecker factor
                            hess[row_i, d1 * p + b1] -= gamma * k * k * m2[a1, b1] * m3[c1_, d1]
            for u in range(pp):
                for v in range(pp):
                    hess[u, v] += c2 * g[u] * g[v]
    return value, grad, hess, True


def history_terms_numpy(a, fs, es, lams, k, s, gamma, want_hess):
    """Batched numpy version of :func:`history_terms_loop`."""
    p = a.shape[0]
    pp = p * p
    af = np.einsum("ik,jkl->jil", a, fs)
    r = k * np.einsum("jil,ml->jim", af, a) + lams
    r = 0.5 * (r + np.swapaxes(r, 1, 2))
    try:
        lower = np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        return -np.inf, np.zeros((p, p)), np.zeros((pp, pp)), False
    logdet = 2.0 * np.sum(np.log(np.diagonal(lower, axis1=1, axis2=2)), axis=1)
    re = np.einsum("jil,jl->ji", r, es)
    q = np.einsum("ji,ji->j", es, re)
    value = float(np.sum(-0.5 * s * np.log1p(q) + 0.5 * gamma * logdet))
    rinv = np.linalg.inv(r)
    rinv = 0.5 * (rinv + np.swapaxes(rinv, 1, 2))
    w = 1.0 / (1.0 + q)
    eet = np.einsum("ji,jl->jil", es, es)
    eaf = np.einsum("jil,jlm->jim", eet, af)
    m3 = np.einsum("jil,jlm->jim", rinv, af)
    grad = np.einsum("j,jim->im", -s * k * w, eaf) + gamma * k * np.sum(m3, axis=0)
    hess = np.zeros((pp, pp))
    if want_hess:
        m2 = np.swapaxes(m3, 1, 2)
        m1 = np.einsum("jil,jlm->jim", m2, af)

        def ksum(x, y, weights=None):
            if weights is None:
                out = np.einsum("jab,jcd->acbd", x, y)
            else:
                out = np.einsum("j,jab,jcd->acbd", weights, x, y)
            return out.reshape(pp, pp)

        hess += ksum(fs, eet, -s * k * w)
        hess += gamma * k * ksum(fs, rinv)
        hess -= gamma * k * k * ksum(m1, rinv)
        kp = ksum(m2, m3)
        # right-multiplication by the vec-permutation matrix
        hess -= gamma * k * k * kp.reshape(pp, p, p).transpose(0, 2, 1).reshape(pp, pp)
        g = eaf.transpose(0, 2, 1).reshape(-1, pp)
        hess += np.einsum("j,ju,jv->uv", 2.0 * s * k * k * w**2, g, g)
    return value, grad, hess, True


def _beta_step(psi, a_big, k, chi, tri, z):
    m = psi.shape[0]
    t = np.zeros((m, m))
    idx = 0
    for i in range(m):
        t[i, i] = np.sqrt(chi[i])
        for j in range(i):
            t[i, j] = tri[idx]
            idx += 1
    x = t @ t.T
    s = x + np.outer(z, z)
    s = 0.5 * (s + s.T)
    us = np.linalg.cholesky(s).T
    us_inv = np.linalg.inv(us)
    b = us_inv.T @ x @ us_inv
    b = 0.5 * (b + b.T)
    u = np.linalg.cholesky(psi).T
    new = k * (a_big @ u.T @ b @ u @ a_big.T)
    return 0.5 * (new + new.T)


def uwar_path_py(psi0, a_big, k, chi, tri, z, lam, d, p):
    """
    Multiplicative beta-Wishart recursion ``k A U(Psi)' B U(Psi) A' + Lambda``.

    ``psi0`` is block diagonal with ``d`` blocks of size ``p``; the first
    block of each new draw becomes the current matrix and the older blocks
    shift down.  Returns the ``(N, p, p)`` path of leading blocks plus a
    status code and step index.
    """
    n = chi.shape[0]
    m = psi0.shape[0]
    out = np.zeros((n, p, p))
    psi = psi0.copy()
    for t in range(n):
        for i in range(m):
            if not psi[i, i] > 0.0:
                return out, NOT_PD, t
        new = _beta_step(psi, a_big, k, chi[t], tri[t], z[t])
        cur = new[:p, :p] + lam[t]
        cur = 0.5 * (cur + cur.T)
        nxt = np.zeros((m, m))
        nxt[:p, :p] = cur
        for blk in range(1, d):
            nxt[blk * p:(blk + 1) * p, blk * p:(blk + 1) * p] = psi[(blk - 1) * p:blk * p, (blk - 1) * p:blk * p]
        psi = nxt
        out[t] = cur
    return out, OK, n


def uwar_lagged_path_py(phi0, a1, g, k, chi, tri, z, lam, d, p):
    """
    Order-``d`` recursion with a ``p``-dimensional shock on the lag-weighted state.

    ``Phi_t = k A_1 U(S)' B U(S) A_1' + Lambda`` with
    ``S = sum_j G_j Phi_{t-j} G_j'`` and ``G_j = A_1^{-1} A_j`` (``G_1 = I``),
    so that ``E(Phi_t | past) = sum_j A_j Phi_{t-j} A_j' + Lambda`` up to the
    factor ``k E(B)``.  ``phi0`` starts every lag.  With ``d = 1`` this is
    the first-order recursion of :func:`uwar_path_py` on the same draws.
    """
    n = chi.shape[0]
    out = np.zeros((n, p, p))
    lags = np.zeros((d, p, p))
    for j in range(d):
        lags[j] = phi0
    for t in range(n):
        s = np.zeros((p, p))
        for j in range(d):
            s += g[j] @ lags[j] @ g[j].T
        s = 0.5 * (s + s.T)
        for i in range(p):
            if not s[i, i] > 0.0:
                return out, NOT_PD, t
        cur = _beta_step(s, a1, k, chi[t], tri[t], z[t]) + lam[t]
        cur = 0.5 * (cur + cur.T)
        for j in range(d - 1, 0, -1):
            lags[j] = lags[j - 1]
        lags[0] = cur
        out[t] = cur
    return out, OK, n


if HAS_NUMBA:
    BACKEND = "numba"
    filter_loop = njit(cache=True)(filter_loop_py)
    history_terms = njit(cache=True)(history_terms_loop)
    _beta_step = njit(cache=True)(_beta_step)
    uwar_path = njit(cache=True)(uwar_path_py)
    uwar_lagged_path = njit(cache=True)(uwar_lagged_path_py)
else:
    BACKEND = "numpy"
    filter_loop = filter_loop_py
    history_terms = history_terms_numpy
    uwar_path = uwar_path_py
    uwar_lagged_path = uwar_lagged_path_py
