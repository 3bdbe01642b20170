"""Compiled Kaplan-Meier step tables and the plug-in MST / variance sums.

Both the single-sample path (``fit_km``) and the permutation path call these
same kernels, so a split that reproduces a sample gives bit-identical
statistics.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def km_steps(time, status, member, g, out_t, out_s, out_v, out_r, out_d):
    """Fill the step table of the group ``member == g``; return the number of event times.

    ``time`` must be sorted ascending. Events and censorings tied at a time
    share the risk set (censored records count as at risk for that event).
    The variance-process increment is skipped where the risk set is
    exhausted by events.
    """
    n = time.shape[0]
    n_g = 0
    for i in range(n):
        if member[i] == g:
            n_g += 1
    at_risk = n_g
    surv = 1.0
    v = 0.0
    m = 0
    i = 0
    while i < n:
        t = time[i]
        d = 0
        c = 0
        j = i
        while j < n and time[j] == t:
            if member[j] == g:
                if status[j] == 1:
                    d += 1
                else:
                    c += 1
            j += 1
        if d > 0:
            surv = surv * (1.0 - d / at_risk)
            if at_risk > d:
                v = v + n_g * d / (at_risk * (at_risk - d))
            out_t[m] = t
            out_s[m] = surv
            out_v[m] = v
            out_r[m] = at_risk
            out_d[m] = d
            m += 1
        at_risk -= d + c
        i = j
    return m


@njit(cache=True)
def mst_sigma(t, s, v, m):
    """Return ``(mst, sigma_sq, p)`` for the step functions over ``m`` event times."""
    mst, term1, term2, term3, p = mst_sigma_terms(t, s, v, m)
    return mst, term1 + term2 + term3, p


@njit(cache=True)
def mst_sigma_terms(t, s, v, m):
    """``(mst, term1, term2, term3, p)``: the MST and the three variance terms.

    On ``[t_k, t_{k+1})`` (with ``t_0 = 0``, ``S_0 = 1``, ``v_0 = 0``) both the
    survival curve and the variance process are constant, so every integral
    is an exact finite sum. The double integral uses
    ``sum_k v_k * (A_k^2 + 2 A_k sum_{l>k} A_l)`` with ``A_k = len_k * S_k``.
    """
    p = s[m - 1]
    tau0 = t[m - 1]
    q = 1.0 - p
    # suffix sums of A_l, l > k
    mst = 0.0
    term1 = 0.0
    cross = 0.0
    tail = 0.0
    for k in range(m - 1, -1, -1):
        if k == 0:
            left = 0.0
            s_k = 1.0
            v_k = 0.0
        else:
            left = t[k - 1]
            s_k = s[k - 1]
            v_k = v[k - 1]
        length = t[k] - left
        a_k = length * s_k
        mst += length * (s_k - p)
        term1 += v_k * (a_k * a_k + 2.0 * a_k * tail)
        cross += a_k * v_k
        tail += a_k
    mst = mst / q
    gap = mst - tau0
    term1 = term1 / (q * q)
    term2 = p * p / (q * q) * gap * gap * v[m - 1]
    term3 = 2.0 * p / (q * q) * gap * cross
    return mst, term1, term2, term3, p


@njit(cache=True)
def group_stats(time, status, member, g, eps, buf_t, buf_s, buf_v, buf_r, buf_d):
    """``(ok, n_g, mst, sigma_sq)`` for one group of a sorted pooled sample.

    ``ok`` is 0 when the group has no event or no uncured mass.
    """
    m = km_steps(time, status, member, g, buf_t, buf_s, buf_v, buf_r, buf_d)
    n_g = 0
    for i in range(member.shape[0]):
        if member[i] == g:
            n_g += 1
    if m == 0:
        return 0, n_g, np.nan, np.nan
    if buf_s[m - 1] >= 1.0 - eps:
        return 0, n_g, np.nan, np.nan
    mst, sig, _ = mst_sigma(buf_t, buf_s, buf_v, m)
    return 1, n_g, mst, sig


@njit(cache=True)
def split_statistic(time, status, member, eps):
    """Studentized pieces ``(ok, m_hat, sigma_hat)`` for groups 1 and 2 of a split.

    ``sigma_hat`` pools the per-group variances with the opposite-group
    weights ``n2/N`` and ``n1/N``.
    """
    n = time.shape[0]
    buf_t = np.empty(n)
    buf_s = np.empty(n)
    buf_v = np.empty(n)
    buf_r = np.empty(n)
    buf_d = np.empty(n)
    ok1, n1, mst1, sig1 = group_stats(time, status, member, 1, eps, buf_t, buf_s, buf_v, buf_r, buf_d)
    ok2, n2, mst2, sig2 = group_stats(time, status, member, 2, eps, buf_t, buf_s, buf_v, buf_r, buf_d)
    if ok1 == 0 or ok2 == 0:
        return 0, np.nan, np.nan
    tot = n1 + n2
    var = n2 / tot * sig1 + n1 / tot * sig2
    if not var > 0.0:
        return 0, mst1 - mst2, 0.0
    return 1, mst1 - mst2, np.sqrt(var)
