"""Compiled pieces of the logistic-Cox mixture cure EM.

All routines work on records sorted by follow-up time. Event times are
described by ``ev_start[j]`` (first record whose time equals the j-th
distinct event time) and ``ev_d[j]`` (number of events there); each record
carries ``k[i]``, the number of event times <= its own time.

Status codes: 0 ok, 1 incidence information singular, 2 incidence Newton did
not converge (separation), 3 latency information singular, 4 latency Newton
did not converge.
"""

import math

import numpy as np
from numba import njit

OK = 0
INC_SINGULAR = 1
INC_DIVERGED = 2
LAT_SINGULAR = 3
LAT_DIVERGED = 4

SINGULAR_RTOL = 1e-10


@njit(cache=True)
def softplus(x):
    """log(1 + exp(x)) without overflow."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def expit(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def solve_spd(a, b, ref):
    """Cholesky solve of ``a x = b``; ``ok`` is False when a pivot falls below ``SINGULAR_RTOL * ref``."""
    n = a.shape[0]
    low = np.zeros((n, n))
    x = np.zeros(n)
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= low[j, k] * low[j, k]
        if not s > SINGULAR_RTOL * ref[j] or not s > 0.0:
            return x, False
        low[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            s2 = a[i, j]
            for k in range(j):
                s2 -= low[i, k] * low[j, k]
            low[i, j] = s2 / low[j, j]
    y = np.zeros(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= low[i, k] * y[k]
        y[i] = s / low[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= low[k, i] * x[k]
        x[i] = s / low[i, i]
    return x, True


# ---------------------------------------------------------------- incidence


@njit(cache=True)
def logistic_objective(x, w, gamma):
    n, p = x.shape
    total = 0.0
    for i in range(n):
        eta = 0.0
        for j in range(p):
            eta += x[i, j] * gamma[j]
        total -= w[i] * softplus(-eta) + (1.0 - w[i]) * softplus(eta)
    return total


@njit(cache=True)
def logistic_newton(x, w, gamma0, tol, max_steps):
    """Maximize sum w log(pi) + (1 - w) log(1 - pi) by Newton with step-halving."""
    n, p = x.shape
    xtx = x.T @ x
    ref0 = np.empty(p)
    for j in range(p):
        ref0[j] = xtx[j, j]
    _, ok = solve_spd(xtx, np.zeros(p), ref0)
    if not ok:
        return gamma0.copy(), INC_SINGULAR
    gamma = gamma0.copy()
    obj = logistic_objective(x, w, gamma)
    for _ in range(max_steps):
        grad = np.zeros(p)
        info = np.zeros((p, p))
        for i in range(n):
            eta = 0.0
            for j in range(p):
                eta += x[i, j] * gamma[j]
            pi = expit(eta)
            r = w[i] - pi
            h = pi * (1.0 - pi)
            for j in range(p):
                grad[j] += x[i, j] * r
                for l in range(j + 1):
                    info[j, l] += h * x[i, j] * x[i, l]
        for j in range(p):
            for l in range(j):
                info[l, j] = info[j, l]
        ref = np.empty(p)
        for j in range(p):
            ref[j] = info[j, j]
        step, ok = solve_spd(info, grad, ref)
        if not ok:
            # the design has full rank, so a singular information means saturated probabilities
            return gamma, INC_DIVERGED
        t = 1.0
        new = gamma + step
        new_obj = logistic_objective(x, w, new)
        while new_obj < obj - 1e-12 * abs(obj) and t > 1e-8:
            t *= 0.5
            new = gamma + t * step
            new_obj = logistic_objective(x, w, new)
        change = np.max(np.abs(new - gamma)) if p > 0 else 0.0
        gamma = new
        obj = new_obj
        if change < tol:
            return gamma, OK
    return gamma, INC_DIVERGED


# ------------------------------------------------------------------ latency


@njit(cache=True)
def cox_pieces(z, delta, w, ev_start, ev_d, beta, want_derivs):
    """Weighted Breslow partial log-likelihood, score, information, S0 per event time.

    Risk set at event time j: records ``i >= ev_start[j]``, each weighted by
    ``w_i exp(beta z_i)``.
    """
    n, q = z.shape
    m = ev_start.shape[0]
    obj = 0.0
    grad = np.zeros(q)
    info = np.zeros((q, q))
    ref = np.zeros(q)
    s0_out = np.empty(m)
    s0 = 0.0
    s1 = np.zeros(q)
    s2 = np.zeros((q, q))
    i = n - 1
    for j in range(m - 1, -1, -1):
        while i >= ev_start[j]:
            eta = 0.0
            for a in range(q):
                eta += z[i, a] * beta[a]
            r = w[i] * math.exp(eta)
            s0 += r
            if want_derivs:
                for a in range(q):
                    s1[a] += r * z[i, a]
                    for b in range(a + 1):
                        s2[a, b] += r * z[i, a] * z[i, b]
            if delta[i] == 1:
                obj += eta
                for a in range(q):
                    grad[a] += z[i, a]
            i -= 1
        d = ev_d[j]
        s0_out[j] = s0
        obj -= d * math.log(s0)
        if want_derivs:
            for a in range(q):
                mean_a = s1[a] / s0
                grad[a] -= d * mean_a
                ref[a] += d * s2[a, a] / s0
                for b in range(a + 1):
                    info[a, b] += d * (s2[a, b] / s0 - mean_a * s1[b] / s0)
    for a in range(q):
        for b in range(a):
            info[b, a] = info[a, b]
    return obj, grad, info, ref, s0_out


@njit(cache=True)
def cox_newton(z, delta, w, ev_start, ev_d, beta0, tol, max_steps):
    q = z.shape[1]
    beta = beta0.copy()
    if q == 0:
        return beta, OK
    obj, grad, info, ref, _ = cox_pieces(z, delta, w, ev_start, ev_d, beta, True)
    for _ in range(max_steps):
        step, ok = solve_spd(info, grad, ref)
        if not ok:
            return beta, LAT_SINGULAR
        t = 1.0
        new = beta + step
        new_obj, g2, i2, r2, _ = cox_pieces(z, delta, w, ev_start, ev_d, new, True)
        while not (new_obj >= obj - 1e-12 * abs(obj)) and t > 1e-8:
            t *= 0.5
            new = beta + t * step
            new_obj, g2, i2, r2, _ = cox_pieces(z, delta, w, ev_start, ev_d, new, True)
        change = np.max(np.abs(new - beta))
        beta = new
        obj, grad, info, ref = new_obj, g2, i2, r2
        if change < tol:
            return beta, OK
    return beta, LAT_DIVERGED


@njit(cache=True)
def breslow(z, delta, w, ev_start, ev_d, beta):
    """Increments d_j / sum_{risk set} w exp(beta z) of the cumulative baseline hazard."""
    _, _, _, _, s0 = cox_pieces(z, delta, w, ev_start, ev_d, beta, False)
    return ev_d / s0


# ---------------------------------------------------------------- E-step, likelihood


@njit(cache=True)
def _linear(a, coef, i):
    eta = 0.0
    for j in range(coef.shape[0]):
        eta += a[i, j] * coef[j]
    return eta


@njit(cache=True)
def e_step(time, delta, x, z, k, t_last, gamma, beta, cum):
    n = time.shape[0]
    w = np.empty(n)
    for i in range(n):
        if delta[i] == 1:
            w[i] = 1.0
            continue
        if time[i] > t_last:
            w[i] = 0.0
            continue
        lam = cum[k[i] - 1] if k[i] > 0 else 0.0
        s = math.exp(-lam * math.exp(_linear(z, beta, i)))
        pi = expit(_linear(x, gamma, i))
        num = pi * s
        w[i] = num / (1.0 - pi + num)
    return w


@njit(cache=True)
def loglik(time, delta, x, z, k, t_last, gamma, beta, dlam, cum):
    """Observed-data log-likelihood; returns -inf if an event lacks a positive hazard step."""
    n = time.shape[0]
    total = 0.0
    for i in range(n):
        eta_x = _linear(x, gamma, i)
        eta_z = _linear(z, beta, i)
        lam = cum[k[i] - 1] if k[i] > 0 else 0.0
        if delta[i] == 1:
            if k[i] == 0 or not dlam[k[i] - 1] > 0.0:
                return -np.inf
            total += -softplus(-eta_x) + math.log(dlam[k[i] - 1]) + eta_z - lam * math.exp(eta_z)
        else:
            pi = expit(eta_x)
            s = 0.0 if time[i] > t_last else math.exp(-lam * math.exp(eta_z))
            total += math.log(1.0 - pi + pi * s)
    return total


# ---------------------------------------------------------------- full EM


@njit(cache=True)
def em(time, delta, x, z, k, ev_start, ev_d, t_last, gamma0, beta0, tol, max_iter, newton_tol, newton_steps, keep_path):
    p = x.shape[1]
    q = z.shape[1]
    m = ev_start.shape[0]
    ones = np.ones(time.shape[0])
    wdelta = delta.astype(np.float64)

    gamma, status = logistic_newton(x, wdelta, gamma0, newton_tol, newton_steps)
    if status != OK:
        # initial logistic fit may separate (e.g. every censored record cured); fall back to the start
        gamma = gamma0.copy()
    beta, status = cox_newton(z, delta, ones, ev_start, ev_d, beta0, newton_tol, newton_steps)
    if status != OK:
        return gamma, beta, np.zeros(m), 0, np.zeros(1), False, status, np.zeros((1, p)), np.zeros((1, q)), np.zeros((1, m))
    dlam = breslow(z, delta, ones, ev_start, ev_d, beta)
    cum = np.cumsum(dlam)

    path = np.empty(max_iter + 1)
    rows = max_iter + 1 if keep_path else 1
    gpath = np.zeros((rows, p))
    bpath = np.zeros((rows, q))
    cpath = np.zeros((rows, m))
    path[0] = loglik(time, delta, x, z, k, t_last, gamma, beta, dlam, cum)
    if keep_path:
        gpath[0] = gamma
        bpath[0] = beta
        cpath[0] = cum
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        w = e_step(time, delta, x, z, k, t_last, gamma, beta, cum)
        g_new, status = logistic_newton(x, w, gamma, newton_tol, newton_steps)
        if status != OK:
            return gamma, beta, dlam, it, path[:it], False, status, gpath, bpath, cpath
        b_new, status = cox_newton(z, delta, w, ev_start, ev_d, beta, newton_tol, newton_steps)
        if status != OK:
            return gamma, beta, dlam, it, path[:it], False, status, gpath, bpath, cpath
        d_new = breslow(z, delta, w, ev_start, ev_d, b_new)
        c_new = np.cumsum(d_new)
        change = 0.0
        for j in range(p):
            change = max(change, abs(g_new[j] - gamma[j]))
        for j in range(q):
            change = max(change, abs(b_new[j] - beta[j]))
        for j in range(m):
            change = max(change, abs(c_new[j] - cum[j]))
        gamma, beta, dlam, cum = g_new, b_new, d_new, c_new
        path[it] = loglik(time, delta, x, z, k, t_last, gamma, beta, dlam, cum)
        if keep_path:
            gpath[it] = gamma
            bpath[it] = beta
            cpath[it] = cum
        if change < tol:
            converged = True
            break
    if keep_path:
        gpath = gpath[: it + 1]
        bpath = bpath[: it + 1]
        cpath = cpath[: it + 1]
    return gamma, beta, dlam, it, path[: it + 1], converged, OK, gpath, bpath, cpath
