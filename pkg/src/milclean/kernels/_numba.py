"""Numba-jitted per-bag kernels (hot path of MIL training and inference).

Loop-level twin of ``_numpy``: same math, explicit loops, compiled with
``@njit``. Summation order is fixed, so results are deterministic run to
run; agreement with the numpy backend is asserted in tests at
floating-point tolerance rather than bitwise.
"""

import math

import numpy as np
from numba import njit

NAME = "numba"

LOSS_EPS = 1e-7


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _focal_terms(p, y, gamma_lo, gamma_hi, gamma_break):
    pc = min(max(p, LOSS_EPS), 1.0 - LOSS_EPS)
    p_true = pc if y == 1.0 else 1.0 - pc
    gamma = gamma_lo if p_true < gamma_break else gamma_hi
    if y == 1.0:
        loss = -((1.0 - pc) ** gamma) * math.log(pc)
        dldp = gamma * (1.0 - pc) ** (gamma - 1.0) * math.log(pc) - ((1.0 - pc) ** gamma) / pc
    else:
        loss = -(pc ** gamma) * math.log(1.0 - pc)
        dldp = -gamma * pc ** (gamma - 1.0) * math.log(1.0 - pc) + (pc ** gamma) / (1.0 - pc)
    return loss, dldp, pc


@njit(cache=True)
def _embed(w1, b1, w2, b2, x):
    n = x.shape[0]
    d = x.shape[1]
    hdim = w1.shape[0]
    m = w2.shape[0]
    s = np.empty((n, hdim))
    h = np.empty((n, m))
    for i in range(n):
        for j in range(hdim):
            acc = b1[j]
            for k in range(d):
                acc += w1[j, k] * x[i, k]
            s[i, j] = math.tanh(acc)
        for j in range(m):
            acc = b2[j]
            for k in range(hdim):
                acc += w2[j, k] * s[i, k]
            h[i, j] = math.tanh(acc)
    return s, h


@njit(cache=True)
def _attention(v, wa, h):
    """Per-instance attention logits, tanh cache, stable softmax weights."""
    n = h.shape[0]
    m = h.shape[1]
    a = v.shape[0]
    t = np.empty((n, a))
    logits = np.empty(n)
    for i in range(n):
        li = 0.0
        for j in range(a):
            acc = 0.0
            for k in range(m):
                acc += v[j, k] * h[i, k]
            tij = math.tanh(acc)
            t[i, j] = tij
            li += wa[j] * tij
        logits[i] = li
    mx = logits[0]
    for i in range(1, n):
        if logits[i] > mx:
            mx = logits[i]
    w = np.empty(n)
    tot = 0.0
    for i in range(n):
        w[i] = math.exp(logits[i] - mx)
        tot += w[i]
    for i in range(n):
        w[i] /= tot
    return t, w


@njit(cache=True)
def atten_forward(w1, b1, w2, b2, v, wa, g, gb, x):
    _, h = _embed(w1, b1, w2, b2, x)
    t, w = _attention(v, wa, h)
    n = h.shape[0]
    m = h.shape[1]
    logit = gb[0]
    for k in range(m):
        zk = 0.0
        for i in range(n):
            zk += w[i] * h[i, k]
        logit += g[k] * zk
    return _sigmoid(logit), w


@njit(cache=True)
def atten_grad(w1, b1, w2, b2, v, wa, g, gb, x, y, gamma_lo, gamma_hi, gamma_break):
    n = x.shape[0]
    d = x.shape[1]
    hdim = w1.shape[0]
    m = w2.shape[0]
    a = v.shape[0]

    s, h = _embed(w1, b1, w2, b2, x)
    t, w = _attention(v, wa, h)
    z = np.zeros(m)
    for k in range(m):
        zk = 0.0
        for i in range(n):
            zk += w[i] * h[i, k]
        z[k] = zk
    logit = gb[0]
    for k in range(m):
        logit += g[k] * z[k]
    p = _sigmoid(logit)

    loss, dldp, pc = _focal_terms(p, y, gamma_lo, gamma_hi, gamma_break)
    dlogit = dldp * pc * (1.0 - pc)

    dg = np.empty(m)
    for k in range(m):
        dg[k] = dlogit * z[k]
    dgb = np.empty(1)
    dgb[0] = dlogit

    dz = np.empty(m)
    for k in range(m):
        dz[k] = dlogit * g[k]

    dwgt = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(m):
            acc += h[i, k] * dz[k]
        dwgt[i] = acc
    shift = 0.0
    for i in range(n):
        shift += w[i] * dwgt[i]
    da = np.empty(n)
    for i in range(n):
        da[i] = w[i] * (dwgt[i] - shift)

    dwa = np.zeros(a)
    dv = np.zeros((a, m))
    dh = np.empty((n, m))
    for i in range(n):
        for k in range(m):
            dh[i, k] = w[i] * dz[k]
    for i in range(n):
        for j in range(a):
            dwa[j] += da[i] * t[i, j]
            dpre = da[i] * wa[j] * (1.0 - t[i, j] * t[i, j])
            for k in range(m):
                dv[j, k] += dpre * h[i, k]
                dh[i, k] += v[j, k] * dpre

    dw2 = np.zeros((m, hdim))
    db2 = np.zeros(m)
    dw1 = np.zeros((hdim, d))
    db1 = np.zeros(hdim)
    for i in range(n):
        for j in range(m):
            du2 = dh[i, j] * (1.0 - h[i, j] * h[i, j])
            db2[j] += du2
            for k in range(hdim):
                dw2[j, k] += du2 * s[i, k]
        for k in range(hdim):
            acc = 0.0
            for j in range(m):
                acc += w2[j, k] * dh[i, j] * (1.0 - h[i, j] * h[i, j])
            du1 = acc * (1.0 - s[i, k] * s[i, k])
            db1[k] += du1
            for q in range(d):
                dw1[k, q] += du1 * x[i, q]
    return loss, p, (dw1, db1, dw2, db2, dv, dwa, dg, dgb)


@njit(cache=True)
def atten_infer(w1, b1, w2, b2, v, wa, g, gb, cells):
    n = cells.shape[0]
    out = np.empty(n)
    for i in range(n):
        p, _ = atten_forward(w1, b1, w2, b2, v, wa, g, gb, cells[i : i + 1])
        out[i] = p
    return out


@njit(cache=True)
def minet_forward(w1, b1, w2, b2, w3, b3, x):
    _, h = _embed(w1, b1, w2, b2, x)
    n = h.shape[0]
    m = h.shape[1]
    f = np.empty(n)
    acc = 0.0
    for i in range(n):
        li = b3[0]
        for k in range(m):
            li += w3[k] * h[i, k]
        f[i] = _sigmoid(li)
        acc += f[i]
    return acc / n, f


@njit(cache=True)
def minet_grad(w1, b1, w2, b2, w3, b3, x, y, gamma_lo, gamma_hi, gamma_break):
    n = x.shape[0]
    d = x.shape[1]
    hdim = w1.shape[0]
    m = w2.shape[0]

    s, h = _embed(w1, b1, w2, b2, x)
    f = np.empty(n)
    acc = 0.0
    for i in range(n):
        li = b3[0]
        for k in range(m):
            li += w3[k] * h[i, k]
        f[i] = _sigmoid(li)
        acc += f[i]
    p = acc / n

    loss, dldp, _ = _focal_terms(p, y, gamma_lo, gamma_hi, gamma_break)

    dw3 = np.zeros(m)
    db3 = np.zeros(1)
    dw2 = np.zeros((m, hdim))
    db2 = np.zeros(m)
    dw1 = np.zeros((hdim, d))
    db1 = np.zeros(hdim)
    for i in range(n):
        dlog = (dldp / n) * f[i] * (1.0 - f[i])
        db3[0] += dlog
        for k in range(m):
            dw3[k] += dlog * h[i, k]
        for j in range(m):
            du2 = dlog * w3[j] * (1.0 - h[i, j] * h[i, j])
            db2[j] += du2
            for k in range(hdim):
                dw2[j, k] += du2 * s[i, k]
        for k in range(hdim):
            accs = 0.0
            for j in range(m):
                accs += w2[j, k] * dlog * w3[j] * (1.0 - h[i, j] * h[i, j])
            du1 = accs * (1.0 - s[i, k] * s[i, k])
            db1[k] += du1
            for q in range(d):
                dw1[k, q] += du1 * x[i, q]
    return loss, p, (dw1, db1, dw2, db2, dw3, db3)


@njit(cache=True)
def minet_infer(w1, b1, w2, b2, w3, b3, cells):
    n = cells.shape[0]
    out = np.empty(n)
    for i in range(n):
        p, _ = minet_forward(w1, b1, w2, b2, w3, b3, cells[i : i + 1])
        out[i] = p
    return out
