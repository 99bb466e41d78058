"""Pure-numpy reference implementations of the per-bag kernels.

Each function mirrors its numba twin in ``_numba``; the two backends must
agree to floating-point noise (asserted in the test suite). Singleton
inference loops over cells through the same bag-forward code path so that
a cell's score is identical to the score of its singleton bag.
"""

import numpy as np

NAME = "numpy"

LOSS_EPS = 1e-7


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def _focal_terms(p, y, gamma_lo, gamma_hi, gamma_break):
    """Clamped focal loss and its derivative w.r.t. the bag score."""
    pc = min(max(p, LOSS_EPS), 1.0 - LOSS_EPS)
    p_true = pc if y == 1.0 else 1.0 - pc
    gamma = gamma_lo if p_true < gamma_break else gamma_hi
    if y == 1.0:
        loss = -((1.0 - pc) ** gamma) * np.log(pc)
        dldp = gamma * (1.0 - pc) ** (gamma - 1.0) * np.log(pc) - ((1.0 - pc) ** gamma) / pc
    else:
        loss = -(pc ** gamma) * np.log(1.0 - pc)
        dldp = -gamma * pc ** (gamma - 1.0) * np.log(1.0 - pc) + (pc ** gamma) / (1.0 - pc)
    return loss, dldp, pc


def _embed(w1, b1, w2, b2, x):
    s = np.tanh(x @ w1.T + b1)
    h = np.tanh(s @ w2.T + b2)
    return s, h


def atten_forward(w1, b1, w2, b2, v, wa, g, gb, x):
    """Bag forward pass. Returns (bag score, attention weights)."""
    _, h = _embed(w1, b1, w2, b2, x)
    t = np.tanh(h @ v.T)
    logits = t @ wa
    e = np.exp(logits - logits.max())
    w = e / e.sum()
    z = h.T @ w
    p = _sigmoid(float(g @ z + gb[0]))
    return p, w


def atten_grad(w1, b1, w2, b2, v, wa, g, gb, x, y,
               gamma_lo, gamma_hi, gamma_break):
    """Fused forward + focal loss + exact backward for one bag.

    Returns (loss, bag score, gradients in parameter order).
    """
    s, h = _embed(w1, b1, w2, b2, x)
    t = np.tanh(h @ v.T)
    logits = t @ wa
    e = np.exp(logits - logits.max())
    w = e / e.sum()
    z = h.T @ w
    p = _sigmoid(float(g @ z + gb[0]))

    loss, dldp, pc = _focal_terms(p, y, gamma_lo, gamma_hi, gamma_break)
    dlogit = dldp * pc * (1.0 - pc)

    dg = dlogit * z
    dgb = np.array([dlogit])
    dz = dlogit * g

    dwgt = h @ dz                      # d loss / d w_i
    dh = np.outer(w, dz)               # via z = sum_i w_i h_i
    shift = w @ dwgt
    da = w * (dwgt - shift)            # softmax backward
    dwa = t.T @ da
    dt = np.outer(da, wa)
    dpre_v = dt * (1.0 - t * t)
    dv = dpre_v.T @ h
    dh += dpre_v @ v

    du2 = dh * (1.0 - h * h)
    dw2 = du2.T @ s
    db2 = du2.sum(axis=0)
    ds = du2 @ w2
    du1 = ds * (1.0 - s * s)
    dw1 = du1.T @ x
    db1 = du1.sum(axis=0)
    return loss, p, (dw1, db1, dw2, db2, dv, dwa, dg, dgb)


def atten_infer(w1, b1, w2, b2, v, wa, g, gb, cells):
    """Score each row of cells as a singleton bag."""
    n = cells.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i], _ = atten_forward(w1, b1, w2, b2, v, wa, g, gb, cells[i : i + 1])
    return out


def minet_forward(w1, b1, w2, b2, w3, b3, x):
    """Bag score: mean of logistic instance scores."""
    _, h = _embed(w1, b1, w2, b2, x)
    logits = h @ w3 + b3[0]
    f = np.empty(logits.shape[0])
    for i in range(logits.shape[0]):
        f[i] = _sigmoid(float(logits[i]))
    return float(f.mean()), f


def minet_grad(w1, b1, w2, b2, w3, b3, x, y, gamma_lo, gamma_hi, gamma_break):
    s, h = _embed(w1, b1, w2, b2, x)
    logits = h @ w3 + b3[0]
    f = np.empty(logits.shape[0])
    for i in range(logits.shape[0]):
        f[i] = _sigmoid(float(logits[i]))
    n = x.shape[0]
    p = float(f.mean())

    loss, dldp, _ = _focal_terms(p, y, gamma_lo, gamma_hi, gamma_break)
    dlogits = (dldp / n) * f * (1.0 - f)

    dw3 = h.T @ dlogits
    db3 = np.array([dlogits.sum()])
    dh = np.outer(dlogits, w3)

    du2 = dh * (1.0 - h * h)
    dw2 = du2.T @ s
    db2 = du2.sum(axis=0)
    ds = du2 @ w2
    du1 = ds * (1.0 - s * s)
    dw1 = du1.T @ x
    db1 = du1.sum(axis=0)
    return loss, p, (dw1, db1, dw2, db2, dw3, db3)


def minet_infer(w1, b1, w2, b2, w3, b3, cells):
    n = cells.shape[0]
    out = np.empty(n)
    for i in range(n):
        p, _ = minet_forward(w1, b1, w2, b2, w3, b3, cells[i : i + 1])
        out[i] = p
    return out
