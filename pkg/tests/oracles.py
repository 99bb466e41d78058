"""Independent reference implementations the test suite checks against.

Deliberately slow and literal: exact rational arithmetic where float
rounding could flip an argmax, explicit loops where the library
vectorizes. Nothing here imports from milclean's internals beyond data
containers.
"""

from fractions import Fraction

import numpy as np


def exact_otsu(values, bins):
    """Between-class-variance-maximizing bin boundary, in exact arithmetic.

    Histogram counts are integers and bin centers are rationals, so every
    candidate split's score n_lo * n_hi * (mu_lo - mu_hi)^2 is a Fraction;
    ties resolve to the lowest boundary without any rounding ambiguity.
    """
    hist = np.histogram(np.asarray(values, float), bins=bins, range=(0.0, 1.0))[0]
    counts = [int(c) for c in hist]
    centers = [Fraction(2 * k + 1, 2 * bins) for k in range(bins)]
    total = sum(counts)
    weighted_total = sum(c * x for c, x in zip(counts, centers))
    best_k, best_v = None, None
    n_lo = 0
    w_lo = Fraction(0)
    for k in range(bins - 1):
        n_lo += counts[k]
        w_lo += counts[k] * centers[k]
        n_hi = total - n_lo
        if n_lo == 0 or n_hi == 0:
            continue
        mu_lo = w_lo / n_lo
        mu_hi = (weighted_total - w_lo) / n_hi
        v = n_lo * n_hi * (mu_lo - mu_hi) ** 2
        if best_v is None or v > best_v:
            best_k, best_v = k, v
    if best_k is None:
        return None
    return (best_k + 1) / bins


def loop_confusion(pred, gt, tissue):
    """Cell-by-cell confusion counting with explicit Python loops."""
    tp = fp = tn = fn = 0
    h, w = np.asarray(tissue).shape
    for y in range(h):
        for x in range(w):
            if not tissue[y][x]:
                continue
            p, g = bool(pred[y][x]), bool(gt[y][x])
            if p and g:
                tp += 1
            elif p and not g:
                fp += 1
            elif not p and g:
                fn += 1
            else:
                tn += 1
    return tp, fp, tn, fn


def brute_knn_vote(embeddings, labels, k):
    """O(n^2) majority vote over exact k nearest neighbors.

    Neighbors are ordered by (squared distance, index); ties in the vote
    keep the point's own label.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    n = len(emb)
    out = np.asarray(labels, dtype=bool).copy()
    for i in range(n):
        cand = []
        for j in range(n):
            if j == i:
                continue
            d2 = float(((emb[i] - emb[j]) ** 2).sum())
            cand.append((d2, j))
        cand.sort()
        votes = [bool(labels[j]) for _, j in cand[:k]]
        ones = sum(votes)
        if 2 * ones > k:
            out[i] = True
        elif 2 * ones < k:
            out[i] = False
    return out
