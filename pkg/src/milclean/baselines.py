"""Two comparison cleaners: k-nearest-neighbor voting and rank pruning.

Both operate directly on per-cell features and noisy labels (no bags).
The nearest-neighbor cleaner relabels each tissue cell by the majority
vote of its neighbors in an embedding space; rank pruning cross-validates
an instance classifier, discards the cells whose out-of-fold scores
contradict their labels most confidently, and refits on the rest.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateAnnotationError, ValidationError
from .grids import AnnotationMask, Heatmap
from .mil import MILDataset, TrainConfig, train
from .models import make_minet_model

EMBEDDINGS = ("raw_features", "trained_penultimate")


@dataclass
class DkNNConfig:
    k: int = 10
    embedding: str = "trained_penultimate"
    lr: float = 1e-3
    hidden: int = 64
    embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.embedding not in EMBEDDINGS:
            raise ValidationError("embedding must be one of %s" % (EMBEDDINGS,))


@dataclass
class RankPruningConfig:
    folds: int = 5
    epochs: int = 1
    lr: float = 1e-3
    hidden: int = 64
    embed_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValidationError("folds must be >= 2")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")


def _tissue_table(grid, coarse):
    feats = grid.features.reshape(-1, grid.feature_dim)
    tissue = grid.tissue.reshape(-1)
    labels = coarse.cells.reshape(-1)
    return feats[tissue], labels[tissue]


def fit_instance_classifier(feats, labels, seed, epochs, lr, hidden, embed_dim):
    """Train the compact instance stack on singleton bags with plain
    cross entropy (gammas zero), one Adam step per cell per epoch in a
    seeded shuffled order, constant learning rate."""
    n, d = feats.shape
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(n) for _ in range(epochs)])
    dataset = MILDataset(feats[order, None, :], labels[order].astype(np.float64))
    cfg = TrainConfig(
        num_bags=max(2, len(order)),
        bag_size=1,
        lr0=lr,
        lr_halving_period=10 ** 9,
        gamma_lo=0.0,
        gamma_hi=0.0,
        gamma_break=0.5,
        hidden=hidden,
        embed_dim=embed_dim,
        seed=seed,
    )
    model = make_minet_model(d, hidden=hidden, embed_dim=embed_dim, seed=seed)
    trained, _ = train(model, dataset, cfg)
    return trained


def instance_scores(model, feats):
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    return kernels.minet_infer(
        model.w1, model.b1, model.w2, model.b2, model.w3, model.b3, feats
    )


def penultimate_embedding(model, feats):
    """Activations of the layer feeding the logistic unit."""
    s = np.tanh(feats @ model.w1.T + model.b1)
    return np.tanh(s @ model.w2.T + model.b2)


def _knn_indices(emb, k, chunk=128):
    """Indices of each row's k nearest rows (Euclidean), self excluded.

    Distances are computed as explicit squared differences (not the
    norm-expansion shortcut) so values match a per-pair oracle bitwise;
    exact ties resolve toward the lower index via stable sorting.
    """
    n = emb.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = np.sum((emb[lo:hi, None, :] - emb[None, :, :]) ** 2, axis=-1)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def dknn_refine(grid, coarse, config):
    """Relabel every tissue cell by the majority label of its k nearest
    neighbors; ties (even k) keep the cell's original label.

    The default embedding is the penultimate layer of an instance
    classifier trained for one epoch on the noisy labels, which spreads
    the classes further apart than raw features; ``raw_features`` skips
    that training. Off-tissue cells pass through unchanged.
    """
    feats, labels = _tissue_table(grid, coarse)
    n = len(feats)
    if n < config.k + 1:
        raise ValidationError("need at least k+1 tissue cells, got %d" % n)
    if config.embedding == "trained_penultimate":
        clf = fit_instance_classifier(
            feats, labels, config.seed, 1, config.lr, config.hidden, config.embed_dim
        )
        emb = penultimate_embedding(clf, feats)
    else:
        emb = np.ascontiguousarray(feats, dtype=np.float64)
    neighbors = _knn_indices(emb, config.k)
    votes = labels[neighbors].sum(axis=1)
    new_labels = np.where(2 * votes > config.k, True,
                          np.where(2 * votes < config.k, False, labels))
    cells = coarse.cells.reshape(-1).copy()
    cells[grid.tissue.reshape(-1)] = new_labels
    return AnnotationMask(cells.reshape(coarse.cells.shape), role="refined")


def _stratified_folds(labels, folds, seed):
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    for value in (False, True):
        idx = np.flatnonzero(labels == value)
        fold_of[idx[rng.permutation(len(idx))]] = np.arange(len(idx)) % folds
    return fold_of


def rank_pruning_refine(grid, coarse, config):
    """Prune label-contradicting cells by confidence, refit, rescore.

    Out-of-fold scores come from a stratified K-fold fit of the instance
    classifier. The class-conditional mean scores bound the confident
    mistakes: noisily-negative cells scoring at or above the positive
    mean count as likely false negatives, noisily-positive cells at or
    below the negative mean as likely false positives. That many cells
    per class (the least confident under their own label) are pruned,
    the classifier is refit on the survivors and scores every tissue
    cell. Returns the score heatmap and its 0.5-thresholded mask; the
    shared postprocessing chain binarizes heatmaps for comparison runs.
    """
    feats, labels = _tissue_table(grid, coarse)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateAnnotationError("rank pruning needs both label classes")
    if min(n_pos, n_neg) < config.folds:
        raise DegenerateAnnotationError(
            "fewer cells in one class than folds; decrease folds or widen the slide set"
        )
    fold_of = _stratified_folds(labels, config.folds, config.seed)
    oof = np.empty(len(labels))
    for f in range(config.folds):
        tr = fold_of != f
        clf = fit_instance_classifier(
            feats[tr], labels[tr], config.seed + f + 1,
            config.epochs, config.lr, config.hidden, config.embed_dim,
        )
        oof[~tr] = instance_scores(clf, feats[~tr])
    mu1 = oof[labels].mean()
    mu0 = oof[~labels].mean()
    n_fn = int(np.sum(~labels & (oof >= mu1)))
    n_fp = int(np.sum(labels & (oof <= mu0)))
    if n_fp >= n_pos or n_fn >= n_neg:
        raise DegenerateAnnotationError("pruning would empty a label class")
    keep = np.ones(len(labels), dtype=bool)
    pos_idx = np.flatnonzero(labels)
    neg_idx = np.flatnonzero(~labels)
    if n_fp:
        keep[pos_idx[np.argsort(oof[pos_idx], kind="stable")[:n_fp]]] = False
    if n_fn:
        keep[neg_idx[np.argsort(-oof[neg_idx], kind="stable")[:n_fn]]] = False
    refit = fit_instance_classifier(
        feats[keep], labels[keep], config.seed,
        config.epochs, config.lr, config.hidden, config.embed_dim,
    )
    scores = instance_scores(refit, feats)
    flat = np.full(grid.tissue.size, np.nan)
    flat[grid.tissue.reshape(-1)] = scores
    heatmap = Heatmap(flat.reshape(grid.height, grid.width))
    cells = np.zeros(grid.tissue.size, dtype=bool)
    cells[grid.tissue.reshape(-1)] = scores > 0.5
    mask = AnnotationMask(cells.reshape(grid.height, grid.width), role="refined")
    return heatmap, mask
