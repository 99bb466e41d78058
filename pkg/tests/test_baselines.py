import numpy as np
import pytest
from oracles import brute_knn_vote

from milclean.baselines import (
    DkNNConfig,
    RankPruningConfig,
    _knn_indices,
    _stratified_folds,
    dknn_refine,
    fit_instance_classifier,
    instance_scores,
    penultimate_embedding,
    rank_pruning_refine,
)
from milclean.errors import DegenerateAnnotationError, ValidationError
from milclean.grids import AnnotationMask, PatchGrid
from milclean.metrics import report
from milclean.synth import S1Noise, SynthSpec, apply_noise, generate_synthetic_slide


def _noisy_slide(seed=3, rho=0.3):
    grid, gt = generate_synthetic_slide(
        SynthSpec(width=40, height=40, feature_dim=6, lesion_scale=6.0, seed=seed))
    coarse = apply_noise(gt, S1Noise(rho, rho, seed=seed + 1), tissue=grid.tissue)
    return grid, gt, coarse


# ---------------------------------------------------------------- kNN

def test_knn_indices_match_bruteforce(rng):
    emb = rng.normal(size=(60, 5))
    for k in (1, 3, 5):
        got = _knn_indices(emb, k)
        for i in range(60):
            d2 = ((emb - emb[i]) ** 2).sum(axis=1)
            d2[i] = np.inf
            want = sorted(range(60), key=lambda j: (d2[j], j))[:k]
            assert got[i].tolist() == want


def test_knn_chunking_is_invisible(rng):
    emb = rng.normal(size=(50, 4))
    assert np.array_equal(_knn_indices(emb, 7, chunk=8), _knn_indices(emb, 7, chunk=500))


def test_dknn_vote_matches_oracle(rng):
    for trial in range(5):
        n = 50
        feats = rng.normal(size=(n, 4))
        labels = rng.random(n) < 0.5
        grid = PatchGrid(feats.reshape(5, 10, 4), np.ones((5, 10), dtype=bool))
        coarse = AnnotationMask(labels.reshape(5, 10), "coarse")
        for k in (1, 3, 5):
            got = dknn_refine(grid, coarse, DkNNConfig(k=k, embedding="raw_features"))
            want = brute_knn_vote(feats, labels, k)
            assert np.array_equal(got.cells.reshape(-1), want)


def test_dknn_even_k_tie_keeps_original_label():
    # unit-square corners with labels alternating along each edge: each
    # point's two nearest neighbors (the adjacent corners) disagree, so
    # every k=2 vote ties and the original labels survive
    feats = np.array([[0.0, 0], [1, 0], [0, 1], [1, 1]])
    labels = np.array([True, False, True, False])
    grid = PatchGrid(feats.reshape(1, 4, 2), np.ones((1, 4), dtype=bool))
    coarse = AnnotationMask(labels.reshape(1, 4), "coarse")
    got = dknn_refine(grid, coarse, DkNNConfig(k=2, embedding="raw_features"))
    assert np.array_equal(got.cells.reshape(-1), labels)
    # same geometry at k=1 is not a tie: corner 0 adopts corner 1's label
    got1 = dknn_refine(grid, coarse, DkNNConfig(k=1, embedding="raw_features"))
    assert not got1.cells.reshape(-1)[0]


def test_dknn_trained_embedding_cleans_noise():
    grid, gt, coarse = _noisy_slide()
    refined = dknn_refine(grid, coarse, DkNNConfig(seed=7))
    before = report(coarse, gt, grid.tissue).f1
    after = report(refined, gt, grid.tissue).f1
    assert after > before + 0.1
    assert refined.role == "refined"
    assert np.array_equal(refined.cells[~grid.tissue], coarse.cells[~grid.tissue])


def test_dknn_needs_enough_cells(rng):
    grid = PatchGrid(rng.normal(size=(1, 3, 2)), np.ones((1, 3), dtype=bool))
    coarse = AnnotationMask(np.array([[True, False, True]]), "coarse")
    with pytest.raises(ValidationError):
        dknn_refine(grid, coarse, DkNNConfig(k=5, embedding="raw_features"))


def test_dknn_deterministic():
    grid, _, coarse = _noisy_slide()
    a = dknn_refine(grid, coarse, DkNNConfig(seed=5))
    b = dknn_refine(grid, coarse, DkNNConfig(seed=5))
    assert np.array_equal(a.cells, b.cells)


# ---------------------------------------------------------------- classifier

def test_instance_classifier_learns_separated_classes(rng):
    feats = np.concatenate([rng.normal(-1.5, 0.5, size=(80, 3)),
                            rng.normal(1.5, 0.5, size=(80, 3))])
    labels = np.concatenate([np.zeros(80, bool), np.ones(80, bool)])
    clf = fit_instance_classifier(feats, labels, seed=0, epochs=3, lr=1e-2,
                                  hidden=8, embed_dim=6)
    scores = instance_scores(clf, feats)
    assert ((scores > 0.5) == labels).mean() > 0.95
    emb = penultimate_embedding(clf, feats)
    assert emb.shape == (160, 6)
    assert np.abs(emb).max() <= 1.0  # bounded activations


# ---------------------------------------------------------------- rank pruning

def test_stratified_folds_balanced(rng):
    labels = rng.random(103) < 0.3
    fold_of = _stratified_folds(labels, 5, seed=2)
    assert set(fold_of) == set(range(5))
    for value in (False, True):
        counts = np.bincount(fold_of[labels == value], minlength=5)
        assert counts.max() - counts.min() <= 1
    again = _stratified_folds(labels, 5, seed=2)
    assert np.array_equal(fold_of, again)


def test_rank_pruning_cleans_noise():
    grid, gt, coarse = _noisy_slide()
    heatmap, mask = rank_pruning_refine(grid, coarse, RankPruningConfig(seed=11))
    assert np.isnan(heatmap.scores[~grid.tissue]).all()
    before = report(coarse, gt, grid.tissue).f1
    after = report(mask, gt, grid.tissue).f1
    assert after > before + 0.1
    # the direct mask is the heatmap cut at 0.5
    on_tissue = grid.tissue & heatmap.present
    assert np.array_equal(mask.cells[on_tissue], heatmap.scores[on_tissue] > 0.5)


def test_rank_pruning_deterministic():
    grid, _, coarse = _noisy_slide()
    a_hm, a = rank_pruning_refine(grid, coarse, RankPruningConfig(seed=4))
    b_hm, b = rank_pruning_refine(grid, coarse, RankPruningConfig(seed=4))
    assert np.array_equal(a.cells, b.cells)
    assert np.array_equal(a_hm.scores, b_hm.scores, equal_nan=True)


def test_rank_pruning_rejects_single_class(rng):
    grid = PatchGrid(rng.normal(size=(4, 5, 2)), np.ones((4, 5), dtype=bool))
    coarse = AnnotationMask(np.ones((4, 5), dtype=bool), "coarse")
    with pytest.raises(DegenerateAnnotationError):
        rank_pruning_refine(grid, coarse, RankPruningConfig())


def test_rank_pruning_rejects_tiny_classes(rng):
    grid = PatchGrid(rng.normal(size=(4, 5, 2)), np.ones((4, 5), dtype=bool))
    cells = np.zeros((4, 5), dtype=bool)
    cells[0, 0] = cells[0, 1] = True  # 2 positives < 5 folds
    coarse = AnnotationMask(cells, "coarse")
    with pytest.raises(DegenerateAnnotationError):
        rank_pruning_refine(grid, coarse, RankPruningConfig(folds=5))


def test_config_validation():
    with pytest.raises(ValidationError):
        DkNNConfig(k=0)
    with pytest.raises(ValidationError):
        DkNNConfig(embedding="pca")
    with pytest.raises(ValidationError):
        RankPruningConfig(folds=1)
    with pytest.raises(ValidationError):
        RankPruningConfig(epochs=0)
