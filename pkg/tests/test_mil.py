import math

import numpy as np
import pytest

from milclean.errors import DegenerateAnnotationError, NumericError, ValidationError
from milclean.grids import AnnotationMask, PatchGrid
from milclean.mil import (
    MILDataset,
    TrainConfig,
    backward,
    build_mil_dataset,
    concat_datasets,
    focal_loss,
    forward_attention,
    forward_minet,
    infer_singletons,
    learning_rate,
    loss_and_grads,
    make_model,
    multi_slide_train,
    shuffle_dataset,
    train,
)

CFG = TrainConfig(num_bags=10, bag_size=3, hidden=6, embed_dim=5, attn_dim=4)


def _slide(rng, h=8, w=9, d=4, frac=0.4):
    feats = rng.normal(size=(h, w, d))
    tissue = rng.random((h, w)) < 0.9
    coarse = tissue & (rng.random((h, w)) < frac)
    feats[coarse] += 1.0
    return PatchGrid(feats, tissue), AnnotationMask(coarse, "coarse")


# ---------------------------------------------------------------- focal loss

def test_focal_gamma_zero_is_cross_entropy(rng):
    cfg = TrainConfig(gamma_lo=0.0, gamma_hi=0.0)
    for p in rng.uniform(1e-4, 1 - 1e-4, size=50):
        for y in (0.0, 1.0):
            loss, _ = focal_loss(p, y, cfg)
            ce = -math.log(p) if y else -math.log(1 - p)
            assert abs(loss - ce) < 1e-12


def test_focal_exponent_switches_on_true_class_probability():
    cfg = TrainConfig(gamma_lo=5.0, gamma_hi=3.0, gamma_break=0.2)
    # y=1, p=0.1: true-class prob 0.1 < 0.2, sharp branch
    loss, _ = focal_loss(0.1, 1.0, cfg)
    assert abs(loss - (0.9**5) * math.log(10)) < 1e-12
    # y=1, p=0.5: true-class prob 0.5 >= 0.2, flat branch
    loss, _ = focal_loss(0.5, 1.0, cfg)
    assert abs(loss - (0.5**3) * math.log(2)) < 1e-12
    # y=0, p=0.9: true-class prob 0.1 again selects the sharp branch
    loss, _ = focal_loss(0.9, 0.0, cfg)
    assert abs(loss - (0.9**5) * math.log(10)) < 1e-12


def test_focal_clamps_extreme_probabilities():
    cfg = TrainConfig()
    for p, y in ((0.0, 1.0), (1.0, 0.0), (0.0, 0.0), (1.0, 1.0)):
        loss, dldp = focal_loss(p, y, cfg)
        assert math.isfinite(loss) and math.isfinite(dldp)


def test_focal_derivative_matches_finite_differences(rng):
    cfg = TrainConfig()
    h = 1e-7
    for p in rng.uniform(0.05, 0.95, size=30):
        if abs(p - cfg.gamma_break) < 1e-3 or abs((1 - p) - cfg.gamma_break) < 1e-3:
            continue  # keep clear of the exponent switch
        for y in (0.0, 1.0):
            _, dldp = focal_loss(p, y, cfg)
            lp, _ = focal_loss(p + h, y, cfg)
            lm, _ = focal_loss(p - h, y, cfg)
            assert abs(dldp - (lp - lm) / (2 * h)) < 1e-4 * max(1.0, abs(dldp))


# ---------------------------------------------------------------- gradients

def _gradcheck(model, bag, y, cfg, fd_h=1e-5, tol=1e-4):
    grads = backward(model, bag, y, cfg)
    worst = 0.0
    for name, g in zip(model.param_names(), grads):
        arr = getattr(model, name)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            keep = arr[ix]
            arr[ix] = keep + fd_h
            lp, _ = _loss_of(model, bag, y, cfg)
            arr[ix] = keep - fd_h
            lm, _ = _loss_of(model, bag, y, cfg)
            arr[ix] = keep
            fd = (lp - lm) / (2 * fd_h)
            an = np.asarray(g)[ix]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            worst = max(worst, rel)
            assert rel < tol, f"{name}{ix}: analytic {an} vs fd {fd}"
    return worst


def _loss_of(model, bag, y, cfg):
    loss, p, _ = loss_and_grads(model, bag, y, cfg)
    return loss, p


@pytest.mark.parametrize("kind", ["attention", "minet"])
def test_gradients_match_finite_differences(rng, kind):
    cfg = TrainConfig(hidden=6, embed_dim=5, attn_dim=4, seed=3)
    model = make_model(kind, 4, cfg)
    if kind == "attention":
        model.g = rng.normal(size=model.g.shape) * 0.5  # move off the zero init
    bag = rng.normal(size=(3, 4))
    for y in (0.0, 1.0):
        _gradcheck(model, bag, y, cfg)


def test_identical_instances_leave_attention_split_flat(rng):
    # when every instance is the same row, reweighting cannot change z,
    # so the attention parameters receive (numerically) zero gradient
    cfg = TrainConfig(hidden=6, embed_dim=5, attn_dim=4, seed=1)
    model = make_model("attention", 4, cfg)
    model.g = rng.normal(size=model.g.shape)
    bag = np.repeat(rng.normal(size=(1, 4)), 5, axis=0)
    grads = dict(zip(model.param_names(), backward(model, bag, 1.0, cfg)))
    assert np.abs(grads["wa"]).max() < 1e-10
    assert np.abs(grads["v"]).max() < 1e-10


def test_forward_attention_weights_sum_to_one(rng):
    model = make_model("attention", 4, CFG)
    p, w, x = forward_attention(model, rng.normal(size=(6, 4)))
    assert 0.0 < p < 1.0
    assert abs(w.sum() - 1.0) < 1e-12
    assert x.shape == (6, 4)


def test_forward_minet_is_mean_of_instance_scores(rng):
    model = make_model("minet", 4, CFG)
    bag = rng.normal(size=(7, 4))
    p = forward_minet(model, bag)
    singles = [forward_minet(model, bag[i : i + 1]) for i in range(7)]
    assert abs(p - np.mean(singles)) < 1e-12


def test_forward_rejects_wrong_feature_dim(rng):
    model = make_model("attention", 4, CFG)
    with pytest.raises(ValidationError):
        forward_attention(model, rng.normal(size=(3, 5)))


# ---------------------------------------------------------------- datasets

def test_build_dataset_interleaves_classes(rng):
    grid, coarse = _slide(rng)
    ds = build_mil_dataset(grid, coarse, CFG)
    assert ds.instances.shape == (10, 3, 4)
    assert ds.labels.tolist() == [1, 0, 1, 0, 1, 0, 1, 0, 1, 0]
    pos, neg = set(), set()
    feats = grid.features[grid.tissue & coarse.cells]
    for b in range(ds.num_bags):
        rows = ds.instances[b]
        member = (feats[None, :, :] == rows[:, None, :]).all(-1).any(1)
        assert member.all() == bool(ds.labels[b])


def test_build_dataset_deterministic(rng):
    grid, coarse = _slide(rng)
    a = build_mil_dataset(grid, coarse, CFG, seed=7)
    b = build_mil_dataset(grid, coarse, CFG, seed=7)
    assert np.array_equal(a.instances, b.instances)
    c = build_mil_dataset(grid, coarse, CFG, seed=8)
    assert not np.array_equal(a.instances, c.instances)


def test_build_dataset_requires_both_pools(rng):
    grid, _ = _slide(rng)
    empty = AnnotationMask(np.zeros(grid.tissue.shape, dtype=bool), "coarse")
    with pytest.raises(DegenerateAnnotationError):
        build_mil_dataset(grid, empty, CFG)
    full = AnnotationMask(np.ones(grid.tissue.shape, dtype=bool), "coarse")
    with pytest.raises(DegenerateAnnotationError):
        build_mil_dataset(grid, full, CFG)


def test_concat_and_shuffle_preserve_rows(rng):
    grid, coarse = _slide(rng)
    a = build_mil_dataset(grid, coarse, CFG, seed=1, slide_id=0)
    b = build_mil_dataset(grid, coarse, CFG, seed=2, slide_id=1)
    both = concat_datasets([a, b])
    assert both.num_bags == 20
    assert set(both.provenance) == {0, 1}
    mixed = shuffle_dataset(both, 5)
    assert not np.array_equal(mixed.labels, both.labels)
    order = np.lexsort(mixed.instances.reshape(20, -1).T)
    base = np.lexsort(both.instances.reshape(20, -1).T)
    assert np.array_equal(mixed.instances.reshape(20, -1)[order],
                          both.instances.reshape(20, -1)[base])


# ---------------------------------------------------------------- training

def test_learning_rate_halves_on_schedule():
    cfg = TrainConfig(lr0=1e-3, lr_halving_period=100)
    assert learning_rate(0, cfg) == 1e-3
    assert learning_rate(99, cfg) == 1e-3
    assert learning_rate(100, cfg) == 5e-4
    assert learning_rate(350, cfg) == 1.25e-4


@pytest.mark.parametrize("kind", ["attention", "minet"])
def test_train_is_deterministic_and_pure(rng, kind):
    grid, coarse = _slide(rng)
    ds = build_mil_dataset(grid, coarse, CFG)
    model = make_model(kind, 4, CFG)
    before = [p.copy() for p in model.params()]
    out1, trace1 = train(model, ds, CFG)
    out2, trace2 = train(model, ds, CFG)
    for a, b in zip(out1.params(), out2.params()):
        assert np.array_equal(a, b)
    assert trace1 == trace2
    for a, b in zip(model.params(), before):
        assert np.array_equal(a, b)  # input model untouched
    assert len(trace1) == ds.num_bags
    steps, losses, lrs = zip(*trace1)
    assert steps == tuple(range(ds.num_bags))
    assert all(math.isfinite(v) for v in losses)
    assert lrs[0] == CFG.lr0


def test_train_moves_parameters(rng):
    grid, coarse = _slide(rng)
    ds = build_mil_dataset(grid, coarse, CFG)
    model = make_model("minet", 4, CFG)
    out, _ = train(model, ds, CFG)
    assert any(not np.array_equal(a, b) for a, b in zip(out.params(), model.params()))


def test_train_raises_numeric_error_with_step(rng):
    bad = np.full((4, 2, 3), np.nan)
    ds = MILDataset(bad, np.array([1.0, 0.0, 1.0, 0.0]))
    model = make_model("attention", 3, CFG)
    with pytest.raises(NumericError) as exc:
        train(model, ds, CFG)
    assert exc.value.step == 0


def test_multi_slide_single_pair_matches_direct_train(rng):
    grid, coarse = _slide(rng)
    joint, _ = multi_slide_train([(grid, coarse)], CFG, "attention")
    ds = build_mil_dataset(grid, coarse, CFG, seed=CFG.seed, slide_id=0)
    direct, _ = train(make_model("attention", 4, CFG), ds, CFG)
    for a, b in zip(joint.params(), direct.params()):
        assert np.array_equal(a, b)


def test_multi_slide_pools_all_slides(rng):
    pairs = [_slide(rng) for _ in range(3)]
    model, trace = multi_slide_train(pairs, CFG, "minet")
    assert len(trace) == 3 * CFG.num_bags
    with pytest.raises(ValidationError):
        multi_slide_train([], CFG)


# ---------------------------------------------------------------- inference

def test_infer_singletons_matches_bag_forward(rng):
    grid, coarse = _slide(rng)
    model, _ = multi_slide_train([(grid, coarse)], CFG, "attention")
    hm = infer_singletons(model, grid)
    assert np.isnan(hm.scores[~grid.tissue]).all()
    ys, xs = np.nonzero(grid.tissue)
    for y, x in list(zip(ys, xs))[:20]:
        p, w, _ = forward_attention(model, grid.features[y, x][None, :])
        assert hm.scores[y, x] == p  # bitwise, same kernel path
        assert w[0] == 1.0
