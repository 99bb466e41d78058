"""Bag construction, focal loss, per-bag Adam training and singleton inference.

Training treats every coarse-positive tissue cell as a candidate member of
positive bags and every coarse-negative tissue cell as a candidate member
of negative bags, samples fixed-size bags with replacement, and runs one
Adam step per bag. Inference scores each tissue cell as a one-instance bag
through the same forward kernel, so a cell's score is exactly the bag
probability the trained model would assign to it alone.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAnnotationError, NumericError, ValidationError
from .grids import Heatmap
from .models import AttentionMILModel, MiNetModel, make_attention_model, make_minet_model
from . import kernels

LOSS_EPS = kernels.LOSS_EPS

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Knobs for bag sampling, the loss schedule and the optimizer."""

    num_bags: int = 1000
    bag_size: int = 10
    lr0: float = 5e-5
    lr_halving_period: int = 100
    gamma_lo: float = 5.0
    gamma_hi: float = 3.0
    gamma_break: float = 0.2
    hidden: int = 128
    embed_dim: int = 128
    attn_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.num_bags < 2:
            raise ValidationError("num_bags must be >= 2")
        if self.bag_size < 1:
            raise ValidationError("bag_size must be >= 1")
        if self.lr0 <= 0:
            raise ValidationError("lr0 must be positive")
        if self.lr_halving_period < 1:
            raise ValidationError("lr_halving_period must be >= 1")
        if not 0.0 < self.gamma_break < 1.0:
            raise ValidationError("gamma_break must lie in (0, 1)")


@dataclass
class MILDataset:
    """A stack of equally sized bags with 0/1 bag labels.

    ``provenance`` carries the source-slide identifier of each bag so
    multi-slide pools stay auditable after shuffling.
    """

    instances: np.ndarray  # (num_bags, bag_size, feature_dim)
    labels: np.ndarray  # (num_bags,) float64 in {0, 1}
    provenance: np.ndarray = None  # (num_bags,) int64 slide ids

    def __post_init__(self):
        self.instances = np.ascontiguousarray(self.instances, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.instances.ndim != 3:
            raise ValidationError("instances must be (num_bags, bag_size, feature_dim)")
        if self.labels.shape != (self.instances.shape[0],):
            raise ValidationError("labels length must match number of bags")
        if self.provenance is None:
            self.provenance = np.zeros(self.instances.shape[0], dtype=np.int64)
        else:
            self.provenance = np.asarray(self.provenance, dtype=np.int64)
            if self.provenance.shape != (self.instances.shape[0],):
                raise ValidationError("provenance length must match number of bags")

    @property
    def num_bags(self):
        return self.instances.shape[0]


def focal_loss(p, y, config):
    """Focal loss of a bag probability and its derivative d(loss)/dp.

    The exponent depends on the probability assigned to the true class:
    below ``gamma_break`` (a badly wrong prediction) the sharper
    ``gamma_lo`` applies, otherwise ``gamma_hi``. With both gammas zero
    this is plain cross entropy. ``p`` is clamped away from {0, 1} before
    the logs so the loss stays finite.
    """
    pc = min(max(float(p), LOSS_EPS), 1.0 - LOSS_EPS)
    y = float(y)
    p_true = pc if y == 1.0 else 1.0 - pc
    gamma = config.gamma_lo if p_true < config.gamma_break else config.gamma_hi
    if y == 1.0:
        loss = -((1.0 - pc) ** gamma) * math.log(pc)
        dldp = gamma * (1.0 - pc) ** (gamma - 1.0) * math.log(pc) - ((1.0 - pc) ** gamma) / pc
    else:
        loss = -(pc ** gamma) * math.log(1.0 - pc)
        dldp = -gamma * pc ** (gamma - 1.0) * math.log(1.0 - pc) + (pc ** gamma) / (1.0 - pc)
    return loss, dldp


def label_pools(grid, coarse):
    """Feature rows of the coarse-positive and coarse-negative tissue cells."""
    feats = grid.features.reshape(-1, grid.feature_dim)
    tissue = grid.tissue.reshape(-1)
    lab = coarse.cells.reshape(-1)
    pos = feats[tissue & lab]
    neg = feats[tissue & ~lab]
    return pos, neg


def build_mil_dataset(grid, coarse, config, seed=None, slide_id=0):
    """Sample an interleaved positive/negative bag stack from one slide.

    Even bag indices are positive bags drawn (with replacement) from the
    coarse-positive tissue cells, odd indices negative bags from the
    coarse-negative ones, alternating so batch-1 training never sees a
    long single-class phase. Raises if either pool is empty, since the
    annotation then carries no usable signal for one class. ``seed``
    defaults to ``config.seed``.
    """
    pos, neg = label_pools(grid, coarse)
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateAnnotationError(
            "coarse annotation has no %s tissue cells; widen the slide set"
            % ("positive" if len(pos) == 0 else "negative")
        )
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(seed)
    num_bags = config.num_bags
    bag_size = config.bag_size
    instances = np.empty((num_bags, bag_size, grid.feature_dim))
    labels = np.empty(num_bags)
    for b in range(num_bags):
        pool = pos if b % 2 == 0 else neg
        idx = rng.integers(0, len(pool), size=bag_size)
        instances[b] = pool[idx]
        labels[b] = 1.0 if b % 2 == 0 else 0.0
    return MILDataset(instances, labels, np.full(num_bags, slide_id, dtype=np.int64))


def concat_datasets(datasets):
    if not datasets:
        raise ValidationError("need at least one dataset")
    return MILDataset(
        np.concatenate([d.instances for d in datasets], axis=0),
        np.concatenate([d.labels for d in datasets], axis=0),
        np.concatenate([d.provenance for d in datasets], axis=0),
    )


def shuffle_dataset(dataset, seed):
    perm = np.random.default_rng(seed).permutation(dataset.num_bags)
    return MILDataset(dataset.instances[perm], dataset.labels[perm], dataset.provenance[perm])


def _as_bag(bag):
    x = np.ascontiguousarray(bag, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError("a bag must be a (n_instances, feature_dim) array")
    return x


def forward_attention(model, bag):
    """Bag probability, per-instance attention weights, and the backward
    cache (the validated instance array; activations are re-derived from
    it inside the fused gradient kernel)."""
    x = _as_bag(bag)
    if x.shape[1] != model.w1.shape[1]:
        raise ValidationError("bag feature_dim does not match model")
    p, w = kernels.atten_forward(
        model.w1, model.b1, model.w2, model.b2, model.v, model.wa, model.g, model.gb, x
    )
    return p, w, x


def forward_minet(model, bag):
    """Bag probability: the mean of the per-instance classifier outputs."""
    x = _as_bag(bag)
    if x.shape[1] != model.w1.shape[1]:
        raise ValidationError("bag feature_dim does not match model")
    p, _ = kernels.minet_forward(
        model.w1, model.b1, model.w2, model.b2, model.w3, model.b3, x
    )
    return p


def loss_and_grads(model, bag, y, config):
    """Focal loss, bag probability and parameter gradients for one bag,
    ordered like ``model.params()``."""
    x = _as_bag(bag)
    args = (float(y), config.gamma_lo, config.gamma_hi, config.gamma_break)
    if isinstance(model, AttentionMILModel):
        return kernels.atten_grad(
            model.w1, model.b1, model.w2, model.b2, model.v, model.wa, model.g, model.gb,
            x, *args
        )
    if isinstance(model, MiNetModel):
        return kernels.minet_grad(
            model.w1, model.b1, model.w2, model.b2, model.w3, model.b3, x, *args
        )
    raise ValidationError("unknown model type: %r" % (type(model).__name__,))


def backward(model, bag, y, config):
    """Analytic gradients of the focal loss w.r.t. every parameter, in
    ``model.params()`` order. The exponent schedule is treated as
    piecewise constant, so no gradient flows through the gamma switch."""
    _, _, grads = loss_and_grads(model, bag, y, config)
    return grads


def learning_rate(step, config):
    """Step-size schedule: ``lr0`` halved every ``lr_halving_period`` bags."""
    return config.lr0 * 0.5 ** (step // config.lr_halving_period)


def train(model, dataset, config):
    """Run one Adam step per bag over ``dataset`` in order.

    Returns a trained copy of ``model`` (the input is not mutated) and a
    loss trace of ``(step, loss, lr)`` tuples, one per bag. Raises
    ``NumericError`` naming the offending step if the loss, probability
    or any gradient stops being finite.
    """
    model = model.copy()
    params = model.params()
    mom = [np.zeros_like(p) for p in params]
    vel = [np.zeros_like(p) for p in params]
    trace = []
    for step in range(dataset.num_bags):
        x = dataset.instances[step]
        y = dataset.labels[step]
        loss, p, grads = loss_and_grads(model, x, y, config)
        if not (math.isfinite(loss) and math.isfinite(p)):
            raise NumericError("non-finite loss or probability", step=step)
        lr = learning_rate(step, config)
        t = step + 1
        bc1 = 1.0 - ADAM_BETA1 ** t
        bc2 = 1.0 - ADAM_BETA2 ** t
        for pi, (par, g) in enumerate(zip(params, grads)):
            if not np.all(np.isfinite(g)):
                raise NumericError(
                    "non-finite gradient for %s" % model.param_names()[pi], step=step
                )
            m = mom[pi]
            v = vel[pi]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            par -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        trace.append((step, loss, lr))
    return model, trace


def infer_singletons(model, grid):
    """Score every tissue cell as a one-instance bag.

    Each cell goes through the full bag forward pass alone, so for the
    attention family its attention weight is exactly 1 and the score is
    bitwise identical to ``forward_attention`` on that singleton bag.
    Off-tissue cells get NaN.
    """
    feats = grid.features.reshape(-1, grid.feature_dim)
    tissue = grid.tissue.reshape(-1)
    if feats.shape[1] != model.w1.shape[1]:
        raise ValidationError("grid feature_dim does not match model")
    cells = np.ascontiguousarray(feats[tissue])
    if isinstance(model, AttentionMILModel):
        scored = kernels.atten_infer(
            model.w1, model.b1, model.w2, model.b2, model.v, model.wa, model.g, model.gb,
            cells,
        )
    elif isinstance(model, MiNetModel):
        scored = kernels.minet_infer(
            model.w1, model.b1, model.w2, model.b2, model.w3, model.b3, cells
        )
    else:
        raise ValidationError("unknown model type: %r" % (type(model).__name__,))
    flat = np.full(tissue.shape, np.nan)
    flat[tissue] = scored
    return Heatmap(flat.reshape(grid.height, grid.width))


def make_model(kind, feature_dim, config):
    if kind == "attention":
        return make_attention_model(
            feature_dim,
            hidden=config.hidden,
            embed_dim=config.embed_dim,
            attn_dim=config.attn_dim,
            seed=config.seed,
        )
    if kind == "minet":
        return make_minet_model(
            feature_dim,
            hidden=config.hidden,
            embed_dim=config.embed_dim,
            seed=config.seed,
        )
    raise ValidationError("unknown model kind: %r" % (kind,))


def multi_slide_train(pairs, config, kind="attention"):
    """Train one model on bags pooled from several (grid, coarse) pairs.

    Slide i contributes ``num_bags`` bags built with seed ``seed + i``;
    the pools are concatenated and, when more than one slide is present,
    the joint stack is shuffled with the master seed (each per-slide
    stack is class-interleaved, so the shuffled pool stays balanced
    throughout). With a single pair the interleaved order is kept as is,
    which makes the one-slide case bit-identical to building the dataset
    and calling ``train`` directly.
    """
    if not pairs:
        raise ValidationError("need at least one (grid, coarse) pair")
    dims = {grid.feature_dim for grid, _ in pairs}
    if len(dims) != 1:
        raise ValidationError("all slides must share one feature_dim")
    datasets = [
        build_mil_dataset(grid, coarse, config, seed=config.seed + i, slide_id=i)
        for i, (grid, coarse) in enumerate(pairs)
    ]
    dataset = datasets[0] if len(datasets) == 1 else shuffle_dataset(
        concat_datasets(datasets), config.seed
    )
    model = make_model(kind, dims.pop(), config)
    return train(model, dataset, config)
