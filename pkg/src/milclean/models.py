"""Model parameter containers for the two MIL predictor families.

Both families share a compact feature extractor (two affine layers with
tanh) over patch feature vectors. The attention model pools instance
embeddings with learned softmax weights before a logistic head; the
mean-pooling (mi-Net style) model applies a logistic instance classifier
and averages the instance scores.

Parameters are kept as separate float64 arrays in a fixed declared order
(see ``params``); checkpoints store that order verbatim so round trips
are bit-exact.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

CHECKPOINT_VERSION = 1


@dataclass
class AttentionMILModel:
    """Attention-pooled MIL predictor.

    Embedding: h = tanh(w2 @ tanh(w1 @ x + b1) + b2).
    Attention logit per instance: wa . tanh(v @ h); softmax over the bag.
    Bag score: sigmoid(g . z + gb) with z the weighted embedding average.
    """

    w1: np.ndarray  # (hidden, feature_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (embed_dim, hidden)
    b2: np.ndarray  # (embed_dim,)
    v: np.ndarray   # (attn_dim, embed_dim)
    wa: np.ndarray  # (attn_dim,)
    g: np.ndarray   # (embed_dim,)
    gb: np.ndarray  # (1,)

    kind = "attention"

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[0]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.v, self.wa, self.g, self.gb]

    def param_names(self):
        return ["w1", "b1", "w2", "b2", "v", "wa", "g", "gb"]

    def copy(self) -> "AttentionMILModel":
        return AttentionMILModel(*(p.copy() for p in self.params()))


@dataclass
class MiNetModel:
    """Mean-pooled MIL predictor: logistic instance classifier, averaged.

    Instance score: f(x) = sigmoid(w3 . h + b3) with h the shared
    two-layer tanh embedding. Bag score: mean of instance scores.
    """

    w1: np.ndarray  # (hidden, feature_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (embed_dim, hidden)
    b2: np.ndarray  # (embed_dim,)
    w3: np.ndarray  # (embed_dim,)
    b3: np.ndarray  # (1,)

    kind = "minet"

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[0]

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def param_names(self):
        return ["w1", "b1", "w2", "b2", "w3", "b3"]

    def copy(self) -> "MiNetModel":
        return MiNetModel(*(p.copy() for p in self.params()))


def _uniform_fan(rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def make_attention_model(feature_dim, hidden=128, embed_dim=128, attn_dim=16,
                         seed=0) -> AttentionMILModel:
    """Fresh attention model; affine weights fan-balanced uniform, biases 0,
    classifier vector g starts at 0 so an untrained model scores 0.5."""
    rng = np.random.default_rng(seed)
    return AttentionMILModel(
        w1=_uniform_fan(rng, hidden, feature_dim),
        b1=np.zeros(hidden),
        w2=_uniform_fan(rng, embed_dim, hidden),
        b2=np.zeros(embed_dim),
        v=_uniform_fan(rng, attn_dim, embed_dim),
        wa=_uniform_fan(rng, 1, attn_dim).ravel(),
        g=np.zeros(embed_dim),
        gb=np.zeros(1),
    )


def make_minet_model(feature_dim, hidden=128, embed_dim=128, seed=0) -> MiNetModel:
    rng = np.random.default_rng(seed)
    return MiNetModel(
        w1=_uniform_fan(rng, hidden, feature_dim),
        b1=np.zeros(hidden),
        w2=_uniform_fan(rng, embed_dim, hidden),
        b2=np.zeros(embed_dim),
        w3=_uniform_fan(rng, 1, embed_dim).ravel(),
        b3=np.zeros(1),
    )


def save_model(model, path) -> None:
    """Write a checkpoint; round trip through load_model is bit-exact."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "param_names": model.param_names(),
        "shapes": [list(p.shape) for p in model.params()],
    }
    arrays = {name: p for name, p in zip(model.param_names(), model.params())}
    np.savez(path, __meta__=np.bytes_(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path):
    with np.load(path) as data:
        try:
            meta = json.loads(bytes(data["__meta__"]).decode())
        except KeyError:
            raise ValidationError(f"{path}: not a model checkpoint (missing metadata)")
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"{path}: unsupported checkpoint version {meta.get('format_version')}"
            )
        arrays = [np.asarray(data[name], dtype=np.float64) for name in meta["param_names"]]
    for arr, shape in zip(arrays, meta["shapes"]):
        if list(arr.shape) != shape:
            raise ValidationError(f"{path}: checkpoint shape mismatch")
    if meta["kind"] == "attention":
        return AttentionMILModel(*arrays)
    if meta["kind"] == "minet":
        return MiNetModel(*arrays)
    raise ValidationError(f"{path}: unknown model kind {meta['kind']!r}")
