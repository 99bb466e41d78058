"""Shared fixtures: kernel warmup and small random-data factories."""

import numpy as np
import pytest

from milclean import kernels
from milclean.models import make_attention_model, make_minet_model


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Touch every kernel once so JIT compilation is not billed to tests.

    The numba backend caches compiled code on disk; on a fresh checkout
    the first call pays the compile, which would otherwise distort the
    runtime assertions in the acceptance suite.
    """
    rng = np.random.default_rng(0)
    bag = rng.normal(size=(3, 4))
    att = make_attention_model(4, hidden=6, embed_dim=5, attn_dim=4, seed=0)
    mi = make_minet_model(4, hidden=6, embed_dim=5, seed=0)
    kernels.atten_forward(*att.params(), bag)
    kernels.atten_grad(*att.params(), bag, 1.0, 5.0, 3.0, 0.2)
    kernels.atten_infer(*att.params(), bag)
    kernels.minet_forward(*mi.params(), bag)
    kernels.minet_grad(*mi.params(), bag, 1.0, 5.0, 3.0, 0.2)
    kernels.minet_infer(*mi.params(), bag)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
