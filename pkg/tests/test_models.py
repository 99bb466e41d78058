import numpy as np
import pytest

from milclean.errors import ValidationError
from milclean.models import (
    load_model,
    make_attention_model,
    make_minet_model,
    save_model,
)


def test_attention_init_follows_fan_rule():
    m = make_attention_model(8, hidden=16, embed_dim=12, attn_dim=4, seed=0)
    for w, fan_out, fan_in in ((m.w1, 16, 8), (m.w2, 12, 16), (m.v, 4, 12)):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        assert np.abs(w).max() <= limit
        assert np.abs(w).max() > 0.5 * limit  # actually spread out, not collapsed
    assert not m.b1.any() and not m.b2.any()
    assert not m.g.any() and m.gb == 0.0
    assert np.abs(m.wa).max() > 0  # attention head starts non-degenerate


def test_minet_init_shapes():
    m = make_minet_model(8, hidden=16, embed_dim=12, seed=0)
    assert m.w1.shape == (16, 8) and m.w2.shape == (12, 16)
    assert m.w3.shape == (12,) and m.b3 == 0.0


def test_same_seed_same_model():
    a = make_attention_model(6, seed=42)
    b = make_attention_model(6, seed=42)
    for pa, pb in zip(a.params(), b.params()):
        assert np.array_equal(pa, pb)
    c = make_attention_model(6, seed=43)
    assert any(not np.array_equal(pa, pc) for pa, pc in zip(a.params(), c.params()))


def test_copy_is_independent():
    m = make_attention_model(4, seed=0)
    c = m.copy()
    c.w1[0, 0] += 1.0
    assert m.w1[0, 0] != c.w1[0, 0]


@pytest.mark.parametrize("maker", [make_attention_model, make_minet_model])
def test_save_load_roundtrip_bitwise(tmp_path, maker):
    m = maker(7, seed=5)
    m.w1 += 1e-17  # exercise full-precision persistence
    path = tmp_path / "model.npz"
    save_model(m, path)
    back = load_model(path)
    assert type(back) is type(m)
    for pa, pb in zip(m.params(), back.params()):
        assert np.array_equal(pa, pb)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.npz"
    np.savez(path, a=np.zeros(3))
    with pytest.raises(ValidationError):
        load_model(path)


def test_param_names_align_with_params():
    m = make_attention_model(4, seed=0)
    assert len(m.param_names()) == len(m.params())
    for name, arr in zip(m.param_names(), m.params()):
        assert np.shares_memory(getattr(m, name), arr) or np.isscalar(arr) or arr.ndim == 0
