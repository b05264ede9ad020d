import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sampled_gradcheck, tiny_config
from sotvae.batchattn import BatchCoAttention, BatchFormer, canonical_order
from sotvae.errors import ModeError, ShapeError
from sotvae.model import SoTVAE
from sotvae.numerics import MultiHeadAttention, Tensor


def _module(layers=2, seed=0, d=8):
    m = BatchCoAttention(d, 2, 16, layers, 0.0, np.random.default_rng(seed))
    m.train()
    return m


def _inputs(rng, batch, p, k, d=8):
    text = rng.normal(size=(batch, p, d))
    frames = rng.normal(size=(batch, k, d))
    lengths = rng.integers(1, p + 1, size=batch)
    mask = np.arange(p)[None, :] < lengths[:, None]
    return text, frames, mask


@settings(max_examples=40, deadline=None)
@given(batch=st.integers(1, 6), p=st.integers(1, 5), k=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_batch_permutation_equivariance_is_exact(batch, p, k, seed):
    rng = np.random.default_rng(seed)
    m = _module(seed=seed % 3)
    text, frames, mask = _inputs(rng, batch, p, k)
    e, i = m(Tensor(text), Tensor(frames), mask)
    perm = rng.permutation(batch)
    e_p, i_p = m(Tensor(text[perm]), Tensor(frames[perm]), mask[perm])
    np.testing.assert_array_equal(e_p.data, e.data[perm])
    np.testing.assert_array_equal(i_p.data, i.data[perm])
    assert e.shape == i.shape == (batch, 8)
    assert np.isfinite(e.data).all() and np.isfinite(i.data).all()


def test_singleton_batch_attention_weights_are_one(monkeypatch):
    seen = []
    original = MultiHeadAttention.forward

    def spy(self, q, k, v, mask=None, return_weights=False):
        out, w = original(self, q, k, v, mask=mask, return_weights=True)
        seen.append(w.data if hasattr(w, "data") else np.asarray(w))
        return (out, w) if return_weights else out

    monkeypatch.setattr(MultiHeadAttention, "forward", spy)
    m = _module()
    text, frames, _ = _inputs(np.random.default_rng(1), 1, 4, 3)
    m(Tensor(text), Tensor(frames), np.ones((1, 4), dtype=bool))
    assert len(seen) == 4
    for w in seen:
        assert w.shape[-1] == 1
        assert np.all(w == 1.0)


def test_singleton_output_is_the_samples_own_transform():
    # with one sample, the result cannot depend on anything but that sample
    m = _module()
    rng = np.random.default_rng(2)
    text, frames, mask = _inputs(rng, 3, 4, 2)
    alone = [m(Tensor(text[j:j + 1]), Tensor(frames[j:j + 1]), mask[j:j + 1]) for j in range(3)]
    again = m(Tensor(text[1:2]), Tensor(frames[1:2]), mask[1:2])
    np.testing.assert_array_equal(alone[1][0].data, again[0].data)
    together = m(Tensor(text), Tensor(frames), mask)
    assert not np.allclose(together[0].data[1], alone[1][0].data[0])


def test_padded_samples_are_not_attended():
    m = _module()
    rng = np.random.default_rng(3)
    text, frames, _ = _inputs(rng, 3, 4, 2)
    mask = np.ones((3, 4), dtype=bool)
    mask[2, 2:] = False
    base = m(Tensor(text), Tensor(frames), mask)
    changed = text.copy()
    changed[2, 2:] = rng.normal(size=(2, 8)) * 100
    out = m(Tensor(changed), Tensor(frames), mask)
    np.testing.assert_allclose(out[0].data[:2], base[0].data[:2], atol=1e-12)


def test_inference_mode_is_refused():
    m = _module()
    m.eval()
    with pytest.raises(ModeError):
        m(Tensor(np.zeros((2, 3, 8))), Tensor(np.zeros((2, 2, 8))))
    bf = BatchFormer(8, 2, 16, 0.0, np.random.default_rng(0))
    bf.eval()
    with pytest.raises(ModeError):
        bf(Tensor(np.zeros((2, 8))), Tensor(np.zeros((2, 8))))


def test_shape_checks():
    m = _module()
    with pytest.raises(ShapeError):
        m(Tensor(np.zeros((2, 3, 8))), Tensor(np.zeros((3, 2, 8))))
    with pytest.raises(ShapeError):
        m(Tensor(np.zeros((3, 8))), Tensor(np.zeros((3, 2, 8))))


def test_features_are_pure_transposes():
    m = _module(layers=1)
    rng = np.random.default_rng(4)
    text, frames, mask = _inputs(rng, 3, 4, 2)
    f = m.features(Tensor(text), Tensor(frames), mask)
    assert f.V_e_B.shape == (4, 3, 8) and f.V_I_B.shape == (2, 3, 8)
    assert f.V_hat_e_B.shape == f.V_hat_I_B.shape == (3, 8)


def test_batchformer_equivariant():
    bf = BatchFormer(8, 2, 16, 0.0, np.random.default_rng(5))
    bf.train()
    rng = np.random.default_rng(6)
    e, i = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    oe, oi = bf(Tensor(e), Tensor(i))
    perm = rng.permutation(5)
    pe, pi = bf(Tensor(e[perm]), Tensor(i[perm]))
    np.testing.assert_array_equal(pe.data, oe.data[perm])
    np.testing.assert_array_equal(pi.data, oi.data[perm])


def test_canonical_order_sorts_rows():
    a = np.array([[3.0], [1.0], [2.0]])
    order = canonical_order(a)
    perm = np.array([2, 0, 1])
    np.testing.assert_array_equal(a[order], a[perm][canonical_order(a[perm])])


def test_batch_attention_gradient():
    m = _module(layers=1)
    rng = np.random.default_rng(7)
    text, frames, mask = _inputs(rng, 3, 3, 2)
    t = Tensor(text, requires_grad=True)
    f = Tensor(frames, requires_grad=True)

    def loss():
        e, i = m(t, f, mask)
        return (e ** 2).sum() + (i * 0.5).sum()

    sampled_gradcheck(loss, [t, f], np.random.default_rng(0), per_param=6)


def test_aux_decoder_is_main_decoder():
    model = SoTVAE(tiny_config())
    assert model.aux_decoder is model.decoder
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert not any(n.startswith("aux_decoder.") for n in names)
    dec_ids = {id(p) for p in model.decoder.parameters()}
    assert all(id(p) in dec_ids for p in model.aux_decoder.parameters())


def test_inference_identical_without_batch_attention(tiny_batch):
    model = SoTVAE(tiny_config())
    eps = np.random.default_rng(8).standard_normal((4, 3, 8))
    before = model.generate(tiny_batch, labels=[0, 1, 2, 1], eps=eps)
    scores = model.score_candidates(tiny_batch, [[5, 6, 7], [8]])
    model.batchattn = None
    model.aux_decoder = None
    after = model.generate(tiny_batch, labels=[0, 1, 2, 1], eps=eps)
    assert [g.tokens for g in before] == [g.tokens for g in after]
    assert [g.mean_logprob for g in before] == [g.mean_logprob for g in after]
    np.testing.assert_array_equal(scores, model.score_candidates(tiny_batch, [[5, 6, 7], [8]]))
