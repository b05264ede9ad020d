import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import sampled_gradcheck, tiny_config
from sotvae.errors import ConfigError, ContractError
from sotvae.latent import (LOGVAR_MAX, LOGVAR_MIN, GMMPrior, PosteriorEncoder, PosteriorParams,
                           SentimentDiversityEncoder, blend, draw_mask, mask_count,
                           mixture_sample, one_hot, sample_posterior)
from sotvae.model import SoTVAE
from sotvae.numerics import Tensor


def _latent(**kw):
    return SentimentDiversityEncoder(tiny_config(**kw), np.random.default_rng(0))


def test_one_hot_and_range_error():
    lat = _latent()
    w, v_s = lat.embed_sentiment(1)
    assert w.s_onehot.tolist() == [[0.0, 1.0, 0.0]] and w.label.tolist() == [1]
    with pytest.raises(ContractError):
        lat.embed_sentiment(3)
    with pytest.raises(ContractError):
        one_hot([-1], 3)


def test_distinct_labels_distinct_rows():
    lat = _latent()
    _, v = lat.embed_sentiment([0, 1, 2])
    np.testing.assert_array_equal(v.data, lat.sentiment_embed.weight.data)
    assert len({tuple(r) for r in v.data}) == 3


def test_sentiment_embedding_gradient():
    lat = _latent()
    weights = np.random.default_rng(1).normal(size=(4, 16))
    sampled_gradcheck(lambda: (lat.embed_sentiment([2, 0, 2, 1])[1] * weights).sum() ** 2,
                      [lat.sentiment_embed.weight], np.random.default_rng(0), per_param=10)


def test_prior_with_zero_eps_is_component_mean():
    lat = _latent()
    w = lat.weight([1])
    z = lat.sample_prior(w, np.zeros((1, 3, 8)))
    np.testing.assert_array_equal(z.data[0], lat.prior.means.data[1])


def test_prior_monte_carlo_moments():
    prior = GMMPrior(3, 8, 0.2, np.random.default_rng(2))
    n = 100_000
    label = np.full(n, 2)
    from sotvae.latent import SentimentWeight
    w = SentimentWeight(label, one_hot(label, 3))
    eps = np.random.default_rng(3).standard_normal((n, 3, 8))
    z = prior.sample(w, eps).data
    assert np.abs(z.mean(0) - prior.means.data[2]).max() <= 3 * 0.2 / math.sqrt(n)
    np.testing.assert_allclose(z.var(0, ddof=1), 0.04, rtol=0.05)


def test_one_hot_density_degenerates_to_selected_component():
    prior = GMMPrior(3, 5, 0.2, np.random.default_rng(4))
    rng = np.random.default_rng(5)
    for _ in range(100):
        j = int(rng.integers(3))
        z = prior.means.data[j] + rng.normal(0, 0.3, size=5)
        expected = stats.multivariate_normal(prior.means.data[j], 0.04 * np.eye(5)).pdf(z)
        got = prior.density(z, one_hot([j], 3)[0])
        assert got == pytest.approx(expected, rel=1e-10)


def test_posterior_shapes_and_clamp():
    lat = _latent()
    w, v_s = lat.embed_sentiment([0, 2])
    post = lat.encode_posterior([[5, 6, 7], [8]], w, v_s)
    assert post.means.shape == post.log_vars.shape == (2, 3, 8)
    assert post.h_T.shape == (2, 16)
    for head in lat.posterior.heads:
        head.bias.data[8:] = 50.0
    hi = lat.encode_posterior([[5]], *lat.embed_sentiment([0]))
    assert (hi.log_vars.data == LOGVAR_MAX).all()
    for head in lat.posterior.heads:
        head.bias.data[8:] = -50.0
    lo = lat.encode_posterior([[5]], *lat.embed_sentiment([0]))
    assert (lo.log_vars.data == LOGVAR_MIN).all()


def test_different_targets_different_h_T():
    lat = _latent()
    w, v_s = lat.embed_sentiment([1, 1])
    post = lat.encode_posterior([[5, 6, 7], [9, 10, 11]], w, v_s)
    assert not np.allclose(post.h_T.data[0], post.h_T.data[1])


def test_posterior_gradient_of_sum_of_means():
    lat = _latent()
    w, _ = lat.embed_sentiment([0, 2])
    # the key bias in every attention block is softmax-invariant; its gradient is exactly zero
    params = [p for n, p in lat.posterior.named_parameters() if not n.endswith("k.bias")]

    def loss():
        _, v_s = lat.embed_sentiment([0, 2])
        return lat.encode_posterior([[5, 6, 7], [8, 9]], w, v_s).means.sum()

    sampled_gradcheck(loss, params + [lat.sentiment_embed.weight], np.random.default_rng(0),
                      per_param=2)


def test_posterior_zero_eps_is_selected_mean():
    lat = _latent()
    w, v_s = lat.embed_sentiment([2])
    post = lat.encode_posterior([[5, 6]], w, v_s)
    z = sample_posterior(post, w, np.zeros((1, 3, 8)))
    np.testing.assert_array_equal(z.data[0], post.means.data[0, 2])


def test_posterior_matching_prior_gives_same_distribution():
    prior = GMMPrior(3, 4, 0.2, np.random.default_rng(6))
    n = 100_000
    label = np.full(n, 1)
    from sotvae.latent import SentimentWeight
    w = SentimentWeight(label, one_hot(label, 3))
    means = Tensor(np.broadcast_to(prior.means.data, (n, 3, 4)).copy())
    log_vars = Tensor(np.full((n, 3, 4), math.log(0.04)))
    params = PosteriorParams(means, log_vars, None)
    z_post = sample_posterior(params, w, np.random.default_rng(7).standard_normal((n, 3, 4))).data
    z_prior = prior.sample(w, np.random.default_rng(8).standard_normal((n, 3, 4))).data
    for c in range(4):
        assert stats.ks_2samp(z_post[:, c], z_prior[:, c]).pvalue > 0.01


def test_reparameterized_path_is_identity_in_selected_mean():
    rng = np.random.default_rng(9)
    means = Tensor(rng.normal(size=(1, 3, 4)), requires_grad=True)
    log_vars = Tensor(rng.normal(size=(1, 3, 4)) * 0.1, requires_grad=True)
    eps = rng.standard_normal((1, 3, 4))
    s = one_hot([1], 3)
    base = mixture_sample(means, (log_vars * 0.5).exp(), s, eps).data[0]
    h = 1e-6
    jac = np.zeros((4, 4))
    for i in range(4):
        means.data[0, 1, i] += h
        jac[:, i] = (mixture_sample(means, (log_vars * 0.5).exp(), s, eps).data[0] - base) / h
        means.data[0, 1, i] -= h
    np.testing.assert_allclose(jac, np.eye(4), atol=1e-8)
    # other components do not move z
    means.data[0, 0, 0] += 1.0
    np.testing.assert_array_equal(mixture_sample(means, (log_vars * 0.5).exp(), s, eps).data[0], base)
    # and the analytic gradient w.r.t. log-variance matches finite differences
    sampled_gradcheck(lambda: (mixture_sample(means, (log_vars * 0.5).exp(), s, eps) ** 2).sum(),
                      [means, log_vars], np.random.default_rng(0), per_param=6)


def test_blend_extremes():
    rng = np.random.default_rng(10)
    zp, zq = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(3, 8)))
    np.testing.assert_array_equal(blend(zp, zq, draw_mask(rng, 3, 8, 0.0)).data, zp.data)
    np.testing.assert_array_equal(blend(zp, zq, draw_mask(rng, 3, 8, 1.0)).data, zq.data)
    with pytest.raises(ConfigError):
        draw_mask(rng, 1, 8, 1.5)
    with pytest.raises(ConfigError):
        draw_mask(rng, 1, 8, -0.1)


def test_mask_count_512_at_030():
    assert mask_count(0.30, 512) == 154
    m = draw_mask(np.random.default_rng(0), 50, 512, 0.30)
    assert (m.sum(1) == 154).all()
    assert set(np.unique(m)) <= {0.0, 1.0}


@settings(max_examples=200, deadline=None)
@given(ratio=st.floats(0.0, 1.0), d_z=st.integers(1, 600), batch=st.integers(1, 4),
       seed=st.integers(0, 2 ** 32 - 1))
def test_mask_cardinality_is_exact(ratio, d_z, batch, seed):
    m = draw_mask(np.random.default_rng(seed), batch, d_z, ratio)
    expected = mask_count(ratio, d_z)
    assert abs(expected - ratio * d_z) <= 0.5
    assert (m.sum(axis=1) == expected).all()


def test_mask_positions_are_uniform():
    m = draw_mask(np.random.default_rng(11), 20_000, 10, 0.3)
    freq = m.mean(0)
    # each coordinate is prior-sourced with probability 3/10
    assert np.abs(freq - 0.3).max() < 4 * math.sqrt(0.21 / 20_000)


def test_blend_mask_returns_encoded_latent():
    lat = _latent()
    rng = np.random.default_rng(12)
    zp, zq = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 8)))
    out = lat.blend_mask(zp, zq, 0.5, rng)
    assert out.source == "blended" and out.V_z.shape == (2, 16)
    assert (out.mask.sum(1) == 4).all()
    np.testing.assert_allclose(out.V_z.data, out.z.data @ lat.encode_z.weight.data + lat.encode_z.bias.data)


def test_inference_never_calls_posterior(tiny_batch, monkeypatch):
    model = SoTVAE(tiny_config())

    def boom(*a, **k):
        raise AssertionError("posterior used at inference")

    monkeypatch.setattr(PosteriorEncoder, "forward", boom)
    model.generate(tiny_batch, labels=[0, 1, 2, 0], eps=np.random.default_rng(0).standard_normal((4, 3, 8)))
    model.generate_diverse(tiny_batch, 3, 1, rng=np.random.default_rng(1))
    model.score_candidates(tiny_batch, [[5, 6], [7]])


def test_variant_pieces():
    send = _latent(diversity="send")
    assert send.prior is None and send.sentiment_embed is not None
    smd = _latent(diversity="smd")
    assert smd.sentiment_embed is None and smd.prior.n_components == 1
    assert smd.prior.sigma == 1.0 and not smd.prior.means.requires_grad
    assert np.all(smd.prior.means.data == 0.0)
    assert smd.weight([2, 0]).s_onehot.tolist() == [[1.0], [1.0]]
    fixed = _latent(prior_means="fixed")
    assert not fixed.prior.means.requires_grad
    with pytest.raises(ConfigError):
        GMMPrior(3, 4, 0.0, np.random.default_rng(0))


def test_prior_means_init_scale():
    prior = GMMPrior(3, 4000, 0.2, np.random.default_rng(13))
    assert prior.means.data.std() == pytest.approx(0.1, rel=0.03)
