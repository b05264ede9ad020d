import logging
import math

import numpy as np
import pytest

from conftest import tiny_config
from sotvae.config import VARIANTS, Config, apply_variant
from sotvae.errors import NonFiniteError, ParseError
from sotvae.model import SoTVAE, make_batch
from sotvae.numerics import load_checkpoint, save_checkpoint
from sotvae.trainer import (LOSS_FIELDS, Adam, adam_step, clip_grad_norm, load_model, lr_at_epoch,
                            train)


def test_lr_schedule():
    wide = Config.paper_scale()
    assert lr_at_epoch(wide, 6) == pytest.approx(1e-4 / 4, rel=1e-15)
    desk = Config()
    assert [lr_at_epoch(desk, e) for e in range(6)] == [1e-3] * 6
    assert lr_at_epoch(desk, 6) == lr_at_epoch(desk, 7) == pytest.approx(2.5e-4)
    assert lr_at_epoch(desk, 8) == pytest.approx(1e-3 / 16)


def test_adam_zero_gradient_is_fixed_point():
    p = [np.array([1.0, -2.0])]
    new, (m, v) = adam_step(p, [np.zeros(2)], ([np.zeros(2)], [np.zeros(2)]), 0.1, 1)
    np.testing.assert_array_equal(new[0], p[0])


def test_adam_first_step_by_hand():
    # t=1: m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2, step = lr g / (|g| + eps)
    for g in (0.3, -2.0, 1e-3):
        new, (m, v) = adam_step([np.array(1.0)], [np.array(g)], ([np.array(0.0)], [np.array(0.0)]), 0.01, 1)
        assert float(m[0]) == pytest.approx(0.1 * g, rel=1e-15)
        assert float(v[0]) == pytest.approx(0.001 * g * g, rel=1e-12)
        assert float(new[0]) == pytest.approx(1.0 - 0.01 * g / (abs(g) + 1e-8), rel=1e-12)


def test_adam_second_step_by_hand():
    g1, g2, lr = 0.5, -0.25, 0.1
    p, mom = adam_step([np.array(0.0)], [np.array(g1)], ([np.array(0.0)], [np.array(0.0)]), lr, 1)
    p, mom = adam_step(p, [np.array(g2)], mom, lr, 2)
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2
    expected = -lr * g1 / (abs(g1) + 1e-8) - lr * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert float(p[0]) == pytest.approx(expected, rel=1e-12)


def test_clip_grad_norm():
    from sotvae.numerics import Parameter
    a, b = Parameter(np.zeros(2)), Parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum()) == pytest.approx(1.0)


@pytest.fixture(scope="module")
def train_corpus():
    from sotvae import SynthConfig, synth_corpus
    corpus, _, lexicon = synth_corpus(SynthConfig(vocab_size=60, n_samples=32, d_in=6, seed=4))
    return corpus


def test_two_runs_identical_trajectories(train_corpus):
    cfg = tiny_config(dropout=0.1)
    a = train(cfg, train_corpus, epochs=1)
    b = train(cfg, train_corpus, epochs=1)
    assert [r["total"] for r in a.loss_log] == [r["total"] for r in b.loss_log]
    for (n, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data, err_msg=n)


def test_resume_matches_uninterrupted(train_corpus, tmp_path):
    cfg = tiny_config(dropout=0.1, epochs=2)
    full = train(cfg, train_corpus)
    first = train(cfg, train_corpus, out_dir=tmp_path / "run", epochs=1)
    resumed = train(cfg, train_corpus, resume=tmp_path / "run" / "epoch000.ckpt")
    steps_per_epoch = len(first.loss_log)
    nxt = full.loss_log[steps_per_epoch]
    got = resumed.loss_log[0]
    assert got["step"] == nxt["step"] and got["epoch"] == 1
    for key in ("loss_rc", "loss_rc_aux", "loss_z", "loss_pre", "total"):
        assert abs(got[key] - nxt[key]) <= 1e-10
    for (n, p), (_, q) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
        np.testing.assert_allclose(p.data, q.data, atol=1e-10, err_msg=n)


def test_outputs_written(train_corpus, tmp_path):
    cfg = tiny_config(epochs=2)
    res = train(cfg, train_corpus, out_dir=tmp_path)
    assert (tmp_path / "epoch000.ckpt").exists() and (tmp_path / "epoch001.ckpt").exists()
    assert (tmp_path / "config.txt").read_text() == cfg.dump()
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0].split(",") == list(LOSS_FIELDS)
    assert len(lines) == 1 + len(res.loss_log)


def test_reload_reproduces_forward_bitwise(train_corpus, tmp_path):
    cfg = tiny_config(epochs=1)
    res = train(cfg, train_corpus, out_dir=tmp_path)
    model, tensors, meta = load_model(tmp_path / "model.ckpt")
    assert meta["epoch"] == 0 and meta["config"] == cfg.to_dict()
    batch = make_batch(train_corpus.samples[:5], cfg)
    eps = np.random.default_rng(0).standard_normal((5, 3, 8))
    a = res.model.generate(batch, labels=[0, 1, 2, 0, 1], eps=eps)
    b = model.generate(batch, labels=[0, 1, 2, 0, 1], eps=eps)
    assert [(g.tokens, g.mean_logprob) for g in a] == [(g.tokens, g.mean_logprob) for g in b]
    cands = [s.target_tokens for s in train_corpus.samples[:7]]
    np.testing.assert_array_equal(res.model.score_candidates(batch, cands).view(np.uint64),
                                  model.score_candidates(batch, cands).view(np.uint64))


def test_config_hash_mismatch_rejected(train_corpus, tmp_path):
    cfg = tiny_config(epochs=1)
    train(cfg, train_corpus, out_dir=tmp_path)
    tensors, h, meta = load_checkpoint(tmp_path / "model.ckpt")
    meta["config"]["beta"] = 9.0
    save_checkpoint(tmp_path / "tampered.ckpt", tensors, h, meta)
    with pytest.raises(ParseError, match="hash"):
        load_model(tmp_path / "tampered.ckpt")


def test_nan_loss_aborts_naming_step(train_corpus, caplog):
    bad = train_corpus.subset(range(len(train_corpus)))
    bad.samples = [type(s)(s.sample_id, np.full_like(s.frames, np.nan), s.surrounding_tokens, s.target_tokens,
                           s.sentiment_label, s.references, s.video_title_tokens) for s in bad.samples]
    with caplog.at_level(logging.ERROR, logger="sotvae"):
        with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError, match="step 0"):
            train(tiny_config(), bad, epochs=1)
    assert any("step 0" in r.getMessage() for r in caplog.records)


def test_gradient_flow_audit_after_one_step(train_corpus):
    cfg = tiny_config(dropout=0.1)
    model = SoTVAE(cfg)
    batch = make_batch(train_corpus.samples[:8], cfg)
    model.zero_grad()
    model.training_losses(batch, np.random.default_rng(0)).total.backward()
    for name, p in model.trainable():
        assert p.grad is not None, name
        assert np.isfinite(p.grad).all(), name
    names = dict(model.trainable())
    assert "latent.prior.means" in names and "latent.sentiment_embed.weight" in names
    assert np.abs(names["latent.prior.means"].grad).sum() > 0
    assert np.abs(names["latent.sentiment_embed.weight"].grad).sum() > 0


def _names(cfg):
    return {n for n, _ in SoTVAE(cfg).named_parameters()}


def test_ablation_parity():
    base = tiny_config()
    full = _names(base)
    no_ba = _names(apply_variant(base, "no-batchattn"))
    assert full - no_ba and all(n.startswith("batchattn.") for n in full - no_ba)
    assert not no_ba - full
    # batch attention adds no decoder parameters
    dec = lambda names: {n for n in names if n.startswith("decoder.")}
    assert dec(full) == dec(no_ba)
    send = _names(apply_variant(base, "send"))
    assert not any(n.startswith(("latent.prior", "latent.posterior", "latent.encode_z")) for n in send)
    smd = _names(apply_variant(base, "smd"))
    assert not any(n.startswith(("latent.sentiment_embed", "predictor.")) for n in smd)
    off = _names(apply_variant(base, "no-diversity"))
    assert not any(n.startswith("latent.") for n in off)
    assert _names(apply_variant(base, "no-mask")) == full
    bf = _names(apply_variant(base, "batchformer"))
    assert dec(bf) == dec(full)
    assert set(VARIANTS) == {"full", "no-diversity", "send", "smd", "no-mask", "no-batchattn", "batchformer"}


def test_checkpoint_has_one_decoder_copy(train_corpus, tmp_path):
    train(tiny_config(epochs=1), train_corpus, out_dir=tmp_path)
    tensors, _, _ = load_checkpoint(tmp_path / "model.ckpt")
    assert not any("aux_decoder" in k for k in tensors)
    assert any(k.startswith("decoder.") for k in tensors)


def test_max_steps_and_fixed_prior_not_updated(train_corpus):
    cfg = tiny_config(prior_means="fixed")
    before = SoTVAE(cfg).latent.prior.means.data.copy()
    res = train(cfg, train_corpus, max_steps=2)
    assert len(res.loss_log) == 2
    np.testing.assert_array_equal(res.model.latent.prior.means.data, before)


def test_adam_state_roundtrip():
    from sotvae.numerics import Parameter
    p = Parameter(np.ones(3))
    opt = Adam([("w", p)])
    p.grad = np.array([1.0, 2.0, 3.0])
    opt.step(0.1)
    other = Adam([("w", Parameter(np.ones(3)))])
    other.load_state_tensors(opt.state_tensors(), opt.t)
    np.testing.assert_array_equal(other.m["w"], opt.m["w"])
    assert other.t == 1
