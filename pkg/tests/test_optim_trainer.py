import math

import numpy as np
import pytest

from diffwgan import autodiff as ad
from diffwgan import trainer as trainer_mod
from diffwgan.autodiff import Tensor
from diffwgan.corpus import load_batch
from diffwgan.optim import AdamW, OptimizerState, adamw_step
from diffwgan.trainer import (
    TrainConfig,
    Trainer,
    decile_medians,
    finetune_mix,
    finetune_mix_sampler,
    smoothed,
    train,
)

from conftest import tiny_config


def _state(params):
    return OptimizerState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def test_adamw_zero_grad_no_decay_is_identity():
    p = [np.array([1.0, -2.0, 3.0])]
    before = p[0].copy()
    adamw_step(p, [np.zeros(3)], _state(p), lr=0.1, beta1=0.5, beta2=0.9, weight_decay=0.0)
    np.testing.assert_array_equal(p[0], before)


def test_adamw_decay_shrinks_by_lr_wd():
    p = [np.array([1.0, -2.0, 3.0])]
    before = p[0].copy()
    adamw_step(p, [np.zeros(3)], _state(p), lr=0.1, beta1=0.5, beta2=0.9, weight_decay=0.01)
    np.testing.assert_allclose(p[0], before * (1 - 0.1 * 0.01), rtol=1e-15)


def test_adamw_first_step_is_signed_lr():
    p = [np.array([1.0, 1.0, 1.0])]
    g = np.array([3.0, -0.2, 50.0])
    adamw_step(p, [g], _state(p), lr=1e-3, beta1=0.5, beta2=0.9, weight_decay=0.0)
    np.testing.assert_allclose(p[0] - 1.0, -1e-3 * np.sign(g), rtol=1e-6)


def test_adamw_rejects_non_finite_gradient():
    w = Tensor(np.ones(2), requires_grad=True)
    opt = AdamW([w])
    w.grad = Tensor(np.array([np.nan, 1.0]))
    with pytest.raises(ad.NonFiniteError, match="weight"):
        opt.step(["weight"])


def test_presets():
    with pytest.raises(ValueError):
        TrainConfig(preset="nope")
    with pytest.raises(ValueError, match="fixes"):
        TrainConfig(preset="diff-wgan", lambda_recon=1.0)
    fft = TrainConfig(preset="fft")
    assert not fft.adversarial and fft.g_betas == (0.9, 0.98)
    assert TrainConfig(preset="diff-wgan").lambda_recon == 0.0
    assert TrainConfig(preset="diff-mixed").lambda_recon == TrainConfig(preset="diff-mixed").lambda_adv == 1.0


def test_fft_preset_has_no_critic(small_corpus):
    tr = Trainer(TrainConfig(preset="fft"), tiny_config())
    assert tr.critic is None and tr.d_opt is None
    with pytest.raises(ValueError, match="no critic"):
        tr.train_step_gan(load_batch(small_corpus, [0, 1]))
    tr.train_step(load_batch(small_corpus, [0, 1]))
    assert tr.step == 1


def test_gan_step_counts(small_corpus):
    tr = Trainer(TrainConfig(preset="diff-wgan"), tiny_config())
    tr.train_step(load_batch(small_corpus, [0, 1]))
    assert (tr.d_opt.step_count, tr.g_opt.step_count, tr.step) == (2, 1, 1)


def _generator_params_after_step(batch, preset, recon_scale, monkeypatch):
    original = trainer_mod.recon_loss
    monkeypatch.setattr(trainer_mod, "recon_loss", lambda a, b, m=None: ad.mul(original(a, b, m), recon_scale))
    tr = Trainer(TrainConfig(preset=preset), tiny_config())
    tr.generator_step(batch)
    monkeypatch.setattr(trainer_mod, "recon_loss", original)
    return [p.data.copy() for p in tr.generator.parameters()]


def test_generator_update_ignores_recon_when_weight_is_zero(small_corpus, monkeypatch):
    batch = load_batch(small_corpus, [0, 1])
    a = _generator_params_after_step(batch, "diff-wgan", 1.0, monkeypatch)
    b = _generator_params_after_step(batch, "diff-wgan", -1000.0, monkeypatch)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_generator_update_uses_recon_when_weighted(small_corpus, monkeypatch):
    batch = load_batch(small_corpus, [0, 1])
    a = _generator_params_after_step(batch, "diff-mixed", 1.0, monkeypatch)
    b = _generator_params_after_step(batch, "diff-mixed", -1000.0, monkeypatch)
    assert any(not np.array_equal(x, y) for x, y in zip(a, b))


def test_fixed_seed_gives_identical_loss_breakdowns(small_corpus):
    runs = []
    for _ in range(2):
        res = train(TrainConfig(preset="diff-wgan", steps=2, batch_size=2, seed=3), small_corpus, tiny_config())
        runs.append(res.history)
    assert runs[0] == runs[1]
    other = train(TrainConfig(preset="diff-wgan", steps=2, batch_size=2, seed=4), small_corpus, tiny_config())
    assert other.history != runs[0]


def test_learning_rate_decays_per_epoch(small_corpus):
    n = len(small_corpus.train)
    cfg = TrainConfig(preset="diff-l1", steps=11, batch_size=n)
    res = train(cfg, small_corpus, tiny_config())
    assert res.trainer.epoch == 10
    assert math.isclose(res.trainer.g_opt.lr, 1e-4 * 0.999 ** 10, rel_tol=1e-14)


def test_no_decay_for_adversarial_preset(small_corpus):
    n = len(small_corpus.train)
    res = train(TrainConfig(preset="diff-wgan", steps=3, batch_size=n), small_corpus, tiny_config())
    assert res.trainer.g_opt.lr == 1e-4


def test_training_log_and_checkpoint(small_corpus, tmp_path):
    cfg = TrainConfig(preset="diff-mixed", steps=2, batch_size=2, checkpoint_every=1)
    train(cfg, small_corpus, tiny_config(), out_dir=tmp_path)
    assert (tmp_path / "final.ckpt").exists() and (tmp_path / "step_000002.ckpt").exists()
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0].split(",") == trainer_mod.LOG_FIELDS and len(lines) == 3


def test_mix_sampler_endpoints():
    rng = np.random.default_rng(0)
    assert all(finetune_mix_sampler(1, 4, rng) for _ in range(1000))
    hits = sum(finetune_mix_sampler(4, 4, rng) for _ in range(10_000))
    p = 1 / 16
    assert abs(hits / 10_000 - p) < 3 * math.sqrt(p * (1 - p) / 10_000)
    with pytest.raises(ValueError):
        finetune_mix_sampler(0, 4, rng)


def test_finetune_mix_logs_each_item(small_corpus):
    tr = Trainer(TrainConfig(preset="diff-l1"), tiny_config())
    batch = load_batch(small_corpus, [0, 1, 2])
    log = []
    out = finetune_mix(batch, tr.generator, tr.sched, np.random.default_rng(0), log)
    assert [e.utterance for e in log] == batch.ids
    for i, e in enumerate(log):
        assert np.array_equal(out[i], batch.mel[i]) != e.replaced


def test_smoothing_and_deciles():
    v = np.arange(10.0)
    np.testing.assert_allclose(smoothed(v, 3), [0, 0.5, 1, 2, 3, 4, 5, 6, 7, 8])
    assert decile_medians(np.arange(100.0)) == (4.5, 94.5)
