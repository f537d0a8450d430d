"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL ...`` line to the
terminal (outside pytest's capture) before asserting. Criteria 6 and 7
share one 2000-step adversarial run and one 2000-step L1 run, so this
module takes roughly half an hour on one CPU core.
"""

import math
import time

import numpy as np
import pytest

from diffwgan import autodiff as ad
from diffwgan.autodiff import Tensor
from diffwgan.autodiff.gradcheck import run_primitive_checks
from diffwgan.checkpoint import encode
from diffwgan.cli import load_generator, synthesize
from diffwgan.corpus import ToyCorpusSpec, generate_corpus, load_batch, load_corpus
from diffwgan.diffusion import compute_schedule, forward_noise, posterior_params, single_step_noise
from diffwgan.metrics import dtw_align, f0_metrics, mcd, ms_ssim
from diffwgan.networks import ModelConfig
from diffwgan.nn import Linear
from diffwgan.objectives import gp_gradcheck, gradient_penalty, interpolate_pair, total_losses, wasserstein_loss
from diffwgan.optim import AdamW
from diffwgan.signal import decode_mel, encode_mel
from diffwgan.trainer import TrainConfig, decile_medians, finetune_mix_sampler, smoothed, train

from test_diffusion import _grid_posterior, scalar_schedule
from test_metrics import brute_force_dtw

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}", flush=True)
    return emit


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    generate_corpus(ToyCorpusSpec(), root)
    return load_corpus(root)


def _heldout_mels(ckpt, dataset, seed=0):
    gen, mcfg, config = load_generator(ckpt)
    return [synthesize(gen, mcfg, config, u.score, seed, ground_truth=True) for u in dataset.heldout]


@pytest.fixture(scope="module")
def wgan_run(toy, tmp_path_factory):
    out = tmp_path_factory.mktemp("wgan")
    t0 = time.perf_counter()
    try:
        res = train(TrainConfig(preset="diff-wgan", steps=2000, seed=0), toy, out_dir=out)
        error = None
    except ad.NonFiniteError as exc:
        res, error = None, str(exc)
    return res, out, time.perf_counter() - t0, error


@pytest.fixture(scope="module")
def l1_run(toy, tmp_path_factory):
    out = tmp_path_factory.mktemp("l1")
    res = train(TrainConfig(preset="diff-l1", steps=2000, seed=0), toy, out_dir=out)
    return res, out


def test_criterion_1_schedule(report):
    t0 = time.perf_counter()
    s = compute_schedule(4, 0.1, 20.0)
    ref = scalar_schedule(4, 0.1, 20.0)
    err = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
              for a, b in zip((s.beta, s.alpha, s.alpha_bar, s.beta_tilde), ref))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-12 and s.beta_tilde[0] == 0.0 and s.alpha_bar[3] < 1e-4 and elapsed < 1.0
    report(1, ok, f"max|diff|={err:.1e} beta_tilde_1={s.beta_tilde[0]} alpha_bar_4={s.alpha_bar[3]:.3e} "
                  f"time={elapsed:.3f}s")
    assert ok


def test_criterion_2_forward_and_posterior(report):
    t0 = time.perf_counter()
    s = compute_schedule(4)
    coef_err = 0.0
    for t in range(1, 5):
        x = np.ones(1)
        for k in range(1, t + 1):
            x = single_step_noise(x, k, np.zeros(1), s)
        coef_err = max(coef_err, abs(x[0] - math.sqrt(s.alpha_bar[t - 1])))
    rng = np.random.default_rng(11)
    x0 = np.full(100_000, 2.0)
    moment_err = 0.0
    for t in range(1, 5):
        xt = forward_noise(x0, t, rng.standard_normal(x0.shape), s)
        ab = s.alpha_bar[t - 1]
        scale = math.sqrt(ab * 4 + 1 - ab)
        moment_err = max(moment_err, abs(xt.mean() - 2 * math.sqrt(ab)) / scale, abs(xt.var() / (1 - ab) - 1))
    post_err = 0.0
    for t in (2, 3, 4):
        for a in (-1.0, 0.3, 1.5):
            for b in (-2.0, 0.0, 0.7):
                m, v = posterior_params(np.array([a]), np.array([b]), t, s)
                gm, gv = _grid_posterior(a, b, t, s)
                post_err = max(post_err, abs(m[0] - gm), abs(float(v) - gv))
    elapsed = time.perf_counter() - t0
    ok = coef_err <= 1e-12 and moment_err < 0.01 and post_err < 1e-6 and elapsed < 30
    report(2, ok, f"coef_err={coef_err:.1e} mc_rel_err={moment_err:.2e} posterior_err={post_err:.1e} "
                  f"time={elapsed:.1f}s")
    assert ok


def test_criterion_3_gradcheck(report):
    t0 = time.perf_counter()
    results = run_primitive_checks()
    worst = max(max(e1, e2 or 0.0) for _, e1, e2 in results)
    gp = gp_gradcheck()
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and gp < 1e-3 and elapsed < 120
    report(3, ok, f"{len(results)} primitives worst_rel={worst:.1e} gp_double_backprop={gp:.1e} time={elapsed:.1f}s")
    assert ok


def _two_dirac_gap(seed=0, steps=600):
    rng = np.random.default_rng(seed)
    layers = [Linear(1, 32, rng), Linear(32, 32, rng), Linear(32, 1, rng)]

    def critic(x):
        h = ad.tanh(layers[0](ad.reshape(x, (-1, 1))))
        h = ad.tanh(layers[1](h))
        return ad.reshape(layers[2](h), (-1,))

    opt = AdamW([p for layer in layers for p in layer.parameters()], lr=1e-2, betas=(0.5, 0.9), weight_decay=0.0)
    n = 64
    real, fake = np.zeros(n), np.ones(n)
    for _ in range(steps):
        opt.zero_grad()
        scores = critic(Tensor(np.concatenate([real, fake])))
        x_tilde = interpolate_pair(real, fake, rng.random(n))
        l_gp = gradient_penalty(critic, Tensor(x_tilde.data, requires_grad=True))
        _, d_total, _ = total_losses({"l_wd": wasserstein_loss(scores[:n], scores[n:]), "l_gp": l_gp})
        ad.backward(d_total)
        opt.step()
    with ad.no_grad():
        return float(critic(Tensor(real)).data.mean() - critic(Tensor(fake)).data.mean())


def test_criterion_4_critic_fixed_points(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 20))
    w = rng.standard_normal(20)
    w /= np.linalg.norm(w)
    gp_lin = float(gradient_penalty(lambda z: ad.reshape(ad.matmul(z, Tensor(w[:, None])), (-1,)),
                                    Tensor(x, requires_grad=True)).data)
    l_wd_const = float(wasserstein_loss(Tensor(np.full(6, 0.25)), Tensor(np.full(6, 0.25))).data)
    gap = _two_dirac_gap()
    elapsed = time.perf_counter() - t0
    ok = gp_lin <= 1e-10 and l_wd_const == 0.0 and abs(gap - 1.0) <= 0.1 and elapsed < 120
    report(4, ok, f"gp_unit_linear={gp_lin:.1e} l_wd_constant={l_wd_const} two_dirac_gap={gap:.4f} (W1=1) "
                  f"time={elapsed:.1f}s")
    assert ok


def test_criterion_5_overfit_one_batch(toy, report):
    t0 = time.perf_counter()
    # one utterance repeated every step
    batch = load_batch(toy, [0])
    res = train(TrainConfig(preset="diff-l1", steps=500, seed=0), toy, batch=batch)
    rec = res.column("l_recon")
    trailing = smoothed(rec, 10)
    below = np.nonzero(trailing[9:] < 0.1 * rec[0])[0]
    elapsed = time.perf_counter() - t0
    ok = below.size > 0 and elapsed < 300
    where = f"first at step {int(below[0]) + 10}" if below.size else "never"
    report(5, ok, f"initial={rec[0]:.4f} final10={trailing[-1]:.4f} ratio={trailing[-1] / rec[0]:.3f} "
                  f"below 10% {where} time={elapsed:.0f}s")
    assert ok


def test_criterion_6_adversarial_convergence(wgan_run, report):
    res, _, elapsed, error = wgan_run
    if res is None:
        report(6, False, f"non-finite during training: {error}")
        pytest.fail(error)
    finite = all(np.isfinite(p.data).all() for net in (res.trainer.generator, res.trainer.critic)
                 for p in net.parameters())
    w = smoothed(res.column("w_estimate"), 100)
    first, last = decile_medians(w)
    ok = finite and len(w) == 2000 and last < first and elapsed < 1800
    report(6, ok, f"steps={len(w)} finite={finite} W_smoothed first_decile_median={first:.4f} "
                  f"last_decile_median={last:.4f} time={elapsed / 60:.1f}min")
    assert ok


def _top_quartile_frame_variance(mels):
    vals = []
    for mel in mels:
        top = mel[3 * mel.shape[0] // 4 :]
        vals.append(top.var(axis=0).mean())
    return float(np.mean(vals))


def test_criterion_7_high_band_variance(wgan_run, l1_run, toy, report):
    _, wgan_dir, _, error = wgan_run
    if error:
        report(7, False, "criterion 6 run did not finish")
        pytest.fail(error)
    _, l1_dir = l1_run
    real = [u.mel.astype(np.float64) for u in toy.heldout]
    mels_wgan = _heldout_mels(wgan_dir / "final.ckpt", toy)
    mels_l1 = _heldout_mels(l1_dir / "final.ckpt", toy)
    v_wgan = _top_quartile_frame_variance(mels_wgan)
    v_l1 = _top_quartile_frame_variance(mels_l1)
    v_real = _top_quartile_frame_variance(real)
    # distance to the reference, reported so a variance win from diverged output is visible
    err_wgan = float(np.mean([np.abs(m - r).mean() for m, r in zip(mels_wgan, real)]))
    err_l1 = float(np.mean([np.abs(m - r).mean() for m, r in zip(mels_l1, real)]))
    ok = v_wgan > v_l1
    report(7, ok, f"top-quartile per-frame variance diff-wgan={v_wgan:.4f} diff-l1={v_l1:.4f} "
                  f"(ground truth {v_real:.4f}); mean |log-mel error| diff-wgan={err_wgan:.3f} diff-l1={err_l1:.3f}")
    assert ok


def test_criterion_8_metric_fixed_points(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    mel = rng.standard_normal((32, 40))
    f0 = np.array([0, 110.0, 130, 0, 150, 170, 0])
    fixed = (mcd(mel, mel), ms_ssim(mel, mel), f0_metrics(f0, f0))
    octave, _ = f0_metrics(f0, 2 * f0)
    dtw_err = 0.0
    for seed in range(30):
        r = np.random.default_rng(seed)
        a = r.standard_normal((int(r.integers(1, 7)), 3))
        b = r.standard_normal((int(r.integers(1, 7)), 3))
        dtw_err = max(dtw_err, abs(dtw_align(a, b)[1] - brute_force_dtw(a, b)))
    elapsed = time.perf_counter() - t0
    ok = (fixed == (0.0, 1.0, (0.0, 1.0)) and abs(octave - 12.0) <= 1e-6 and dtw_err < 1e-12 and elapsed < 60)
    report(8, ok, f"mcd(x,x)={fixed[0]} ms_ssim(x,x)={fixed[1]} f0(x,x)={fixed[2]} octave_rmse={octave:.9f} "
                  f"dtw_vs_brute={dtw_err:.1e} time={elapsed:.1f}s")
    assert ok


def test_criterion_9_mix_sampler(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    n = 10_000
    worst = 0.0
    freqs = []
    for t, p in zip(range(1, 5), (1.0, 9 / 16, 1 / 4, 1 / 16)):
        f = sum(finetune_mix_sampler(t, 4, rng) for _ in range(n)) / n
        freqs.append(f)
        sigma = math.sqrt(p * (1 - p) / n)
        worst = max(worst, abs(f - p) / sigma if sigma > 0 else (0.0 if f == p else math.inf))
    elapsed = time.perf_counter() - t0
    ok = worst <= 3 and elapsed < 5
    report(9, ok, f"freqs={[round(f, 4) for f in freqs]} worst={worst:.2f} sigma time={elapsed:.2f}s")
    assert ok


def test_criterion_10_determinism_and_io(toy, wgan_run, report):
    blobs, mels = [], []
    for _ in range(2):
        res = train(TrainConfig(preset="diff-wgan", steps=3, seed=7), toy)
        tr = res.trainer
        blobs.append(encode(tr.state_tensors(), {"model": tr.model_cfg.to_dict(), "step": tr.step}))
        gen_cfg = {"train": tr.cfg.to_dict(), "normalization": toy.manifest["normalization"]}
        mels.append(encode_mel(synthesize(tr.generator, tr.model_cfg, gen_cfg, toy.heldout[0].score, 5, True),
                               toy.manifest["signal"]))
    same_ckpt, same_mel = blobs[0] == blobs[1], mels[0] == mels[1]
    back, meta = decode_mel(mels[0])
    round_trip = encode_mel(back, meta) == mels[0]
    _, wgan_dir, _, error = wgan_run
    ckpt = wgan_dir / "final.ckpt"
    if error or not ckpt.exists():
        lengths_ok = False
    else:
        out = _heldout_mels(ckpt, toy)
        lengths_ok = all(m.shape[1] == int(u.score.durations.sum()) for m, u in zip(out, toy.heldout))
    ok = same_ckpt and same_mel and round_trip and lengths_ok
    report(10, ok, f"checkpoint_bytes_equal={same_ckpt} mel_bytes_equal={same_mel} mel_round_trip={round_trip} "
                   f"heldout_frames_match_durations={lengths_ok}")
    assert ok
