"""Training loop for the four model configurations.

Presets:

========== =========== ========== ======== ==========================
preset     decoder     λ_recon    λ_adv    critic
========== =========== ========== ======== ==========================
fft        fft         1          0        none
diff-l1    diffusion   1          0        none
diff-mixed diffusion   1          1        yes
diff-wgan  diffusion   0          1        yes
========== =========== ========== ======== ==========================
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .corpus import Batch, Dataset, load_batch
from .diffusion import DiffusionSchedule, compute_schedule, denoise_step, forward_noise, posterior_params
from .networks import Discriminator, Generator, ModelConfig, ScoreBatch
from .objectives import (
    LossBreakdown,
    duration_loss,
    generator_adv_loss,
    gradient_penalty,
    interpolate_pair,
    recon_loss,
    total_losses,
    wasserstein_loss,
)
from .optim import AdamW

PRESETS: dict[str, dict] = {
    "fft": dict(decoder="fft", lambda_recon=1.0, lambda_adv=0.0, g_betas=(0.9, 0.98), lr_decay="none"),
    "diff-l1": dict(decoder="diffusion", lambda_recon=1.0, lambda_adv=0.0, lr_decay="epoch"),
    "diff-mixed": dict(decoder="diffusion", lambda_recon=1.0, lambda_adv=1.0, lr_decay="none"),
    "diff-wgan": dict(decoder="diffusion", lambda_recon=0.0, lambda_adv=1.0, lr_decay="none"),
}
ADVERSARIAL = {"diff-mixed", "diff-wgan"}


@dataclass
class TrainConfig:
    preset: str = "diff-wgan"
    T: int = 4
    beta_min: float = 0.1
    beta_max: float = 20.0
    lambda_recon: float | None = None  # None: take the preset's value
    lambda_adv: float | None = None
    lambda_gp: float = 10.0
    g_lr: float = 1e-4
    d_lr: float = 1e-4
    g_betas: tuple[float, float] | None = None
    d_betas: tuple[float, float] = (0.5, 0.9)
    weight_decay: float = 1e-6
    d_updates_per_g: int = 2
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    lr_decay: str | None = None  # "epoch" or "none"
    lr_decay_rate: float = 0.999
    printed_adv_sign: bool = False
    checkpoint_every: int = 0
    corpus: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset '{self.preset}' (choose from {', '.join(PRESETS)})")
        p = PRESETS[self.preset]
        for key in ("lambda_recon", "lambda_adv"):
            value = getattr(self, key)
            if value is None:
                setattr(self, key, p[key])
            elif float(value) != p[key]:
                raise ValueError(f"preset {self.preset} fixes {key} = {p[key]}, config sets {value}")
        if self.g_betas is None:
            self.g_betas = p.get("g_betas", (0.5, 0.9))
        if self.lr_decay is None:
            self.lr_decay = p["lr_decay"]
        if self.lr_decay not in ("epoch", "none"):
            raise ValueError(f"lr_decay must be 'epoch' or 'none', got '{self.lr_decay}'")
        if self.d_updates_per_g < 1:
            raise ValueError("d_updates_per_g must be >= 1")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")
        self.g_betas = tuple(self.g_betas)
        self.d_betas = tuple(self.d_betas)

    @property
    def adversarial(self) -> bool:
        return self.preset in ADVERSARIAL

    @property
    def decoder(self) -> str:
        return PRESETS[self.preset]["decoder"]

    def to_dict(self) -> dict:
        return asdict(self)


def finetune_mix_sampler(t: int, T: int, rng: np.random.Generator) -> bool:
    """True (use the generated x̂_{0,t} instead of x0) with probability (1 - (t-1)/T)²."""
    if not 1 <= t <= T:
        raise ValueError(f"t = {t} outside 1..{T}")
    return bool(rng.random() < (1.0 - (t - 1) / T) ** 2)


@dataclass
class MixEvent:
    utterance: str
    t: int
    replaced: bool


def finetune_mix(batch: Batch, generator: Generator, sched: DiffusionSchedule, rng: np.random.Generator,
                 log: list[MixEvent] | None = None) -> np.ndarray:
    """Vocoder fine-tuning input: each item's x0 or, per the mixing law, its x̂_{0,t}.

    The chosen t and replacement decision are appended to ``log``; the result
    is what a vocoder fine-tuning stage would consume.
    """
    x0 = batch.mel
    b = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=b)
    with ad.no_grad():
        enc = generator.encode_score(batch.score, use_ground_truth=True)
        x_t = forward_noise(x0, t, rng.standard_normal(x0.shape), sched) * batch.frame_mask[:, None, :]
        x0_hat = generator.denoise(Tensor(x_t), t, enc).data
    out = x0.copy()
    for i in range(b):
        replace = finetune_mix_sampler(int(t[i]), sched.T, rng)
        if replace:
            out[i] = x0_hat[i]
        if log is not None:
            log.append(MixEvent(batch.ids[i] if batch.ids else str(i), int(t[i]), replace))
    return out


def _double(score: ScoreBatch) -> ScoreBatch:
    """The same scores twice along the batch axis."""
    def cat(a):
        return None if a is None else np.concatenate([a, a], axis=0)

    return ScoreBatch(cat(score.phones), cat(score.note_lens), cat(score.pitches), cat(score.singer),
                      cat(score.token_mask), cat(score.durations))


def _check_finite(name: str, value: Tensor) -> None:
    if not np.isfinite(value.data).all():
        raise NonFiniteError(f"non-finite loss term {name}")


def _set_trainable(params: list[Tensor], flag: bool) -> None:
    for p in params:
        p.requires_grad = flag


class Trainer:
    """Owns the networks, optimizers and random state for one run."""

    def __init__(self, cfg: TrainConfig, model_cfg: ModelConfig | None = None):
        self.cfg = cfg
        model_cfg = model_cfg or ModelConfig()
        self.model_cfg = dataclasses.replace(model_cfg, decoder=cfg.decoder)
        self.sched = compute_schedule(cfg.T, cfg.beta_min, cfg.beta_max)
        self.generator = Generator(self.model_cfg, np.random.default_rng([cfg.seed, 0]))
        self.g_names = [n for n, _ in self.generator.named_parameters()]
        self.g_opt = AdamW(self.generator.parameters(), lr=cfg.g_lr, betas=cfg.g_betas, weight_decay=cfg.weight_decay)
        self.critic = None
        self.d_opt = None
        if cfg.adversarial:
            self.critic = Discriminator(self.model_cfg, np.random.default_rng([cfg.seed, 1]))
            self.d_names = [n for n, _ in self.critic.named_parameters()]
            self.d_opt = AdamW(self.critic.parameters(), lr=cfg.d_lr, betas=cfg.d_betas,
                               weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.step = 0
        self.epoch = 0
        self._order: list[int] = []

    # ------------------------------------------------------------ data

    def next_indices(self, n_items: int) -> list[int]:
        """Batch indices from a reshuffled pass over the corpus; one pass is one epoch."""
        out = []
        while len(out) < min(self.cfg.batch_size, n_items):
            if not self._order:
                if out or self.step > 0 or self.epoch > 0:
                    self._finish_epoch()
                self._order = list(self.rng.permutation(n_items))
            out.append(int(self._order.pop(0)))
        return out

    def _finish_epoch(self) -> None:
        self.epoch += 1
        if self.cfg.lr_decay == "epoch":
            self.g_opt.lr = self.cfg.g_lr * self.cfg.lr_decay_rate ** self.epoch
            if self.d_opt is not None:
                self.d_opt.lr = self.cfg.d_lr * self.cfg.lr_decay_rate ** self.epoch

    def _sample_t(self, b: int) -> np.ndarray:
        return self.rng.integers(1, self.sched.T + 1, size=b)

    def _noisy_pair(self, x0: np.ndarray, t: np.ndarray, mask3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """x_t ~ q(x_t | x0), then the real x_{t-1} ~ q(x_{t-1} | x_t, x0)."""
        x_t = forward_noise(x0, t, self.rng.standard_normal(x0.shape), self.sched) * mask3
        mean, var = posterior_params(x0, x_t, t, self.sched)
        x_prev = (mean + np.sqrt(var)[:, None, None] * self.rng.standard_normal(x0.shape)) * mask3
        return x_t, x_prev

    # ------------------------------------------------------------ steps

    def train_step_recon(self, batch: Batch) -> LossBreakdown:
        cfg = self.cfg
        g = self.generator
        mask3 = batch.frame_mask[:, None, :]
        self.g_opt.zero_grad()
        enc = g.encode_score(batch.score, use_ground_truth=True)
        l_dur = duration_loss(batch.score.durations.astype(np.float64), enc.dur_hat, batch.score.token_mask)
        if cfg.decoder == "fft":
            t = None
            x0_hat = g.denoise(None, None, enc)
        else:
            t = self._sample_t(batch.mel.shape[0])
            x_t = forward_noise(batch.mel, t, self.rng.standard_normal(batch.mel.shape), self.sched) * mask3
            x0_hat = g.denoise(Tensor(x_t), t, enc)
        l_recon = recon_loss(batch.mel, x0_hat, batch.frame_mask)
        g_total, _, bd = total_losses({"l_dur": l_dur, "l_recon": l_recon}, cfg.lambda_recon, 0.0, cfg.lambda_gp)
        for name, v in (("l_dur", l_dur), ("l_recon", l_recon)):
            _check_finite(name, v)
        ad.backward(g_total)
        self.g_opt.step(self.g_names)
        self.step += 1
        self.last_t = t
        return bd

    def _critic_scores(self, x_prev: Tensor, x_t: np.ndarray, t: np.ndarray, score: ScoreBatch,
                       feats: Tensor, mask3: np.ndarray) -> Tensor:
        return self.critic(ad.mul(x_prev, Tensor(mask3)), x_t, t, score, score_features=feats)

    def critic_step(self, batch: Batch) -> tuple[LossBreakdown, float]:
        cfg = self.cfg
        x0, mask3 = batch.mel, batch.frame_mask[:, None, :].astype(np.float64)
        b = x0.shape[0]
        t = self._sample_t(b)
        x_t, x_prev = self._noisy_pair(x0, t, mask3)
        with ad.no_grad():
            enc = self.generator.encode_score(batch.score, use_ground_truth=True)
            x0_hat = self.generator.denoise(Tensor(x_t), t, enc).data
        fake = denoise_step(x_t, t, x0_hat, self.rng.standard_normal(x0.shape), self.sched) * mask3
        alpha = self.rng.random(b)

        self.d_opt.zero_grad()
        feats = self.critic.encode_score(batch.score)
        both = self._critic_scores(Tensor(np.concatenate([x_prev, fake])), np.concatenate([x_t, x_t]),
                                   np.concatenate([t, t]), _double(batch.score),
                                   ad.concat([feats, feats], axis=0), np.concatenate([mask3, mask3]))
        d_real, d_fake = both[:b], both[b:]
        l_wd = wasserstein_loss(d_real, d_fake)
        x_tilde = Tensor(interpolate_pair(x_prev, fake, alpha).data, requires_grad=True)
        l_gp = gradient_penalty(lambda x: self._critic_scores(x, x_t, t, batch.score, feats, mask3), x_tilde)
        _, d_total, bd = total_losses({"l_wd": l_wd, "l_gp": l_gp}, cfg.lambda_recon, cfg.lambda_adv, cfg.lambda_gp)
        for name, v in (("l_wd", l_wd), ("l_gp", l_gp)):
            _check_finite(name, v)
        ad.backward(d_total)
        self.d_opt.step(self.d_names)
        return bd, float(d_real.data.mean() - d_fake.data.mean())

    def generator_step(self, batch: Batch) -> LossBreakdown:
        cfg = self.cfg
        x0, mask3 = batch.mel, batch.frame_mask[:, None, :].astype(np.float64)
        b = x0.shape[0]
        t = self._sample_t(b)
        x_t = forward_noise(x0, t, self.rng.standard_normal(x0.shape), self.sched) * mask3
        noise = self.rng.standard_normal(x0.shape)
        self.g_opt.zero_grad()
        d_params = self.critic.parameters()
        _set_trainable(d_params, False)
        try:
            enc = self.generator.encode_score(batch.score, use_ground_truth=True)
            l_dur = duration_loss(batch.score.durations.astype(np.float64), enc.dur_hat, batch.score.token_mask)
            x0_hat = self.generator.denoise(Tensor(x_t), t, enc)
            l_recon = recon_loss(x0, x0_hat, batch.frame_mask)
            fake = ad.mul(denoise_step(x_t, t, x0_hat, noise, self.sched), Tensor(mask3))
            with ad.no_grad():
                feats = self.critic.encode_score(batch.score)
            d_fake = self.critic(fake, x_t, t, batch.score, score_features=feats)
            l_adv = generator_adv_loss(d_fake, printed_sign=cfg.printed_adv_sign)
            g_total, _, bd = total_losses({"l_dur": l_dur, "l_recon": l_recon, "l_adv": l_adv},
                                          cfg.lambda_recon, cfg.lambda_adv, cfg.lambda_gp)
            for name, v in (("l_dur", l_dur), ("l_recon", l_recon), ("l_adv", l_adv)):
                _check_finite(name, v)
            ad.backward(g_total)
        finally:
            _set_trainable(d_params, True)
        self.g_opt.step(self.g_names)
        self.last_t = t
        return bd

    def train_step_gan(self, batch: Batch) -> LossBreakdown:
        """``d_updates_per_g`` critic updates, then one generator update."""
        if not self.cfg.adversarial:
            raise ValueError(f"preset {self.cfg.preset} has no critic")
        w_est = 0.0
        for _ in range(self.cfg.d_updates_per_g):
            d_bd, w_est = self.critic_step(batch)
        g_bd = self.generator_step(batch)
        self.step += 1
        self.last_w = w_est
        return dataclasses.replace(g_bd, l_wd=d_bd.l_wd, l_gp=d_bd.l_gp, l_d_total=d_bd.l_d_total)

    def train_step(self, batch: Batch) -> LossBreakdown:
        return self.train_step_gan(batch) if self.cfg.adversarial else self.train_step_recon(batch)

    # ------------------------------------------------------------ state

    def check_parameters(self) -> None:
        nets = [("generator", self.generator)] + ([("critic", self.critic)] if self.critic else [])
        for label, net in nets:
            for name, p in net.named_parameters():
                if not np.isfinite(p.data).all():
                    raise NonFiniteError(f"non-finite parameter {label}.{name}")

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {f"generator.{k}": v for k, v in self.generator.state_dict().items()}
        if self.critic is not None:
            out.update({f"critic.{k}": v for k, v in self.critic.state_dict().items()})
        return out


LOG_FIELDS = ["step", "epoch", "t", "l_dur", "l_recon", "l_adv", "l_wd", "l_gp", "l_g_total", "l_d_total",
              "w_estimate", "lr"]


@dataclass
class TrainResult:
    trainer: Trainer
    history: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.history], dtype=np.float64)


def train(cfg: TrainConfig, dataset: Dataset, model_cfg: ModelConfig | None = None, out_dir=None,
          batch: Batch | None = None, progress=None) -> TrainResult:
    """Run ``cfg.steps`` steps. With ``batch`` given, every step reuses it."""
    model_cfg = model_cfg or ModelConfig()
    if model_cfg.n_mels != dataset.n_mels:
        model_cfg = dataclasses.replace(model_cfg, n_mels=dataset.n_mels)
    trainer = Trainer(cfg, model_cfg)
    result = TrainResult(trainer)
    out = Path(out_dir) if out_dir else None
    writer = None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.csv", "w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
        writer.writeheader()
    try:
        for _ in range(cfg.steps):
            b = batch if batch is not None else load_batch(dataset, trainer.next_indices(len(dataset.train)))
            bd = trainer.train_step(b)
            row = {"step": trainer.step, "epoch": trainer.epoch,
                   "t": " ".join(str(int(v)) for v in trainer.last_t) if trainer.last_t is not None else "",
                   **{k: getattr(bd, k) for k in LOG_FIELDS[3:10]},
                   "w_estimate": getattr(trainer, "last_w", math.nan) if cfg.adversarial else math.nan,
                   "lr": trainer.g_opt.lr}
            result.history.append(row)
            if writer:
                writer.writerow(row)
            trainer.check_parameters()
            if out is not None and cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0:
                from .checkpoint import save_trainer
                save_trainer(out / f"step_{trainer.step:06d}.ckpt", trainer, dataset)
            if progress is not None:
                progress(row)
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        from .checkpoint import save_trainer
        save_trainer(out / "final.ckpt", trainer, dataset)
    return result


def smoothed(values: np.ndarray, window: int = 100) -> np.ndarray:
    """Trailing moving average; the first window-1 entries average what is available."""
    values = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.concatenate([[0.0], values]))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def decile_medians(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    k = max(1, n // 10)
    return float(np.median(values[:k])), float(np.median(values[-k:]))
