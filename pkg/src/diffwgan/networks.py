"""Acoustic-model generator and the score-conditioned Wasserstein critic.

Tensor layouts: mel-spectrograms and frame-level features are (B, C, L_f);
token-level features inside the encoder are channels-last (B, L_p, C).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (
    Conv1d,
    Conv2d,
    Embedding,
    LayerNorm,
    Linear,
    Module,
    channels_last,
    sinusoidal_embedding,
)

SQRT_HALF = math.sqrt(0.5)


@dataclass
class ModelConfig:
    n_mels: int = 32
    n_phones: int = 8
    n_pitches: int = 128
    max_note_len: int = 512
    n_singers: int = 2
    hidden: int = 64
    enc_layers: int = 2
    enc_heads: int = 2
    enc_ffn: int = 128
    enc_kernel: int = 9
    dur_layers: int = 3
    dur_hidden: int = 64
    dur_kernel: int = 3
    decoder: str = "diffusion"  # "diffusion" or "fft"
    wn_blocks: int = 6
    wn_hidden: int = 64
    wn_kernel: int = 3
    wn_dilation_cycle: int = 3
    time_embed_dim: int = 64
    fft_dec_layers: int = 2
    zero_init_output: bool = False
    d_blocks: int = 3
    d_base_channels: int = 16
    d_score_dim: int = 32
    d_singer_dim: int = 16
    d_time_dim: int = 32
    d_stem_stride: int = 2
    d_first_conditional: bool = False

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = dict(n_mels=80, d_blocks=4, d_stem_stride=1, hidden=256, enc_layers=4, enc_heads=2, enc_ffn=1024, enc_kernel=9, dur_hidden=256,
                    wn_blocks=20, wn_hidden=256, wn_dilation_cycle=4, time_embed_dim=512,
                    fft_dec_layers=4, d_base_channels=32, d_score_dim=64, d_singer_dim=32, d_time_dim=128)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ------------------------------------------------------------------ scores


@dataclass
class MusicalScore:
    """Phone-level score for one utterance.

    ``note_lens`` are note lengths in frames (shared by the phones of a note);
    ``durations`` are per-phone frame counts when known (training data).
    """

    phones: np.ndarray
    note_lens: np.ndarray
    pitches: np.ndarray
    singer: int
    durations: np.ndarray | None = None

    def __post_init__(self):
        self.phones = np.asarray(self.phones, dtype=np.int64)
        self.note_lens = np.asarray(self.note_lens, dtype=np.int64)
        self.pitches = np.asarray(self.pitches, dtype=np.int64)
        if self.durations is not None:
            self.durations = np.asarray(self.durations, dtype=np.int64)
        n = len(self.phones)
        if n == 0:
            raise ValueError("empty score: phone sequence has length 0")
        if len(self.note_lens) != n or len(self.pitches) != n:
            raise ValueError(
                f"score sequences differ in length: phones {n}, note_lens {len(self.note_lens)}, "
                f"pitches {len(self.pitches)}"
            )
        if self.durations is not None and len(self.durations) != n:
            raise ValueError(f"durations length {len(self.durations)} != phone count {n}")

    def validate(self, config: ModelConfig) -> None:
        if self.phones.min() < 0 or self.phones.max() >= config.n_phones:
            raise ValueError(f"phone ids outside [0, {config.n_phones})")
        if self.pitches.min() < 0 or self.pitches.max() >= config.n_pitches:
            raise ValueError(f"pitches outside [0, {config.n_pitches})")
        if not 0 <= self.singer < config.n_singers:
            raise ValueError(f"singer id {self.singer} outside [0, {config.n_singers})")

    @property
    def n_frames(self) -> int:
        if self.durations is None:
            raise ValueError("score has no durations")
        return int(self.durations.sum())


@dataclass
class ScoreBatch:
    phones: np.ndarray  # (B, L_p) int
    note_lens: np.ndarray
    pitches: np.ndarray
    singer: np.ndarray  # (B,)
    token_mask: np.ndarray  # (B, L_p) bool
    durations: np.ndarray | None = None  # (B, L_p) int, zero on padding

    @classmethod
    def from_scores(cls, scores: list[MusicalScore]) -> "ScoreBatch":
        b = len(scores)
        lp = max(len(s.phones) for s in scores)
        phones = np.zeros((b, lp), dtype=np.int64)
        note_lens = np.zeros((b, lp), dtype=np.int64)
        pitches = np.zeros((b, lp), dtype=np.int64)
        mask = np.zeros((b, lp), dtype=bool)
        have_dur = all(s.durations is not None for s in scores)
        durations = np.zeros((b, lp), dtype=np.int64) if have_dur else None
        for i, s in enumerate(scores):
            n = len(s.phones)
            phones[i, :n] = s.phones
            note_lens[i, :n] = s.note_lens
            pitches[i, :n] = s.pitches
            mask[i, :n] = True
            if have_dur:
                durations[i, :n] = s.durations
        singer = np.array([s.singer for s in scores], dtype=np.int64)
        return cls(phones, note_lens, pitches, singer, mask, durations)

    @property
    def batch_size(self) -> int:
        return self.phones.shape[0]


def expansion_index(durations) -> np.ndarray:
    """Source-token index of every output frame, e.g. [2, 3] -> [0, 0, 1, 1, 1]."""
    durations = np.asarray(durations, dtype=np.int64)
    if np.any(durations < 0):
        raise ValueError("negative duration")
    return np.repeat(np.arange(len(durations)), durations)


def length_regulate(h: Tensor, durations: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Expand token features (B, L_p, C) to frames (B, L_f, C) by repetition.

    Returns the expanded features and the (B, L_f) frame mask. Padded frames
    are zero.
    """
    durations = np.asarray(durations, dtype=np.int64)
    b, lp, c = h.shape
    totals = durations.sum(axis=1)
    if np.any(totals <= 0):
        raise ValueError("total duration is zero for at least one batch item")
    lf = int(totals.max())
    index = np.zeros((b, lf), dtype=np.int64)
    mask = np.zeros((b, lf), dtype=bool)
    for i in range(b):
        src = expansion_index(durations[i])
        index[i, : len(src)] = src + i * lp
        index[i, len(src):] = i * lp
        mask[i, : len(src)] = True
    flat = ad.reshape(h, (b * lp, c))
    out = ad.getitem(flat, index.reshape(-1))
    out = ad.reshape(out, (b, lf, c))
    out = ad.mul(out, Tensor(mask[:, :, None].astype(np.float64)))
    return out, mask


def round_durations(dur_hat: np.ndarray, token_mask: np.ndarray) -> np.ndarray:
    """Predicted frame counts -> nearest positive integers (floor of 1); padding -> 0."""
    d = np.maximum(np.rint(dur_hat), 1).astype(np.int64)
    return np.where(token_mask, d, 0)


# ------------------------------------------------------------------ encoder


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"hidden size {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def forward(self, x: Tensor, key_mask: np.ndarray) -> Tensor:
        b, n, c = x.shape
        h, dh = self.heads, c // self.heads

        def split(t):
            return ad.transpose(ad.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = ad.mul(ad.matmul(q, ad.swapaxes(k)), 1.0 / math.sqrt(dh))
        bias = np.where(key_mask, 0.0, -1e9)[:, None, None, :]
        attn = ad.softmax(ad.add(scores, Tensor(bias)), axis=-1)
        y = ad.matmul(attn, v)
        y = ad.reshape(ad.transpose(y, (0, 2, 1, 3)), (b, n, c))
        return self.o(y)


class FFTBlock(Module):
    """Self-attention plus convolutional feed-forward, post-norm residuals."""

    def __init__(self, dim: int, heads: int, ffn: int, kernel: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.conv1 = Conv1d(dim, ffn, kernel, rng)
        self.conv2 = Conv1d(ffn, dim, 1, rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        m = Tensor(mask[:, :, None].astype(np.float64))
        x = self.norm1(ad.add(x, self.attn(x, mask)))
        y = channels_last(x)
        y = self.conv2(ad.relu(self.conv1(y)))
        x = self.norm2(ad.add(x, channels_last(y)))
        return ad.mul(x, m)


class DurationPredictor(Module):
    def __init__(self, dim: int, hidden: int, layers: int, kernel: int, rng: np.random.Generator):
        self.convs = [Conv1d(dim if i == 0 else hidden, hidden, kernel, rng) for i in range(layers)]
        self.norms = [LayerNorm(hidden) for _ in range(layers)]
        self.out = Linear(hidden, 1, rng)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """x: (B, L_p, C) -> raw frame-count predictions (B, L_p)."""
        y = x
        for conv, norm in zip(self.convs, self.norms):
            y = norm(channels_last(ad.relu(conv(channels_last(y)))))
        d = self.out(y)
        d = ad.reshape(d, d.shape[:2])
        return ad.mul(d, Tensor(mask.astype(np.float64)))


@dataclass
class EncodedScore:
    ms: Tensor  # (B, C, L_f)
    dur_hat: Tensor  # (B, L_p)
    frame_mask: np.ndarray  # (B, L_f)
    durations: np.ndarray  # the durations actually used for expansion

    @property
    def n_frames(self) -> int:
        return self.ms.shape[-1]


class ScoreEncoder(Module):
    """Phone/note-length embeddings -> Transformer -> variance adaptor -> ms."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.hidden
        self.cfg = cfg
        self.phone_emb = Embedding(cfg.n_phones, c, rng, scale=c ** -0.5)
        self.len_emb = Embedding(cfg.max_note_len + 1, c, rng, scale=c ** -0.5)
        self.layers = [FFTBlock(c, cfg.enc_heads, cfg.enc_ffn, cfg.enc_kernel, rng) for _ in range(cfg.enc_layers)]
        self.duration = DurationPredictor(c, cfg.dur_hidden, cfg.dur_layers, cfg.dur_kernel, rng)
        self.pitch_emb = Embedding(cfg.n_pitches, c, rng, scale=c ** -0.5)
        self.singer_emb = Embedding(cfg.n_singers, c, rng, scale=c ** -0.5)

    def forward(self, score: ScoreBatch, use_ground_truth: bool = True) -> EncodedScore:
        cfg = self.cfg
        b, lp = score.phones.shape
        if lp == 0:
            raise ValueError("empty score: phone sequence has length 0")
        mask = score.token_mask
        note_lens = np.clip(score.note_lens, 0, cfg.max_note_len)
        pos = sinusoidal_embedding(np.arange(lp), cfg.hidden)[None]
        x = ad.add(ad.add(self.phone_emb(score.phones), self.len_emb(note_lens)), Tensor(pos))
        x = ad.mul(x, Tensor(mask[:, :, None].astype(np.float64)))
        for layer in self.layers:
            x = layer(x, mask)
        dur_hat = self.duration(x, mask)
        if use_ground_truth:
            if score.durations is None:
                raise ValueError("ground-truth durations requested but the score has none")
            durations = score.durations
        else:
            durations = round_durations(dur_hat.data, mask)
        h = ad.add(x, self.pitch_emb(score.pitches))
        frames, frame_mask = length_regulate(h, durations)
        frames = ad.add(frames, ad.reshape(self.singer_emb(score.singer), (b, 1, cfg.hidden)))
        frames = ad.mul(frames, Tensor(frame_mask[:, :, None].astype(np.float64)))
        return EncodedScore(channels_last(frames), dur_hat, frame_mask, durations)


# ------------------------------------------------------------------ decoders


class TimeEmbedding(Module):
    """Sinusoidal step embedding followed by two dense layers with SiLU."""

    def __init__(self, embed_dim: int, out_dim: int, rng: np.random.Generator):
        self.embed_dim = embed_dim
        self.fc1 = Linear(embed_dim, 4 * out_dim, rng)
        self.fc2 = Linear(4 * out_dim, out_dim, rng)

    def forward(self, t) -> Tensor:
        e = Tensor(sinusoidal_embedding(np.asarray(t), self.embed_dim))
        return self.fc2(ad.silu(self.fc1(e)))


class WaveNetBlock(Module):
    def __init__(self, res: int, cond: int, kernel: int, dilation: int, rng: np.random.Generator):
        self.res = res
        self.step_proj = Linear(res, res, rng)
        self.dilated = Conv1d(res, 2 * res, kernel, rng, dilation=dilation)
        self.cond_proj = Conv1d(cond, 2 * res, 1, rng)
        self.out_proj = Conv1d(res, 2 * res, 1, rng)

    def forward(self, x: Tensor, cond: Tensor, temb: Tensor) -> tuple[Tensor, Tensor]:
        b, r, n = x.shape
        y = ad.add(x, ad.reshape(self.step_proj(temb), (b, r, 1)))
        y = ad.add(self.dilated(y), self.cond_proj(cond))
        gate = ad.mul(ad.tanh(y[:, :r]), ad.sigmoid(y[:, r:]))
        y = self.out_proj(gate)
        residual, skip = y[:, :r], y[:, r:]
        return ad.mul(ad.add(x, residual), SQRT_HALF), skip


class DiffusionDecoder(Module):
    """Non-causal conditional WaveNet predicting x̂_0 from (x_t, t, ms)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        r = cfg.wn_hidden
        self.cfg = cfg
        self.in_proj = Conv1d(cfg.n_mels, r, 1, rng)
        self.time = TimeEmbedding(cfg.time_embed_dim, r, rng)
        self.blocks = [
            WaveNetBlock(r, cfg.hidden, cfg.wn_kernel, 2 ** (i % cfg.wn_dilation_cycle), rng)
            for i in range(cfg.wn_blocks)
        ]
        self.skip_proj = Conv1d(r, r, 1, rng)
        self.out_proj = Conv1d(r, cfg.n_mels, 1, rng, zero_init=cfg.zero_init_output)

    def forward(self, x_t, t, ms: Tensor, frame_mask: np.ndarray | None = None) -> Tensor:
        x_t = ad.as_tensor(x_t)
        if x_t.shape[-1] != ms.shape[-1]:
            raise ValueError(f"frame-length mismatch: x_t has {x_t.shape[-1]} frames, ms has {ms.shape[-1]}")
        if x_t.shape[1] != self.cfg.n_mels:
            raise ValueError(f"x_t has {x_t.shape[1]} bins, decoder expects {self.cfg.n_mels}")
        b = x_t.shape[0]
        t = np.broadcast_to(np.asarray(t), (b,))
        temb = self.time(t)
        x = ad.relu(self.in_proj(x_t))
        skips = None
        for block in self.blocks:
            x, skip = block(x, ms, temb)
            skips = skip if skips is None else ad.add(skips, skip)
        y = ad.mul(skips, 1.0 / math.sqrt(len(self.blocks)))
        y = self.out_proj(ad.relu(self.skip_proj(y)))
        if frame_mask is not None:
            y = ad.mul(y, Tensor(frame_mask[:, None, :].astype(np.float64)))
        return y


class FFTDecoder(Module):
    """Feed-forward Transformer stack mapping ms straight to a mel-spectrogram."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.hidden
        self.layers = [FFTBlock(c, cfg.enc_heads, cfg.enc_ffn, cfg.enc_kernel, rng) for _ in range(cfg.fft_dec_layers)]
        self.out = Linear(c, cfg.n_mels, rng, zero_init=cfg.zero_init_output)

    def forward(self, x_t, t, ms: Tensor, frame_mask: np.ndarray | None = None) -> Tensor:
        b, c, n = ms.shape
        if frame_mask is None:
            frame_mask = np.ones((b, n), dtype=bool)
        x = ad.add(channels_last(ms), Tensor(sinusoidal_embedding(np.arange(n), c)[None]))
        for layer in self.layers:
            x = layer(x, frame_mask)
        y = channels_last(self.out(x))
        return ad.mul(y, Tensor(frame_mask[:, None, :].astype(np.float64)))


class Generator(Module):
    """G(x_t, t, ms, id): score encoder plus diffusion (or FFT) decoder."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = ScoreEncoder(cfg, rng)
        if cfg.decoder == "diffusion":
            self.decoder = DiffusionDecoder(cfg, rng)
        elif cfg.decoder == "fft":
            self.decoder = FFTDecoder(cfg, rng)
        else:
            raise ValueError(f"unknown decoder '{cfg.decoder}'")

    def encode_score(self, score: ScoreBatch, use_ground_truth: bool = True) -> EncodedScore:
        return self.encoder(score, use_ground_truth)

    def denoise(self, x_t, t, enc: EncodedScore) -> Tensor:
        return self.decoder(x_t, t, enc.ms, enc.frame_mask)

    def forward(self, x_t, t, enc: EncodedScore) -> Tensor:
        return self.denoise(x_t, t, enc)


# ------------------------------------------------------------------ critic


def lbmod_project(ms: Tensor, v: Tensor, dense_ms: Linear, dense_id: Linear) -> Tensor:
    """s = Dense_ms(ms) + Dense_id(v), broadcast along frames.

    ms: (B, C_s, W), v: (B, C_v) -> s: (B, 2C, W).
    """
    ms, v = ad.as_tensor(ms), ad.as_tensor(v)
    if ms.shape[1] != dense_ms.weight.shape[0]:
        raise ValueError(f"lbmod_project: ms has {ms.shape[1]} channels, projection expects {dense_ms.weight.shape[0]}")
    if v.shape[-1] != dense_id.weight.shape[0]:
        raise ValueError(f"lbmod_project: v has {v.shape[-1]} channels, projection expects {dense_id.weight.shape[0]}")
    b = ms.shape[0]
    s = dense_ms(channels_last(ms))  # (B, W, 2C)
    sv = dense_id(v)  # (B, 2C)
    s = ad.add(s, ad.reshape(sv, (b, 1, sv.shape[-1])))
    return channels_last(s)


def lbmod_apply(y: Tensor, s: Tensor) -> Tensor:
    """Per-frame scale and bias: s[:C] * y + s[C:], repeated along the H axis.

    y: (B, C, H, W), s: (B, 2C, W).
    """
    y, s = ad.as_tensor(y), ad.as_tensor(s)
    b, c, h, w = y.shape
    if s.shape[-1] != w:
        raise ValueError(f"lbmod_apply: condition width {s.shape[-1]} != feature width {w}")
    if s.shape[1] != 2 * c:
        raise ValueError(f"lbmod_apply: condition has {s.shape[1]} channels, need {2 * c}")
    scale = ad.reshape(s[:, :c], (b, c, 1, w))
    bias = ad.reshape(s[:, c:], (b, c, 1, w))
    return ad.add(ad.mul(scale, y), bias)


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_in, n_out) linear-interpolation weights with half-pixel centres."""
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_in, n_out))
    m[lo, np.arange(n_out)] += 1.0 - frac
    m[hi, np.arange(n_out)] += frac
    return m


class ResBlock(Module):
    def __init__(self, n_in: int, n_out: int, time_dim: int, conditional: bool, score_dim: int,
                 singer_dim: int, rng: np.random.Generator):
        self.conditional = conditional
        self.conv1 = Conv2d(n_in, n_out, 3, rng, stride=2)
        self.time_proj = Linear(time_dim, n_out, rng)
        if conditional:
            self.dense_ms = Linear(score_dim, 2 * n_out, rng)
            self.dense_id = Linear(singer_dim, 2 * n_out, rng, bias=False)
            # start the modulation near identity: scale part of the bias = 1
            self.dense_ms.bias.data[:n_out] = 1.0
            self.dense_ms.bias.data[n_out:] = 0.0
        self.conv2 = Conv2d(n_out, n_out, 3, rng)
        self.skip = Conv2d(n_in, n_out, 1, rng, stride=2, bias=False)

    def forward(self, x: Tensor, temb: Tensor, ms: Tensor | None, v: Tensor | None) -> Tensor:
        h = self.conv1(ad.leaky_relu(x, 0.2))
        b, c = h.shape[:2]
        h = ad.add(h, ad.reshape(self.time_proj(temb), (b, c, 1, 1)))
        if self.conditional:
            w = h.shape[-1]
            ms_w = ad.matmul(ms, Tensor(interpolation_matrix(ms.shape[-1], w)))
            h = lbmod_apply(h, lbmod_project(ms_w, v, self.dense_ms, self.dense_id))
        h = self.conv2(ad.leaky_relu(h, 0.2))
        return ad.mul(ad.add(h, self.skip(x)), SQRT_HALF)


class Discriminator(Module):
    """D(x_{t-1}, x_t, t, s_pho, s_len, s_pit, id) -> one unbounded score per item."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        cs = cfg.d_score_dim
        self.phone_emb = Embedding(cfg.n_phones, cs, rng, scale=cs ** -0.5)
        self.len_emb = Embedding(cfg.max_note_len + 1, cs, rng, scale=cs ** -0.5)
        self.pitch_emb = Embedding(cfg.n_pitches, cs, rng, scale=cs ** -0.5)
        self.score_conv = Conv1d(cs, cs, 3, rng)
        self.singer_emb = Embedding(cfg.n_singers, cfg.d_singer_dim, rng)
        self.time = TimeEmbedding(cfg.d_time_dim, cfg.d_time_dim, rng)
        base = cfg.d_base_channels
        widths = [base * 2 ** i for i in range(cfg.d_blocks)]
        self.stem = Conv2d(2, base, 3, rng, stride=cfg.d_stem_stride)
        self.blocks = []
        for i, w in enumerate(widths):
            conditional = (i % 2 == 0) == cfg.d_first_conditional
            n_in = widths[i - 1] if i else base
            self.blocks.append(ResBlock(n_in, w, cfg.d_time_dim, conditional, cs, cfg.d_singer_dim, rng))
        self.head = Linear(widths[-1], 1, rng)

    def zero_head(self) -> None:
        self.head.weight.data[:] = 0.0
        self.head.bias.data[:] = 0.0

    def encode_score(self, score: ScoreBatch) -> Tensor:
        if score.durations is None:
            raise ValueError("critic needs phone durations to align the score with frames")
        note_lens = np.clip(score.note_lens, 0, self.cfg.max_note_len)
        tok = ad.add(ad.add(self.phone_emb(score.phones), self.len_emb(note_lens)), self.pitch_emb(score.pitches))
        frames, _ = length_regulate(tok, score.durations)
        return ad.leaky_relu(self.score_conv(channels_last(frames)), 0.2)

    def forward(self, x_prev, x_t, t, score: ScoreBatch, score_features: Tensor | None = None) -> Tensor:
        x_prev, x_t = ad.as_tensor(x_prev), ad.as_tensor(x_t)
        if x_prev.shape != x_t.shape:
            raise ValueError(f"critic inputs differ in shape: {x_prev.shape} vs {x_t.shape}")
        b, m, n = x_t.shape
        need = 2 ** len(self.blocks) * self.cfg.d_stem_stride
        if m < need or n < need:
            raise ValueError(f"input {m}x{n} too small for a {len(self.blocks)}-level pyramid (need >= {need})")
        ms = self.encode_score(score) if score_features is None else score_features
        if ms.shape[-1] != n:
            raise ValueError(f"score covers {ms.shape[-1]} frames, inputs have {n}")
        v = self.singer_emb(score.singer)
        temb = self.time(np.broadcast_to(np.asarray(t), (b,)))
        x = ad.concat([ad.reshape(x_prev, (b, 1, m, n)), ad.reshape(x_t, (b, 1, m, n))], axis=1)
        h = self.stem(x)
        for block in self.blocks:
            h = block(h, temb, ms, v)
        pooled = ad.mean(ad.leaky_relu(h, 0.2), axis=(2, 3))
        return ad.reshape(self.head(pooled), (b,))


def msc_discriminator(disc: Discriminator, x_prev, x_t, t, score: ScoreBatch) -> Tensor:
    return disc(x_prev, x_t, t, score)
