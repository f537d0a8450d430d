"""Audio-side DSP: log-mel analysis, mel-cepstra, YIN pitch, Griffin-Lim, file IO.

Mel-spectrograms are (M, L_f) arrays of natural-log mel power with a floor
of 1e-5. Frames are centred: frame ``i`` covers samples around ``i * hop``
with zero padding at both ends, so ``L_f = floor(n / hop) + 1``.
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft


@dataclass(frozen=True)
class SignalConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-5
    f0_min: float = 50.0
    f0_max: float = 1100.0
    yin_threshold: float = 0.1

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    @property
    def top_freq(self) -> float:
        return self.nyquist if self.fmax is None else float(self.fmax)

    def to_dict(self) -> dict:
        return asdict(self)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_frequencies(cfg: SignalConfig) -> np.ndarray:
    """The M + 2 edge/centre frequencies; filter ``m`` peaks at entry ``m + 1``."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.top_freq), cfg.n_mels + 2))


def mel_filterbank(cfg: SignalConfig) -> np.ndarray:
    """(M, n_fft // 2 + 1) triangular filters with unit peak on the HTK mel scale."""
    pts = mel_frequencies(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, centre, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs[None, :] - lo) / (centre - lo)
    down = (hi - freqs[None, :]) / (hi - centre)
    return np.maximum(0.0, np.minimum(up, down))


def _check_wav(wav) -> np.ndarray:
    wav = np.asarray(wav, dtype=np.float64)
    if wav.ndim != 1:
        raise ValueError(f"expected mono 1-D samples, got shape {wav.shape}")
    if wav.size == 0:
        raise ValueError("empty waveform")
    return wav


def frame_count(n_samples: int, hop: int) -> int:
    return n_samples // hop + 1


def stft(wav, cfg: SignalConfig) -> np.ndarray:
    """Complex STFT, (n_fft // 2 + 1, L_f), Hann window, zero-padded centring."""
    wav = _check_wav(wav)
    n = cfg.n_fft
    padded = np.pad(wav, (n // 2, n // 2))
    frames = np.lib.stride_tricks.sliding_window_view(padded, n)[:: cfg.hop]
    frames = frames[: frame_count(len(wav), cfg.hop)]
    window = np.hanning(n + 1)[:-1]  # periodic Hann
    return sfft.rfft(frames * window, axis=1).T


def stft_mel(wav, cfg: SignalConfig = SignalConfig()) -> np.ndarray:
    power = np.abs(stft(wav, cfg)) ** 2
    return np.log(np.maximum(mel_filterbank(cfg) @ power, cfg.log_floor))


def mel_cepstrum(mel: np.ndarray, k: int = 13) -> np.ndarray:
    """Orthonormal DCT-II over the bins of each frame, coefficients 1..k.

    Returns (L_f, k).
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2:
        raise ValueError(f"mel must be (M, L_f), got shape {mel.shape}")
    if not 1 <= k <= mel.shape[0] - 1:
        raise ValueError(f"k must be in 1..{mel.shape[0] - 1}, got {k}")
    c = sfft.dct(mel, type=2, norm="ortho", axis=0)
    return c[1 : k + 1].T


def extract_f0(wav, cfg: SignalConfig = SignalConfig()) -> np.ndarray:
    """YIN pitch track in Hz, one value per mel frame, 0 for unvoiced frames."""
    wav = _check_wav(wav)
    sr = cfg.sample_rate
    if sr < 8000:
        raise ValueError(f"sample rate {sr} Hz is below the 8 kHz minimum for pitch extraction")
    w = cfg.n_fft  # integration window
    tau_max = int(np.ceil(sr / cfg.f0_min)) + 1
    tau_min = max(2, int(np.floor(sr / cfg.f0_max)))
    span = w + tau_max
    n_frames = frame_count(len(wav), cfg.hop)
    padded = np.pad(wav, (w // 2, span))
    frames = np.lib.stride_tricks.sliding_window_view(padded, span)[:: cfg.hop][:n_frames]

    # d(tau) = sum_j (x_j - x_{j+tau})^2 over j < w, via energies and an FFT cross-correlation
    nfft = int(sfft.next_fast_len(span + w))
    cross = sfft.irfft(np.conj(sfft.rfft(frames[:, :w], nfft, axis=1)) * sfft.rfft(frames, nfft, axis=1),
                       nfft, axis=1)[:, : tau_max + 1]
    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    e_shift = sq[:, taus + w] - sq[:, taus]
    d = np.maximum(sq[:, w:w + 1] + e_shift - 2.0 * cross, 0.0)

    cum = np.cumsum(d[:, 1:], axis=1)
    cmnd = np.ones_like(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd[:, 1:] = np.where(cum > 0, d[:, 1:] * taus[1:] / cum, 1.0)

    f0 = np.zeros(n_frames)
    energy = sq[:, w] / w
    for i in range(n_frames):
        if energy[i] < 1e-10:
            continue
        row = cmnd[i]
        below = np.nonzero(row[tau_min:tau_max] < cfg.yin_threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + below[0]
        while tau + 1 < tau_max and row[tau + 1] < row[tau]:
            tau += 1
        a, b, c = row[tau - 1], row[tau], row[tau + 1]
        denom = a - 2.0 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        freq = sr / (tau + shift)
        if cfg.f0_min <= freq <= cfg.f0_max:
            f0[i] = freq
    return f0


def istft(spec: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`; length (L_f - 1) * hop."""
    n = cfg.n_fft
    window = np.hanning(n + 1)[:-1]
    frames = sfft.irfft(spec.T, n, axis=1) * window
    n_frames = frames.shape[0]
    total = n + cfg.hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        s = i * cfg.hop
        out[s : s + n] += frames[i]
        norm[s : s + n] += window ** 2
    out = np.where(norm > 1e-8, out / np.maximum(norm, 1e-8), 0.0)
    return out[n // 2 : n // 2 + cfg.hop * (n_frames - 1)]


def griffin_lim(mel: np.ndarray, cfg: SignalConfig = SignalConfig(), iters: int = 32, seed: int = 0) -> np.ndarray:
    """Waveform preview from a log-mel via the filterbank pseudo-inverse.

    Energy at the log floor maps to silence.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.shape[0] != cfg.n_mels:
        raise ValueError(f"mel has {mel.shape[0]} bins, config expects {cfg.n_mels}")
    power = np.maximum(np.exp(mel) - cfg.log_floor, 0.0)
    mag = np.sqrt(np.maximum(np.linalg.pinv(mel_filterbank(cfg)) @ power, 0.0))
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    n_samples = cfg.hop * (mel.shape[1] - 1)
    wav = istft(mag * phase, cfg)
    for _ in range(iters):
        spec = stft(np.pad(wav, (0, max(0, n_samples - len(wav)))), cfg)[:, : mag.shape[1]]
        phase = np.exp(1j * np.angle(spec))
        wav = istft(mag * phase, cfg)
    return wav


# ----------------------------------------------------------------- file IO


def write_wav(path, wav, sample_rate: int) -> None:
    """16-bit PCM mono; samples are clipped to [-1, 1]."""
    pcm = np.round(np.clip(np.asarray(wav, dtype=np.float64), -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(sample_rate))
        f.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        sr = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return pcm.astype(np.float64) / 32767.0, sr


MEL_MAGIC = b"DWMEL\0"
MEL_VERSION = 1
_MEL_HEADER = struct.Struct("<6sHIII")  # magic, version, M, L_f, config-json length


def encode_mel(mel: np.ndarray, config: dict | None = None) -> bytes:
    mel = np.asarray(mel)
    if mel.ndim != 2:
        raise ValueError(f"mel must be (M, L_f), got shape {mel.shape}")
    meta = json.dumps(config or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = _MEL_HEADER.pack(MEL_MAGIC, MEL_VERSION, mel.shape[0], mel.shape[1], len(meta))
    return head + meta + np.asarray(mel, dtype="<f4", order="C").tobytes()


def decode_mel(blob: bytes) -> tuple[np.ndarray, dict]:
    if len(blob) < _MEL_HEADER.size:
        raise ValueError("mel file truncated")
    magic, version, m, lf, n_meta = _MEL_HEADER.unpack_from(blob)
    if magic != MEL_MAGIC:
        raise ValueError("not a mel file (bad magic)")
    if version != MEL_VERSION:
        raise ValueError(f"unsupported mel file version {version}")
    start = _MEL_HEADER.size + n_meta
    if len(blob) != start + 4 * m * lf:
        raise ValueError("mel file size does not match its header")
    config = json.loads(blob[_MEL_HEADER.size:start].decode("utf-8"))
    mel = np.frombuffer(blob, dtype="<f4", offset=start).reshape(m, lf).copy()
    return mel, config


def write_mel(path, mel: np.ndarray, config: dict | None = None) -> None:
    Path(path).write_bytes(encode_mel(mel, config))


def read_mel(path) -> tuple[np.ndarray, dict]:
    """Returns the float32 (M, L_f) payload and the echoed config."""
    return decode_mel(Path(path).read_bytes())
