"""Objective evaluation: DTW, MCD, MS-SSIM on mel images, semitone F0 error and correlation.

Sequences of frames are (L, d) arrays; mel-spectrograms are (M, L_f).
One DTW path per file pair, computed on mel-cepstra, is shared by MCD and
the F0 metrics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial.distance import cdist

from .signal import SignalConfig, extract_f0, mel_cepstrum, read_mel, read_wav

LOG_FLOOR = math.log(1e-5)
MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
F0_REF_HZ = 55.0


# ----------------------------------------------------------------- DTW


def _as_frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"expected a non-empty (L, d) frame sequence, got shape {x.shape}")
    return x


def dtw_align(a, b) -> tuple[list[tuple[int, int]], float]:
    """Exact DTW under Euclidean frame cost with steps (1,0), (0,1), (1,1).

    Returns the minimal-cost path from (0, 0) to (len_a - 1, len_b - 1) and its
    cost (sum of the frame costs along it). Ties prefer the diagonal step.
    """
    a, b = _as_frames(a), _as_frames(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"frame dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    cost = cdist(a, b)
    n, m = cost.shape
    acc = np.empty((n, m))
    acc[0] = np.cumsum(cost[0])
    for i in range(1, n):
        # acc[i, j] = min_{k<=j} (best[k] + sum_{l=k..j} cost[i, l]),
        # best[k] = min(acc[i-1, k], acc[i-1, k-1])
        best = acc[i - 1].copy()
        best[1:] = np.minimum(best[1:], acc[i - 1, :-1])
        prefix = np.concatenate([[0.0], np.cumsum(cost[i])])
        acc[i] = prefix[1:] + np.minimum.accumulate(best - prefix[:-1])
    i, j = n - 1, m - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            options = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
            _, i, j = min(options, key=lambda o: o[0])
        path.append((i, j))
    path.reverse()
    return path, float(acc[-1, -1])


def path_cost(a, b, path) -> float:
    a, b = _as_frames(a), _as_frames(b)
    return float(sum(np.linalg.norm(a[i] - b[j]) for i, j in path))


# ----------------------------------------------------------------- MCD


def silent_frames(mel: np.ndarray, floor: float = LOG_FLOOR) -> np.ndarray:
    """Frames whose every bin sits at the log floor."""
    return np.all(np.asarray(mel) <= floor + 1e-6, axis=0)


def mcd_from_cepstra(c_ref: np.ndarray, c_syn: np.ndarray, path=None, silent_ref=None, silent_syn=None) -> float:
    """MCD over aligned pairs; pairs where both frames are silent are left out."""
    if path is None:
        path, _ = dtw_align(c_ref, c_syn)
    idx = np.asarray(path)
    if silent_ref is not None and silent_syn is not None:
        idx = idx[~(np.asarray(silent_ref)[idx[:, 0]] & np.asarray(silent_syn)[idx[:, 1]])]
        if len(idx) == 0:
            return 0.0
    diff = c_ref[idx[:, 0]] - c_syn[idx[:, 1]]
    return MCD_CONST * float(np.linalg.norm(diff, axis=1).mean())


def mcd(mel_ref, mel_syn, k: int = 13, floor: float = LOG_FLOOR) -> float:
    """Mel-cepstral distortion in dB after DTW on the cepstra (c0 excluded)."""
    return mcd_from_cepstra(mel_cepstrum(mel_ref, k), mel_cepstrum(mel_syn, k), None,
                            silent_frames(mel_ref, floor), silent_frames(mel_syn, floor))


# ----------------------------------------------------------------- MS-SSIM


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _ssim_parts(x: np.ndarray, y: np.ndarray, win: np.ndarray, c1: float, c2: float) -> tuple[float, float]:
    def filt(z):
        return fftconvolve(z, win, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return float(lum.mean()), float(cs.mean())


def _downsample(z: np.ndarray) -> np.ndarray:
    h, w = (z.shape[0] // 2) * 2, (z.shape[1] // 2) * 2
    z = z[:h, :w]
    return 0.25 * (z[0::2, 0::2] + z[1::2, 0::2] + z[0::2, 1::2] + z[1::2, 1::2])


@dataclass
class MsSsimResult:
    value: float
    scales: int
    reduced: bool


def ms_ssim_detail(a, b, win_size: int = 11, sigma: float = 1.5) -> MsSsimResult:
    """MS-SSIM treating two same-shape spectrograms as images.

    Inputs are min-max normalized jointly to [0, 1]. When the image cannot be
    halved five times and still cover the window, fewer scales are used with
    the leading weights renormalized to sum to one (``reduced`` is set).
    Negative per-scale terms are clamped to 0 before the exponent, so an
    anti-correlated pair scores 0 rather than flipping sign twice.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ms_ssim needs two equal 2-D shapes, got {a.shape} and {b.shape}")
    if min(a.shape) < win_size:
        raise ValueError(f"image {a.shape} smaller than the {win_size}x{win_size} window")
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    if hi == lo:
        return MsSsimResult(1.0, 1, True)
    x, y = (a - lo) / (hi - lo), (b - lo) / (hi - lo)
    scales = 1
    while scales < len(MS_SSIM_WEIGHTS) and min(a.shape) // 2 ** scales >= win_size:
        scales += 1
    w = np.array(MS_SSIM_WEIGHTS[:scales])
    w /= w.sum()
    win = _gaussian_window(win_size, sigma)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    value = 1.0
    for s in range(scales):
        lum, cs = _ssim_parts(x, y, win, c1, c2)
        term = lum * cs if s == scales - 1 else cs
        value *= max(term, 0.0) ** w[s]
        if s < scales - 1:
            x, y = _downsample(x), _downsample(y)
    return MsSsimResult(float(value), scales, scales < len(MS_SSIM_WEIGHTS))


def ms_ssim(a, b) -> float:
    return ms_ssim_detail(a, b).value


# ----------------------------------------------------------------- F0


def semitones(f0, ref_hz: float = F0_REF_HZ) -> np.ndarray:
    return 12.0 * np.log2(np.asarray(f0, dtype=np.float64) / ref_hz)


def f0_metrics(f0_ref, f0_syn, path=None) -> tuple[float | None, float | None]:
    """(RMSE in semitones, Pearson r) over aligned pairs where both frames are voiced.

    Without a path the tracks are paired frame by frame. Either value is
    None when undefined (fewer than two voiced pairs, or zero variance for r).
    """
    f0_ref, f0_syn = np.asarray(f0_ref, dtype=np.float64), np.asarray(f0_syn, dtype=np.float64)
    if path is None:
        n = min(len(f0_ref), len(f0_syn))
        idx = np.stack([np.arange(n), np.arange(n)], axis=1)
    else:
        idx = np.asarray(path, dtype=np.int64).reshape(-1, 2)
    r, s = f0_ref[idx[:, 0]], f0_syn[idx[:, 1]]
    voiced = (r > 0) & (s > 0)
    if voiced.sum() < 2:
        return None, None
    sr, ss = semitones(r[voiced]), semitones(s[voiced])
    rmse = float(np.sqrt(np.mean((ss - sr) ** 2)))
    if np.std(sr) == 0 or np.std(ss) == 0:
        return rmse, None
    corr = float(np.clip(np.corrcoef(sr, ss)[0, 1], -1.0, 1.0))
    return rmse, corr


# ----------------------------------------------------------------- reports


def warp_to_reference(mel_syn: np.ndarray, path, n_ref: int) -> np.ndarray:
    """Resample syn frames onto the ref time axis (first match per ref frame)."""
    cols = np.full(n_ref, -1)
    for i, j in path:
        if cols[i] < 0:
            cols[i] = j
    return mel_syn[:, cols]


@dataclass
class FileScores:
    file: str
    ms_ssim: float
    mcd: float
    f0_rmse: float | None
    f0_corr: float | None
    ms_ssim_scales: int = 5


@dataclass
class EvalReport:
    files: list[FileScores] = field(default_factory=list)

    def mean(self, name: str) -> float | None:
        vals = [getattr(f, name) for f in self.files if getattr(f, name) is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def means(self) -> dict[str, float | None]:
        return {k: self.mean(k) for k in ("ms_ssim", "mcd", "f0_rmse", "f0_corr")}

    def write_csv(self, path) -> None:
        def fmt(v):
            return "" if v is None else repr(float(v))

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["file", "ms_ssim", "mcd", "f0_rmse", "f0_corr"])
            for f in self.files:
                w.writerow([f.file, fmt(f.ms_ssim), fmt(f.mcd), fmt(f.f0_rmse), fmt(f.f0_corr)])
            m = self.means
            w.writerow(["mean", fmt(m["ms_ssim"]), fmt(m["mcd"]), fmt(m["f0_rmse"]), fmt(m["f0_corr"])])


def evaluate_pair(name: str, mel_ref, mel_syn, wav_ref=None, wav_syn=None,
                  cfg: SignalConfig = SignalConfig()) -> FileScores:
    mel_ref, mel_syn = np.asarray(mel_ref, dtype=np.float64), np.asarray(mel_syn, dtype=np.float64)
    c_ref, c_syn = mel_cepstrum(mel_ref), mel_cepstrum(mel_syn)
    path, _ = dtw_align(c_ref, c_syn)
    m = mcd_from_cepstra(c_ref, c_syn, path, silent_frames(mel_ref, math.log(cfg.log_floor)),
                         silent_frames(mel_syn, math.log(cfg.log_floor)))
    syn_img = mel_syn if mel_syn.shape == mel_ref.shape else warp_to_reference(mel_syn, path, mel_ref.shape[1])
    ss = ms_ssim_detail(mel_ref, syn_img)
    rmse = corr = None
    if wav_ref is not None and wav_syn is not None:
        f_ref, f_syn = extract_f0(wav_ref, cfg), extract_f0(wav_syn, cfg)
        n_ref, n_syn = mel_ref.shape[1], mel_syn.shape[1]
        f_ref = np.pad(f_ref, (0, max(0, n_ref - len(f_ref))))[:n_ref]
        f_syn = np.pad(f_syn, (0, max(0, n_syn - len(f_syn))))[:n_syn]
        rmse, corr = f0_metrics(f_ref, f_syn, path)
    return FileScores(name, ss.value, m, rmse, corr, ss.scales)


def _index(directory: Path, suffix: str) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.rglob(f"*{suffix}"))}


def evaluate_dirs(ref_dir, syn_dir) -> EvalReport:
    """Score every mel in ``syn_dir`` against the same-named mel under ``ref_dir``.

    F0 metrics need a WAV of the same name on both sides.
    """
    ref_dir, syn_dir = Path(ref_dir), Path(syn_dir)
    for d in (ref_dir, syn_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"directory not found: {d}")
    ref_mels, syn_mels = _index(ref_dir, ".mel"), _index(syn_dir, ".mel")
    ref_wavs, syn_wavs = _index(ref_dir, ".wav"), _index(syn_dir, ".wav")
    names = sorted(set(ref_mels) & set(syn_mels))
    if not names:
        raise FileNotFoundError("no mel files with matching names in the two directories")
    report = EvalReport()
    for name in names:
        mel_ref, meta = read_mel(ref_mels[name])
        mel_syn, _ = read_mel(syn_mels[name])
        cfg = SignalConfig(**meta) if meta else SignalConfig(n_mels=mel_ref.shape[0])
        wav_ref = read_wav(ref_wavs[name])[0] if name in ref_wavs else None
        wav_syn = read_wav(syn_wavs[name])[0] if name in syn_wavs else None
        report.files.append(evaluate_pair(name, mel_ref, mel_syn, wav_ref, wav_syn, cfg))
    return report
