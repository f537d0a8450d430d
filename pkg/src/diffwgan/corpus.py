"""Synthetic singing corpus: scores, rendered audio, mel-spectrograms, batching.

Every note is a consonant-like phone (shaped noise burst) followed by a
vowel-like phone (harmonic stack at the note pitch). Singers differ in
spectral tilt, vibrato and formant placement.

On-disk layout::

    root/manifest.json
    root/singer_<s>/<utt>.score   text: singer / phones / note_lens / pitches / durations lines
    root/singer_<s>/<utt>.wav     16-bit PCM mono
    root/singer_<s>/<utt>.mel     mel file (see signal.encode_mel)
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .networks import MusicalScore, ScoreBatch
from .signal import SignalConfig, frame_count, read_mel, stft_mel, write_mel, write_wav

N_CONSONANTS = 4
LOG_FLOOR = float(np.log(1e-5))


@dataclass(frozen=True)
class ToyCorpusSpec:
    n_singers: int = 2
    n_phones: int = 8  # first n_consonants ids are consonant-like, the rest vowel-like
    n_consonants: int = N_CONSONANTS
    segments_per_singer: int = 10
    heldout_per_singer: int = 2
    min_seconds: float = 2.0
    max_seconds: float = 4.0
    pitch_low: int = 55
    pitch_high: int = 72
    n_mels: int = 32
    sample_rate: int = 22050
    hop: int = 256
    n_fft: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_consonants < self.n_phones:
            raise ValueError("need at least one consonant-like and one vowel-like phone")
        if self.heldout_per_singer < 2:
            raise ValueError("at least 2 held-out segments per singer are required")
        if self.segments_per_singer <= self.heldout_per_singer:
            raise ValueError("segments_per_singer must exceed heldout_per_singer")
        if not 0 < self.min_seconds <= self.max_seconds:
            raise ValueError(f"unsatisfiable duration bounds {self.min_seconds}..{self.max_seconds} s")
        if self.min_frames < MIN_NOTE_FRAMES:
            raise ValueError(f"unsatisfiable duration bounds: {self.min_seconds} s is shorter than one note")
        if self.pitch_low > self.pitch_high:
            raise ValueError("pitch_low above pitch_high")

    @property
    def signal_config(self) -> SignalConfig:
        return SignalConfig(sample_rate=self.sample_rate, n_fft=self.n_fft, hop=self.hop, n_mels=self.n_mels)

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop

    @property
    def min_frames(self) -> int:
        return int(np.ceil(self.min_seconds * self.frames_per_second))

    @property
    def max_frames(self) -> int:
        return int(np.floor(self.max_seconds * self.frames_per_second))

    def to_dict(self) -> dict:
        return asdict(self)


CONS_FRAMES = (2, 5)
VOWEL_FRAMES = (8, 30)
MIN_NOTE_FRAMES = CONS_FRAMES[0] + 4


@dataclass
class Utterance:
    uid: str
    score: MusicalScore
    mel: np.ndarray  # (M, L_f) log-mel, float32 as stored
    wav: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.mel.shape[1]


# ----------------------------------------------------------------- scores


def random_score(rng: np.random.Generator, spec: ToyCorpusSpec, singer: int) -> MusicalScore:
    """Consonant+vowel notes whose durations sum to a frame count within the bounds."""
    target = int(rng.integers(spec.min_frames, spec.max_frames + 1))
    phones, durs, pitches, note_lens = [], [], [], []
    pitch = int(rng.integers(spec.pitch_low, spec.pitch_high + 1))
    total = 0
    while total < target:
        c = int(rng.integers(CONS_FRAMES[0], CONS_FRAMES[1] + 1))
        v = int(rng.integers(VOWEL_FRAMES[0], VOWEL_FRAMES[1] + 1))
        remaining = target - total
        if c + v > remaining:
            if remaining >= MIN_NOTE_FRAMES:
                c = min(c, remaining - 4)
                v = remaining - c
            else:
                # too short for a new note: lengthen the previous vowel instead
                durs[-1] += remaining
                note_lens[-1] += remaining
                note_lens[-2] += remaining
                break
        pitch = int(np.clip(pitch + rng.integers(-4, 5), spec.pitch_low, spec.pitch_high))
        phones += [int(rng.integers(0, spec.n_consonants)), int(rng.integers(spec.n_consonants, spec.n_phones))]
        durs += [c, v]
        pitches += [pitch, pitch]
        note_lens += [c + v, c + v]
        total += c + v
    return MusicalScore(np.array(phones), np.array(note_lens), np.array(pitches), singer, np.array(durs))


def score_to_text(score: MusicalScore) -> str:
    def row(name, values):
        return name + " " + " ".join(str(int(v)) for v in values)

    lines = [f"singer {int(score.singer)}", row("phones", score.phones), row("note_lens", score.note_lens),
             row("pitches", score.pitches)]
    if score.durations is not None:
        lines.append(row("durations", score.durations))
    return "\n".join(lines) + "\n"


def score_from_text(text: str) -> MusicalScore:
    fields_: dict[str, list[int]] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        try:
            fields_[key] = [int(v) for v in vals]
        except ValueError:
            raise ValueError(f"score line '{raw}': values must be integers") from None
    for key in ("singer", "phones", "note_lens", "pitches"):
        if key not in fields_:
            raise ValueError(f"score is missing the '{key}' line")
    if len(fields_["singer"]) != 1:
        raise ValueError("score 'singer' line needs exactly one value")
    return MusicalScore(fields_["phones"], fields_["note_lens"], fields_["pitches"], fields_["singer"][0],
                        fields_.get("durations"))


def read_score(path) -> MusicalScore:
    return score_from_text(Path(path).read_text())


# ----------------------------------------------------------------- rendering


@dataclass(frozen=True)
class SingerVoice:
    tilt: float  # harmonic amplitude ~ k^-tilt
    vibrato_hz: float
    vibrato_semitones: float
    formant_shift: float
    breath: float


def singer_voice(singer: int) -> SingerVoice:
    r = np.random.default_rng([1234, singer])
    return SingerVoice(tilt=0.8 + 0.6 * (singer % 2) + 0.1 * r.random(), vibrato_hz=5.0 + r.random(),
                       vibrato_semitones=0.15 + 0.15 * r.random(), formant_shift=0.9 + 0.25 * r.random(),
                       breath=0.01 + 0.02 * r.random())


# formant pairs (Hz) per vowel-like phone, and band centres per consonant-like phone
VOWEL_FORMANTS = [(700, 1200), (400, 2200), (300, 900), (550, 1800), (800, 1500), (350, 2600)]
CONSONANT_BANDS = [4500.0, 2500.0, 7000.0, 1500.0, 5500.0, 3500.0]


def midi_to_hz(p):
    return 440.0 * 2.0 ** ((np.asarray(p, dtype=np.float64) - 69.0) / 12.0)


def _ramp(n: int, sr: int) -> np.ndarray:
    env = np.ones(n)
    k = min(n // 2, int(0.005 * sr))
    if k > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        env[:k] = r
        env[-k:] = r[::-1]
    return env


def _render_vowel(rng, n: int, f0: float, phone: int, voice: SingerVoice, spec: ToyCorpusSpec) -> np.ndarray:
    sr = spec.sample_rate
    t = np.arange(n) / sr
    vib = voice.vibrato_semitones * np.sin(2 * np.pi * voice.vibrato_hz * t + rng.uniform(0, 2 * np.pi))
    inst = f0 * 2.0 ** (vib / 12.0)
    phase = 2 * np.pi * np.cumsum(inst) / sr
    f1, f2 = VOWEL_FORMANTS[(phone - spec.n_consonants) % len(VOWEL_FORMANTS)]
    f1, f2 = f1 * voice.formant_shift, f2 * voice.formant_shift
    out = np.zeros(n)
    for k in range(1, int(0.45 * sr / f0) + 1):
        fk = k * f0
        env = 0.3 + np.exp(-0.5 * ((fk - f1) / 150.0) ** 2) + 0.7 * np.exp(-0.5 * ((fk - f2) / 250.0) ** 2)
        out += k ** -voice.tilt * env * np.sin(k * phase)
    out /= max(np.abs(out).max(), 1e-9)
    out += voice.breath * rng.standard_normal(n)
    return 0.5 * out


def _render_consonant(rng, n: int, phone: int, spec: ToyCorpusSpec) -> np.ndarray:
    sr = spec.sample_rate
    centre = CONSONANT_BANDS[phone % len(CONSONANT_BANDS)]
    spec_ = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec_ *= np.exp(-0.5 * ((freqs - centre) / (0.25 * centre)) ** 2)
    burst = np.fft.irfft(spec_, n)
    burst /= max(np.abs(burst).max(), 1e-9)
    decay = np.exp(-np.linspace(0.0, 3.0, n))
    return 0.2 * burst * decay


def render(score: MusicalScore, spec: ToyCorpusSpec, rng: np.random.Generator) -> np.ndarray:
    """Waveform with exactly ``sum(D) * hop - 1`` samples, so the mel has sum(D) frames."""
    hop, sr = spec.hop, spec.sample_rate
    lf = int(score.durations.sum())
    n_total = lf * hop - 1
    wav = np.zeros(lf * hop)
    voice = singer_voice(int(score.singer))
    start = 0
    for phone, d, pitch in zip(score.phones, score.durations, score.pitches):
        n = int(d) * hop
        if phone < spec.n_consonants:
            seg = _render_consonant(rng, n, int(phone), spec)
        else:
            seg = _render_vowel(rng, n, float(midi_to_hz(pitch)), int(phone), voice, spec)
        wav[start : start + n] += seg * _ramp(n, sr)
        start += n
    wav += 1e-4 * rng.standard_normal(wav.shape)
    wav = wav[:n_total]
    assert frame_count(len(wav), hop) == lf
    return wav


# ----------------------------------------------------------------- corpus on disk


def _utt_id(singer: int, index: int) -> str:
    return f"s{singer}_{index:03d}"


def generate_corpus(spec: ToyCorpusSpec, root) -> dict:
    """Write the corpus to ``root`` and return its manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    scfg = spec.signal_config
    train, heldout = [], []
    mel_lo, mel_hi = np.inf, -np.inf
    for s in range(spec.n_singers):
        sdir = root / f"singer_{s}"
        sdir.mkdir(exist_ok=True)
        for i in range(spec.segments_per_singer):
            rng = np.random.default_rng([spec.seed, s, i])
            score = random_score(rng, spec, s)
            wav = render(score, spec, rng)
            mel = stft_mel(wav, scfg).astype(np.float32)
            uid = _utt_id(s, i)
            (sdir / f"{uid}.score").write_text(score_to_text(score))
            write_wav(sdir / f"{uid}.wav", wav, spec.sample_rate)
            write_mel(sdir / f"{uid}.mel", mel, scfg.to_dict())
            entry = {"id": uid, "singer": s, "frames": int(mel.shape[1]),
                     "score": f"singer_{s}/{uid}.score", "wav": f"singer_{s}/{uid}.wav",
                     "mel": f"singer_{s}/{uid}.mel"}
            if i < spec.segments_per_singer - spec.heldout_per_singer:
                train.append(entry)
                mel_lo = min(mel_lo, float(mel.min()))
                mel_hi = max(mel_hi, float(mel.max()))
            else:
                heldout.append(entry)
    manifest = {
        "format": "toy-singing-corpus/1",
        "spec": spec.to_dict(),
        "signal": scfg.to_dict(),
        "normalization": {"mel_min": mel_lo, "mel_max": mel_hi},
        "train": train,
        "heldout": heldout,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


@dataclass
class Dataset:
    root: Path
    manifest: dict
    train: list[Utterance]
    heldout: list[Utterance]

    @property
    def n_mels(self) -> int:
        return int(self.manifest["signal"]["n_mels"])

    @property
    def signal_config(self) -> SignalConfig:
        return SignalConfig(**self.manifest["signal"])

    @property
    def mel_range(self) -> tuple[float, float]:
        n = self.manifest["normalization"]
        return float(n["mel_min"]), float(n["mel_max"])

    def normalize(self, mel: np.ndarray) -> np.ndarray:
        """log-mel -> roughly [-1, 1] using the training-set range."""
        lo, hi = self.mel_range
        return (np.asarray(mel, dtype=np.float64) - lo) / (hi - lo) * 2.0 - 1.0

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.mel_range
        return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0 * (hi - lo) + lo


def load_corpus(root) -> Dataset:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"corpus manifest not found: {path}")
    manifest = json.loads(path.read_text())

    def load(entry) -> Utterance:
        score = read_score(root / entry["score"])
        mel, _ = read_mel(root / entry["mel"])
        if score.durations is None or int(score.durations.sum()) != mel.shape[1]:
            raise ValueError(f"{entry['id']}: durations do not sum to the mel frame count {mel.shape[1]}")
        return Utterance(entry["id"], score, mel)

    return Dataset(root, manifest, [load(e) for e in manifest["train"]], [load(e) for e in manifest["heldout"]])


@dataclass
class Batch:
    score: ScoreBatch
    mel: np.ndarray  # (B, M, L) normalized, zero beyond each item's length
    frame_mask: np.ndarray  # (B, L) bool
    ids: list[str] = field(default_factory=list)

    @property
    def lengths(self) -> np.ndarray:
        return self.frame_mask.sum(axis=1)


def load_batch(dataset: Dataset | list[Utterance], indices, pad: bool = True, split: str = "train") -> Batch:
    """Collate utterances into a padded batch with a frame mask."""
    utts = dataset if isinstance(dataset, list) else getattr(dataset, split)
    items = [utts[i] for i in indices]
    if not items:
        raise ValueError("empty batch")
    lengths = [u.n_frames for u in items]
    if not pad and len(set(lengths)) > 1:
        raise ValueError("items differ in length and padding is disabled")
    lmax = max(lengths)
    m = items[0].mel.shape[0]
    mel = np.zeros((len(items), m, lmax))
    mask = np.zeros((len(items), lmax), dtype=bool)
    for i, u in enumerate(items):
        x = u.mel if isinstance(dataset, list) else dataset.normalize(u.mel)
        mel[i, :, : u.n_frames] = x
        mask[i, : u.n_frames] = True
    return Batch(ScoreBatch.from_scores([u.score for u in items]), mel, mask, [u.uid for u in items])
