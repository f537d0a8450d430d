import json

import numpy as np
import pytest

from diffwgan.corpus import (
    ToyCorpusSpec,
    Utterance,
    generate_corpus,
    load_batch,
    load_corpus,
    midi_to_hz,
    random_score,
    read_score,
    render,
    score_from_text,
    score_to_text,
)
from diffwgan.metrics import semitones
from diffwgan.networks import MusicalScore
from diffwgan.objectives import recon_loss
from diffwgan.signal import extract_f0, read_wav

from conftest import SMALL_SPEC


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_gives_identical_bytes(tmp_path):
    generate_corpus(SMALL_SPEC, tmp_path / "a")
    generate_corpus(SMALL_SPEC, tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")


def test_different_seed_changes_output(tmp_path):
    generate_corpus(SMALL_SPEC, tmp_path / "a")
    other = ToyCorpusSpec(**{**SMALL_SPEC.to_dict(), "seed": 6})
    generate_corpus(other, tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") != _tree_bytes(tmp_path / "b")


def test_heldout_split(small_corpus):
    held = small_corpus.manifest["heldout"]
    for s in range(SMALL_SPEC.n_singers):
        assert sum(e["singer"] == s for e in held) == 2
    ids = {e["id"] for e in small_corpus.manifest["train"]}
    assert ids.isdisjoint({e["id"] for e in held})


def test_durations_sum_to_frames_and_lengths_in_bounds(small_corpus):
    for u in small_corpus.train + small_corpus.heldout:
        assert int(u.score.durations.sum()) == u.n_frames
        assert SMALL_SPEC.min_frames <= u.n_frames <= SMALL_SPEC.max_frames
        assert u.mel.shape[0] == SMALL_SPEC.n_mels


def test_vowel_pitch_within_half_semitone(small_corpus):
    cfg = small_corpus.signal_config
    checked = 0
    for entry, u in zip(small_corpus.manifest["train"], small_corpus.train):
        wav, _ = read_wav(small_corpus.root / entry["wav"])
        f0 = extract_f0(wav, cfg)
        start = 0
        for ph, d, p in zip(u.score.phones, u.score.durations, u.score.pitches):
            if ph >= SMALL_SPEC.n_consonants and d >= 8:
                seg = f0[start + 3 : start + d - 3]
                seg = seg[seg > 0]
                assert len(seg) > 0
                err = float(np.median(semitones(seg)) - semitones(midi_to_hz(p)))
                assert abs(err) <= 0.5, (u.uid, err)
                checked += 1
            start += int(d)
    assert checked >= 10


def test_score_text_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = random_score(rng, ToyCorpusSpec(), 1)
    text = score_to_text(s)
    back = score_from_text(text)
    for f in ("phones", "note_lens", "pitches", "durations"):
        np.testing.assert_array_equal(getattr(back, f), getattr(s, f))
    assert back.singer == 1
    (tmp_path / "x.score").write_text(text)
    assert read_score(tmp_path / "x.score").n_frames == s.n_frames


def test_render_length_matches_frames():
    spec = ToyCorpusSpec()
    rng = np.random.default_rng(1)
    s = random_score(rng, spec, 0)
    wav = render(s, spec, rng)
    assert len(wav) // spec.hop + 1 == int(s.durations.sum())


def test_unsatisfiable_spec_raises():
    with pytest.raises(ValueError, match="unsatisfiable"):
        ToyCorpusSpec(min_seconds=3.0, max_seconds=2.0)
    with pytest.raises(ValueError, match="unsatisfiable"):
        ToyCorpusSpec(min_seconds=0.01, max_seconds=0.02)
    with pytest.raises(ValueError):
        ToyCorpusSpec(heldout_per_singer=1)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path)


def test_manifest_normalization_from_training_set(small_corpus):
    lo, hi = small_corpus.mel_range
    mels = np.concatenate([u.mel.ravel() for u in small_corpus.train])
    assert lo == float(mels.min()) and hi == float(mels.max())
    x = small_corpus.normalize(small_corpus.train[0].mel)
    assert x.min() >= -1 and x.max() <= 1
    np.testing.assert_allclose(small_corpus.denormalize(x), small_corpus.train[0].mel, atol=1e-5)
    json.dumps(small_corpus.manifest)


def _utt(n, seed):
    rng = np.random.default_rng(seed)
    return Utterance(f"u{n}", MusicalScore([1, 5], [n, n], [60, 60], 0, [2, n - 2]), rng.standard_normal((4, n)))


def test_single_item_batch_has_full_mask():
    b = load_batch([_utt(10, 0)], [0])
    assert b.frame_mask.all() and b.mel.shape == (1, 4, 10)


def test_padding_masks_tail_frames():
    b = load_batch([_utt(10, 0), _utt(7, 1)], [0, 1])
    assert (~b.frame_mask).sum() == 3
    assert not b.frame_mask[1, 7:].any()
    with pytest.raises(ValueError):
        load_batch([_utt(10, 0), _utt(7, 1)], [0, 1], pad=False)


def test_padded_loss_is_mean_of_item_losses():
    utts = [_utt(10, 0), _utt(7, 1)]
    b = load_batch(utts, [0, 1])
    pred = b.mel + np.random.default_rng(5).standard_normal(b.mel.shape)
    pred[1, :, 7:] = 1e6
    batch_loss = float(recon_loss(b.mel, pred, b.frame_mask).data)
    per_item = [float(recon_loss(b.mel[i, :, :n], pred[i, :, :n]).data) for i, n in enumerate((10, 7))]
    assert abs(batch_loss - np.mean(per_item)) < 1e-12
