import argparse

import pytest

from diffwgan import autodiff as ad
from diffwgan.cli import build_parser, main
from diffwgan.corpus import load_corpus
from diffwgan.signal import read_mel, write_mel

TINY = """
preset = diff-wgan
batch_size = 2
steps = 2
seed = 1
model.hidden = 16
model.enc_layers = 1
model.enc_ffn = 32
model.enc_kernel = 3
model.dur_hidden = 16
model.wn_blocks = 2
model.wn_hidden = 16
model.time_embed_dim = 16
model.d_blocks = 2
model.d_base_channels = 4
model.d_score_dim = 8
model.d_singer_dim = 4
model.d_time_dim = 8
model.d_stem_stride = 1
model.n_mels = 16
corpus.n_mels = 16
corpus.segments_per_singer = 3
corpus.min_seconds = 0.5
corpus.max_seconds = 0.8
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY)
    assert main(["gen-corpus", "--out", str(root / "corpus"), "--config", str(root / "tiny.cfg")]) == 0
    assert main(["train", "--config", str(root / "tiny.cfg"), "--corpus", str(root / "corpus"),
                 "--out", str(root / "run"), "--quiet"]) == 0
    return root


def test_schedule_csv(capsys):
    assert main(["schedule"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,beta,alpha,alpha_bar,beta_tilde" and len(lines) == 5
    assert lines[1].split(",")[-1] == "0.0"


def test_synth_is_deterministic_and_matches_duration_sum(trained):
    corpus = load_corpus(trained / "corpus")
    entry = corpus.manifest["heldout"][0]
    score = trained / "corpus" / entry["score"]
    outs = []
    for name in ("a", "b"):
        args = ["synth", "--checkpoint", str(trained / "run" / "final.ckpt"), "--score", str(score),
                "--out-mel", str(trained / f"{name}.mel"), "--seed", "3", "--ground-truth-durations",
                "--config", str(trained / "tiny.cfg"), "--out-wav", str(trained / f"{name}.wav"), "--gl-iters", "2"]
        assert main(args) == 0
        outs.append((trained / f"{name}.mel").read_bytes())
    assert outs[0] == outs[1]
    mel, _ = read_mel(trained / "a.mel")
    assert mel.shape == (16, corpus.heldout[0].score.durations.sum())
    assert (trained / "a.wav").exists()


def test_synth_with_predicted_durations(trained):
    corpus = load_corpus(trained / "corpus")
    score = trained / "corpus" / corpus.manifest["heldout"][1]["score"]
    assert main(["synth", "--checkpoint", str(trained / "run" / "final.ckpt"), "--score", str(score),
                 "--out-mel", str(trained / "p.mel")]) == 0
    assert read_mel(trained / "p.mel")[0].shape[0] == 16


def test_synth_config_mismatch(trained, capsys):
    (trained / "other.cfg").write_text(TINY.replace("model.hidden = 16", "model.hidden = 24"))
    score = trained / "corpus" / load_corpus(trained / "corpus").manifest["heldout"][0]["score"]
    code = main(["synth", "--checkpoint", str(trained / "run" / "final.ckpt"), "--score", str(score),
                 "--out-mel", str(trained / "x.mel"), "--config", str(trained / "other.cfg")])
    assert code == 3 and "mismatch" in capsys.readouterr().err


def test_missing_checkpoint(tmp_path, capsys):
    code = main(["synth", "--checkpoint", str(tmp_path / "none.ckpt"), "--score", "x", "--out-mel", "y"])
    assert code != 0 and "checkpoint not found" in capsys.readouterr().err


def test_eval_writes_report(trained, tmp_path, capsys):
    corpus = load_corpus(trained / "corpus")
    entry = corpus.manifest["heldout"][0]
    for side, shift in (("ref", 0.0), ("syn", 0.5)):
        (tmp_path / side).mkdir()
        write_mel(tmp_path / side / f"{entry['id']}.mel", corpus.heldout[0].mel + shift, corpus.manifest["signal"])
    assert main(["eval", "--ref", str(tmp_path / "ref"), "--syn", str(tmp_path / "syn"),
                 "--report", str(tmp_path / "r.csv")]) == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "file,ms_ssim,mcd,f0_rmse,f0_corr" and lines[1].startswith(entry["id"])
    assert lines[-1].startswith("mean,")


def test_gradcheck_only_filter(capsys):
    assert main(["gradcheck", "--only", "exp"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 and out[0].startswith("exp") and out[0].endswith("PASS")


def test_gradcheck_unknown_primitive(capsys):
    assert main(["gradcheck", "--only", "frobnicate"]) == 2
    assert "unknown primitive" in capsys.readouterr().err


def test_gradcheck_detects_corrupted_backward(monkeypatch, capsys):
    cls = ad.OPS["tanh"]
    good = cls.backward
    monkeypatch.setattr(cls, "backward", lambda self, g: tuple(ad.mul(x, 1.1) for x in good(self, g)))
    assert main(["gradcheck", "--only", "tanh", "--first-order-only"]) == 4
    captured = capsys.readouterr()
    assert "FAIL" in captured.out and "tanh" in captured.err


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["train"]) == 2
    assert main(["schedule", "--T", "zero"]) == 2


def test_bad_schedule_argument_is_data_error(capsys):
    assert main(["schedule", "--T", "0"]) == 3


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    for name, sub in _subparsers(parser).items():
        with pytest.raises(SystemExit) as exc:
            main([name, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for action in sub._actions:
            for opt in action.option_strings:
                assert opt in text
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings} has no help text"


def test_train_determinism_gives_identical_checkpoints(trained, tmp_path):
    args = ["train", "--config", str(trained / "tiny.cfg"), "--corpus", str(trained / "corpus"), "--quiet"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (trained / "run" / "final.ckpt").read_bytes()
