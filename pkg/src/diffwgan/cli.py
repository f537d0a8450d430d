"""Command-line entry point: ``diffwgan <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Errors print one line, ``error: <reason>``, to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GRADCHECK_TOL = 1e-4
GP_GRADCHECK_TOL = 1e-3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------- commands


def cmd_schedule(args) -> int:
    from .diffusion import compute_schedule

    sched = compute_schedule(args.T, args.beta_min, args.beta_max)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "beta", "alpha", "alpha_bar", "beta_tilde"])
        for row in sched.to_rows():
            w.writerow([row[0]] + [repr(v) for v in row[1:]])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    from .config import load_config
    from .corpus import ToyCorpusSpec, generate_corpus

    spec = load_config(args.config).corpus if args.config else ToyCorpusSpec()
    overrides = {k: v for k, v in (("seed", args.seed), ("n_mels", args.n_mels),
                                   ("segments_per_singer", args.segments)) if v is not None}
    spec = dataclasses.replace(spec, **overrides)
    manifest = generate_corpus(spec, args.out)
    print(f"wrote {len(manifest['train'])} training and {len(manifest['heldout'])} held-out segments to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import load_config
    from .corpus import load_corpus
    from .trainer import train

    exp = load_config(args.config)
    tcfg = exp.train
    overrides = {k: v for k, v in (("corpus", args.corpus), ("out_dir", args.out), ("steps", args.steps),
                                   ("seed", args.seed)) if v is not None}
    tcfg = dataclasses.replace(tcfg, **overrides)
    if not tcfg.corpus:
        raise UsageError("no corpus directory (set 'corpus' in the config or pass --corpus)")
    if not tcfg.out_dir:
        raise UsageError("no output directory (set 'out_dir' in the config or pass --out)")
    dataset = load_corpus(tcfg.corpus)

    def progress(row):
        if not args.quiet and (row["step"] % 100 == 0 or row["step"] == tcfg.steps):
            print(f"step {row['step']}: l_g_total={row['l_g_total']:.5g} l_d_total={row['l_d_total']:.5g}",
                  flush=True)

    train(tcfg, dataset, exp.model, out_dir=tcfg.out_dir, progress=progress)
    print(f"checkpoint: {Path(tcfg.out_dir) / 'final.ckpt'}")
    return EXIT_OK


def load_generator(checkpoint_path):
    """Generator, model config and checkpoint config echo from a checkpoint file."""
    from .checkpoint import load, split_state
    from .networks import Generator, ModelConfig

    tensors, config = load(checkpoint_path)
    if "model" not in config:
        raise ValueError("checkpoint has no model config")
    mcfg = ModelConfig(**config["model"])
    gen = Generator(mcfg, np.random.default_rng(0))
    gen.load_state_dict(split_state(tensors, "generator"))
    return gen, mcfg, config


def synthesize(gen, mcfg, config: dict, score, seed: int, ground_truth: bool) -> np.ndarray:
    """Log-mel (M, L_f) for one score, denormalized to the corpus scale."""
    from . import autodiff as ad
    from .autodiff import Tensor
    from .diffusion import compute_schedule, sample_loop
    from .networks import ScoreBatch

    score.validate(mcfg)
    if ground_truth and score.durations is None:
        raise ValueError("--ground-truth-durations needs a 'durations' line in the score")
    batch = ScoreBatch.from_scores([score])
    if not ground_truth:
        batch.durations = None
    rng = np.random.default_rng(seed)
    with ad.no_grad():
        enc = gen.encode_score(batch, use_ground_truth=ground_truth)
        if mcfg.decoder == "fft":
            x0 = gen.denoise(None, None, enc).data
        else:
            t = config["train"]
            sched = compute_schedule(t["T"], t["beta_min"], t["beta_max"])

            def model(x, steps, ms, _singer):
                return gen.decoder(x, steps, ms, enc.frame_mask)

            x0 = sample_loop(model, enc.ms, batch.singer, sched, rng, mcfg.n_mels, enc.frame_mask)
    norm = config.get("normalization")
    mel = x0[0]
    if norm:
        lo, hi = norm["mel_min"], norm["mel_max"]
        mel = (mel + 1.0) / 2.0 * (hi - lo) + lo
    if not np.isfinite(mel).all():
        raise NumericFailure("synthesized mel is not finite")
    return mel


def cmd_synth(args) -> int:
    from .checkpoint import config_hash
    from .config import load_config
    from .corpus import read_score
    from .signal import SignalConfig, griffin_lim, write_mel, write_wav

    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    gen, mcfg, config = load_generator(args.checkpoint)
    if args.config:
        exp = load_config(args.config)
        expected = dataclasses.replace(exp.model, decoder=exp.train.decoder, n_mels=exp.corpus.n_mels)
        if config_hash(expected.to_dict()) != config["config_hash"]:
            raise ValueError("checkpoint/config mismatch: model config hash differs")
    if not Path(args.score).exists():
        raise FileNotFoundError(f"score not found: {args.score}")
    score = read_score(args.score)
    mel = synthesize(gen, mcfg, config, score, args.seed, args.ground_truth_durations)
    sig = config.get("signal") or {"n_mels": mcfg.n_mels}
    write_mel(args.out_mel, mel, sig)
    if args.out_wav:
        scfg = SignalConfig(**sig)
        write_wav(args.out_wav, griffin_lim(mel, scfg, iters=args.gl_iters, seed=args.seed), scfg.sample_rate)
    print(f"wrote {args.out_mel} ({mel.shape[0]} bins x {mel.shape[1]} frames)")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_dirs

    report = evaluate_dirs(args.ref, args.syn)
    report.write_csv(args.report)
    means = report.means
    print(" ".join(f"{k}={'NA' if v is None else f'{v:.6g}'}" for k, v in means.items()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .autodiff.gradcheck import run_primitive_checks
    from .objectives import gp_gradcheck

    try:
        results = run_primitive_checks(only=args.only, second_order=not args.first_order_only, seed=args.seed)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    failed = []
    for name, e1, e2 in results:
        ok = e1 < GRADCHECK_TOL and (e2 is None or e2 < GRADCHECK_TOL)
        second = "n/a" if e2 is None else f"{e2:.3e}"
        print(f"{name:<12} first={e1:.3e} second={second} {'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if args.only is None and not args.first_order_only:
        e = gp_gradcheck(seed=args.seed)
        ok = e < GP_GRADCHECK_TOL
        print(f"{'gradient_penalty':<12} double-backprop={e:.3e} {'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append("gradient_penalty")
    if failed:
        raise NumericFailure(f"gradcheck failed for: {', '.join(failed)}")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffwgan", description="Diffusion acoustic model with a Wasserstein critic.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("schedule", help="print the noise schedule as CSV")
    s.add_argument("--T", type=int, default=4, help="number of diffusion steps (default 4)")
    s.add_argument("--beta-min", type=float, default=0.1, help="schedule beta_min (default 0.1)")
    s.add_argument("--beta-max", type=float, default=20.0, help="schedule beta_max (default 20)")
    s.add_argument("--out", help="write the CSV here instead of stdout")
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("gen-corpus", help="render the synthetic singing corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", help="experiment config; its corpus.* keys set the corpus spec")
    s.add_argument("--seed", type=int, help="override corpus seed")
    s.add_argument("--n-mels", type=int, help="override mel bin count")
    s.add_argument("--segments", type=int, help="override segments per singer (2 are held out)")
    s.set_defaults(func=cmd_gen_corpus)

    s = sub.add_parser("train", help="train a model from a config file")
    s.add_argument("--config", required=True, help="experiment config file (key = value lines)")
    s.add_argument("--corpus", help="corpus directory (overrides the config)")
    s.add_argument("--out", help="output directory for log and checkpoints (overrides the config)")
    s.add_argument("--steps", type=int, help="override the step count")
    s.add_argument("--seed", type=int, help="override the seed")
    s.add_argument("--quiet", action="store_true", help="no progress lines")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesize a mel-spectrogram (and preview WAV) from a score")
    s.add_argument("--checkpoint", required=True, help="checkpoint file")
    s.add_argument("--score", required=True, help="score text file")
    s.add_argument("--out-mel", required=True, help="output mel file")
    s.add_argument("--out-wav", help="also write a Griffin-Lim preview WAV")
    s.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    s.add_argument("--config", help="experiment config to check against the checkpoint")
    s.add_argument("--ground-truth-durations", action="store_true",
                   help="expand the score with its own durations instead of predicted ones")
    s.add_argument("--gl-iters", type=int, default=32, help="Griffin-Lim iterations (default 32)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("eval", help="objective metrics between two directories of mel/WAV files")
    s.add_argument("--ref", required=True, help="reference directory")
    s.add_argument("--syn", required=True, help="synthesized directory")
    s.add_argument("--report", required=True, help="output CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference checks of every autodiff primitive")
    s.add_argument("--only", metavar="PRIMITIVE", help="check a single primitive")
    s.add_argument("--first-order-only", action="store_true", help="skip second-order checks")
    s.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    from .autodiff import AutodiffError, NonFiniteError
    from .checkpoint import CheckpointError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, NonFiniteError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, CheckpointError, ValueError, KeyError, OSError, AutodiffError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
