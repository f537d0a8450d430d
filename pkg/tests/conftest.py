import numpy as np
import pytest

from diffwgan.corpus import ToyCorpusSpec, generate_corpus, load_corpus
from diffwgan.networks import ModelConfig, MusicalScore, ScoreBatch


def tiny_config(**overrides) -> ModelConfig:
    base = dict(n_mels=16, hidden=16, enc_layers=1, enc_heads=2, enc_ffn=32, enc_kernel=3, dur_layers=2,
                dur_hidden=16, wn_blocks=2, wn_hidden=16, time_embed_dim=16, fft_dec_layers=1, d_blocks=2,
                d_base_channels=4, d_score_dim=8, d_singer_dim=4, d_time_dim=8, d_stem_stride=1)
    base.update(overrides)
    return ModelConfig(**base)


def random_scores(rng, n=2, cfg=None, lengths=(5, 4)):
    cfg = cfg or tiny_config()
    out = []
    for i in range(n):
        lp = lengths[i % len(lengths)]
        out.append(MusicalScore(rng.integers(0, cfg.n_phones, lp), rng.integers(4, 30, lp),
                                rng.integers(50, 70, lp), int(i % cfg.n_singers), rng.integers(2, 6, lp)))
    return out


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def score_batch():
    return ScoreBatch.from_scores(random_scores(np.random.default_rng(0)))


SMALL_SPEC = ToyCorpusSpec(segments_per_singer=4, min_seconds=1.0, max_seconds=1.5, n_mels=16, seed=5)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(SMALL_SPEC, root)
    return load_corpus(root)
