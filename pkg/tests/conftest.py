import pytest

from spkrobust.corpus import Corpus, build_corpus

SMALL = dict(n_test_speakers=3, test_utts_per_speaker=4, duration_s=1.5, noise_per_type=6,
             noise_duration_s=(1.5, 2.5))


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    build_corpus(4, 5, 7, out, **SMALL)
    return out


@pytest.fixture
def small_corpus(small_corpus_dir):
    return Corpus.open(small_corpus_dir)
