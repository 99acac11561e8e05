import os
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest
from hypothesis import settings

from rlab.cohort import split_dataset
from rlab.embeddings import train_skipgram
from rlab.infocal import TrainConfig, train_infocal
from rlab.synth import SynthConfig, generate_synthetic_corpus
from rlab.text import build_vocab
from rlab.transformer import TransformerConfig, train_transformer

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

ACCEPTANCE_CORPUS = SynthConfig(n_docs=2000, noise_rate=0.05, positive_rate=0.3, seed=0)
ACCEPTANCE_EPOCHS = 30

_criteria = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    _criteria.append((number, line))
    print(line)
    return passed


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_criteria):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def admissions_fixture():
    return os.path.join(FIXTURES, "admissions_20.csv")


class Prepared:
    """Corpus splits, vocabulary and embeddings for one synthetic configuration."""

    def __init__(self, synth: SynthConfig, embedding_dim=100, embedding_epochs=5):
        t0 = time.perf_counter()
        self.dataset = generate_synthetic_corpus(synth)
        self.train, self.val, self.test = split_dataset(self.dataset, (0.7, 0.1, 0.2), seed=0)
        self.vocab = build_vocab(self.train)
        self.embeddings = train_skipgram(self.train, self.vocab, dim=embedding_dim,
                                         epochs=embedding_epochs, seed=0)
        self.prep_seconds = time.perf_counter() - t0


@pytest.fixture(scope="session")
def acceptance_data():
    return Prepared(ACCEPTANCE_CORPUS)


@pytest.fixture(scope="session")
def acceptance_infocal(acceptance_data):
    d = acceptance_data
    t0 = time.perf_counter()
    model, history = train_infocal(d.train, d.val, d.vocab, d.embeddings.matrix,
                                   TrainConfig(epochs=ACCEPTANCE_EPOCHS))
    seconds = d.prep_seconds + time.perf_counter() - t0
    return model, history, seconds


@pytest.fixture(scope="session")
def acceptance_transformer(acceptance_data):
    d = acceptance_data
    model, rows = train_transformer(d.train, d.val, d.vocab, TransformerConfig())
    return model, rows


@pytest.fixture(scope="session")
def easy_data():
    """Separable corpus (no isolated signal tokens in negatives)."""
    return Prepared(SynthConfig(n_docs=600, noise_rate=0.0, seed=3), embedding_dim=32)


@pytest.fixture(scope="session")
def easy_infocal(easy_data):
    d = easy_data
    model, history = train_infocal(d.train, d.val, d.vocab, d.embeddings.matrix,
                                   TrainConfig(epochs=8, hidden=64, seed=0))
    return model, history


@pytest.fixture(scope="session")
def easy_transformer(easy_data):
    d = easy_data
    return train_transformer(d.train, d.val, d.vocab, TransformerConfig(epochs=15))
