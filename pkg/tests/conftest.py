import pytest

from kmergraph.kmer_graph import assemble_graph
from kmergraph.seq_corpus import Corpus

FIG1 = ("ACTGACT", "ACTGACA", "TGACTGC")


@pytest.fixture
def fig1_corpus():
    return Corpus.from_strings(FIG1)


@pytest.fixture
def fig1_graph(fig1_corpus):
    return assemble_graph(fig1_corpus, 3, sub_k_list=(2,), t=0.5)


ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance experiment")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
