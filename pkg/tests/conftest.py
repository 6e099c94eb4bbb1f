import numpy as np
import pytest

from attrlink.embeddings import EmbeddingTable


@pytest.fixture
def tiny_table():
    return EmbeddingTable(("a", "b"), np.array([[1.0, 0, 0], [0, 1.0, 0]]))


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
