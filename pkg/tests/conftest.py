import numpy as np
import pytest

from monomer.corpus import Corpus, write_features, write_items

# filled by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def write_corpus(tmp_path):
    """Write items/features files and return their paths."""

    def _write(ids, categories, features, name="c"):
        items = tmp_path / f"{name}_items.tsv"
        feats = tmp_path / f"{name}_features.mnmr"
        write_items(items, ids, categories)
        write_features(feats, ids, np.asarray(features, dtype=np.float32))
        return items, feats

    return _write


@pytest.fixture
def toy_corpus():
    ids = ["a1", "a2", "b1", "b2", "c1"]
    cats = ["Shirts", "Shirts", "Shoes", "Shoes", "Hats"]
    feats = np.arange(15, dtype=np.float32).reshape(5, 3)
    return Corpus(ids, cats, feats)
