from pathlib import Path

import pytest

from tempovec.chunking import RawDocument
from tempovec.pipeline import Pipeline
from tempovec.store import Store, StoreConfig

FIXTURES = Path(__file__).parent / "fixtures"

FAST = StoreConfig(durable=False)


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path / "data", FAST)
    yield s
    s.close()


@pytest.fixture
def pipeline(store):
    return Pipeline(store)


def doc(doc_id: str, *paragraphs: str) -> RawDocument:
    return RawDocument(doc_id, "\n\n".join(paragraphs) + "\n")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
