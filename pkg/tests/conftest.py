import pytest

from labelalbedo.dataset import build_dataset

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """5 labels x 3 renders at 32 px."""
    out = tmp_path_factory.mktemp("tiny")
    return build_dataset(5, 3, 1, out, image_size=32)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
