import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

MNIST_CANDIDATES = [os.environ.get("KANCL_DATA_DIR"), "/root/data/mnist", str(Path(__file__).parents[1] / "data" / "mnist")]


def mnist_dir():
    for d in MNIST_CANDIDATES:
        if d and (Path(d) / "t10k-labels-idx1-ubyte").exists() or d and (Path(d) / "t10k-labels-idx1-ubyte.gz").exists():
            return Path(d)
    return None


@pytest.fixture(scope="session")
def mnist():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found (set KANCL_DATA_DIR)")
    from kancl.datasets import load_mnist
    return load_mnist(d)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
