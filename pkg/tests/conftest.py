import csv
from pathlib import Path

import numpy as np
import pytest

from jointdp.data import Dataset


def separable_dataset(seed: int = 0, n: int = 200, d: int = 8, shift: float = 1.5) -> Dataset:
    """Two Gaussian clusters at -shift and +shift on every metric, balanced labels."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(0.0, 1.0, (n, d)) + np.where(y[:, None] == 1, shift, -shift)
    return Dataset(tuple(f"m{i}" for i in range(d)), X, y)


def imbalanced_dataset(seed: int = 0, n: int = 300, d: int = 10, rate: float = 0.15) -> Dataset:
    """Skewed, heavy-tailed metrics where the first three columns carry the signal."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < rate).astype(int)
    y[:5] = 1
    X = rng.lognormal(1.0, 0.8, (n, d))
    X[:, :3] += y[:, None] * rng.lognormal(2.0, 0.3, (n, 3))
    return Dataset(tuple(f"METRIC_{i}" for i in range(d)), X, y)


def write_csv_dataset(path: Path, ds: Dataset, label: str = "defect") -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.columns) + [label])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
    return path


@pytest.fixture
def toy_csv(tmp_path):
    return write_csv_dataset(tmp_path / "toy.csv", separable_dataset(3))


@pytest.fixture
def skewed_csv(tmp_path):
    return write_csv_dataset(tmp_path / "skewed.csv", imbalanced_dataset(4))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
