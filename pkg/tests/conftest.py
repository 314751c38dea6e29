import csv

import numpy as np
import pytest


def write_breast(path):
    from sklearn.datasets import load_breast_cancer

    b = load_breast_cancer()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([n.replace(" ", "_") for n in b.feature_names] + ["label"])
        for row, y in zip(b.data, b.target):
            w.writerow([repr(float(v)) for v in row] + [int(y)])
    return path


@pytest.fixture(scope="session")
def breast_csv(tmp_path_factory):
    pytest.importorskip("sklearn")
    return write_breast(tmp_path_factory.mktemp("breast") / "breast.csv")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import LINES

    lines = config.stash.get(LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
